//! Coded dimension hierarchies.
//!
//! A [`CodeHierarchy`] is a forest of codes drawn from one or more coding
//! systems (diagnoses, procedures, ...). Attribute dimensions such as
//! `Gender` or `Age` are attached as depth-1 children of a synthetic
//! `Attributes` root so every dimension shares the same drift machinery.
//!
//! Recording a code for a patient implies every ancestor of that code is
//! present as well; [`CodeHierarchy::closure`] computes that set.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Coding system used for attribute dimensions and their synthetic root.
pub const ATTRIBUTE_SYSTEM: &str = "Attributes";

/// Code of the synthetic root that owns every attribute dimension.
pub const ATTRIBUTE_ROOT_CODE: &str = "Attributes";

/// Code of the per-system root that collects codes missing from the
/// hierarchy file when ingest runs in lenient mode.
pub const UNKNOWN_ROOT_CODE: &str = "Unknown";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("malformed hierarchy file at line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("empty code in system '{system}' at line {line}")]
    EmptyCode { system: String, line: u64 },

    #[error("duplicate dimension {0}")]
    Duplicate(DimensionId),

    #[error("code {child} references undefined parent {parent}")]
    Orphan {
        child: DimensionId,
        parent: DimensionId,
    },

    #[error("cycle detected through {0}")]
    Cycle(DimensionId),

    #[error("unknown dimension {0}")]
    UnknownDimension(DimensionId),

    #[error("invalid dimension id '{0}' (expected 'system:code')")]
    InvalidId(String),

    #[error("attribute '{0}' defined twice")]
    DuplicateAttribute(String),

    #[error("coding system '{0}' is reserved for attribute dimensions")]
    ReservedSystem(String),
}

/// A (coding system, code) pair naming one dimension.
///
/// Rendered and serialized as `system:code`; the system name may not contain
/// a colon, the code may.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DimensionId {
    system: String,
    code: String,
}

impl DimensionId {
    pub fn new(system: impl Into<String>, code: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            code: code.into(),
        }
    }

    /// Id of the attribute dimension called `name`.
    pub fn attribute(name: impl Into<String>) -> Self {
        Self::new(ATTRIBUTE_SYSTEM, name)
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn is_attribute(&self) -> bool {
        self.system == ATTRIBUTE_SYSTEM
    }
}

impl fmt::Display for DimensionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.system, self.code)
    }
}

impl FromStr for DimensionId {
    type Err = HierarchyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((system, code)) if !system.is_empty() && !code.is_empty() => {
                Ok(Self::new(system, code))
            }
            _ => Err(HierarchyError::InvalidId(s.to_string())),
        }
    }
}

impl Serialize for DimensionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DimensionId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense index of a dimension inside one [`CodeHierarchy`].
///
/// Indices are only meaningful for the hierarchy that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DimIndex(pub u32);

impl DimIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodeNode {
    pub id: DimensionId,
    pub label: String,
    pub parent: Option<DimensionId>,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttributeKind {
    Categorical { categories: Vec<String> },
    Numeric { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

impl AttributeSpec {
    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: AttributeKind::Categorical { categories },
        }
    }

    pub fn numeric(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            kind: AttributeKind::Numeric { min, max },
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, AttributeKind::Numeric { .. })
    }
}

/// One row of the hierarchy file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyRow {
    pub system: String,
    pub code: String,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub label: String,
}

/// An immutable, validated forest of dimensions.
#[derive(Debug, Clone)]
pub struct CodeHierarchy {
    nodes: Vec<CodeNode>,
    index: HashMap<DimensionId, DimIndex>,
    parents: Vec<Option<DimIndex>>,
    children: Vec<Vec<DimIndex>>,
    roots: Vec<DimIndex>,
    attributes: Vec<AttributeSpec>,
    attribute_root: Option<DimIndex>,
    /// Number of nodes that came from the hierarchy file (prefix of `nodes`).
    code_nodes: usize,
}

impl PartialEq for CodeHierarchy {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.attributes == other.attributes
    }
}

impl CodeHierarchy {
    /// Builds and validates a hierarchy from file rows. Row order is kept as
    /// the index order; parents may appear after their children.
    pub fn from_rows(rows: Vec<HierarchyRow>) -> Result<Self, HierarchyError> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.code.is_empty() {
                return Err(HierarchyError::EmptyCode {
                    system: row.system.clone(),
                    line: i as u64 + 2,
                });
            }
            if row.system == ATTRIBUTE_SYSTEM {
                return Err(HierarchyError::ReservedSystem(row.system.clone()));
            }
            if row.system.is_empty() || row.system.contains(':') {
                return Err(HierarchyError::Malformed {
                    line: i as u64 + 2,
                    message: format!("invalid system name '{}'", row.system),
                });
            }
            let id = DimensionId::new(&row.system, &row.code);
            if index.insert(id.clone(), DimIndex(i as u32)).is_some() {
                return Err(HierarchyError::Duplicate(id));
            }
        }

        let mut parents = Vec::with_capacity(rows.len());
        for row in &rows {
            let parent = match row.parent.as_deref() {
                None | Some("") => None,
                Some(code) => {
                    let pid = DimensionId::new(&row.system, code);
                    match index.get(&pid) {
                        Some(&p) => Some(p),
                        None => {
                            return Err(HierarchyError::Orphan {
                                child: DimensionId::new(&row.system, &row.code),
                                parent: pid,
                            })
                        }
                    }
                }
            };
            parents.push(parent);
        }

        let depths = compute_depths(&parents).map_err(|i| {
            let row = &rows[i];
            HierarchyError::Cycle(DimensionId::new(&row.system, &row.code))
        })?;

        let ids: Vec<DimensionId> = rows
            .iter()
            .map(|r| DimensionId::new(&r.system, &r.code))
            .collect();
        let nodes: Vec<CodeNode> = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| CodeNode {
                id: ids[i].clone(),
                label: row.label,
                parent: parents[i].map(|p| ids[p.get()].clone()),
                depth: depths[i],
            })
            .collect();

        let code_nodes = nodes.len();
        let mut h = Self {
            nodes,
            index,
            parents,
            children: Vec::new(),
            roots: Vec::new(),
            attributes: Vec::new(),
            attribute_root: None,
            code_nodes,
        };
        h.rebuild_links();
        Ok(h)
    }

    /// Returns a copy of this hierarchy with attribute dimensions attached
    /// under the synthetic `Attributes` root. Replaces any attributes that
    /// were attached before.
    pub fn with_attributes(mut self, specs: Vec<AttributeSpec>) -> Result<Self, HierarchyError> {
        self.truncate_attributes();
        if specs.is_empty() {
            return Ok(self);
        }
        let mut seen = BTreeSet::new();
        for spec in &specs {
            if spec.name.is_empty() || spec.name == ATTRIBUTE_ROOT_CODE || !seen.insert(&spec.name) {
                return Err(HierarchyError::DuplicateAttribute(spec.name.clone()));
            }
        }
        let root_id = DimensionId::new(ATTRIBUTE_SYSTEM, ATTRIBUTE_ROOT_CODE);
        let root = self.push_node(CodeNode {
            id: root_id.clone(),
            label: ATTRIBUTE_ROOT_CODE.to_string(),
            parent: None,
            depth: 0,
        }, None);
        for spec in &specs {
            self.push_node(
                CodeNode {
                    id: DimensionId::attribute(&spec.name),
                    label: spec.name.clone(),
                    parent: Some(root_id.clone()),
                    depth: 1,
                },
                Some(root),
            );
        }
        self.attributes = specs;
        self.attribute_root = Some(root);
        self.rebuild_links();
        Ok(self)
    }

    /// Returns a copy with `codes` attached under a synthetic per-system
    /// `Unknown` root. Attributes, if any, are re-attached after the new codes.
    pub fn with_unknown_codes(self, codes: &BTreeSet<DimensionId>) -> Result<Self, HierarchyError> {
        let missing: Vec<&DimensionId> = codes.iter().filter(|c| !self.contains(c)).collect();
        if missing.is_empty() {
            return Ok(self);
        }
        let attributes = self.attributes.clone();
        let mut rows = self.rows();
        let mut systems: BTreeSet<&str> = BTreeSet::new();
        for code in &missing {
            if code.is_attribute() {
                return Err(HierarchyError::ReservedSystem(code.system().to_string()));
            }
            systems.insert(code.system());
        }
        for system in systems {
            let root = DimensionId::new(system, UNKNOWN_ROOT_CODE);
            if !self.contains(&root) {
                rows.push(HierarchyRow {
                    system: system.to_string(),
                    code: UNKNOWN_ROOT_CODE.to_string(),
                    parent: None,
                    label: format!("Unknown {system} codes"),
                });
            }
        }
        for code in missing {
            if code.code() == UNKNOWN_ROOT_CODE {
                continue;
            }
            rows.push(HierarchyRow {
                system: code.system().to_string(),
                code: code.code().to_string(),
                parent: Some(UNKNOWN_ROOT_CODE.to_string()),
                label: code.code().to_string(),
            });
        }
        Self::from_rows(rows)?.with_attributes(attributes)
    }

    fn truncate_attributes(&mut self) {
        if self.attribute_root.is_none() {
            return;
        }
        for node in self.nodes.drain(self.code_nodes..) {
            self.index.remove(&node.id);
        }
        self.parents.truncate(self.code_nodes);
        self.attributes.clear();
        self.attribute_root = None;
        self.rebuild_links();
    }

    fn push_node(&mut self, node: CodeNode, parent: Option<DimIndex>) -> DimIndex {
        let idx = DimIndex(self.nodes.len() as u32);
        self.index.insert(node.id.clone(), idx);
        self.nodes.push(node);
        self.parents.push(parent);
        idx
    }

    fn rebuild_links(&mut self) {
        self.children = vec![Vec::new(); self.nodes.len()];
        self.roots.clear();
        for (i, parent) in self.parents.iter().enumerate() {
            match parent {
                Some(p) => self.children[p.get()].push(DimIndex(i as u32)),
                None => self.roots.push(DimIndex(i as u32)),
            }
        }
    }

    /// The file rows this hierarchy was built from (attributes excluded).
    pub fn rows(&self) -> Vec<HierarchyRow> {
        self.nodes[..self.code_nodes]
            .iter()
            .map(|n| HierarchyRow {
                system: n.id.system().to_string(),
                code: n.id.code().to_string(),
                parent: n.parent.as_ref().map(|p| p.code().to_string()),
                label: n.label.clone(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &DimensionId) -> bool {
        self.index.contains_key(id)
    }

    pub fn index_of(&self, id: &DimensionId) -> Option<DimIndex> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &DimensionId) -> Result<DimIndex, HierarchyError> {
        self.index_of(id)
            .ok_or_else(|| HierarchyError::UnknownDimension(id.clone()))
    }

    pub fn node(&self, idx: DimIndex) -> &CodeNode {
        &self.nodes[idx.get()]
    }

    pub fn id(&self, idx: DimIndex) -> &DimensionId {
        &self.nodes[idx.get()].id
    }

    pub fn label(&self, idx: DimIndex) -> &str {
        &self.nodes[idx.get()].label
    }

    pub fn depth(&self, idx: DimIndex) -> u32 {
        self.nodes[idx.get()].depth
    }

    pub fn parent(&self, idx: DimIndex) -> Option<DimIndex> {
        self.parents[idx.get()]
    }

    pub fn children(&self, idx: DimIndex) -> &[DimIndex] {
        &self.children[idx.get()]
    }

    pub fn is_leaf(&self, idx: DimIndex) -> bool {
        self.children[idx.get()].is_empty()
    }

    pub fn roots(&self) -> &[DimIndex] {
        &self.roots
    }

    pub fn nodes(&self) -> &[CodeNode] {
        &self.nodes
    }

    pub fn indices(&self) -> impl ExactSizeIterator<Item = DimIndex> {
        (0..self.nodes.len() as u32).map(DimIndex)
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Distinct coding systems, attribute system excluded.
    pub fn systems(&self) -> BTreeSet<&str> {
        self.nodes[..self.code_nodes]
            .iter()
            .map(|n| n.id.system())
            .collect()
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn attribute_root(&self) -> Option<DimIndex> {
        self.attribute_root
    }

    /// Nodes loaded from the hierarchy file, i.e. event code dimensions.
    pub fn code_node_count(&self) -> usize {
        self.code_nodes
    }

    pub fn is_code(&self, idx: DimIndex) -> bool {
        idx.get() < self.code_nodes
    }

    /// Iterator from the immediate parent of `idx` up to its root.
    pub fn ancestor_indices(&self, idx: DimIndex) -> Ancestors<'_> {
        Ancestors {
            parents: &self.parents,
            next: self.parents[idx.get()],
        }
    }

    /// Parent chain of `d`, immediate parent first, root last.
    pub fn ancestors(&self, d: &DimensionId) -> Result<Vec<DimensionId>, HierarchyError> {
        let idx = self.require(d)?;
        Ok(self
            .ancestor_indices(idx)
            .map(|a| self.id(a).clone())
            .collect())
    }

    /// Root-to-node path including the node itself.
    pub fn path_from_root(&self, idx: DimIndex) -> Vec<DimIndex> {
        let mut path: Vec<DimIndex> = self.ancestor_indices(idx).collect();
        path.reverse();
        path.push(idx);
        path
    }

    /// `codes` together with all their ancestors.
    pub fn closure(
        &self,
        codes: &BTreeSet<DimensionId>,
    ) -> Result<BTreeSet<DimensionId>, HierarchyError> {
        let indices = codes
            .iter()
            .map(|c| self.require(c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .closure_indices(&indices)
            .into_iter()
            .map(|i| self.id(i).clone())
            .collect())
    }

    /// Index form of [`closure`](Self::closure); the result is sorted and
    /// deduplicated.
    pub fn closure_indices(&self, codes: &[DimIndex]) -> Vec<DimIndex> {
        let mut out = Vec::with_capacity(codes.len() * 4);
        for &c in codes {
            out.push(c);
            out.extend(self.ancestor_indices(c));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// All strict descendants of `idx` in pre-order.
    pub fn descendants(&self, idx: DimIndex) -> Vec<DimIndex> {
        let mut out = Vec::new();
        let mut stack: Vec<DimIndex> = self.children(idx).iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.children(n).iter().rev().copied());
        }
        out
    }

    pub fn leaves(&self) -> impl Iterator<Item = DimIndex> + '_ {
        self.indices().filter(|&i| self.is_leaf(i))
    }

    /// Rank of every dimension in `DimensionId` order, for cheap
    /// deterministic tie-breaking.
    pub fn id_ranks(&self) -> Vec<u32> {
        let mut order: Vec<DimIndex> = self.indices().collect();
        order.sort_unstable_by(|a, b| self.id(*a).cmp(self.id(*b)));
        let mut ranks = vec![0u32; order.len()];
        for (rank, idx) in order.into_iter().enumerate() {
            ranks[idx.get()] = rank as u32;
        }
        ranks
    }
}

pub struct Ancestors<'a> {
    parents: &'a [Option<DimIndex>],
    next: Option<DimIndex>,
}

impl Iterator for Ancestors<'_> {
    type Item = DimIndex;

    fn next(&mut self) -> Option<DimIndex> {
        let cur = self.next?;
        self.next = self.parents[cur.get()];
        Some(cur)
    }
}

/// Depth of every node; `Err(i)` names a node on a cycle.
fn compute_depths(parents: &[Option<DimIndex>]) -> Result<Vec<u32>, usize> {
    const UNSET: u32 = u32::MAX;
    let mut depth = vec![UNSET; parents.len()];
    let mut on_stack = vec![false; parents.len()];
    let mut chain = Vec::new();
    for start in 0..parents.len() {
        if depth[start] != UNSET {
            continue;
        }
        chain.clear();
        let mut cur = start;
        let base = loop {
            if depth[cur] != UNSET {
                break depth[cur] + 1;
            }
            if on_stack[cur] {
                return Err(cur);
            }
            on_stack[cur] = true;
            chain.push(cur);
            match parents[cur] {
                Some(p) => cur = p.get(),
                None => break 0,
            }
        };
        // chain[last] is closest to the root.
        for (offset, &node) in chain.iter().rev().enumerate() {
            depth[node] = base + offset as u32;
            on_stack[node] = false;
        }
    }
    Ok(depth)
}

/// Parses the `system,code,parent,label` CSV hierarchy format.
pub fn load_hierarchy(source: &str) -> Result<CodeHierarchy, HierarchyError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let expected = ["system", "code", "parent", "label"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(HierarchyError::Malformed {
            line: 1,
            message: format!("expected header '{}'", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<HierarchyRow>().enumerate() {
        rows.push(record.map_err(|e| csv_error(e, i as u64 + 2))?);
    }
    CodeHierarchy::from_rows(rows)
}

/// Serializes the code part of a hierarchy back into the CSV file format.
pub fn write_hierarchy(h: &CodeHierarchy) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["system", "code", "parent", "label"])
        .expect("writing to memory");
    for row in h.rows() {
        writer
            .write_record([
                row.system.as_str(),
                row.code.as_str(),
                row.parent.as_deref().unwrap_or(""),
                row.label.as_str(),
            ])
            .expect("writing to memory");
    }
    String::from_utf8(writer.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

fn csv_error(e: csv::Error, fallback_line: u64) -> HierarchyError {
    let line = e
        .position()
        .map(|p| p.line())
        .unwrap_or(fallback_line);
    HierarchyError::Malformed {
        line,
        message: e.to_string(),
    }
}
