//! Saliency-driven aggregation of a split icicle into groups.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::icicle::{build_fragments, Group, Owner, SplitIcicleLayout};
use super::LayoutError;
use crate::hierarchy::{CodeHierarchy, DimIndex, DimensionId};
use crate::metrics::{AggregationMethod, AggregationSettings, DriftProfile};

/// Aggregates with the method in `method`, using the profile's salient set.
pub fn aggregate(
    layout: &SplitIcicleLayout,
    h: &CodeHierarchy,
    profile: &DriftProfile,
    method: AggregationMethod,
) -> SplitIcicleLayout {
    let salient = profile.salient_mask();
    match method {
        AggregationMethod::Breadth => aggregate_breadth_first(layout, h, profile, salient),
        AggregationMethod::Depth => aggregate_depth_first(layout, h, profile, salient),
    }
}

/// Marks every dimension that has a salient strict descendant.
fn salient_below(h: &CodeHierarchy, salient: &[bool]) -> Vec<bool> {
    let mut below = vec![false; h.len()];
    let mut order: Vec<DimIndex> = h.indices().collect();
    order.sort_by_key(|&d| std::cmp::Reverse(h.depth(d)));
    for d in order {
        if let Some(p) = h.parent(d) {
            if salient[d.get()] || below[d.get()] {
                below[p.get()] = true;
            }
        }
    }
    below
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParentKey<'a> {
    System(&'a str),
    Salient(DimIndex),
    Group(usize),
}

/// Breadth-first aggregation.
///
/// Works level by level. Salient cells stay standalone. Adjacent
/// non-salient cells under the same parent item merge when neither has a
/// salient descendant, or when they are the same dimension (and so share
/// its salient descendants). A run without salient descendants becomes a
/// reduced-height group that takes every cell below it. A run with salient
/// descendants continues its parent's group, or opens a new one beneath a
/// salient cell or at the top level.
pub fn aggregate_breadth_first(
    layout: &SplitIcicleLayout,
    h: &CodeHierarchy,
    profile: &DriftProfile,
    salient: &[bool],
) -> SplitIcicleLayout {
    let rows = &layout.rows;
    let below = salient_below(h, salient);
    let mut owner: Vec<Vec<Option<Owner>>> = rows.iter().map(|r| vec![None; r.indices.len()]).collect();
    let mut reduced: Vec<bool> = Vec::new();

    let parent_key = |owner: &Vec<Vec<Option<Owner>>>, r: usize, d: usize| -> ParentKey<'_> {
        if d == 0 {
            return ParentKey::System(h.id(rows[r].indices[0]).system());
        }
        match owner[r][d - 1].expect("parent level assigned first") {
            Owner::Group(g) => ParentKey::Group(g),
            _ => ParentKey::Salient(rows[r].indices[d - 1]),
        }
    };

    for d in 0..layout.max_depth() {
        let mut r = 0;
        while r < rows.len() {
            let Some(&dim) = rows[r].indices.get(d) else {
                r += 1;
                continue;
            };
            if owner[r][d].is_some() {
                r += 1;
                continue;
            }
            if salient[dim.get()] {
                owner[r][d] = Some(Owner::Salient);
                r += 1;
                continue;
            }
            let parent = parent_key(&owner, r, d);
            let free = !below[dim.get()];
            let mut end = r + 1;
            while let Some(&x) = rows.get(end).and_then(|row| row.indices.get(d)) {
                let joins = owner[end][d].is_none()
                    && !salient[x.get()]
                    && parent_key(&owner, end, d) == parent
                    && if free { !below[x.get()] } else { x == dim };
                if !joins {
                    break;
                }
                end += 1;
            }
            if free {
                let g = reduced.len();
                reduced.push(true);
                for rr in r..end {
                    for cell in &mut owner[rr][d..] {
                        *cell = Some(Owner::Group(g));
                    }
                }
            } else {
                let g = match parent {
                    ParentKey::Group(g) => g,
                    _ => {
                        reduced.push(false);
                        reduced.len() - 1
                    }
                };
                for cells in &mut owner[r..end] {
                    cells[d] = Some(Owner::Group(g));
                }
            }
            r = end;
        }
    }
    finish(layout, h, profile, &owner, &reduced, AggregationMethod::Breadth)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = x;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Depth-first aggregation.
///
/// Each row is cut at its salient cells into runs of consecutive
/// non-salient cells. Runs that start at the same node or end at the same
/// node are merged into one group. Groups whose runs all
/// reach a leaf are drawn with reduced height.
pub fn aggregate_depth_first(
    layout: &SplitIcicleLayout,
    h: &CodeHierarchy,
    profile: &DriftProfile,
    salient: &[bool],
) -> SplitIcicleLayout {
    let rows = &layout.rows;
    // (start, end) depth ranges per row, end inclusive
    let mut segments: Vec<Vec<(usize, usize, usize)>> = Vec::with_capacity(rows.len());
    let mut count = 0;
    for row in rows {
        let mut segs = Vec::new();
        let mut start = None;
        for (d, &dim) in row.indices.iter().enumerate() {
            if salient[dim.get()] {
                if let Some(s) = start.take() {
                    segs.push((s, d - 1, count));
                    count += 1;
                }
            } else if start.is_none() {
                start = Some(d);
            }
        }
        if let Some(s) = start {
            segs.push((s, row.indices.len() - 1, count));
            count += 1;
        }
        segments.push(segs);
    }

    let mut uf = UnionFind((0..count).collect());
    let mut first_at: HashMap<(bool, usize, DimIndex), usize> = HashMap::new();
    for (r, segs) in segments.iter().enumerate() {
        let path = &rows[r].indices;
        for &(s, e, id) in segs {
            for key in [(true, s, path[s]), (false, e, path[e])] {
                match first_at.get(&key) {
                    Some(&other) => uf.union(other, id),
                    None => {
                        first_at.insert(key, id);
                    }
                }
            }
        }
    }

    let mut owner: Vec<Vec<Option<Owner>>> = rows.iter().map(|r| vec![Some(Owner::Salient); r.indices.len()]).collect();
    let mut reduced = vec![true; count];
    for (r, segs) in segments.iter().enumerate() {
        for &(s, e, id) in segs {
            let g = uf.find(id);
            if e + 1 != rows[r].indices.len() {
                reduced[g] = false;
            }
            for cell in &mut owner[r][s..=e] {
                *cell = Some(Owner::Group(g));
            }
        }
    }
    finish(layout, h, profile, &owner, &reduced, AggregationMethod::Depth)
}

/// Builds fragments from the owner grid and renumbers groups in order of
/// their first fragment.
fn finish(
    layout: &SplitIcicleLayout,
    h: &CodeHierarchy,
    profile: &DriftProfile,
    owner: &[Vec<Option<Owner>>],
    reduced: &[bool],
    method: AggregationMethod,
) -> SplitIcicleLayout {
    let mut fragments = build_fragments(h, profile, &layout.rows, |r, d| owner[r][d].expect("every cell assigned"));
    let mut renumber: HashMap<usize, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for f in &mut fragments {
        let Some(provisional) = f.group else { continue };
        let id = *renumber.entry(provisional).or_insert_with(|| {
            groups.push(Group {
                id: groups.len(),
                members: Vec::new(),
                value: f64::MIN,
                reduced_height: reduced[provisional],
                constrained: false,
                depth_start: u32::MAX,
                depth_end: 0,
                row_start: f.row_start,
                row_span: f.row_span,
            });
            groups.len() - 1
        });
        f.group = Some(id);
        let g = &mut groups[id];
        let row_end = (g.row_start + g.row_span).max(f.row_start + f.row_span);
        g.members.push(f.id);
        g.value = g.value.max(f.value);
        g.constrained |= f.constrained;
        g.depth_start = g.depth_start.min(f.depth);
        g.depth_end = g.depth_end.max(f.depth);
        g.row_start = g.row_start.min(f.row_start);
        g.row_span = row_end - g.row_start;
    }
    SplitIcicleLayout {
        rows: layout.rows.clone(),
        systems: layout.systems.clone(),
        fragments,
        groups,
        color_max: layout.color_max,
        reduced_height_ratio: layout.reduced_height_ratio,
        aggregation: Some(method),
    }
}

/// One rectangle of an expanded group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcicleCell {
    pub dim: DimensionId,
    pub depth: u32,
    pub row_start: usize,
    pub row_span: usize,
    pub value: f64,
    pub constrained: bool,
}

/// Classic (unsplit) icicle of the dimensions inside one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpandedGroup {
    pub group: usize,
    pub rows: usize,
    pub cells: Vec<IcicleCell>,
    pub color_max: f64,
}

/// Expands group `group` into a standard icicle of its member dimensions.
/// Leaves take one row each; siblings are ordered by drift, then id.
pub fn expand_group(
    layout: &SplitIcicleLayout,
    h: &CodeHierarchy,
    profile: &DriftProfile,
    group: usize,
) -> Result<ExpandedGroup, LayoutError> {
    let g = layout.group(group)?;
    let members: BTreeSet<DimIndex> = g.members.iter().map(|&f| layout.fragments[f].index()).collect();
    let by_drift = |a: &DimIndex, b: &DimIndex| {
        profile
            .value(*b)
            .total_cmp(&profile.value(*a))
            .then_with(|| h.id(*a).cmp(h.id(*b)))
    };
    let mut roots: Vec<DimIndex> = members
        .iter()
        .copied()
        .filter(|&d| h.parent(d).is_none_or(|p| !members.contains(&p)))
        .collect();
    roots.sort_by(by_drift);

    fn place(
        d: DimIndex,
        row: usize,
        h: &CodeHierarchy,
        profile: &DriftProfile,
        members: &BTreeSet<DimIndex>,
        order: &dyn Fn(&DimIndex, &DimIndex) -> std::cmp::Ordering,
        cells: &mut Vec<IcicleCell>,
    ) -> usize {
        let slot = cells.len();
        cells.push(IcicleCell {
            dim: h.id(d).clone(),
            depth: h.depth(d),
            row_start: row,
            row_span: 1,
            value: profile.value(d),
            constrained: profile.is_constrained(d),
        });
        let mut children: Vec<DimIndex> = h.children(d).iter().copied().filter(|c| members.contains(c)).collect();
        children.sort_by(order);
        let mut span = 0;
        for c in children {
            span += place(c, row + span, h, profile, members, order, cells);
        }
        let span = span.max(1);
        cells[slot].row_span = span;
        span
    }

    let mut cells = Vec::new();
    let mut rows = 0;
    for r in roots {
        rows += place(r, rows, h, profile, &members, &by_drift, &mut cells);
    }
    Ok(ExpandedGroup {
        group,
        rows,
        cells,
        color_max: layout.color_max,
    })
}

/// Returns `settings` with `dim` promoted to salient.
pub fn promote_salient(
    settings: &AggregationSettings,
    dim: &DimensionId,
    h: &CodeHierarchy,
) -> Result<AggregationSettings, LayoutError> {
    let mut out = settings.clone();
    out.promote(dim.clone(), h)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::layout::icicle::split_icicle;
    use crate::layout::icicle::tests::{check_guarantees, profile_with, random_case, tree};

    fn mask(h: &CodeHierarchy, codes: &[&str]) -> Vec<bool> {
        let mut m = vec![false; h.len()];
        for c in codes {
            m[h.index_of(&DimensionId::new("T", *c)).unwrap().get()] = true;
        }
        m
    }

    /// Fragment and group partition check shared by both methods.
    fn check_partition(l: &SplitIcicleLayout, salient: &[bool]) -> Result<(), String> {
        let mut seen = vec![0u32; l.fragments.len()];
        for g in &l.groups {
            if g.members.is_empty() {
                return Err(format!("group {} is empty", g.id));
            }
            for &m in &g.members {
                seen[m] += 1;
                if l.fragments[m].group != Some(g.id) {
                    return Err(format!("fragment {m} back-reference"));
                }
            }
            let max = g.members.iter().map(|&m| l.fragments[m].value).fold(f64::MIN, f64::max);
            if max != g.value {
                return Err(format!("group {} value", g.id));
            }
        }
        for f in &l.fragments {
            let standalone = f.group.is_none();
            if standalone != salient[f.index().get()] || standalone != f.salient {
                return Err(format!("fragment {} ({}) salient/grouped mismatch", f.id, f.dim));
            }
            if standalone {
                seen[f.id] += 1;
            }
        }
        if let Some(i) = seen.iter().position(|&n| n != 1) {
            return Err(format!("fragment {i} covered {} times", seen[i]));
        }
        Ok(())
    }

    fn geometry(l: &SplitIcicleLayout) -> Vec<(DimensionId, u32, usize, usize)> {
        l.fragments.iter().map(|f| (f.dim.clone(), f.depth, f.row_start, f.row_span)).collect()
    }

    fn group_dims(l: &SplitIcicleLayout) -> Vec<Vec<&str>> {
        l.groups
            .iter()
            .map(|g| {
                let mut v: Vec<&str> = g.members.iter().map(|&m| l.fragments[m].dim.code()).collect();
                v.sort();
                v.dedup();
                v
            })
            .collect()
    }

    fn chain() -> CodeHierarchy {
        tree(&[("R", None), ("A", Some("R")), ("A1", Some("A"))])
    }

    #[test]
    fn all_salient_means_no_groups() {
        let (h, p) = random_case(5, 200);
        let l = split_icicle(&h, &p).unwrap();
        let all = vec![true; h.len()];
        for agg in [
            aggregate_breadth_first(&l, &h, &p, &all),
            aggregate_depth_first(&l, &h, &p, &all),
        ] {
            assert!(agg.groups.is_empty());
            assert_eq!(geometry(&agg), geometry(&l));
        }
    }

    #[test]
    fn nothing_salient_collapses_each_root_region() {
        let h = tree(&[
            ("R", None),
            ("A", Some("R")),
            ("B", Some("R")),
            ("A1", Some("A")),
            ("B1", Some("B")),
            ("S", None),
            ("S1", Some("S")),
        ]);
        let p = profile_with(&h, &[("A1", 0.4), ("S1", 0.2)], &[]);
        let l = split_icicle(&h, &p).unwrap();
        let none = vec![false; h.len()];
        let bf = aggregate_breadth_first(&l, &h, &p, &none);
        assert_eq!(bf.groups.len(), 1);
        assert!(bf.groups[0].reduced_height);
        assert_eq!(bf.groups[0].value, 0.4);
        let df = aggregate_depth_first(&l, &h, &p, &none);
        assert_eq!(group_dims(&df), vec![vec!["A", "A1", "B", "B1", "R"], vec!["S", "S1"]]);
    }

    #[test]
    fn depth_first_chain_with_middle_salient() {
        let h = chain();
        let p = profile_with(&h, &[], &["A"]);
        let l = split_icicle(&h, &p).unwrap();
        let df = aggregate_depth_first(&l, &h, &p, &mask(&h, &["A"]));
        assert_eq!(group_dims(&df), vec![vec!["R"], vec!["A1"]]);
        assert!(!df.groups[0].reduced_height);
        assert!(df.groups[1].reduced_height);
        let a = df.fragments.iter().find(|f| f.dim.code() == "A").unwrap();
        assert!(a.salient && a.group.is_none());
        let bf = aggregate_breadth_first(&l, &h, &p, &mask(&h, &["A"]));
        assert_eq!(group_dims(&bf), vec![vec!["R"], vec!["A1"]]);
    }

    /// Twelve dimensions with two salient nodes at different depths.
    ///
    /// ```text
    /// R ─┬─ A ─┬─ A1*      (rows ordered by drift)
    ///    │     └─ A2
    ///    ├─ B ─┬─ B1
    ///    │     └─ B2
    ///    ├─ C* ─┬─ C1
    ///    │      └─ C2 ── C21
    ///    └─ D ── D1
    /// ```
    pub(crate) fn twelve() -> (CodeHierarchy, DriftProfile) {
        let h = tree(&[
            ("R", None),
            ("A", Some("R")),
            ("A1", Some("A")),
            ("A2", Some("A")),
            ("B", Some("R")),
            ("B1", Some("B")),
            ("B2", Some("B")),
            ("C", Some("R")),
            ("C1", Some("C")),
            ("C2", Some("C")),
            ("C21", Some("C2")),
            ("D", Some("R")),
        ]);
        let p = profile_with(
            &h,
            &[
                ("A1", 0.60),
                ("A", 0.20),
                ("C", 0.50),
                ("C1", 0.10),
                ("C2", 0.05),
                ("C21", 0.04),
                ("A2", 0.30),
                ("B", 0.25),
                ("B1", 0.02),
                ("B2", 0.01),
                ("D", 0.03),
            ],
            &["A1", "C"],
        );
        (h, p)
    }

    fn rows_of(l: &SplitIcicleLayout) -> Vec<&str> {
        l.rows.iter().map(|r| r.leaf.code()).collect()
    }

    #[test]
    fn twelve_node_breadth_first() {
        let (h, p) = twelve();
        let l = split_icicle(&h, &p).unwrap();
        // keys: A1 .6, C1 .5, C21 .5, A2 .3, B1 .25, B2 .25, D .03
        assert_eq!(rows_of(&l), ["A1", "C1", "C21", "A2", "B1", "B2", "D"]);
        let s = mask(&h, &["A1", "C"]);
        let bf = aggregate_breadth_first(&l, &h, &p, &s);
        check_partition(&bf, &s).unwrap();
        // R and both fragments of A lie above A1 and form one full-height
        // group. B and D are adjacent on one level with nothing salient
        // below, so they merge and carry their subtrees. Under C the rows of
        // C1 and C2 merge the same way, and A2 stays alone under A.
        assert_eq!(
            group_dims(&bf),
            vec![vec!["A", "R"], vec!["B", "B1", "B2", "D"], vec!["C1", "C2", "C21"], vec!["A2"]]
        );
        let reduced: Vec<bool> = bf.groups.iter().map(|g| g.reduced_height).collect();
        assert_eq!(reduced, [false, true, true, true]);
    }

    #[test]
    fn twelve_node_depth_first() {
        let (h, p) = twelve();
        let l = split_icicle(&h, &p).unwrap();
        let s = mask(&h, &["A1", "C"]);
        let df = aggregate_depth_first(&l, &h, &p, &s);
        check_partition(&df, &s).unwrap();
        // every row starts at R, so all runs from the root merge; the runs
        // below C start at C1 and C2 respectively and end at different
        // leaves, so they stay separate
        assert_eq!(
            group_dims(&df),
            vec![vec!["A", "A2", "B", "B1", "B2", "D", "R"], vec!["C1"], vec!["C2", "C21"]]
        );
        // the root group mixes a run ending above A1 with runs ending at leaves
        assert!(!df.groups[0].reduced_height);
        // depth-first keeps the unsplit non-salient chain C2-C21 in one group
        // while breadth-first merged it with its sibling C1
        let bf = aggregate_breadth_first(&l, &h, &p, &s);
        assert!(df.groups.len() < bf.groups.len());
    }

    #[test]
    fn promoting_a_buried_dim_gives_it_a_fragment() {
        let (h, p) = twelve();
        let l = split_icicle(&h, &p).unwrap();
        let before = aggregate_breadth_first(&l, &h, &p, p.salient_mask());
        let b1 = DimensionId::new("T", "B1");
        assert!(before.fragments.iter().filter(|f| f.dim == b1).all(|f| f.group.is_some()));
        let mut settings = AggregationSettings::new(1.0, AggregationMethod::Breadth).unwrap();
        settings.manual_salient = ["A1", "C"].iter().map(|c| DimensionId::new("T", *c)).collect();
        let promoted = promote_salient(&settings, &b1, &h).unwrap();
        let mut p2 = p.clone();
        p2.apply_settings(&h, &promoted).unwrap();
        let after = aggregate_breadth_first(&l, &h, &p2, p2.salient_mask());
        let f = after.fragments.iter().find(|f| f.dim == b1).unwrap();
        assert!(f.salient && f.group.is_none());
        // promoting an already-salient dim changes nothing
        let again = promote_salient(&promoted, &b1, &h).unwrap();
        assert_eq!(again, promoted);
        assert!(promote_salient(&settings, &DimensionId::new("T", "zz"), &h).is_err());
    }

    #[test]
    fn expand_counts_leaves() {
        let (h, p) = twelve();
        let l = split_icicle(&h, &p).unwrap();
        let bf = aggregate_breadth_first(&l, &h, &p, &mask(&h, &["A1", "C"]));
        let g = bf.groups.iter().position(|g| g.members.len() > 3).unwrap();
        let e = expand_group(&bf, &h, &p, g).unwrap();
        // B{B1,B2} and D: three leaves under two roots
        assert_eq!(e.rows, 3);
        assert_eq!(e.cells.iter().filter(|c| c.row_span == 1 && h.is_leaf(h.index_of(&c.dim).unwrap())).count(), 3);
        let b = e.cells.iter().find(|c| c.dim.code() == "B").unwrap();
        assert_eq!((b.row_start, b.row_span), (0, 2));
        assert!(matches!(expand_group(&bf, &h, &p, 99), Err(LayoutError::UnknownGroup(99))));

        let single = bf.groups.iter().position(|g| g.members.len() == 1).unwrap();
        let e = expand_group(&bf, &h, &p, single).unwrap();
        assert_eq!((e.rows, e.cells.len()), (1, 1));
    }

    #[test]
    fn threshold_sweep_is_monotone() {
        let (h, p) = random_case(11, 500);
        let mut prev: Option<Vec<bool>> = None;
        for i in 0..=50 {
            let s = crate::metrics::salient_mask(&h, p.values(), i as f64 / 100.0);
            if let Some(prev) = &prev {
                assert!(s.iter().zip(prev).all(|(now, before)| !*now || *before));
            }
            prev = Some(s);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn both_methods_partition(seed in any::<u64>(), n in 1usize..250, t in 0.0f64..0.6) {
            let (h, p) = random_case(seed, n);
            let l = split_icicle(&h, &p).unwrap();
            let s = crate::metrics::salient_mask(&h, p.values(), t);
            for agg in [aggregate_breadth_first(&l, &h, &p, &s), aggregate_depth_first(&l, &h, &p, &s)] {
                prop_assert_eq!(check_partition(&agg, &s), Ok(()));
                prop_assert_eq!(check_guarantees(&h, &p, &agg), Ok(()));
                for g in &agg.groups {
                    prop_assert!(expand_group(&agg, &h, &p, g.id).is_ok());
                }
            }
        }
    }
}
