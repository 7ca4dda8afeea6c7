use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapRelationship {
    /// The smaller cohort lies entirely inside the larger one (or they are equal).
    Subset,
    Partial,
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub size_a: usize,
    pub size_b: usize,
    pub size_intersection: usize,
    pub relationship: OverlapRelationship,
}

/// Overlap of two cohorts given as sorted member lists.
pub fn overlap(a: &[u32], b: &[u32]) -> OverlapSummary {
    let (mut i, mut j, mut both) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                both += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let relationship = if both == 0 {
        OverlapRelationship::Disjoint
    } else if both == a.len().min(b.len()) {
        OverlapRelationship::Subset
    } else {
        OverlapRelationship::Partial
    };
    OverlapSummary {
        size_a: a.len(),
        size_b: b.len(),
        size_intersection: both,
        relationship,
    }
}
