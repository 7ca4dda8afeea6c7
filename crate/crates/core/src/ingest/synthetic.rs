//! Seeded synthetic cohorts with planted pairwise code correlations.
//!
//! Randomness comes from ChaCha8 seeded with [`SyntheticSpec::seed`], so a
//! spec always produces the same dataset on every platform.
//!
//! Background codes are independent Bernoulli draws per leaf. Planted codes
//! are thresholded components of a correlated Gaussian vector whose latent
//! correlations are solved so that the presence indicators reach the
//! requested phi coefficients.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::IngestError;
use crate::dataset::{AttributeValue, Patient, PatientTable};
use crate::hierarchy::{AttributeKind, AttributeSpec, CodeHierarchy, DimensionId, HierarchyRow};

/// Shape of one generated coding system. Nodes are created breadth-first,
/// `branching` children each, down to `depth`, stopping at `max_nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemShape {
    pub name: String,
    /// Code of the root; descendants append `.k` per level.
    pub prefix: String,
    pub branching: usize,
    pub depth: u32,
    #[serde(default)]
    pub max_nodes: Option<usize>,
}

fn default_planted_prevalence() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCorrelation {
    pub dim_a: DimensionId,
    pub dim_b: DimensionId,
    /// Target phi coefficient between the two presence indicators.
    pub strength: f64,
    #[serde(default = "default_planted_prevalence")]
    pub prevalence_a: f64,
    #[serde(default = "default_planted_prevalence")]
    pub prevalence_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub patients: usize,
    pub systems: Vec<SystemShape>,
    /// Each background leaf gets a prevalence drawn uniformly from this range.
    pub leaf_prevalence: [f64; 2],
    #[serde(default)]
    pub correlations: Vec<PlantedCorrelation>,
    /// Categorical values are uniform over the categories; numeric values
    /// are whole numbers uniform over the range.
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
}

pub fn default_attributes() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec::categorical("Gender", vec!["F".into(), "M".into()]),
        AttributeSpec::categorical(
            "Race",
            ["Asian", "Black", "Other", "White"].iter().map(|s| s.to_string()).collect(),
        ),
        AttributeSpec::numeric("Age", 18.0, 90.0),
    ]
}

impl SyntheticSpec {
    /// 8,360 patients over two systems with 10,626 and 4,750 codes.
    pub fn table_scale(seed: u64) -> Self {
        Self {
            seed,
            patients: 8360,
            systems: vec![
                SystemShape {
                    name: "ICD10CM".into(),
                    prefix: "I".into(),
                    branching: 8,
                    depth: 5,
                    max_nodes: Some(10_626),
                },
                SystemShape {
                    name: "SNOMEDCT".into(),
                    prefix: "S".into(),
                    branching: 6,
                    depth: 5,
                    max_nodes: Some(4_750),
                },
            ],
            leaf_prevalence: [0.0005, 0.009],
            correlations: vec![PlantedCorrelation {
                dim_a: DimensionId::new("ICD10CM", "I.0.0.0.0.0"),
                dim_b: DimensionId::new("ICD10CM", "I.1.0.0.0.0"),
                strength: 0.6,
                prevalence_a: 0.2,
                prevalence_b: 0.2,
            }],
            attributes: default_attributes(),
        }
    }

    /// Small, dense dataset: one system of 43 codes, 2,000 patients, and a
    /// 0.6 correlation between `DX:D.0.0` and `DX:D.3.0`.
    pub fn planted_pair(seed: u64) -> Self {
        Self {
            seed,
            patients: 2000,
            systems: vec![SystemShape {
                name: "DX".into(),
                prefix: "D".into(),
                branching: 6,
                depth: 2,
                max_nodes: None,
            }],
            leaf_prevalence: [0.25, 0.35],
            correlations: vec![PlantedCorrelation {
                dim_a: DimensionId::new("DX", "D.0.0"),
                dim_b: DimensionId::new("DX", "D.3.0"),
                strength: 0.6,
                prevalence_a: 0.2,
                prevalence_b: 0.2,
            }],
            attributes: default_attributes(),
        }
    }

    fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: String| Err(IngestError::InvalidSpec(m));
        if self.patients == 0 {
            return bad("patient count must be positive".into());
        }
        if self.systems.is_empty() {
            return bad("at least one system is required".into());
        }
        for s in &self.systems {
            if s.branching == 0 || s.max_nodes == Some(0) || s.prefix.is_empty() {
                return bad(format!("system '{}' needs positive branching and node counts", s.name));
            }
        }
        let [lo, hi] = self.leaf_prevalence;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad(format!("leaf prevalence range [{lo}, {hi}] is not within [0, 1]"));
        }
        for c in &self.correlations {
            if !(-1.0..=1.0).contains(&c.strength) {
                return bad(format!("strength {} outside [-1, 1]", c.strength));
            }
            for p in [c.prevalence_a, c.prevalence_b] {
                if !(p > 0.0 && p < 1.0) {
                    return bad(format!("planted prevalence {p} must lie strictly between 0 and 1"));
                }
            }
            if c.dim_a == c.dim_b {
                return bad(format!("{} cannot be correlated with itself", c.dim_a));
            }
        }
        Ok(())
    }
}

/// Hierarchy described by the generator's system shapes.
pub fn synthetic_hierarchy(spec: &SyntheticSpec) -> Result<CodeHierarchy, IngestError> {
    let mut rows = Vec::new();
    for s in &spec.systems {
        let cap = s.max_nodes.unwrap_or(usize::MAX);
        let mut queue = VecDeque::from([(s.prefix.clone(), 0u32)]);
        rows.push(HierarchyRow {
            system: s.name.clone(),
            code: s.prefix.clone(),
            parent: None,
            label: format!("{} {}", s.name, s.prefix),
        });
        let mut count = 1;
        'fill: while let Some((code, depth)) = queue.pop_front() {
            if depth == s.depth {
                continue;
            }
            for k in 0..s.branching {
                if count == cap {
                    break 'fill;
                }
                let child = format!("{code}.{k}");
                rows.push(HierarchyRow {
                    system: s.name.clone(),
                    code: child.clone(),
                    parent: Some(code.clone()),
                    label: format!("{} {child}", s.name),
                });
                queue.push_back((child, depth + 1));
                count += 1;
            }
        }
    }
    Ok(CodeHierarchy::from_rows(rows)?)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `P(X <= h, Y <= k)` for a standard bivariate normal with correlation
/// `rho`. Integrates the density derivative in `rho` after substituting
/// `rho = sin(theta)`, which removes the endpoint singularity, with
/// Simpson's rule.
pub fn bivariate_normal_cdf(h: f64, k: f64, rho: f64) -> f64 {
    let n = std_normal();
    let integrand = |t: f64| {
        let (s, c) = t.sin_cos();
        (-(h * h - 2.0 * s * h * k + k * k) / (2.0 * c * c)).exp() / (2.0 * std::f64::consts::PI)
    };
    let end = rho.clamp(-1.0, 1.0).asin();
    let steps = 400;
    let width = end / steps as f64;
    let mut sum = integrand(0.0) + integrand(end);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(width * i as f64);
    }
    n.cdf(h) * n.cdf(k) + sum * width / 3.0
}

/// Phi coefficient of two thresholded latent normals with correlation `rho`
/// and marginal prevalences `pa`, `pb`.
pub fn phi_from_latent(rho: f64, pa: f64, pb: f64) -> f64 {
    let n = std_normal();
    let joint = bivariate_normal_cdf(n.inverse_cdf(pa), n.inverse_cdf(pb), rho);
    (joint - pa * pb) / (pa * (1.0 - pa) * pb * (1.0 - pb)).sqrt()
}

const RHO_LIMIT: f64 = 0.9995;

/// Latent correlation giving phi coefficient `phi` at the given
/// prevalences, by bisection. Errors when `phi` is out of reach.
pub fn latent_correlation(phi: f64, pa: f64, pb: f64) -> Result<f64, IngestError> {
    let (lo_phi, hi_phi) = (phi_from_latent(-RHO_LIMIT, pa, pb), phi_from_latent(RHO_LIMIT, pa, pb));
    if phi < lo_phi - 1e-9 || phi > hi_phi + 1e-9 {
        return Err(IngestError::InfeasibleCorrelation(format!(
            "phi {phi} is outside the attainable range [{lo_phi:.4}, {hi_phi:.4}] for prevalences {pa} and {pb}"
        )));
    }
    let (mut lo, mut hi) = (-RHO_LIMIT, RHO_LIMIT);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if phi_from_latent(mid, pa, pb) < phi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

struct Planted {
    dims: Vec<DimensionId>,
    thresholds: Vec<f64>,
    factor: DMatrix<f64>,
}

fn plant(spec: &SyntheticSpec, h: &CodeHierarchy) -> Result<Planted, IngestError> {
    let mut dims: Vec<DimensionId> = Vec::new();
    let mut prevalence: BTreeMap<DimensionId, f64> = BTreeMap::new();
    for c in &spec.correlations {
        for (d, p) in [(&c.dim_a, c.prevalence_a), (&c.dim_b, c.prevalence_b)] {
            if !h.contains(d) {
                return Err(IngestError::InvalidSpec(format!("planted code {d} is not in the generated hierarchy")));
            }
            match prevalence.get(d) {
                Some(&q) if q != p => {
                    return Err(IngestError::InvalidSpec(format!("conflicting prevalences for {d}")));
                }
                Some(_) => {}
                None => {
                    prevalence.insert(d.clone(), p);
                    dims.push(d.clone());
                }
            }
        }
    }
    let k = dims.len();
    let pos = |d: &DimensionId| dims.iter().position(|x| x == d).expect("planted dim");
    let mut latent = DMatrix::<f64>::identity(k, k);
    for c in &spec.correlations {
        let (i, j) = (pos(&c.dim_a), pos(&c.dim_b));
        let rho = latent_correlation(c.strength, c.prevalence_a, c.prevalence_b)?;
        latent[(i, j)] = rho;
        latent[(j, i)] = rho;
    }
    let factor = Cholesky::new(latent)
        .ok_or_else(|| {
            IngestError::InfeasibleCorrelation("planted correlations are not jointly attainable".into())
        })?
        .l();
    let n = std_normal();
    let thresholds = dims.iter().map(|d| n.inverse_cdf(prevalence[d])).collect();
    Ok(Planted {
        dims,
        thresholds,
        factor,
    })
}

fn sample_attribute(spec: &AttributeSpec, rng: &mut ChaCha8Rng) -> Option<AttributeValue> {
    match &spec.kind {
        AttributeKind::Categorical { categories } if !categories.is_empty() => Some(AttributeValue::Category(
            categories[rng.random_range(0..categories.len())].clone(),
        )),
        AttributeKind::Categorical { .. } => None,
        AttributeKind::Numeric { min, max } => {
            let (lo, hi) = (min.ceil() as i64, max.floor() as i64);
            let v = if lo <= hi { rng.random_range(lo..=hi) as f64 } else { *min };
            Some(AttributeValue::Number(v))
        }
    }
}

/// Generates the hierarchy (codes only) and the patient table for `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(CodeHierarchy, PatientTable), IngestError> {
    spec.validate()?;
    let h = synthetic_hierarchy(spec)?;
    let planted = plant(spec, &h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let background: Vec<(DimensionId, f64)> = h
        .leaves()
        .map(|d| h.id(d))
        .filter(|d| !planted.dims.contains(d))
        .map(|d| {
            let [lo, hi] = spec.leaf_prevalence;
            let p = if hi > lo { rng.random_range(lo..hi) } else { lo };
            (d.clone(), p)
        })
        .collect();
    let p_max = background.iter().map(|(_, p)| *p).fold(0.0, f64::max);
    let skip = (p_max > 0.0).then(|| Geometric::new(p_max).expect("probability in (0, 1]"));

    let width = spec.patients.to_string().len();
    let mut patients = Vec::with_capacity(spec.patients);
    for i in 0..spec.patients {
        let mut p = Patient {
            id: format!("P{i:0width$}"),
            attributes: Default::default(),
            events: Default::default(),
        };
        for a in &spec.attributes {
            if let Some(v) = sample_attribute(a, &mut rng) {
                p.attributes.insert(a.name.clone(), v);
            }
        }
        // candidates at rate p_max, thinned to each leaf's own prevalence
        if let Some(skip) = &skip {
            let mut at = skip.sample(&mut rng) as usize;
            while at < background.len() {
                let (d, prob) = &background[at];
                if *prob >= p_max || rng.random::<f64>() * p_max < *prob {
                    p.events.insert(d.clone());
                }
                at = at.saturating_add(1 + skip.sample(&mut rng) as usize);
            }
        }
        if !planted.dims.is_empty() {
            let eps = DVector::from_fn(planted.dims.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &planted.factor * eps;
            for (k, d) in planted.dims.iter().enumerate() {
                if z[k] < planted.thresholds[k] {
                    p.events.insert(d.clone());
                }
            }
        }
        patients.push(p);
    }
    Ok((h, PatientTable::new(patients)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi(patients: &[Patient], a: &DimensionId, b: &DimensionId) -> f64 {
        let n = patients.len() as f64;
        let (mut na, mut nb, mut nab) = (0.0, 0.0, 0.0);
        for p in patients {
            let (x, y) = (p.events.contains(a), p.events.contains(b));
            na += x as u8 as f64;
            nb += y as u8 as f64;
            nab += (x && y) as u8 as f64;
        }
        let (pa, pb, pab) = (na / n, nb / n, nab / n);
        (pab - pa * pb) / (pa * (1.0 - pa) * pb * (1.0 - pb)).sqrt()
    }

    #[test]
    fn bivariate_cdf_matches_orthant_formula() {
        // P(X<=0, Y<=0) = 1/4 + asin(rho) / (2 pi)
        for rho in [-0.9, -0.5, 0.0, 0.3, 0.6, 0.95] {
            let oracle = 0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI);
            assert!((bivariate_normal_cdf(0.0, 0.0, rho) - oracle).abs() < 1e-9, "rho {rho}");
        }
        // independence factorises
        let n = std_normal();
        assert!((bivariate_normal_cdf(-0.8, 0.4, 0.0) - n.cdf(-0.8) * n.cdf(0.4)).abs() < 1e-12);
    }

    #[test]
    fn latent_solution_round_trips() {
        for phi in [-0.2, 0.0, 0.3, 0.6] {
            let rho = latent_correlation(phi, 0.2, 0.2).unwrap();
            assert!((phi_from_latent(rho, 0.2, 0.2) - phi).abs() < 1e-9);
        }
        assert!(matches!(
            latent_correlation(0.9, 0.1, 0.5),
            Err(IngestError::InfeasibleCorrelation(_))
        ));
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec::planted_pair(42);
        let (h1, t1) = generate_synthetic(&spec).unwrap();
        let (h2, t2) = generate_synthetic(&spec).unwrap();
        assert_eq!(h1.rows(), h2.rows());
        assert_eq!(t1, t2);
        let (_, t3) = generate_synthetic(&SyntheticSpec::planted_pair(43)).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn planted_phi_within_tolerance() {
        for (seed, strength) in [(1, 0.6), (2, 0.0), (3, -0.15), (4, 0.3)] {
            let mut spec = SyntheticSpec::planted_pair(seed);
            spec.correlations[0].strength = strength;
            let (_, t) = generate_synthetic(&spec).unwrap();
            let c = &spec.correlations[0];
            let got = phi(&t.patients, &c.dim_a, &c.dim_b);
            assert!((got - strength).abs() <= 0.1, "seed {seed}: {got} vs {strength}");
        }
    }

    #[test]
    fn jointly_infeasible_pairs_rejected() {
        let mut spec = SyntheticSpec::planted_pair(0);
        let d = |c: &str| DimensionId::new("DX", c);
        spec.correlations = vec![
            PlantedCorrelation { dim_a: d("D.0.0"), dim_b: d("D.1.0"), strength: -0.45, prevalence_a: 0.5, prevalence_b: 0.5 },
            PlantedCorrelation { dim_a: d("D.1.0"), dim_b: d("D.2.0"), strength: -0.45, prevalence_a: 0.5, prevalence_b: 0.5 },
            PlantedCorrelation { dim_a: d("D.0.0"), dim_b: d("D.2.0"), strength: -0.8, prevalence_a: 0.5, prevalence_b: 0.5 },
        ];
        assert!(matches!(generate_synthetic(&spec), Err(IngestError::InfeasibleCorrelation(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SyntheticSpec::planted_pair(0);
        spec.correlations[0].strength = 1.5;
        assert!(matches!(generate_synthetic(&spec), Err(IngestError::InvalidSpec(_))));
        let mut spec = SyntheticSpec::planted_pair(0);
        spec.patients = 0;
        assert!(generate_synthetic(&spec).is_err());
        let mut spec = SyntheticSpec::planted_pair(0);
        spec.correlations[0].dim_b = DimensionId::new("DX", "nope");
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn table_scale_hierarchy_size() {
        let h = synthetic_hierarchy(&SyntheticSpec::table_scale(0)).unwrap();
        assert_eq!(h.len(), 15_376);
        let per: Vec<usize> = ["ICD10CM", "SNOMEDCT"]
            .iter()
            .map(|s| h.indices().filter(|&d| h.id(d).system() == *s).count())
            .collect();
        assert_eq!(per, [10_626, 4_750]);
        for c in &SyntheticSpec::table_scale(0).correlations {
            assert!(h.is_leaf(h.index_of(&c.dim_a).unwrap()));
            assert!(h.is_leaf(h.index_of(&c.dim_b).unwrap()));
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SyntheticSpec::table_scale(9);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticSpec>(&text).unwrap(), spec);
    }
}
