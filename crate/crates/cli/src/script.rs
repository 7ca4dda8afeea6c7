//! Filter scripts: a recorded sequence of filter steps plus baseline/focus
//! choices, replayed against a session.

use std::fmt;
use std::str::FromStr;

use driftscope_core::{AggregationMethod, CohortId, DimensionId, EdgeId, FilterOperator};
use driftscope_service::{Mutation, Session};
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::CliError;

/// A cohort named relative to the script: the root, or the included or
/// excluded side of a step. Written `"root"`, `3`, `"3"` or `"3/excluded"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CohortRef {
    Root,
    Step { index: usize, excluded: bool },
}

impl FromStr for CohortRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("root") {
            return Ok(Self::Root);
        }
        let (num, side) = match s.split_once('/') {
            Some((n, side)) => (n, Some(side)),
            None => (s, None),
        };
        let index = num
            .parse()
            .map_err(|_| format!("bad cohort reference '{s}' (expected root, N, N/included or N/excluded)"))?;
        let excluded = match side {
            None | Some("included") => false,
            Some("excluded") => true,
            Some(other) => return Err(format!("bad cohort side '{other}' in '{s}'")),
        };
        Ok(Self::Step { index, excluded })
    }
}

impl fmt::Display for CohortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Root => f.write_str("root"),
            Self::Step { index, excluded: false } => write!(f, "{index}"),
            Self::Step { index, excluded: true } => write!(f, "{index}/excluded"),
        }
    }
}

impl Serialize for CohortRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CohortRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(index) => Ok(Self::Step { index, excluded: false }),
            Raw::Text(t) => t.parse().map_err(de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(default = "root_ref")]
    pub parent: CohortRef,
    #[serde(flatten)]
    pub operator: FilterOperator,
}

fn root_ref() -> CohortRef {
    CohortRef::Root
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSettings {
    pub t_s: Option<f64>,
    pub method: Option<AggregationMethod>,
    #[serde(default)]
    pub manual_salient: Vec<DimensionId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterScript {
    #[serde(default)]
    pub steps: Vec<ScriptStep>,
    pub baseline: Option<CohortRef>,
    pub focus: Option<CohortRef>,
    #[serde(default)]
    pub settings: ScriptSettings,
    /// Dimensions whose distributions the report should include.
    #[serde(default)]
    pub dims: Vec<DimensionId>,
}

impl FilterScript {
    /// Parses a full script object or a bare array of steps.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Steps(Vec<ScriptStep>),
            Full(FilterScript),
        }
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        // Try the explicit shapes first for a useful error message.
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("script: {e}")))?;
        let raw = if value.is_array() {
            serde_json::from_value(value).map(Raw::Steps)
        } else {
            serde_json::from_value(value).map(Raw::Full)
        };
        match raw.map_err(|e| CliError::Validation(format!("script: {e}")))? {
            Raw::Steps(steps) => Ok(Self {
                steps,
                ..Self::default()
            }),
            Raw::Full(s) => Ok(s),
        }
    }
}

/// Cohort ids created while replaying a script.
#[derive(Debug, Clone, Default)]
pub struct Replayed {
    steps: Vec<(CohortId, CohortId, EdgeId)>,
}

impl Replayed {
    pub fn resolve(&self, session: &Session, r: CohortRef) -> Result<CohortId, CliError> {
        match r {
            CohortRef::Root => Ok(session.tree().root()),
            CohortRef::Step { index, excluded } => {
                let (inc, exc, _) = self
                    .steps
                    .get(index)
                    .ok_or_else(|| CliError::Validation(format!("cohort reference {r} names an undefined step")))?;
                Ok(if excluded { *exc } else { *inc })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Applies the script's steps to `session`. Referencing an excluded cohort
/// shows it first, as a user would in the tree view.
pub fn replay_steps(session: &mut Session, script: &FilterScript) -> Result<Replayed, CliError> {
    let mut out = Replayed::default();
    for (i, step) in script.steps.iter().enumerate() {
        if let CohortRef::Step { index, .. } = step.parent {
            if index >= i {
                return Err(CliError::Validation(format!(
                    "step {i}: parent {} must refer to an earlier step",
                    step.parent
                )));
            }
        }
        let parent = out.resolve(session, step.parent)?;
        if let CohortRef::Step { index, excluded: true } = step.parent {
            let edge = out.steps[index].2;
            if !session.tree().cohort(parent).map(|c| c.visible).unwrap_or(false) {
                session
                    .apply(Mutation::SetExcludedVisible { edge, visible: true })
                    .map_err(|e| CliError::Validation(format!("step {i}: {e}")))?;
            }
        }
        let applied = session
            .apply(Mutation::ApplyFilter {
                parent,
                operator: step.operator.clone(),
            })
            .map_err(|e| CliError::Validation(format!("step {i}: {e}")))?;
        let (inc, exc) = (applied.included.expect("filter result"), applied.excluded.expect("filter result"));
        let edge = session.tree().edge_of(inc).map_err(|e| CliError::Validation(e.to_string()))?;
        out.steps.push((inc, exc, edge));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_refs_parse() {
        assert_eq!("root".parse::<CohortRef>().unwrap(), CohortRef::Root);
        assert_eq!(
            "2/excluded".parse::<CohortRef>().unwrap(),
            CohortRef::Step { index: 2, excluded: true }
        );
        assert_eq!(
            "4/included".parse::<CohortRef>().unwrap(),
            CohortRef::Step { index: 4, excluded: false }
        );
        assert!("x".parse::<CohortRef>().is_err());
        assert!("1/other".parse::<CohortRef>().is_err());
        for r in ["root", "3", "3/excluded"] {
            assert_eq!(r.parse::<CohortRef>().unwrap().to_string(), r);
        }
    }

    #[test]
    fn both_script_shapes_parse() {
        let bare = r#"[{"kind":"event-present","target":"T:A"},{"parent":0,"kind":"attribute-equals","target":"Gender","value":"F"}]"#;
        let s = FilterScript::parse(bare).unwrap();
        assert_eq!(s.steps.len(), 2);
        assert_eq!(s.steps[0].parent, CohortRef::Root);
        assert_eq!(s.steps[1].parent, CohortRef::Step { index: 0, excluded: false });

        let full = r#"{"steps":[{"parent":"root","kind":"attribute-range","target":"Age","value":[30,40]}],
                      "baseline":"root","focus":"0/excluded","settings":{"t_s":0.1,"method":"depth"},
                      "dims":["Attributes:Age"]}"#;
        let s = FilterScript::parse(full).unwrap();
        assert_eq!(s.focus, Some(CohortRef::Step { index: 0, excluded: true }));
        assert_eq!(s.settings.method, Some(AggregationMethod::Depth));
        assert_eq!(s.dims.len(), 1);

        assert_eq!(FilterScript::parse("  ").unwrap(), FilterScript::default());
        assert!(FilterScript::parse(r#"{"stepz":[]}"#).is_err());
        assert!(FilterScript::parse(r#"[{"kind":"nope"}]"#).is_err());
    }
}
