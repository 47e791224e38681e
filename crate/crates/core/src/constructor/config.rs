use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Which construction algorithm to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Unconstrained random nodes with greedy (projection) output weights.
    #[serde(rename = "cfnrw")]
    CfnRw,
    /// Angle-constrained nodes with greedy output weights.
    #[serde(rename = "lightgcnet1")]
    LightGcnetI,
    /// Angle-constrained pooled nodes with least-squares output weights.
    #[serde(rename = "lightgcnet2")]
    LightGcnetII,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::CfnRw, Variant::LightGcnetI, Variant::LightGcnetII];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CfnRw => "cfnrw",
            Variant::LightGcnetI => "lightgcnet1",
            Variant::LightGcnetII => "lightgcnet2",
        }
    }

    pub fn uses_global_weights(self) -> bool {
        matches!(self, Variant::LightGcnetII)
    }

    /// Pool rule used when the configuration does not name one.
    pub fn default_pool_rule(self) -> PoolRule {
        match self {
            Variant::LightGcnetI => PoolRule::FirstPass,
            Variant::CfnRw | Variant::LightGcnetII => PoolRule::BestMargin,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cfnrw" | "cfn-rw" | "cfn_rw" => Ok(Variant::CfnRw),
            "lightgcnet1" | "lightgcnet-i" | "lightgcnet_i" => Ok(Variant::LightGcnetI),
            "lightgcnet2" | "lightgcnet-ii" | "lightgcnet_ii" => Ok(Variant::LightGcnetII),
            _ => Err(Error::InvalidParameter(format!(
                "unknown variant {s:?} (expected cfnrw, lightgcnet1 or lightgcnet2)"
            ))),
        }
    }
}

/// What to do when no candidate at any scale satisfies the constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Install the best-margin candidate seen and flag the step.
    #[default]
    AcceptBest,
    /// End training with status `Stalled`.
    Stop,
}

impl FromStr for Fallback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "accept_best" | "acceptbest" | "best" => Ok(Fallback::AcceptBest),
            "stop" => Ok(Fallback::Stop),
            _ => Err(Error::InvalidParameter(format!(
                "unknown fallback {s:?} (expected accept-best or stop)"
            ))),
        }
    }
}

/// How a constrained variant picks among the candidates drawn at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolRule {
    /// Draw the whole pool and keep the passing candidate with the largest
    /// summed margin.
    BestMargin,
    /// Draw candidates one at a time and keep the first that passes.
    FirstPass,
}

impl FromStr for PoolRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "best_margin" | "best" => Ok(PoolRule::BestMargin),
            "first_pass" | "first" => Ok(PoolRule::FirstPass),
            _ => Err(Error::InvalidParameter(format!(
                "unknown pool rule {s:?} (expected best-margin or first-pass)"
            ))),
        }
    }
}

/// Increasing list of interval half-widths scanned for candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopeSchedule(Vec<f64>);

impl ScopeSchedule {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidParameter("scope schedule is empty".into()));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidParameter(
                "scope scales must be positive and finite".into(),
            ));
        }
        if scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "scope scales must be strictly increasing".into(),
            ));
        }
        Ok(ScopeSchedule(scales))
    }

    pub fn fixed(lambda: f64) -> Result<Self> {
        ScopeSchedule::new(vec![lambda])
    }

    pub fn scales(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for ScopeSchedule {
    type Err = Error;

    /// Accepts `start:step:end` (inclusive grid), a single value, or a
    /// comma-separated list.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad scope value {t:?}")))
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.len() {
            1 => ScopeSchedule::new(s.split(',').map(num).collect::<Result<_>>()?),
            3 => {
                let (start, step, end) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
                if !(step > 0.0) || end < start {
                    return Err(Error::InvalidParameter(format!(
                        "scope grid {s:?} needs step > 0 and end >= start"
                    )));
                }
                let slack = 1e-9 * step;
                let count = ((end - start + slack) / step).floor() as usize + 1;
                ScopeSchedule::new((0..count).map(|k| start + k as f64 * step).collect())
            }
            _ => Err(Error::InvalidParameter(format!(
                "scope {s:?} is not of the form start:step:end"
            ))),
        }
    }
}

impl Serialize for ScopeSchedule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScopeSchedule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Single(f64),
            List(Vec<f64>),
        }
        let parsed = match Repr::deserialize(d)? {
            Repr::Text(t) => t.parse(),
            Repr::Single(v) => ScopeSchedule::fixed(v),
            Repr::List(v) => ScopeSchedule::new(v),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    #[serde(default = "half")]
    pub tau: f64,
    #[serde(default = "half")]
    pub mu: f64,
    /// Candidates drawn per scale.
    pub t_max: usize,
    /// Node budget.
    pub l_max: usize,
    /// Target training RMSE (normalized units).
    pub tol: f64,
    pub scopes: ScopeSchedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_rule: Option<PoolRule>,
}

fn half() -> f64 {
    0.5
}

impl TrainConfig {
    /// Defaults: tau = mu = 0.5, 20 candidates per scale (1 for CFN-RW),
    /// 200 nodes, tolerance 0.05, accept-best fallback.
    pub fn new(variant: Variant, scopes: ScopeSchedule) -> Self {
        TrainConfig {
            variant,
            tau: 0.5,
            mu: 0.5,
            t_max: if variant == Variant::CfnRw { 1 } else { 20 },
            l_max: 200,
            tol: 0.05,
            scopes,
            seed: 0,
            fallback: Fallback::AcceptBest,
            pool_rule: None,
        }
    }

    pub fn pool_rule(&self) -> PoolRule {
        self.pool_rule
            .unwrap_or_else(|| self.variant.default_pool_rule())
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {v}"
                )))
            }
        };
        unit(self.tau, "tau")?;
        unit(self.mu, "mu")?;
        if self.t_max == 0 {
            return Err(Error::InvalidParameter("t_max must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        // Re-check in case the schedule was built field-by-field.
        ScopeSchedule::new(self.scopes.0.clone())?;
        Ok(())
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn scope_grid_parses(start in 0.1f64..50.0, step in 0.1f64..10.0, count in 1usize..40) {
            let end = start + step * (count - 1) as f64;
            let s: ScopeSchedule = format!("{start}:{step}:{end}").parse().unwrap();
            prop_assert_eq!(s.len(), count);
            prop_assert!(s.scales().windows(2).all(|w| w[0] < w[1]));
            let json = serde_json::to_string(&s).unwrap();
            prop_assert_eq!(serde_json::from_str::<ScopeSchedule>(&json).unwrap(), s);
        }
    }
}
