//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distributions::{allocate_decay_lengths, allocate_intensities, LawSpec, MetaorderLaw};
use crate::engine::{InitMode, Population, SimOptions};
use crate::error::{Error, Result};
use crate::theory::{default_lags, geometric_lags};

pub const MIN_STEPS: u64 = 1_000;

/// How a group's total intensity is split among its members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntensityRule {
    /// `mass / count` each.
    Equal { mass: f64 },
    /// One value per member.
    Explicit { values: Vec<f64> },
    /// Mid-point quantiles of a truncated power law, rescaled to `mass`.
    Pareto { beta: f64, lambda_cut: f64, mass: f64 },
}

/// A group's law: one law for all members, or exponential decay lengths
/// allocated from a power-law distribution with exponent `theta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum GroupLaw {
    Allocated(AllocatedLaw),
    Single(LawSpec),
}

// Dispatch on `kind` by hand so that errors from the chosen variant reach the user.
impl<'de> Deserialize<'de> for GroupLaw {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        if v.get("kind").and_then(|k| k.as_str()) == Some("allocated_exponential") {
            AllocatedLaw::deserialize(v).map(GroupLaw::Allocated).map_err(D::Error::custom)
        } else {
            LawSpec::deserialize(v).map(GroupLaw::Single).map_err(D::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AllocatedLaw {
    AllocatedExponential { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub count: usize,
    pub intensity: IntensityRule,
    pub law: GroupLaw,
}

/// Lag grid, written as `"1..100"`, `"geom:10000"` or `"1,2,5"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagSpec(pub Vec<u64>);

impl LagSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::config("lags", format!("{m} in `{text}`"));
        let t = text.trim();
        let lags: Vec<u64> = if let Some(max) = t.strip_prefix("geom:") {
            let max: u64 = max.trim().parse().map_err(|_| bad("bad geometric maximum"))?;
            default_lags(max)
        } else if let Some((a, b)) = t.split_once("..") {
            // Ranges are inclusive; `a..=b` is accepted as a synonym.
            let a: u64 = a.trim().parse().map_err(|_| bad("bad range start"))?;
            let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|_| bad("bad range end"))?;
            (a..=b).collect()
        } else {
            let mut v = t
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad lag list"))?;
            v.sort_unstable();
            v.dedup();
            v
        };
        if lags.is_empty() || lags[0] == 0 {
            return Err(bad("lags must be a nonempty set of positive integers"));
        }
        Ok(LagSpec(lags))
    }

    pub fn max(&self) -> u64 {
        *self.0.last().expect("nonempty")
    }
}

impl Serialize for LagSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let text = self.0.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        s.serialize_str(&text)
    }
}

impl<'de> Deserialize<'de> for LagSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        LagSpec::parse(&text).map_err(serde::de::Error::custom)
    }
}

fn default_replicas() -> usize {
    1
}

/// Lags `1..=100` densely, then geometric up to `min(1000, (steps - 1) / 10)`.
pub fn default_lag_spec(steps: u64) -> LagSpec {
    let cap = 1000.min(steps.saturating_sub(1) / 10).max(1);
    let mut v: Vec<u64> = (1..=cap.min(100)).collect();
    v.extend(geometric_lags(cap, 1.25).into_iter().filter(|&l| l > 100));
    LagSpec(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub groups: Vec<GroupSpec>,
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Defaults to [`default_lag_spec`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lags: Option<LagSpec>,
    #[serde(default)]
    pub init: InitMode,
    /// Unobserved warm-up steps; defaults to `10 max(1/lambda)` for fresh-draw starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// A population expanded from a config, with any warnings raised on the way.
#[derive(Debug, Clone)]
pub struct BuiltPopulation {
    pub population: Population,
    /// Index range of each group in trader order.
    pub groups: Vec<std::ops::Range<usize>>,
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let location = if path.is_empty() || path == "." {
                format!("line {} column {}", inner.line(), inner.column())
            } else {
                format!("`{path}` (line {} column {})", inner.line(), inner.column())
            };
            Error::config(location, inner.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn lags(&self) -> LagSpec {
        self.lags.clone().unwrap_or_else(|| default_lag_spec(self.steps))
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < MIN_STEPS {
            return Err(Error::config("steps", format!("must be at least {MIN_STEPS}, got {}", self.steps)));
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas", "must be at least 1"));
        }
        if self.groups.is_empty() {
            return Err(Error::config("groups", "at least one group is required"));
        }
        let max = self.lags().max();
        if max as u128 * 10 >= self.steps as u128 {
            return Err(Error::config(
                "lags",
                format!("largest lag {max} needs more than {} steps", 10 * max),
            ));
        }
        self.build_population().map(|_| ())
    }

    pub fn build_population(&self) -> Result<BuiltPopulation> {
        let mut members = Vec::new();
        let mut ranges = Vec::new();
        let mut mass = 0.0;
        for (g, spec) in self.groups.iter().enumerate() {
            let at = |field: &str| format!("groups[{g}].{field}");
            if spec.count == 0 {
                return Err(Error::config(at("count"), "must be at least 1"));
            }
            let wrap = |field: &str, e: Error| Error::config(at(field), e.to_string());
            let lambdas = match &spec.intensity {
                IntensityRule::Equal { mass } => {
                    if !(*mass >= 0.0 && mass.is_finite()) {
                        return Err(Error::config(at("intensity.mass"), "must be a finite nonnegative number"));
                    }
                    vec![mass / spec.count as f64; spec.count]
                }
                IntensityRule::Explicit { values } => {
                    if values.len() != spec.count {
                        return Err(Error::config(
                            at("intensity.values"),
                            format!("has {} entries for a group of {}", values.len(), spec.count),
                        ));
                    }
                    if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                        return Err(Error::config(at("intensity.values"), format!("invalid intensity {v}")));
                    }
                    values.clone()
                }
                IntensityRule::Pareto { beta, lambda_cut, mass } => {
                    allocate_intensities(spec.count, *beta, *lambda_cut, *mass).map_err(|e| wrap("intensity", e))?
                }
            };
            let laws: Vec<MetaorderLaw> = match &spec.law {
                GroupLaw::Single(l) => {
                    let law = MetaorderLaw::try_from(l.clone()).map_err(|e| wrap("law", e))?;
                    vec![law; spec.count]
                }
                GroupLaw::Allocated(AllocatedLaw::AllocatedExponential { theta }) => allocate_decay_lengths(spec.count, *theta)
                    .map_err(|e| wrap("law.theta", e))?
                    .into_iter()
                    .map(MetaorderLaw::exponential)
                    .collect::<Result<_>>()
                    .map_err(|e| wrap("law", e))?,
            };
            if matches!(self.init, InitMode::Stationary) {
                if let Err(e) = laws[0].mean_length() {
                    return Err(wrap("law", e));
                }
            }
            mass += lambdas.iter().sum::<f64>();
            let start = members.len();
            members.extend(lambdas.into_iter().zip(laws));
            ranges.push(start..members.len());
        }
        let mut warnings = Vec::new();
        if (mass - 1.0).abs() > 1e-9 {
            warnings.push(format!("group intensities sum to {mass}; rescaled to 1"));
        }
        let population = Population::new(members).map_err(|e| Error::config("groups", e.to_string()))?;
        Ok(BuiltPopulation {
            population,
            groups: ranges,
            warnings,
        })
    }

    pub fn sim_options(&self, population: &Population) -> SimOptions {
        let mut o = SimOptions::default_for(population, self.init);
        if let Some(b) = self.burn_in {
            o.burn_in = b;
        }
        o
    }
}
