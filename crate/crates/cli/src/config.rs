//! Experiment configuration: the JSON schema accepted by `run --config` and
//! assembled from flags by every other subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use hypocoerce::constants::{ModelRecord, ModelSpec};
use hypocoerce::lattice::StencilEntry;
use hypocoerce::semigroup::McConfig;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::CliError;

/// A model given inline or as a path to a JSON model file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelSource {
    File(PathBuf),
    Inline(ModelRecord),
}

impl<'de> Deserialize<'de> for ModelSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(path) => Ok(ModelSource::File(path.into())),
            other => serde_json::from_value(other).map(ModelSource::Inline).map_err(D::Error::custom),
        }
    }
}

impl ModelSource {
    /// The inline record, reading the file if needed.
    pub fn record(&self) -> Result<ModelRecord, CliError> {
        match self {
            ModelSource::Inline(r) => Ok(r.clone()),
            ModelSource::File(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::Schema(format!("model file {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("model file {}: {e}", path.display())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    pub experiment: Experiment,
    #[serde(default)]
    pub mc: McConfig,
    /// Required by the lattice experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSection>,
    /// Directory for the manifest and CSV tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_observable() -> String {
    "x1".into()
}

fn default_site_observable() -> String {
    "tanh(x1)".into()
}

fn default_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}

fn default_one() -> f64 {
    1.0
}

fn default_half() -> f64 {
    0.5
}

fn default_probes() -> usize {
    2
}

fn default_max_n() -> i64 {
    8
}

fn default_burn() -> f64 {
    5.0
}

fn default_window() -> f64 {
    20.0
}

fn default_trajectory_paths() -> usize {
    10
}

fn default_radii() -> Vec<i64> {
    (0..=5).collect()
}

fn default_ergodicity_grid() -> Vec<f64> {
    (1..=8).map(|i| 0.25 * i as f64).collect()
}

/// Start points default to the origin and are filled in by [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Constants {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<f64>,
        #[serde(default)]
        optimal: bool,
    },
    Simulate {
        #[serde(default)]
        x: Option<Vec<f64>>,
        #[serde(default = "default_one")]
        t: f64,
        /// CSV file for the first `trajectory_paths` trajectories.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        save_trajectories: Option<PathBuf>,
        #[serde(default = "default_trajectory_paths")]
        trajectory_paths: usize,
    },
    Grad {
        #[serde(default = "default_observable")]
        observable: String,
        #[serde(default)]
        x: Option<Vec<f64>>,
        #[serde(default = "default_grid")]
        t: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
    },
    Lq {
        #[serde(default = "default_observable")]
        observable: String,
        #[serde(default)]
        x: Option<Vec<f64>>,
        #[serde(default = "default_grid")]
        t: Vec<f64>,
        q: f64,
    },
    Poincare {
        #[serde(default = "default_observable")]
        observable: String,
        #[serde(default)]
        x: Option<Vec<f64>>,
        #[serde(default = "default_grid")]
        t: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
    },
    Lyapunov {
        #[serde(default)]
        x: Option<Vec<f64>>,
        #[serde(default = "default_ergodicity_grid")]
        t: Vec<f64>,
    },
    Expmoment {
        #[serde(default = "default_observable")]
        observable: String,
        /// Defaults to the δ with `δ²‖Γf‖∞/κ = 1/4`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default = "default_burn")]
        t_burn: f64,
        #[serde(default = "default_window")]
        t_sample: f64,
        #[serde(default = "default_half")]
        thinning: f64,
    },
    Invariant {
        #[serde(default = "default_observable")]
        observable: String,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default = "default_burn")]
        t_burn: f64,
        #[serde(default = "default_window")]
        t_sample: f64,
        #[serde(default = "default_half")]
        thinning: f64,
    },
    LatticeConstants {},
    LatticeSpeed {
        #[serde(default = "default_site_observable")]
        observable: String,
        #[serde(default = "default_half")]
        t: f64,
        #[serde(default = "default_probes")]
        probes: usize,
        #[serde(default = "default_one")]
        probe_scale: f64,
        #[serde(default = "default_max_n")]
        max_n: i64,
    },
    LatticeCauchy {
        #[serde(default = "default_site_observable")]
        observable: String,
        #[serde(default = "default_one")]
        t: f64,
        #[serde(default = "default_probes")]
        probes: usize,
        #[serde(default = "default_one")]
        probe_scale: f64,
        /// Radii of the nested volumes `Λ₁`, compared against `Λ` of the lattice section.
        #[serde(default = "default_radii")]
        lambda_radii: Vec<i64>,
    },
    LatticeErgodicity {
        #[serde(default = "default_site_observable")]
        observable: String,
        #[serde(default = "default_ergodicity_grid")]
        t: Vec<f64>,
        /// Value of every site in `ω`; defaults to the origin.
        #[serde(default)]
        omega: Option<Vec<f64>>,
        /// Added to the sites within `perturb_radius` of the origin to form `ω̃`.
        #[serde(default)]
        perturbation: Option<Vec<f64>>,
        #[serde(default = "default_perturb_radius")]
        perturb_radius: i64,
        #[serde(default)]
        step_halving: bool,
    },
}

fn default_perturb_radius() -> i64 {
    1
}

impl Experiment {
    pub fn is_lattice(&self) -> bool {
        matches!(
            self,
            Experiment::LatticeConstants {}
                | Experiment::LatticeSpeed { .. }
                | Experiment::LatticeCauchy { .. }
                | Experiment::LatticeErgodicity { .. }
        )
    }
}

fn default_d() -> usize {
    1
}

fn default_box() -> i64 {
    10
}

fn default_amplitude() -> f64 {
    0.1
}

/// Box `[−box, box]^d` with `Λ = [−lambda, lambda]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_box", rename = "box")]
    pub box_radius: i64,
    /// Defaults to the whole box.
    #[serde(default)]
    pub lambda: Option<i64>,
    #[serde(default = "default_range")]
    pub range: i64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Defaults to `J_v = 1` for `0 < |v| ≤ range`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stencil: Option<Vec<StencilEntry>>,
    /// Bounded site function `g` of the coupling, default `tanh(x1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_function: Option<String>,
    /// Frozen value of the exterior sites, default the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exterior: Option<Vec<f64>>,
}

fn default_range() -> i64 {
    1
}

impl Default for LatticeSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        if text.trim().is_empty() {
            return Err(CliError::Schema(
                "config is empty: expected an object with `model` and `experiment` (optional `mc`, `lattice`, `output`)".into(),
            ));
        }
        serde_json::from_str(text).map_err(|e| CliError::Schema(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Inlines the model file, fills start points and the lattice section, and
    /// validates the model so the manifest records exactly what ran.
    pub fn resolve(mut self) -> Result<(Self, ModelSpec), CliError> {
        let record = self.model.record()?;
        let spec = ModelSpec::from_record(&record).map_err(|e| CliError::Schema(format!("model: {e}")))?;
        self.model = ModelSource::Inline(record);
        let dim = spec.geometry.ambient_dim();
        let origin = || Some(vec![0.0; dim]);
        match &mut self.experiment {
            Experiment::Simulate { x, .. }
            | Experiment::Grad { x, .. }
            | Experiment::Lq { x, .. }
            | Experiment::Poincare { x, .. }
            | Experiment::Lyapunov { x, .. } => {
                x.get_or_insert_with(|| vec![0.0; dim]);
            }
            Experiment::Expmoment { x0, .. } | Experiment::Invariant { x0, .. } => {
                x0.get_or_insert_with(|| vec![0.0; dim]);
            }
            Experiment::LatticeErgodicity { omega, perturbation, .. } => {
                if omega.is_none() {
                    *omega = origin();
                }
                perturbation.get_or_insert_with(|| vec![0.5; dim]);
            }
            _ => {}
        }
        if self.experiment.is_lattice() {
            let section = self.lattice.get_or_insert_with(LatticeSection::default);
            section.lambda.get_or_insert(section.box_radius);
        } else if self.lattice.is_some() {
            return Err(CliError::Schema("`lattice` is only valid for lattice experiments".into()));
        }
        Ok((self, spec))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"model":{"geometry":"abelian","beta":1},"experiment":{"kind":"grad"}}"#).unwrap();
        assert_eq!(c.mc, McConfig::default());
        match &c.experiment {
            Experiment::Grad { observable, t, x, kappa } => {
                assert_eq!(observable, "x1");
                assert_eq!(t, &default_grid());
                assert!(x.is_none() && kappa.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
        let (resolved, spec) = c.resolve().unwrap();
        assert_eq!(spec.geometry.ambient_dim(), 1);
        assert!(matches!(resolved.experiment, Experiment::Grad { x: Some(ref x), .. } if x == &[0.0]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"model":{"geometry":"abelian","beta":1},"experiment":{"kind":"grad"},"extra":1}"#,
            r#"{"model":{"geometry":"abelian","beta":1},"experiment":{"kind":"grad","bogus":1}}"#,
            r#"{"model":{"geometry":"abelian","beta":1,"bogus":1},"experiment":{"kind":"grad"}}"#,
            r#"{"model":{"geometry":"abelian","beta":1},"experiment":{"kind":"grad"},"mc":{"pathz":3}}"#,
            r#"{"model":{"geometry":"abelian","beta":1},"experiment":{"kind":"nope"}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(CliError::Schema(_))), "{text}");
        }
    }

    #[test]
    fn empty_config_is_a_schema_error() {
        let err = ExperimentConfig::from_json("  \n").unwrap_err();
        assert!(matches!(&err, CliError::Schema(m) if m.contains("model")));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::from_json(
            r#"{"model":{"geometry":"heisenberg","beta":3},"experiment":{"kind":"lattice_speed"},"mc":{"paths":10}}"#,
        )
        .unwrap();
        let (resolved, _) = c.resolve().unwrap();
        assert_eq!(resolved.lattice.as_ref().unwrap().lambda, Some(10));
        let again = ExperimentConfig::from_json(&resolved.to_json()).unwrap();
        assert_eq!(again, resolved);
    }

    #[test]
    fn lattice_section_outside_lattice_experiments_is_rejected() {
        let c =
            ExperimentConfig::from_json(r#"{"model":{"geometry":"abelian","beta":1},"experiment":{"kind":"grad"},"lattice":{}}"#).unwrap();
        assert!(matches!(c.resolve(), Err(CliError::Schema(_))));
    }
}
