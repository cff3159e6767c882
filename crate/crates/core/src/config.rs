//! JSON experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{HardyError, Result};
use crate::geometry::{LatitudeCircle, Scenario, TiltedGreatCircle};
use crate::solver::{parse_lambda_grid, SolverOptions};
use crate::weights::WeightTriple;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    FlatSlab {
        #[serde(rename = "N", alias = "dim")]
        dim: usize,
        #[serde(rename = "k", alias = "sub_dim")]
        sub_dim: usize,
        beta: f64,
    },
    BallEquator {
        beta: f64,
    },
    LatitudeCircle {
        theta0: f64,
        beta: f64,
    },
    TiltedGreatCircle {
        tilt: f64,
        beta: f64,
    },
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario> {
        match *self {
            ScenarioConfig::FlatSlab { dim, sub_dim, beta } => Scenario::flat_slab(dim, sub_dim, beta),
            ScenarioConfig::BallEquator { beta } => Scenario::ball_equator(beta),
            ScenarioConfig::LatitudeCircle { theta0, beta } => {
                if !(theta0.abs() < std::f64::consts::FRAC_PI_2) {
                    return Err(config_err("scenario.theta0", "must lie in (-pi/2, pi/2)"));
                }
                Scenario::curve_on_sphere(Arc::new(LatitudeCircle { theta0 }), beta)
            }
            ScenarioConfig::TiltedGreatCircle { tilt, beta } => {
                Scenario::curve_on_sphere(Arc::new(TiltedGreatCircle { tilt }), beta)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(default = "one")]
    pub p: String,
    #[serde(default = "one")]
    pub q: String,
    #[serde(default = "delta_sq")]
    pub eta: String,
}

fn one() -> String {
    "1".into()
}

fn delta_sq() -> String {
    "delta^2".into()
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            p: one(),
            q: one(),
            eta: delta_sq(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand used by `hardy run`.
    pub command: Option<String>,
    pub lambda: f64,
    /// `lo:hi:count`.
    pub lambdas: String,
    /// Grid size of single-grid commands.
    pub n: usize,
    /// Coarse and fine grid of the threshold search and the local Hardy
    /// refinement check.
    pub grids: Vec<usize>,
    pub gamma: f64,
    /// Collar radius of the sweeps and the local Hardy check; the scenario
    /// radius when absent.
    pub beta: Option<f64>,
    pub tol: f64,
    pub width: f64,
    pub samples: usize,
    pub eps: Vec<f64>,
    /// `lambda` of the sign sweeps.
    pub sweep_lambda: f64,
    pub ik_tol: f64,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            lambda: 0.0,
            lambdas: "-10:10:21".into(),
            n: 32,
            grids: vec![32, 64],
            gamma: 2.0,
            beta: None,
            tol: 1e-8,
            width: 0.5,
            samples: 10_000,
            eps: vec![0.0, 0.5],
            sweep_lambda: 1.0,
            ik_tol: 1e-10,
            seed: 1,
            output: PathBuf::from("hardy-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_one")]
    pub schema: u32,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn schema_one() -> u32 {
    1
}

fn config_err(field: &str, message: &str) -> HardyError {
    HardyError::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// A configuration parsed into validated objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub weights: WeightTriple,
}

impl Experiment {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.config.run.tol,
            ..SolverOptions::default()
        }
    }

    pub fn lambdas(&self) -> Result<Vec<f64>> {
        parse_lambda_grid(&self.config.run.lambdas)
    }

    pub fn sweep_beta(&self) -> f64 {
        self.config.run.beta.unwrap_or(self.scenario.beta())
    }
}

impl ExperimentConfig {
    /// Parses JSON; syntax and type errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HardyError::Config {
            field: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HardyError::Config {
            field: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(self) -> Result<Experiment> {
        if self.schema != 1 {
            return Err(config_err("schema", "only schema 1 is supported"));
        }
        let r = &self.run;
        let positive = [
            ("run.tol", r.tol),
            ("run.width", r.width),
            ("run.ik_tol", r.ik_tol),
            ("run.gamma", r.gamma),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config_err(field, "must be positive"));
            }
        }
        if let Some(b) = r.beta {
            if !(b > 0.0) {
                return Err(config_err("run.beta", "must be positive"));
            }
        }
        if !r.lambda.is_finite() || !r.sweep_lambda.is_finite() {
            return Err(config_err("run.lambda", "must be finite"));
        }
        if r.grids.len() != 2 || r.grids[0] >= r.grids[1] {
            return Err(config_err("run.grids", "must list a coarse and a finer grid size"));
        }
        if r.samples == 0 {
            return Err(config_err("run.samples", "must be positive"));
        }
        if r.eps.iter().any(|e| !(0.0..1.0).contains(e)) {
            return Err(config_err("run.eps", "entries must lie in [0, 1)"));
        }
        parse_lambda_grid(&r.lambdas)?;
        let scenario = self.scenario.build().map_err(|e| config_err("scenario", &e.to_string()))?;
        let field_err = |field: &str, src: &str| -> Result<crate::expr::Expr> {
            crate::expr::Expr::parse(src).map_err(|e| config_err(field, &e.to_string()))
        };
        let weights = WeightTriple::new(
            field_err("weights.p", &self.weights.p)?,
            field_err("weights.q", &self.weights.q)?,
            field_err("weights.eta", &self.weights.eta)?,
        );
        for (field, e) in [("weights.p", &weights.p), ("weights.q", &weights.q), ("weights.eta", &weights.eta)] {
            if e.max_coordinate() > scenario.dim() {
                return Err(config_err(field, &format!("uses a coordinate beyond x{}", scenario.dim())));
            }
        }
        Ok(Experiment {
            config: self,
            scenario,
            weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::from_json(r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}}"#).unwrap();
        let e = c.validate().unwrap();
        assert_eq!(e.config.run.n, 32);
        assert_eq!(e.weights, WeightTriple::standard());
        assert_eq!(e.lambdas().unwrap().len(), 21);
    }

    #[test]
    fn flat_slab_accepts_both_dimension_spellings() {
        let a = ExperimentConfig::from_json(r#"{"scenario": {"kind": "flat_slab", "N": 4, "k": 2, "beta": 0.1}}"#).unwrap();
        let b = ExperimentConfig::from_json(r#"{"scenario": {"kind": "flat_slab", "dim": 4, "sub_dim": 2, "beta": 0.1}}"#)
            .unwrap();
        assert_eq!(a, b);
        let s = a.validate().unwrap().scenario;
        assert_eq!((s.dim(), s.sub_dim()), (4, 2));
    }

    #[test]
    fn syntax_errors_report_line() {
        let err = ExperimentConfig::from_json("{\n\"scenario\": {\"kind\": \"ball_equator\",\n \"beta\": }}").unwrap_err();
        match err {
            HardyError::Config { field, .. } => assert!(field.starts_with("line 3"), "{field}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn field_errors_name_the_field() {
        let cases = [
            (r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "run": {"tol": -1}}"#, "run.tol"),
            (r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "weights": {"q": "1 +"}}"#, "weights.q"),
            (r#"{"scenario": {"kind": "flat_slab", "N": 3, "k": 2, "beta": 0.1}}"#, "scenario"),
            (r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "weights": {"p": "1 + x4"}}"#, "weights.p"),
            (r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "run": {"lambdas": "1:2"}}"#, "lambdas"),
        ];
        for (text, want) in cases {
            match ExperimentConfig::from_json(text).unwrap().validate() {
                Err(HardyError::Config { field, .. }) => assert_eq!(field, want),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(ExperimentConfig::from_json(r#"{"scenario": {"kind": "ball_equator", "beta": 0.05}, "extra": 1}"#).is_err());
    }
}
