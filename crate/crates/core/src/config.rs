//! JSON run configuration.
//!
//! Every key is optional; missing keys take the documented defaults and
//! unknown keys are rejected. Semantic errors name the offending key.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{DiagnosticsContext, FloorPolicy};
use crate::initial::InitialCondition;
use crate::integrator::{RunOptions, SchemeConfig, Stepper, Variant};
use crate::model::{LogisticSpec, ModelParams, PotentialSpec, SystemState, TamingSpec};
use crate::noise::{BrownianPath, NoiseSpec};
use crate::spectral::{DealiasRule, TorusGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Key path the error refers to.
    pub fn key(&self) -> &str {
        match self {
            ConfigError::Parse { path, .. } => path,
            ConfigError::Invalid { key, .. } => key,
        }
    }
}

/// Points per axis: one number for a cubic grid or three.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Cubic(usize),
    Axes([usize; 3]),
}

impl GridSpec {
    pub fn dims(&self) -> [usize; 3] {
        match *self {
            GridSpec::Cubic(n) => [n; 3],
            GridSpec::Axes(d) => d,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    Exact,
    #[default]
    Mollified,
    Truncated,
}

/// Complete simulation configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridSpec,
    #[serde(rename = "L")]
    pub box_length: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
    pub a: f64,
    #[serde(rename = "N")]
    pub tame_threshold: u32,
    pub variant: VariantKind,
    pub eps: f64,
    pub k: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub annulus: bool,
    pub phi_amplitude: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub dealias: DealiasRule,
    pub clip_negative: bool,
    pub initial: InitialCondition,
    pub diag_every: u64,
    pub snapshot_every: u64,
    pub floor: f64,
    pub sobolev_index: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            grid: GridSpec::Cubic(32),
            box_length: 2.0 * PI,
            t_final: 0.5,
            dt: 1e-3,
            a: 0.25,
            tame_threshold: 1,
            variant: VariantKind::Mollified,
            eps: 0.1,
            k: 8.0,
            radius: 100.0,
            annulus: false,
            phi_amplitude: 1.0,
            noise: NoiseSpec::default(),
            seed: 0,
            dealias: DealiasRule::TwoThirds,
            clip_negative: false,
            initial: InitialCondition::Smooth,
            diag_every: 1,
            snapshot_every: 0,
            floor: 1e-12,
            sobolev_index: 1.0,
        }
    }
}

/// Parses and validates a JSON configuration document.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Parse {
            path: if path == "." { "(root)".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl SimConfig {
    /// Pretty JSON with every key resolved.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (axis, &n) in self.grid.dims().iter().enumerate() {
            if n < 4 || n % 2 != 0 {
                return Err(ConfigError::invalid(
                    "grid",
                    format!("points per axis must be even and at least 4, got {n} on axis {axis}"),
                ));
            }
        }
        positive("L", self.box_length)?;
        positive("T", self.t_final)?;
        positive("dt", self.dt)?;
        if self.dt > self.t_final {
            return Err(ConfigError::invalid("dt", format!("dt = {} exceeds T = {}", self.dt, self.t_final)));
        }
        let ratio = self.t_final / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(ConfigError::invalid("T", format!("T = {} is not a multiple of dt = {}", self.t_final, self.dt)));
        }
        if !(self.a > 0.0 && self.a < 0.5) {
            return Err(ConfigError::invalid(
                "a",
                format!("must lie in the open interval (0, 1/2), got {}", self.a),
            ));
        }
        if self.tame_threshold == 0 {
            return Err(ConfigError::invalid("N", "tame threshold must be a positive integer"));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(ConfigError::invalid("eps", format!("must be nonnegative, got {}", self.eps)));
        }
        positive("k", self.k)?;
        positive("R", self.radius)?;
        if !self.phi_amplitude.is_finite() {
            return Err(ConfigError::invalid("phi_amplitude", "must be finite"));
        }
        self.noise.validate().map_err(|e| {
            let key = match &e {
                crate::noise::NoiseError::InvalidSpec(m) if m.contains("M ") => "noise.modes",
                crate::noise::NoiseError::InvalidSpec(m) if m.contains("sigma0") => "noise.sigma0",
                crate::noise::NoiseError::InvalidSpec(m) if m.contains("decay") => "noise.decay",
                _ => "noise",
            };
            ConfigError::invalid(key, e.to_string())
        })?;
        FloorPolicy::new(self.floor).map_err(|e| ConfigError::invalid("floor", e.to_string()))?;
        if !self.sobolev_index.is_finite() {
            return Err(ConfigError::invalid("sobolev_index", "must be finite"));
        }
        if let InitialCondition::Broadband { velocity, .. } = self.initial {
            if !(velocity.is_finite() && velocity >= 0.0) {
                return Err(ConfigError::invalid("initial.velocity", "must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        match self.variant {
            VariantKind::Exact => Variant::Exact,
            VariantKind::Mollified => Variant::Mollified { eps: self.eps },
            VariantKind::Truncated => Variant::Truncated {
                eps: self.eps,
                k: self.k,
                radius: self.radius,
                annulus: self.annulus,
            },
        }
    }

    pub fn scheme(&self) -> SchemeConfig {
        SchemeConfig {
            dt: self.dt,
            t_final: self.t_final,
            variant: self.variant(),
            clip_negative: self.clip_negative,
        }
    }

    /// Grid, model, stepper, and initial state ready to run.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        self.validate()?;
        let dims = self.grid.dims();
        let grid = TorusGrid::new(dims, [self.box_length; 3])
            .map_err(|e| ConfigError::invalid("grid", e.to_string()))?;
        let params = ModelParams {
            logistic: LogisticSpec::new(self.a).map_err(|e| ConfigError::invalid("a", e.to_string()))?,
            taming: TamingSpec::new(self.tame_threshold)
                .map_err(|e| ConfigError::invalid("N", e.to_string()))?,
            potential: PotentialSpec::sine_x3(grid.clone(), self.phi_amplitude),
            dealias: self.dealias,
        };
        let stepper = Stepper::new(grid.clone(), self.scheme(), params, self.noise)
            .map_err(|e| ConfigError::invalid("variant", e.to_string()))?;
        let initial = self.initial.build(&grid);
        Ok(Experiment {
            config: self.clone(),
            grid,
            stepper,
            initial,
        })
    }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, format!("must be positive, got {v}")))
    }
}

/// A validated configuration with its assembled numerical objects.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: SimConfig,
    pub grid: Arc<TorusGrid>,
    pub stepper: Stepper,
    pub initial: SystemState,
}

impl Experiment {
    pub fn steps(&self) -> u64 {
        self.stepper.scheme().steps()
    }

    pub fn diagnostics_context(&self) -> DiagnosticsContext {
        DiagnosticsContext {
            params: self.stepper.params().clone(),
            eps: self.config.eps_effective(),
            floor: FloorPolicy::new(self.config.floor).expect("validated"),
            noise: Some(self.stepper.noise().clone()),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            output_every: self.config.snapshot_every,
            diag_every: self.config.diag_every,
            diagnostics: Some(self.diagnostics_context()),
        }
    }

    /// Brownian path of `path_id` at this experiment's step size.
    pub fn path(&self, path_id: u64) -> BrownianPath {
        BrownianPath::new(self.config.seed, path_id, self.config.dt, 1).expect("validated dt")
    }
}

impl SimConfig {
    /// Mollifier width actually used by the configured variant.
    pub fn eps_effective(&self) -> f64 {
        self.variant().eps()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseKind;

    #[test]
    fn minimal_config_defaults() {
        let c = parse_config(r#"{"grid": 32, "T": 0.5}"#).unwrap();
        assert_eq!(c.a, 0.25);
        assert_eq!(c.tame_threshold, 1);
        assert_eq!(c.dt, 1e-3);
        assert_eq!(c.noise.kind, NoiseKind::MultiplicativeDiagonal);
        assert_eq!((c.noise.sigma0, c.noise.decay, c.noise.modes), (0.1, 1.0, 8));
        assert_eq!(c.grid.dims(), [32; 3]);
    }

    #[test]
    fn field_specific_errors() {
        let e = parse_config(r#"{"a": 0.7}"#).unwrap_err();
        assert_eq!(e.key(), "a");
        assert!(e.to_string().contains("(0, 1/2)"));
        assert_eq!(parse_config(r#"{"grid": 31}"#).unwrap_err().key(), "grid");
        assert_eq!(parse_config(r#"{"dt": -1}"#).unwrap_err().key(), "dt");
        let e = parse_config(r#"{"noise": {"sigma": 1}}"#).unwrap_err();
        assert!(e.key().starts_with("noise"), "{e}");
        let e = parse_config(r#"{"noise": {"modes": "x"}}"#).unwrap_err();
        assert_eq!(e.key(), "noise.modes");
        assert!(parse_config(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let text = r#"{"grid": [8, 8, 16], "T": 0.1, "variant": "truncated", "k": 5,
            "noise": {"kind": "additive"}, "initial": {"kind": "broadband", "seed": 4}}"#;
        let once = parse_config(text).unwrap();
        let twice = parse_config(&once.to_json()).unwrap();
        assert_eq!(once, twice);
    }
}
