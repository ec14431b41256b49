//! Parameter files, JSON or TOML. Qubit parameters may be given either as
//! `delta`/`epsilon` or as `omega`/`theta`; mixing the two is accepted only
//! when they describe the same qubit.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{SystemParams, DEFAULT_N_MAX};

const CONSISTENCY_TOL: f64 = 1e-12;

/// Every field optional so that command-line flags can be layered on top.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamFile {
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub omega: Option<f64>,
    pub theta: Option<f64>,
    pub gamma: Option<f64>,
    pub omega_r: Option<f64>,
    pub g: Option<f64>,
    pub n_max: Option<usize>,
}

impl ParamFile {
    /// JSON when the first non-blank character is `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("json: {e}")))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("toml: {e}")))
        }
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Fields set in `other` win.
    pub fn overlay(self, other: &ParamFile) -> Self {
        Self {
            delta: other.delta.or(self.delta),
            epsilon: other.epsilon.or(self.epsilon),
            omega: other.omega.or(self.omega),
            theta: other.theta.or(self.theta),
            gamma: other.gamma.or(self.gamma),
            omega_r: other.omega_r.or(self.omega_r),
            g: other.g.or(self.g),
            n_max: other.n_max.or(self.n_max),
        }
    }

    /// `gamma` and `g` default to 0, `n_max` to 7; the resonator frequency
    /// and a complete qubit description are required.
    pub fn resolve(&self) -> Result<SystemParams> {
        let direct = match (self.delta, self.epsilon) {
            (Some(d), Some(e)) => Some((d, e)),
            (None, None) => None,
            _ => return Err(Error::Config("delta and epsilon must be given together".into())),
        };
        let polar = match (self.omega, self.theta) {
            (Some(w), Some(t)) => Some((w * t.sin(), w * t.cos())),
            (None, None) => None,
            _ => return Err(Error::Config("omega and theta must be given together".into())),
        };
        let (delta, epsilon) = match (direct, polar) {
            (Some(a), Some(b)) => {
                let scale = a.0.hypot(a.1).max(b.0.hypot(b.1));
                if (a.0 - b.0).abs() > CONSISTENCY_TOL * scale || (a.1 - b.1).abs() > CONSISTENCY_TOL * scale {
                    return Err(Error::Config("delta/epsilon conflict with omega/theta".into()));
                }
                a
            }
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => return Err(Error::Config("need delta/epsilon or omega/theta".into())),
        };
        let omega_r = self.omega_r.ok_or_else(|| Error::Config("omega_r missing".into()))?;
        SystemParams::new(
            delta,
            epsilon,
            self.gamma.unwrap_or(0.0),
            omega_r,
            self.g.unwrap_or(0.0),
            self.n_max.unwrap_or(DEFAULT_N_MAX),
        )
    }
}
