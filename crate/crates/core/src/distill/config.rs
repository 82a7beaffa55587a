use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Response,
    Feature,
    Relational,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Response, Method::Feature, Method::Relational];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Response => "response",
            Method::Feature => "feature",
            Method::Relational => "relational",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method `{s}` (response|feature|relational)")))
    }
}

/// Hyperparameters of one training run. Without a teacher only the
/// optimizer, batching and stopping fields apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub method: Method,
    pub temperature: f64,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Teacher layer matched in feature distillation; the teacher config's
    /// feature layer when absent.
    pub hint_layer: Option<String>,
    /// Student layer matched in feature distillation; the student config's
    /// feature layer when absent.
    pub guide_layer: Option<String>,
    /// Multiply the response term by `T^2`.
    pub temperature_squared: bool,
    /// Put `alpha` on the hard-label term instead of the distillation term.
    pub invert_alpha: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            method: Method::Response,
            temperature: 5.0,
            alpha: 0.2,
            lr: 0.001,
            batch_size: 32,
            max_epochs: 50,
            patience: 3,
            seed: 0,
            hint_layer: None,
            guide_layer: None,
            temperature_squared: true,
            invert_alpha: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigGeneral(m));
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0,1], got {}", self.alpha));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        Ok(())
    }

    /// `(distillation weight, hard-label weight)`.
    pub fn weights(&self) -> (f64, f64) {
        if self.invert_alpha {
            (1.0 - self.alpha, self.alpha)
        } else {
            (self.alpha, 1.0 - self.alpha)
        }
    }
}
