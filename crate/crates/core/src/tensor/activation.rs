use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error};

/// Inputs to `Exp` are clamped here so a freshly initialised network cannot overflow.
pub const EXP_CLAMP: f64 = 30.0;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivationKind {
    ReLU,
    ELU,
    GELU,
    Mish,
    SiLU,
    Sine,
    Cosine,
    Tanh,
    Sigmoid,
    Linear,
    Exp,
    /// `erfc(-softplus(x))`: a rectifier-sigmoid hybrid with range (1, 2).
    Erfcsoftplus,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 12] = [
        ActivationKind::ReLU,
        ActivationKind::ELU,
        ActivationKind::GELU,
        ActivationKind::Mish,
        ActivationKind::SiLU,
        ActivationKind::Sine,
        ActivationKind::Cosine,
        ActivationKind::Tanh,
        ActivationKind::Sigmoid,
        ActivationKind::Linear,
        ActivationKind::Exp,
        ActivationKind::Erfcsoftplus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::ReLU => "ReLU",
            ActivationKind::ELU => "ELU",
            ActivationKind::GELU => "GELU",
            ActivationKind::Mish => "Mish",
            ActivationKind::SiLU => "SiLU",
            ActivationKind::Sine => "Sine",
            ActivationKind::Cosine => "Cosine",
            ActivationKind::Tanh => "Tanh",
            ActivationKind::Sigmoid => "Sigmoid",
            ActivationKind::Linear => "Linear",
            ActivationKind::Exp => "Exp",
            ActivationKind::Erfcsoftplus => "Erfcsoftplus",
        }
    }

    pub fn forward(self, x: f64) -> f64 {
        match self {
            ActivationKind::ReLU => x.max(0.0),
            ActivationKind::ELU => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            ActivationKind::GELU => x * std_normal_cdf(x),
            ActivationKind::Mish => x * softplus(x).tanh(),
            ActivationKind::SiLU => x * sigmoid(x),
            ActivationKind::Sine => x.sin(),
            ActivationKind::Cosine => x.cos(),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Linear => x,
            ActivationKind::Exp => x.min(EXP_CLAMP).exp(),
            ActivationKind::Erfcsoftplus => libm::erfc(-softplus(x)),
        }
    }

    /// Exact first derivative at `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::ELU => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            ActivationKind::GELU => std_normal_cdf(x) + x * std_normal_pdf(x),
            ActivationKind::Mish => {
                let t = softplus(x).tanh();
                t + x * (1.0 - t * t) * sigmoid(x)
            }
            ActivationKind::SiLU => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            ActivationKind::Sine => x.cos(),
            ActivationKind::Cosine => -x.sin(),
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Linear => 1.0,
            ActivationKind::Exp => {
                if x < EXP_CLAMP {
                    x.exp()
                } else {
                    0.0
                }
            }
            ActivationKind::Erfcsoftplus => {
                let sp = softplus(x);
                FRAC_2_SQRT_PI * (-sp * sp).exp() * sigmoid(x)
            }
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActivationKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| config_err!("unknown activation `{s}`"))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
