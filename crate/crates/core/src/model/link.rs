use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf;

use crate::error::Error;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Symmetric distribution function `F` of the latent noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
    Probit,
}

impl Link {
    pub fn cdf(self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Probit => 0.5 * erf::erfc(-eta / SQRT_2),
        }
    }

    pub fn pdf(self, eta: f64) -> f64 {
        match self {
            Link::Logit => self.cdf(eta) * self.cdf(-eta),
            Link::Probit => {
                if eta.is_finite() {
                    (-0.5 * eta * eta).exp() * INV_SQRT_2PI
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative of the density.
    pub fn pdf_deriv(self, eta: f64) -> f64 {
        if !eta.is_finite() {
            return 0.0;
        }
        match self {
            Link::Logit => self.pdf(eta) * (self.cdf(-eta) - self.cdf(eta)),
            Link::Probit => -eta * self.pdf(eta),
        }
    }

    pub fn inverse_cdf(self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        match self {
            Link::Logit => (p / (1.0 - p)).ln(),
            Link::Probit => {
                let x = -SQRT_2 * erf::erfc_inv(2.0 * p);
                // one Newton step tightens erfc_inv to full precision
                let density = self.pdf(x);
                if density > 0.0 {
                    x - (self.cdf(x) - p) / density
                } else {
                    x
                }
            }
        }
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logit" | "logistic" => Ok(Link::Logit),
            "probit" | "normal" => Ok(Link::Probit),
            other => Err(Error::InvalidOptions(format!("unknown link `{other}`"))),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Logit => "logit",
            Link::Probit => "probit",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINKS: [Link; 2] = [Link::Logit, Link::Probit];

    #[test]
    fn symmetric_at_zero() {
        for link in LINKS {
            assert_eq!(link.cdf(0.0), 0.5);
            for eta in [-3.0, -0.4, 0.7, 12.0] {
                assert!((link.cdf(eta) + link.cdf(-eta) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn inverse_roundtrip() {
        for link in LINKS {
            for i in 1..=999 {
                let p = i as f64 / 1000.0;
                let back = link.cdf(link.inverse_cdf(p));
                assert!((back - p).abs() < 1e-12, "{link} p={p} back={back}");
            }
        }
    }

    #[test]
    fn strictly_increasing() {
        for link in LINKS {
            let mut prev = link.cdf(-8.0);
            for i in 1..=160 {
                let v = link.cdf(-8.0 + 0.1 * i as f64);
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let h = 1e-6;
        for link in LINKS {
            for eta in [-4.0, -1.3, 0.0, 0.2, 2.5] {
                let fd = (link.cdf(eta + h) - link.cdf(eta - h)) / (2.0 * h);
                assert!((fd - link.pdf(eta)).abs() < 1e-9);
                let fd2 = (link.pdf(eta + h) - link.pdf(eta - h)) / (2.0 * h);
                assert!((fd2 - link.pdf_deriv(eta)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn infinite_arguments() {
        for link in LINKS {
            assert_eq!(link.cdf(f64::INFINITY), 1.0);
            assert_eq!(link.cdf(f64::NEG_INFINITY), 0.0);
            assert_eq!(link.pdf(f64::INFINITY), 0.0);
            assert_eq!(link.pdf_deriv(f64::NEG_INFINITY), 0.0);
        }
    }

    #[test]
    fn logistic_values() {
        assert!((Link::Logit.cdf(-1.0) - 0.268_941_421_369_995_1).abs() < 1e-15);
        assert!((Link::Logit.cdf(-0.75) - 0.320_821_300_824_607).abs() < 1e-15);
    }
}
