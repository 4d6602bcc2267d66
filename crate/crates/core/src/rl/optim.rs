//! Learning-rate schedules for the ascent ξ ← ξ + α Ψ̄.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Schedule {
    Constant {
        rate: f64,
    },
    /// Adaptive moments on the descent direction −Ψ̄.
    Adam {
        rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    /// α(i) = A / (i^ν + B) at episode i = 1, 2, ...
    RobbinsMonro {
        a: f64,
        b: f64,
        nu: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for Schedule {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl Schedule {
    pub fn adam(rate: f64) -> Self {
        Self::Adam {
            rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match *self {
            Self::Constant { rate } if !(rate > 0.0 && rate.is_finite()) => {
                bad(format!("constant rate must be positive, got {rate}"))
            }
            Self::Adam {
                rate,
                beta1,
                beta2,
                eps,
            } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    bad(format!("adam rate must be positive, got {rate}"))
                } else if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)) {
                    bad(format!(
                        "adam betas must lie in [0, 1), got {beta1}, {beta2}"
                    ))
                } else if !(eps > 0.0) {
                    bad(format!("adam eps must be positive, got {eps}"))
                } else {
                    Ok(())
                }
            }
            Self::RobbinsMonro { a, b, nu } => {
                if !(a > 0.0 && b > 0.0) {
                    bad(format!(
                        "robbins-monro needs A > 0 and B > 0, got A = {a}, B = {b}"
                    ))
                } else if !(nu > 0.0 && nu <= 1.0) {
                    bad(format!("robbins-monro needs 0 < ν ≤ 1, got {nu}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Step size at episode `i` (1-based); the base rate for adam.
    pub fn rate(&self, i: usize) -> f64 {
        match *self {
            Self::Constant { rate } | Self::Adam { rate, .. } => rate,
            Self::RobbinsMonro { a, b, nu } => a / ((i as f64).powf(nu) + b),
        }
    }

    /// Parses `constant:R`, `adam:R` or `robbins-monro:A,B,NU`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidConfig(format!("schedule '{s}': {e}")))?
        };
        let sched = match (kind, nums.as_slice()) {
            ("constant", [r]) => Self::Constant { rate: *r },
            ("adam", []) => Self::default(),
            ("adam", [r]) => Self::adam(*r),
            ("robbins-monro" | "rm", [a, b, nu]) => Self::RobbinsMonro {
                a: *a,
                b: *b,
                nu: *nu,
            },
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown schedule '{s}' (expected constant:R, adam[:R] or robbins-monro:A,B,NU)"
                )))
            }
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// Applies a schedule to a parameter vector.
#[derive(Clone, Debug)]
pub struct Optimizer {
    schedule: Schedule,
    m: Vec<f64>,
    v: Vec<f64>,
    updates: i32,
}

impl Optimizer {
    pub fn new(schedule: Schedule, len: usize) -> Self {
        let moments = matches!(schedule, Schedule::Adam { .. });
        Self {
            schedule,
            m: if moments { vec![0.0; len] } else { Vec::new() },
            v: if moments { vec![0.0; len] } else { Vec::new() },
            updates: 0,
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// ξ ← ξ + α(episode) ψ, or the adam move along ψ.
    pub fn apply(&mut self, xi: &mut [f64], psi: &[f64], episode: usize) {
        self.updates = self.updates.saturating_add(1);
        match self.schedule {
            Schedule::Adam {
                rate,
                beta1,
                beta2,
                eps,
            } => {
                let c1 = 1.0 - beta1.powi(self.updates);
                let c2 = 1.0 - beta2.powi(self.updates);
                for (((x, g), m), v) in xi.iter_mut().zip(psi).zip(&mut self.m).zip(&mut self.v) {
                    // descent on −ψ is ascent on ψ
                    let g = -g;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *x -= rate * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            _ => {
                let a = self.schedule.rate(episode);
                for (x, g) in xi.iter_mut().zip(psi) {
                    *x += a * g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robbins_monro_rate_and_validation() {
        let s = Schedule::RobbinsMonro {
            a: 10.0,
            b: 10.0,
            nu: 1.0,
        };
        assert_eq!(s.rate(1), 10.0 / 11.0);
        assert_eq!(s.rate(90), 0.1);
        assert!(s.validate().is_ok());
        assert!(Schedule::RobbinsMonro {
            a: 1.0,
            b: 1.0,
            nu: 1.5
        }
        .validate()
        .is_err());
        assert!(Schedule::RobbinsMonro {
            a: 0.0,
            b: 1.0,
            nu: 1.0
        }
        .validate()
        .is_err());
        assert!(Schedule::RobbinsMonro {
            a: 1.0,
            b: -1.0,
            nu: 0.5
        }
        .validate()
        .is_err());
    }

    #[test]
    fn parse_forms() {
        assert_eq!(
            Schedule::parse("constant:0.5").unwrap(),
            Schedule::Constant { rate: 0.5 }
        );
        assert_eq!(Schedule::parse("adam").unwrap(), Schedule::adam(1e-3));
        assert_eq!(
            Schedule::parse("robbins-monro:10,10,1").unwrap(),
            Schedule::RobbinsMonro {
                a: 10.0,
                b: 10.0,
                nu: 1.0
            }
        );
        assert!(Schedule::parse("robbins-monro:1,1,2").is_err());
        assert!(Schedule::parse("sgd:1").is_err());
        assert!(Schedule::parse("constant:x").is_err());
    }

    #[test]
    fn plain_step_is_ascent() {
        let mut opt = Optimizer::new(Schedule::Constant { rate: 0.5 }, 2);
        let mut xi = [1.0, 1.0];
        opt.apply(&mut xi, &[2.0, -4.0], 1);
        assert_eq!(xi, [2.0, -1.0]);
    }

    #[test]
    fn first_adam_step_moves_by_the_rate() {
        let mut opt = Optimizer::new(Schedule::adam(0.01), 2);
        let mut xi = [0.0, 0.0];
        opt.apply(&mut xi, &[3.0, -0.2], 1);
        assert!((xi[0] - 0.01).abs() < 1e-9 && (xi[1] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn serde_round_trip() {
        let s = Schedule::RobbinsMonro {
            a: 2.0,
            b: 3.0,
            nu: 0.7,
        };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Schedule>(&text).unwrap(), s);
        let adam: Schedule = serde_json::from_str(r#"{"kind":"adam","rate":0.002}"#).unwrap();
        assert_eq!(adam, Schedule::adam(0.002));
    }
}
