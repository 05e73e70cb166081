//! Built-in generator families with hand-derived growth data.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{dot, GeneratorSpec, StochasticDominator};
use crate::error::{Error, Result};

/// Config-level description of a generator. The `y-squared` family is a
/// negative control: its declared growth data is deliberately too small, so
/// the sampled one-sided check must reject it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyConfig {
    /// g = a y + <b, z> + c
    Linear { a: f64, b: Vec<f64>, c: f64 },
    /// g = gamma |z|^2
    PureQuadratic { gamma: f64 },
    /// g = -y^3 + sin y + gamma |z|^2
    CubicDamped { gamma: f64 },
    /// g = amp (sin y + cos z_1) + gamma |z|^2
    Oscillatory { amp: f64, gamma: f64 },
    /// g = (|B_t| /\ 1)(1 + sin y) + gamma |z|^2  (path-dependent f_t)
    StochasticCoefficient { gamma: f64 },
    /// g = y^2 with an undersized declaration (expected to fail the check)
    YSquared,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("must be a positive real, got {gamma}"),
        })
    }
}

pub fn build_family(cfg: &FamilyConfig, dim: usize) -> Result<GeneratorSpec> {
    if dim == 0 || dim > 8 {
        return Err(Error::InvalidParameter {
            name: "dim",
            reason: format!("must be in 1..=8, got {dim}"),
        });
    }
    let spec = match cfg {
        FamilyConfig::Linear { a, b, c } => {
            if b.len() != dim {
                return Err(Error::InvalidParameter {
                    name: "b",
                    reason: format!("slope has length {} but dim = {dim}", b.len()),
                });
            }
            if !(a.is_finite() && c.is_finite() && b.iter().all(|x| x.is_finite())) {
                return Err(Error::InvalidParameter {
                    name: "linear",
                    reason: "coefficients must be finite".into(),
                });
            }
            let (a, c) = (*a, *c);
            let bv = b.clone();
            let b_norm2 = dot(&bv, &bv);
            // sgn(y) g <= |a||y| + |c| + <b,z>; Young: <b,z> <= |b|^2/4 + |z|^2.
            let f_const = c.abs() + b_norm2 / 4.0;
            let a_abs = a.abs();
            GeneratorSpec {
                name: format!("linear(a={a}, |b|^2={b_norm2}, c={c})"),
                eval: Arc::new(move |_, _, y, z| a * y + dot(&bv, z) + c),
                gamma: 1.0,
                h: Arc::new(|_| 1.0),
                phi: StochasticDominator {
                    eval: Arc::new(move |_, _, x| a_abs * x + f_const),
                    square_integrable_declared: true,
                    hinf_declared: true,
                },
                u_proc: Arc::new(move |_, _| a_abs),
                f_proc: Arc::new(move |_, _| f_const),
                f_int_bound: f_const,
                u_int_bound: a_abs,
                horizon: 1.0,
                continuity_declared: true,
            }
        }
        FamilyConfig::PureQuadratic { gamma } => {
            check_gamma(*gamma)?;
            let gamma = *gamma;
            GeneratorSpec {
                name: format!("pure-quadratic(gamma={gamma})"),
                eval: Arc::new(move |_, _, _, z| gamma * dot(z, z)),
                gamma,
                h: Arc::new(move |_| gamma),
                phi: StochasticDominator::zero(),
                u_proc: Arc::new(|_, _| 0.0),
                f_proc: Arc::new(|_, _| 0.0),
                f_int_bound: 0.0,
                u_int_bound: 0.0,
                horizon: f64::INFINITY,
                continuity_declared: true,
            }
        }
        FamilyConfig::CubicDamped { gamma } => {
            check_gamma(*gamma)?;
            let gamma = *gamma;
            // sgn(y) g = -|y|^3 + sgn(y) sin y + gamma |z|^2 <= |y| + gamma |z|^2,
            // since -|y|^3 <= 0 and sgn(y) sin y <= min(|y|, 1).
            GeneratorSpec {
                name: format!("cubic-damped(gamma={gamma})"),
                eval: Arc::new(move |_, _, y, z| -y * y * y + y.sin() + gamma * dot(z, z)),
                gamma,
                h: Arc::new(move |_| gamma),
                phi: StochasticDominator {
                    eval: Arc::new(|_, _, x: f64| x * x * x + x.min(1.0)),
                    square_integrable_declared: true,
                    hinf_declared: true,
                },
                u_proc: Arc::new(|_, _| 1.0),
                f_proc: Arc::new(|_, _| 0.0),
                f_int_bound: 0.0,
                u_int_bound: 1.0,
                horizon: 1.0,
                continuity_declared: true,
            }
        }
        FamilyConfig::Oscillatory { amp, gamma } => {
            check_gamma(*gamma)?;
            if !(amp.is_finite() && *amp >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "amp",
                    reason: format!("must be finite nonnegative, got {amp}"),
                });
            }
            let (amp, gamma) = (*amp, *gamma);
            GeneratorSpec {
                name: format!("oscillatory(amp={amp}, gamma={gamma})"),
                eval: Arc::new(move |_, _, y: f64, z: &[f64]| {
                    amp * (y.sin() + z[0].cos()) + gamma * dot(z, z)
                }),
                gamma,
                h: Arc::new(move |_| gamma),
                phi: StochasticDominator {
                    eval: Arc::new(move |_, _, _| 2.0 * amp),
                    square_integrable_declared: true,
                    hinf_declared: true,
                },
                u_proc: Arc::new(|_, _| 0.0),
                f_proc: Arc::new(move |_, _| 2.0 * amp),
                f_int_bound: 2.0 * amp,
                u_int_bound: 0.0,
                horizon: 1.0,
                continuity_declared: true,
            }
        }
        FamilyConfig::StochasticCoefficient { gamma } => {
            check_gamma(*gamma)?;
            let gamma = *gamma;
            // f_t = (|B_t| /\ 1)(1 + sin y) <= 2(|B_t| /\ 1) <= 2, so the
            // dominator is genuinely path-dependent yet essentially bounded.
            let coeff = |b: &[f64]| super::norm(b).min(1.0);
            GeneratorSpec {
                name: format!("stochastic-coefficient(gamma={gamma})"),
                eval: Arc::new(move |_, b, y: f64, z| {
                    coeff(b) * (1.0 + y.sin()) + gamma * dot(z, z)
                }),
                gamma,
                h: Arc::new(move |_| gamma),
                phi: StochasticDominator {
                    eval: Arc::new(move |_, b, _| 2.0 * coeff(b)),
                    square_integrable_declared: true,
                    hinf_declared: true,
                },
                u_proc: Arc::new(|_, _| 0.0),
                f_proc: Arc::new(move |_, b| 2.0 * coeff(b)),
                f_int_bound: 2.0,
                u_int_bound: 0.0,
                horizon: 1.0,
                continuity_declared: true,
            }
        }
        FamilyConfig::YSquared => GeneratorSpec {
            // Declared data f = u = 1, gamma = 1 cannot dominate y^2 for
            // |y| > ~2.4, so sampling over a wide y-range must reject it.
            name: "y-squared (negative control)".into(),
            eval: Arc::new(|_, _, y, _| y * y),
            gamma: 1.0,
            h: Arc::new(|_| 1.0),
            phi: StochasticDominator {
                eval: Arc::new(|_, _, x| x * x),
                square_integrable_declared: true,
                hinf_declared: false,
            },
            u_proc: Arc::new(|_, _| 1.0),
            f_proc: Arc::new(|_, _| 1.0),
            f_int_bound: 1.0,
            u_int_bound: 1.0,
            horizon: 1.0,
            continuity_declared: true,
        },
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_evaluates() {
        let spec = build_family(
            &FamilyConfig::Linear {
                a: 2.0,
                b: vec![1.0, -1.0],
                c: 0.5,
            },
            2,
        )
        .unwrap();
        let v = spec.g(0.3, &[0.0, 0.0], 1.5, &[2.0, 3.0]);
        assert!((v - (3.0 + 2.0 - 3.0 + 0.5)).abs() < 1e-12);
        assert!((spec.f_int_bound - (0.5 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(build_family(
            &FamilyConfig::Linear { a: 0.0, b: vec![1.0], c: 0.0 },
            3
        )
        .is_err());
        assert!(build_family(&FamilyConfig::PureQuadratic { gamma: 0.5 }, 9).is_err());
        assert!(build_family(&FamilyConfig::PureQuadratic { gamma: -1.0 }, 1).is_err());
    }

    #[test]
    fn stochastic_coefficient_reads_path() {
        let spec =
            build_family(&FamilyConfig::StochasticCoefficient { gamma: 0.5 }, 1).unwrap();
        assert_eq!(spec.g(0.1, &[0.0], 0.0, &[0.0]), 0.0);
        let v = spec.g(0.1, &[0.5], 0.0, &[0.0]);
        assert!((v - 0.5).abs() < 1e-12);
        // Coefficient saturates at 1.
        let v = spec.g(0.1, &[7.0], 0.0, &[0.0]);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_round_trips_kebab_case() {
        let cfg = FamilyConfig::CubicDamped { gamma: 0.5 };
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"cubic-damped\""));
        let back: FamilyConfig = serde_json::from_str(&s).unwrap();
        matches!(back, FamilyConfig::CubicDamped { .. })
            .then_some(())
            .unwrap();
        // Unknown fields rejected.
        let bad = r#"{"family":"pure-quadratic","gamma":1.0,"extra":2}"#;
        assert!(serde_json::from_str::<FamilyConfig>(bad).is_err());
    }
}
