//! Sampling falsifiers for the declared growth assumptions. These cannot
//! prove an assumption; they reject declarations with counterexamples found
//! on a configurable domain.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{dot, sgn, GeneratorSpec};
use crate::error::{Error, Result};

/// Cap on stored counterexamples; the total count is always exact.
const MAX_RECORDED: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    OneSidedGrowth,
    AbsoluteGrowth,
    Continuity,
}

impl Assumption {
    pub fn label(self) -> &'static str {
        match self {
            Assumption::OneSidedGrowth => "one-sided growth",
            Assumption::AbsoluteGrowth => "absolute growth",
            Assumption::Continuity => "continuity",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub t: f64,
    pub b: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplianceReport {
    pub assumption: Assumption,
    pub n_samples: usize,
    pub n_violations: usize,
    /// First counterexamples, capped at [`MAX_RECORDED`].
    pub violations: Vec<Violation>,
}

impl ComplianceReport {
    pub fn passed(&self) -> bool {
        self.n_violations == 0
    }

    fn record(&mut self, v: Violation) {
        self.n_violations += 1;
        if self.violations.len() < MAX_RECORDED {
            self.violations.push(v);
        }
    }
}

/// A sample point of the domain (t, omega, y, z).
pub struct DomainPoint {
    pub t: f64,
    pub b: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
}

pub trait DomainSampler {
    fn dim(&self) -> usize;
    fn sample(&mut self, idx: usize) -> DomainPoint;
}

/// Uniform t, y, z over boxes; B_t drawn as N(0, t I) so path-dependent
/// coefficients are probed at realistic magnitudes.
pub struct RandomSampler {
    dim: usize,
    t_max: f64,
    y_half_width: f64,
    z_half_width: f64,
    rng: ChaCha12Rng,
}

impl RandomSampler {
    pub fn new(dim: usize, t_max: f64, y_half_width: f64, z_half_width: f64, seed: u64) -> Self {
        RandomSampler {
            dim,
            t_max,
            y_half_width,
            z_half_width,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }
}

impl DomainSampler for RandomSampler {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&mut self, _idx: usize) -> DomainPoint {
        let t = self.rng.random_range(0.0..self.t_max);
        let sd = t.sqrt();
        let b = (0..self.dim)
            .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng))
            .collect();
        let y = self.rng.random_range(-self.y_half_width..=self.y_half_width);
        let z = (0..self.dim)
            .map(|_| self.rng.random_range(-self.z_half_width..=self.z_half_width))
            .collect();
        DomainPoint { t, b, y, z }
    }
}

/// Deterministic lattice sampler for reproducible spot checks.
pub struct GridSampler {
    points: Vec<DomainPoint>,
}

impl GridSampler {
    /// Tensor lattice over t in [0, t_max], y in [-y_hw, y_hw], each z
    /// coordinate in [-z_hw, z_hw], with B fixed at zero.
    pub fn lattice(dim: usize, t_max: f64, y_hw: f64, z_hw: f64, per_axis: usize) -> Self {
        assert!(per_axis >= 2);
        let lin = |lo: f64, hi: f64, i: usize| {
            lo + (hi - lo) * i as f64 / (per_axis - 1) as f64
        };
        let mut points = Vec::new();
        for it in 0..per_axis {
            for iy in 0..per_axis {
                for iz in 0..per_axis {
                    let zc = lin(-z_hw, z_hw, iz);
                    points.push(DomainPoint {
                        t: lin(0.0, t_max, it),
                        b: vec![0.0; dim],
                        y: lin(-y_hw, y_hw, iy),
                        z: vec![zc; dim],
                    });
                }
            }
        }
        GridSampler { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl DomainSampler for GridSampler {
    fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.b.len())
    }

    fn sample(&mut self, idx: usize) -> DomainPoint {
        let p = &self.points[idx % self.points.len()];
        DomainPoint {
            t: p.t,
            b: p.b.clone(),
            y: p.y,
            z: p.z.clone(),
        }
    }
}

fn tol(rhs: f64) -> f64 {
    1e-9 * (1.0 + rhs.abs())
}

fn finite_or_err(g: f64, p: &DomainPoint, what: &'static str) -> Result<f64> {
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFiniteEval {
            what,
            t: p.t,
            y: p.y,
            z_norm: dot(&p.z, &p.z).sqrt(),
        })
    }
}

/// sgn(y) g(t, y, z) <= f_t + u_t |y| + gamma |z|^2 at sampled points.
pub fn check_h1(
    spec: &GeneratorSpec,
    sampler: &mut dyn DomainSampler,
    n: usize,
) -> Result<ComplianceReport> {
    let mut report = ComplianceReport {
        assumption: Assumption::OneSidedGrowth,
        n_samples: n,
        n_violations: 0,
        violations: Vec::new(),
    };
    for i in 0..n {
        let p = sampler.sample(i);
        let g = finite_or_err(spec.g(p.t, &p.b, p.y, &p.z), &p, "generator")?;
        let lhs = sgn(p.y) * g;
        let rhs = (spec.f_proc)(p.t, &p.b)
            + (spec.u_proc)(p.t, &p.b) * p.y.abs()
            + spec.gamma * dot(&p.z, &p.z);
        if lhs > rhs + tol(rhs) {
            report.record(Violation {
                t: p.t,
                b: p.b,
                y: p.y,
                z: p.z,
                lhs,
                rhs,
            });
        }
    }
    Ok(report)
}

/// |g(t, y, z)| <= phi_t(|y|) + h(|y|) |z|^2, plus monotonicity of
/// x -> phi_t(x) probed on each sample (a monotonicity counterexample is
/// recorded with lhs = phi(x1), rhs = phi(x2) for x1 < x2).
pub fn check_h2(
    spec: &GeneratorSpec,
    sampler: &mut dyn DomainSampler,
    n: usize,
) -> Result<ComplianceReport> {
    let mut report = ComplianceReport {
        assumption: Assumption::AbsoluteGrowth,
        n_samples: n,
        n_violations: 0,
        violations: Vec::new(),
    };
    for i in 0..n {
        let p = sampler.sample(i);
        let g = finite_or_err(spec.g(p.t, &p.b, p.y, &p.z), &p, "generator")?;
        let y_abs = p.y.abs();
        let phi = (spec.phi.eval)(p.t, &p.b, y_abs);
        let rhs = phi + (spec.h)(y_abs) * dot(&p.z, &p.z);
        if g.abs() > rhs + tol(rhs) {
            report.record(Violation {
                t: p.t,
                b: p.b.clone(),
                y: p.y,
                z: p.z.clone(),
                lhs: g.abs(),
                rhs,
            });
        }
        // Monotonicity of phi in x on a doubling ladder above |y|.
        let mut x = y_abs;
        let mut phi_x = phi;
        for _ in 0..4 {
            let x2 = 2.0 * x + 0.25;
            let phi_x2 = (spec.phi.eval)(p.t, &p.b, x2);
            if phi_x > phi_x2 + tol(phi_x2) {
                report.record(Violation {
                    t: p.t,
                    b: p.b.clone(),
                    y: x,
                    z: p.z.clone(),
                    lhs: phi_x,
                    rhs: phi_x2,
                });
                break;
            }
            x = x2;
            phi_x = phi_x2;
        }
    }
    Ok(report)
}

/// Continuity of (y, z) -> g probed along a dyadic ladder delta = 2^-1..2^-12
/// in a per-sample random unit direction of (y, z). The oscillation at the
/// smallest delta must fall below `modulus_tolerance`.
pub fn check_h3(
    spec: &GeneratorSpec,
    sampler: &mut dyn DomainSampler,
    n: usize,
    modulus_tolerance: f64,
) -> Result<ComplianceReport> {
    let dim = sampler.dim();
    let mut report = ComplianceReport {
        assumption: Assumption::Continuity,
        n_samples: n,
        n_violations: 0,
        violations: Vec::new(),
    };
    let mut dir_rng = ChaCha12Rng::seed_from_u64(0xd12e_c710);
    for i in 0..n {
        let p = sampler.sample(i);
        let g0 = finite_or_err(spec.g(p.t, &p.b, p.y, &p.z), &p, "generator")?;
        // Unit direction in (y, z) space.
        let mut dir = vec![0.0f64; dim + 1];
        loop {
            for d in dir.iter_mut() {
                *d = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut dir_rng);
            }
            let nrm = dot(&dir, &dir).sqrt();
            if nrm > 1e-8 {
                for d in dir.iter_mut() {
                    *d /= nrm;
                }
                break;
            }
        }
        let mut osc_small = f64::INFINITY;
        for e in 1..=12u32 {
            let delta = 0.5f64.powi(e as i32);
            let y2 = p.y + delta * dir[0];
            let z2: Vec<f64> = p
                .z
                .iter()
                .enumerate()
                .map(|(c, zc)| zc + delta * dir[c + 1])
                .collect();
            let g2 = finite_or_err(spec.g(p.t, &p.b, y2, &z2), &p, "generator")?;
            osc_small = (g2 - g0).abs();
        }
        if osc_small > modulus_tolerance {
            report.record(Violation {
                t: p.t,
                b: p.b,
                y: p.y,
                z: p.z,
                lhs: osc_small,
                rhs: modulus_tolerance,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::families::{build_family, FamilyConfig};

    #[test]
    fn compliant_families_pass_all_checks() {
        let cfgs = [
            FamilyConfig::Linear {
                a: -1.0,
                b: vec![0.5],
                c: 0.2,
            },
            FamilyConfig::PureQuadratic { gamma: 0.5 },
            FamilyConfig::CubicDamped { gamma: 0.5 },
            FamilyConfig::Oscillatory {
                amp: 0.5,
                gamma: 0.5,
            },
            FamilyConfig::StochasticCoefficient { gamma: 0.5 },
        ];
        for cfg in &cfgs {
            let spec = build_family(cfg, 1).unwrap();
            let mut s = RandomSampler::new(1, 1.0, 10.0, 10.0, 7);
            assert!(check_h1(&spec, &mut s, 2000).unwrap().passed(), "{}", spec.name);
            let mut s = RandomSampler::new(1, 1.0, 10.0, 10.0, 8);
            assert!(check_h2(&spec, &mut s, 2000).unwrap().passed(), "{}", spec.name);
            // Lipschitz constants on |y|, |z| <= 2 keep the finest dyadic
            // oscillation well under the modulus tolerance.
            let mut s = RandomSampler::new(1, 1.0, 2.0, 2.0, 9);
            assert!(
                check_h3(&spec, &mut s, 200, 1e-2).unwrap().passed(),
                "{}",
                spec.name
            );
        }
    }

    #[test]
    fn y_squared_control_fails_one_sided_check() {
        let spec = build_family(&FamilyConfig::YSquared, 1).unwrap();
        let mut s = RandomSampler::new(1, 1.0, 10.0, 10.0, 11);
        let rep = check_h1(&spec, &mut s, 2000).unwrap();
        assert!(!rep.passed());
        assert!(rep.n_violations > 0);
        assert_eq!(rep.violations.is_empty(), rep.n_violations == 0);
        // Every recorded counterexample really violates the bound.
        for v in &rep.violations {
            assert!(v.lhs > v.rhs);
        }
    }

    #[test]
    fn discontinuous_generator_fails_continuity_check() {
        let mut spec = build_family(&FamilyConfig::PureQuadratic { gamma: 1.0 }, 1).unwrap();
        spec.eval = std::sync::Arc::new(|_, _, y: f64, _| if y > 0.0 { 1.0 } else { 0.0 });
        // A pointwise falsifier only sees a jump from samples within the
        // finest dyadic step of it, so concentrate the y-domain near 0.
        let mut s = RandomSampler::new(1, 1.0, 0.001, 2.0, 13);
        let rep = check_h3(&spec, &mut s, 500, 1e-2).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn non_monotone_dominator_rejected() {
        let mut spec = build_family(&FamilyConfig::CubicDamped { gamma: 0.5 }, 1).unwrap();
        spec.phi.eval = std::sync::Arc::new(|_, _, x: f64| (10.0 - x).max(0.0) + x * x * x + 1.0);
        let mut s = RandomSampler::new(1, 1.0, 3.0, 3.0, 17);
        let rep = check_h2(&spec, &mut s, 500).unwrap();
        assert!(!rep.passed());
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let mut spec = build_family(&FamilyConfig::PureQuadratic { gamma: 1.0 }, 1).unwrap();
        spec.eval = std::sync::Arc::new(|_, _, y: f64, _| 1.0 / (y - y));
        let mut s = RandomSampler::new(1, 1.0, 1.0, 1.0, 19);
        assert!(matches!(
            check_h1(&spec, &mut s, 10),
            Err(Error::NonFiniteEval { .. })
        ));
    }

    #[test]
    fn grid_sampler_is_deterministic() {
        let mut a = GridSampler::lattice(2, 1.0, 3.0, 3.0, 4);
        let mut b = GridSampler::lattice(2, 1.0, 3.0, 3.0, 4);
        assert_eq!(a.len(), 64);
        for i in 0..a.len() {
            let (pa, pb) = (a.sample(i), b.sample(i));
            assert_eq!(pa.t, pb.t);
            assert_eq!(pa.y, pb.y);
            assert_eq!(pa.z, pb.z);
        }
    }
}
