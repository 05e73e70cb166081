//! Generators with stochastic growth data: the driver g(omega, t, y, z), its
//! dominating processes, the derived growth envelope, the truncation q_k, the
//! recentred (tilde) generator, and the quadratic-envelope decomposition.

pub mod compliance;
pub mod families;

use std::sync::Arc;

use crate::error::{Error, Result};

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// sgn with sgn(0) := 0, so the one-sided growth check is total.
pub fn sgn(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else if y < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Generator evaluation: (t, absolute Brownian value, y, z) -> real.
pub type GeneratorEval = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// Nonnegative path process: (t, absolute Brownian value) -> real.
pub type PathProcess = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// Dominator family: (t, absolute Brownian value, x) -> real, nondecreasing in x.
pub type DominatorEval = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;
/// Deterministic scalar function (the h of the quadratic coefficient).
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A driver evaluable along simulated paths. Implementations receive the
/// absolute Brownian value so path-dependent coefficients can be read off.
/// The stopping indicator `1_{s < tau}` is applied by the caller.
pub trait Driver: Sync {
    fn eval(&self, t: f64, b: &[f64], y: f64, z: &[f64]) -> f64;
}

impl<F> Driver for F
where
    F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Sync,
{
    fn eval(&self, t: f64, b: &[f64], y: f64, z: &[f64]) -> f64 {
        self(t, b, y, z)
    }
}

/// The phi family of the stochastic dominator class, together with the
/// caller-asserted integrability declarations the representation theorem
/// needs (square integrability for the L1 mode, an essential sup bound for
/// the pointwise mode).
#[derive(Clone)]
pub struct StochasticDominator {
    pub eval: DominatorEval,
    pub square_integrable_declared: bool,
    pub hinf_declared: bool,
}

impl StochasticDominator {
    pub fn zero() -> Self {
        StochasticDominator {
            eval: Arc::new(|_, _, _| 0.0),
            square_integrable_declared: true,
            hinf_declared: true,
        }
    }
}

/// A generator with declared growth data:
///
/// - one-sided growth `sgn(y) g <= f_t + u_t |y| + gamma |z|^2`,
/// - absolute growth `|g| <= phi_t(|y|) + h(|y|) |z|^2`,
/// - continuity of (y, z) -> g.
///
/// The declarations are caller-asserted; sampling-based falsifiers live in
/// [`compliance`]. The integral bounds of f and u are the exact sup norms
/// used by the envelope arithmetic, not sampled estimates.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub eval: GeneratorEval,
    pub gamma: f64,
    pub h: ScalarFn,
    pub phi: StochasticDominator,
    pub u_proc: PathProcess,
    pub f_proc: PathProcess,
    /// || int_0^T f_r dr ||_inf
    pub f_int_bound: f64,
    /// || int_0^T u_r dr ||_inf
    pub u_int_bound: f64,
    /// T, possibly +infinity.
    pub horizon: f64,
    pub continuity_declared: bool,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must be a positive real, got {}", self.gamma),
            });
        }
        for (name, v) in [
            ("f_int_bound", self.f_int_bound),
            ("u_int_bound", self.u_int_bound),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("declared integral bound must be finite nonnegative, got {v}"),
                });
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: format!("must be positive (possibly infinite), got {}", self.horizon),
            });
        }
        Ok(())
    }

    pub fn g(&self, t: f64, b: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.eval)(t, b, y, z)
    }
}

impl Driver for GeneratorSpec {
    fn eval(&self, t: f64, b: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.eval)(t, b, y, z)
    }
}

/// Truncation `q_k(y) = k y / (|y| \/ k)`; q_0 := 0 by continuous extension.
pub fn truncate_qk(y_tilde: f64, k: f64) -> f64 {
    debug_assert!(k >= 0.0);
    if k <= 0.0 {
        0.0
    } else {
        k * y_tilde / y_tilde.abs().max(k)
    }
}

/// Constants of the localized construction at a target (y, z):
///
/// - `K  = 3 (|y| + |z| + ||int f||) exp(||int u||)` (stopping radius input),
/// - `k  = 2 (|y| + |z| + ||int f||) exp(||int u||)` (truncation radius),
/// - `B  = 2 h(K)`,
/// - `C  = sqrt(2 + 8 h(K)^2 |z|^2)`,
/// - `A(s) = 1_{s < tau} phi_s(K) + 2 h(K) |z|^2`.
#[derive(Clone)]
pub struct GrowthEnvelope {
    pub big_k: f64,
    pub k: f64,
    pub b: f64,
    pub c: f64,
    pub h_at_k: f64,
    pub z_norm: f64,
    pub z_norm2: f64,
    phi: DominatorEval,
}

impl GrowthEnvelope {
    /// The dominating process A(s), with the stopping indicator supplied by
    /// the caller (`alive` = s < tau).
    pub fn a(&self, t: f64, b: &[f64], alive: bool) -> f64 {
        let phi_part = if alive { (self.phi)(t, b, self.big_k) } else { 0.0 };
        phi_part + self.b * self.z_norm2
    }

    /// phi_s(K) along a path, the integrand of the stopping criterion.
    pub fn phi_at_k(&self, t: f64, b: &[f64]) -> f64 {
        (self.phi)(t, b, self.big_k)
    }
}

pub fn derive_envelope(spec: &GeneratorSpec, y: f64, z: &[f64]) -> Result<GrowthEnvelope> {
    spec.validate()?;
    let z_norm = norm(z);
    if !(y.is_finite() && z_norm.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "target",
            reason: "y and z must be finite".into(),
        });
    }
    let base = y.abs() + z_norm + spec.f_int_bound;
    let growth = spec.u_int_bound.exp();
    let big_k = 3.0 * base * growth;
    let k = 2.0 * base * growth;
    let h_at_k = (spec.h)(big_k);
    let z_norm2 = z_norm * z_norm;
    Ok(GrowthEnvelope {
        big_k,
        k,
        b: 2.0 * h_at_k,
        c: (2.0 + 8.0 * h_at_k * h_at_k * z_norm2).sqrt(),
        h_at_k,
        z_norm,
        z_norm2,
        phi: spec.phi.eval.clone(),
    })
}

/// The recentred generator
///
/// ```text
/// g~(s, y~, z~) = g(s, q_k(y~) + y + <z, B_s - B_t0>, z~ + z)
/// ```
///
/// evaluated along alive paths (the stopping indicator is applied by the
/// backward recursion, under which `B_{s /\ tau} = B_s` wherever g~ is
/// nonzero). Satisfies `|g~| <= A(s) + B |z~|^2` whenever the declared
/// absolute-growth data is valid.
pub struct TransformedGenerator {
    spec: GeneratorSpec,
    pub y: f64,
    pub z: Vec<f64>,
    pub k: f64,
    prefix: Vec<f64>,
}

impl TransformedGenerator {
    /// g~(s, 0, 0) = g(s, y + <z, B_s - B_t0>, z) along an alive path.
    pub fn at_zero(&self, t: f64, b: &[f64]) -> f64 {
        let zero = [0.0f64; 8];
        self.eval(t, b, 0.0, &zero[..self.z.len()])
    }
}

impl Driver for TransformedGenerator {
    fn eval(&self, t: f64, b: &[f64], y_tilde: f64, z_tilde: &[f64]) -> f64 {
        let d = self.z.len();
        let mut zz = [0.0f64; 8];
        let mut inner = 0.0;
        for c in 0..d {
            zz[c] = z_tilde[c] + self.z[c];
            inner += self.z[c] * (b[c] - self.prefix[c]);
        }
        let y_arg = truncate_qk(y_tilde, self.k) + self.y + inner;
        (self.spec.eval)(t, b, y_arg, &zz[..d])
    }
}

/// `prefix` is the absolute Brownian value at t0 (zero at t0 = 0), needed to
/// turn absolute path values back into displacements for the <z, .> shift.
pub fn build_transformed_generator(
    spec: &GeneratorSpec,
    y: f64,
    z: &[f64],
    envelope: &GrowthEnvelope,
    prefix: &[f64],
) -> TransformedGenerator {
    assert!(z.len() <= 8, "dimension capped at 8");
    assert_eq!(prefix.len(), z.len());
    TransformedGenerator {
        spec: spec.clone(),
        y,
        z: z.to_vec(),
        k: envelope.k,
        prefix: prefix.to_vec(),
    }
}

/// Outcome of the quadratic-envelope decomposition check.
pub struct EnvelopeDecomposition {
    /// Samples where `|f(y,z)| > (n + B)(|y| + |z|^2) + sup-term`.
    pub violations: Vec<(f64, Vec<f64>, f64, f64)>,
    /// Radial resolution of the grid-search sup.
    pub grid_step: f64,
    /// Grid-search sup of |f| over the ball `{|y| + |z|^2 <= A/n}`.
    pub sup_term: f64,
}

/// Fixed direction set for the z part of the ball grid search.
fn ball_directions(dim: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    // Deterministic quasi-uniform directions from a fixed stream.
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha12Rng::seed_from_u64(0x6c32_35u64);
    (0..32)
        .map(|_| {
            loop {
                let v: Vec<f64> = (0..dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let n = norm(&v);
                if n > 1e-8 {
                    return v.into_iter().map(|x| x / n).collect();
                }
            }
        })
        .collect()
}

/// Verifies the decomposition bound
///
/// ```text
/// |f(y,z)| <= (n + B)(|y| + |z|^2) + sup_{|y'| + |z'|^2 <= A/n} |f(y', z')|
/// ```
///
/// at every sample, for any f with `|f| <= A + B |z|^2` (caller-asserted).
/// The sup is located by grid search with radial resolution A/(10 n); sample
/// points that land inside the ball are added to the sup candidates so grid
/// under-resolution can never produce a spurious violation there.
pub fn envelope_decomposition(
    a: f64,
    b: f64,
    n: u32,
    f: &dyn Fn(f64, &[f64]) -> f64,
    dim: usize,
    samples: &[(f64, Vec<f64>)],
) -> EnvelopeDecomposition {
    assert!(n >= 1);
    assert!(a >= 0.0 && b >= 0.0);
    let radius = a / n as f64;
    let grid_step = radius / 10.0;
    let mut sup = f(0.0, &vec![0.0; dim]).abs();
    if radius > 0.0 {
        let dirs = ball_directions(dim);
        for i in 0..=10usize {
            let rho = grid_step * i as f64;
            for j in 0..=8usize {
                let alpha = j as f64 / 8.0;
                let y_abs = alpha * rho;
                let z_len = ((1.0 - alpha) * rho).sqrt();
                for sy in [1.0f64, -1.0] {
                    let y = sy * y_abs;
                    for dir in &dirs {
                        let z: Vec<f64> = dir.iter().map(|d| d * z_len).collect();
                        let v = f(y, &z).abs();
                        if v > sup {
                            sup = v;
                        }
                    }
                }
            }
        }
    }
    let nb = n as f64 + b;
    let mut violations = Vec::new();
    for (y, z) in samples {
        let size = y.abs() + dot(z, z);
        let lhs = f(*y, z).abs();
        let local_sup = if size <= radius { sup.max(lhs) } else { sup };
        let rhs = nb * size + local_sup;
        if lhs > rhs + 1e-9 * (1.0 + rhs.abs()) {
            violations.push((*y, z.clone(), lhs, rhs));
        }
    }
    EnvelopeDecomposition {
        violations,
        grid_step,
        sup_term: sup,
    }
}
