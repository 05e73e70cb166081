//! Time grids, seeded d-dimensional Brownian path batches, the hitting time
//! tau, and stopped terminal values for small-horizon BSDE windows.
//!
//! The window lives on [t0, t0 + epsilon] with a uniform grid. A path is
//! stopped at the first grid node where
//!
//! ```text
//! |B_s - B_t0| + integral_t0^s phi_r(K)^2 dr  >=  1
//! ```
//!
//! with the integral taken by left-endpoint quadrature (only information up
//! to s_i enters the i-th increment of the integral). Stopping is resolved on
//! the grid; the crossing displacement is projected back onto the stopping
//! surface so that the frozen displacement satisfies the continuous-time cap
//! `|B_tau - B_t0| <= 1 - integral` exactly. The raw overshoot of the crossing
//! step is recorded as a discretization diagnostic.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Sentinel tau index for paths that never stop inside the window.
pub const TAU_NEVER: u32 = u32::MAX;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-path stream seed. Counter-based so batches are reproducible under any
/// parallel schedule.
pub fn path_seed(master: u64, path: u64) -> u64 {
    splitmix64(master ^ (path.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Uniform grid t0 = s_0 < s_1 < ... < s_N = t0 + epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    epsilon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.epsilon / self.steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        debug_assert!(j <= self.steps);
        self.t0 + self.dt() * j as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(move |j| self.node(j))
    }
}

/// Builds a uniform grid on [t0, t0 + epsilon], enforcing
/// `epsilon in (0, (T - t0) /\ 1]`.
pub fn make_grid(t0: f64, epsilon: f64, steps: usize, horizon: f64) -> Result<TimeGrid> {
    if !(t0 >= 0.0 && t0.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "t0",
            reason: format!("must be finite and nonnegative, got {t0}"),
        });
    }
    if steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "must be at least 1".into(),
        });
    }
    let cap = (horizon - t0).min(1.0);
    if !(epsilon > 0.0 && epsilon <= cap) {
        return Err(Error::EpsilonOutOfRange {
            epsilon,
            t0,
            horizon,
        });
    }
    Ok(TimeGrid { t0, epsilon, steps })
}

/// A batch of discretized Brownian paths on a shared grid, plus the stopping
/// data once [`hitting_time`] has been resolved.
///
/// Displacements `B_{s_j} - B_{t0}` are stored node-major: all paths for
/// node 0, then node 1, and so on. Node 0 is identically zero.
pub struct PathBatch {
    dim: usize,
    n_paths: usize,
    seed: u64,
    grid: TimeGrid,
    /// Absolute Brownian value at t0 (zero unless a path prefix is frozen).
    prefix: Vec<f64>,
    /// [node][path][coord] displacement from t0.
    disp: Vec<f64>,
    /// Grid index of tau per path, or TAU_NEVER.
    tau: Vec<u32>,
    /// [path][coord] displacement frozen at tau (projected onto the stopping
    /// surface); equals the terminal displacement on never-stopped paths.
    stopped: Vec<f64>,
    max_overshoot: f64,
    tau_resolved: bool,
}

impl PathBatch {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &TimeGrid {
        self.grid_ref()
    }

    fn grid_ref(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    /// Freezes a simulated path prefix: the absolute Brownian value at t0.
    pub fn set_prefix(&mut self, prefix: Vec<f64>) {
        assert_eq!(prefix.len(), self.dim);
        self.prefix = prefix;
    }

    #[inline]
    fn idx(&self, node: usize, path: usize) -> usize {
        (node * self.n_paths + path) * self.dim
    }

    /// Displacement B_{s_j} - B_{t0} of one path at one node.
    #[inline]
    pub fn disp_at(&self, node: usize, path: usize) -> &[f64] {
        let i = self.idx(node, path);
        &self.disp[i..i + self.dim]
    }

    /// Brownian increment of `step` (from node `step` to `step + 1`).
    #[inline]
    pub fn increment_coord(&self, step: usize, path: usize, c: usize) -> f64 {
        self.disp[self.idx(step + 1, path) + c] - self.disp[self.idx(step, path) + c]
    }

    /// Absolute Brownian value at node `j` (prefix + displacement).
    #[inline]
    pub fn write_b(&self, node: usize, path: usize, out: &mut [f64]) {
        let d = self.disp_at(node, path);
        for c in 0..self.dim {
            out[c] = self.prefix[c] + d[c];
        }
    }

    pub fn tau_resolved(&self) -> bool {
        self.tau_resolved
    }

    /// Grid index of tau, or [`TAU_NEVER`].
    #[inline]
    pub fn tau_index(&self, path: usize) -> u32 {
        self.tau[path]
    }

    /// Whether the path is still alive (not yet stopped) at node `j`.
    #[inline]
    pub fn alive(&self, node: usize, path: usize) -> bool {
        (node as u32) < self.tau[path]
    }

    /// Displacement frozen at tau (projected); terminal displacement when the
    /// path never stops.
    #[inline]
    pub fn stopped_disp(&self, path: usize) -> &[f64] {
        debug_assert!(self.tau_resolved);
        &self.stopped[path * self.dim..(path + 1) * self.dim]
    }

    /// Displacement of the stopped process B_{s_j /\ tau} - B_{t0}.
    #[inline]
    pub fn stopped_disp_at(&self, node: usize, path: usize) -> &[f64] {
        if self.alive(node, path) || !self.tau_resolved {
            self.disp_at(node, path)
        } else {
            self.stopped_disp(path)
        }
    }

    /// Largest raw crossing overshoot `|B_tau - B_t0| - (1 - integral)` seen
    /// when resolving tau, before projection.
    pub fn max_overshoot(&self) -> f64 {
        self.max_overshoot
    }

    pub fn n_stopped(&self) -> usize {
        self.tau.iter().filter(|&&t| t != TAU_NEVER).count()
    }

    /// Flat debug dump: `path,node,dB_1,...,dB_d` increment rows.
    pub fn dump_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "path,node")?;
        for c in 0..self.dim {
            write!(w, ",dB_{}", c + 1)?;
        }
        writeln!(w)?;
        for p in 0..self.n_paths {
            for j in 0..self.grid.steps() {
                write!(w, "{p},{j}")?;
                for c in 0..self.dim {
                    write!(w, ",{:.17e}", self.increment_coord(j, p, c))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Samples a batch of i.i.d. Brownian paths. Increments are centered Gaussian
/// with variance dt per coordinate; identical (seed, grid, dim, n_paths)
/// reproduce bit-identical batches.
pub fn sample_brownian(grid: TimeGrid, dim: usize, seed: u64, n_paths: usize) -> Result<PathBatch> {
    if dim == 0 || dim > 8 {
        return Err(Error::InvalidParameter {
            name: "dim",
            reason: format!("must be in 1..=8, got {dim}"),
        });
    }
    if n_paths == 0 {
        return Err(Error::InvalidParameter {
            name: "n_paths",
            reason: "must be at least 1".into(),
        });
    }
    let n_nodes = grid.n_nodes();
    let mut disp = vec![0.0; n_nodes * n_paths * dim];
    let sqrt_dt = grid.dt().sqrt();
    let mut acc = [0.0f64; 8];
    for p in 0..n_paths {
        let mut rng = ChaCha12Rng::seed_from_u64(path_seed(seed, p as u64));
        acc[..dim].fill(0.0);
        for j in 1..n_nodes {
            let base = (j * n_paths + p) * dim;
            for c in 0..dim {
                let g: f64 = StandardNormal.sample(&mut rng);
                acc[c] += sqrt_dt * g;
                disp[base + c] = acc[c];
            }
        }
    }
    // Terminal displacement doubles as the default frozen value.
    let mut stopped = vec![0.0; n_paths * dim];
    let last = grid.steps();
    for p in 0..n_paths {
        let base = (last * n_paths + p) * dim;
        stopped[p * dim..(p + 1) * dim].copy_from_slice(&disp[base..base + dim]);
    }
    Ok(PathBatch {
        dim,
        n_paths,
        seed,
        grid,
        prefix: vec![0.0; dim],
        disp,
        tau: vec![TAU_NEVER; n_paths],
        stopped,
        max_overshoot: 0.0,
        tau_resolved: false,
    })
}

/// Resolves tau on the grid: the first node j where
/// `|B_{s_j} - B_{t0}| + sum_{i<j} phi(s_i)^2 dt >= 1`.
///
/// `phi_at_k` is the dominator evaluated at the envelope radius K, as a
/// function of (time, absolute Brownian value) so stochastic dominators are
/// supported. The crossing displacement is projected onto the stopping
/// surface; the raw overshoot is tracked in [`PathBatch::max_overshoot`].
pub fn hitting_time<F>(batch: &mut PathBatch, mut phi_at_k: F)
where
    F: FnMut(f64, &[f64]) -> f64,
{
    let n_paths = batch.n_paths;
    let dim = batch.dim;
    let steps = batch.grid.steps();
    let dt = batch.grid.dt();
    let mut b = [0.0f64; 8];
    let mut x = [0.0f64; 8];
    let mut max_overshoot = 0.0f64;
    for p in 0..n_paths {
        let mut integral = 0.0;
        let mut tau = TAU_NEVER;
        for j in 1..=steps {
            // Left-endpoint quadrature of the phi^2 integral.
            batch.write_b(j - 1, p, &mut b[..dim]);
            let phi = phi_at_k(batch.grid.node(j - 1), &b[..dim]);
            integral += phi * phi * dt;
            x[..dim].copy_from_slice(batch.disp_at(j, p));
            let norm: f64 = x[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm + integral >= 1.0 {
                tau = j as u32;
                let radius = (1.0 - integral).max(0.0);
                let overshoot = norm - radius;
                if overshoot > max_overshoot {
                    max_overshoot = overshoot;
                }
                let scale = if norm > 0.0 { radius / norm } else { 0.0 };
                let dst = &mut batch.stopped[p * dim..(p + 1) * dim];
                for c in 0..dim {
                    dst[c] = x[c] * scale;
                }
                break;
            }
        }
        batch.tau[p] = tau;
        if tau == TAU_NEVER {
            // Refresh the frozen slot with the terminal displacement in case
            // the caller rebuilt the paths since sampling.
            let base = (steps * n_paths + p) * dim;
            x[..dim].copy_from_slice(&batch.disp[base..base + dim]);
            batch.stopped[p * dim..(p + 1) * dim].copy_from_slice(&x[..dim]);
        }
    }
    batch.max_overshoot = max_overshoot;
    batch.tau_resolved = true;
}

/// Per-path stopped terminal `xi = y + <z, B_{(t0+eps) /\ tau} - B_{t0}>`.
pub struct StoppedTerminal {
    pub y: f64,
    pub z: Vec<f64>,
    pub xi: Vec<f64>,
}

impl StoppedTerminal {
    pub fn n_paths(&self) -> usize {
        self.xi.len()
    }
}

pub fn stopped_terminal(batch: &PathBatch, y: f64, z: &[f64]) -> StoppedTerminal {
    assert!(batch.tau_resolved, "hitting_time must run before the terminal");
    assert_eq!(z.len(), batch.dim);
    let xi = (0..batch.n_paths)
        .map(|p| {
            let x = batch.stopped_disp(p);
            y + z.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    StoppedTerminal {
        y,
        z: z.to_vec(),
        xi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arithmetic() {
        let g = make_grid(0.0, 0.5, 2, f64::INFINITY).unwrap();
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes, vec![0.0, 0.25, 0.5]);

        let g = make_grid(0.0, 1.0, 1, f64::INFINITY).unwrap();
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes, vec![0.0, 1.0]);
    }

    #[test]
    fn grid_rejects_epsilon_beyond_unit_cap() {
        let err = make_grid(0.0, 1.5, 4, f64::INFINITY).unwrap_err();
        assert!(matches!(err, Error::EpsilonOutOfRange { .. }));
        // Finite horizon binds first when shorter than 1.
        assert!(make_grid(0.0, 0.6, 4, 0.5).is_err());
        assert!(make_grid(0.0, 0.5, 4, 0.5).is_ok());
    }

    #[test]
    fn batch_is_deterministic() {
        let g = make_grid(0.0, 0.25, 8, f64::INFINITY).unwrap();
        let a = sample_brownian(g, 2, 7, 1).unwrap();
        let b = sample_brownian(g, 2, 7, 1).unwrap();
        assert_eq!(a.disp, b.disp);
        let c = sample_brownian(g, 2, 8, 1).unwrap();
        assert_ne!(a.disp, c.disp);
    }

    #[test]
    fn displacement_is_partial_sum_of_increments() {
        let g = make_grid(0.0, 0.5, 16, f64::INFINITY).unwrap();
        let batch = sample_brownian(g, 3, 11, 4).unwrap();
        for p in 0..4 {
            let mut acc = [0.0f64; 3];
            for j in 0..16 {
                for c in 0..3 {
                    acc[c] += batch.increment_coord(j, p, c);
                }
                for c in 0..3 {
                    assert!((acc[c] - batch.disp_at(j + 1, p)[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn increment_moments_match_gaussian() {
        // CLT bound on the mean and a 5-standard-error band on the variance.
        let g = make_grid(0.0, 0.5, 32, f64::INFINITY).unwrap();
        let n_paths = 2000;
        let batch = sample_brownian(g, 2, 123, n_paths).unwrap();
        let dt = g.dt();
        let n = (n_paths * 32) as f64;
        for c in 0..2 {
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for p in 0..n_paths {
                for j in 0..32 {
                    let v = batch.increment_coord(j, p, c);
                    sum += v;
                    sum2 += v * v;
                }
            }
            let mean = sum / n;
            let var = sum2 / n - mean * mean;
            assert!(mean.abs() < 4.0 * (dt / n).sqrt(), "mean {mean}");
            let var_se = dt * (2.0 / n).sqrt();
            assert!((var - dt).abs() < 5.0 * var_se, "var {var} vs {dt}");
        }
    }

    #[test]
    fn hitting_by_pure_integral() {
        // phi(K)^2 = 1/delta constant: tau at the first node >= t0 + delta.
        let g = make_grid(0.0, 1.0, 10, f64::INFINITY).unwrap();
        let mut batch = sample_brownian(g, 1, 3, 2).unwrap();
        // Zero out the paths so only the integral part drives the crossing.
        batch.disp.fill(0.0);
        let delta = 0.35;
        hitting_time(&mut batch, |_, _| (1.0f64 / delta).sqrt());
        // integral reaches 1 after ceil(delta / dt) = 4 left-endpoint steps.
        for p in 0..2 {
            assert_eq!(batch.tau_index(p), 4);
            assert_eq!(batch.stopped_disp(p), &[0.0]);
        }
    }

    #[test]
    fn hitting_never_when_criterion_stays_below_one() {
        let g = make_grid(0.0, 0.5, 8, f64::INFINITY).unwrap();
        let mut batch = sample_brownian(g, 1, 3, 1).unwrap();
        for j in 1..=8 {
            let i = batch.idx(j, 0);
            batch.disp[i] = 0.3 * (j as f64 / 8.0);
        }
        hitting_time(&mut batch, |_, _| 0.0);
        assert_eq!(batch.tau_index(0), TAU_NEVER);
        assert_eq!(batch.n_stopped(), 0);
    }

    #[test]
    fn hitting_by_displacement_scan() {
        let g = make_grid(0.0, 0.5, 8, f64::INFINITY).unwrap();
        let mut batch = sample_brownian(g, 1, 3, 1).unwrap();
        let vals = [0.1, 0.4, 1.2, 1.3, 0.9, 0.8, 0.7, 0.6];
        for (j, v) in vals.iter().enumerate() {
            let i = batch.idx(j + 1, 0);
            batch.disp[i] = *v;
        }
        hitting_time(&mut batch, |_, _| 0.0);
        assert_eq!(batch.tau_index(0), 3);
        // Projection pins the frozen displacement on the unit sphere.
        assert!((batch.stopped_disp(0)[0] - 1.0).abs() < 1e-12);
        assert!((batch.max_overshoot() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn stopped_terminal_values() {
        let g = make_grid(0.0, 0.5, 4, f64::INFINITY).unwrap();
        let mut batch = sample_brownian(g, 1, 5, 3).unwrap();
        batch.disp.fill(0.0);
        for j in 1..=4 {
            let i = batch.idx(j, 0);
            batch.disp[i] = 0.3; // never stopped, terminal displacement 0.3
            let i = batch.idx(j, 1);
            batch.disp[i] = if j >= 2 { 1.4 } else { 0.0 }; // stops at node 2
        }
        hitting_time(&mut batch, |_, _| 0.0);

        // z = 0 gives xi = y on every path.
        let t = stopped_terminal(&batch, 2.0, &[0.0]);
        assert!(t.xi.iter().all(|&x| x == 2.0));

        // Never-stopped path with z = 2 and displacement 0.3.
        let t = stopped_terminal(&batch, 1.0, &[2.0]);
        assert!((t.xi[0] - 1.6).abs() < 1e-12);
        // Stopped path freezes at the (projected) crossing displacement.
        assert!((t.xi[1] - 3.0).abs() < 1e-12);
        // |xi - y| <= |z| on every path.
        for &x in &t.xi {
            assert!((x - 1.0).abs() <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn rare_stopping_at_small_epsilon() {
        // Reflection-principle oracle: for phi = 0 and eps = 2^-6 the stop
        // frequency must be below 1e-4. (Exact bound 2 exp(-1/(2 eps)) ~ 2e-14;
        // we run 1e5 paths and expect zero hits.)
        let eps = 2.0_f64.powi(-6);
        let g = make_grid(0.0, eps, 32, f64::INFINITY).unwrap();
        let mut batch = sample_brownian(g, 1, 99, 100_000).unwrap();
        hitting_time(&mut batch, |_, _| 0.0);
        let freq = batch.n_stopped() as f64 / 100_000.0;
        assert!(freq < 1e-4, "stop frequency {freq}");
    }
}
