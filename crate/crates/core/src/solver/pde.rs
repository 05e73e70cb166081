//! Explicit finite-difference reference solver for the one-dimensional
//! stopped window, valid for deterministic dominators.
//!
//! In the Markov coordinate x = B_s - B_t0, the window value solves
//!
//! ```text
//! u_s + (1/2) u_xx + g(s, u, u_x) = 0   on |x| < r(s),
//! u(s, x) = y + z x                     on |x| >= r(s),
//! u(t0 + eps, x) = y + z x,
//! ```
//!
//! where r(s) = max(0, 1 - int_t0^s phi_r(K)^2 dr) is the moving absorbing
//! barrier left by the Brownian/integral stopping criterion. Integration is
//! backward in time with central differences; the step count must satisfy an
//! explicit-scheme stability bound or the solver refuses with the required
//! count.

use crate::error::{Error, Result};
use crate::generator::Driver;

pub struct Pde1dConfig {
    /// Spatial nodes on [-1, 1] (odd so x = 0 is a node).
    pub nx: usize,
    /// Backward time steps.
    pub nt: usize,
    /// Bound on |u_x| used in the stability estimate and enforced during the
    /// sweep; the terminal slope is |z|, so a small multiple of it is ample
    /// on these short windows.
    pub grad_bound: f64,
}

impl Default for Pde1dConfig {
    fn default() -> Self {
        Pde1dConfig {
            nx: 481,
            nt: 0, // chosen from the stability bound when zero
            grad_bound: 0.0,
        }
    }
}

#[derive(Debug)]
pub struct Pde1dSolution {
    /// u(t0, 0), the window value at the target point.
    pub y0: f64,
    pub nx: usize,
    pub nt: usize,
    /// Largest |u_x| encountered, for a posteriori validation of grad_bound.
    pub max_grad: f64,
}

/// Minimal time steps for stability: dt <= dx^2 / (1 + L dx) with L the
/// first-order (gradient) sensitivity scale.
fn required_steps(eps: f64, dx: f64, grad_sensitivity: f64) -> usize {
    let dt_max = dx * dx / (1.0 + grad_sensitivity * dx);
    (eps / dt_max).ceil() as usize
}

/// `phi_at_k(s)` is the deterministic dominator at the envelope radius;
/// `gamma` scales the quadratic gradient term for the stability estimate.
pub fn solve_pde_1d(
    driver: &dyn Driver,
    y: f64,
    z: f64,
    t0: f64,
    eps: f64,
    gamma: f64,
    phi_at_k: &dyn Fn(f64) -> f64,
    cfg: &Pde1dConfig,
) -> Result<Pde1dSolution> {
    if cfg.nx < 11 || cfg.nx % 2 == 0 {
        return Err(Error::InvalidParameter {
            name: "nx",
            reason: format!("must be odd and at least 11, got {}", cfg.nx),
        });
    }
    let nx = cfg.nx;
    let dx = 2.0 / (nx - 1) as f64;
    let grad_bound = if cfg.grad_bound > 0.0 {
        cfg.grad_bound
    } else {
        3.0 * z.abs() + 1.0
    };
    let required = required_steps(eps, dx, 2.0 * gamma * grad_bound);
    let nt = if cfg.nt == 0 { required } else { cfg.nt };
    if nt < required {
        return Err(Error::CflViolation {
            steps: nt,
            required,
        });
    }
    let dt = eps / nt as f64;

    let x_of = |i: usize| -1.0 + dx * i as f64;
    // Terminal condition.
    let mut u: Vec<f64> = (0..nx).map(|i| y + z * x_of(i)).collect();
    let mut next = u.clone();
    let mut max_grad = z.abs();

    // Barrier radius via left-endpoint quadrature of phi^2, accumulated
    // forward once and indexed backward.
    let mut integral = vec![0.0f64; nt + 1];
    for k in 0..nt {
        let s = t0 + dt * k as f64;
        let phi = phi_at_k(s);
        integral[k + 1] = integral[k] + phi * phi * dt;
    }

    let mut bcell = [0.0f64; 1];
    for k in (0..nt).rev() {
        let s = t0 + dt * k as f64;
        let r = (1.0 - integral[k]).max(0.0);
        for i in 0..nx {
            let x = x_of(i);
            if i == 0 || i == nx - 1 || x.abs() >= r {
                next[i] = y + z * x;
                continue;
            }
            let uxx = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
            let ux = (u[i + 1] - u[i - 1]) / (2.0 * dx);
            if ux.abs() > max_grad {
                max_grad = ux.abs();
            }
            if ux.abs() > grad_bound {
                return Err(Error::CflViolation {
                    steps: nt,
                    required: required_steps(eps, dx, 2.0 * gamma * 2.0 * ux.abs()),
                });
            }
            bcell[0] = x;
            let g = driver.eval(s, &bcell, u[i], std::slice::from_ref(&ux));
            if !g.is_finite() {
                return Err(Error::NonFiniteEval {
                    what: "driver",
                    t: s,
                    y: u[i],
                    z_norm: ux.abs(),
                });
            }
            next[i] = u[i] + dt * (0.5 * uxx + g);
        }
        std::mem::swap(&mut u, &mut next);
    }

    Ok(Pde1dSolution {
        y0: u[(nx - 1) / 2],
        nx,
        nt,
        max_grad,
    })
}
