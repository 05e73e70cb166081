//! Per-node least-squares machinery for the LSMC conditional expectations.
//!
//! The design matrix at a node is fixed across Picard iterations, so the
//! normal matrix is formed and factored once. Only the factor is stored;
//! feature rows are cheap and are rebuilt from the displacement points on
//! every fit, keeping memory at O(p^2) per node instead of O(n_alive * p).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Polynomial basis in the (scaled) Brownian displacement. Degree 0 is the
/// constant basis; degree 2 includes all cross terms.
#[derive(Clone, Copy, Debug)]
pub struct PolyBasis {
    dim: usize,
    degree: usize,
    /// Coordinates are divided by this before monomials are formed; using
    /// sqrt(s_j - t0) puts them on the unit scale of the Brownian marginal.
    scale: f64,
}

impl PolyBasis {
    pub fn new(dim: usize, degree: usize, scale: f64) -> Result<Self> {
        if dim == 0 || dim > 8 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: format!("must be in 1..=8, got {dim}"),
            });
        }
        if degree > 2 {
            return Err(Error::InvalidParameter {
                name: "basis_degree",
                reason: format!("supported degrees are 0..=2, got {degree}"),
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "scale",
                reason: format!("must be positive, got {scale}"),
            });
        }
        Ok(PolyBasis { dim, degree, scale })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_features(&self) -> usize {
        match self.degree {
            0 => 1,
            1 => 1 + self.dim,
            _ => 1 + self.dim + self.dim * (self.dim + 1) / 2,
        }
    }

    /// Writes the feature row of one displacement into `out`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.n_features());
        out[0] = 1.0;
        if self.degree == 0 {
            return;
        }
        let mut u = [0.0f64; 8];
        for c in 0..self.dim {
            u[c] = x[c] / self.scale;
            out[1 + c] = u[c];
        }
        if self.degree == 2 {
            let mut k = 1 + self.dim;
            for i in 0..self.dim {
                for j in i..self.dim {
                    out[k] = u[i] * u[j];
                    k += 1;
                }
            }
        }
    }
}

/// A factored per-node regression over the alive paths. `points` arguments
/// below must always be the same flattened n_alive x dim displacement block
/// the factor was built from.
pub struct NodeRegression {
    basis: PolyBasis,
    n_alive: usize,
    chol: Cholesky<f64, Dyn>,
    pub condition: f64,
    /// True when the node fell back to the constant basis because too few
    /// paths were alive for a stable polynomial fit.
    pub fell_back: bool,
}

/// Condition threshold beyond which a normal matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Minimum alive-sample multiple of the feature count before falling back to
/// the constant basis.
const MIN_SAMPLES_PER_FEATURE: usize = 5;

impl NodeRegression {
    /// `points` holds the alive displacements, flattened n_alive x dim.
    pub fn build(node: usize, basis: PolyBasis, points: &[f64]) -> Result<Self> {
        let dim = basis.dim();
        assert_eq!(points.len() % dim, 0);
        let n_alive = points.len() / dim;
        let mut basis = basis;
        let mut fell_back = false;
        if n_alive < MIN_SAMPLES_PER_FEATURE * basis.n_features() && basis.degree() > 0 {
            basis = PolyBasis::new(dim, 0, 1.0)?;
            fell_back = true;
        }
        let p = basis.n_features();
        // Normal matrix X^T X, symmetric p x p, accumulated row by row.
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut row = [0.0f64; 45];
        for x in points.chunks_exact(dim) {
            basis.eval(x, &mut row[..p]);
            for a in 0..p {
                for b in a..p {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let eigen = gram.clone().symmetric_eigen();
        let max_ev = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min_ev = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let condition = if min_ev > 0.0 {
            max_ev / min_ev
        } else {
            f64::INFINITY
        };
        let chol = Cholesky::new(gram).ok_or(Error::SingularRegression { node, condition })?;
        if condition > MAX_CONDITION {
            return Err(Error::SingularRegression { node, condition });
        }
        Ok(NodeRegression {
            basis,
            n_alive,
            chol,
            condition,
            fell_back,
        })
    }

    pub fn n_alive(&self) -> usize {
        self.n_alive
    }

    pub fn basis(&self) -> &PolyBasis {
        &self.basis
    }

    /// Least-squares coefficients for one target vector (alive order).
    pub fn fit(&self, points: &[f64], targets: &[f64]) -> Vec<f64> {
        assert_eq!(targets.len(), self.n_alive);
        let dim = self.basis.dim();
        let p = self.basis.n_features();
        let mut row = [0.0f64; 45];
        let mut rhs = DVector::<f64>::zeros(p);
        for (x, &t) in points.chunks_exact(dim).zip(targets) {
            self.basis.eval(x, &mut row[..p]);
            for a in 0..p {
                rhs[a] += row[a] * t;
            }
        }
        self.chol.solve_mut(&mut rhs);
        rhs.iter().cloned().collect()
    }

    /// Fitted values at the design points, written into `out` (alive order).
    pub fn predict_into(&self, points: &[f64], coeffs: &[f64], out: &mut [f64]) {
        let dim = self.basis.dim();
        let p = self.basis.n_features();
        assert_eq!(coeffs.len(), p);
        assert_eq!(out.len(), self.n_alive);
        let mut row = [0.0f64; 45];
        for (i, x) in points.chunks_exact(dim).enumerate() {
            self.basis.eval(x, &mut row[..p]);
            out[i] = row[..p].iter().zip(coeffs).map(|(v, c)| v * c).sum();
        }
    }
}
