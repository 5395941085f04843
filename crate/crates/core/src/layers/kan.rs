//! Kolmogorov–Arnold layer: every edge `p → q` carries a learnable univariate
//! function
//!
//! ```text
//! φ_{q,p}(x) = w_b[q][p] · silu(x) + Σ_k c[q][p][k] · B_k(x)
//! ```
//!
//! where `B_k` are the B-spline basis functions of a clamped uniform knot
//! vector, and each output unit sums its incoming edges. Inputs outside the
//! grid are clamped to the boundary before evaluating the basis.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{gemm, silu, silu_derivative, MatRef, Matrix, SeededRng};

/// Clamped (open) uniform knot vector on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    pub lo: f64,
    pub hi: f64,
    /// Polynomial degree; 3 gives cubic splines.
    pub order: usize,
    pub num_functions: usize,
    knots: Vec<f64>,
}

impl SplineGrid {
    pub fn new(lo: f64, hi: f64, order: usize, num_functions: usize) -> Result<Self> {
        if lo >= hi || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid!("spline grid needs finite lo < hi, got [{lo}, {hi}]"));
        }
        if num_functions < order + 1 {
            return Err(invalid!("{num_functions} basis functions is fewer than order + 1 = {}", order + 1));
        }
        let spans = num_functions - order;
        let step = (hi - lo) / spans as f64;
        let mut knots = vec![lo; order + 1];
        knots.extend((1..spans).map(|i| lo + step * i as f64));
        knots.extend(std::iter::repeat_n(hi, order + 1));
        Ok(Self { lo, hi, order, num_functions, knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn span(&self, x: f64) -> usize {
        let last = self.num_functions - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // largest s in [order, last] with knots[s] <= x
        let (mut lo, mut hi) = (self.order, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Non-zero basis functions of `degree` on `span` (Cox–de Boor triangle).
    fn nonzero(&self, span: usize, x: f64, degree: usize, out: &mut [f64]) {
        let t = &self.knots;
        let mut left = [0.0; 16];
        let mut right = [0.0; 16];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let tmp = if denom == 0.0 { 0.0 } else { out[r] / denom };
                out[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            out[j] = saved;
        }
    }

    /// Writes all `num_functions` basis values at `x` into `values` and, when
    /// requested, their derivatives into `derivs`.
    pub fn basis_into(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) {
        assert!(self.order < 15, "spline order too large");
        let xc = x.clamp(self.lo, self.hi);
        let d = self.order;
        let s = self.span(xc);
        values.fill(0.0);
        let mut nz = [0.0; 16];
        self.nonzero(s, xc, d, &mut nz);
        values[s - d..=s].copy_from_slice(&nz[..=d]);
        if let Some(dv) = derivs {
            dv.fill(0.0);
            if d == 0 || x < self.lo || x > self.hi {
                return;
            }
            let mut low = [0.0; 16];
            self.nonzero(s, xc, d - 1, &mut low);
            // low[m] = B_{s-d+1+m, d-1}
            let t = &self.knots;
            let lower = |i: usize| if i + d > s && i <= s { low[i + d - 1 - s] } else { 0.0 };
            for i in s - d..=s {
                let mut v = 0.0;
                let a = t[i + d] - t[i];
                if a > 0.0 {
                    v += lower(i) / a;
                }
                let b = t[i + d + 1] - t[i + 1];
                if b > 0.0 {
                    v -= lower(i + 1) / b;
                }
                dv[i] = d as f64 * v;
            }
        }
    }

    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.num_functions];
        self.basis_into(x, &mut v, None);
        v
    }
}

/// Evaluates one edge function at `x`.
pub fn kan_edge_eval(coeffs: &[f64], grid: &SplineGrid, base_weight: f64, x: f64) -> f64 {
    assert_eq!(coeffs.len(), grid.num_functions, "coefficient count");
    let b = grid.basis(x);
    base_weight * silu(x) + coeffs.iter().zip(&b).map(|(c, v)| c * v).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayerParams {
    pub input_dim: usize,
    pub output_dim: usize,
    pub grid: SplineGrid,
    /// `output_dim × (input_dim · num_functions)`; row q, block p holds edge (q, p).
    pub coeffs: Matrix,
    /// `output_dim × input_dim`.
    pub base_weight: Matrix,
}

#[derive(Debug, Clone)]
pub(crate) struct KanCache {
    basis: Vec<f64>,
    dbasis: Vec<f64>,
    silu: Vec<f64>,
    dsilu: Vec<f64>,
}

impl KanLayerParams {
    pub fn zeros(input_dim: usize, output_dim: usize, grid: SplineGrid) -> Self {
        let k = grid.num_functions;
        Self {
            input_dim,
            output_dim,
            grid,
            coeffs: Matrix::zeros(output_dim, input_dim * k),
            base_weight: Matrix::zeros(output_dim, input_dim),
        }
    }

    /// Zero spline coefficients and `N(0, base_std²)` base weights.
    pub fn init(input_dim: usize, output_dim: usize, grid: SplineGrid, base_std: f64, rng: &mut SeededRng) -> Self {
        let mut p = Self::zeros(input_dim, output_dim, grid);
        p.base_weight = Matrix::from_vec(output_dim, input_dim, rng.normals(output_dim * input_dim, 0.0, base_std))
            .expect("sized above");
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.output_dim, self.grid.clone())
    }

    pub fn edge_coeffs(&self, q: usize, p: usize) -> &[f64] {
        let k = self.grid.num_functions;
        &self.coeffs.row(q)[p * k..(p + 1) * k]
    }

    pub fn edge_coeffs_mut(&mut self, q: usize, p: usize) -> &mut [f64] {
        let k = self.grid.num_functions;
        &mut self.coeffs.row_mut(q)[p * k..(p + 1) * k]
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, KanCache)> {
        if x.cols() != self.input_dim {
            return Err(shape_err!("KAN layer expects {} inputs, got {}", self.input_dim, x.cols()));
        }
        let (bl, n, k) = (x.rows(), self.input_dim, self.grid.num_functions);
        let mut basis = vec![0.0; bl * n * k];
        let mut dbasis = vec![0.0; bl * n * k];
        let mut su = vec![0.0; bl * n];
        let mut dsu = vec![0.0; bl * n];
        for (i, &v) in x.as_slice().iter().enumerate() {
            self.grid.basis_into(v, &mut basis[i * k..(i + 1) * k], Some(&mut dbasis[i * k..(i + 1) * k]));
            su[i] = silu(v);
            dsu[i] = silu_derivative(v);
        }
        let mut y = Matrix::zeros(bl, self.output_dim);
        gemm(1.0, MatRef::new(&basis, bl, n * k), self.coeffs.view().t(), 0.0, y.as_mut_slice());
        gemm(1.0, MatRef::new(&su, bl, n), self.base_weight.view().t(), 1.0, y.as_mut_slice());
        Ok((y, KanCache { basis, dbasis, silu: su, dsilu: dsu }))
    }

    pub(crate) fn backward(&self, cache: &KanCache, dy: &Matrix, grads: &mut KanLayerParams) -> Matrix {
        let (bl, n, k, m) = (dy.rows(), self.input_dim, self.grid.num_functions, self.output_dim);
        let dyr = dy.view();
        gemm(1.0, dyr.t(), MatRef::new(&cache.basis, bl, n * k), 1.0, grads.coeffs.as_mut_slice());
        gemm(1.0, dyr.t(), MatRef::new(&cache.silu, bl, n), 1.0, grads.base_weight.as_mut_slice());
        debug_assert_eq!(dy.cols(), m);
        let mut g = vec![0.0; bl * n * k];
        gemm(1.0, dyr, self.coeffs.view(), 0.0, &mut g);
        let mut gb = vec![0.0; bl * n];
        gemm(1.0, dyr, self.base_weight.view(), 0.0, &mut gb);
        let mut dx = Matrix::zeros(bl, n);
        for (i, o) in dx.as_mut_slice().iter_mut().enumerate() {
            let spl: f64 = g[i * k..(i + 1) * k].iter().zip(&cache.dbasis[i * k..(i + 1) * k]).map(|(a, b)| a * b).sum();
            *o = spl + gb[i] * cache.dsilu[i];
        }
        dx
    }
}

/// Applies one KAN layer: `output_q = Σ_p φ_{q,p}(x_p)` for every row of `x`.
pub fn kan_layer_forward(p: &KanLayerParams, x: &Matrix) -> Result<Matrix> {
    p.forward_cached(x).map(|(y, _)| y)
}
