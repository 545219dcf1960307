//! Critical regions of the planning LP in θ space.
//!
//! With objective perturbation the planning optimum is unique and its optimal
//! basis is dual feasible for every right-hand side. Where that basis stays
//! primal feasible the plan is affine in `ŷ`, hence in θ.

use nalgebra::DMatrix;

use super::{ExactError, KktInstance};
use crate::lp::{self, LpStatus, RowSense, VarStatus};

/// Relative tolerance for primal feasibility of a basis over a set of θ.
pub(crate) const REGION_TOL: f64 = 1e-9;

/// Half-space `c + g·θ ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cut {
    pub c: f64,
    pub g: Vec<f64>,
}

impl Cut {
    pub fn negated(&self) -> Cut {
        Cut { c: -self.c, g: self.g.iter().map(|v| -v).collect() }
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.c + self.g.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Largest value over the box.
    pub fn max_over_box(&self, lo: &[f64], hi: &[f64]) -> f64 {
        self.c + self.g.iter().enumerate().map(|(k, &v)| if v > 0.0 { v * hi[k] } else { v * lo[k] }).sum::<f64>()
    }

    pub fn tol(&self) -> f64 {
        REGION_TOL * (1.0 + self.c.abs())
    }
}

/// Planning solution `x(θ) = x_c + J (θ − θ_c)` of one optimal basis, with the
/// θ-dependent half-spaces on which that basis stays primal feasible.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Region {
    pub theta_c: Vec<f64>,
    pub x_c: Vec<f64>,
    /// `jac[j][d]`; all-zero rows for nonbasic columns.
    pub jac: Vec<Vec<f64>>,
    pub facets: Vec<Cut>,
}

impl Region {
    /// Constant and θ-gradient of `Σ_j w_j x_j(θ)`.
    pub fn affine(&self, weights: &[(usize, f64)]) -> (f64, Vec<f64>) {
        let d = self.theta_c.len();
        let mut grad = vec![0.0; d];
        let mut c = 0.0;
        for &(j, w) in weights {
            c += w * self.x_c[j];
            for k in 0..d {
                grad[k] += w * self.jac[j][k];
            }
        }
        c -= grad.iter().zip(&self.theta_c).map(|(g, t)| g * t).sum::<f64>();
        (c, grad)
    }

    pub fn covers_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        self.facets.iter().all(|f| f.max_over_box(lo, hi) <= f.tol())
    }
}

/// Region of the optimal planning basis of sample `t` at `theta`; `None` when the
/// basis keeps an artificial or a free nonbasic logical.
pub(crate) fn region_at(inst: &KktInstance<'_>, t: usize, theta: &[f64]) -> Result<Option<Region>, ExactError> {
    let d = theta.len();
    let y_c = inst.forecast(t, theta);
    let lp = inst.planning_lp(&y_c);
    let sol = lp::solve(&lp, None, &inst.model.options().perturbation)?;
    if sol.status != LpStatus::Optimal {
        return Err(ExactError::Relaxation { t, status: sol.status });
    }
    let Some(basis) = sol.basis else { return Ok(None) };
    let (m, n) = (lp.n_rows(), lp.n_cols());
    if basis.basic.iter().any(|&c| c >= n + m) || basis.status[n..].iter().any(|s| *s == VarStatus::Free) {
        return Ok(None);
    }
    let a = lp.matrix();
    let p = &inst.planning;
    let s = &inst.samples[t];
    // dθ of the right-hand side, one row per planning row.
    let rhs_grad: Vec<Vec<f64>> = p
        .sensitivity
        .iter()
        .map(|row| (0..d).map(|k| row.iter().map(|&(y, v)| v * s.gain[y][k]).sum()).collect())
        .collect();
    // [A I](x; s) = 0 with nonbasic logicals at −b(θ): B·dx_B = Σ_{nonbasic i} e_i·db_i.
    let bmat = DMatrix::from_fn(m, m, |i, r| {
        let c = basis.basic[r];
        if c < n {
            a.get(i, c)
        } else if c - n == i {
            1.0
        } else {
            0.0
        }
    });
    let rmat = DMatrix::from_fn(m, d, |i, k| if basis.status[n + i] == VarStatus::Basic { 0.0 } else { rhs_grad[i][k] });
    let Some(dxb) = bmat.lu().solve(&rmat) else { return Ok(None) };
    let mut jac = vec![vec![0.0; d]; n];
    for (r, &c) in basis.basic.iter().enumerate() {
        if c < n {
            for k in 0..d {
                jac[c][k] = dxb[(r, k)];
            }
        }
    }
    let mut region = Region { theta_c: theta.to_vec(), x_c: sol.x, jac, facets: Vec::new() };
    let mut facets = Vec::new();
    let mut push = |cut: Cut| {
        if cut.g.iter().any(|&v| v != 0.0) {
            facets.push(cut);
        }
    };
    for j in 0..n {
        if region.jac[j].iter().all(|&v| v == 0.0) {
            continue;
        }
        let (c, g) = region.affine(&[(j, 1.0)]);
        if lp.upper[j].is_finite() {
            push(Cut { c: c - lp.upper[j], g: g.clone() });
        }
        if lp.lower[j].is_finite() {
            push(Cut { c: lp.lower[j] - c, g: g.iter().map(|v| -v).collect() });
        }
    }
    // Rows with a nonbasic logical stay tight for every θ.
    for i in (0..m).filter(|&i| basis.status[n + i] == VarStatus::Basic) {
        let w: Vec<(usize, f64)> = (0..n).filter(|&j| a.get(i, j) != 0.0).map(|j| (j, a.get(i, j))).collect();
        let (mut c, mut g) = region.affine(&w);
        // Residual a·x(θ) − b(θ) with b(θ) = b0 + S·offset + (S·gain)·θ.
        c -= p.lp.rhs[i] + p.sensitivity[i].iter().map(|&(y, v)| v * s.offset[y]).sum::<f64>();
        for k in 0..d {
            g[k] -= rhs_grad[i][k];
        }
        let cut = Cut { c, g };
        match p.lp.senses[i] {
            RowSense::Le => push(cut),
            RowSense::Ge => push(cut.negated()),
            RowSense::Eq => {
                push(cut.negated());
                push(cut);
            }
        }
    }
    region.facets = facets;
    Ok(Some(region))
}

/// Region of sample `t` covering the whole box, from the basis at its center.
pub(crate) fn region_covering(inst: &KktInstance<'_>, t: usize, lo: &[f64], hi: &[f64]) -> Result<Option<Region>, ExactError> {
    let center: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    Ok(region_at(inst, t, &center)?.filter(|r| r.covers_box(lo, hi)))
}
