//! Operator-splitting ADMM for convex QPs
//!
//! ```text
//! minimize    ½ xᵀPx + qᵀx
//! subject to  l ≤ Ax ≤ u
//! ```
//!
//! The iteration splits the decision variable from the constraint slack
//! `z = Ax`, solves one quasi-definite KKT system per step with a cached
//! LDLᵀ factor, and projects the slack onto `[l, u]`. The problem is
//! Ruiz-equilibrated before solving and all reported quantities are in the
//! original scaling.

use serde::{Deserialize, Serialize};

use super::ldl::{LdlError, LdlFactor};
use crate::sparse::CscMatrix;

/// Proximal regularization on the decision variable.
const SIGMA: f64 = 1e-6;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
/// Penalty multiplier for equality rows (`l == u`).
const RHO_EQ_SCALE: f64 = 1e3;
const SCALING_MIN: f64 = 1e-4;
const SCALING_MAX: f64 = 1e4;
const POLISH_DELTA: f64 = 1e-6;
const POLISH_REFINE: usize = 5;
const EPS_PRIM_INF: f64 = 1e-7;

/// Canonical QP. `p` holds the full symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QpProblem {
    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * dot(x, &px) + dot(&self.q, x)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.l.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmSettings {
    /// Initial ADMM penalty.
    pub penalty: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Ruiz equilibration passes.
    pub scaling_iters: usize,
    pub polish: bool,
    /// Iterations between penalty re-balancing checks.
    pub adaptive_interval: usize,
    /// Over-relaxation factor in (0, 2).
    pub relaxation: f64,
    /// Termination is checked every this many iterations.
    pub check_interval: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            penalty: 0.1,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20_000,
            scaling_iters: 10,
            polish: true,
            adaptive_interval: 50,
            relaxation: 1.6,
            check_interval: 5,
        }
    }
}

impl AdmmSettings {
    pub fn validate(&self) -> Result<(), AdmmError> {
        let ok = self.penalty > 0.0
            && self.eps_abs > 0.0
            && self.eps_rel > 0.0
            && self.max_iter >= 1
            && self.relaxation > 0.0
            && self.relaxation < 2.0
            && self.check_interval >= 1;
        if ok {
            Ok(())
        } else {
            Err(AdmmError::Settings)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdmmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid solver settings")]
    Settings,
    #[error("KKT factorization failed: {0}")]
    Factor(#[from] LdlError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Constraint duals, positive on upper-active rows.
    pub y: Vec<f64>,
    /// `Ax` projected onto the bounds.
    pub z: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
    pub penalty_updates: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

struct Scaled {
    p: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    /// Variable scaling D.
    d: Vec<f64>,
    /// Constraint scaling E.
    e: Vec<f64>,
    /// Cost scaling c.
    c: f64,
}

fn clamp_scale(norm: f64) -> f64 {
    if norm < SCALING_MIN {
        1.0
    } else {
        1.0 / norm.clamp(SCALING_MIN, SCALING_MAX).sqrt()
    }
}

fn ruiz(qp: &QpProblem, passes: usize) -> Scaled {
    let (n, m) = (qp.num_vars(), qp.num_constraints());
    let mut p = qp.p.clone();
    let mut a = qp.a.clone();
    let mut q = qp.q.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    for _ in 0..passes {
        let pn = p.col_inf_norms();
        let an = a.col_inf_norms();
        let dd: Vec<f64> = (0..n).map(|j| clamp_scale(pn[j].max(an[j]))).collect();
        let de: Vec<f64> = a.row_inf_norms().into_iter().map(clamp_scale).collect();
        p.scale_rows_cols(&dd, &dd);
        a.scale_rows_cols(&de, &dd);
        for j in 0..n {
            q[j] *= dd[j];
            d[j] *= dd[j];
        }
        for i in 0..m {
            e[i] *= de[i];
        }
        // Cost scaling.
        let pn = p.col_inf_norms();
        let mean = if n > 0 { pn.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let norm = mean.max(inf_norm(&q));
        let gamma = if norm < SCALING_MIN {
            1.0
        } else {
            1.0 / norm.clamp(SCALING_MIN, SCALING_MAX)
        };
        p = p.scale(gamma);
        q.iter_mut().for_each(|v| *v *= gamma);
        c *= gamma;
    }
    let l = qp.l.iter().zip(&e).map(|(v, s)| v * s).collect();
    let u = qp.u.iter().zip(&e).map(|(v, s)| v * s).collect();
    Scaled { p, q, a, l, u, d, e, c }
}

fn kkt_upper(p: &CscMatrix, a: &CscMatrix, sigma: f64, rho: &[f64]) -> CscMatrix {
    let (n, m) = (p.ncols, a.nrows);
    let mut trip: Vec<(usize, usize, f64)> = p.triplets().filter(|&(r, c, _)| r <= c).collect();
    trip.extend((0..n).map(|j| (j, j, sigma)));
    // Column n+i of the upper triangle holds row i of A.
    trip.extend(a.triplets().map(|(i, j, v)| (j, n + i, v)));
    trip.extend((0..m).map(|i| (n + i, n + i, -1.0 / rho[i])));
    CscMatrix::from_triplets(n + m, n + m, &trip)
}

fn rho_vector(rho: f64, l: &[f64], u: &[f64]) -> Vec<f64> {
    l.iter()
        .zip(u)
        .map(|(lo, hi)| if (hi - lo).abs() < 1e-12 { RHO_EQ_SCALE * rho } else { rho })
        .collect()
}

/// Residuals and tolerances in the original problem scaling.
struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
    /// Normalized ratios used by penalty re-balancing.
    prim_rel: f64,
    dual_rel: f64,
}

fn residuals(s: &Scaled, x: &[f64], z: &[f64], y: &[f64], eps_abs: f64, eps_rel: f64) -> Residuals {
    let ax = s.a.mul_vec(x);
    let px = s.p.mul_vec(x);
    let aty = s.a.tr_mul_vec(y);
    // Unscale: Ax - z -> E^-1 (...), dual -> c^-1 D^-1 (...).
    let prim_v: Vec<f64> = (0..z.len()).map(|i| (ax[i] - z[i]) / s.e[i]).collect();
    let ax_u: Vec<f64> = (0..z.len()).map(|i| ax[i] / s.e[i]).collect();
    let z_u: Vec<f64> = (0..z.len()).map(|i| z[i] / s.e[i]).collect();
    let dual_v: Vec<f64> = (0..x.len()).map(|j| (px[j] + s.q[j] + aty[j]) / (s.c * s.d[j])).collect();
    let px_u: Vec<f64> = (0..x.len()).map(|j| px[j] / (s.c * s.d[j])).collect();
    let aty_u: Vec<f64> = (0..x.len()).map(|j| aty[j] / (s.c * s.d[j])).collect();
    let q_u: Vec<f64> = (0..x.len()).map(|j| s.q[j] / (s.c * s.d[j])).collect();

    let prim = inf_norm(&prim_v);
    let dual = inf_norm(&dual_v);
    let prim_scale = inf_norm(&ax_u).max(inf_norm(&z_u));
    let dual_scale = inf_norm(&px_u).max(inf_norm(&aty_u)).max(inf_norm(&q_u));

    // Re-balancing works on scaled quantities.
    let prim_s = (0..z.len()).fold(0.0_f64, |m, i| m.max((ax[i] - z[i]).abs()));
    let dual_s = (0..x.len()).fold(0.0_f64, |m, j| m.max((px[j] + s.q[j] + aty[j]).abs()));
    let prim_rel = prim_s / inf_norm(&ax).max(inf_norm(z)).max(1e-10);
    let dual_rel = dual_s / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)).max(1e-10);
    Residuals {
        prim,
        dual,
        eps_prim: eps_abs + eps_rel * prim_scale,
        eps_dual: eps_abs + eps_rel * dual_scale,
        prim_rel,
        dual_rel,
    }
}

/// Primal infeasibility certificate test on a dual increment.
fn is_primal_infeasible(s: &Scaled, dy: &[f64]) -> bool {
    let norm_dy = (0..dy.len()).fold(0.0_f64, |m, i| m.max((dy[i] * s.e[i]).abs()));
    if norm_dy < 1e-12 {
        return false;
    }
    let aty = s.a.tr_mul_vec(dy);
    let aty_norm = (0..aty.len()).fold(0.0_f64, |m, j| m.max((aty[j] / s.d[j]).abs()));
    let support: f64 = dy
        .iter()
        .enumerate()
        .map(|(i, &v)| if v > 0.0 { s.u[i] * v } else { s.l[i] * v })
        .sum();
    aty_norm <= EPS_PRIM_INF * norm_dy && support < -EPS_PRIM_INF * norm_dy
}

pub fn solve(qp: &QpProblem, settings: &AdmmSettings) -> Result<QpSolution, AdmmError> {
    settings.validate()?;
    let (n, m) = (qp.num_vars(), qp.num_constraints());
    if qp.p.nrows != n || qp.p.ncols != n || qp.a.ncols != n || qp.a.nrows != m || qp.u.len() != m {
        return Err(AdmmError::Dimension(format!(
            "P {}x{}, q {}, A {}x{}, l {}, u {}",
            qp.p.nrows,
            qp.p.ncols,
            n,
            qp.a.nrows,
            qp.a.ncols,
            m,
            qp.u.len()
        )));
    }
    if let Some(i) = (0..m).find(|&i| qp.l[i] > qp.u[i]) {
        log::warn!("constraint {i} has l > u; problem is infeasible");
        return Ok(QpSolution {
            x: vec![0.0; n],
            y: vec![0.0; m],
            z: vec![0.0; m],
            status: SolveStatus::Infeasible,
            iterations: 0,
            objective: f64::NAN,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            polished: false,
            penalty_updates: 0,
        });
    }

    let s = ruiz(qp, settings.scaling_iters);
    let mut rho_scalar = settings.penalty;
    let mut rho = rho_vector(rho_scalar, &s.l, &s.u);
    let mut factor = LdlFactor::factor(&kkt_upper(&s.p, &s.a, SIGMA, &rho))?;
    let alpha = settings.relaxation;

    let mut x = vec![0.0; n];
    let mut z = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut rhs = vec![0.0; n + m];
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut penalty_updates = 0;
    let mut last_res = None;

    for k in 1..=settings.max_iter {
        iterations = k;
        for j in 0..n {
            rhs[j] = SIGMA * x[j] - s.q[j];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / rho[i];
        }
        factor.solve_in_place(&mut rhs);
        let y_prev = if k % settings.check_interval == 0 { Some(y.clone()) } else { None };
        for j in 0..n {
            x[j] = alpha * rhs[j] + (1.0 - alpha) * x[j];
        }
        for i in 0..m {
            let nu = rhs[n + i];
            let z_tilde = z[i] + (nu - y[i]) / rho[i];
            let z_relaxed = alpha * z_tilde + (1.0 - alpha) * z[i];
            let z_new = (z_relaxed + y[i] / rho[i]).clamp(s.l[i], s.u[i]);
            y[i] += rho[i] * (z_relaxed - z_new);
            z[i] = z_new;
        }

        if let Some(y_prev) = y_prev {
            let res = residuals(&s, &x, &z, &y, settings.eps_abs, settings.eps_rel);
            if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
                status = SolveStatus::Solved;
                last_res = Some(res);
                break;
            }
            let dy: Vec<f64> = y.iter().zip(&y_prev).map(|(a, b)| a - b).collect();
            if is_primal_infeasible(&s, &dy) {
                status = SolveStatus::Infeasible;
                last_res = Some(res);
                break;
            }
            last_res = Some(res);
        }

        if settings.adaptive_interval > 0 && k % settings.adaptive_interval == 0 {
            let res = residuals(&s, &x, &z, &y, settings.eps_abs, settings.eps_rel);
            let ratio = (res.prim_rel / res.dual_rel.max(1e-10)).sqrt();
            let proposed = (rho_scalar * ratio).clamp(RHO_MIN, RHO_MAX);
            if proposed > 5.0 * rho_scalar || proposed < rho_scalar / 5.0 {
                rho_scalar = proposed;
                rho = rho_vector(rho_scalar, &s.l, &s.u);
                factor = LdlFactor::factor(&kkt_upper(&s.p, &s.a, SIGMA, &rho))?;
                penalty_updates += 1;
            }
        }
    }
    let res = last_res.unwrap_or_else(|| residuals(&s, &x, &z, &y, settings.eps_abs, settings.eps_rel));

    // Back to the original scaling.
    let mut x_u: Vec<f64> = (0..n).map(|j| x[j] * s.d[j]).collect();
    let mut y_u: Vec<f64> = (0..m).map(|i| y[i] * s.e[i] / s.c).collect();
    let mut z_u: Vec<f64> = (0..m).map(|i| z[i] / s.e[i]).collect();
    let (mut prim, mut dual) = (res.prim, res.dual);
    let mut polished = false;

    if settings.polish && status != SolveStatus::Infeasible {
        if let Some(p) = polish(qp, &y_u, &z_u) {
            let (pp, pd) = unscaled_residuals(qp, &p.0, &p.1);
            if pp <= prim.max(res.eps_prim) && pd <= dual.max(res.eps_dual) {
                x_u = p.0;
                y_u = p.1;
                z_u =
                    qp.a.mul_vec(&x_u)
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v.clamp(qp.l[i], qp.u[i]))
                        .collect();
                prim = pp;
                dual = pd;
                polished = true;
                if status == SolveStatus::MaxIter && pp <= res.eps_prim && pd <= res.eps_dual {
                    status = SolveStatus::Solved;
                }
            }
        }
    }

    Ok(QpSolution {
        objective: qp.objective(&x_u),
        x: x_u,
        y: y_u,
        z: z_u,
        status,
        iterations,
        primal_residual: prim,
        dual_residual: dual,
        polished,
        penalty_updates,
    })
}

/// Bound violation of `Ax` and stationarity residual, both ∞-norms.
pub fn unscaled_residuals(qp: &QpProblem, x: &[f64], y: &[f64]) -> (f64, f64) {
    let ax = qp.a.mul_vec(x);
    let prim = ax
        .iter()
        .enumerate()
        .fold(0.0_f64, |acc, (i, &v)| acc.max(qp.l[i] - v).max(v - qp.u[i]));
    let px = qp.p.mul_vec(x);
    let aty = qp.a.tr_mul_vec(y);
    let dual = (0..x.len()).fold(0.0_f64, |acc, j| acc.max((px[j] + qp.q[j] + aty[j]).abs()));
    (prim, dual)
}

/// Solves the equality-constrained QP on the active set guessed from the
/// ADMM duals, with iterative refinement against the unregularized system.
fn polish(qp: &QpProblem, y: &[f64], z: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (qp.num_vars(), qp.num_constraints());
    let mut active = Vec::new();
    let mut target = Vec::new();
    for i in 0..m {
        if z[i] - qp.l[i] < -y[i] {
            active.push(i);
            target.push(qp.l[i]);
        } else if qp.u[i] - z[i] < y[i] {
            active.push(i);
            target.push(qp.u[i]);
        }
    }
    let k = active.len();
    let row_map: std::collections::HashMap<usize, usize> = active.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let a_red_trip: Vec<(usize, usize, f64)> =
        qp.a.triplets()
            .filter_map(|(i, j, v)| row_map.get(&i).map(|&r| (r, j, v)))
            .collect();
    let a_red = CscMatrix::from_triplets(k, n, &a_red_trip);

    let reg = vec![1.0 / POLISH_DELTA; k];
    let kkt = kkt_upper(&qp.p, &a_red, POLISH_DELTA, &reg);
    let factor = LdlFactor::factor(&kkt).ok()?;

    let b: Vec<f64> = qp.q.iter().map(|v| -v).chain(target.iter().copied()).collect();
    let mut sol = b.clone();
    factor.solve_in_place(&mut sol);
    for _ in 0..POLISH_REFINE {
        // Residual of the exact (unregularized) KKT system.
        let (xs, ys) = sol.split_at(n);
        let px = qp.p.mul_vec(xs);
        let aty = a_red.tr_mul_vec(ys);
        let ax = a_red.mul_vec(xs);
        let mut r: Vec<f64> = (0..n).map(|j| b[j] - px[j] - aty[j]).collect();
        r.extend((0..k).map(|i| b[n + i] - ax[i]));
        factor.solve_in_place(&mut r);
        sol.iter_mut().zip(&r).for_each(|(s, d)| *s += d);
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x_pol = sol[..n].to_vec();
    let mut y_pol = vec![0.0; m];
    for (r, &i) in active.iter().enumerate() {
        y_pol[i] = sol[n + r];
    }
    Some((x_pol, y_pol))
}
