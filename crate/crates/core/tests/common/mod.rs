//! Instance generators and reference solvers shared by integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use mesocal::flowest::{FlowProblem, QpProblem};
use mesocal::netmodel::{IncidenceSet, OdPair, PathId};
use mesocal::sparse::CscMatrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random flow problem with `N ≤ max_od`, `M ≤ max_paths`, `E ≤ max_links`.
/// Bounds are drawn so that a fair share of them bind.
pub fn random_flow_problem<R: Rng>(rng: &mut R, max_od: usize, max_paths: usize, max_links: usize) -> FlowProblem {
    let n = rng.random_range(1..=max_od);
    let m = rng.random_range(n..=max_paths.max(n));
    let e = rng.random_range(1..=max_links);
    let od_of: Vec<usize> = (0..m).map(|j| if j < n { j } else { rng.random_range(0..n) }).collect();

    let mut phi = Vec::new();
    let mut omega = Vec::new();
    let mut psi = Vec::new();
    let density = rng.random_range(0.05..0.4);
    for j in 0..m {
        phi.push((od_of[j], j, 1.0));
        let mut any = false;
        for l in 0..e {
            if rng.random::<f64>() < density {
                omega.push((l, j, 1.0));
                psi.push((j, l, 100.0));
                any = true;
            }
        }
        if !any {
            let l = rng.random_range(0..e);
            omega.push((l, j, 1.0));
            psi.push((j, l, 100.0));
        }
    }

    let mut g = Vec::new();
    for od in 0..n {
        if rng.random::<f64>() < 0.1 {
            continue;
        }
        let paths: Vec<usize> = (0..m).filter(|&j| od_of[j] == od).collect();
        let mut w: Vec<f64> = paths
            .iter()
            .map(|_| {
                if rng.random::<f64>() < 0.2 {
                    0.0
                } else {
                    rng.random_range(0.1..1.0)
                }
            })
            .collect();
        if w.iter().all(|v| *v == 0.0) {
            w[0] = 1.0;
        }
        let s: f64 = w.iter().sum();
        for (k, &j) in paths.iter().enumerate() {
            if w[k] > 0.0 {
                g.push((j, od, w[k] / s));
            }
        }
    }

    let total = rng.random_range(50.0..2000.0);
    let mut weights = vec![0.0; e];
    let mut prior = vec![0.0; e];
    for l in 0..e {
        if rng.random::<f64>() < 0.35 {
            weights[l] = rng.random_range(0.2..1.0);
            prior[l] = rng.random_range(0.0..total / n as f64);
        }
    }
    let od_upper: Vec<f64> = (0..n).map(|_| total * rng.random_range(0.05..1.0)).collect();
    let path_upper = (0..m).map(|j| od_upper[od_of[j]] * rng.random_range(0.1..1.0)).collect();
    let link_upper = (0..e).map(|_| total * rng.random_range(0.05..1.0)).collect();

    let incidence = IncidenceSet {
        od_pairs: (0..n as u32).map(|i| OdPair::new(i, i + 1000)).collect(),
        path_ids: (0..m as u32).map(PathId).collect(),
        phi: CscMatrix::from_triplets(n, m, &phi),
        omega: CscMatrix::from_triplets(e, m, &omega),
        psi_len: CscMatrix::from_triplets(m, e, &psi),
    };
    FlowProblem {
        tod: 2,
        incidence: Arc::new(incidence),
        assignment: CscMatrix::from_triplets(m, n, &g),
        link_weights: weights,
        total_trips: total,
        link_prior: prior,
        gamma: rng.random_range(0.0..2.0),
        rho: rng.random_range(0.0..2.0),
        od_upper,
        path_upper,
        link_upper,
    }
}

fn dense(m: &CscMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows, m.ncols);
    for (r, c, v) in m.triplets() {
        d[(r, c)] = v;
    }
    d
}

pub fn qp_objective(qp: &QpProblem, x: &[f64]) -> f64 {
    let p = dense(&qp.p);
    let xv = DVector::from_column_slice(x);
    0.5 * xv.dot(&(&p * &xv)) + DVector::from_column_slice(&qp.q).dot(&xv)
}

pub fn min_eigenvalue(m: &CscMatrix) -> f64 {
    let d = dense(m);
    d.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Exhaustive active-set oracle: every row is free, at its lower bound or
/// at its upper bound. Each choice gives an equality-constrained QP solved
/// through its dense KKT system; the best feasible stationary point wins.
/// Only usable for a handful of constraint rows.
pub fn enumerate_active_sets(qp: &QpProblem) -> (Vec<f64>, f64) {
    let n = qp.q.len();
    let rows = qp.l.len();
    assert!(rows <= 12, "enumeration oracle is exponential in the row count");
    let p = dense(&qp.p);
    let a = dense(&qp.a);
    let q = DVector::from_column_slice(&qp.q);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let total = 3usize.pow(rows as u32);
    for code in 0..total {
        let mut c = code;
        let mut active = Vec::new();
        for i in 0..rows {
            match c % 3 {
                1 => active.push((i, qp.l[i])),
                2 => active.push((i, qp.u[i])),
                _ => {}
            }
            c /= 3;
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&q));
        for (r, &(i, b)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = b;
        }
        let svd = kkt.clone().svd(true, true);
        let Ok(sol) = svd.solve(&rhs, 1e-10) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-7 * (1.0 + rhs.amax()) {
            continue;
        }
        let x: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let ax = &a * DVector::from_column_slice(&x);
        let feasible = (0..rows).all(|i| {
            let tol = 1e-9 * (1.0 + qp.u[i].abs());
            ax[i] >= qp.l[i] - tol && ax[i] <= qp.u[i] + tol
        });
        if !feasible {
            continue;
        }
        let f = qp_objective(qp, &x);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    best.expect("a feasible QP has at least one feasible KKT point")
}

/// Interior-point reference solution.
pub fn interior_point(qp: &QpProblem) -> (Vec<f64>, f64) {
    use clarabel::algebra::CscMatrix as ClCsc;
    use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus};

    let n = qp.q.len();
    // Objective scaled to unit magnitude for the interior-point method.
    let scale = qp.q.iter().chain(&qp.p.values).fold(1.0_f64, |m, v| m.max(v.abs()));
    let up = qp.p.upper_triangle();
    let pv: Vec<f64> = up.values.iter().map(|v| v / scale).collect();
    let qv: Vec<f64> = qp.q.iter().map(|v| v / scale).collect();
    let p = ClCsc::new(n, n, up.colptr.clone(), up.rowind.clone(), pv);
    // l ≤ Ax ≤ u  as  [A; −A] x + s = [u; −l], s ≥ 0.
    let stacked = qp.a.vstack(&qp.a.scale(-1.0));
    let a = ClCsc::new(
        stacked.nrows,
        n,
        stacked.colptr.clone(),
        stacked.rowind.clone(),
        stacked.values.clone(),
    );
    let b: Vec<f64> = qp.u.iter().copied().chain(qp.l.iter().map(|v| -v)).collect();
    let cones = [NonnegativeConeT(b.len())];
    // Tight tolerances first; a stalled run is retried looser, still far
    // below the accuracy the comparisons need.
    let mut status = SolverStatus::Unsolved;
    for tol in [1e-11, 1e-9, 1e-8] {
        let settings = DefaultSettings {
            verbose: false,
            tol_gap_abs: tol,
            tol_gap_rel: tol,
            tol_feas: tol,
            max_iter: 500,
            ..Default::default()
        };
        let mut solver = DefaultSolver::new(&p, &qv, &a, &b, &cones, settings).expect("valid reference problem");
        solver.solve();
        status = solver.solution.status;
        if matches!(status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
            let x = solver.solution.x.clone();
            let f = qp_objective(qp, &x);
            return (x, f);
        }
    }
    panic!("reference solver status {status:?}");
}
