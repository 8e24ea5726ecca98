use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::admm::{self, AdmmSettings, SolveStatus};
use super::problem::FlowProblem;
use super::FlowError;
use crate::netmodel::{IncidenceSet, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub tod: u8,
    /// Path flows.
    pub y: Vec<f64>,
    /// OD flows, `Φy`.
    pub x: Vec<f64>,
    /// Link flows, `Ωy`.
    pub z: Vec<f64>,
    /// Value of the full objective including its constant part.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

pub fn recover_flows(y: &[f64], incidence: &IncidenceSet) -> (Vec<f64>, Vec<f64>) {
    (incidence.phi.mul_vec(y), incidence.omega.mul_vec(y))
}

pub fn solve_flow(problem: &FlowProblem, settings: &AdmmSettings) -> Result<FlowSolution, FlowError> {
    let asm = problem.build_qp()?;
    let sol = admm::solve(&asm.qp, settings)?;
    let m = problem.num_paths();
    let y = if sol.status == SolveStatus::Infeasible {
        sol.x
    } else {
        restore_feasibility(problem, sol.x)
    };
    let (x, z) = recover_flows(&y, &problem.incidence);
    let objective = if sol.status == SolveStatus::Infeasible {
        f64::NAN
    } else {
        problem.objective(&y)
    };
    debug_assert_eq!(y.len(), m);
    Ok(FlowSolution {
        tod: problem.tod,
        y,
        x,
        z,
        objective,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        status: sol.status,
        iterations: sol.iterations,
    })
}

/// Pulls an approximately feasible path flow into the feasible set: clip to
/// the path box, then shrink uniformly until every OD and link row is within
/// its upper bound. Valid because both incidence matrices are non-negative
/// and every lower bound is zero.
pub fn restore_feasibility(problem: &FlowProblem, mut y: Vec<f64>) -> Vec<f64> {
    for (v, b) in y.iter_mut().zip(&problem.path_upper) {
        *v = v.clamp(0.0, *b);
    }
    let (x, z) = recover_flows(&y, &problem.incidence);
    let mut shrink = 1.0_f64;
    for (v, b) in x.iter().zip(&problem.od_upper).chain(z.iter().zip(&problem.link_upper)) {
        if *v > *b {
            shrink = shrink.min(b / v);
        }
    }
    if shrink < 1.0 {
        y.iter_mut().for_each(|v| *v *= shrink);
    }
    y
}

/// Rounded path flows and the total-trip drift introduced by rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundedFlows {
    pub y: Vec<u64>,
    pub drift: f64,
}

/// Half-up rounding, then clamping into `[0, floor(β)]`.
pub fn round_path_flows(y: &[f64], path_upper: &[f64]) -> RoundedFlows {
    let rounded: Vec<u64> = y
        .iter()
        .zip(path_upper)
        .map(|(&v, &b)| {
            let r = (v + 0.5).floor().max(0.0);
            r.min(b.floor().max(0.0)) as u64
        })
        .collect();
    let drift = (rounded.iter().sum::<u64>() as f64 - y.iter().sum::<f64>()).abs();
    RoundedFlows { y: rounded, drift }
}

/// Solves every interval independently; a failing interval does not affect
/// the others. Results keep the input order.
pub fn estimate_all_tods(problems: &[FlowProblem], settings: &AdmmSettings) -> Vec<Result<FlowSolution, FlowError>> {
    problems.par_iter().map(|p| solve_flow(p, settings)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TodReport {
    pub tod: u8,
    pub status: Option<SolveStatus>,
    pub objective: Option<f64>,
    pub primal_residual: Option<f64>,
    pub dual_residual: Option<f64>,
    pub iterations: Option<usize>,
    pub total_trips_prior: f64,
    pub total_trips_estimated: Option<f64>,
    pub rounding_drift: Option<f64>,
    pub error: Option<String>,
}

pub fn tod_report(problem: &FlowProblem, result: &Result<FlowSolution, FlowError>) -> TodReport {
    match result {
        Ok(s) => TodReport {
            tod: s.tod,
            status: Some(s.status),
            objective: s.objective.is_finite().then_some(s.objective),
            primal_residual: s.primal_residual.is_finite().then_some(s.primal_residual),
            dual_residual: s.dual_residual.is_finite().then_some(s.dual_residual),
            iterations: Some(s.iterations),
            total_trips_prior: problem.total_trips,
            total_trips_estimated: Some(s.x.iter().sum()),
            rounding_drift: Some(round_path_flows(&s.y, &problem.path_upper).drift),
            error: None,
        },
        Err(e) => TodReport {
            tod: problem.tod,
            status: None,
            objective: None,
            primal_residual: None,
            dual_residual: None,
            iterations: None,
            total_trips_prior: problem.total_trips,
            total_trips_estimated: None,
            rounding_drift: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn write_path_flows<W: Write>(solution: &FlowSolution, path_upper: &[f64], incidence: &IncidenceSet, out: W) -> Result<(), FlowError> {
    let rounded = round_path_flows(&solution.y, path_upper);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "y_float", "y_int"])?;
    for (m, id) in incidence.path_ids.iter().enumerate() {
        w.write_record([id.0.to_string(), solution.y[m].to_string(), rounded.y[m].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_od_flows<W: Write>(solution: &FlowSolution, incidence: &IncidenceSet, out: W) -> Result<(), FlowError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["zone_o", "zone_d", "x"])?;
    for (n, od) in incidence.od_pairs.iter().enumerate() {
        w.write_record([od.origin.0.to_string(), od.destination.0.to_string(), solution.x[n].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_link_flows<W: Write>(solution: &FlowSolution, network: &Network, out: W) -> Result<(), FlowError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["link_id", "z"])?;
    for (e, link) in network.links().iter().enumerate() {
        w.write_record([link.id.clone(), solution.z[e].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowest::problem::tests::tiny_problem;

    #[test]
    fn restoration_meets_every_upper_bound() {
        let mut p = tiny_problem();
        p.path_upper = vec![5.0, 5.0];
        p.od_upper = vec![8.0];
        p.link_upper = vec![10.0, 10.0, 10.0];
        let y = restore_feasibility(&p, vec![5.0 + 1e-4, 4.0]);
        let (x, _) = recover_flows(&y, &p.incidence);
        assert!((y[0] / y[1] - 1.25).abs() < 1e-12);
        assert!(x[0] <= 8.0 && (x[0] - 8.0).abs() < 1e-12);
        assert_eq!(restore_feasibility(&p, vec![1.0, -0.5]), vec![1.0, 0.0]);
        assert_eq!(restore_feasibility(&p, vec![2.0, 3.0]), vec![2.0, 3.0]);
    }

    #[test]
    fn recover_simple_sums() {
        let p = tiny_problem();
        let (x, z) = recover_flows(&[3.0, 4.0], &p.incidence);
        assert_eq!(x, vec![7.0]);
        assert_eq!(z, vec![3.0, 4.0, 7.0]);
        let (x0, z0) = recover_flows(&[0.0, 0.0], &p.incidence);
        assert!(x0.iter().chain(&z0).all(|v| *v == 0.0));
    }

    #[test]
    fn rounding_convention() {
        assert_eq!(round_path_flows(&[2.4, 2.6], &[10.0, 10.0]).y, vec![2, 3]);
        assert_eq!(round_path_flows(&[7.5], &[7.0]).y, vec![7]);
        assert_eq!(round_path_flows(&[0.5, -1e-9], &[9.0, 9.0]).y, vec![1, 0]);
    }

    #[test]
    fn zero_prior_gives_zero_flow() {
        let mut p = tiny_problem();
        p.total_trips = 0.0;
        p.link_prior = vec![0.0; 3];
        let s = solve_flow(&p, &AdmmSettings::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Solved);
        assert!(s.y.iter().all(|v| v.abs() < 1e-6));
        assert!(s.objective.abs() < 1e-9);
    }

    #[test]
    fn isolated_failures() {
        let good = tiny_problem();
        let mut bad = tiny_problem();
        bad.link_upper[2] = -1.0;
        let problems = vec![good.clone(), bad, good.clone(), good.clone(), good.clone(), good];
        let out = estimate_all_tods(&problems, &AdmmSettings::default());
        assert_eq!(
            out.iter().filter(|r| matches!(r, Ok(s) if s.status == SolveStatus::Solved)).count(),
            5
        );
        assert!(out[1].is_err());
        let reports: Vec<_> = problems.iter().zip(&out).map(|(p, r)| tod_report(p, r)).collect();
        assert!(reports[1].error.is_some());
    }

    #[test]
    fn identical_problems_identical_solutions() {
        let problems = vec![tiny_problem(); 6];
        let out = estimate_all_tods(&problems, &AdmmSettings::default());
        let first = out[0].as_ref().unwrap();
        for r in &out {
            assert_eq!(r.as_ref().unwrap(), first);
        }
    }

    #[test]
    fn csv_exports() {
        let p = tiny_problem();
        let s = solve_flow(&p, &AdmmSettings::default()).unwrap();
        let mut buf = Vec::new();
        write_path_flows(&s, &p.path_upper, &p.incidence, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path_id,y_float,y_int\n0,"));
        let mut buf = Vec::new();
        write_od_flows(&s, &p.incidence, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("zone_o,zone_d,x\n0,1,"));
    }
}
