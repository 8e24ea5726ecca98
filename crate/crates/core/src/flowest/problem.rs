use std::collections::BTreeMap;
use std::sync::Arc;

use super::admm::QpProblem;
use super::FlowError;
use crate::netmodel::{IncidenceSet, LinkIdx, Network, TodInterval};
use crate::sparse::CscMatrix;

pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_RHO: f64 = 1.0;

/// Path-flow estimation problem for one time-of-day interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProblem {
    pub tod: u8,
    pub incidence: Arc<IncidenceSet>,
    /// M×N assignment shares.
    pub assignment: CscMatrix,
    /// Diagonal of the link confidence weights (length E).
    pub link_weights: Vec<f64>,
    /// Prior on the regional trip total.
    pub total_trips: f64,
    /// Zero-padded link-flow prior (length E).
    pub link_prior: Vec<f64>,
    /// Weight of the assignment-consistency term.
    pub gamma: f64,
    /// Weight of the link-flow term.
    pub rho: f64,
    pub od_upper: Vec<f64>,
    pub path_upper: Vec<f64>,
    pub link_upper: Vec<f64>,
}

/// The QP together with the constant dropped from its objective.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledQp {
    pub qp: QpProblem,
    pub constant: f64,
}

impl FlowProblem {
    /// Problem with default bounds and weights. OD bounds equal the trip
    /// total, path bounds equal their OD's bound, link bounds are capacity
    /// over the interval, and measured links get unit weight.
    pub fn with_defaults(
        network: &Network,
        incidence: Arc<IncidenceSet>,
        interval: &TodInterval,
        assignment: CscMatrix,
        total_trips: f64,
        link_counts: &BTreeMap<LinkIdx, f64>,
    ) -> Self {
        let e = incidence.num_links();
        let mut link_weights = vec![0.0; e];
        let mut link_prior = vec![0.0; e];
        for (&l, &count) in link_counts {
            if l.0 < e {
                link_weights[l.0] = 1.0;
                link_prior[l.0] = count;
            }
        }
        let od_upper = vec![total_trips.max(0.0); incidence.num_od()];
        let path_upper = (0..incidence.num_paths()).map(|m| od_upper[incidence.od_of_path(m)]).collect();
        let link_upper = network.links().iter().map(|l| l.capacity_bound(interval.hours())).collect();
        Self {
            tod: interval.index,
            incidence,
            assignment,
            link_weights,
            total_trips,
            link_prior,
            gamma: DEFAULT_GAMMA,
            rho: DEFAULT_RHO,
            od_upper,
            path_upper,
            link_upper,
        }
    }

    pub fn num_paths(&self) -> usize {
        self.incidence.num_paths()
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let inc = &*self.incidence;
        let (n, m, e) = (inc.num_od(), inc.num_paths(), inc.num_links());
        let dim = |what: &str, got: usize, want: usize| -> Result<(), FlowError> {
            if got == want {
                Ok(())
            } else {
                Err(FlowError::Dimension(format!("{what}: expected {want}, got {got}")))
            }
        };
        dim("assignment rows", self.assignment.nrows, m)?;
        dim("assignment cols", self.assignment.ncols, n)?;
        dim("link weights", self.link_weights.len(), e)?;
        dim("link prior", self.link_prior.len(), e)?;
        dim("OD bounds", self.od_upper.len(), n)?;
        dim("path bounds", self.path_upper.len(), m)?;
        dim("link bounds", self.link_upper.len(), e)?;
        dim("link-path incidence cols", inc.omega.ncols, m)?;
        dim("OD-path incidence cols", inc.phi.ncols, m)?;

        let invalid = |msg: String| Err(FlowError::InvalidProblem(msg));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(self.rho >= 0.0 && self.rho.is_finite()) {
            return invalid(format!("weights must be non-negative (gamma {}, rho {})", self.gamma, self.rho));
        }
        if !self.total_trips.is_finite() || self.total_trips < 0.0 {
            return invalid(format!("total trips {} must be non-negative", self.total_trips));
        }
        for (name, v) in [("OD", &self.od_upper), ("path", &self.path_upper), ("link", &self.link_upper)] {
            if let Some(i) = v.iter().position(|b| !(*b >= 0.0) || b.is_nan()) {
                return invalid(format!("{name} bound {i} is {}", v[i]));
            }
        }
        for i in 0..e {
            let w = self.link_weights[i];
            if !(w >= 0.0 && w.is_finite()) {
                return invalid(format!("link weight {i} is {w}"));
            }
            if w == 0.0 && self.link_prior[i] != 0.0 {
                return invalid(format!("link {i} has a prior but zero weight"));
            }
            if !self.link_prior[i].is_finite() {
                return invalid(format!("link prior {i} is {}", self.link_prior[i]));
            }
        }
        Ok(())
    }

    /// `I − GΦ`, M×M.
    fn consistency_matrix(&self) -> CscMatrix {
        let g_phi = self.assignment.mul(&self.incidence.phi);
        CscMatrix::identity(self.num_paths()).add_scaled(1.0, &g_phi, -1.0)
    }

    /// `WΩ`, E×M.
    fn weighted_link_matrix(&self) -> CscMatrix {
        let mut wo = self.incidence.omega.clone();
        wo.scale_rows_cols(&self.link_weights, &vec![1.0; self.num_paths()]);
        wo.scale(1.0)
    }

    /// Assembles the path-only QP. Constraint rows are the path box, the OD
    /// box through Φ and the link box through Ω, in that order.
    pub fn build_qp(&self) -> Result<AssembledQp, FlowError> {
        self.validate()?;
        let inc = &*self.incidence;
        let m = inc.num_paths();

        // 1ᵀΦ: column sums of Φ.
        let ones = vec![1.0; inc.num_od()];
        let s = inc.phi.tr_mul_vec(&ones);
        let mut outer = Vec::new();
        for c in 0..m {
            for r in 0..m {
                if s[r] != 0.0 && s[c] != 0.0 {
                    outer.push((r, c, s[r] * s[c]));
                }
            }
        }
        let total_term = CscMatrix::from_triplets(m, m, &outer);
        let b = self.consistency_matrix();
        let consistency_term = b.transpose().mul(&b);
        let wo = self.weighted_link_matrix();
        let wo_t = wo.transpose();
        let link_term = wo_t.mul(&wo);

        let p = total_term
            .add_scaled(2.0, &consistency_term, 2.0 * self.gamma)
            .add_scaled(1.0, &link_term, 2.0 * self.rho);

        let wz: Vec<f64> = self.link_weights.iter().zip(&self.link_prior).map(|(w, z)| w * z).collect();
        let wo_wz = wo_t.mul_vec(&wz);
        let q: Vec<f64> = (0..m).map(|j| -2.0 * (self.total_trips * s[j] + self.rho * wo_wz[j])).collect();
        let constant = self.total_trips * self.total_trips + self.rho * wz.iter().map(|v| v * v).sum::<f64>();

        let a = CscMatrix::identity(m).vstack(&inc.phi).vstack(&inc.omega);
        let l = vec![0.0; a.nrows];
        let u: Vec<f64> = self
            .path_upper
            .iter()
            .chain(&self.od_upper)
            .chain(&self.link_upper)
            .copied()
            .collect();
        Ok(AssembledQp {
            qp: QpProblem { p, q, a, l, u },
            constant,
        })
    }

    /// Direct evaluation of the three-term objective at path flow `y`.
    pub fn objective(&self, y: &[f64]) -> f64 {
        let inc = &*self.incidence;
        let total: f64 = inc.phi.mul_vec(y).iter().sum();
        let total_err = self.total_trips - total;
        let cons = self.consistency_matrix().mul_vec(y);
        let z = inc.omega.mul_vec(y);
        let link_err: f64 = (0..z.len())
            .map(|i| (self.link_weights[i] * (z[i] - self.link_prior[i])).powi(2))
            .sum();
        total_err * total_err + self.gamma * cons.iter().map(|v| v * v).sum::<f64>() + self.rho * link_err
    }

    /// `‖W(Ωy − z̃)‖²`
    pub fn link_error(&self, y: &[f64]) -> f64 {
        let z = self.incidence.omega.mul_vec(y);
        (0..z.len())
            .map(|i| (self.link_weights[i] * (z[i] - self.link_prior[i])).powi(2))
            .sum()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::netmodel::{OdPair, PathId};

    /// One OD pair, two paths on three links; path 0 covers measured link 0.
    pub(crate) fn tiny_problem() -> FlowProblem {
        let incidence = IncidenceSet {
            od_pairs: vec![OdPair::new(0, 1)],
            path_ids: vec![PathId(0), PathId(1)],
            phi: CscMatrix::from_dense(&[vec![1.0, 1.0]]),
            omega: CscMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]),
            psi_len: CscMatrix::from_dense(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]),
        };
        FlowProblem {
            tod: 2,
            incidence: Arc::new(incidence),
            assignment: CscMatrix::from_dense(&[vec![0.5], vec![0.5]]),
            link_weights: vec![1.0, 0.0, 0.0],
            total_trips: 10.0,
            link_prior: vec![6.0, 0.0, 0.0],
            gamma: 1.0,
            rho: 1.0,
            od_upper: vec![20.0],
            path_upper: vec![20.0, 20.0],
            link_upper: vec![20.0; 3],
        }
    }

    #[test]
    fn tiny_instance_hand_expansion() {
        // (10 − y0 − y1)² + ½(y0 − y1)² + (y0 − 6)²
        //   = ½ yᵀ [[5, 1], [1, 3]] y − (32, 20)·y + 136
        let asm = tiny_problem().build_qp().unwrap();
        assert_eq!(asm.qp.p.to_dense(), vec![vec![5.0, 1.0], vec![1.0, 3.0]]);
        assert_eq!(asm.qp.q, vec![-32.0, -20.0]);
        assert_eq!(asm.constant, 136.0);
        assert_eq!(asm.qp.a.nrows, 2 + 1 + 3);
        assert_eq!(asm.qp.u, vec![20.0, 20.0, 20.0, 20.0, 20.0, 20.0]);
    }

    #[test]
    fn weights_off_leave_rank_one_total_term() {
        let mut p = tiny_problem();
        p.gamma = 0.0;
        p.rho = 0.0;
        let asm = p.build_qp().unwrap();
        assert_eq!(asm.qp.p.to_dense(), vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
    }

    #[test]
    fn perfect_assignment_has_no_consistency_term() {
        let incidence = IncidenceSet {
            od_pairs: vec![OdPair::new(0, 1)],
            path_ids: vec![PathId(0)],
            phi: CscMatrix::from_dense(&[vec![1.0]]),
            omega: CscMatrix::from_dense(&[vec![1.0]]),
            psi_len: CscMatrix::from_dense(&[vec![1.0]]),
        };
        let base = FlowProblem {
            tod: 2,
            incidence: Arc::new(incidence),
            assignment: CscMatrix::from_dense(&[vec![1.0]]),
            link_weights: vec![0.0],
            total_trips: 5.0,
            link_prior: vec![0.0],
            gamma: 0.0,
            rho: 1.0,
            od_upper: vec![5.0],
            path_upper: vec![5.0],
            link_upper: vec![5.0],
        };
        let p0 = base.build_qp().unwrap().qp.p;
        for gamma in [0.5, 3.0, 1e4] {
            let p = FlowProblem { gamma, ..base.clone() }.build_qp().unwrap().qp.p;
            assert_eq!(p, p0);
        }
    }

    #[test]
    fn objective_matches_assembly() {
        let p = tiny_problem();
        let asm = p.build_qp().unwrap();
        for y in [[0.0, 0.0], [3.0, 7.5], [20.0, 1.25]] {
            let direct = p.objective(&y);
            let via_qp = asm.qp.objective(&y) + asm.constant;
            assert!((direct - via_qp).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let mut p = tiny_problem();
        p.link_prior[1] = 3.0;
        assert!(matches!(p.validate(), Err(FlowError::InvalidProblem(_))));
        let mut p = tiny_problem();
        p.path_upper.pop();
        assert!(matches!(p.build_qp(), Err(FlowError::Dimension(_))));
        let mut p = tiny_problem();
        p.od_upper[0] = -1.0;
        assert!(matches!(p.validate(), Err(FlowError::InvalidProblem(_))));
    }
}
