use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClusterError;

pub type Point = [f64; 2];
type Cov = [[f64; 2]; 2];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmSettings {
    /// Stop when the relative log-likelihood change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Lower bound on covariance eigenvalues.
    pub cov_floor: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            cov_floor: 1e-6,
        }
    }
}

/// Planar Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub means: Vec<Point>,
    pub covariances: Vec<Cov>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Log-likelihood evaluated before every M-step, plus the final value.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of M-steps in which at least one covariance hit the floor.
    pub floored_steps: usize,
}

impl GmmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().unwrap()
    }

    /// Bayesian information criterion, `−2·LL + p·ln n`, with `6K − 1` free
    /// parameters for a planar full-covariance mixture.
    pub fn bic(&self, n_points: usize) -> f64 {
        let k = self.model.k() as f64;
        -2.0 * self.final_log_likelihood() + (6.0 * k - 1.0) * (n_points as f64).ln()
    }
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    fn log_component(&self, j: usize, p: &Point) -> f64 {
        let c = &self.covariances[j];
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let dx = p[0] - self.means[j][0];
        let dy = p[1] - self.means[j][1];
        // dᵀ Σ⁻¹ d for a 2×2 matrix.
        let maha = (c[1][1] * dx * dx - 2.0 * c[0][1] * dx * dy + c[0][0] * dy * dy) / det;
        self.weights[j].ln() - LN_2PI - 0.5 * det.ln() - 0.5 * maha
    }

    /// Per-component log joint densities and their log-sum.
    fn log_joint(&self, p: &Point, buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.extend((0..self.k()).map(|j| self.log_component(j, p)));
        log_sum_exp(buf)
    }

    pub fn log_likelihood(&self, points: &[Point]) -> f64 {
        let mut buf = Vec::with_capacity(self.k());
        points.iter().map(|p| self.log_joint(p, &mut buf)).sum()
    }

    /// Component with the highest responsibility; ties go to the lower index.
    pub fn predict(&self, p: &Point) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for j in 0..self.k() {
            let v = self.log_component(j, p);
            if v > best.0 {
                best = (v, j);
            }
        }
        best.1
    }

    pub fn responsibilities(&self, p: &Point) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.k());
        let total = self.log_joint(p, &mut buf);
        buf.iter().map(|v| (v - total).exp()).collect()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Clamps the eigenvalues of a symmetric 2×2 matrix from below. Returns
/// whether clamping changed anything.
fn floor_covariance(c: &mut Cov, floor: f64) -> bool {
    let (a, b, d) = (c[0][0], 0.5 * (c[0][1] + c[1][0]), c[1][1]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    if l2 >= floor {
        c[0][1] = b;
        c[1][0] = b;
        return false;
    }
    // Eigenvector of l1.
    let (vx, vy) = if b.abs() > 1e-300 {
        let (vx, vy) = (l1 - d, b);
        let n = (vx * vx + vy * vy).sqrt();
        (vx / n, vy / n)
    } else if a >= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (e1, e2) = (l1.max(floor), l2.max(floor));
    // Q diag(e1, e2) Qᵀ with Q = [v, v⊥].
    c[0][0] = e1 * vx * vx + e2 * vy * vy;
    c[1][1] = e1 * vy * vy + e2 * vx * vx;
    c[0][1] = (e1 - e2) * vx * vy;
    c[1][0] = c[0][1];
    true
}

/// k-means++ seeding: first centre uniform, later ones proportional to the
/// squared distance to the nearest chosen centre.
fn kmeans_pp(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        let c = points[next];
        for (di, p) in d2.iter_mut().zip(points) {
            *di = di.min(dist2(p, &c));
        }
        centres.push(c);
    }
    centres
}

fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Fits a `k`-component mixture by EM from a seeded k-means++ start.
pub fn fit_gmm(points: &[Point], k: usize, seed: u64, settings: &EmSettings) -> Result<GmmFit, ClusterError> {
    if k == 0 || k > points.len() {
        return Err(ClusterError::TooFewPoints { k, n: points.len() });
    }
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = kmeans_pp(points, k, &mut rng);

    // Start from hard nearest-centre assignments.
    let mut resp = vec![0.0; n * k];
    for (i, p) in points.iter().enumerate() {
        let j = (0..k)
            .min_by(|&a, &b| dist2(p, &centres[a]).total_cmp(&dist2(p, &centres[b])))
            .unwrap();
        resp[i * k + j] = 1.0;
    }
    let mut model = GmmModel {
        means: centres,
        covariances: vec![[[1.0, 0.0], [0.0, 1.0]]; k],
        weights: vec![1.0 / k as f64; k],
    };
    let mut floored_steps = usize::from(m_step(points, &resp, &mut model, settings.cov_floor));

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut buf = Vec::with_capacity(k);
    while iterations < settings.max_iter {
        // E-step.
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let total = model.log_joint(p, &mut buf);
            ll += total;
            for j in 0..k {
                resp[i * k + j] = (buf[j] - total).exp();
            }
        }
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            if ((ll - prev) / prev.abs().max(1e-300)).abs() < settings.tol {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);
        if m_step(points, &resp, &mut model, settings.cov_floor) {
            floored_steps += 1;
        }
        iterations += 1;
    }
    if !converged {
        history.push(model.log_likelihood(points));
    }
    if floored_steps > 0 {
        log::warn!("GMM: covariance floored in {floored_steps} M-steps (degenerate component)");
    }
    Ok(GmmFit {
        model,
        log_likelihood: history,
        iterations,
        converged,
        floored_steps,
    })
}

fn m_step(points: &[Point], resp: &[f64], model: &mut GmmModel, floor: f64) -> bool {
    let k = model.k();
    let n = points.len();
    let mut floored = false;
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
        if nk <= 1e-12 {
            // Empty component: keep its mean, reset to a floored unit shape.
            model.weights[j] = 1e-300_f64.max(nk / n as f64);
            model.covariances[j] = [[floor.max(1.0), 0.0], [0.0, floor.max(1.0)]];
            floored = true;
            continue;
        }
        let mut mx = 0.0;
        let mut my = 0.0;
        for (i, p) in points.iter().enumerate() {
            let r = resp[i * k + j];
            mx += r * p[0];
            my += r * p[1];
        }
        mx /= nk;
        my /= nk;
        let mut c = [[0.0; 2]; 2];
        for (i, p) in points.iter().enumerate() {
            let r = resp[i * k + j];
            let (dx, dy) = (p[0] - mx, p[1] - my);
            c[0][0] += r * dx * dx;
            c[0][1] += r * dx * dy;
            c[1][1] += r * dy * dy;
        }
        c[0][0] /= nk;
        c[0][1] /= nk;
        c[1][1] /= nk;
        c[1][0] = c[0][1];
        floored |= floor_covariance(&mut c, floor);
        model.means[j] = [mx, my];
        model.covariances[j] = c;
        model.weights[j] = nk / n as f64;
    }
    let s: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= s);
    floored
}

/// Fits every `k` in `range` and keeps the one with the lowest BIC (ties to
/// the smaller `k`).
pub fn select_k_by_bic(
    points: &[Point],
    range: std::ops::RangeInclusive<usize>,
    seed: u64,
    settings: &EmSettings,
) -> Result<GmmFit, ClusterError> {
    let mut best: Option<(f64, GmmFit)> = None;
    for k in range {
        if k == 0 || k > points.len() {
            continue;
        }
        let fit = fit_gmm(points, k, seed, settings)?;
        let bic = fit.bic(points.len());
        log::debug!("GMM k={k}: BIC {bic:.2}");
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, fit));
        }
    }
    best.map(|(_, f)| f).ok_or(ClusterError::TooFewPoints { k: 0, n: points.len() })
}
