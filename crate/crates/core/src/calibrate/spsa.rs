//! Simultaneous perturbation stochastic approximation over a box.
//!
//! The driver works in coordinates normalized to `[0, 1]` per dimension so a
//! single scalar gain suits parameters with different units. Each iteration
//! costs exactly two objective evaluations, which share one seed.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CalibError;

/// `a_k = a / (k + 1 + A)^alpha_exp`, `c_k = c / (k + 1)^gamma_exp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub a: f64,
    pub big_a: f64,
    pub alpha_exp: f64,
    pub c: f64,
    pub gamma_exp: f64,
}

impl GainSchedule {
    pub const ALPHA_EXP: f64 = 0.602;
    pub const GAMMA_EXP: f64 = 0.101;

    /// Standard exponents with the stability constant at 10% of `max_iter`.
    pub fn standard(a: f64, c: f64, max_iter: usize) -> Self {
        Self {
            a,
            big_a: 0.1 * max_iter as f64,
            alpha_exp: Self::ALPHA_EXP,
            c,
            gamma_exp: Self::GAMMA_EXP,
        }
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        let ok = self.a > 0.0
            && self.c > 0.0
            && self.big_a >= 0.0
            && self.alpha_exp > 0.5
            && self.alpha_exp <= 1.0
            && self.gamma_exp > 0.0
            && self.gamma_exp <= 0.5;
        if ok {
            Ok(())
        } else {
            Err(CalibError::InvalidGains(format!("{self:?}")))
        }
    }

    pub fn step(&self, k: usize) -> f64 {
        self.a / (k as f64 + 1.0 + self.big_a).powf(self.alpha_exp)
    }

    pub fn perturbation(&self, k: usize) -> f64 {
        self.c / (k as f64 + 1.0).powf(self.gamma_exp)
    }
}

/// Result of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Total travel time of the evaluated run; drives the stopping rule.
    pub total_travel_time: f64,
}

pub trait Objective: Sync {
    fn evaluate(&self, theta: &[f64], seed: u64) -> Result<Evaluation, CalibError>;
}

/// Adapts a closure into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64], u64) -> Result<Evaluation, CalibError> + Sync,
{
    fn evaluate(&self, theta: &[f64], seed: u64) -> Result<Evaluation, CalibError> {
        (self.0)(theta, seed)
    }
}

/// Counts the evaluations passed through to an inner objective.
pub struct CountingObjective<'a, O: ?Sized> {
    inner: &'a O,
    count: AtomicUsize,
}

impl<'a, O: Objective + ?Sized> CountingObjective<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

impl<O: Objective + ?Sized> Objective for CountingObjective<'_, O> {
    fn evaluate(&self, theta: &[f64], seed: u64) -> Result<Evaluation, CalibError> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(theta, seed)
    }
}

/// Stopping threshold on the change in total travel time between
/// successive iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    /// Fraction of the previous iteration's total travel time.
    Relative(f64),
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Relative(1e-3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpsaSettings {
    pub max_iter: usize,
    pub tolerance: Tolerance,
    /// The stopping rule is not checked before this many iterations.
    pub min_iter: usize,
    pub seed: u64,
}

impl Default for SpsaSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tolerance: Tolerance::default(),
            min_iter: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIter,
}

/// One SPSA iteration as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss_plus: f64,
    pub loss_minus: f64,
    /// Mean of the two perturbed losses.
    pub loss: f64,
    /// Mean total travel time of the two perturbed runs.
    pub total_travel_time: f64,
    /// Iterate after this iteration's update.
    pub theta: Vec<f64>,
    pub step: f64,
    pub perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRun {
    pub theta_initial: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub status: RunStatus,
    pub theta_opt: Vec<f64>,
    /// Objective evaluations made, retries included.
    pub evaluations: usize,
    pub retries: usize,
}

impl CalibrationRun {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn theta_history(&self) -> Vec<Vec<f64>> {
        self.history.iter().map(|r| r.theta.clone()).collect()
    }

    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }

    pub fn total_travel_time_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.total_travel_time).collect()
    }
}

/// Box in the original parameter units.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, CalibError> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(CalibError::InvalidBounds);
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    fn box_to_unit(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let w = self.upper[i] - self.lower[i];
                if w > 0.0 {
                    (v - self.lower[i]) / w
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn unit_to_box(&self, u: &[f64]) -> Vec<f64> {
        // Clamp after mapping back so rounding never leaves the box.
        u.iter()
            .enumerate()
            .map(|(i, v)| (self.lower[i] + v * (self.upper[i] - self.lower[i])).clamp(self.lower[i], self.upper[i]))
            .collect()
    }
}

fn clip_unit(u: &mut [f64]) {
    u.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

fn rademacher<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

struct PerturbedPair {
    plus: Evaluation,
    minus: Evaluation,
    delta: Vec<f64>,
}

/// Evaluates `u ± c Δ` (each clipped into the unit box) with one shared
/// seed. Retries once with a fresh perturbation when an evaluation fails.
fn evaluate_pair<O: Objective + ?Sized, R: Rng>(
    objective: &O,
    bounds: &Bounds,
    u: &[f64],
    ck: f64,
    rng: &mut R,
    evaluations: &mut usize,
    retries: &mut usize,
) -> Result<PerturbedPair, CalibError> {
    let mut last_err = None;
    for attempt in 0..2 {
        if attempt > 0 {
            *retries += 1;
        }
        let delta = rademacher(rng, u.len());
        let seed: u64 = rng.random();
        let mut up: Vec<f64> = u.iter().zip(&delta).map(|(x, d)| x + ck * d).collect();
        let mut um: Vec<f64> = u.iter().zip(&delta).map(|(x, d)| x - ck * d).collect();
        clip_unit(&mut up);
        clip_unit(&mut um);
        let (tp, tm) = (bounds.unit_to_box(&up), bounds.unit_to_box(&um));
        let (plus, minus) = rayon::join(|| objective.evaluate(&tp, seed), || objective.evaluate(&tm, seed));
        *evaluations += 2;
        match (plus, minus) {
            (Ok(plus), Ok(minus)) if plus.loss.is_finite() && minus.loss.is_finite() => {
                return Ok(PerturbedPair { plus, minus, delta });
            }
            (Err(e), _) | (_, Err(e)) => last_err = Some(e),
            _ => last_err = Some(CalibError::NonFiniteLoss),
        }
    }
    Err(last_err.unwrap_or(CalibError::NonFiniteLoss))
}

/// Runs SPSA from `theta0` inside `bounds`.
pub fn spsa_calibrate<O: Objective + ?Sized>(
    objective: &O,
    theta0: &[f64],
    bounds: &Bounds,
    gains: &GainSchedule,
    settings: &SpsaSettings,
) -> Result<CalibrationRun, CalibError> {
    gains.validate()?;
    if settings.max_iter == 0 {
        return Err(CalibError::InvalidSettings("max_iter must be at least 1".into()));
    }
    match settings.tolerance {
        Tolerance::Absolute(e) | Tolerance::Relative(e) if e > 0.0 => {}
        _ => return Err(CalibError::InvalidSettings("tolerance must be positive".into())),
    }
    if !bounds.contains(theta0) {
        return Err(CalibError::OutOfBounds);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut u = bounds.box_to_unit(theta0);
    let mut history = Vec::new();
    let mut evaluations = 0;
    let mut retries = 0;
    let mut status = RunStatus::MaxIter;
    let mut prev_ttt: Option<f64> = None;

    for k in 0..settings.max_iter {
        let (ak, ck) = (gains.step(k), gains.perturbation(k));
        let pair = evaluate_pair(objective, bounds, &u, ck, &mut rng, &mut evaluations, &mut retries)?;
        let diff = (pair.plus.loss - pair.minus.loss) / (2.0 * ck);
        for (x, d) in u.iter_mut().zip(&pair.delta) {
            *x -= ak * diff / d;
        }
        clip_unit(&mut u);
        let ttt = 0.5 * (pair.plus.total_travel_time + pair.minus.total_travel_time);
        history.push(IterationRecord {
            iteration: k + 1,
            loss_plus: pair.plus.loss,
            loss_minus: pair.minus.loss,
            loss: 0.5 * (pair.plus.loss + pair.minus.loss),
            total_travel_time: ttt,
            theta: bounds.unit_to_box(&u),
            step: ak,
            perturbation: ck,
        });
        log::debug!("SPSA iteration {}: L+ {:.4} L- {:.4}", k + 1, pair.plus.loss, pair.minus.loss);
        if let Some(prev) = prev_ttt {
            let eps = match settings.tolerance {
                Tolerance::Absolute(e) => e,
                Tolerance::Relative(r) => r * prev.abs(),
            };
            if k + 1 >= settings.min_iter && (ttt - prev).abs() <= eps {
                status = RunStatus::Converged;
                break;
            }
        }
        prev_ttt = Some(ttt);
    }
    Ok(CalibrationRun {
        theta_initial: theta0.to_vec(),
        theta_opt: bounds.unit_to_box(&u),
        history,
        status,
        evaluations,
        retries,
    })
}

/// Picks gains from the objective's behaviour at `theta0`. The perturbation
/// size is the loss's coefficient of variation over `replicates` seeds,
/// clamped to `[0.05, 0.2]` of the box. The step size is set so the first
/// update moves about 5% of the box along each coordinate, using the mean
/// magnitude of `probes` gradient estimates. Uses its own evaluations,
/// separate from the calibration run.
pub fn estimate_gains<O: Objective + ?Sized>(
    objective: &O,
    theta0: &[f64],
    bounds: &Bounds,
    max_iter: usize,
    replicates: usize,
    probes: usize,
    seed: u64,
) -> Result<GainSchedule, CalibError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let losses: Vec<f64> = (0..replicates.max(2))
        .map(|_| objective.evaluate(theta0, rng.random()).map(|e| e.loss))
        .collect::<Result<_, _>>()?;
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let cv = if mean.abs() > 0.0 { var.sqrt() / mean.abs() } else { 0.0 };
    let c = cv.clamp(0.05, 0.2);

    let u = bounds.box_to_unit(theta0);
    let (mut evals, mut retries) = (0, 0);
    let mut mags = Vec::new();
    for _ in 0..probes.max(1) {
        let pair = evaluate_pair(objective, bounds, &u, c, &mut rng, &mut evals, &mut retries)?;
        mags.push(((pair.plus.loss - pair.minus.loss) / (2.0 * c)).abs());
    }
    let g = mags.iter().sum::<f64>() / mags.len() as f64;
    let mut gains = GainSchedule::standard(1.0, c, max_iter);
    gains.a = if g > 0.0 {
        0.05 * (1.0 + gains.big_a).powf(gains.alpha_exp) / g
    } else {
        0.05
    };
    Ok(gains)
}

/// `iteration, L_plus, L_minus, total_travel_time, <names...>`
pub fn write_calibration_log<W: Write>(run: &CalibrationRun, names: &[&str], out: W) -> Result<(), CalibError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration", "L_plus", "L_minus", "total_travel_time"];
    header.extend_from_slice(names);
    w.write_record(&header)?;
    for r in &run.history {
        let mut row = vec![
            r.iteration.to_string(),
            r.loss_plus.to_string(),
            r.loss_minus.to_string(),
            r.total_travel_time.to_string(),
        ];
        row.extend(r.theta.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
