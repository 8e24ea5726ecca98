use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Number of calibrated parameters.
pub const NUM_PARAMS: usize = 6;

/// Names of the calibrated parameters in vector order.
pub const PARAM_NAMES: [&str; NUM_PARAMS] = [
    "capacity_scale",
    "junction_delay",
    "min_headway",
    "speed_factor_mean",
    "speed_factor_std",
    "departure_jitter",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Multiplier on link capacities.
    pub capacity_scale: f64,
    /// Seconds added per junction crossing.
    pub junction_delay: f64,
    /// Minimum seconds between consecutive exits of a link.
    pub min_headway: f64,
    pub speed_factor_mean: f64,
    pub speed_factor_std: f64,
    /// Width in seconds of the uniform departure offset.
    pub departure_jitter: f64,
    /// Seconds between rerouting rounds; 0 disables rerouting.
    pub reroute_period: f64,
    pub reroute_prob: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            capacity_scale: 1.0,
            junction_delay: 2.0,
            min_headway: 2.0,
            speed_factor_mean: 1.0,
            speed_factor_std: 0.1,
            departure_jitter: 60.0,
            reroute_period: 0.0,
            reroute_prob: 0.0,
        }
    }
}

impl SimParams {
    pub fn to_vector(&self) -> [f64; NUM_PARAMS] {
        [
            self.capacity_scale,
            self.junction_delay,
            self.min_headway,
            self.speed_factor_mean,
            self.speed_factor_std,
            self.departure_jitter,
        ]
    }

    /// Replaces the calibrated parameters, keeping the rerouting settings.
    pub fn with_vector(&self, v: &[f64; NUM_PARAMS]) -> Self {
        Self {
            capacity_scale: v[0],
            junction_delay: v[1],
            min_headway: v[2],
            speed_factor_mean: v[3],
            speed_factor_std: v[4],
            departure_jitter: v[5],
            ..*self
        }
    }

    /// Checks the physical constraints that hold regardless of the box.
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.capacity_scale > 0.0
            && self.junction_delay >= 0.0
            && self.min_headway > 0.0
            && self.speed_factor_mean > 0.0
            && self.speed_factor_std >= 0.0
            && self.departure_jitter >= 0.0
            && self.reroute_period >= 0.0
            && (0.0..=1.0).contains(&self.reroute_prob)
            && self.to_vector().iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParams(format!("{self:?}")))
        }
    }

    /// `key = value` lines, one per parameter.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (name, v) in PARAM_NAMES.iter().zip(self.to_vector()) {
            let _ = writeln!(out, "{name} = {v}");
        }
        let _ = writeln!(out, "reroute_period = {}", self.reroute_period);
        let _ = writeln!(out, "reroute_prob = {}", self.reroute_prob);
        out
    }

    /// Parses `key = value` lines. Missing keys keep their defaults; blank
    /// lines and `#` comments are ignored.
    pub fn from_key_values(text: &str) -> Result<Self, SimError> {
        let mut p = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SimError::Malformed(format!("line {}: expected key = value", n + 1)))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| SimError::Malformed(format!("line {}: bad number {:?}", n + 1, v.trim())))?;
            match k.trim() {
                "capacity_scale" => p.capacity_scale = v,
                "junction_delay" => p.junction_delay = v,
                "min_headway" => p.min_headway = v,
                "speed_factor_mean" => p.speed_factor_mean = v,
                "speed_factor_std" => p.speed_factor_std = v,
                "departure_jitter" => p.departure_jitter = v,
                "reroute_period" => p.reroute_period = v,
                "reroute_prob" => p.reroute_prob = v,
                other => return Err(SimError::Malformed(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Per-parameter bounds on the calibrated parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamBox {
    pub lower: [f64; NUM_PARAMS],
    pub upper: [f64; NUM_PARAMS],
}

impl Default for ParamBox {
    fn default() -> Self {
        Self {
            lower: [0.5, 0.0, 1.0, 0.8, 0.0, 0.0],
            upper: [2.0, 10.0, 4.0, 1.2, 0.2, 300.0],
        }
    }
}

impl ParamBox {
    pub fn new(lower: [f64; NUM_PARAMS], upper: [f64; NUM_PARAMS]) -> Result<Self, SimError> {
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(SimError::InvalidParams("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, v: &[f64; NUM_PARAMS]) -> bool {
        (0..NUM_PARAMS).all(|i| v[i] >= self.lower[i] && v[i] <= self.upper[i])
    }

    pub fn clamp(&self, v: &[f64; NUM_PARAMS]) -> [f64; NUM_PARAMS] {
        std::array::from_fn(|i| v[i].clamp(self.lower[i], self.upper[i]))
    }

    /// Maps into `[0, 1]` per dimension; degenerate dimensions map to 0.
    pub fn normalize(&self, v: &[f64; NUM_PARAMS]) -> [f64; NUM_PARAMS] {
        std::array::from_fn(|i| {
            let w = self.upper[i] - self.lower[i];
            if w > 0.0 {
                (v[i] - self.lower[i]) / w
            } else {
                0.0
            }
        })
    }

    pub fn denormalize(&self, u: &[f64; NUM_PARAMS]) -> [f64; NUM_PARAMS] {
        std::array::from_fn(|i| self.lower[i] + u[i] * (self.upper[i] - self.lower[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_round_trip() {
        let p = SimParams {
            capacity_scale: 0.75,
            junction_delay: 3.25,
            reroute_period: 600.0,
            reroute_prob: 0.1,
            ..Default::default()
        };
        let back = SimParams::from_key_values(&p.to_key_values()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn key_value_errors() {
        assert!(SimParams::from_key_values("capacity_scale 1").is_err());
        assert!(SimParams::from_key_values("bogus = 1").is_err());
        assert!(SimParams::from_key_values("min_headway = -1").is_err());
        let p = SimParams::from_key_values("# comment\n\nmin_headway = 3 # trailing\n").unwrap();
        assert_eq!(p.min_headway, 3.0);
    }

    #[test]
    fn box_normalization() {
        let b = ParamBox::default();
        let v = [1.25, 5.0, 2.5, 1.0, 0.1, 150.0];
        let u = b.normalize(&v);
        for x in u {
            assert!((x - 0.5).abs() < 1e-12);
        }
        let back = b.denormalize(&u);
        for (a, c) in back.iter().zip(&v) {
            assert!((a - c).abs() < 1e-12);
        }
        assert!(b.contains(&SimParams::default().to_vector()));
        assert_eq!(b.clamp(&[9.0, -1.0, 2.0, 1.0, 0.1, 0.0])[..2], [2.0, 0.0]);
    }
}
