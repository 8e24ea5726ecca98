use serde::{Deserialize, Serialize};

use super::NetworkError;

/// One time-of-day window, hours in `[start_h, end_h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TodInterval {
    /// 1-based interval number.
    pub index: u8,
    pub label: String,
    pub start_h: f64,
    pub end_h: f64,
}

impl TodInterval {
    pub fn hours(&self) -> f64 {
        self.end_h - self.start_h
    }

    pub fn start_s(&self) -> f64 {
        self.start_h * 3600.0
    }

    pub fn end_s(&self) -> f64 {
        self.end_h * 3600.0
    }
}

/// Partition of the day into TOD intervals. The first interval is the
/// simulation warm-up and the last one the cool-down; the ones in between
/// are the main intervals used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TodSchedule {
    intervals: Vec<TodInterval>,
}

impl Default for TodSchedule {
    fn default() -> Self {
        let rows = [
            ("AM early", 0.0, 7.0),
            ("AM peak", 7.0, 10.0),
            ("Midday", 10.0, 15.0),
            ("PM peak", 15.0, 19.0),
            ("PM late", 19.0, 22.0),
            ("Night", 22.0, 24.0),
        ];
        let intervals = rows
            .iter()
            .enumerate()
            .map(|(i, &(label, start_h, end_h))| TodInterval {
                index: i as u8 + 1,
                label: label.to_string(),
                start_h,
                end_h,
            })
            .collect();
        Self { intervals }
    }
}

impl TodSchedule {
    pub fn new(intervals: Vec<TodInterval>) -> Result<Self, NetworkError> {
        let bad = |m: &str| Err(NetworkError::Schedule(m.to_string()));
        if intervals.len() < 3 {
            return bad("need at least warm-up, one main and cool-down interval");
        }
        if intervals[0].start_h != 0.0 {
            return bad("first interval must start at 0:00");
        }
        if intervals.last().unwrap().end_h != 24.0 {
            return bad("last interval must end at 24:00");
        }
        for (i, iv) in intervals.iter().enumerate() {
            if usize::from(iv.index) != i + 1 {
                return bad("interval indices must be 1, 2, ... in order");
            }
            if iv.end_h <= iv.start_h {
                return bad("interval end must follow its start");
            }
        }
        if intervals.windows(2).any(|w| w[0].end_h != w[1].start_h) {
            return bad("intervals must be contiguous");
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[TodInterval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn get(&self, index: u8) -> Option<&TodInterval> {
        self.intervals.get(usize::from(index).checked_sub(1)?)
    }

    pub fn warmup(&self) -> u8 {
        1
    }

    pub fn cooldown(&self) -> u8 {
        self.intervals.len() as u8
    }

    pub fn is_main(&self, index: u8) -> bool {
        index > self.warmup() && index < self.cooldown()
    }

    pub fn main_intervals(&self) -> &[TodInterval] {
        &self.intervals[1..self.intervals.len() - 1]
    }

    /// Interval containing a time of day in seconds since midnight. Times
    /// past midnight wrap onto the next day; negative times clamp to 0.
    pub fn interval_of(&self, seconds: f64) -> u8 {
        let h = (seconds.max(0.0) % 86_400.0) / 3600.0;
        self.intervals
            .iter()
            .find(|iv| h >= iv.start_h && h < iv.end_h)
            .map_or(self.cooldown(), |iv| iv.index)
    }
}
