use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Simulated time in whole milliseconds. Signed so that memory contents can
/// carry presentations from before the first cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(i64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_millis(ms: i64) -> Self {
        SimTime(ms)
    }

    pub const fn from_secs(s: i64) -> Self {
        SimTime(s * 1000)
    }

    pub const fn millis(self) -> i64 {
        self.0
    }

    pub fn secs(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Seconds elapsed from `earlier` to `self`.
    pub fn secs_since(self, earlier: SimTime) -> f64 {
        (self.0 - earlier.0) as f64 / 1000.0
    }
}

impl Add<i64> for SimTime {
    type Output = SimTime;
    fn add(self, ms: i64) -> SimTime {
        SimTime(self.0 + ms)
    }
}

impl Sub<i64> for SimTime {
    type Output = SimTime;
    fn sub(self, ms: i64) -> SimTime {
        SimTime(self.0 - ms)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}
