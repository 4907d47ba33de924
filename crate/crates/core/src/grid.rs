//! Uniform time discretization shared by the estimator and the dictionary.
//!
//! The support grid is tau_n = n * delta for n = 0..N-1. Candidate component
//! locations are a contiguous subset of the support, t_m = (offset + m) * delta;
//! the experiments place locations on [1, 300] s (offset 1) while keeping
//! support row 0 so that small samples remain representable. N > M' is
//! required so component tails have room on the grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform support grid with a contiguous block of component locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    delta: f64,
    n_support: usize,
    m_locations: usize,
    location_offset: usize,
}

impl TimeGrid {
    pub fn new(
        delta: f64,
        n_support: usize,
        m_locations: usize,
        location_offset: usize,
    ) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidInput(format!("grid step must be > 0, got {delta}")));
        }
        if m_locations == 0 {
            return Err(Error::InvalidInput("need at least one component location".into()));
        }
        if n_support <= m_locations {
            return Err(Error::InvalidInput(format!(
                "support rows ({n_support}) must exceed location count ({m_locations})"
            )));
        }
        if location_offset + m_locations > n_support {
            return Err(Error::InvalidInput(format!(
                "locations [{location_offset}, {}) extend past the {n_support}-row support",
                location_offset + m_locations
            )));
        }
        Ok(Self { delta, n_support, m_locations, location_offset })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_support(&self) -> usize {
        self.n_support
    }

    pub fn m_locations(&self) -> usize {
        self.m_locations
    }

    pub fn location_offset(&self) -> usize {
        self.location_offset
    }

    pub fn support_time(&self, n: usize) -> f64 {
        n as f64 * self.delta
    }

    pub fn support_times(&self) -> Vec<f64> {
        (0..self.n_support).map(|n| self.support_time(n)).collect()
    }

    /// Location of the m-th candidate component, t_m = (offset + m) * delta.
    pub fn location_time(&self, m: usize) -> f64 {
        (self.location_offset + m) as f64 * self.delta
    }

    pub fn location_times(&self) -> Vec<f64> {
        (0..self.m_locations).map(|m| self.location_time(m)).collect()
    }

    /// Support row holding the m-th location.
    pub fn location_row(&self, m: usize) -> usize {
        self.location_offset + m
    }

    /// Inclusive window of representable samples: half a cell beyond each end.
    pub fn sample_bounds(&self) -> (f64, f64) {
        (-0.5 * self.delta, (self.n_support as f64 - 0.5) * self.delta)
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = self.sample_bounds();
        t.is_finite() && t >= lo && t <= hi
    }

    /// Nearest support row for a sample, ties toward the lower index.
    pub fn discretize(&self, t: f64) -> Result<usize> {
        if !self.contains(t) {
            let (lo, hi) = self.sample_bounds();
            return Err(Error::OutOfRange { value: t, lo, hi });
        }
        let idx = (t / self.delta - 0.5).ceil() as isize;
        Ok(idx.clamp(0, self.n_support as isize - 1) as usize)
    }
}
