//! Ground-truth generators and error metrics for experiments.
//!
//! Two sources: a two-mode Gaussian-plus-Laplace mixture with a closed-form
//! density, and traffic-theoretic travel times where congestion density is
//! Beta-distributed and speed follows the Newell-Franklin relation
//! V(rho) = v_fr (1 - exp((v_b/v_fr)(rho_jam/rho - 1))). Travel time is the
//! equilibrium pace 1/V at a single drawn density times the link length, so
//! sampled times are bounded below by the free-flow time and never negative.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Road-link and congestion-distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrafficParams {
    /// Free-flow speed, km/h.
    pub v_free: f64,
    /// Backward wave speed, km/h; negative.
    pub v_back: f64,
    /// Jam density, veh/km.
    pub rho_jam: f64,
    /// Density-distribution shape parameters.
    pub beta_a: f64,
    pub beta_b: f64,
    /// Link length, km.
    pub length: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        Self { v_free: 100.0, v_back: -20.0, rho_jam: 150.0, beta_a: 2.0, beta_b: 5.0, length: 1.0 }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_free > 0.0 && self.v_free.is_finite()) {
            return Err(Error::Domain(format!("free-flow speed must be positive, got {}", self.v_free)));
        }
        if !(self.v_back < 0.0 && self.v_back.is_finite()) {
            return Err(Error::Domain(format!("backward wave speed must be negative, got {}", self.v_back)));
        }
        if !(self.rho_jam > 0.0 && self.rho_jam.is_finite()) {
            return Err(Error::Domain(format!("jam density must be positive, got {}", self.rho_jam)));
        }
        if !(self.beta_a > 0.0 && self.beta_b > 0.0) {
            return Err(Error::Domain("shape parameters must be positive".into()));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Domain(format!("link length must be positive, got {}", self.length)));
        }
        Ok(())
    }

    /// Free-flow traversal time in seconds, the lower bound of all samples.
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.v_free * 3600.0
    }

    /// Closed-form m-th moment of the density distribution,
    /// rho_jam^m * prod_{i<m} (a+i)/(a+b+i).
    pub fn density_moment(&self, m: u32) -> f64 {
        let mut v = 1.0;
        for i in 0..m {
            v *= (self.beta_a + i as f64) / (self.beta_a + self.beta_b + i as f64);
        }
        self.rho_jam.powi(m as i32) * v
    }
}

/// Speed at density rho, km/h. Defined on the open interval (0, rho_jam).
pub fn nf_speed(rho: f64, params: &TrafficParams) -> Result<f64> {
    params.validate()?;
    if !(rho > 0.0 && rho < params.rho_jam) {
        return Err(Error::OutOfRange { value: rho, lo: 0.0, hi: params.rho_jam });
    }
    let expo = (params.v_back / params.v_free) * (params.rho_jam / rho - 1.0);
    Ok(params.v_free * (1.0 - expo.exp()))
}

/// Pace at density rho, h/km: the reciprocal speed.
pub fn pace(rho: f64, params: &TrafficParams) -> Result<f64> {
    Ok(1.0 / nf_speed(rho, params)?)
}

/// Draw one congestion density from the scaled Beta distribution, strictly
/// inside (0, rho_jam); boundary draws are redrawn.
pub fn sample_density(params: &TrafficParams, rng: &mut impl Rng) -> Result<f64> {
    params.validate()?;
    let beta = Beta::new(params.beta_a, params.beta_b)
        .map_err(|e| Error::Domain(format!("invalid shape parameters: {e}")))?;
    loop {
        let u: f64 = beta.sample(rng);
        if u > 0.0 && u < 1.0 {
            return Ok(u * params.rho_jam);
        }
    }
}

/// Draw one travel time in seconds: pace at a single drawn density times
/// the link length.
pub fn sample_travel_time(params: &TrafficParams, rng: &mut impl Rng) -> Result<f64> {
    let rho = sample_density(params, rng)?;
    Ok(pace(rho, params)? * params.length * 3600.0)
}

/// Seeded batch of travel times.
pub fn sample_travel_times(params: &TrafficParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_travel_time(params, &mut rng)).collect()
}

/// The two-mode benchmark density: a Gaussian and a Laplace component with
/// equal weights by default.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussLaplaceSpec {
    pub gauss_mean: f64,
    pub gauss_var: f64,
    pub laplace_loc: f64,
    /// Inverse scale of the Laplace component, 1/s.
    pub laplace_rate: f64,
    pub gauss_weight: f64,
}

impl Default for GaussLaplaceSpec {
    fn default() -> Self {
        Self { gauss_mean: 60.0, gauss_var: 100.0, laplace_loc: 30.0, laplace_rate: 0.2, gauss_weight: 0.5 }
    }
}

impl GaussLaplaceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gauss_var > 0.0 && self.laplace_rate > 0.0) {
            return Err(Error::Domain("variance and rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gauss_weight) {
            return Err(Error::Domain(format!(
                "component weight must lie in [0, 1], got {}",
                self.gauss_weight
            )));
        }
        Ok(())
    }

    /// Closed-form mixture density at t.
    pub fn density(&self, t: f64) -> f64 {
        let sd = self.gauss_var.sqrt();
        let z = (t - self.gauss_mean) / sd;
        let gauss = (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let laplace = 0.5 * self.laplace_rate * (-self.laplace_rate * (t - self.laplace_loc).abs()).exp();
        self.gauss_weight * gauss + (1.0 - self.gauss_weight) * laplace
    }
}

/// Draw n non-negative samples from the mixture; negative draws (mass under
/// 1e-4 at the default parameters) are redrawn.
pub fn sample_gauss_laplace(spec: &GaussLaplaceSpec, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    spec.validate()?;
    let normal = Normal::new(spec.gauss_mean, spec.gauss_var.sqrt())
        .map_err(|e| Error::Domain(format!("invalid Gaussian parameters: {e}")))?;
    let scale = 1.0 / spec.laplace_rate;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = if rng.random::<f64>() < spec.gauss_weight {
            normal.sample(rng)
        } else {
            // inverse-CDF Laplace draw
            let u: f64 = rng.random::<f64>() - 0.5;
            spec.laplace_loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        };
        if t >= 0.0 {
            out.push(t);
        }
    }
    Ok(out)
}

/// Seeded batch from the mixture.
pub fn sample_gauss_laplace_seeded(spec: &GaussLaplaceSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_gauss_laplace(spec, n, &mut rng)
}

/// Root-mean-square difference between two equal-length vectors.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "length {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("rmse of empty vectors".into()));
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Continuous density implied by a grid mass function: the mass of the
/// sample's cell divided by the cell width.
pub fn grid_density_at(grid: &TimeGrid, masses: &Array1<f64>, t: f64) -> Result<f64> {
    if masses.len() != grid.n_support() {
        return Err(Error::DimensionMismatch(format!(
            "mass vector has {} entries, grid has {} support points",
            masses.len(),
            grid.n_support()
        )));
    }
    Ok(masses[grid.discretize(t)?] / grid.delta())
}

/// Out-of-sample error: root-mean-square gap between the fitted grid
/// density and the true density, evaluated at held-out sample locations.
pub fn rmse_oos(
    test_samples: &[f64],
    grid: &TimeGrid,
    fitted_masses: &Array1<f64>,
    true_density: impl Fn(f64) -> f64,
) -> Result<f64> {
    if test_samples.is_empty() {
        return Err(Error::InvalidInput("no test samples".into()));
    }
    let mut sum = 0.0;
    for &t in test_samples {
        let f_hat = grid_density_at(grid, fitted_masses, t)?;
        let d = f_hat - true_density(t);
        sum += d * d;
    }
    Ok((sum / test_samples.len() as f64).sqrt())
}
