//! Discrete Parzen window estimation with Gaussian kernels and O(N) updates.
//!
//! Samples are snapped to the nearest support point, so the kernel evaluated
//! at a sample is always one of N precomputed columns: Psi_{n,j} is the
//! Gaussian kernel at tau_n - tau_j, column-renormalized to sum 1 over the
//! finite grid. The batch estimate is the average of the sample columns, and
//! both the growing-sample recursion and the fixed-window rolling recursion
//! reduce to single column operations per new sample.

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Rolling-mode drift control: renormalize after this many updates.
const RENORM_EVERY: usize = 10_000;

/// Gaussian kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelSpec {
    /// Kernel standard deviation in seconds.
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Domain(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }
}

/// The rule-of-thumb bandwidth 1.06 * std * S^(-1/5), floored at delta/2 so
/// degenerate samples still give a usable kernel. The standard deviation uses
/// the population divisor S.
pub fn silverman_bandwidth(samples: &[f64], delta: f64) -> Result<f64> {
    let s = samples.len();
    if s < 2 {
        return Err(Error::InvalidInput(format!(
            "bandwidth selection needs at least 2 samples, got {s}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("samples must be finite".into()));
    }
    let sf = s as f64;
    let mean = samples.iter().sum::<f64>() / sf;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / sf;
    let h = 1.06 * var.sqrt() * sf.powf(-0.2);
    Ok(h.max(delta / 2.0))
}

/// N x N matrix of column-renormalized Gaussian kernel columns.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    psi: Array2<f64>,
    grid: TimeGrid,
    spec: KernelSpec,
}

impl KernelMatrix {
    /// Evaluate the kernel on the support grid. Entries depend only on the
    /// row-column distance, so the Gaussian is evaluated once per distance;
    /// each column is then renormalized to sum 1, which restores unit mass
    /// lost to boundary truncation.
    pub fn build(grid: &TimeGrid, spec: KernelSpec) -> Self {
        let n = grid.n_support();
        let h = spec.bandwidth;
        let kernel: Vec<f64> = (0..n)
            .map(|d| {
                let z = d as f64 * grid.delta() / h;
                (-0.5 * z * z).exp()
            })
            .collect();
        let mut psi = Array2::zeros((n, n));
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..n {
                let v = kernel[i.abs_diff(j)];
                psi[[i, j]] = v;
                sum += v;
            }
            psi.column_mut(j).mapv_inplace(|v| v / sum);
        }
        Self { psi, grid: grid.clone(), spec }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.psi.column(j)
    }
}

/// Batch estimate: the average of the kernel columns of the discretized
/// samples. Duplicate indices are aggregated first, so the cost is
/// O(N * distinct indices) regardless of sample count.
pub fn parzen_batch(samples: &[f64], km: &KernelMatrix) -> Result<Array1<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("batch estimate needs at least one sample".into()));
    }
    let n = km.grid().n_support();
    let mut counts = vec![0usize; n];
    for &t in samples {
        counts[km.grid().discretize(t)?] += 1;
    }
    let total = samples.len() as f64;
    let mut p_hat = Array1::zeros(n);
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            p_hat.scaled_add(c as f64 / total, &km.column(j));
        }
    }
    Ok(p_hat)
}

/// How a [`ParzenState`] absorbs new samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum UpdateMode {
    /// Growing sample: every sample ever seen keeps equal weight.
    Sequential,
    /// Fixed window: only the last `window` samples are represented.
    Rolling { window: usize },
}

/// Recursively maintained estimate equal to the batch estimate of the
/// currently represented samples.
#[derive(Debug, Clone)]
pub struct ParzenState {
    p_hat: Array1<f64>,
    mode: UpdateMode,
    count: usize,
    buffer: VecDeque<usize>,
    km: Arc<KernelMatrix>,
    updates_since_renorm: usize,
}

impl ParzenState {
    pub fn new(km: Arc<KernelMatrix>, mode: UpdateMode) -> Result<Self> {
        if let UpdateMode::Rolling { window } = mode {
            if window == 0 {
                return Err(Error::InvalidInput("rolling window must be at least 1".into()));
            }
        }
        let n = km.grid().n_support();
        Ok(Self {
            p_hat: Array1::zeros(n),
            mode,
            count: 0,
            buffer: VecDeque::new(),
            km,
            updates_since_renorm: 0,
        })
    }

    /// Build a state by ingesting the samples one at a time.
    pub fn from_samples(km: Arc<KernelMatrix>, mode: UpdateMode, samples: &[f64]) -> Result<Self> {
        let mut state = Self::new(km, mode)?;
        for &t in samples {
            state.ingest(t)?;
        }
        Ok(state)
    }

    pub fn p_hat(&self) -> &Array1<f64> {
        &self.p_hat
    }

    pub fn mode(&self) -> UpdateMode {
        self.mode
    }

    /// Samples ingested so far (all of them, also in rolling mode).
    pub fn count(&self) -> usize {
        self.count
    }

    /// Whether the estimate represents a full sample yet: immediately in
    /// sequential mode, after `window` samples in rolling mode.
    pub fn warmed_up(&self) -> bool {
        match self.mode {
            UpdateMode::Sequential => self.count > 0,
            UpdateMode::Rolling { window } => self.count >= window,
        }
    }

    /// Absorb one sample with a single column operation.
    pub fn ingest(&mut self, t: f64) -> Result<()> {
        let idx = self.km.grid().discretize(t)?;
        let col = self.km.column(idx);
        match self.mode {
            UpdateMode::Sequential => {
                let k = self.count as f64;
                let w_old = k / (k + 1.0);
                let w_new = 1.0 / (k + 1.0);
                ndarray::Zip::from(&mut self.p_hat).and(&col).for_each(|p, &c| {
                    *p = w_old * *p + w_new * c;
                });
            }
            UpdateMode::Rolling { window } => {
                let w = 1.0 / window as f64;
                if self.buffer.len() < window {
                    // warm-up: accumulate with the full-window divisor, so
                    // the recursion below starts from the exact batch value
                    self.p_hat.scaled_add(w, &col);
                } else {
                    let evicted = self.buffer.pop_front().expect("buffer full");
                    let old = self.km.column(evicted);
                    ndarray::Zip::from(&mut self.p_hat).and(&col).and(&old).for_each(
                        |p, &c_new, &c_old| {
                            // clamp the roundoff the subtract-add drifts in
                            *p = (*p + w * (c_new - c_old)).max(0.0);
                        },
                    );
                    self.updates_since_renorm += 1;
                    if self.updates_since_renorm >= RENORM_EVERY {
                        self.renormalize();
                    }
                }
                self.buffer.push_back(idx);
            }
        }
        self.count += 1;
        Ok(())
    }

    fn renormalize(&mut self) {
        let sum = self.p_hat.sum();
        if sum > 0.0 {
            self.p_hat.mapv_inplace(|v| v / sum);
        }
        self.updates_since_renorm = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n, n / 2, 1).unwrap()
    }

    fn km(n: usize, h: f64) -> Arc<KernelMatrix> {
        Arc::new(KernelMatrix::build(&grid(n), KernelSpec::new(h).unwrap()))
    }

    #[test]
    fn bandwidth_formula_matches_reference() {
        // 50 samples at 0 and 50 at 20: population std exactly 10, S = 100
        let mut samples = vec![0.0; 50];
        samples.extend(vec![20.0; 50]);
        let h = silverman_bandwidth(&samples, 1.0).unwrap();
        assert_abs_diff_eq!(h, 4.219_936_007_867_071, epsilon = 1e-12);
    }

    #[test]
    fn bandwidth_floors_for_identical_samples() {
        let samples = vec![7.0; 10];
        assert_eq!(silverman_bandwidth(&samples, 1.0).unwrap(), 0.5);
        assert_eq!(silverman_bandwidth(&samples, 3.0).unwrap(), 1.5);
    }

    #[test]
    fn bandwidth_scales_linearly_above_floor() {
        let samples: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let doubled: Vec<f64> = samples.iter().map(|v| 2.0 * v).collect();
        let h1 = silverman_bandwidth(&samples, 0.01).unwrap();
        let h2 = silverman_bandwidth(&doubled, 0.01).unwrap();
        assert_abs_diff_eq!(h2, 2.0 * h1, epsilon = 1e-12);
    }

    #[test]
    fn bandwidth_needs_two_samples() {
        assert!(silverman_bandwidth(&[1.0], 1.0).is_err());
        assert!(silverman_bandwidth(&[], 1.0).is_err());
    }

    #[test]
    fn kernel_columns_are_unit_mass_and_peak_on_diagonal() {
        let km = km(30, 2.0);
        for j in 0..30 {
            let col = km.column(j);
            assert_abs_diff_eq!(col.sum(), 1.0, epsilon = 1e-12);
            assert!(col.iter().all(|v| *v > 0.0));
            let argmax = (0..30)
                .max_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, j);
        }
    }

    #[test]
    fn tiny_bandwidth_concentrates_on_the_diagonal() {
        let km = km(20, 0.01);
        for j in 0..20 {
            assert!(km.column(j)[j] >= 0.999, "column {j} leaks mass");
        }
    }

    #[test]
    fn interior_block_is_symmetric() {
        // away from the boundary every column loses the same (negligible)
        // tail mass, so renormalization preserves the kernel's symmetry
        let km = km(50, 1.0);
        for i in 15..35 {
            for j in 15..35 {
                assert_abs_diff_eq!(km.psi()[[i, j]], km.psi()[[j, i]], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn batch_single_sample_is_a_column() {
        let km = km(20, 1.5);
        let p = parzen_batch(&[4.0], &km).unwrap();
        for i in 0..20 {
            assert_eq!(p[i], km.column(4)[i]);
        }
        // duplicates of one sample change nothing
        let p2 = parzen_batch(&[4.0, 4.0, 4.0], &km).unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(p2[i], p[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn batch_is_the_column_average() {
        let km = km(30, 2.0);
        let samples = [2.0, 7.0, 7.0, 11.0, 23.0];
        let p = parzen_batch(&samples, &km).unwrap();
        let mut manual = Array1::zeros(30);
        for &t in &samples {
            manual.scaled_add(1.0 / 5.0, &km.column(t as usize));
        }
        for i in 0..30 {
            assert_abs_diff_eq!(p[i], manual[i], epsilon = 1e-15);
        }
        assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn out_of_range_sample_is_reported() {
        let km = km(20, 1.0);
        let err = parzen_batch(&[55.5], &km).unwrap_err();
        assert!(err.to_string().contains("55.5"), "message: {err}");
    }

    #[test]
    fn sequential_first_ingest_is_a_column() {
        let km = km(20, 1.0);
        let mut st = ParzenState::new(km.clone(), UpdateMode::Sequential).unwrap();
        st.ingest(6.0).unwrap();
        for i in 0..20 {
            assert_eq!(st.p_hat()[i], km.column(6)[i]);
        }
    }

    #[test]
    fn sequential_recursion_equals_batch() {
        let km = km(40, 2.5);
        let samples: Vec<f64> = (0..200).map(|i| ((i * 29) % 39) as f64 + 0.27).collect();
        let st = ParzenState::from_samples(km.clone(), UpdateMode::Sequential, &samples).unwrap();
        let batch = parzen_batch(&samples, &km).unwrap();
        for i in 0..40 {
            assert_abs_diff_eq!(st.p_hat()[i], batch[i], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(st.p_hat().sum(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sequential_duplicate_sample_is_a_fixed_point() {
        let km = km(20, 1.0);
        let mut st = ParzenState::new(km, UpdateMode::Sequential).unwrap();
        st.ingest(5.0).unwrap();
        let before = st.p_hat().clone();
        st.ingest(5.0).unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(st.p_hat()[i], before[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn rolling_warm_up_reaches_batch_of_first_window() {
        let km = km(30, 1.5);
        let w = 8;
        let samples: Vec<f64> = (0..w).map(|i| (i * 3 % 14) as f64).collect();
        let mut st = ParzenState::new(km.clone(), UpdateMode::Rolling { window: w }).unwrap();
        for (k, &t) in samples.iter().enumerate() {
            assert!(!st.warmed_up());
            st.ingest(t).unwrap();
            // during warm-up the mass is (samples so far) / window
            assert_abs_diff_eq!(st.p_hat().sum(), (k + 1) as f64 / w as f64, epsilon = 1e-12);
        }
        assert!(st.warmed_up());
        let batch = parzen_batch(&samples, &km).unwrap();
        for i in 0..30 {
            assert_abs_diff_eq!(st.p_hat()[i], batch[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn rolling_recursion_equals_batch_of_last_window() {
        let km = km(40, 2.0);
        let w = 16;
        let samples: Vec<f64> = (0..120).map(|i| ((i * 17) % 39) as f64).collect();
        let st = ParzenState::from_samples(km.clone(), UpdateMode::Rolling { window: w }, &samples)
            .unwrap();
        let batch = parzen_batch(&samples[samples.len() - w..], &km).unwrap();
        for i in 0..40 {
            assert_abs_diff_eq!(st.p_hat()[i], batch[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn rolling_reingest_of_evicted_value_changes_nothing() {
        let km = km(20, 1.0);
        let w = 4;
        let mut st = ParzenState::new(km, UpdateMode::Rolling { window: w }).unwrap();
        for t in [3.0, 8.0, 12.0, 15.0] {
            st.ingest(t).unwrap();
        }
        let before = st.p_hat().clone();
        st.ingest(3.0).unwrap(); // evicts the 3.0 at the front
        for i in 0..20 {
            assert_abs_diff_eq!(st.p_hat()[i], before[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn rolling_long_run_stays_normalized_and_non_negative() {
        let km = km(25, 1.3);
        let w = 10;
        let mut st = ParzenState::new(km.clone(), UpdateMode::Rolling { window: w }).unwrap();
        // deterministic pseudo-random index stream crossing the renormalization
        // cadence a few times
        let mut x = 1u64;
        for _ in 0..25_000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let t = (x >> 33) % 24;
            st.ingest(t as f64).unwrap();
        }
        assert!(st.p_hat().iter().all(|v| *v >= 0.0));
        assert_abs_diff_eq!(st.p_hat().sum(), 1.0, epsilon = 1e-9);
        // still equal to the batch of the represented window
        let represented: Vec<f64> = st.buffer.iter().map(|&i| i as f64).collect();
        let batch = parzen_batch(&represented, &km).unwrap();
        for i in 0..25 {
            assert_abs_diff_eq!(st.p_hat()[i], batch[i], epsilon = 1e-10);
        }
    }
}
