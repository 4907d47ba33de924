//! Column-stochastic dictionaries of discretized mixture components.
//!
//! Each column is a candidate component: a probability mass function over the
//! support rows, centered at a grid location t_m with scale sigma_m. The
//! construction reverses the usual roles of density parameter and argument:
//! the column for (t_m, sigma_m) evaluates a Gamma-family density *of shape
//! 1 + n*delta/sigma_m* at the fixed point t_m, which lands the mode exactly
//! on the location row and avoids the shape distortion plain kernel columns
//! suffer near the left support boundary. With sigma = delta the column is a
//! Poisson pmf with rate t_m/sigma; general scales give the generalized
//! (hyper) Poisson pmf a^n / (Gamma(1+n b) E_b(a)) with a = (t_m/sigma)^b,
//! b = delta/sigma, whose continuous counterpart is the heavy-tailed
//! E_nu-reciprocal density.
//!
//! Columns truncated to N rows lose at most `eps_tail` mass (validated via
//! the tail quantile of the worst-case column); the exact correction then
//! adds the lost tail back onto row 0 so every column sums to 1 exactly.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::special::{
    ln_gamma_raw, tail_quantile, DiscretePmf, HyperPoissonParams, MLSeriesOptions,
    DEFAULT_TAIL_CAP,
};

/// Tolerance for "column sums to exactly 1" after correction.
pub const EXACT_SUM_TOL: f64 = 1e-12;

/// Construction parameters for a dictionary.
#[derive(Debug, Clone)]
pub struct DictionaryConfig {
    /// Component scales, strictly ascending. A singleton reproduces the
    /// single-kernel construction.
    pub scales: Vec<f64>,
    /// Tail mass a truncated column may lose before correction.
    pub eps_tail: f64,
    /// Add the truncated tail mass back onto row 0 so columns sum to 1.
    pub exact_correction: bool,
}

impl DictionaryConfig {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        let cfg = Self { scales, eps_tail: 1e-6, exact_correction: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_eps_tail(mut self, eps_tail: f64) -> Result<Self> {
        self.eps_tail = eps_tail;
        self.validate()?;
        Ok(self)
    }

    pub fn uncorrected(mut self) -> Self {
        self.exact_correction = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidInput("scale list must be non-empty".into()));
        }
        for w in self.scales.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput("scales must be strictly ascending".into()));
            }
        }
        if !self.scales.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidInput("scales must be finite and positive".into()));
        }
        if !(self.eps_tail > 0.0 && self.eps_tail < 1.0) {
            return Err(Error::InvalidInput(format!(
                "eps_tail must lie in (0, 1), got {}",
                self.eps_tail
            )));
        }
        Ok(())
    }
}

/// Per-column metadata: what component the column discretizes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnInfo {
    /// Component location t_m in seconds.
    pub location: f64,
    /// Component scale sigma_m in seconds.
    pub scale: f64,
    /// Shape increment per support row, delta / sigma_m.
    pub shape_step: f64,
}

/// Which construction produced the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    /// Poisson columns, single scale equal to the grid step.
    Gamma,
    /// Generalized-Poisson columns over a set of scales.
    MittagLeffler,
    /// Caller-supplied matrix (testing, experiments).
    Custom,
}

impl DictionaryKind {
    fn tag(&self) -> &'static str {
        match self {
            DictionaryKind::Gamma => "gamma",
            DictionaryKind::MittagLeffler => "ml",
            DictionaryKind::Custom => "custom",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "gamma" => Ok(DictionaryKind::Gamma),
            "ml" => Ok(DictionaryKind::MittagLeffler),
            "custom" => Ok(DictionaryKind::Custom),
            other => Err(Error::InvalidInput(format!("unknown dictionary kind '{other}'"))),
        }
    }
}

/// N x M column-stochastic component matrix plus its metadata.
#[derive(Debug)]
pub struct Dictionary {
    phi: Array2<f64>,
    columns: Vec<ColumnInfo>,
    grid: TimeGrid,
    kind: DictionaryKind,
    eps_tail: f64,
    corrected: bool,
    gram: OnceLock<Array2<f64>>,
    op_norm_sq: OnceLock<f64>,
}

impl Clone for Dictionary {
    fn clone(&self) -> Self {
        // caches restart empty; they are derived data
        Self {
            phi: self.phi.clone(),
            columns: self.columns.clone(),
            grid: self.grid.clone(),
            kind: self.kind,
            eps_tail: self.eps_tail,
            corrected: self.corrected,
            gram: OnceLock::new(),
            op_norm_sq: OnceLock::new(),
        }
    }
}

/// Poisson pmf block: exp(n ln(rate) - rate - ln n!), degenerate at rate 0.
fn poisson_column(rows: usize, rate: f64) -> Vec<f64> {
    if rate == 0.0 {
        let mut col = vec![0.0; rows];
        col[0] = 1.0;
        return col;
    }
    let ln_rate = rate.ln();
    (0..rows)
        .map(|n| {
            let nf = n as f64;
            (nf * ln_rate - rate - ln_gamma_raw(1.0 + nf)).exp()
        })
        .collect()
}

/// One dictionary column for a (location, scale) pair, optionally corrected.
/// Shared by the builders and by standalone model evaluation so both produce
/// bit-identical values.
pub(crate) fn component_column(
    rows: usize,
    location: f64,
    scale: f64,
    delta: f64,
    correct: bool,
    opts: &MLSeriesOptions,
) -> Result<Vec<f64>> {
    let b = delta / scale;
    let a = (location / scale).powf(b);
    let params = HyperPoissonParams::new(a, b)?;
    let mut col = crate::special::hyper_poisson_pmf_block(rows, &params, opts)?;
    if correct {
        let sum: f64 = col.iter().sum();
        col[0] += (1.0 - sum).max(0.0);
    }
    Ok(col)
}

impl Dictionary {
    /// Build the single-scale dictionary of Poisson-shaped columns. The scale
    /// must equal the grid step: that is what turns the discretized Gamma
    /// density into a Poisson pmf with rate t_m/sigma. For any other single
    /// scale, use [`Dictionary::build_ml`] with a singleton scale list.
    pub fn build_gamma(grid: &TimeGrid, sigma: f64, cfg: &DictionaryConfig) -> Result<Self> {
        cfg.validate()?;
        let delta = grid.delta();
        if !((sigma - delta).abs() <= 1e-12 * delta) {
            return Err(Error::Domain(format!(
                "the Poisson-shaped construction requires sigma = grid step ({delta}), got {sigma}"
            )));
        }
        let m_count = grid.m_locations();
        let rate_max = grid.location_time(m_count - 1) / sigma;
        let required = tail_quantile(
            &DiscretePmf::Poisson { rate: rate_max },
            cfg.eps_tail,
            DEFAULT_TAIL_CAP,
        )?;
        let n = grid.n_support();
        if n < required {
            return Err(Error::GridTooShort { required, actual: n });
        }

        let mut phi = Array2::zeros((n, m_count));
        let mut columns = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let location = grid.location_time(m);
            let col = poisson_column(n, location / sigma);
            phi.column_mut(m).assign(&Array1::from(col));
            columns.push(ColumnInfo { location, scale: sigma, shape_step: 1.0 });
        }

        let mut dict = Self {
            phi,
            columns,
            grid: grid.clone(),
            kind: DictionaryKind::Gamma,
            eps_tail: cfg.eps_tail,
            corrected: false,
            gram: OnceLock::new(),
            op_norm_sq: OnceLock::new(),
        };
        if cfg.exact_correction {
            dict = apply_exact_correction(dict);
        }
        Ok(dict)
    }

    /// Build the multi-scale dictionary of generalized-Poisson columns,
    /// ordered location-major then by ascending scale.
    pub fn build_ml(grid: &TimeGrid, cfg: &DictionaryConfig) -> Result<Self> {
        cfg.validate()?;
        let delta = grid.delta();
        let n = grid.n_support();
        let m_count = grid.m_locations();
        let t_max = grid.location_time(m_count - 1);

        // Columns are stochastically increasing in the location, so the tail
        // requirement binds at t_max; check every scale there.
        let mut required = 0usize;
        for &sigma in &cfg.scales {
            let b = delta / sigma;
            let a = (t_max / sigma).powf(b);
            let q = tail_quantile(
                &DiscretePmf::HyperPoisson(HyperPoissonParams::new(a, b)?),
                cfg.eps_tail,
                DEFAULT_TAIL_CAP,
            )?;
            required = required.max(q);
        }
        if n < required {
            return Err(Error::GridTooShort { required, actual: n });
        }

        let opts = MLSeriesOptions::default();
        let m_total = m_count * cfg.scales.len();
        let mut phi = Array2::zeros((n, m_total));
        let mut columns = Vec::with_capacity(m_total);
        let mut j = 0;
        for m in 0..m_count {
            let location = grid.location_time(m);
            for &sigma in &cfg.scales {
                let col = component_column(n, location, sigma, delta, false, &opts)?;
                phi.column_mut(j).assign(&Array1::from(col));
                columns.push(ColumnInfo { location, scale: sigma, shape_step: delta / sigma });
                j += 1;
            }
        }

        let mut dict = Self {
            phi,
            columns,
            grid: grid.clone(),
            kind: DictionaryKind::MittagLeffler,
            eps_tail: cfg.eps_tail,
            corrected: false,
            gram: OnceLock::new(),
            op_norm_sq: OnceLock::new(),
        };
        if cfg.exact_correction {
            dict = apply_exact_correction(dict);
        }
        Ok(dict)
    }

    /// Wrap a caller-supplied non-negative matrix. Stochasticity is measured,
    /// not enforced: `corrected` reflects whether all columns already sum to 1.
    pub fn from_matrix(grid: &TimeGrid, phi: Array2<f64>, columns: Vec<ColumnInfo>) -> Result<Self> {
        if phi.nrows() != grid.n_support() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} rows, grid has {} support points",
                phi.nrows(),
                grid.n_support()
            )));
        }
        if phi.ncols() != columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns, metadata lists {}",
                phi.ncols(),
                columns.len()
            )));
        }
        if phi.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("matrix entries must be finite and non-negative".into()));
        }
        let mut worst_defect = 0.0f64;
        for j in 0..phi.ncols() {
            let defect = 1.0 - phi.column(j).sum();
            worst_defect = worst_defect.max(defect.abs());
        }
        Ok(Self {
            phi,
            columns,
            grid: grid.clone(),
            kind: DictionaryKind::Custom,
            eps_tail: worst_defect.max(1e-15),
            corrected: worst_defect <= EXACT_SUM_TOL,
            gram: OnceLock::new(),
            op_norm_sq: OnceLock::new(),
        })
    }

    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn n_rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.phi.ncols()
    }

    pub fn columns(&self) -> &[ColumnInfo] {
        &self.columns
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn eps_tail(&self) -> f64 {
        self.eps_tail
    }

    pub fn is_corrected(&self) -> bool {
        self.corrected
    }

    /// Stable textual identity for provenance records.
    pub fn id(&self) -> String {
        let mut scales: Vec<f64> = Vec::new();
        for c in &self.columns {
            if !scales.iter().any(|s| *s == c.scale) {
                scales.push(c.scale);
            }
        }
        let mut s = format!(
            "{}:d{}:n{}:m{}+{}:s[",
            self.kind.tag(),
            self.grid.delta(),
            self.grid.n_support(),
            self.grid.m_locations(),
            self.grid.location_offset()
        );
        for (i, sc) in scales.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{sc}");
        }
        let _ = write!(s, "]:e{}:{}", self.eps_tail, if self.corrected { "exact" } else { "raw" });
        s
    }

    /// The mixture density on the grid, p = Phi theta.
    pub fn evaluate_mixture(&self, theta: ArrayView1<f64>) -> Result<Array1<f64>> {
        if theta.len() != self.n_cols() {
            return Err(Error::DimensionMismatch(format!(
                "weight vector has {} entries, dictionary has {} columns",
                theta.len(),
                self.n_cols()
            )));
        }
        Ok(self.phi.dot(&theta))
    }

    /// Gram matrix Phi^T Phi, computed on first use and cached. Worth the
    /// memory whenever many solves share one dictionary (path sweeps,
    /// streaming refits): iterations then cost O(M * nnz) instead of O(N M).
    pub fn gram(&self) -> &Array2<f64> {
        self.gram.get_or_init(|| self.phi.t().dot(&self.phi))
    }

    pub fn gram_if_built(&self) -> Option<&Array2<f64>> {
        self.gram.get()
    }

    /// Largest eigenvalue of Phi^T Phi (the squared operator norm), via
    /// power iteration; cached. This is the gradient Lipschitz constant of
    /// the least-squares term.
    pub fn operator_norm_sq(&self) -> f64 {
        *self.op_norm_sq.get_or_init(|| {
            let m = self.n_cols();
            let mut v = Array1::from_elem(m, 1.0 / (m as f64).sqrt());
            let mut lambda = 0.0f64;
            for _ in 0..100 {
                let w = match self.gram_if_built() {
                    Some(g) => g.dot(&v),
                    None => self.phi.t().dot(&self.phi.dot(&v)),
                };
                let norm = w.dot(&w).sqrt();
                if norm == 0.0 {
                    return 0.0;
                }
                let rayleigh = v.dot(&w);
                v = w / norm;
                if (rayleigh - lambda).abs() <= 1e-10 * rayleigh.abs() {
                    lambda = rayleigh;
                    break;
                }
                lambda = rayleigh;
            }
            lambda.max(f64::MIN_POSITIVE)
        })
    }

    /// Write the matrix and enough metadata to rebuild it: `#`-prefixed
    /// header lines, then N data rows of M comma-separated entries.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        use std::io::Write;
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        writeln!(
            w,
            "# kind={} delta={} n_support={} m_locations={} location_offset={} eps_tail={} corrected={}",
            self.kind.tag(),
            self.grid.delta(),
            self.grid.n_support(),
            self.grid.m_locations(),
            self.grid.location_offset(),
            self.eps_tail,
            self.corrected
        )?;
        let mut meta = String::from("# columns=");
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                meta.push(',');
            }
            let _ = write!(meta, "{}:{}", c.location, c.scale);
        }
        writeln!(w, "{meta}")?;
        for i in 0..self.n_rows() {
            let mut line = String::new();
            for j in 0..self.n_cols() {
                if j > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{}", self.phi[[i, j]]);
            }
            writeln!(w, "{line}")?;
        }
        w.flush()
    }

    /// Rebuild a dictionary from `write_csv` output.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines();
        let head = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty dictionary file".into()))?;
        let fields = parse_header_fields(head)?;
        let get = |k: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("header missing '{k}'")))
        };
        let kind = DictionaryKind::from_tag(get("kind")?)?;
        let delta: f64 = parse_num(get("delta")?)?;
        let n_support: usize = parse_num(get("n_support")?)?;
        let m_locations: usize = parse_num(get("m_locations")?)?;
        let location_offset: usize = parse_num(get("location_offset")?)?;
        let eps_tail: f64 = parse_num(get("eps_tail")?)?;
        let corrected: bool = get("corrected")? == "true";
        let grid = TimeGrid::new(delta, n_support, m_locations, location_offset)?;

        let cols_line = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("missing column metadata line".into()))?;
        let cols_line = cols_line
            .strip_prefix("# columns=")
            .ok_or_else(|| Error::InvalidInput("second line must be '# columns=...'".into()))?;
        let mut columns = Vec::new();
        for pair in cols_line.split(',') {
            let (loc, scale) = pair
                .split_once(':')
                .ok_or_else(|| Error::InvalidInput(format!("bad column entry '{pair}'")))?;
            let location: f64 = parse_num(loc)?;
            let scale: f64 = parse_num(scale)?;
            columns.push(ColumnInfo { location, scale, shape_step: delta / scale });
        }

        let m_total = columns.len();
        let mut phi = Array2::zeros((n_support, m_total));
        for (i, line) in lines.enumerate() {
            if i >= n_support {
                return Err(Error::InvalidInput("more data rows than support points".into()));
            }
            for (j, tok) in line.split(',').enumerate() {
                if j >= m_total {
                    return Err(Error::InvalidInput(format!("row {i} has too many entries")));
                }
                phi[[i, j]] = parse_num(tok)?;
            }
        }
        Ok(Self {
            phi,
            columns,
            grid,
            kind,
            eps_tail,
            corrected,
            gram: OnceLock::new(),
            op_norm_sq: OnceLock::new(),
        })
    }
}

/// Add each column's truncated tail mass back onto row 0 so every column
/// sums to exactly 1. The added mass is the complement of the column sum,
/// which by construction is the (non-negative) lost tail.
pub fn apply_exact_correction(mut dict: Dictionary) -> Dictionary {
    for j in 0..dict.phi.ncols() {
        let missing = 1.0 - dict.phi.column(j).sum();
        debug_assert!(missing >= -1e-12, "column {j} over-full by {missing:e}");
        dict.phi[[0, j]] += missing.max(0.0);
    }
    Dictionary {
        phi: dict.phi,
        columns: dict.columns,
        grid: dict.grid,
        kind: dict.kind,
        eps_tail: dict.eps_tail,
        corrected: true,
        gram: OnceLock::new(),
        op_norm_sq: OnceLock::new(),
    }
}

fn parse_header_fields(line: &str) -> Result<Vec<(String, String)>> {
    let body = line
        .strip_prefix("# ")
        .ok_or_else(|| Error::InvalidInput("header line must start with '# '".into()))?;
    Ok(body
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::InvalidInput(format!("cannot parse '{s}'")))
}
