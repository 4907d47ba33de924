//! Special functions backing the mixture dictionaries.
//!
//! Everything here is evaluated in log-space and exponentiated last: the
//! dictionary columns involve Gamma(1 + n*b) and a^n with n running into the
//! hundreds, which overflow f64 long before the final probabilities do.
//! The generalized exponential series E_nu(t) = sum_n t^n / Gamma(1 + n*nu)
//! (the exponential itself at nu = 1) is summed directly; no analytic
//! continuation, no negative arguments.

use crate::error::{Error, Result};

/// Convergence control for the E_nu series.
#[derive(Debug, Clone, Copy)]
pub struct MLSeriesOptions {
    /// Terminate once the current term drops below `abs_tol * (1 + |sum|)`.
    pub abs_tol: f64,
    /// Hard cap on summed terms; exceeding it is an error, not a silent return.
    pub max_terms: usize,
}

impl Default for MLSeriesOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-14, max_terms: 10_000 }
    }
}

impl MLSeriesOptions {
    fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(Error::InvalidInput("abs_tol must be positive".into()));
        }
        if self.max_terms == 0 {
            return Err(Error::InvalidInput("max_terms must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters of the generalized (hyper) Poisson pmf a^n / (Gamma(1+n b) E_b(a)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPoissonParams {
    a: f64,
    b: f64,
}

impl HyperPoissonParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || a < 0.0 {
            return Err(Error::Domain(format!("hyper-Poisson a must be finite and >= 0, got {a}")));
        }
        if !b.is_finite() || b <= 0.0 {
            return Err(Error::Domain(format!("hyper-Poisson b must be finite and > 0, got {b}")));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

// Lanczos coefficients, g = 7, 9 terms; good to ~1e-14 relative over x > 0.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Gamma(x) for x > 0, assuming the caller has validated the domain.
pub(crate) fn ln_gamma_raw(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        let s = (std::f64::consts::PI * x).sin();
        return std::f64::consts::PI.ln() - s.ln() - ln_gamma_raw(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// ln Gamma(x) for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_raw(x))
}

/// E_nu(t) = sum_{n>=0} t^n / Gamma(1 + n nu) for nu > 0, t >= 0.
pub fn mittag_leffler(nu: f64, t: f64, opts: &MLSeriesOptions) -> Result<f64> {
    opts.validate()?;
    if !nu.is_finite() || nu <= 0.0 {
        return Err(Error::Domain(format!("series order nu must be > 0, got {nu}")));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("series argument t must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let ln_t = t.ln();
    let mut sum = 0.0;
    let mut term = 0.0;
    for n in 0..opts.max_terms {
        let nf = n as f64;
        term = (nf * ln_t - ln_gamma_raw(1.0 + nf * nu)).exp();
        sum += term;
        if term < opts.abs_tol * (1.0 + sum.abs()) {
            return Ok(sum);
        }
    }
    Err(Error::SeriesDivergence { max_terms: opts.max_terms, last_term: term })
}

/// Gamma density (1/(sigma Gamma(beta))) (t/sigma)^(beta-1) e^(-t/sigma).
///
/// The 0^0 = 1 convention applies at t = 0, beta = 1, matching the n = 0
/// entry of the Poisson-shaped dictionary columns.
pub fn gamma_pdf(t: f64, beta: f64, sigma: f64) -> Result<f64> {
    check_density_params(t, beta, sigma)?;
    let x = t / sigma;
    if t == 0.0 {
        return Ok(boundary_value(beta, sigma));
    }
    Ok(((beta - 1.0) * x.ln() - x - ln_gamma_raw(beta) - sigma.ln()).exp())
}

/// Heavy-tailed variant of the Gamma density: the exponential factor is
/// replaced by the reciprocal of E_nu((t/sigma)^nu). At nu = 1 this is
/// exactly `gamma_pdf`.
pub fn ml_pdf(t: f64, beta: f64, sigma: f64, nu: f64, opts: &MLSeriesOptions) -> Result<f64> {
    check_density_params(t, beta, sigma)?;
    if !nu.is_finite() || nu <= 0.0 {
        return Err(Error::Domain(format!("order nu must be > 0, got {nu}")));
    }
    let x = t / sigma;
    if t == 0.0 {
        // E_nu(0) = 1, so the boundary values coincide with the Gamma case
        return Ok(boundary_value(beta, sigma));
    }
    let e = mittag_leffler(nu, x.powf(nu), opts)?;
    Ok(((beta - 1.0) * x.ln() - ln_gamma_raw(beta) - sigma.ln() - e.ln()).exp())
}

fn check_density_params(t: f64, beta: f64, sigma: f64) -> Result<()> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Domain(format!("shape beta must be > 0, got {beta}")));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::Domain(format!("scale sigma must be > 0, got {sigma}")));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("argument t must be >= 0, got {t}")));
    }
    Ok(())
}

fn boundary_value(beta: f64, sigma: f64) -> f64 {
    if beta == 1.0 {
        1.0 / sigma
    } else if beta < 1.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// pmf of the generalized Poisson distribution: a^n / (Gamma(1+n b) E_b(a)).
///
/// Sums to 1 over n >= 0; reduces to Poisson(a) at b = 1.
pub fn hyper_poisson_pmf(n: usize, params: &HyperPoissonParams, opts: &MLSeriesOptions) -> Result<f64> {
    let block = hyper_poisson_pmf_block(n + 1, params, opts)?;
    Ok(block[n])
}

/// First `rows` pmf values of the generalized Poisson distribution, with the
/// normalizing series evaluated once. This is the dictionary-column kernel.
pub fn hyper_poisson_pmf_block(
    rows: usize,
    params: &HyperPoissonParams,
    opts: &MLSeriesOptions,
) -> Result<Vec<f64>> {
    let (a, b) = (params.a, params.b);
    if a == 0.0 {
        // degenerate at n = 0 (the 0^0 = 1 convention)
        let mut out = vec![0.0; rows];
        if rows > 0 {
            out[0] = 1.0;
        }
        return Ok(out);
    }
    let ln_e = mittag_leffler(b, a, opts)?.ln();
    let ln_a = a.ln();
    Ok((0..rows)
        .map(|n| {
            let nf = n as f64;
            (nf * ln_a - ln_gamma_raw(1.0 + nf * b) - ln_e).exp()
        })
        .collect())
}

/// Discrete distributions a tail quantile can be taken over.
#[derive(Debug, Clone)]
pub enum DiscretePmf {
    Poisson { rate: f64 },
    HyperPoisson(HyperPoissonParams),
}

impl DiscretePmf {
    fn ln_pmf_terms(&self, opts: &MLSeriesOptions) -> Result<LnPmf> {
        match *self {
            DiscretePmf::Poisson { rate } => {
                if !rate.is_finite() || rate < 0.0 {
                    return Err(Error::Domain(format!("Poisson rate must be >= 0, got {rate}")));
                }
                Ok(LnPmf { ln_a: rate.ln(), b: 1.0, ln_norm: rate, degenerate: rate == 0.0 })
            }
            DiscretePmf::HyperPoisson(p) => {
                let ln_norm = if p.a == 0.0 { 0.0 } else { mittag_leffler(p.b, p.a, opts)?.ln() };
                Ok(LnPmf { ln_a: p.a.ln(), b: p.b, ln_norm, degenerate: p.a == 0.0 })
            }
        }
    }
}

struct LnPmf {
    ln_a: f64,
    b: f64,
    ln_norm: f64,
    degenerate: bool,
}

impl LnPmf {
    fn eval(&self, n: usize) -> f64 {
        if self.degenerate {
            return if n == 0 { 1.0 } else { 0.0 };
        }
        let nf = n as f64;
        (nf * self.ln_a - ln_gamma_raw(1.0 + nf * self.b) - self.ln_norm).exp()
    }
}

/// Default iteration cap for `tail_quantile`.
pub const DEFAULT_TAIL_CAP: usize = 10_000_000;

/// Smallest n with P(X >= n) <= eps, by cumulative summation from n = 0.
pub fn tail_quantile(pmf: &DiscretePmf, eps: f64, cap: usize) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    let terms = pmf.ln_pmf_terms(&MLSeriesOptions::default())?;
    let mut cum = 0.0;
    for n in 1..=cap {
        cum += terms.eval(n - 1);
        if 1.0 - cum <= eps {
            return Ok(n);
        }
    }
    Err(Error::QuantileCap { cap })
}
