//! Exact and truncated-series distribution computations: hypoexponential
//! densities, explosion-time density/survival/hazard, the Feller mass
//! function, and moment-generating-function bounds.
//!
//! Alternating sums are evaluated as signed log-magnitude pairs with
//! compensated accumulation. Operations that promise pointwise relative
//! accuracy ([`feller_mass`]) refuse to return cancellation noise; density
//! and survival evaluations instead clamp noise-level results to their
//! mathematical range, so grids and quadratures stay total functions with
//! absolute-error semantics.

use std::io::Write;

use crate::error::{Error, Result};
use crate::numeric::{noise_floor, signed_log_sum, Accumulator};
use crate::rates::{RateFunction, SumPower};

/// Condition-number threshold beyond which an alternating sum is reported as
/// precision loss instead of a value.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Relative gap below which two rates count as duplicates.
pub const DISTINCTNESS_GAP: f64 = 1e-9;

fn check_pairwise_distinct(rates: &[f64], context: &str) -> Result<()> {
    for i in 0..rates.len() {
        for j in i + 1..rates.len() {
            let gap = (rates[i] - rates[j]).abs() / rates[i].max(rates[j]);
            if gap < DISTINCTNESS_GAP {
                return Err(Error::Distinctness(format!(
                    "{context}: rates #{} = {} and #{} = {} are equal or nearly so \
                     (relative gap {gap:.2e} < {DISTINCTNESS_GAP:.0e}); \
                     perturb the rates before calling",
                    i + 1,
                    rates[i],
                    j + 1,
                    rates[j]
                )));
            }
        }
    }
    Ok(())
}

/// A finite list of positive, pairwise-distinct rates defining a sum of
/// independent exponentials (a first-passage time).
#[derive(Debug, Clone, PartialEq)]
pub struct HypoExpSpec {
    rates: Vec<f64>,
}

impl HypoExpSpec {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::Domain("need at least one rate".into()));
        }
        for r in &rates {
            if !r.is_finite() || *r <= 0.0 {
                return Err(Error::Domain(format!("rates must be > 0, got {r}")));
            }
        }
        check_pairwise_distinct(&rates, "hypoexponential spec")?;
        Ok(HypoExpSpec { rates })
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }
}

/// Zhu-formula coefficients for a finite window of distinct rates:
/// density(t) = sum_k sign_k exp(ln_coeff_k - rate_k t).
#[derive(Debug, Clone)]
pub(crate) struct ZhuCoeffs {
    pub rates: Vec<f64>,
    ln_coeff: Vec<f64>,
    sign: Vec<f64>,
}

impl ZhuCoeffs {
    pub fn new(rates: Vec<f64>) -> Self {
        let n = rates.len();
        let ln_prod: f64 = rates.iter().map(|r| r.ln()).sum();
        let mut ln_coeff = Vec::with_capacity(n);
        let mut sign = Vec::with_capacity(n);
        for k in 0..n {
            let mut acc = 0.0f64;
            let mut neg = 0u32;
            for l in 0..n {
                if l == k {
                    continue;
                }
                let d = rates[l] - rates[k];
                acc += d.abs().ln();
                if d < 0.0 {
                    neg += 1;
                }
            }
            ln_coeff.push(ln_prod - acc);
            sign.push(if neg % 2 == 0 { 1.0 } else { -1.0 });
        }
        ZhuCoeffs {
            rates,
            ln_coeff,
            sign,
        }
    }

    /// Density value with its cancellation condition number.
    /// At t = 0 the value is exact: 0 for two or more summands, the bare
    /// rate for one.
    pub fn density_raw(&self, t: f64) -> (f64, f64) {
        if t == 0.0 {
            let v = if self.rates.len() >= 2 {
                0.0
            } else {
                self.rates[0]
            };
            return (v, 1.0);
        }
        let out = signed_log_sum(
            self.sign
                .iter()
                .zip(&self.ln_coeff)
                .zip(&self.rates)
                .map(|((s, lc), r)| (*s, lc - r * t)),
        );
        (out.value, out.condition)
    }

    /// Density clamped to `>= 0` with cancellation noise mapped to zero.
    pub fn density_clamped(&self, t: f64) -> f64 {
        let (v, cond) = self.density_raw(t);
        if v <= 0.0 || 1.0 / cond < noise_floor(self.rates.len()) {
            0.0
        } else {
            v
        }
    }

    /// Survival of the window sum, term-wise closed-form integral of the
    /// density, clamped to [0, 1].
    pub fn survival_clamped(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 1.0;
        }
        let out = signed_log_sum(
            self.sign
                .iter()
                .zip(&self.ln_coeff)
                .zip(&self.rates)
                .map(|((s, lc), r)| (*s, lc - r.ln() - r * t)),
        );
        let v = out.value;
        if 1.0 / out.condition < noise_floor(self.rates.len()) {
            // fully cancelled: the mass is below floating resolution
            if t <= 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            v.clamp(0.0, 1.0)
        }
    }

    /// Density and survival in one pass, sharing the per-term exponentials.
    /// Used by quadrature grid builds where both are needed at every point.
    pub fn density_survival(&self, t: f64) -> (f64, f64) {
        let n = self.rates.len();
        if t == 0.0 {
            return (if n >= 2 { 0.0 } else { self.rates[0] }, 1.0);
        }
        let mut m = f64::NEG_INFINITY;
        for (lc, r) in self.ln_coeff.iter().zip(&self.rates) {
            let a = lc - r * t;
            if a > m {
                m = a;
            }
        }
        if m == f64::NEG_INFINITY {
            return (0.0, 0.0);
        }
        let mut g_inner = Accumulator::new();
        let mut s_inner = Accumulator::new();
        for ((s, lc), r) in self.sign.iter().zip(&self.ln_coeff).zip(&self.rates) {
            let e = (lc - r * t - m).exp();
            g_inner.add(s * e);
            s_inner.add(s * e / r);
        }
        let floor = noise_floor(n);
        let gi = g_inner.total();
        let si = s_inner.total();
        let scale = m.exp();
        let g = if gi < floor { 0.0 } else { gi * scale };
        let surv = if si.abs() < floor {
            0.0
        } else {
            (si * scale).clamp(0.0, 1.0)
        };
        (g, surv)
    }

    /// CDF as the complementary term-wise integral, avoiding the final
    /// `1 - survival` subtraction so small probabilities stay accurate.
    pub fn cdf_clamped(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let out = signed_log_sum(
            self.sign
                .iter()
                .zip(&self.ln_coeff)
                .zip(&self.rates)
                .map(|((s, lc), r)| (*s, lc - r.ln() + (-(r * t)).exp_m1().abs().ln())),
        );
        let v = out.value;
        if v <= 0.0 || 1.0 / out.condition < noise_floor(self.rates.len()) {
            0.0
        } else {
            v.min(1.0)
        }
    }
}

/// Spreads duplicate or near-duplicate rates apart by caller-chosen relative
/// steps so the distinctness precondition holds: the i-th member of a
/// cluster is scaled by `1 + i * epsilon`. Perturbation is an explicit
/// caller decision, never a silent fallback.
pub fn perturb_duplicates(rates: &mut [f64], epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    for r in rates.iter() {
        if !r.is_finite() || *r <= 0.0 {
            return Err(Error::Domain(format!("rates must be > 0, got {r}")));
        }
    }
    let original: Vec<f64> = rates.to_vec();
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|a, b| original[*a].partial_cmp(&original[*b]).unwrap());
    let mut cluster = 0usize;
    for w in 0..order.len() {
        if w > 0 {
            let prev = original[order[w - 1]];
            let cur = original[order[w]];
            let gap = (cur - prev).abs() / cur.max(prev);
            if gap < DISTINCTNESS_GAP {
                cluster += 1;
            } else {
                cluster = 0;
            }
        }
        if cluster > 0 {
            rates[order[w]] = original[order[w]] * (1.0 + cluster as f64 * epsilon);
        }
    }
    Ok(())
}

/// Density of a sum of independent exponentials with distinct rates,
/// evaluated by the explicit alternating formula in signed log space.
pub fn hypoexp_density(spec: &HypoExpSpec, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    Ok(ZhuCoeffs::new(spec.rates().to_vec()).density_clamped(t))
}

/// Closed-form survival of the hypoexponential sum.
pub fn hypoexp_survival(spec: &HypoExpSpec, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    Ok(ZhuCoeffs::new(spec.rates().to_vec()).survival_clamped(t))
}

/// Default truncation depth of the explosion-time series.
pub const DEFAULT_TRUNCATION: usize = 100;

/// An explosive birth process observed through the truncated series of its
/// first `truncation_n` sojourn rates `F(x0), ..., F(x0 + N - 1)`.
#[derive(Debug, Clone)]
pub struct ExplosionModel {
    rate: RateFunction,
    x0: u64,
    truncation_n: usize,
    coeffs: ZhuCoeffs,
    bias_bound: f64,
}

impl ExplosionModel {
    /// Builds the model with the default truncation depth of 100 summands.
    pub fn new(rate: RateFunction, x0: u64) -> Result<Self> {
        Self::with_truncation(rate, x0, DEFAULT_TRUNCATION)
    }

    pub fn with_truncation(rate: RateFunction, x0: u64, truncation_n: usize) -> Result<Self> {
        if x0 < 1 {
            return Err(Error::Domain(format!("x0 must be >= 1, got {x0}")));
        }
        if truncation_n < 1 {
            return Err(Error::Domain("truncation depth must be >= 1".into()));
        }
        if !rate.is_explosive()? {
            return Err(Error::Domain(format!(
                "rate function {rate} is not explosive; explosion-time quantities are undefined"
            )));
        }
        let mut rates = Vec::with_capacity(truncation_n);
        for k in x0..x0 + truncation_n as u64 {
            rates.push(rate.evaluate(k)?);
        }
        check_pairwise_distinct(&rates, "explosion model truncation window")?;
        let bias_bound = rate
            .tail_sum(x0 + truncation_n as u64 - 1, SumPower::One)?
            .value;
        Ok(ExplosionModel {
            rate,
            x0,
            truncation_n,
            coeffs: ZhuCoeffs::new(rates),
            bias_bound,
        })
    }

    pub fn rate_function(&self) -> &RateFunction {
        &self.rate
    }

    pub fn x0(&self) -> u64 {
        self.x0
    }

    pub fn truncation_n(&self) -> usize {
        self.truncation_n
    }

    /// Mean truncation bias `E[T - T(N)] = sum_{k >= x0+N} 1/F(k)`.
    pub fn bias_bound(&self) -> f64 {
        self.bias_bound
    }

    /// Truncated explosion-time density `g_N(t)`.
    pub fn density(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("t must be >= 0, got {t}")));
        }
        Ok(self.coeffs.density_clamped(t))
    }

    /// `P(T > t)` by closed-form term-wise integration of the truncated
    /// density, clamped to [0, 1].
    pub fn survival(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("t must be >= 0, got {t}")));
        }
        Ok(self.coeffs.survival_clamped(t))
    }

    /// `P(T <= t)` without the `1 - survival` cancellation.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("t must be >= 0, got {t}")));
        }
        Ok(self.coeffs.cdf_clamped(t))
    }

    /// The hazard `g(t) / P(T > t)`, the t-dependent prefactor of the
    /// conditional tail law. Converges to `F(x0)` as `t -> inf`.
    pub fn hazard_prefactor(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("t must be > 0, got {t}")));
        }
        let g = self.coeffs.density_clamped(t);
        let s = self.coeffs.survival_clamped(t);
        if s <= 0.0 {
            return Err(Error::Domain(format!(
                "survival underflowed at t = {t}; the truncated series carries no mass this far"
            )));
        }
        Ok(g / s)
    }

    pub(crate) fn zhu(&self) -> &ZhuCoeffs {
        &self.coeffs
    }

    /// Evaluates a [`DensityGrid`] of the requested kind.
    pub fn grid(&self, t_values: Vec<f64>, kind: GridKind) -> Result<DensityGrid> {
        let mut values = Vec::with_capacity(t_values.len());
        for &t in &t_values {
            values.push(match kind {
                GridKind::Density => self.density(t)?,
                GridKind::Survival => self.survival(t)?,
                GridKind::Hazard => self.hazard_prefactor(t)?,
            });
        }
        DensityGrid::new(t_values, values, kind)
    }
}

/// Feller's explicit mass function `P(Xi(t) = x)` for a birth process with
/// pairwise-distinct rates over the window `x0..=x`. Valid for explosive and
/// non-explosive rate functions alike.
pub fn feller_mass(rate: &RateFunction, x0: u64, x: u64, t: f64) -> Result<f64> {
    if x0 < 1 || x < x0 {
        return Err(Error::Domain(format!(
            "need x >= x0 >= 1, got x0 = {x0}, x = {x}"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    let window: Vec<f64> = (x0..=x).map(|k| rate.evaluate(k)).collect::<Result<_>>()?;
    check_pairwise_distinct(&window, "feller mass window")?;
    let n = window.len();
    if n == 1 {
        return Ok((-window[0] * t).exp());
    }
    let ln_num: f64 = window[..n - 1].iter().map(|r| r.ln()).sum();
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let mut ln_den = 0.0f64;
        let mut neg = 0u32;
        for l in 0..n {
            if l == k {
                continue;
            }
            let d = window[l] - window[k];
            ln_den += d.abs().ln();
            if d < 0.0 {
                neg += 1;
            }
        }
        let sign = if neg % 2 == 0 { 1.0 } else { -1.0 };
        terms.push((sign, ln_num - ln_den - window[k] * t));
    }
    let out = signed_log_sum(terms.iter().copied());
    if out.condition > CONDITION_LIMIT {
        return Err(Error::PrecisionLoss(format!(
            "feller mass at x0 = {x0}, x = {x}, t = {t}: condition number {:.2e} exceeds {CONDITION_LIMIT:.0e}",
            out.condition
        )));
    }
    Ok(out.value.clamp(0.0, 1.0))
}

/// Moment-generating-function bounds for a sum of independent exponentials:
/// `exp(-s sum 1/l) < E exp(-sS) < exp(-s sum 1/l + s^2 sum 1/l^2)`.
/// Duplicate rates are allowed. Returns `(lower, exact, upper)`.
pub fn mgf_bounds(rates: &[f64], s: f64) -> Result<(f64, f64, f64)> {
    if rates.is_empty() {
        return Err(Error::Domain("need at least one rate".into()));
    }
    if !(s > 0.0) {
        return Err(Error::Domain(format!("s must be > 0, got {s}")));
    }
    let mut inv = 0.0f64;
    let mut inv2 = 0.0f64;
    let mut ln_exact = 0.0f64;
    for &l in rates {
        if !l.is_finite() || l <= 0.0 {
            return Err(Error::Domain(format!("rates must be > 0, got {l}")));
        }
        inv += 1.0 / l;
        inv2 += 1.0 / (l * l);
        ln_exact += l.ln() - (l + s).ln();
    }
    Ok((
        (-s * inv).exp(),
        ln_exact.exp(),
        (-s * inv + s * s * inv2).exp(),
    ))
}

/// Density and survival of `S = min_j T_j` over independent explosion times.
pub fn min_explosion(models: &[ExplosionModel], s: f64) -> Result<(f64, f64)> {
    if models.is_empty() {
        return Err(Error::Domain("need at least one explosion model".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("s must be >= 0, got {s}")));
    }
    let g: Vec<f64> = models.iter().map(|m| m.zhu().density_clamped(s)).collect();
    let surv: Vec<f64> = models
        .iter()
        .map(|m| m.zhu().survival_clamped(s))
        .collect();
    let total_surv: f64 = surv.iter().product();
    let mut density = 0.0;
    for j in 0..models.len() {
        let mut others = 1.0;
        for (k, sv) in surv.iter().enumerate() {
            if k != j {
                others *= sv;
            }
        }
        density += g[j] * others;
    }
    Ok((density, total_surv))
}

/// What a [`DensityGrid`] tabulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Density,
    Survival,
    Hazard,
}

impl GridKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GridKind::Density => "density",
            GridKind::Survival => "survival",
            GridKind::Hazard => "hazard",
        }
    }
}

/// A tabulated curve over increasing observation times.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub t_values: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: GridKind,
}

impl DensityGrid {
    pub fn new(t_values: Vec<f64>, values: Vec<f64>, kind: GridKind) -> Result<Self> {
        if t_values.len() != values.len() {
            return Err(Error::Domain("grid lengths differ".into()));
        }
        if t_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("grid times must be strictly increasing".into()));
        }
        if t_values.first().map(|t| *t < 0.0).unwrap_or(false) {
            return Err(Error::Domain("grid times must be >= 0".into()));
        }
        match kind {
            GridKind::Density | GridKind::Hazard => {
                if values.iter().any(|v| *v < 0.0) {
                    return Err(Error::Domain("density/hazard values must be >= 0".into()));
                }
            }
            GridKind::Survival => {
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Domain("survival values must lie in [0, 1]".into()));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::Domain("survival must be non-increasing".into()));
                }
            }
        }
        Ok(DensityGrid {
            t_values,
            values,
            kind,
        })
    }

    /// CSV with header `t,value,kind`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t,value,kind")?;
        for (t, v) in self.t_values.iter().zip(&self.values) {
            writeln!(
                w,
                "{},{},{}",
                crate::fmt_sig12(*t),
                crate::fmt_sig12(*v),
                self.kind.as_str()
            )?;
        }
        Ok(())
    }
}
