//! Feedback (rate) functions `F: {1, 2, ...} -> (0, inf)` and their
//! reciprocal series, which every other quantity in the crate consumes.

use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::{adaptive_simpson, Accumulator};

const E_MINUS_1: f64 = std::f64::consts::E - 1.0;

/// A feedback function family. Values are immutable after construction and
/// safe to share between threads.
#[derive(Debug, Clone, PartialEq)]
pub enum RateFunction {
    /// `F(k) = alpha * k^beta`, `alpha > 0`, any real `beta`. Sub-linear and
    /// linear exponents are first-class.
    Polynomial { alpha: f64, beta: f64 },
    /// `F(k) = exp(beta * (k - 1))`, `beta > 0`.
    Exponential { beta: f64 },
    /// `F(k) = k * ln(e - 1 + k)^beta`. The argument shift makes `F(1) = 1`
    /// and keeps the function positive from `k = 1`.
    PolyLog { beta: f64 },
    /// `F(k) = lambda`, a homogeneous Poisson clock.
    Constant { lambda: f64 },
    /// Finite table of values for `k = 1..=len`, with a declared analytic
    /// tail family for `k > len`. Without the tail descriptor only in-table
    /// evaluation is possible; asymptotic queries fail rather than guess.
    Tabulated {
        values: Vec<f64>,
        tail: Option<Box<RateFunction>>,
    },
}

/// A partial or closed-form series value with an explicit remainder bound.
/// Exact closed forms report `remainder_bound = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum {
    pub value: f64,
    pub remainder_bound: f64,
    pub terms_used: u64,
}

/// Which power of `1/F(k)` a series sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumPower {
    One,
    Two,
}

impl SumPower {
    fn as_f64(self) -> f64 {
        match self {
            SumPower::One => 1.0,
            SumPower::Two => 2.0,
        }
    }
}

/// Default tolerance for truncated reciprocal series.
pub const DEFAULT_SERIES_TOLERANCE: f64 = 1e-10;

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::Domain(format!("{name} must be > 0, got {v}")));
    }
    Ok(())
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("{name} must be finite, got {v}")));
    }
    Ok(())
}

impl RateFunction {
    pub fn polynomial(alpha: f64, beta: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_finite("beta", beta)?;
        Ok(RateFunction::Polynomial { alpha, beta })
    }

    pub fn exponential(beta: f64) -> Result<Self> {
        check_positive("beta", beta)?;
        Ok(RateFunction::Exponential { beta })
    }

    pub fn poly_log(beta: f64) -> Result<Self> {
        check_finite("beta", beta)?;
        Ok(RateFunction::PolyLog { beta })
    }

    pub fn constant(lambda: f64) -> Result<Self> {
        check_positive("lambda", lambda)?;
        Ok(RateFunction::Constant { lambda })
    }

    pub fn tabulated(values: Vec<f64>, tail: Option<RateFunction>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("table needs at least one value".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() || *v <= 0.0 {
                return Err(Error::Domain(format!(
                    "table value #{} must be > 0, got {v}",
                    i + 1
                )));
            }
        }
        if let Some(RateFunction::Tabulated { .. }) = tail {
            return Err(Error::Parse(
                "tail descriptor must be an analytic family, not another table".into(),
            ));
        }
        Ok(RateFunction::Tabulated {
            values,
            tail: tail.map(Box::new),
        })
    }

    /// `F(k)` for `k >= 1`.
    pub fn evaluate(&self, k: u64) -> Result<f64> {
        if k < 1 {
            return Err(Error::Domain(format!("rate argument must be >= 1, got {k}")));
        }
        match self {
            RateFunction::Tabulated { values, tail } => {
                if (k as usize) <= values.len() {
                    Ok(values[k as usize - 1])
                } else if let Some(t) = tail {
                    t.evaluate(k)
                } else {
                    Err(Error::Domain(format!(
                        "k = {k} is beyond the {}-entry table and no tail descriptor is declared",
                        values.len()
                    )))
                }
            }
            _ => Ok(self.prepared().rate(k)),
        }
    }

    pub(crate) fn prepared(&self) -> PreparedRate {
        match self {
            RateFunction::Polynomial { alpha, beta } => {
                let rounded = beta.round();
                if *beta == rounded && (0.0..=8.0).contains(&rounded) {
                    PreparedRate::PolyInt {
                        alpha: *alpha,
                        pow: rounded as u32,
                    }
                } else {
                    PreparedRate::Poly {
                        alpha: *alpha,
                        beta: *beta,
                    }
                }
            }
            RateFunction::Exponential { beta } => PreparedRate::Exp { beta: *beta },
            RateFunction::PolyLog { beta } => PreparedRate::PolyLog { beta: *beta },
            RateFunction::Constant { lambda } => PreparedRate::Const { lambda: *lambda },
            RateFunction::Tabulated { values, tail } => PreparedRate::Table {
                values: values.clone(),
                tail: tail.as_ref().map(|t| Box::new(t.prepared())),
            },
        }
    }

    /// Feller-Lundberg criterion: does `sum 1/F(k)` converge? Decided
    /// analytically per family.
    pub fn is_explosive(&self) -> Result<bool> {
        match self {
            RateFunction::Polynomial { beta, .. } => Ok(*beta > 1.0),
            RateFunction::Exponential { .. } => Ok(true),
            RateFunction::PolyLog { beta } => Ok(*beta > 1.0),
            RateFunction::Constant { .. } => Ok(false),
            RateFunction::Tabulated { tail, .. } => match tail {
                Some(t) => t.is_explosive(),
                None => Err(Error::Undecidable(
                    "tabulated rate has no tail descriptor; explosiveness depends on the tail"
                        .into(),
                )),
            },
        }
    }

    /// Whether `F(k) < F(k+1)` for all `k`. Conservative for tables without
    /// a tail descriptor (returns false).
    pub fn strictly_increasing(&self) -> bool {
        match self {
            RateFunction::Polynomial { beta, .. } => *beta > 0.0,
            RateFunction::Exponential { .. } => true,
            RateFunction::PolyLog { beta } => *beta >= 0.0,
            RateFunction::Constant { .. } => false,
            RateFunction::Tabulated { values, tail } => {
                let table_ok = values.windows(2).all(|w| w[0] < w[1]);
                match tail {
                    Some(t) => {
                        table_ok
                            && t.strictly_increasing()
                            && t.evaluate(values.len() as u64 + 1)
                                .map(|v| v > *values.last().unwrap())
                                .unwrap_or(false)
                    }
                    None => false,
                }
            }
        }
    }

    /// Diverging feedback, `F(k) -> inf`.
    pub fn diverges(&self) -> bool {
        match self {
            RateFunction::Polynomial { beta, .. } => *beta > 0.0,
            RateFunction::Exponential { .. } => true,
            RateFunction::PolyLog { beta } => *beta >= 0.0,
            RateFunction::Constant { .. } => false,
            RateFunction::Tabulated { tail, .. } => {
                tail.as_ref().map(|t| t.diverges()).unwrap_or(false)
            }
        }
    }

    /// Whether `sum k^r / F(k)` converges, decided analytically. Feeds the
    /// conditional moment criterion.
    pub(crate) fn reciprocal_moment_finite(&self, r: f64) -> Result<bool> {
        match self {
            RateFunction::Polynomial { beta, .. } => Ok(r < beta - 1.0),
            RateFunction::Exponential { .. } => Ok(true),
            // sum k^(r-1) / ln(..)^beta diverges for every r > 0.
            RateFunction::PolyLog { .. } => Ok(r <= 0.0),
            RateFunction::Constant { .. } => Ok(false),
            RateFunction::Tabulated { tail, .. } => match tail {
                Some(t) => t.reciprocal_moment_finite(r),
                None => Err(Error::Undecidable(
                    "tabulated rate has no tail descriptor; moment existence depends on the tail"
                        .into(),
                )),
            },
        }
    }

    /// Quick upper bound on the remaining mean `sum_{j>k} 1/F(j)`, used as a
    /// cheap explosion guard in simulation loops. `None` when divergent or
    /// not cheaply boundable.
    pub(crate) fn tail_mean_upper_bound(&self, k: u64) -> Option<f64> {
        match self {
            RateFunction::Polynomial { alpha, beta } if *beta > 1.0 => {
                let kf = k as f64;
                Some(kf.powf(1.0 - beta) / (beta - 1.0) / alpha)
            }
            RateFunction::Exponential { beta } => {
                let q = (-beta).exp();
                Some((-beta * k as f64).exp() / (1.0 - q))
            }
            RateFunction::PolyLog { beta } if *beta > 1.0 => {
                if k < 2 {
                    return None;
                }
                let l = (k as f64).ln();
                Some(l.powf(1.0 - beta) / (beta - 1.0))
            }
            RateFunction::Tabulated { values, tail } => {
                let t = tail.as_ref()?;
                let len = values.len() as u64;
                if k >= len {
                    t.tail_mean_upper_bound(k)
                } else {
                    let head: f64 = values[k as usize..].iter().map(|v| 1.0 / v).sum();
                    Some(head + t.tail_mean_upper_bound(len)?)
                }
            }
            _ => None,
        }
    }

    /// `sum_{k>x} F(k)^(-power)` with the default tolerance.
    pub fn tail_sum(&self, x: u64, power: SumPower) -> Result<SeriesSum> {
        self.tail_sum_with_tolerance(x, power, DEFAULT_SERIES_TOLERANCE)
    }

    /// `sum_{k>x} F(k)^(-power)`, closed form where the family admits one,
    /// otherwise partial summation with an integral-comparison remainder
    /// bracket of half-width at most `tol`.
    pub fn tail_sum_with_tolerance(&self, x: u64, power: SumPower, tol: f64) -> Result<SeriesSum> {
        if !(tol > 0.0) {
            return Err(Error::Domain(format!("tolerance must be > 0, got {tol}")));
        }
        let p = power.as_f64();
        match self {
            RateFunction::Constant { .. } => Err(Error::Divergence(format!(
                "sum of 1/F(k)^{power:?} diverges for constant feedback"
            ))),
            RateFunction::Exponential { beta } => {
                // geometric: sum_{k>x} exp(-p beta (k-1)) = exp(-p beta x) / (1 - exp(-p beta))
                let q = (-p * beta).exp();
                Ok(SeriesSum {
                    value: (-p * beta * x as f64).exp() / (1.0 - q),
                    remainder_bound: 0.0,
                    terms_used: 0,
                })
            }
            RateFunction::Polynomial { alpha, beta } => {
                let s = p * beta;
                if s <= 1.0 {
                    return Err(Error::Divergence(format!(
                        "sum of 1/F(k)^{} diverges for polynomial beta = {beta}",
                        p as u32
                    )));
                }
                let scale = alpha.powf(-p);
                let f = move |t: f64| scale * t.powf(-s);
                let integral = move |y: f64| scale * y.powf(1.0 - s) / (s - 1.0);
                Ok(bracketed_tail(&f, &integral, x, tol, 1))
            }
            RateFunction::PolyLog { beta } => {
                if power == SumPower::One && *beta <= 1.0 {
                    return Err(Error::Divergence(format!(
                        "sum of 1/F(k) diverges for k*ln(e-1+k)^beta with beta = {beta}"
                    )));
                }
                let b = *beta;
                let f = move |t: f64| (t * (E_MINUS_1 + t).ln().powf(b)).powf(-p);
                let integral = move |y: f64| polylog_tail_integral(b, power, y);
                let kmin = polylog_convex_from(b, power);
                Ok(bracketed_tail(&f, &integral, x, tol, kmin))
            }
            RateFunction::Tabulated { values, tail } => {
                let len = values.len() as u64;
                let descriptor = tail.as_ref().ok_or_else(|| {
                    Error::Undecidable(
                        "tabulated rate has no tail descriptor; infinite sums are undecidable"
                            .into(),
                    )
                })?;
                if x >= len {
                    return descriptor.tail_sum_with_tolerance(x, power, tol);
                }
                let mut acc = Accumulator::new();
                for v in &values[x as usize..] {
                    acc.add(v.powf(-p));
                }
                let rest = descriptor.tail_sum_with_tolerance(len, power, tol)?;
                Ok(SeriesSum {
                    value: acc.total() + rest.value,
                    remainder_bound: rest.remainder_bound,
                    terms_used: (len - x) + rest.terms_used,
                })
            }
        }
    }

    /// Exact finite sum `sum_{k=x0}^{x} F(k)^(-power)`.
    pub fn head_sum(&self, x0: u64, x: u64, power: SumPower) -> Result<SeriesSum> {
        if x0 < 1 || x < x0 {
            return Err(Error::Domain(format!(
                "head sum needs x >= x0 >= 1, got x0 = {x0}, x = {x}"
            )));
        }
        let p = power.as_f64();
        let prep = self.prepared();
        let mut acc = Accumulator::new();
        for k in x0..=x {
            let r = match self {
                RateFunction::Tabulated { .. } => self.evaluate(k)?,
                _ => prep.rate(k),
            };
            acc.add(r.powf(-p));
        }
        Ok(SeriesSum {
            value: acc.total(),
            remainder_bound: 0.0,
            terms_used: x - x0 + 1,
        })
    }
}

/// Pre-dispatched evaluator for hot simulation loops.
#[derive(Debug, Clone)]
pub(crate) enum PreparedRate {
    PolyInt { alpha: f64, pow: u32 },
    Poly { alpha: f64, beta: f64 },
    Exp { beta: f64 },
    PolyLog { beta: f64 },
    Const { lambda: f64 },
    Table {
        values: Vec<f64>,
        tail: Option<Box<PreparedRate>>,
    },
}

impl PreparedRate {
    /// `F(k)`; for tables queried beyond the descriptor-less end this
    /// returns NaN, which callers surface as a domain error.
    #[inline]
    pub fn rate(&self, k: u64) -> f64 {
        match self {
            PreparedRate::PolyInt { alpha, pow } => {
                let kf = k as f64;
                alpha * kf.powi(*pow as i32)
            }
            PreparedRate::Poly { alpha, beta } => alpha * (k as f64).powf(*beta),
            PreparedRate::Exp { beta } => (beta * (k as f64 - 1.0)).exp(),
            PreparedRate::PolyLog { beta } => {
                let kf = k as f64;
                kf * (E_MINUS_1 + kf).ln().powf(*beta)
            }
            PreparedRate::Const { lambda } => *lambda,
            PreparedRate::Table { values, tail } => {
                if (k as usize) <= values.len() {
                    values[k as usize - 1]
                } else if let Some(t) = tail {
                    t.rate(k)
                } else {
                    f64::NAN
                }
            }
        }
    }
}

/// Explicit summation of `f(x+1) + f(x+2) + ...` until an
/// integral-comparison bracket pins the remainder within `tol`. Requires
/// `f` decreasing and convex from `k_convex` on; `integral(y)` is
/// `int_y^inf f(t) dt`.
fn bracketed_tail(
    f: &dyn Fn(f64) -> f64,
    integral: &dyn Fn(f64) -> f64,
    x: u64,
    tol: f64,
    k_convex: u64,
) -> SeriesSum {
    const CAP: u64 = 50_000_000;
    let mut acc = Accumulator::new();
    let mut next = x + 1;
    let mut k_end = (x + 16).max(k_convex);
    loop {
        for k in next..=k_end {
            acc.add(f(k as f64));
        }
        next = k_end + 1;
        let m = (k_end + 1) as f64;
        // Convex decreasing f: trapezoid vs midpoint comparison brackets
        // the remainder sum_{k>=m} f(k) between these two.
        let r_lo = integral(m) + 0.5 * f(m);
        let r_hi = integral(m - 0.5);
        let half_width = 0.5 * (r_hi - r_lo);
        if (half_width.abs() <= tol && half_width.is_finite()) || k_end - x >= CAP {
            let value = acc.total() + 0.5 * (r_lo + r_hi);
            return SeriesSum {
                value,
                remainder_bound: half_width.abs().max(f64::EPSILON * value.abs()),
                terms_used: k_end - x,
            };
        }
        k_end = (k_end * 2).min(x + CAP);
    }
}

/// `int_y^inf dt / (t ln(e-1+t)^beta)^p` via the substitution
/// `u = ln(e-1+t)`.
fn polylog_tail_integral(beta: f64, power: SumPower, y: f64) -> f64 {
    let u0 = (E_MINUS_1 + y).ln();
    match power {
        SumPower::One => {
            // integrand in u: u^-beta / (1 - z), z = (e-1) e^-u.
            // Split off the elementary u^-beta part; the rest decays like e^-u.
            let main = u0.powf(1.0 - beta) / (beta - 1.0);
            let corr = adaptive_simpson(
                |u| {
                    let z = E_MINUS_1 * (-u).exp();
                    u.powf(-beta) * z / (1.0 - z)
                },
                u0,
                u0 + 45.0,
                1e-15 * (1.0 + main.abs()),
            );
            main + corr
        }
        SumPower::Two => {
            let mode = (-2.0 * beta).max(0.0);
            let hi = u0.max(mode) + 60.0;
            adaptive_simpson(
                |u| {
                    let z = E_MINUS_1 * (-u).exp();
                    (-u).exp() * u.powf(-2.0 * beta) / ((1.0 - z) * (1.0 - z))
                },
                u0,
                hi,
                1e-18,
            )
        }
    }
}

/// Smallest k from which `t -> (t ln(e-1+t)^beta)^(-p)` is convex, found by
/// checking the sign of the derivative of the logarithmic slope.
fn polylog_convex_from(beta: f64, power: SumPower) -> u64 {
    let p = power.as_f64();
    let convex_at = |t: f64| {
        let l = (E_MINUS_1 + t).ln();
        // f'' / f = g^2 - g' with g = p(1/t + beta/((e-1+t) l)); -g' > 0 suffices.
        let neg_gprime = p / (t * t) + p * beta * (l + 1.0) / ((E_MINUS_1 + t).powi(2) * l * l);
        neg_gprime > 0.0
    };
    let mut k = 64u64;
    while !convex_at(k as f64) && k < 1 << 40 {
        k *= 2;
    }
    k
}

// ---------------------------------------------------------------------------
// Rate-spec grammar
// ---------------------------------------------------------------------------

/// Parses the rate-spec grammar:
/// `poly:alpha=<f>,beta=<f>` | `exp:beta=<f>` | `polylog:beta=<f>` |
/// `const:lambda=<f>` |
/// `table:values=<f>;<f>;...,tail=<nested spec with '|' instead of ':'>`.
/// Keys are order-insensitive; duplicate keys are errors.
pub fn parse_rate(spec: &str) -> Result<RateFunction> {
    let spec = spec.trim();
    let (family, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("missing ':' in rate spec `{spec}`")))?;
    let family = family.trim();
    let known: &[&str] = match family {
        "poly" => &["alpha", "beta"],
        "exp" => &["beta"],
        "polylog" => &["beta"],
        "const" => &["lambda"],
        "table" => &["values", "tail"],
        other => {
            return Err(Error::Parse(format!(
                "unknown rate family `{other}` (expected poly, exp, polylog, const or table)"
            )))
        }
    };

    // Comma-split, but a token without a known `key=` prefix continues an
    // immediately preceding `tail=` value: nested tail specs carry their own
    // commas.
    let mut pairs: Vec<(String, String)> = Vec::new();
    for token in rest.split(',') {
        let keyed = token
            .split_once('=')
            .map(|(k, _)| known.contains(&k.trim()))
            .unwrap_or(false);
        if keyed {
            let (k, v) = token.split_once('=').unwrap();
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        } else if pairs.last().map(|(k, _)| k == "tail").unwrap_or(false) {
            let last = pairs.last_mut().unwrap();
            last.1.push(',');
            last.1.push_str(token.trim());
        } else {
            return Err(Error::Parse(format!(
                "unknown key or unexpected token `{token}` for family `{family}`"
            )));
        }
    }
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            if pairs[i].0 == pairs[j].0 {
                return Err(Error::Parse(format!("duplicate key `{}`", pairs[i].0)));
            }
        }
    }
    let get = |key: &str| -> Result<&str> {
        pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse(format!("missing key `{key}` for family `{family}`")))
    };

    let float = |key: &str| -> Result<f64> {
        let raw = get(key)?;
        raw.parse::<f64>()
            .map_err(|_| Error::Parse(format!("value `{raw}` for key `{key}` is not a number")))
    };

    match family {
        "poly" => RateFunction::polynomial(float("alpha")?, float("beta")?),
        "exp" => RateFunction::exponential(float("beta")?),
        "polylog" => RateFunction::poly_log(float("beta")?),
        "const" => RateFunction::constant(float("lambda")?),
        "table" => {
            let values = get("values")?
                .split(';')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        Error::Parse(format!("table value `{v}` is not a number"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let tail = match get("tail") {
                Ok(nested) => {
                    let analytic = nested.replacen('|', ":", 1);
                    Some(parse_rate(&analytic)?)
                }
                Err(_) => None,
            };
            RateFunction::tabulated(values, tail)
        }
        _ => unreachable!(),
    }
}

impl fmt::Display for RateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFunction::Polynomial { alpha, beta } => write!(f, "poly:alpha={alpha},beta={beta}"),
            RateFunction::Exponential { beta } => write!(f, "exp:beta={beta}"),
            RateFunction::PolyLog { beta } => write!(f, "polylog:beta={beta}"),
            RateFunction::Constant { lambda } => write!(f, "const:lambda={lambda}"),
            RateFunction::Tabulated { values, tail } => {
                write!(f, "table:values=")?;
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{v}")?;
                }
                if let Some(t) = tail {
                    write!(f, ",tail={}", t.to_string().replacen(':', "|", 1))?;
                }
                Ok(())
            }
        }
    }
}
