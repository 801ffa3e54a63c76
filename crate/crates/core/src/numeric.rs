//! Small numerical building blocks shared across modules.

/// Neumaier-compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Outcome of a signed log-space sum `Σ sign_k · exp(log_k)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SignedSum {
    pub value: f64,
    /// max_k |term_k| / |Σ term_k|; large values mean the result is mostly
    /// cancellation noise.
    pub condition: f64,
}

/// Sums `sign_k · exp(log_k)` by factoring out the largest magnitude so the
/// intermediate sum stays O(1) regardless of the term scale.
pub(crate) fn signed_log_sum(terms: impl IntoIterator<Item = (f64, f64)> + Clone) -> SignedSum {
    let mut log_max = f64::NEG_INFINITY;
    let mut n = 0usize;
    for (_, l) in terms.clone() {
        if l > log_max {
            log_max = l;
        }
        n += 1;
    }
    if n == 0 || log_max == f64::NEG_INFINITY {
        return SignedSum {
            value: 0.0,
            condition: 1.0,
        };
    }
    let mut acc = Accumulator::new();
    for (sign, l) in terms {
        acc.add(sign * (l - log_max).exp());
    }
    let inner = acc.total();
    let value = if inner == 0.0 {
        0.0
    } else {
        inner.signum() * (log_max + inner.abs().ln()).exp()
    };
    let condition = if inner == 0.0 {
        f64::INFINITY
    } else {
        1.0 / inner.abs()
    };
    SignedSum { value, condition }
}

/// Relative scale below which a signed sum is indistinguishable from zero in
/// f64: anything with |inner sum| under `terms · ε · 64` is noise.
pub(crate) fn noise_floor(terms: usize) -> f64 {
    terms as f64 * f64::EPSILON * 64.0
}

fn simpson_slice(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_slice(a, fa, m, fm, flm);
    let right = simpson_slice(m, fm, b, fb, frm);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
            + adaptive_step(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature on [a, b] with absolute tolerance `tol`.
pub(crate) fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson_slice(a, fa, b, fb, fm);
    adaptive_step(&f, a, fa, b, fb, fm, whole, tol, 48)
}

/// Formats with 12 significant digits, trimming trailing zeros.
pub fn fmt_sig12(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let s = if (-4..12).contains(&mag) {
        let decimals = (11 - mag).max(0) as usize;
        format!("{:.*}", decimals, x)
    } else {
        format!("{:.11e}", x)
    };
    trim_zeros(&s)
}

fn trim_zeros(s: &str) -> String {
    if let Some(epos) = s.find(['e', 'E']) {
        let (mant, exp) = s.split_at(epos);
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}{exp}")
    } else if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_handles_cancellation() {
        let mut acc = Accumulator::new();
        for v in [1e16, 1.0, -1e16] {
            acc.add(v);
        }
        assert_eq!(acc.total(), 1.0);
    }

    #[test]
    fn signed_log_sum_matches_direct() {
        // 3e2 - 5e1 + 0.25
        let terms = [
            (1.0, (3.0f64).ln() + 2.0 * (10.0f64).ln()),
            (-1.0, (5.0f64).ln() + (10.0f64).ln()),
            (1.0, (0.25f64).ln()),
        ];
        let out = signed_log_sum(terms.iter().copied());
        assert!((out.value - 250.25).abs() < 1e-9);
        assert!(out.condition < 2.0);
    }

    #[test]
    fn simpson_integrates_exponential() {
        let val = adaptive_simpson(|x| (-x).exp(), 0.0, 20.0, 1e-13);
        assert!((val - (1.0 - (-20.0f64).exp())).abs() < 1e-11);
    }

    #[test]
    fn fmt_sig12_basic() {
        assert_eq!(fmt_sig12(0.5), "0.5");
        assert_eq!(fmt_sig12(1.121), "1.121");
        assert_eq!(fmt_sig12(0.0), "0");
        assert_eq!(fmt_sig12(f64::INFINITY), "inf");
        assert_eq!(fmt_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig12(1.5e-9), "1.5e-9");
    }
}
