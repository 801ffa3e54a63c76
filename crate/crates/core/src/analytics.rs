//! Turns Monte Carlo samples into empirical tails, fitted exponents,
//! correlations, and prediction-vs-empirical comparison reports.

use std::io::Write;

use serde::Serialize;

use crate::asymptotics::TailPrediction;
use crate::error::{Error, Result};

/// Exact counting survival function of a (conditioned) integer sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSurvival {
    /// Sorted distinct sample values.
    pub support: Vec<u64>,
    /// `P_hat(X > support[i])`.
    pub survival: Vec<f64>,
    /// Number of samples above each support value (exact counts).
    pub tail_counts: Vec<u64>,
    pub n: usize,
    pub conditioning: String,
}

impl EmpiricalSurvival {
    pub fn from_samples(samples: &[u64], conditioning: &str) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySample(format!(
                "no samples pass the condition `{conditioning}`"
            )));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let mut support = Vec::new();
        let mut tail_counts = Vec::new();
        let mut i = 0usize;
        while i < n {
            let v = sorted[i];
            let mut j = i;
            while j < n && sorted[j] == v {
                j += 1;
            }
            support.push(v);
            tail_counts.push((n - j) as u64);
            i = j;
        }
        let survival = tail_counts.iter().map(|c| *c as f64 / n as f64).collect();
        Ok(EmpiricalSurvival {
            support,
            survival,
            tail_counts,
            n,
            conditioning: conditioning.to_string(),
        })
    }

    /// Applies a predicate before counting; the conditioning text is stored
    /// with the curve so reports are self-documenting.
    pub fn conditioned(
        samples: impl IntoIterator<Item = u64>,
        condition: impl Fn(u64) -> bool,
        conditioning: &str,
    ) -> Result<Self> {
        let kept: Vec<u64> = samples.into_iter().filter(|s| condition(*s)).collect();
        Self::from_samples(&kept, conditioning)
    }

    /// `P_hat(X > x)` for arbitrary x.
    pub fn survival_at(&self, x: u64) -> f64 {
        match self.support.partition_point(|v| *v <= x) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    /// CSV rows `value,survival,n,conditioning`.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "value,survival,n,conditioning")?;
        for (v, s) in self.support.iter().zip(&self.survival) {
            writeln!(
                w,
                "{},{},{},{}",
                v,
                crate::fmt_sig12(*s),
                self.n,
                self.conditioning
            )?;
        }
        Ok(())
    }
}

/// Which coordinates an exponent fit regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitTransform {
    /// `ln S` on `ln x`: power laws.
    LogLog,
    /// `ln S` on `x`: exponential tails.
    LogLinear,
    /// `ln S` on `ln ln x`: logarithmic tails.
    LogLogLog,
}

/// Quantile window selecting the support points used by a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRange {
    pub quantile_lo: f64,
    pub quantile_hi: f64,
}

impl Default for FitRange {
    fn default() -> Self {
        // trims the non-asymptotic head and the noisy extreme tail
        FitRange {
            quantile_lo: 0.5,
            quantile_hi: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

fn ols(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let n = points.len();
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("zero variance in the regressor".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| {
            let e = p.1 - (intercept + slope * p.0);
            e * e
        })
        .sum();
    let stderr = if n > 2 {
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        points: n,
    })
}

/// Selects support points inside the quantile window with valid transforms.
fn fit_points(
    ecdf: &EmpiricalSurvival,
    transform: FitTransform,
    range: FitRange,
) -> Vec<(f64, f64)> {
    let lo_surv = 1.0 - range.quantile_hi;
    let hi_surv = 1.0 - range.quantile_lo;
    let mut pts = Vec::new();
    for (v, s) in ecdf.support.iter().zip(&ecdf.survival) {
        if *s <= 0.0 || *s < lo_surv || *s > hi_surv {
            continue;
        }
        let x = *v as f64;
        let u = match transform {
            FitTransform::LogLog => {
                if x <= 0.0 {
                    continue;
                }
                x.ln()
            }
            FitTransform::LogLinear => x,
            FitTransform::LogLogLog => {
                if x <= 1.0 {
                    continue;
                }
                x.ln().ln()
            }
        };
        pts.push((u, s.ln()));
    }
    pts
}

/// Ordinary least squares on the transformed survival curve.
pub fn fit_power_tail(
    ecdf: &EmpiricalSurvival,
    transform: FitTransform,
    range: FitRange,
) -> Result<SlopeFit> {
    let pts = fit_points(ecdf, transform, range);
    if pts.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} support points inside the fit range (need 10)",
            pts.len()
        )));
    }
    ols(&pts)
}

/// Hill estimator of the tail index over the `k` largest order statistics,
/// provided as a cross-check on the regression fits.
pub fn hill_tail_index(samples: &[f64], k: usize) -> Result<f64> {
    if k < 2 || k >= samples.len() {
        return Err(Error::InsufficientData(format!(
            "hill estimator needs 2 <= k < n, got k = {k}, n = {}",
            samples.len()
        )));
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let xk = sorted[k];
    if xk <= 0.0 {
        return Err(Error::Domain("hill estimator needs positive samples".into()));
    }
    let mean_log: f64 = sorted[..k].iter().map(|x| (x / xk).ln()).sum::<f64>() / k as f64;
    Ok(1.0 / mean_log)
}

/// Pointwise ratio of an empirical curve to a prediction.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// `(value, empirical survival, predicted survival, ratio)` per point.
    pub points: Vec<(u64, f64, f64, f64)>,
    /// `max(ratio, 1/ratio) - 1` over the compared points.
    pub sup_deviation: f64,
    pub pass: bool,
    pub tolerance: f64,
}

/// Compares an empirical survival curve against a prediction on the support
/// points inside the fit range; the verdict passes when every ratio deviates
/// from one by at most `tolerance` in the `max(r, 1/r) - 1` sense.
pub fn compare_prediction(
    ecdf: &EmpiricalSurvival,
    prediction: &TailPrediction,
    range: FitRange,
    tolerance: f64,
) -> Result<ComparisonReport> {
    let lo_surv = 1.0 - range.quantile_hi;
    let hi_surv = 1.0 - range.quantile_lo;
    let mut points = Vec::new();
    let mut sup = 0.0f64;
    for (v, s) in ecdf.support.iter().zip(&ecdf.survival) {
        if *s <= 0.0 || *s < lo_surv || *s > hi_surv {
            continue;
        }
        let Some(pred) = prediction.survival_at(*v as f64) else {
            return Err(Error::Unsupported(
                "the prediction kind has no evaluable survival".into(),
            ));
        };
        if !(pred > 0.0) {
            continue;
        }
        let ratio = *s / pred;
        sup = sup.max(ratio.max(1.0 / ratio) - 1.0);
        points.push((*v, *s, pred, ratio));
    }
    if points.is_empty() {
        return Err(Error::DisjointSupport(
            "no support points overlap the prediction inside the fit range".into(),
        ));
    }
    Ok(ComparisonReport {
        sup_deviation: sup,
        pass: sup <= tolerance,
        points,
        tolerance,
    })
}

/// Pearson correlation of component-wise logarithms with its Fisher-z 95%
/// confidence interval.
pub fn pearson_log_corr(pairs: &[(f64, f64)]) -> Result<(f64, (f64, f64))> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    for (a, b) in pairs {
        if !(*a > 0.0 && *b > 0.0) {
            return Err(Error::Domain("pairs must be strictly positive".into()));
        }
    }
    let logs: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "zero variance in a log-coordinate".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    if pairs.len() <= 3 || r.abs() >= 1.0 {
        return Ok((r, (-1.0, 1.0)));
    }
    let z = r.atanh();
    let se = 1.0 / (n - 3.0).sqrt();
    Ok((r, ((z - 1.96 * se).tanh(), (z + 1.96 * se).tanh())))
}

/// Exact sup-distance between the empirical CDF and the unit-mean
/// exponential CDF `1 - e^-x`.
pub fn ks_exponential(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-x.max(0.0)).exp();
        ks = ks.max((cdf - i as f64 / n).abs());
        ks = ks.max((cdf - (i as f64 + 1.0) / n).abs());
    }
    Ok(ks)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("both samples must be non-empty".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut ks = 0.0f64;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        ks = ks.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::TailKind;
    use crate::sim::RngStream;

    #[test]
    fn survival_direct_counts() {
        let e = EmpiricalSurvival::from_samples(&[1, 2, 2, 5], "raw").unwrap();
        assert_eq!(e.support, vec![1, 2, 5]);
        assert_eq!(e.survival_at(2), 0.25);
        assert_eq!(e.survival_at(0), 1.0);
        assert_eq!(e.survival_at(5), 0.0);
        // all-equal: survival drops from 1 to 0 at that value
        let d = EmpiricalSurvival::from_samples(&[7, 7, 7], "raw").unwrap();
        assert_eq!(d.support, vec![7]);
        assert_eq!(d.survival, vec![0.0]);
        assert_eq!(d.survival_at(6), 1.0);
        // empty condition
        assert!(matches!(
            EmpiricalSurvival::conditioned([1u64, 2, 3], |_| false, "none"),
            Err(Error::EmptySample(_))
        ));
    }

    #[test]
    fn survival_of_merged_sample_is_count_mixture() {
        let a = vec![1u64, 3, 3, 9];
        let b = vec![2u64, 3, 10, 10, 12];
        let merged: Vec<u64> = a.iter().chain(b.iter()).copied().collect();
        let ea = EmpiricalSurvival::from_samples(&a, "a").unwrap();
        let eb = EmpiricalSurvival::from_samples(&b, "b").unwrap();
        let em = EmpiricalSurvival::from_samples(&merged, "m").unwrap();
        for x in 0..=13u64 {
            // exact rational identity on counts
            let lhs = em.survival_at(x) * merged.len() as f64;
            let rhs = ea.survival_at(x) * a.len() as f64 + eb.survival_at(x) * b.len() as f64;
            assert_eq!(lhs, rhs, "x = {x}");
        }
    }

    #[test]
    fn fit_recovers_exact_power_law() {
        // noiseless x^-2 survival over a wide support
        let support: Vec<u64> = (2..200).collect();
        let n = 1_000_000usize;
        let survival: Vec<f64> = support.iter().map(|x| (*x as f64).powi(-2)).collect();
        let tail_counts = survival.iter().map(|s| (s * n as f64) as u64).collect();
        let e = EmpiricalSurvival {
            support,
            survival,
            tail_counts,
            n,
            conditioning: "synthetic".into(),
        };
        let full = FitRange {
            quantile_lo: 0.0,
            quantile_hi: 1.0,
        };
        let fit = fit_power_tail(&e, FitTransform::LogLog, full).unwrap();
        assert!((fit.slope + 2.0).abs() < 0.01, "slope = {}", fit.slope);
        assert!(fit.stderr < 0.01);
    }

    #[test]
    fn fit_recovers_exact_exponential() {
        let support: Vec<u64> = (1..60).collect();
        let survival: Vec<f64> = support.iter().map(|x| (-(*x as f64)).exp()).collect();
        let e = EmpiricalSurvival {
            tail_counts: survival.iter().map(|s| (s * 1e9) as u64).collect(),
            support,
            survival,
            n: 1_000_000_000,
            conditioning: "synthetic".into(),
        };
        let full = FitRange {
            quantile_lo: 0.0,
            quantile_hi: 1.0,
        };
        let fit = fit_power_tail(&e, FitTransform::LogLinear, full).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.01);
    }

    #[test]
    fn fit_is_scale_equivariant_in_loglog() {
        let mut stream = RngStream::new(51, 0);
        // pareto-ish integer sample
        let samples: Vec<u64> = (0..20_000)
            .map(|_| (2.0 / stream.next_f64().sqrt()) as u64)
            .collect();
        let scaled: Vec<u64> = samples.iter().map(|s| s * 7).collect();
        let e1 = EmpiricalSurvival::from_samples(&samples, "raw").unwrap();
        let e2 = EmpiricalSurvival::from_samples(&scaled, "scaled").unwrap();
        let f1 = fit_power_tail(&e1, FitTransform::LogLog, FitRange::default()).unwrap();
        let f2 = fit_power_tail(&e2, FitTransform::LogLog, FitRange::default()).unwrap();
        assert!((f1.slope - f2.slope).abs() < 0.05, "{} vs {}", f1.slope, f2.slope);
    }

    #[test]
    fn fit_requires_enough_points() {
        let e = EmpiricalSurvival::from_samples(&[1, 2, 3, 4], "raw").unwrap();
        assert!(matches!(
            fit_power_tail(&e, FitTransform::LogLog, FitRange::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn comparison_report_semantics() {
        let support: Vec<u64> = (2..100).collect();
        let survival: Vec<f64> = support.iter().map(|x| 0.8 * (*x as f64).powi(-1)).collect();
        let e = EmpiricalSurvival {
            tail_counts: survival.iter().map(|s| (s * 1e6) as u64).collect(),
            support,
            survival,
            n: 1_000_000,
            conditioning: "synthetic".into(),
        };
        let full = FitRange {
            quantile_lo: 0.0,
            quantile_hi: 1.0,
        };
        let exact = TailPrediction::new(
            TailKind::Power {
                exponent: -1.0,
                constant: Some(0.8),
            },
            "exact",
        );
        let rep = compare_prediction(&e, &exact, full, 1e-9).unwrap();
        assert!(rep.pass);
        assert!(rep.sup_deviation < 1e-12);
        // constant-factor-off prediction: flat ratio 0.5, fails at 10% but
        // passes at 110% tolerance (verdicts are monotone in tolerance)
        let double = TailPrediction::new(
            TailKind::Power {
                exponent: -1.0,
                constant: Some(1.6),
            },
            "x2",
        );
        let r2 = compare_prediction(&e, &double, full, 0.1).unwrap();
        assert!(!r2.pass);
        assert!(r2.points.iter().all(|p| (p.3 - 0.5).abs() < 1e-12));
        let r3 = compare_prediction(&e, &double, full, 1.1).unwrap();
        assert!(r3.pass);
        // disjoint support
        let band = TailPrediction::new(
            TailKind::Band {
                lower: 0.0,
                upper: 1.0,
            },
            "band",
        );
        assert!(compare_prediction(&e, &band, full, 0.1).is_err());
    }

    #[test]
    fn pearson_cases() {
        let identical: Vec<(f64, f64)> = (1..50).map(|i| (i as f64, i as f64)).collect();
        let (r, _) = pearson_log_corr(&identical).unwrap();
        assert!((r - 1.0).abs() < 1e-12);

        let mut s = RngStream::new(9, 0);
        let indep: Vec<(f64, f64)> = (0..5000)
            .map(|_| (s.next_exp(1.0), s.next_exp(1.0)))
            .collect();
        let (r, (lo, hi)) = pearson_log_corr(&indep).unwrap();
        assert!(r.abs() < 0.05);
        assert!(lo < 0.0 && hi > 0.0, "CI ({lo}, {hi}) should cover 0");

        let degenerate: Vec<(f64, f64)> = (0..10).map(|_| (1.0, 2.0)).collect();
        assert!(matches!(
            pearson_log_corr(&degenerate),
            Err(Error::Degenerate(_))
        ));
        assert!(pearson_log_corr(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(pearson_log_corr(&[(1.0, -1.0), (2.0, 2.0), (3.0, 3.0)]).is_err());
    }

    #[test]
    fn ks_exponential_cases() {
        // degenerate point mass at 1: sup distance is max(1-e^-1, e^-1)
        let ones = vec![1.0f64; 100];
        let ks = ks_exponential(&ones).unwrap();
        let expected = (1.0 - (-1.0f64).exp()).max((-1.0f64).exp());
        assert!((ks - expected).abs() < 1e-12);

        // calibration: a genuine unit-exponential sample stays below 0.05
        let mut s = RngStream::new(33, 0);
        let sample: Vec<f64> = (0..1000).map(|_| s.next_exp(1.0)).collect();
        assert!(ks_exponential(&sample).unwrap() < 0.05);
    }

    #[test]
    fn two_sample_ks_detects_shift() {
        let mut s = RngStream::new(12, 0);
        let a: Vec<f64> = (0..2000).map(|_| s.next_exp(1.0)).collect();
        let b: Vec<f64> = (0..2000).map(|_| s.next_exp(1.0)).collect();
        let c: Vec<f64> = (0..2000).map(|_| 2.0 * s.next_exp(1.0)).collect();
        assert!(ks_two_sample(&a, &b).unwrap() < 0.06);
        assert!(ks_two_sample(&a, &c).unwrap() > 0.15);
    }

    #[test]
    fn hill_estimator_on_pareto() {
        let mut s = RngStream::new(4, 0);
        // Pareto with index 2: X = U^(-1/2)
        let sample: Vec<f64> = (0..50_000).map(|_| s.next_f64().powf(-0.5)).collect();
        let idx = hill_tail_index(&sample, 2000).unwrap();
        assert!((idx - 2.0).abs() < 0.2, "hill = {idx}");
    }

    #[test]
    fn sum_of_independent_power_tails_matches_single_tail_sum() {
        // regular variation: P(X1 + X2 > x) ~ P(X1 > x) + P(X2 > x).
        // The finite-mean correction decays like 2 E[X]/x, so the 10% window
        // opens around x ~ 50 for a Pareto(2) pair.
        let mut s = RngStream::new(77, 0);
        let n = 10_000_000usize;
        let mut joint = [0u64; 2];
        let mut separate = [0u64; 2];
        let xs = [84.0f64, 120.0];
        for _ in 0..n {
            let a = s.next_f64().powf(-0.5);
            let b = s.next_f64().powf(-0.5);
            for (i, x) in xs.iter().enumerate() {
                if a + b > *x {
                    joint[i] += 1;
                }
                separate[i] += (a > *x) as u64 + (b > *x) as u64;
            }
        }
        for (i, x) in xs.iter().enumerate() {
            let ratio = joint[i] as f64 / separate[i] as f64;
            assert!((ratio - 1.0).abs() < 0.10, "x = {x}: ratio = {ratio}");
        }
    }

    #[test]
    fn survival_csv_schema() {
        let e = EmpiricalSurvival::from_samples(&[1, 2, 2, 5], "winner=2").unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("value,survival,n,conditioning\n"));
        assert!(text.contains("2,0.25,4,winner=2"));
    }
}
