//! Evaluation statistics: Pearson correlation with a two-sided p-value,
//! coefficient of determination and range-normalized RMSE.

use statrs::function::beta::checked_beta_reg;

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_pair(a: &[f64], b: &[f64], min_n: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < min_n {
        return Err(Error::InsufficientData(format!("need n >= {min_n}, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in series".into()));
    }
    Ok(())
}

/// Two-sided p-value of a Pearson correlation `r` over `n` samples, from the
/// Student-t statistic with `n - 2` degrees of freedom.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let r2 = r * r;
    if r2 >= 1.0 {
        return 0.0;
    }
    let t2 = r2 * df / (1.0 - r2);
    // P(|T| > t) = I_{df/(df+t²)}(df/2, 1/2)
    checked_beta_reg(df / 2.0, 0.5, df / (df + t2)).unwrap_or(f64::NAN).clamp(0.0, 1.0)
}

/// Sample Pearson correlation and its two-sided p-value.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y, 3)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(Error::Undefined("correlation of a zero-variance series".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok((r, pearson_p_value(r, x.len())))
}

/// `1 - SS_res / SS_tot`; negative when worse than predicting the mean.
pub fn r2_score(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted, 2)?;
    let m = mean(observed);
    let ss_tot: f64 = observed.iter().map(|o| (o - m).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::Undefined("R² with zero observed variance".into()));
    }
    let ss_res: f64 = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// RMSE divided by the range of the observed values.
pub fn nrmse(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(observed, predicted, 1)?;
    let (lo, hi) = observed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(hi > lo) {
        return Err(Error::Undefined("NRMSE with zero observed range".into()));
    }
    let mse = observed.iter().zip(predicted).map(|(o, p)| (o - p).powi(2)).sum::<f64>() / observed.len() as f64;
    Ok(mse.sqrt() / (hi - lo))
}

/// Metrics of one prediction set against its observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub r: f64,
    pub p: f64,
    pub r2: f64,
    pub nrmse: f64,
}

impl EvalReport {
    pub fn evaluate(observed: &[f64], predicted: &[f64]) -> Result<Self> {
        let (r, p) = pearson(observed, predicted)?;
        Ok(EvalReport {
            n: observed.len(),
            r,
            p,
            r2: r2_score(observed, predicted)?,
            nrmse: nrmse(observed, predicted)?,
        })
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanSd { mean: f64::NAN, sd: f64::NAN };
        }
        let m = mean(values);
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanSd { mean: m, sd }
    }
}

/// Across-participant summary of per-participant reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub folds: usize,
    pub r: MeanSd,
    pub p: MeanSd,
    pub max_p: f64,
    pub r2: MeanSd,
    pub nrmse: MeanSd,
}

impl Aggregate {
    pub fn of(reports: &[EvalReport]) -> Self {
        let col = |f: fn(&EvalReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
        Aggregate {
            folds: reports.len(),
            r: MeanSd::of(&col(|e| e.r)),
            p: MeanSd::of(&col(|e| e.p)),
            max_p: reports.iter().map(|e| e.p).fold(f64::NAN, f64::max),
            r2: MeanSd::of(&col(|e| e.r2)),
            nrmse: MeanSd::of(&col(|e| e.nrmse)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_lines() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let (r, p) = pearson(&x, &y).unwrap();
        assert!((r - 1.0).abs() < 1e-15 && p < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().0 + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_example() {
        let (r, p) = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        // t = 0.8·sqrt(3/0.36) = 2.3094, two-sided with 3 df
        assert!((p - 0.104088).abs() < 1e-5, "{p}");
    }

    #[test]
    fn zero_variance_is_undefined() {
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
        assert!(matches!(r2_score(&[2.0, 2.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert!(matches!(nrmse(&[2.0, 2.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn r2_and_nrmse_examples() {
        let obs = [1.0, 2.0, 3.0];
        assert_eq!(r2_score(&obs, &obs).unwrap(), 1.0);
        assert_eq!(r2_score(&obs, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((r2_score(&obs, &[1.0, 2.0, 4.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(nrmse(&obs, &obs).unwrap(), 0.0);
        assert!((nrmse(&[0.0, 2.0], &[1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        let a = nrmse(&[0.3, 1.7, 2.2], &[0.1, 1.9, 2.0]).unwrap();
        let b = nrmse(&[3.0, 17.0, 22.0], &[1.0, 19.0, 20.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn aggregate_mean_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.sd - 1.0).abs() < 1e-15);
    }
}
