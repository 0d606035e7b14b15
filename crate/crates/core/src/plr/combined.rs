use nalgebra::{DMatrix, DVector};

use super::ChannelPredictions;
use crate::error::{Error, Result};

/// Maximum violation of `Σ a = 1` accepted by [`predict_combined`].
pub const CONSTRAINT_TOL: f64 = 1e-6;

/// Mixture of gray- and color-based predictions:
/// `K·(a_gray·PS_gray + a_red·PS_red + a_green·PS_green + a_blue·PS_blue) + C`
/// with the four `a` summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedWeights {
    pub a_gray: f64,
    pub a_red: f64,
    pub a_green: f64,
    pub a_blue: f64,
    pub k: f64,
    pub c: f64,
}

impl CombinedWeights {
    /// Gray-only weights.
    pub fn gray_only(k: f64, c: f64) -> Self {
        CombinedWeights {
            a_gray: 1.0,
            a_red: 0.0,
            a_green: 0.0,
            a_blue: 0.0,
            k,
            c,
        }
    }

    pub fn weight_sum(&self) -> f64 {
        self.a_gray + self.a_red + self.a_green + self.a_blue
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedFit {
    pub weights: CombinedWeights,
    /// True when the design was rank deficient and the gray-only fallback
    /// was used.
    pub degenerate: bool,
}

/// Relative singular-value cutoff for declaring the design rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Constrained least-squares fit of the combined model.
///
/// Substituting `a_blue = 1 - a_gray - a_red - a_green` gives
/// `PS = K·PS_blue + K·a_gray·(PS_gray - PS_blue) + K·a_red·(PS_red - PS_blue)
///  + K·a_green·(PS_green - PS_blue) + C`, which is linear in
/// `(K, K·a_gray, K·a_red, K·a_green, C)`. A rank-deficient design falls
/// back to gray-only weights with `K, C` regressed on `PS_gray`.
pub fn fit_combined(predictors: &[ChannelPredictions], measured: &[f64]) -> Result<CombinedFit> {
    if predictors.len() != measured.len() {
        return Err(Error::DimensionMismatch {
            expected: predictors.len(),
            got: measured.len(),
        });
    }
    let n = predictors.len();
    if n < 6 {
        return Err(Error::InsufficientData(format!("combined fit needs >= 6 observations, got {n}")));
    }
    if predictors.iter().any(|p| p.as_array().iter().any(|v| !v.is_finite()))
        || measured.iter().any(|v| !v.is_finite())
    {
        return Err(Error::InvalidInput("non-finite predictor or measurement".into()));
    }

    let design = DMatrix::from_fn(n, 5, |i, j| {
        let p = &predictors[i];
        match j {
            0 => p.blue,
            1 => p.gray - p.blue,
            2 => p.red - p.blue,
            3 => p.green - p.blue,
            _ => 1.0,
        }
    });
    if !full_rank(&design) {
        return Ok(fallback(predictors, measured));
    }
    // column scaling keeps the SVD well conditioned
    let scales: Vec<f64> = (0..5)
        .map(|j| design.column(j).norm().max(f64::MIN_POSITIVE))
        .collect();
    let mut scaled = design.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let y = DVector::from_column_slice(measured);
    let svd = scaled.svd(true, true);
    let theta = svd
        .solve(&y, RANK_TOL)
        .map_err(|e| Error::FitFailure(format!("combined least squares: {e}")))?;
    let theta: Vec<f64> = theta.iter().zip(&scales).map(|(t, s)| t / s).collect();
    let k = theta[0];
    if !k.is_finite() || k.abs() < 1e-12 {
        return Ok(fallback(predictors, measured));
    }
    let a_gray = theta[1] / k;
    let a_red = theta[2] / k;
    let a_green = theta[3] / k;
    let weights = CombinedWeights {
        a_gray,
        a_red,
        a_green,
        a_blue: 1.0 - a_gray - a_red - a_green,
        k,
        c: theta[4],
    };
    if [weights.a_gray, weights.a_red, weights.a_green, weights.a_blue, weights.c]
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::FitFailure("combined fit produced non-finite weights".into()));
    }
    Ok(CombinedFit {
        weights,
        degenerate: false,
    })
}

fn full_rank(design: &DMatrix<f64>) -> bool {
    // Standardize the non-intercept columns after centering so that a
    // constant column shows up as a zero singular value.
    let n = design.nrows();
    let mut m = DMatrix::zeros(n, 5);
    for j in 0..4 {
        let col = design.column(j);
        let mean = col.mean();
        let centered = col.map(|v| v - mean);
        let norm = centered.norm();
        let magnitude = col.amax().max(1.0);
        if norm <= 1e-12 * magnitude * (n as f64).sqrt() {
            return false;
        }
        m.set_column(j, &(centered / norm));
    }
    m.set_column(4, &DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min / max > RANK_TOL
}

fn fallback(predictors: &[ChannelPredictions], measured: &[f64]) -> CombinedFit {
    let n = measured.len() as f64;
    let mx = predictors.iter().map(|p| p.gray).sum::<f64>() / n;
    let my = measured.iter().sum::<f64>() / n;
    let sxx: f64 = predictors.iter().map(|p| (p.gray - mx).powi(2)).sum();
    let sxy: f64 = predictors
        .iter()
        .zip(measured)
        .map(|(p, y)| (p.gray - mx) * (y - my))
        .sum();
    let spread = predictors.iter().map(|p| p.gray.abs()).fold(1.0, f64::max);
    let k = if sxx > (1e-12 * spread).powi(2) * n {
        sxy / sxx
    } else {
        1.0
    };
    CombinedFit {
        weights: CombinedWeights::gray_only(k, my - k * mx),
        degenerate: true,
    }
}

/// Evaluates the combined model for one observation.
pub fn predict_combined(weights: &CombinedWeights, p: &ChannelPredictions) -> Result<f64> {
    let sum = weights.weight_sum();
    if !sum.is_finite() || (sum - 1.0).abs() > CONSTRAINT_TOL {
        return Err(Error::InvalidModel(format!("combined weights sum to {sum}, not 1")));
    }
    let mix = weights.a_gray * p.gray + weights.a_red * p.red + weights.a_green * p.green + weights.a_blue * p.blue;
    Ok(weights.k * mix + weights.c)
}
