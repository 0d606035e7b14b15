//! Splits a measured pupil series into its luminosity-driven part and the
//! arousal residual, and summarizes series over salient intervals.

use crate::error::{Error, Result};
use crate::luminance::{LuminanceLut, RgbPercent};
use crate::plr::{channel_predictions, fit_combined, predict_combined, ChannelPredictions, CombinedWeights, PlrModelSet};
use crate::preprocess::FrameWindow;

/// Per-frame decomposition of one clip for one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipDecomposition {
    pub ps_measured: Vec<f64>,
    pub ps_luminosity: Vec<f64>,
    pub ps_arousal: Vec<f64>,
    pub weights: CombinedWeights,
    /// The combined fit fell back to gray-only weights.
    pub degenerate: bool,
}

impl ClipDecomposition {
    pub fn len(&self) -> usize {
        self.ps_measured.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ps_measured.is_empty()
    }

    pub fn arousal_mean(&self) -> f64 {
        self.ps_arousal.iter().sum::<f64>() / self.len() as f64
    }
}

/// Channel predictions for every frame's (effective) RGB.
pub fn frame_predictors(
    rgbs: &[RgbPercent],
    model: &PlrModelSet,
    lut: &LuminanceLut,
) -> Result<Vec<ChannelPredictions>> {
    rgbs.iter().map(|rgb| channel_predictions(model, *rgb, lut)).collect()
}

/// Fits the combined weights to this clip and subtracts the luminosity
/// prediction from the measured series.
pub fn decompose_clip(predictors: &[ChannelPredictions], measured: &[f64]) -> Result<ClipDecomposition> {
    if measured.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "clip has {} frames, need at least 6",
            measured.len()
        )));
    }
    let fit = fit_combined(predictors, measured)?;
    let mut d = decompose_with_weights(predictors, measured, &fit.weights)?;
    d.degenerate = fit.degenerate;
    Ok(d)
}

/// Decomposition with externally fitted weights (e.g. one fit per
/// participant across all clips).
pub fn decompose_with_weights(
    predictors: &[ChannelPredictions],
    measured: &[f64],
    weights: &CombinedWeights,
) -> Result<ClipDecomposition> {
    if predictors.len() != measured.len() {
        return Err(Error::DimensionMismatch {
            expected: measured.len(),
            got: predictors.len(),
        });
    }
    let ps_luminosity = predictors
        .iter()
        .map(|p| predict_combined(weights, p))
        .collect::<Result<Vec<_>>>()?;
    let ps_arousal = measured.iter().zip(&ps_luminosity).map(|(m, l)| m - l).collect();
    Ok(ClipDecomposition {
        ps_measured: measured.to_vec(),
        ps_luminosity,
        ps_arousal,
        weights: *weights,
        degenerate: false,
    })
}

/// Emotionally salient sub-windows of one clip, in seconds from clip onset.
#[derive(Debug, Clone, PartialEq)]
pub struct SalientInterval {
    pub clip_id: String,
    pub intervals: Vec<(f64, f64)>,
}

impl SalientInterval {
    pub fn new(clip_id: impl Into<String>, mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        let clip_id = clip_id.into();
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (i, (s, e)) in intervals.iter().enumerate() {
            if !s.is_finite() || !e.is_finite() || *s < 0.0 || !(e > s) {
                return Err(Error::InvalidInterval(format!("{clip_id}: bad interval [{s}, {e}]")));
            }
            if i > 0 && *s < intervals[i - 1].1 {
                return Err(Error::InvalidInterval(format!("{clip_id}: overlapping intervals")));
            }
        }
        Ok(SalientInterval { clip_id, intervals })
    }

    /// Whole-clip interval.
    pub fn whole(clip_id: impl Into<String>, duration_s: f64) -> Result<Self> {
        Self::new(clip_id, vec![(0.0, duration_s)])
    }

    fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|(s, e)| t >= *s && t <= *e)
    }

    /// Indices of frames whose midpoint falls inside an interval. Times are
    /// measured from the start of the first frame.
    pub fn frames(&self, frame_times: &[FrameWindow]) -> Result<Vec<usize>> {
        let Some(first) = frame_times.first() else {
            return Err(Error::InvalidInterval(format!("{}: clip has no frames", self.clip_id)));
        };
        let duration = (frame_times.last().unwrap().end_ms - first.start_ms) / 1000.0;
        if let Some((_, e)) = self.intervals.last() {
            if *e > duration + 1e-6 {
                return Err(Error::InvalidInterval(format!(
                    "{}: interval ends at {e} s, clip lasts {duration} s",
                    self.clip_id
                )));
            }
        }
        let idx: Vec<usize> = frame_times
            .iter()
            .enumerate()
            .filter(|(_, f)| self.contains((0.5 * (f.start_ms + f.end_ms) - first.start_ms) / 1000.0))
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::InvalidInterval(format!("{}: no frame inside the salient intervals", self.clip_id)));
        }
        Ok(idx)
    }
}

/// Mean of `series` over the frames selected by the salient intervals.
pub fn salient_mean(series: &[f64], salient: &SalientInterval, frame_times: &[FrameWindow]) -> Result<f64> {
    if series.len() != frame_times.len() {
        return Err(Error::DimensionMismatch {
            expected: frame_times.len(),
            got: series.len(),
        });
    }
    let idx = salient.frames(frame_times)?;
    Ok(idx.iter().map(|&i| series[i]).sum::<f64>() / idx.len() as f64)
}
