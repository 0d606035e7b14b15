//! Eye-tracker trace cleaning: blink masking, linear imputation, binocular
//! averaging and alignment of samples to video frames.

use crate::error::{Error, Result};

/// Blink padding used when none is configured.
pub const DEFAULT_PAD_MS: f64 = 2.0;

/// The eye tracker marks lost pupil samples with -1; any non-positive or
/// non-finite value is treated the same way.
pub fn is_missing(v: f64) -> bool {
    !(v.is_finite() && v > 0.0)
}

pub type GazePoint = (f64, f64);

/// Binocular samples as exported by the eye tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPupilTrace {
    pub timestamps: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub gaze: Vec<Option<GazePoint>>,
}

impl RawPupilTrace {
    pub fn new(
        timestamps: Vec<f64>,
        left: Vec<f64>,
        right: Vec<f64>,
        gaze: Vec<Option<GazePoint>>,
    ) -> Result<Self> {
        let n = timestamps.len();
        for (name, len) in [("left", left.len()), ("right", right.len()), ("gaze", gaze.len())] {
            if len != n {
                return Err(Error::InvalidInput(format!("{name} has {len} samples, timestamps {n}")));
            }
        }
        if timestamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite timestamp".into()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(format!(
                "timestamps must be strictly increasing (sample {})",
                i + 1
            )));
        }
        Ok(RawPupilTrace {
            timestamps,
            left,
            right,
            gaze,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Fully imputed binocular-mean pupil trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanTrace {
    pub timestamps: Vec<f64>,
    pub pupil: Vec<f64>,
    pub gaze: Vec<Option<GazePoint>>,
}

/// Marks blink samples (either eye missing) plus `pad_ms` on each side of
/// every blink run. At least one neighbouring sample is padded on each side
/// when it exists, since the nominal pad is shorter than a 60 Hz sample
/// period.
pub fn mark_blinks(trace: &RawPupilTrace, pad_ms: f64) -> Vec<bool> {
    let n = trace.len();
    let t = &trace.timestamps;
    let missing: Vec<bool> = (0..n)
        .map(|i| is_missing(trace.left[i]) || is_missing(trace.right[i]))
        .collect();
    let mut mask = missing.clone();
    let mut i = 0;
    while i < n {
        if !missing[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && missing[i] {
            i += 1;
        }
        let end = i - 1;
        let mut j = start;
        while j > 0 {
            j -= 1;
            if j + 1 == start || t[start] - t[j] <= pad_ms {
                mask[j] = true;
            } else {
                break;
            }
        }
        let mut j = end + 1;
        while j < n {
            if j == end + 1 || t[j] - t[end] <= pad_ms {
                mask[j] = true;
                j += 1;
            } else {
                break;
            }
        }
    }
    mask
}

fn impute_series(t: &[f64], values: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let valid: Vec<usize> = (0..values.len())
        .filter(|&i| !mask[i] && !is_missing(values[i]))
        .collect();
    if valid.len() < 2 {
        return Err(Error::UnrecoverableTrace(format!(
            "{} valid samples, need at least 2",
            valid.len()
        )));
    }
    let mut out = values.to_vec();
    let first = valid[0];
    let last = *valid.last().unwrap();
    for v in out.iter_mut().take(first) {
        *v = values[first];
    }
    for v in out.iter_mut().skip(last + 1) {
        *v = values[last];
    }
    for w in valid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b == a + 1 {
            continue;
        }
        let span = t[b] - t[a];
        for i in a + 1..b {
            let f = (t[i] - t[a]) / span;
            out[i] = values[a] + f * (values[b] - values[a]);
        }
    }
    Ok(out)
}

/// Replaces masked samples of each eye by linear interpolation in time
/// between the nearest valid neighbours (nearest valid value at the ends),
/// then averages the two eyes.
pub fn impute_linear(trace: &RawPupilTrace, mask: &[bool]) -> Result<CleanTrace> {
    if mask.len() != trace.len() {
        return Err(Error::DimensionMismatch {
            expected: trace.len(),
            got: mask.len(),
        });
    }
    let left = impute_series(&trace.timestamps, &trace.left, mask)?;
    let right = impute_series(&trace.timestamps, &trace.right, mask)?;
    let pupil: Vec<f64> = left.iter().zip(&right).map(|(l, r)| 0.5 * (l + r)).collect();
    if pupil.iter().any(|v| is_missing(*v)) {
        return Err(Error::UnrecoverableTrace("imputed pupil is not positive everywhere".into()));
    }
    Ok(CleanTrace {
        timestamps: trace.timestamps.clone(),
        pupil,
        gaze: trace.gaze.clone(),
    })
}

/// Blink masking followed by imputation.
pub fn clean(trace: &RawPupilTrace, pad_ms: f64) -> Result<CleanTrace> {
    let mask = mark_blinks(trace, pad_ms);
    impute_linear(trace, &mask)
}

/// Presentation window of one video frame, `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameWindow {
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedFrame {
    pub pupil: f64,
    pub gaze: Option<GazePoint>,
    /// Number of pupil samples inside the window (0 when inherited).
    pub samples: usize,
}

fn check_windows(frames: &[FrameWindow]) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        if !(f.end_ms > f.start_ms) {
            return Err(Error::Alignment(format!("frame {i} has an empty or inverted window")));
        }
        if i > 0 && f.start_ms < frames[i - 1].end_ms {
            return Err(Error::Alignment(format!("frame {i} overlaps or precedes frame {}", i - 1)));
        }
    }
    Ok(())
}

/// Mean pupil size and mean valid gaze point per frame window. Frames with
/// no samples inherit the previous frame's values.
pub fn align_to_frames(trace: &CleanTrace, frames: &[FrameWindow]) -> Result<Vec<AlignedFrame>> {
    check_windows(frames)?;
    let t = &trace.timestamps;
    let mut out: Vec<AlignedFrame> = Vec::with_capacity(frames.len());
    let mut i = t.partition_point(|x| *x < frames.first().map_or(0.0, |f| f.start_ms));
    for (fi, f) in frames.iter().enumerate() {
        while i < t.len() && t[i] < f.start_ms {
            i += 1;
        }
        let (mut sum, mut count) = (0.0, 0usize);
        let (mut gx, mut gy, mut gn) = (0.0, 0.0, 0usize);
        while i < t.len() && t[i] < f.end_ms {
            sum += trace.pupil[i];
            count += 1;
            if let Some((x, y)) = trace.gaze[i] {
                gx += x;
                gy += y;
                gn += 1;
            }
            i += 1;
        }
        if count == 0 {
            let prev = out
                .last()
                .copied()
                .ok_or_else(|| Error::Alignment(format!("first frame ({fi}) has no pupil samples")))?;
            out.push(AlignedFrame { samples: 0, ..prev });
        } else {
            out.push(AlignedFrame {
                pupil: sum / count as f64,
                gaze: (gn > 0).then(|| (gx / gn as f64, gy / gn as f64)),
                samples: count,
            });
        }
    }
    Ok(out)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        0.5 * (values[m - 1] + values[m])
    } else {
        values[m]
    })
}

/// Calibration-path alternative to imputation: within each frame, missing
/// samples of an eye are replaced by that eye's median over the frame, and
/// the binocular mean is averaged over the frame.
pub fn frame_means_median_fill(trace: &RawPupilTrace, frames: &[FrameWindow]) -> Result<Vec<f64>> {
    check_windows(frames)?;
    let t = &trace.timestamps;
    frames
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let lo = t.partition_point(|x| *x < f.start_ms);
            let hi = t.partition_point(|x| *x < f.end_ms);
            if lo == hi {
                return Err(Error::Alignment(format!("calibration frame {fi} has no samples")));
            }
            let fill = |eye: &[f64]| -> Result<Vec<f64>> {
                let mut valid: Vec<f64> = eye[lo..hi].iter().copied().filter(|v| !is_missing(*v)).collect();
                let med = median(&mut valid).ok_or_else(|| {
                    Error::UnrecoverableTrace(format!("calibration frame {fi} has no valid samples"))
                })?;
                Ok(eye[lo..hi].iter().map(|v| if is_missing(*v) { med } else { *v }).collect())
            };
            let l = fill(&trace.left)?;
            let r = fill(&trace.right)?;
            Ok(l.iter().zip(&r).map(|(a, b)| 0.5 * (a + b)).sum::<f64>() / l.len() as f64)
        })
        .collect()
}
