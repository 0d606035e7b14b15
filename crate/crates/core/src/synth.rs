//! Deterministic synthetic study with known luminosity and arousal
//! components, used as the end-to-end oracle.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decouple::SalientInterval;
use crate::error::{Error, Result};
use crate::luminance::{DisplayModel, LuminanceLut, RgbPercent};
use crate::plr::{channel_predictions, Channel, PlrModelSet};
use crate::preprocess::{FrameWindow, RawPupilTrace};
use crate::scaling::{rescale_axis, ClipLabel, RatingTensor, EMOTIONS};

/// Circumplex angle of each emotion, in [`EMOTIONS`] order (degrees;
/// valence on the x axis, arousal on y).
pub const EMOTION_ANGLES: [f64; 12] = [0.0, 180.0, 30.0, 300.0, 330.0, 60.0, 90.0, 150.0, 240.0, 210.0, 120.0, 270.0];

const SCREEN: (f64, f64) = (1280.0, 720.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_participants: usize,
    pub n_clips: usize,
    pub frames_per_clip: usize,
    pub fps: f64,
    pub sample_rate_hz: f64,
    /// Relative perturbation σ of the PLR a, c and d coefficients.
    pub coeff_sigma: [f64; 3],
    /// Arousal dilation in mm per label unit.
    pub gain: f64,
    /// Relative per-participant σ of the gain.
    pub gain_jitter: f64,
    pub noise_sd: f64,
    /// Target correlation between clip arousal labels and the clips' mean
    /// light-driven pupil size. Negative values put the brightest clips on
    /// the most arousing content.
    pub confound: f64,
    /// 0 gives a linear label→dilation link; κ > 0 uses `(e^{κ·label} − 1)/κ`.
    pub link_curvature: f64,
    /// Mean number of blink runs per trace.
    pub blinks_per_clip: f64,
    pub rating_noise: f64,
    /// True mixture weights (gray, red, green, blue) of the luminosity response.
    pub true_weights: [f64; 4],
    pub gamma: f64,
    pub max_lux: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_participants: 12,
            n_clips: 16,
            frames_per_clip: 200,
            fps: 25.0,
            sample_rate_hz: 60.0,
            coeff_sigma: [0.05, 0.05, 0.03],
            gain: 0.35,
            gain_jitter: 0.1,
            noise_sd: 0.03,
            confound: -0.8,
            link_curvature: 0.0,
            blinks_per_clip: 1.0,
            rating_noise: 0.5,
            true_weights: [0.4, 0.2, 0.3, 0.1],
            gamma: 2.2,
            max_lux: 100.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_participants < 3 || self.n_clips < 3 {
            return bad(format!(
                "need at least 3 participants and 3 clips, got {} and {}",
                self.n_participants, self.n_clips
            ));
        }
        if self.frames_per_clip < 25 {
            return bad(format!("frames_per_clip must be >= 25, got {}", self.frames_per_clip));
        }
        if !(self.fps > 0.0) || !(self.sample_rate_hz >= self.fps) {
            return bad("sample_rate_hz must be >= fps > 0".into());
        }
        let sigmas = [self.coeff_sigma[0], self.coeff_sigma[1], self.coeff_sigma[2], self.gain_jitter, self.noise_sd, self.rating_noise];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("standard deviations must be finite and >= 0".into());
        }
        if !(-1.0..=1.0).contains(&self.confound) {
            return bad(format!("confound {} outside [-1, 1]", self.confound));
        }
        if !(self.gain >= 0.0) || !(self.link_curvature >= 0.0) || !(self.blinks_per_clip >= 0.0) {
            return bad("gain, link_curvature and blinks_per_clip must be >= 0".into());
        }
        let w = self.true_weights;
        if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("true_weights must be nonnegative and sum to 1, got {w:?}"));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.frames_per_clip as f64 / self.fps
    }

    fn link(&self, label: f64) -> f64 {
        if self.link_curvature == 0.0 {
            label
        } else {
            ((self.link_curvature * label).exp() - 1.0) / self.link_curvature
        }
    }
}

/// Per-sample ground truth of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSeries {
    pub timestamps: Vec<f64>,
    pub luminosity: Vec<f64>,
    pub arousal: Vec<f64>,
    pub noise: Vec<f64>,
    /// `luminosity + arousal + noise`
    pub measured: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParticipant {
    pub id: String,
    pub model: PlrModelSet,
    pub gain: f64,
    /// `(rgb, mean pupil)` for the 27 frames of the {0,50,100}³ cube.
    pub calibration: Vec<(RgbPercent, f64)>,
    pub traces: Vec<RawPupilTrace>,
    pub truth: Vec<TruthSeries>,
    /// `ratings[clip][emotion]`
    pub ratings: Vec<[u8; 12]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStudy {
    pub config: SynthConfig,
    pub lut: LuminanceLut,
    pub clips: Vec<String>,
    pub frame_times: Vec<FrameWindow>,
    pub frames: Vec<Vec<RgbPercent>>,
    pub labels: Vec<ClipLabel>,
    pub salient: Vec<SalientInterval>,
    pub participants: Vec<SynthParticipant>,
}

impl SynthStudy {
    pub fn ratings(&self) -> RatingTensor {
        RatingTensor {
            participants: self.participants.iter().map(|p| p.id.clone()).collect(),
            clips: self.clips.clone(),
            scores: self.participants.iter().map(|p| p.ratings.clone()).collect(),
        }
    }

    /// Mean LUT luminosity of every clip.
    pub fn clip_mean_luminosity(&self) -> Result<Vec<f64>> {
        self.frames.iter().map(|f| mean_lux(&self.lut, f)).collect()
    }
}

fn mean_lux(lut: &LuminanceLut, frames: &[RgbPercent]) -> Result<f64> {
    let mut s = 0.0;
    for rgb in frames {
        s += lut.query(*rgb)?;
    }
    Ok(s / frames.len() as f64)
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn pearson_r(x: &[f64], y: &[f64]) -> f64 {
    crate::metrics::pearson(x, y).map(|(r, _)| r).unwrap_or(0.0)
}

/// Assigns one brightness level to every clip so that the label correlates
/// with the clip's mean light response (`pupil[c][j]`) at `target`, and
/// with its mean luminosity (`lux[c][j]`) at `-target`, as closely as a
/// swap search gets.
fn confound_assignment(
    pupil: &[Vec<f64>],
    lux: &[Vec<f64>],
    labels: &[f64],
    target: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = labels.len();
    let score = |perm: &[usize]| {
        let p: Vec<f64> = (0..n).map(|c| pupil[c][perm[c]]).collect();
        let l: Vec<f64> = (0..n).map(|c| lux[c][perm[c]]).collect();
        (pearson_r(labels, &p) - target).abs() + (pearson_r(labels, &l) + target).abs()
    };
    let mut best: Vec<usize> = (0..n).collect();
    let mut best_s = score(&best);
    for _ in 0..8 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let mut s = score(&perm);
        loop {
            let mut improved = false;
            for i in 0..n {
                for j in i + 1..n {
                    perm.swap(i, j);
                    let t = score(&perm);
                    if t < s - 1e-12 {
                        s = t;
                        improved = true;
                    } else {
                        perm.swap(i, j);
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if s < best_s {
            best_s = s;
            best = perm;
        }
    }
    best
}

fn salient_for_clip(id: &str, duration: f64, rng: &mut ChaCha8Rng) -> Result<SalientInterval> {
    let cover = rng.random_range(0.40..0.45) * duration;
    let margin = (0.1 * duration).min(0.5);
    let iv = if rng.random_bool(0.5) {
        let s = rng.random_range(margin..duration - cover - margin);
        vec![(s, s + cover)]
    } else {
        let half = cover / 2.0;
        let slack = duration - cover - 3.0 * margin;
        let a = rng.random_range(0.0..slack);
        let b = rng.random_range(0.0..slack - a);
        let s1 = margin + a;
        let s2 = s1 + half + margin + b;
        vec![(s1, s1 + half), (s2, s2 + half)]
    };
    let iv = iv.into_iter().map(|(s, e)| (round_to(s, 0.001), round_to(e, 0.001))).collect();
    SalientInterval::new(id, iv)
}

/// Raised-cosine window: 1 inside the intervals, tapering to 0 at their edges.
fn bump(salient: &SalientInterval, t_s: f64) -> f64 {
    let mut w: f64 = 0.0;
    for &(s, e) in &salient.intervals {
        let ramp = (0.25 * (e - s)).min(0.4);
        let v = if t_s <= s || t_s >= e {
            0.0
        } else if t_s < s + ramp {
            0.5 - 0.5 * (PI * (t_s - s) / ramp).cos()
        } else if t_s > e - ramp {
            0.5 - 0.5 * (PI * (e - t_s) / ramp).cos()
        } else {
            1.0
        };
        w = w.max(v);
    }
    w
}

fn true_model(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> PlrModelSet {
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut m = PlrModelSet::group();
    let [sa, sc, sd] = cfg.coeff_sigma;
    m.gray.a *= 1.0 + sa * n.sample(rng);
    m.gray.c *= 1.0 + sc * n.sample(rng);
    m.gray.d *= 1.0 + sd * n.sample(rng);
    // every curve shares the same dark-adapted size
    let dark = m.gray.a + m.gray.d;
    for ch in [Channel::Red, Channel::Green, Channel::Blue] {
        let c = m.get_mut(ch);
        c.a *= 1.0 + sa * n.sample(rng);
        c.c *= 1.0 + sc * n.sample(rng);
        c.d = dark - c.a;
    }
    m
}

/// Light response of the synthetic eye: a single channel's own curve for
/// pure red/green/blue/gray frames, the weighted mixture otherwise.
fn light_response(cfg: &SynthConfig, model: &PlrModelSet, lut: &LuminanceLut, rgb: RgbPercent) -> Result<f64> {
    let p = channel_predictions(model, rgb, lut)?;
    let [r, g, b] = rgb.channels();
    let pure = match (r > 0.0, g > 0.0, b > 0.0) {
        (false, false, false) => Some(p.gray),
        _ if r == g && g == b => Some(p.gray),
        (true, false, false) => Some(p.red),
        (false, true, false) => Some(p.green),
        (false, false, true) => Some(p.blue),
        _ => None,
    };
    Ok(pure.unwrap_or_else(|| {
        let w = cfg.true_weights;
        w[0] * p.gray + w[1] * p.red + w[2] * p.green + w[3] * p.blue
    }))
}

struct ClipDesign<'a> {
    frames: &'a [Vec<RgbPercent>],
    labels: &'a [ClipLabel],
    salient: &'a [SalientInterval],
}

fn participant(
    cfg: &SynthConfig,
    lut: &LuminanceLut,
    design: &ClipDesign,
    index: usize,
) -> Result<SynthParticipant> {
    let mut rng = stream(cfg.seed, index as u64 + 1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let model = true_model(cfg, &mut rng);
    let gain = (cfg.gain * (1.0 + cfg.gain_jitter * normal.sample(&mut rng))).max(0.0);
    let eye_offset = rng.random_range(-0.05..0.05);

    // one second of 60 Hz samples averaged per calibration frame
    let cal_sd = cfg.noise_sd / cfg.sample_rate_hz.sqrt();
    let mut calibration = Vec::with_capacity(27);
    for r in [0.0, 50.0, 100.0] {
        for g in [0.0, 50.0, 100.0] {
            for b in [0.0, 50.0, 100.0] {
                let rgb = RgbPercent::new(r, g, b)?;
                let pupil = light_response(cfg, &model, lut, rgb)? + cal_sd * normal.sample(&mut rng);
                calibration.push((rgb, pupil));
            }
        }
    }

    let frame_ms = 1000.0 / cfg.fps;
    let sample_ms = 1000.0 / cfg.sample_rate_hz;
    let duration_ms = cfg.frames_per_clip as f64 * frame_ms;
    let blinks = Poisson::new(cfg.blinks_per_clip.max(1e-12)).unwrap();
    let mut traces = Vec::new();
    let mut truth = Vec::new();
    for (c, frames) in design.frames.iter().enumerate() {
        let lum_frame = frames
            .iter()
            .map(|rgb| light_response(cfg, &model, lut, *rgb))
            .collect::<Result<Vec<f64>>>()?;
        let level = gain * cfg.link(design.labels[c].arousal);
        let n = (duration_ms / sample_ms).floor() as usize;
        let mut ts = Vec::with_capacity(n);
        for i in 0..n {
            let jitter = rng.random_range(0.0..0.2 * sample_ms);
            let t = round_to(i as f64 * sample_ms + jitter, 0.001);
            if t < duration_ms {
                ts.push(t);
            }
        }
        let mut tr = TruthSeries {
            timestamps: ts.clone(),
            luminosity: Vec::with_capacity(ts.len()),
            arousal: Vec::with_capacity(ts.len()),
            noise: Vec::with_capacity(ts.len()),
            measured: Vec::with_capacity(ts.len()),
        };
        let mut left = Vec::with_capacity(ts.len());
        let mut right = Vec::with_capacity(ts.len());
        let mut gaze = Vec::with_capacity(ts.len());
        for &t in &ts {
            let f = ((t / frame_ms).floor() as usize).min(frames.len() - 1);
            let l = lum_frame[f];
            let a = level * bump(&design.salient[c], t / 1000.0);
            let e = cfg.noise_sd * normal.sample(&mut rng);
            let m = l + a + e;
            tr.luminosity.push(l);
            tr.arousal.push(a);
            tr.noise.push(e);
            tr.measured.push(m);
            left.push(m + eye_offset);
            right.push(m - eye_offset);
            let gx = (SCREEN.0 / 2.0 + 80.0 * normal.sample(&mut rng)).clamp(0.0, SCREEN.0 - 1.0);
            let gy = (SCREEN.1 / 2.0 + 60.0 * normal.sample(&mut rng)).clamp(0.0, SCREEN.1 - 1.0);
            gaze.push(Some((round_to(gx, 0.1), round_to(gy, 0.1))));
        }
        let k = if cfg.blinks_per_clip > 0.0 { blinks.sample(&mut rng) as usize } else { 0 };
        for _ in 0..k {
            let len = rng.random_range(4..=10);
            let start = rng.random_range(1..ts.len().saturating_sub(len + 1).max(2));
            for i in start..(start + len).min(ts.len() - 1) {
                left[i] = -1.0;
                right[i] = -1.0;
                gaze[i] = None;
            }
        }
        traces.push(RawPupilTrace::new(ts, left, right, gaze)?);
        truth.push(tr);
    }

    let wv = rng.random_range(0.5..1.5);
    let wa = rng.random_range(0.5..1.5);
    let noise = Normal::new(0.0, cfg.rating_noise.max(1e-300)).unwrap();
    let ratings = design
        .labels
        .iter()
        .map(|lab| {
            let mut s = [0u8; 12];
            for (e, angle) in EMOTION_ANGLES.iter().enumerate() {
                let th = angle.to_radians();
                let eps = if cfg.rating_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let v = 4.5 + 1.1 * (wv * lab.valence * th.cos() + wa * lab.arousal * th.sin()) + eps;
                s[e] = v.round().clamp(0.0, 9.0) as u8;
            }
            s
        })
        .collect();

    Ok(SynthParticipant { id: format!("P{:02}", index + 1), model, gain, calibration, traces, truth, ratings })
}

/// Generates the whole study. Participants are independent substreams of
/// the master seed, so the result does not depend on thread count.
pub fn generate_study(cfg: &SynthConfig) -> Result<SynthStudy> {
    cfg.validate()?;
    debug_assert_eq!(EMOTIONS.len(), EMOTION_ANGLES.len());
    let lut = LuminanceLut::build_synthetic(&DisplayModel { gamma: cfg.gamma, max_lux: cfg.max_lux, ..Default::default() })
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream(cfg.seed, 0);
    let n = cfg.n_clips;
    let clips: Vec<String> = (0..n).map(|c| format!("C{:02}", c + 1)).collect();
    let frame_ms = 1000.0 / cfg.fps;
    let frame_times: Vec<FrameWindow> = (0..cfg.frames_per_clip)
        .map(|i| FrameWindow { start_ms: i as f64 * frame_ms, end_ms: (i + 1) as f64 * frame_ms })
        .collect();

    let raw_v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let raw_a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (v, a) = (rescale_axis(&raw_v)?, rescale_axis(&raw_a)?);
    let labels: Vec<ClipLabel> = v.iter().zip(&a).map(|(v, a)| ClipLabel { valence: *v, arousal: *a }).collect();
    let salient = clips
        .iter()
        .map(|id| salient_for_clip(id, cfg.duration_s(), &mut rng))
        .collect::<Result<Vec<_>>>()?;

    // scene colors at unit brightness; a brightness level is assigned per clip
    let scenes: Vec<Vec<[f64; 3]>> = (0..n)
        .map(|_| {
            let mut out = Vec::with_capacity(cfg.frames_per_clip);
            while out.len() < cfg.frames_per_clip {
                let len = rng.random_range(20..=40);
                let col = [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
                for _ in 0..len.min(cfg.frames_per_clip - out.len()) {
                    out.push(col);
                }
            }
            out
        })
        .collect();
    let levels: Vec<f64> = (0..n).map(|j| 0.25 + 0.75 * j as f64 / (n - 1) as f64).collect();
    let render = |c: usize, level: f64| -> Result<Vec<RgbPercent>> {
        scenes[c]
            .iter()
            .map(|u| RgbPercent::new(round_to(100.0 * level * u[0], 0.01), round_to(100.0 * level * u[1], 0.01), round_to(100.0 * level * u[2], 0.01)))
            .collect()
    };
    let group = PlrModelSet::group();
    let mut pupil = vec![vec![0.0; n]; n];
    let mut lux = vec![vec![0.0; n]; n];
    for c in 0..n {
        for j in 0..n {
            let frames = render(c, levels[j])?;
            let (mut sp, mut sl) = (0.0, 0.0);
            for rgb in &frames {
                let l = lut.query(*rgb)?;
                sp += group.gray.eval(l);
                sl += l;
            }
            pupil[c][j] = sp / frames.len() as f64;
            lux[c][j] = sl / frames.len() as f64;
        }
    }
    let perm = confound_assignment(&pupil, &lux, &a, cfg.confound, &mut rng);
    let frames = (0..n).map(|c| render(c, levels[perm[c]])).collect::<Result<Vec<_>>>()?;

    let design = ClipDesign { frames: &frames, labels: &labels, salient: &salient };
    let participants = (0..cfg.n_participants)
        .into_par_iter()
        .map(|p| participant(cfg, &lut, &design, p))
        .collect::<Result<Vec<_>>>()?;

    Ok(SynthStudy { config: cfg.clone(), lut, clips, frame_times, frames, labels, salient, participants })
}
