//! Moment/derivative features of the three pupil signals and a from-scratch
//! gradient-boosted regression tree model with nested LOPO evaluation.

mod tree;

pub use tree::{predict_gbt, train_gbt, GbtModel, GbtParams, Node, Tree};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adm::Prediction;
use crate::decouple::{ClipDecomposition, SalientInterval};
use crate::error::{Error, Result};
use crate::metrics::{r2_score, Aggregate, EvalReport};
use crate::preprocess::FrameWindow;

pub const N_FEATURES: usize = 36;
pub const SIGNALS: [&str; 3] = ["measured", "luminosity", "arousal"];
pub const MOMENTS: [&str; 4] = ["mean", "var", "skew", "kurt"];
const VAR_FLOOR: f64 = 1e-12;
const MIN_WINDOW: usize = 5;

/// Canonical column names, `<signal>_d<order>_<moment>`.
pub fn feature_names() -> Vec<String> {
    let mut out = Vec::with_capacity(N_FEATURES);
    for s in SIGNALS {
        for o in 0..3 {
            for m in MOMENTS {
                out.push(format!("{s}_d{o}_{m}"));
            }
        }
    }
    out
}

/// Mean, population variance, Fisher skewness and excess kurtosis.
pub fn moments(x: &[f64]) -> [f64; 4] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 < VAR_FLOOR {
        return [mean, m2, 0.0, 0.0];
    }
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    [mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0]
}

/// Per-frame derivative: central differences inside, one-sided at the ends.
pub fn gradient(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| match i {
            0 => x[1] - x[0],
            i if i == n - 1 => x[n - 1] - x[n - 2],
            i => 0.5 * (x[i + 1] - x[i - 1]),
        })
        .collect()
}

/// 36 features of one decomposed clip over its salient frames.
pub fn extract_features(
    decomp: &ClipDecomposition,
    salient: &SalientInterval,
    frame_times: &[FrameWindow],
) -> Result<Vec<f64>> {
    if decomp.len() != frame_times.len() {
        return Err(Error::DimensionMismatch { expected: frame_times.len(), got: decomp.len() });
    }
    let idx = salient.frames(frame_times)?;
    if idx.len() < MIN_WINDOW {
        return Err(Error::InsufficientData(format!(
            "{}: salient window covers {} frames, need {MIN_WINDOW}",
            salient.clip_id,
            idx.len()
        )));
    }
    let mut out = Vec::with_capacity(N_FEATURES);
    for series in [&decomp.ps_measured, &decomp.ps_luminosity, &decomp.ps_arousal] {
        let d0: Vec<f64> = idx.iter().map(|&i| series[i]).collect();
        let d1 = gradient(&d0);
        let d2 = gradient(&d1);
        for s in [&d0, &d1, &d2] {
            out.extend(moments(s));
        }
    }
    Ok(out)
}

/// Which columns a model may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    /// all three signals
    Corrected,
    /// measured signal only
    Strict,
    /// measured and luminosity signals
    Lenient,
}

impl FeatureSet {
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            FeatureSet::Corrected => 0..36,
            FeatureSet::Strict => 0..12,
            FeatureSet::Lenient => 0..24,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Corrected => "corrected",
            FeatureSet::Strict => "strict",
            FeatureSet::Lenient => "lenient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "corrected" => Some(FeatureSet::Corrected),
            "strict" => Some(FeatureSet::Strict),
            "lenient" => Some(FeatureSet::Lenient),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Arousal,
    Valence,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Arousal => "arousal",
            Target::Valence => "valence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub participant: String,
    pub clip: String,
    pub features: Vec<f64>,
    pub arousal: f64,
    pub valence: f64,
}

impl FeatureRow {
    fn target(&self, t: Target) -> f64 {
        match t {
            Target::Arousal => self.arousal,
            Target::Valence => self.valence,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub n_trees: Vec<usize>,
    pub lambda_l2: Vec<f64>,
    pub min_samples_leaf: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            learning_rate: vec![0.05, 0.1, 0.3],
            max_depth: vec![2, 3, 4],
            n_trees: vec![50, 100, 200],
            lambda_l2: vec![0.0, 1.0],
            min_samples_leaf: vec![2, 5],
        }
    }
}

impl HyperGrid {
    pub fn is_empty(&self) -> bool {
        self.learning_rate.is_empty()
            || self.max_depth.is_empty()
            || self.n_trees.is_empty()
            || self.lambda_l2.is_empty()
            || self.min_samples_leaf.is_empty()
    }

    /// Every grid point, learning rate outermost and min_samples_leaf innermost.
    pub fn points(&self) -> Vec<GbtParams> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &max_depth in &self.max_depth {
                for &n_trees in &self.n_trees {
                    for &lambda_l2 in &self.lambda_l2 {
                        for &min_samples_leaf in &self.min_samples_leaf {
                            out.push(GbtParams { learning_rate, max_depth, n_trees, lambda_l2, min_samples_leaf });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Participants on each side of one inner split.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerFold {
    pub train_participants: Vec<String>,
    pub valid_participants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtFold {
    pub held_out: String,
    pub train_participants: Vec<String>,
    pub inner_folds: Vec<InnerFold>,
    pub chosen: GbtParams,
    pub inner_score: f64,
    pub report: Option<EvalReport>,
    pub predictions: Vec<Prediction>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtLopoResult {
    pub target: Target,
    pub feature_set: FeatureSet,
    pub folds: Vec<GbtFold>,
    pub aggregate: Aggregate,
}

fn unique_participants(rows: &[&FeatureRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.participant) {
            out.push(r.participant.clone());
        }
    }
    out
}

fn design(rows: &[&FeatureRow], cols: &std::ops::Range<usize>, target: Target) -> (Vec<Vec<f64>>, Vec<f64>) {
    (
        rows.iter().map(|r| r.features[cols.clone()].to_vec()).collect(),
        rows.iter().map(|r| r.target(target)).collect(),
    )
}

/// Mean validation R² of every grid point over participant-grouped folds.
/// Grid points differing only in `n_trees` share one boosting run.
fn score_grid(
    rows: &[&FeatureRow],
    folds: &[InnerFold],
    grid: &[GbtParams],
    cols: &std::ops::Range<usize>,
    target: Target,
) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; grid.len()];
    for fold in folds {
        let tr: Vec<&FeatureRow> = rows.iter().copied().filter(|r| fold.train_participants.contains(&r.participant)).collect();
        let va: Vec<&FeatureRow> = rows.iter().copied().filter(|r| fold.valid_participants.contains(&r.participant)).collect();
        let (xt, yt) = design(&tr, cols, target);
        let (xv, yv) = design(&va, cols, target);
        let mut done = vec![false; grid.len()];
        for i in 0..grid.len() {
            if done[i] {
                continue;
            }
            let same: Vec<usize> = (i..grid.len())
                .filter(|&j| GbtParams { n_trees: 0, ..grid[j] } == GbtParams { n_trees: 0, ..grid[i] })
                .collect();
            let longest = same.iter().map(|&j| grid[j].n_trees).max().unwrap();
            let model = train_gbt(&xt, &yt, &GbtParams { n_trees: longest, ..grid[i] })?;
            for &j in &same {
                let pred: Vec<f64> = xv.iter().map(|x| model.predict_row_staged(x, grid[j].n_trees)).collect();
                sums[j] += r2_score(&yv, &pred).unwrap_or(f64::NEG_INFINITY);
                done[j] = true;
            }
        }
    }
    Ok(sums.into_iter().map(|s| s / folds.len() as f64).collect())
}

/// Splits participants into `k` groups after a seeded shuffle.
pub fn grouped_folds(participants: &[String], k: usize, seed: u64) -> Vec<InnerFold> {
    let mut order = participants.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..k)
        .map(|f| {
            let valid: Vec<String> = order.iter().enumerate().filter(|(i, _)| i % k == f).map(|(_, p)| p.clone()).collect();
            let train = order.iter().filter(|p| !valid.contains(p)).cloned().collect();
            InnerFold { train_participants: train, valid_participants: valid }
        })
        .collect()
}

fn gbt_fold(
    rows: &[FeatureRow],
    held_out: &str,
    target: Target,
    set: FeatureSet,
    grid: &[GbtParams],
    seed: u64,
) -> Result<GbtFold> {
    let cols = set.columns();
    let train: Vec<&FeatureRow> = rows.iter().filter(|r| r.participant != held_out).collect();
    let test: Vec<&FeatureRow> = rows.iter().filter(|r| r.participant == held_out).collect();
    let mut train_participants = unique_participants(&train);
    train_participants.sort();
    let inner_folds = grouped_folds(&train_participants, 5, seed);
    let scores = score_grid(&train, &inner_folds, grid, &cols, target)?;
    // first grid point wins ties
    let best = (0..grid.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
    let (xt, yt) = design(&train, &cols, target);
    let model = train_gbt(&xt, &yt, &grid[best])?;
    let (xs, ys) = design(&test, &cols, target);
    let predicted = predict_gbt(&model, &xs)?;
    let predictions = test
        .iter()
        .zip(&predicted)
        .map(|(r, p)| Prediction {
            participant: r.participant.clone(),
            clip: r.clip.clone(),
            predicted: *p,
            actual: r.target(target),
        })
        .collect();
    let (report, flag) = match EvalReport::evaluate(&ys, &predicted) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(GbtFold {
        held_out: held_out.to_string(),
        train_participants,
        inner_folds,
        chosen: grid[best],
        inner_score: scores[best],
        report,
        predictions,
        flag,
    })
}

/// Outer leave-one-participant-out loop with participant-grouped 5-fold
/// hyperparameter search inside every training set.
pub fn nested_lopo(
    rows: &[FeatureRow],
    target: Target,
    set: FeatureSet,
    grid: &HyperGrid,
    seed: u64,
) -> Result<GbtLopoResult> {
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid has an empty axis".into()));
    }
    let points = grid.points();
    for p in &points {
        p.validate()?;
    }
    if let Some(r) = rows.iter().find(|r| r.features.len() != N_FEATURES) {
        return Err(Error::DimensionMismatch { expected: N_FEATURES, got: r.features.len() });
    }
    let all: Vec<&FeatureRow> = rows.iter().collect();
    let participants = unique_participants(&all);
    if participants.len() < 6 {
        return Err(Error::InsufficientData(format!(
            "nested LOPO needs at least 6 participants, got {}",
            participants.len()
        )));
    }
    let folds = participants
        .par_iter()
        .enumerate()
        .map(|(i, p)| gbt_fold(rows, p, target, set, &points, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = folds.iter().filter_map(|f| f.report).collect();
    Ok(GbtLopoResult { target, feature_set: set, aggregate: Aggregate::of(&reports), folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plr::CombinedWeights;
    use rand::Rng;

    fn windows(n: usize) -> Vec<FrameWindow> {
        (0..n).map(|i| FrameWindow { start_ms: 40.0 * i as f64, end_ms: 40.0 * (i + 1) as f64 }).collect()
    }

    fn decomp(m: Vec<f64>, l: Vec<f64>) -> ClipDecomposition {
        let a = m.iter().zip(&l).map(|(x, y)| x - y).collect();
        ClipDecomposition { ps_measured: m, ps_luminosity: l, ps_arousal: a, weights: CombinedWeights::gray_only(1.0, 0.0), degenerate: false }
    }

    #[test]
    fn constant_and_ramp() {
        let d = decomp(vec![4.0; 20], vec![4.0; 20]);
        let s = SalientInterval::whole("c", 0.8).unwrap();
        let f = extract_features(&d, &s, &windows(20)).unwrap();
        assert_eq!(&f[0..4], &[4.0, 0.0, 0.0, 0.0]);
        assert!(f[4..12].iter().all(|v| *v == 0.0));
        assert_eq!(feature_names()[13], "luminosity_d0_var");

        let ramp: Vec<f64> = (0..20).map(|i| 3.0 + 0.25 * i as f64).collect();
        let f = extract_features(&decomp(ramp, vec![1.0; 20]), &s, &windows(20)).unwrap();
        assert!((f[4] - 0.25).abs() < 1e-12 && f[5].abs() < 1e-12);
    }

    #[test]
    fn random_series_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m: Vec<f64> = (0..50).map(|_| rng.random_range(3.0..5.0)).collect();
        let l: Vec<f64> = (0..50).map(|_| rng.random_range(3.0..5.0)).collect();
        let d = decomp(m, l);
        let s = SalientInterval::new("c", vec![(0.4, 1.6)]).unwrap();
        let w = windows(50);
        let f = extract_features(&d, &s, &w).unwrap();
        let idx: Vec<usize> = (0..50).filter(|&i| {
            let mid = (w[i].start_ms + w[i].end_ms) / 2000.0;
            (0.4..=1.6).contains(&mid)
        }).collect();
        for (si, series) in [&d.ps_measured, &d.ps_luminosity, &d.ps_arousal].into_iter().enumerate() {
            let mut x: Vec<f64> = idx.iter().map(|&i| series[i]).collect();
            for o in 0..3 {
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                let skew = x.iter().map(|v| ((v - mean) / sd).powi(3)).sum::<f64>() / n;
                let kurt = x.iter().map(|v| ((v - mean) / sd).powi(4)).sum::<f64>() / n - 3.0;
                let base = si * 12 + o * 4;
                for (k, want) in [mean, var, skew, kurt].into_iter().enumerate() {
                    assert!((f[base + k] - want).abs() < 1e-9, "{} {want}", f[base + k]);
                }
                let mut g = vec![x[1] - x[0]];
                for i in 1..x.len() - 1 {
                    g.push((x[i + 1] - x[i - 1]) / 2.0);
                }
                g.push(x[x.len() - 1] - x[x.len() - 2]);
                x = g;
            }
        }
    }

    #[test]
    fn short_window_rejected() {
        let d = decomp(vec![4.0; 20], vec![4.0; 20]);
        let s = SalientInterval::new("c", vec![(0.0, 0.1)]).unwrap();
        assert!(matches!(extract_features(&d, &s, &windows(20)), Err(Error::InsufficientData(_))));
    }

    fn synthetic_rows(seed: u64, f: impl Fn(&[f64]) -> f64) -> Vec<FeatureRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for p in 0..8 {
            for c in 0..12 {
                let features: Vec<f64> = (0..N_FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y = f(&features);
                rows.push(FeatureRow { participant: format!("P{p}"), clip: format!("C{c}"), features, arousal: y, valence: 0.0 });
            }
        }
        rows
    }

    fn small_grid() -> HyperGrid {
        HyperGrid {
            learning_rate: vec![0.1, 0.3],
            max_depth: vec![2, 3],
            n_trees: vec![50, 100],
            lambda_l2: vec![1.0],
            min_samples_leaf: vec![2],
        }
    }

    #[test]
    fn planted_function_is_learned() {
        let rows = synthetic_rows(1, |x| 1.5 * (2.0 * x[0]).sin() + x[30] * x[30]);
        let res = nested_lopo(&rows, Target::Arousal, FeatureSet::Corrected, &small_grid(), 0).unwrap();
        assert!(res.aggregate.r2.mean >= 0.8, "{:?}", res.aggregate);
        for f in &res.folds {
            assert!(!f.train_participants.contains(&f.held_out));
            for inner in &f.inner_folds {
                assert!(inner.train_participants.iter().all(|p| !inner.valid_participants.contains(p)));
                assert!(!inner.valid_participants.contains(&f.held_out));
            }
        }
    }

    #[test]
    fn empty_grid_is_config_error() {
        let rows = synthetic_rows(2, |x| x[0]);
        let g = HyperGrid { lambda_l2: vec![], ..HyperGrid::default() };
        assert!(matches!(nested_lopo(&rows, Target::Arousal, FeatureSet::Strict, &g, 0), Err(Error::Config(_))));
    }

    #[test]
    fn grid_enumeration() {
        let pts = HyperGrid::default().points();
        assert_eq!(pts.len(), 108);
        assert_eq!(pts[0], GbtParams { learning_rate: 0.05, max_depth: 2, n_trees: 50, lambda_l2: 0.0, min_samples_leaf: 2 });
        assert_eq!(pts[1].min_samples_leaf, 5);
    }
}
