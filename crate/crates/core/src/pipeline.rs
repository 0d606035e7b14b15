//! Stage implementations behind the command-line subcommands. Every stage
//! reads its declared inputs, stages its outputs in memory and leaves the
//! writing to [`Ctx::commit`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adm::{lopo_evaluate, LopoResult, Prediction, Signal, StudyDataset, StudyRow};
use crate::config::{FitScope, LabelScope, LabelSource, RunConfig};
use crate::decouple::{decompose_clip, decompose_with_weights, frame_predictors, salient_mean, ClipDecomposition, SalientInterval};
use crate::error::{Error, Result};
use crate::gbt::{self, feature_names, nested_lopo, FeatureRow, FeatureSet, GbtLopoResult, GbtParams, Target};
use crate::io::{header_line, parse_csv, sha256_hex, CsvText, Outputs};
use crate::luminance::{effective_luminance, Frame, LuminanceLut, RgbPercent};
use crate::metrics::{Aggregate, EvalReport};
use crate::plr::{calibrate_participant, fit_combined, CalibrationSample, PlrModelSet};
use crate::preprocess::{align_to_frames, clean, FrameWindow, RawPupilTrace};
use crate::scaling::{dissimilarities, emotion_index, indscal_fit, labels as scale_labels, rescale_axis, IndscalOptions, RatingTensor};
use crate::synth::{generate_study, SynthStudy};

/// Shared state of one subcommand invocation.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub subcommand: String,
    inputs: Mutex<BTreeMap<String, String>>,
    pub outputs: Outputs,
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    header: String,
    subcommand: &'a str,
    version: &'a str,
    config_hash: &'a str,
    seed: u64,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a RunConfig, subcommand: &str) -> Self {
        Ctx { cfg, subcommand: subcommand.to_string(), inputs: Mutex::new(BTreeMap::new()), outputs: Outputs::new() }
    }

    fn seed(&self) -> u64 {
        if self.subcommand == "synth" {
            self.cfg.synth.seed
        } else {
            self.cfg.options.seed
        }
    }

    pub fn header(&self) -> String {
        header_line(&self.subcommand, &self.cfg.hash, self.seed())
    }

    /// Reads an input file and records its digest for the manifest.
    pub fn read(&self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.lock().unwrap().insert(self.cfg.display_path(path), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_text(&self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?).map_err(|_| Error::parse(path, 0, "file is not UTF-8"))
    }

    pub fn read_csv<T: serde::de::DeserializeOwned>(&self, path: &Path) -> Result<Vec<T>> {
        parse_csv(&self.read(path)?, path)
    }

    /// Stages a text output, prefixed with the run header.
    pub fn emit(&mut self, path: PathBuf, body: impl AsRef<[u8]>) {
        let mut bytes = self.header().into_bytes();
        bytes.extend_from_slice(body.as_ref());
        self.outputs.add(path, bytes);
    }

    pub fn csv(&self, columns: &[&str]) -> CsvText {
        CsvText::new(&self.header(), columns)
    }

    pub fn emit_csv(&mut self, path: PathBuf, csv: CsvText) {
        self.outputs.add(path, csv.into_bytes());
    }

    /// Adds the manifest and writes every staged file.
    pub fn commit(mut self) -> Result<()> {
        let outputs: Vec<FileDigest> = self
            .outputs
            .iter()
            .map(|(p, b)| FileDigest { path: self.cfg.display_path(p), sha256: sha256_hex(b) })
            .collect();
        let inputs = std::mem::take(&mut *self.inputs.lock().unwrap())
            .into_iter()
            .map(|(path, sha256)| FileDigest { path, sha256 })
            .collect();
        let m = Manifest {
            header: self.header().trim_end().to_string(),
            subcommand: &self.subcommand,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.cfg.hash,
            seed: self.seed(),
            inputs,
            outputs,
        };
        let mut json = serde_json::to_string_pretty(&m).expect("manifest serializes");
        json.push('\n');
        let path = self.cfg.output(format!("manifests/{}.json", self.subcommand));
        self.outputs.add(path, json);
        self.outputs.commit()
    }
}

fn f(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NaN".into()
    }
}

fn sorted_entries(dir: &Path, want_dirs: bool, ext: Option<&str>) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() != want_dirs {
            continue;
        }
        if let Some(ext) = ext {
            if path.extension().and_then(|e| e.to_str()) != Some(ext) {
                continue;
            }
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        out.push((stem.to_string(), path));
    }
    out.sort();
    Ok(out)
}

// ---------------------------------------------------------------- build-lut

pub fn build_lut(ctx: &mut Ctx) -> Result<LuminanceLut> {
    let lut = LuminanceLut::build_synthetic(&ctx.cfg.display.model())?;
    let path = ctx.cfg.resolve(&ctx.cfg.paths.lut);
    ctx.emit(path, lut.to_text()?);
    Ok(lut)
}

pub fn load_lut(ctx: &Ctx) -> Result<LuminanceLut> {
    let path = ctx.cfg.require(&ctx.cfg.paths.lut, "luminance table")?;
    LuminanceLut::from_text(&ctx.read_text(&path)?, &path)
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Deserialize)]
struct CalRow {
    r: f64,
    g: f64,
    b: f64,
    mean_pupil_mm: f64,
}

fn read_calibration(ctx: &Ctx, path: &Path) -> Result<Vec<CalibrationSample>> {
    ctx.read_csv::<CalRow>(path)?
        .into_iter()
        .map(|r| CalibrationSample::new(RgbPercent::new(r.r, r.g, r.b)?, r.mean_pupil_mm))
        .collect()
}

pub fn calibrate(ctx: &mut Ctx, lut: &LuminanceLut) -> Result<Vec<(String, PlrModelSet)>> {
    let dir = ctx.cfg.require(&ctx.cfg.paths.calibration, "calibration directory")?;
    let files = sorted_entries(&dir, false, Some("csv"))?;
    if files.is_empty() {
        return Err(Error::Config(format!("no calibration files in {}", dir.display())));
    }
    let group = PlrModelSet::group();
    let mut models = Vec::new();
    for (id, path) in files {
        let samples = read_calibration(ctx, &path)?;
        let model = calibrate_participant(&group, &samples, lut, &id)?;
        models.push((id, model));
    }
    for (id, m) in &models {
        let path = ctx.cfg.output(format!("models/{id}.plr.txt"));
        ctx.emit(path, m.to_text());
    }
    Ok(models)
}

pub fn load_models(ctx: &Ctx) -> Result<Vec<(String, PlrModelSet)>> {
    let dir = ctx.cfg.output("models");
    if !dir.is_dir() {
        return Err(Error::Config(format!("calibrated models not found in {}; run calibrate", dir.display())));
    }
    let mut out = Vec::new();
    for (stem, path) in sorted_entries(&dir, false, Some("txt"))? {
        if let Some(id) = stem.strip_suffix(".plr") {
            out.push((id.to_string(), PlrModelSet::from_text(&ctx.read_text(&path)?, &path)?));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- decouple

#[derive(Debug, Deserialize)]
struct SalientRow {
    clip_id: String,
    start_s: f64,
    end_s: f64,
}

pub fn load_salient(ctx: &Ctx) -> Result<Vec<SalientInterval>> {
    let path = ctx.cfg.require(&ctx.cfg.paths.salient, "salient-interval file")?;
    let mut by_clip: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in ctx.read_csv::<SalientRow>(&path)? {
        by_clip.entry(r.clip_id).or_default().push((r.start_s, r.end_s));
    }
    by_clip.into_iter().map(|(c, iv)| SalientInterval::new(c, iv)).collect()
}

#[derive(Debug, Deserialize)]
struct FrameRow {
    frame_index: usize,
    r: f64,
    g: f64,
    b: f64,
}

#[derive(Debug, Deserialize)]
struct TimeRow {
    frame_index: usize,
    start_ms: f64,
    end_ms: f64,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    timestamp_ms: f64,
    left_mm: f64,
    right_mm: f64,
    gaze_x: f64,
    gaze_y: f64,
}

pub enum FrameSource {
    Means(Vec<RgbPercent>),
    Images(Vec<Frame>),
}

pub struct ClipFrames {
    pub clip: String,
    pub times: Vec<FrameWindow>,
    pub source: FrameSource,
}

fn check_indices(idx: impl Iterator<Item = usize>, path: &Path) -> Result<()> {
    for (i, v) in idx.enumerate() {
        if v != i {
            return Err(Error::parse(path, i + 2, format!("frame_index {v} out of sequence, expected {i}")));
        }
    }
    Ok(())
}

fn load_clip_frames(ctx: &Ctx, clip: &str) -> Result<ClipFrames> {
    let dir = ctx.cfg.require(&ctx.cfg.paths.frames, "frames directory")?;
    let times_path = dir.join(format!("{clip}_times.csv"));
    if !times_path.exists() {
        return Err(Error::Config(format!("frame times not found: {}", times_path.display())));
    }
    let rows = ctx.read_csv::<TimeRow>(&times_path)?;
    check_indices(rows.iter().map(|r| r.frame_index), &times_path)?;
    let times: Vec<FrameWindow> = rows.iter().map(|r| FrameWindow { start_ms: r.start_ms, end_ms: r.end_ms }).collect();
    let image_dir = dir.join(clip);
    let source = if image_dir.is_dir() {
        let files = sorted_entries(&image_dir, false, Some("ppm"))?;
        let frames = files
            .iter()
            .map(|(_, p)| Frame::from_ppm(&ctx.read(p)?, p))
            .collect::<Result<Vec<_>>>()?;
        FrameSource::Images(frames)
    } else {
        let path = dir.join(format!("{clip}.csv"));
        if !path.exists() {
            return Err(Error::Config(format!("frames not found for clip {clip}: {}", path.display())));
        }
        let rows = ctx.read_csv::<FrameRow>(&path)?;
        check_indices(rows.iter().map(|r| r.frame_index), &path)?;
        FrameSource::Means(rows.iter().map(|r| RgbPercent::new(r.r, r.g, r.b)).collect::<Result<_>>()?)
    };
    let n = match &source {
        FrameSource::Means(v) => v.len(),
        FrameSource::Images(v) => v.len(),
    };
    if n != times.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: n });
    }
    Ok(ClipFrames { clip: clip.to_string(), times, source })
}

fn load_trace(ctx: &Ctx, path: &Path) -> Result<RawPupilTrace> {
    let rows = ctx.read_csv::<TraceRow>(path)?;
    let gaze = rows
        .iter()
        .map(|r| (r.gaze_x >= 0.0 && r.gaze_y >= 0.0).then_some((r.gaze_x, r.gaze_y)))
        .collect();
    RawPupilTrace::new(
        rows.iter().map(|r| r.timestamp_ms).collect(),
        rows.iter().map(|r| r.left_mm).collect(),
        rows.iter().map(|r| r.right_mm).collect(),
        gaze,
    )
}

/// Decomposition and salient summaries of one (participant, clip).
#[derive(Debug, Clone)]
pub struct ClipResult {
    pub participant: String,
    pub clip: String,
    pub decomposition: ClipDecomposition,
    pub ps_arousal: f64,
    pub ps_measured: f64,
    pub features: Vec<f64>,
}

struct Prepared {
    participant: String,
    clip: usize,
    predictors: Vec<crate::plr::ChannelPredictions>,
    measured: Vec<f64>,
}

fn prepare(
    ctx: &Ctx,
    lut: &LuminanceLut,
    model: &PlrModelSet,
    participant: &str,
    clip_idx: usize,
    frames: &ClipFrames,
) -> Result<Prepared> {
    let dir = ctx.cfg.require(&ctx.cfg.paths.traces, "traces directory")?;
    let path = dir.join(participant).join(format!("{}.csv", frames.clip));
    if !path.exists() {
        return Err(Error::Config(format!("trace not found: {}", path.display())));
    }
    let raw = load_trace(ctx, &path)?;
    let cleaned = clean(&raw, ctx.cfg.options.pad_ms)?;
    let aligned = align_to_frames(&cleaned, &frames.times)?;
    let rgbs: Vec<RgbPercent> = match &frames.source {
        FrameSource::Means(v) => v.clone(),
        FrameSource::Images(imgs) => imgs
            .iter()
            .zip(&aligned)
            .map(|(img, a)| effective_luminance(img, a.gaze, lut, ctx.cfg.options.gaze_radius_px).map(|e| e.rgb))
            .collect::<Result<_>>()?,
    };
    Ok(Prepared {
        participant: participant.to_string(),
        clip: clip_idx,
        predictors: frame_predictors(&rgbs, model, lut)?,
        measured: aligned.iter().map(|a| a.pupil).collect(),
    })
}

pub fn decouple(ctx: &mut Ctx, lut: &LuminanceLut, models: &[(String, PlrModelSet)]) -> Result<Vec<ClipResult>> {
    let salient = load_salient(ctx)?;
    if salient.is_empty() {
        return Err(Error::Config("salient-interval file lists no clips".into()));
    }
    let frames = salient.iter().map(|s| load_clip_frames(ctx, &s.clip_id)).collect::<Result<Vec<_>>>()?;
    let units: Vec<(usize, usize)> =
        (0..models.len()).flat_map(|p| (0..frames.len()).map(move |c| (p, c))).collect();
    let shared: &Ctx = ctx;
    let prepared = units
        .par_iter()
        .map(|&(p, c)| prepare(shared, lut, &models[p].1, &models[p].0, c, &frames[c]))
        .collect::<Result<Vec<_>>>()?;

    let participant_weights: BTreeMap<&str, crate::plr::CombinedFit> = match ctx.cfg.options.combined_fit_scope {
        FitScope::Clip => BTreeMap::new(),
        FitScope::Participant => models
            .par_iter()
            .map(|(id, _)| {
                let mine: Vec<&Prepared> = prepared.iter().filter(|q| &q.participant == id).collect();
                let preds: Vec<_> = mine.iter().flat_map(|q| q.predictors.iter().copied()).collect();
                let meas: Vec<f64> = mine.iter().flat_map(|q| q.measured.iter().copied()).collect();
                fit_combined(&preds, &meas).map(|w| (id.as_str(), w))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .collect(),
    };

    let results = prepared
        .par_iter()
        .map(|q| {
            let fr = &frames[q.clip];
            let decomposition = match participant_weights.get(q.participant.as_str()) {
                Some(fit) => {
                    let mut d = decompose_with_weights(&q.predictors, &q.measured, &fit.weights)?;
                    d.degenerate = fit.degenerate;
                    d
                }
                None => decompose_clip(&q.predictors, &q.measured)?,
            };
            let sal = &salient[q.clip];
            Ok(ClipResult {
                participant: q.participant.clone(),
                clip: fr.clip.clone(),
                ps_arousal: salient_mean(&decomposition.ps_arousal, sal, &fr.times)?,
                ps_measured: salient_mean(&decomposition.ps_measured, sal, &fr.times)?,
                features: gbt::extract_features(&decomposition, sal, &fr.times)?,
                decomposition,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    for r in &results {
        let mut csv = ctx.csv(&["frame_index", "ps_measured", "ps_luminosity", "ps_arousal"]);
        let d = &r.decomposition;
        for i in 0..d.len() {
            csv.row([i.to_string(), f(d.ps_measured[i]), f(d.ps_luminosity[i]), f(d.ps_arousal[i])]);
        }
        let path = ctx.cfg.output(format!("decomposition/{}/{}.csv", r.participant, r.clip));
        ctx.emit_csv(path, csv);
    }
    let mut w = ctx.csv(&["participant_id", "clip_id", "a_gray", "a_red", "a_green", "a_blue", "k", "c", "degenerate"]);
    let mut s = ctx.csv(&["participant_id", "clip_id", "ps_arousal_mm", "ps_measured_mm"]);
    let names = feature_names();
    let mut cols = vec!["participant_id", "clip_id"];
    cols.extend(names.iter().map(String::as_str));
    let mut feats = ctx.csv(&cols);
    for r in &results {
        let cw = r.decomposition.weights;
        w.row([
            r.participant.clone(),
            r.clip.clone(),
            f(cw.a_gray),
            f(cw.a_red),
            f(cw.a_green),
            f(cw.a_blue),
            f(cw.k),
            f(cw.c),
            r.decomposition.degenerate.to_string(),
        ]);
        s.row([r.participant.clone(), r.clip.clone(), f(r.ps_arousal), f(r.ps_measured)]);
        feats.row([r.participant.clone(), r.clip.clone()].into_iter().chain(r.features.iter().map(|v| f(*v))));
    }
    ctx.emit_csv(ctx.cfg.output("combined_weights.csv"), w);
    ctx.emit_csv(ctx.cfg.output("summaries.csv"), s);
    ctx.emit_csv(ctx.cfg.output("features.csv"), feats);
    Ok(results)
}

// ---------------------------------------------------------------- labels

/// Valence/arousal per clip, optionally overridden per participant.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTable {
    pub source: String,
    pub shared: BTreeMap<String, (f64, f64)>,
    pub per_participant: BTreeMap<(String, String), (f64, f64)>,
}

impl LabelTable {
    pub fn get(&self, participant: &str, clip: &str) -> Option<(f64, f64)> {
        self.per_participant
            .get(&(participant.to_string(), clip.to_string()))
            .or_else(|| self.shared.get(clip))
            .copied()
    }
}

#[derive(Debug, Deserialize)]
struct RatingRow {
    participant_id: String,
    clip_id: String,
    emotion: String,
    score: u8,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    clip_id: String,
    valence: f64,
    arousal: f64,
}

#[derive(Debug, Deserialize)]
struct ParticipantLabelRow {
    participant_id: String,
    clip_id: String,
    valence: f64,
    arousal: f64,
}

fn check_label(clip: &str, v: f64, a: f64) -> Result<(f64, f64)> {
    if !(-2.0..=2.0).contains(&v) || !(-2.0..=2.0).contains(&a) {
        return Err(Error::InvalidInput(format!("label for {clip} outside [-2, 2]")));
    }
    Ok((v, a))
}

pub fn labels(ctx: &mut Ctx) -> Result<LabelTable> {
    let table = match ctx.cfg.options.label_source {
        LabelSource::External => {
            let path = ctx.cfg.require(ctx.cfg.paths.labels.as_deref().unwrap_or(Path::new("")), "external labels")?;
            let mut shared = BTreeMap::new();
            for r in ctx.read_csv::<LabelRow>(&path)? {
                let l = check_label(&r.clip_id, r.valence, r.arousal)?;
                shared.insert(r.clip_id, l);
            }
            LabelTable { source: "external".into(), shared, per_participant: BTreeMap::new() }
        }
        LabelSource::Indscal => indscal_labels(ctx)?,
    };
    let mut csv = ctx.csv(&["clip_id", "valence", "arousal"]);
    for (c, (v, a)) in &table.shared {
        csv.row([c.clone(), f(*v), f(*a)]);
    }
    ctx.emit_csv(ctx.cfg.output("labels.csv"), csv);
    if !table.per_participant.is_empty() {
        let mut csv = ctx.csv(&["participant_id", "clip_id", "valence", "arousal"]);
        for ((p, c), (v, a)) in &table.per_participant {
            csv.row([p.clone(), c.clone(), f(*v), f(*a)]);
        }
        ctx.emit_csv(ctx.cfg.output("labels_by_participant.csv"), csv);
    }
    Ok(table)
}

fn indscal_labels(ctx: &mut Ctx) -> Result<LabelTable> {
    let path = ctx.cfg.require(&ctx.cfg.paths.ratings, "ratings file")?;
    let rows = ctx.read_csv::<RatingRow>(&path)?;
    let mut tensor = RatingTensor::from_rows(
        rows.iter().map(|r| (r.participant_id.as_str(), r.clip_id.as_str(), r.emotion.as_str(), r.score)),
    )?;
    sort_tensor(&mut tensor);
    let dist = dissimilarities(&tensor)?;
    let opts = IndscalOptions { seed: ctx.cfg.options.seed, restarts: ctx.cfg.options.indscal_restarts, ..Default::default() };
    let mut space = indscal_fit(&dist, &opts)?;
    let excited = tensor.clip_means(emotion_index("excited").unwrap());
    let positive = tensor.clip_means(emotion_index("positive").unwrap());
    space.orient(&excited, &positive)?;
    let lab = scale_labels(&space)?;
    let shared = tensor.clips.iter().cloned().zip(lab.iter().map(|l| (l.valence, l.arousal))).collect();

    let mut per_participant = BTreeMap::new();
    if ctx.cfg.options.label_scope == LabelScope::Participant {
        // each participant's scalar products projected on the group axes
        let x = &space.coords;
        let xtx_inv = (x.transpose() * x)
            .try_inverse()
            .ok_or_else(|| Error::DegenerateConfiguration("group configuration is rank deficient".into()))?;
        for (k, d) in dist.iter().enumerate() {
            let n = d.nrows();
            let sq = d.map(|v| v * v);
            let mean_row: Vec<f64> = (0..n).map(|i| sq.row(i).mean()).collect();
            let all = sq.mean();
            let b = nalgebra::DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - mean_row[i] - mean_row[j] + all));
            let y = b * x * &xtx_inv;
            let v = rescale_axis(&y.column(0).iter().copied().collect::<Vec<_>>())?;
            let a = rescale_axis(&y.column(1).iter().copied().collect::<Vec<_>>())?;
            for (c, clip) in tensor.clips.iter().enumerate() {
                per_participant.insert((tensor.participants[k].clone(), clip.clone()), (v[c], a[c]));
            }
        }
    }

    let mut csv = ctx.csv(&["participant_id", "w_valence", "w_arousal"]);
    for (k, p) in tensor.participants.iter().enumerate() {
        csv.row([p.clone(), f(space.weights[(k, 0)]), f(space.weights[(k, 1)])]);
    }
    ctx.emit_csv(ctx.cfg.output("indscal_weights.csv"), csv);
    Ok(LabelTable { source: "indscal".into(), shared, per_participant })
}

/// Orders participants and clips by id so results do not depend on row order.
fn sort_tensor(t: &mut RatingTensor) {
    let mut p_order: Vec<usize> = (0..t.participants.len()).collect();
    p_order.sort_by(|&a, &b| t.participants[a].cmp(&t.participants[b]));
    let mut c_order: Vec<usize> = (0..t.clips.len()).collect();
    c_order.sort_by(|&a, &b| t.clips[a].cmp(&t.clips[b]));
    t.scores = p_order.iter().map(|&p| c_order.iter().map(|&c| t.scores[p][c]).collect()).collect();
    t.participants = p_order.iter().map(|&p| t.participants[p].clone()).collect();
    t.clips = c_order.iter().map(|&c| t.clips[c].clone()).collect();
}

pub fn load_labels(ctx: &Ctx) -> Result<LabelTable> {
    if ctx.cfg.options.label_source == LabelSource::External {
        let path = ctx.cfg.require(ctx.cfg.paths.labels.as_deref().unwrap_or(Path::new("")), "external labels")?;
        let mut shared = BTreeMap::new();
        for r in ctx.read_csv::<LabelRow>(&path)? {
            shared.insert(r.clip_id.clone(), check_label(&r.clip_id, r.valence, r.arousal)?);
        }
        return Ok(LabelTable { source: "external".into(), shared, per_participant: BTreeMap::new() });
    }
    let path = ctx.cfg.output("labels.csv");
    if !path.exists() {
        return Err(Error::Config(format!("labels not found at {}; run labels", path.display())));
    }
    let mut shared = BTreeMap::new();
    for r in ctx.read_csv::<LabelRow>(&path)? {
        shared.insert(r.clip_id.clone(), check_label(&r.clip_id, r.valence, r.arousal)?);
    }
    let mut per_participant = BTreeMap::new();
    if ctx.cfg.options.label_scope == LabelScope::Participant {
        let path = ctx.cfg.output("labels_by_participant.csv");
        if !path.exists() {
            return Err(Error::Config(format!("per-participant labels not found at {}; run labels", path.display())));
        }
        for r in ctx.read_csv::<ParticipantLabelRow>(&path)? {
            per_participant.insert((r.participant_id, r.clip_id.clone()), check_label(&r.clip_id, r.valence, r.arousal)?);
        }
    }
    Ok(LabelTable { source: "indscal".into(), shared, per_participant })
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Deserialize)]
struct SummaryRow {
    participant_id: String,
    clip_id: String,
    ps_arousal_mm: f64,
    ps_measured_mm: f64,
}

/// Per-(participant, clip) summaries as written by `decouple`.
pub fn load_summaries(ctx: &Ctx) -> Result<Vec<(String, String, f64, f64)>> {
    let path = ctx.cfg.output("summaries.csv");
    if !path.exists() {
        return Err(Error::Config(format!("summaries not found at {}; run decouple", path.display())));
    }
    Ok(ctx
        .read_csv::<SummaryRow>(&path)?
        .into_iter()
        .map(|r| (r.participant_id, r.clip_id, r.ps_arousal_mm, r.ps_measured_mm))
        .collect())
}

/// Feature rows as written by `decouple`, without labels.
pub fn load_features(ctx: &Ctx) -> Result<Vec<(String, String, Vec<f64>)>> {
    let path = ctx.cfg.output("features.csv");
    if !path.exists() {
        return Err(Error::Config(format!("features not found at {}; run decouple", path.display())));
    }
    let bytes = ctx.read(&path)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes.as_slice());
    let names = feature_names();
    let header = rdr.headers().map_err(|e| Error::parse(&path, 1, e.to_string()))?.clone();
    if header.len() != names.len() + 2 || header.iter().skip(2).zip(&names).any(|(a, b)| a != b) {
        return Err(Error::parse(&path, 1, "feature columns are not in canonical order"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(&path, i + 2, e.to_string()))?;
        let vals = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(&path, i + 2, e.to_string()))?;
        out.push((rec[0].to_string(), rec[1].to_string(), vals));
    }
    Ok(out)
}

pub fn study_dataset(summaries: &[(String, String, f64, f64)], labels: &LabelTable) -> Result<StudyDataset> {
    let rows = summaries
        .iter()
        .map(|(p, c, a, m)| {
            let (valence, arousal) =
                labels.get(p, c).ok_or_else(|| Error::MissingData(format!("no label for clip {c} (participant {p})")))?;
            Ok(StudyRow {
                participant: p.clone(),
                clip: c.clone(),
                ps_arousal: *a,
                ps_measured: *m,
                arousal,
                valence,
                label_source: labels.source.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StudyDataset::new(rows)
}

pub fn feature_rows(features: &[(String, String, Vec<f64>)], labels: &LabelTable) -> Result<Vec<FeatureRow>> {
    features
        .iter()
        .map(|(p, c, x)| {
            let (valence, arousal) =
                labels.get(p, c).ok_or_else(|| Error::MissingData(format!("no label for clip {c} (participant {p})")))?;
            Ok(FeatureRow { participant: p.clone(), clip: c.clone(), features: x.clone(), arousal, valence })
        })
        .collect()
}

// ---------------------------------------------------------------- reports

const REPORT_COLUMNS: [&str; 7] = ["scope", "participant_id", "n", "r", "p", "r2", "nrmse"];

fn report_row(scope: &str, participant: &str, rep: &EvalReport) -> Vec<String> {
    vec![scope.into(), participant.into(), rep.n.to_string(), f(rep.r), f(rep.p), f(rep.r2), f(rep.nrmse)]
}

fn aggregate_rows(scope: &str, agg: &Aggregate) -> [Vec<String>; 2] {
    [
        vec![format!("{scope}_mean"), "ALL".into(), agg.folds.to_string(), f(agg.r.mean), f(agg.p.mean), f(agg.r2.mean), f(agg.nrmse.mean)],
        vec![format!("{scope}_sd"), "ALL".into(), agg.folds.to_string(), f(agg.r.sd), f(agg.p.sd), f(agg.r2.sd), f(agg.nrmse.sd)],
    ]
}

fn predictions_csv(ctx: &Ctx, preds: &[&Prediction]) -> CsvText {
    let mut csv = ctx.csv(&["participant_id", "clip_id", "predicted", "actual"]);
    for p in preds {
        csv.row([p.participant.clone(), p.clip.clone(), f(p.predicted), f(p.actual)]);
    }
    csv
}

#[derive(Serialize)]
struct FoldRecord<'a> {
    model: String,
    held_out: &'a str,
    train_participants: &'a [String],
    inner_folds: Vec<InnerRecord<'a>>,
}

#[derive(Serialize)]
struct InnerRecord<'a> {
    train_participants: &'a [String],
    valid_participants: &'a [String],
}

#[derive(Serialize)]
struct FoldAudit<'a> {
    header: String,
    folds: Vec<FoldRecord<'a>>,
}

fn emit_folds(ctx: &mut Ctx, name: &str, folds: Vec<FoldRecord>) {
    let audit = FoldAudit { header: ctx.header().trim_end().to_string(), folds };
    let json = serde_json::to_string_pretty(&audit).expect("fold records serialize") + "\n";
    ctx.outputs.add(ctx.cfg.output(name), json);
}

/// Everything `fit-adm` produces.
pub struct AdmOutcome {
    pub corrected: LopoResult,
    pub uncorrected: LopoResult,
}

pub fn fit_adm(ctx: &mut Ctx, data: &StudyDataset) -> Result<AdmOutcome> {
    let corrected = lopo_evaluate(data, Signal::Corrected)?;
    let uncorrected = lopo_evaluate(data, Signal::Uncorrected)?;

    let mut ds = ctx.csv(&["participant_id", "clip_id", "ps_arousal_mm", "ps_measured_mm", "arousal", "valence", "label_source"]);
    for r in &data.rows {
        ds.row([r.participant.clone(), r.clip.clone(), f(r.ps_arousal), f(r.ps_measured), f(r.arousal), f(r.valence), r.label_source.clone()]);
    }
    ctx.emit_csv(ctx.cfg.output("dataset.csv"), ds);

    let mut rep = ctx.csv(&REPORT_COLUMNS);
    let mut coef = ctx.csv(&["signal", "held_out", "a", "b", "fit_r2", "flag"]);
    for res in [&corrected, &uncorrected] {
        let scope = format!("adm_{}", res.signal.as_str());
        for fold in &res.folds {
            if let Some(r) = &fold.report {
                rep.row(report_row(&scope, &fold.held_out, r));
            }
            let (a, b, r2) = fold.coeffs.map_or((f64::NAN, f64::NAN, f64::NAN), |c| (c.a, c.b, c.fit_r2));
            coef.row([res.signal.as_str().to_string(), fold.held_out.clone(), f(a), f(b), f(r2), fold.flag.clone().unwrap_or_default().replace(',', ";")]);
        }
        for row in aggregate_rows(&scope, &res.aggregate) {
            rep.row(row);
        }
        let preds: Vec<&Prediction> = res.folds.iter().flat_map(|f| &f.predictions).collect();
        let csv = predictions_csv(ctx, &preds);
        ctx.emit_csv(ctx.cfg.output(format!("adm_predictions_{}.csv", res.signal.as_str())), csv);
    }
    ctx.emit_csv(ctx.cfg.output("adm_report.csv"), rep);
    ctx.emit_csv(ctx.cfg.output("adm_coefficients.csv"), coef);

    let mut folds = Vec::new();
    for res in [&corrected, &uncorrected] {
        for fold in &res.folds {
            folds.push(FoldRecord {
                model: format!("adm_{}", res.signal.as_str()),
                held_out: &fold.held_out,
                train_participants: &fold.train_participants,
                inner_folds: vec![],
            });
        }
    }
    emit_folds(ctx, "folds_adm.json", folds);
    Ok(AdmOutcome { corrected, uncorrected })
}

pub struct GbtOutcome {
    pub corrected: GbtLopoResult,
    pub uncorrected: GbtLopoResult,
}

fn most_chosen(res: &GbtLopoResult, grid: &[GbtParams]) -> GbtParams {
    let counts: Vec<usize> = grid.iter().map(|g| res.folds.iter().filter(|f| f.chosen == *g).count()).collect();
    let best = (0..grid.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    grid[best]
}

pub fn fit_gbt(ctx: &mut Ctx, rows: &[FeatureRow]) -> Result<GbtOutcome> {
    let grid = ctx.cfg.grid.hyper_grid();
    let seed = ctx.cfg.options.seed;
    let corrected = nested_lopo(rows, Target::Arousal, FeatureSet::Corrected, &grid, seed)?;
    let uncorrected =
        nested_lopo(rows, Target::Arousal, ctx.cfg.options.uncorrected_features.feature_set(), &grid, seed)?;

    let mut rep = ctx.csv(&["scope", "participant_id", "n", "r", "p", "r2", "nrmse", "chosen_params"]);
    let mut fold_records = Vec::new();
    let points = grid.points();
    for (name, res) in [("corrected", &corrected), ("uncorrected", &uncorrected)] {
        let scope = format!("gbt_{name}");
        for fold in &res.folds {
            if let Some(r) = &fold.report {
                let mut row = report_row(&scope, &fold.held_out, r);
                row.push(fold.chosen.label());
                rep.row(row);
            }
            fold_records.push(FoldRecord {
                model: scope.clone(),
                held_out: &fold.held_out,
                train_participants: &fold.train_participants,
                inner_folds: fold
                    .inner_folds
                    .iter()
                    .map(|i| InnerRecord { train_participants: &i.train_participants, valid_participants: &i.valid_participants })
                    .collect(),
            });
        }
        for mut row in aggregate_rows(&scope, &res.aggregate) {
            row.push(String::new());
            rep.row(row);
        }
        let preds: Vec<&Prediction> = res.folds.iter().flat_map(|f| &f.predictions).collect();
        let csv = predictions_csv(ctx, &preds);
        ctx.emit_csv(ctx.cfg.output(format!("gbt_predictions_{name}.csv")), csv);

        // final model on every participant with the most frequently chosen grid point
        let params = most_chosen(res, &points);
        let cols = res.feature_set.columns();
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features[cols.clone()].to_vec()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.arousal).collect();
        let model = gbt::train_gbt(&x, &y, &params)?;
        ctx.emit(ctx.cfg.output(format!("gbt_{name}.model.txt")), model.to_text());
    }
    ctx.emit_csv(ctx.cfg.output("gbt_report.csv"), rep);
    emit_folds(ctx, "folds_gbt.json", fold_records);
    Ok(GbtOutcome { corrected, uncorrected })
}

/// Headline numbers of a full run.
pub fn metrics_file(ctx: &mut Ctx, adm: &AdmOutcome, gbt: Option<&GbtOutcome>) {
    let mut csv = ctx.csv(&["metric", "value"]);
    let mut put = |name: &str, agg: &Aggregate| {
        csv.row([format!("{name}_r_mean"), f(agg.r.mean)]);
        csv.row([format!("{name}_r_sd"), f(agg.r.sd)]);
        csv.row([format!("{name}_p_mean"), f(agg.p.mean)]);
        csv.row([format!("{name}_p_max"), f(agg.max_p)]);
        csv.row([format!("{name}_r2_mean"), f(agg.r2.mean)]);
        csv.row([format!("{name}_r2_sd"), f(agg.r2.sd)]);
        csv.row([format!("{name}_nrmse_mean"), f(agg.nrmse.mean)]);
        csv.row([format!("{name}_folds"), agg.folds.to_string()]);
    };
    put("adm_corrected", &adm.corrected.aggregate);
    put("adm_uncorrected", &adm.uncorrected.aggregate);
    if let Some(g) = gbt {
        put("gbt_corrected", &g.corrected.aggregate);
        put("gbt_uncorrected", &g.uncorrected.aggregate);
    }
    ctx.emit_csv(ctx.cfg.output("metrics.csv"), csv);
}

/// Full pipeline: calibrate, decouple, label, fit both models, summarize.
pub struct Evaluation {
    pub results: Vec<ClipResult>,
    pub labels: LabelTable,
    pub adm: AdmOutcome,
    pub gbt: GbtOutcome,
}

pub fn evaluate(ctx: &mut Ctx) -> Result<Evaluation> {
    let lut = load_lut(ctx)?;
    let models = calibrate(ctx, &lut)?;
    let results = decouple(ctx, &lut, &models)?;
    let labels = labels(ctx)?;
    let summaries: Vec<_> =
        results.iter().map(|r| (r.participant.clone(), r.clip.clone(), r.ps_arousal, r.ps_measured)).collect();
    let data = study_dataset(&summaries, &labels)?;
    let adm = fit_adm(ctx, &data)?;
    let feats: Vec<_> = results.iter().map(|r| (r.participant.clone(), r.clip.clone(), r.features.clone())).collect();
    let rows = feature_rows(&feats, &labels)?;
    let gbt = fit_gbt(ctx, &rows)?;
    metrics_file(ctx, &adm, Some(&gbt));
    Ok(Evaluation { results, labels, adm, gbt })
}

// ---------------------------------------------------------------- report

#[derive(Debug, Deserialize)]
struct PredictionRow {
    participant_id: String,
    clip_id: String,
    predicted: f64,
    actual: f64,
}

#[derive(Debug, Deserialize)]
struct ReportRow {
    scope: String,
    participant_id: String,
    n: usize,
    r: f64,
    p: f64,
    r2: f64,
    nrmse: f64,
}

/// Long-format, plot-ready tables from the fitted-model outputs.
pub fn report(ctx: &mut Ctx) -> Result<()> {
    let mut pva = ctx.csv(&["model", "signal", "participant_id", "clip_id", "predicted", "actual"]);
    let mut fm = ctx.csv(&["model", "signal", "participant_id", "n", "r", "p", "r2", "nrmse"]);
    let mut found = false;
    for model in ["adm", "gbt"] {
        for signal in ["corrected", "uncorrected"] {
            let path = ctx.cfg.output(format!("{model}_predictions_{signal}.csv"));
            if !path.exists() {
                continue;
            }
            found = true;
            for r in ctx.read_csv::<PredictionRow>(&path)? {
                pva.row([model.into(), signal.into(), r.participant_id, r.clip_id, f(r.predicted), f(r.actual)]);
            }
        }
        let path = ctx.cfg.output(format!("{model}_report.csv"));
        if path.exists() {
            for r in ctx.read_csv::<ReportRow>(&path)? {
                if r.participant_id == "ALL" {
                    continue;
                }
                let signal = r.scope.trim_start_matches(&format!("{model}_")).to_string();
                fm.row([model.into(), signal, r.participant_id, r.n.to_string(), f(r.r), f(r.p), f(r.r2), f(r.nrmse)]);
            }
        }
    }
    if !found {
        return Err(Error::Config("no prediction files found; run fit-adm or fit-gbt first".into()));
    }
    ctx.emit_csv(ctx.cfg.output("report/predicted_vs_actual.csv"), pva);
    ctx.emit_csv(ctx.cfg.output("report/fold_metrics.csv"), fm);
    Ok(())
}

// ---------------------------------------------------------------- synth

pub fn synth(ctx: &mut Ctx) -> Result<SynthStudy> {
    let study = generate_study(&ctx.cfg.synth)?;
    write_study(ctx, &study)?;
    Ok(study)
}

fn write_study(ctx: &mut Ctx, s: &SynthStudy) -> Result<()> {
    let cfg = ctx.cfg;
    ctx.emit(cfg.resolve(&cfg.paths.lut), s.lut.to_text()?);

    for p in &s.participants {
        let mut csv = ctx.csv(&["r", "g", "b", "mean_pupil_mm"]);
        for (rgb, v) in &p.calibration {
            csv.row([f(rgb.r), f(rgb.g), f(rgb.b), f(*v)]);
        }
        ctx.emit_csv(cfg.resolve(&cfg.paths.calibration).join(format!("{}.csv", p.id)), csv);
        for (c, tr) in p.traces.iter().enumerate() {
            let mut csv = ctx.csv(&["timestamp_ms", "left_mm", "right_mm", "gaze_x", "gaze_y"]);
            for i in 0..tr.len() {
                let (gx, gy) = tr.gaze[i].unwrap_or((-1.0, -1.0));
                csv.row([f(tr.timestamps[i]), f(tr.left[i]), f(tr.right[i]), f(gx), f(gy)]);
            }
            ctx.emit_csv(cfg.resolve(&cfg.paths.traces).join(&p.id).join(format!("{}.csv", s.clips[c])), csv);
        }
    }

    let frames_dir = cfg.resolve(&cfg.paths.frames);
    for (c, clip) in s.clips.iter().enumerate() {
        let mut csv = ctx.csv(&["frame_index", "r", "g", "b"]);
        for (i, rgb) in s.frames[c].iter().enumerate() {
            csv.row([i.to_string(), f(rgb.r), f(rgb.g), f(rgb.b)]);
        }
        ctx.emit_csv(frames_dir.join(format!("{clip}.csv")), csv);
        let mut csv = ctx.csv(&["frame_index", "start_ms", "end_ms"]);
        for (i, w) in s.frame_times.iter().enumerate() {
            csv.row([i.to_string(), f(w.start_ms), f(w.end_ms)]);
        }
        ctx.emit_csv(frames_dir.join(format!("{clip}_times.csv")), csv);
    }

    let mut csv = ctx.csv(&["clip_id", "start_s", "end_s"]);
    for sal in &s.salient {
        for (a, b) in &sal.intervals {
            csv.row([sal.clip_id.clone(), f(*a), f(*b)]);
        }
    }
    ctx.emit_csv(cfg.resolve(&cfg.paths.salient), csv);

    let mut csv = ctx.csv(&["participant_id", "clip_id", "emotion", "score"]);
    for p in &s.participants {
        for (c, clip) in s.clips.iter().enumerate() {
            for (e, name) in crate::scaling::EMOTIONS.iter().enumerate() {
                csv.row([p.id.clone(), clip.clone(), name.to_string(), p.ratings[c][e].to_string()]);
            }
        }
    }
    ctx.emit_csv(cfg.resolve(&cfg.paths.ratings), csv);

    let truth = cfg.resolve(&cfg.paths.truth);
    let mut csv = ctx.csv(&["clip_id", "valence", "arousal"]);
    for (c, l) in s.clips.iter().zip(&s.labels) {
        csv.row([c.clone(), f(l.valence), f(l.arousal)]);
    }
    ctx.emit_csv(truth.join("labels.csv"), csv);
    let mut csv = ctx.csv(&["participant_id", "clip_id", "timestamp_ms", "luminosity_mm", "arousal_mm", "noise_mm", "measured_mm"]);
    for p in &s.participants {
        for (c, t) in p.truth.iter().enumerate() {
            for i in 0..t.timestamps.len() {
                csv.row([
                    p.id.clone(),
                    s.clips[c].clone(),
                    f(t.timestamps[i]),
                    f(t.luminosity[i]),
                    f(t.arousal[i]),
                    f(t.noise[i]),
                    f(t.measured[i]),
                ]);
            }
        }
        ctx.emit(truth.join(format!("models/{}.plr.txt", p.id)), p.model.to_text());
    }
    ctx.emit_csv(truth.join("truth.csv"), csv);
    let mut csv = ctx.csv(&["participant_id", "gain_mm"]);
    for p in &s.participants {
        csv.row([p.id.clone(), f(p.gain)]);
    }
    ctx.emit_csv(truth.join("gains.csv"), csv);
    Ok(())
}
