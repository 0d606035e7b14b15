//! Run configuration: a TOML file with `[paths]`, `[options]`, `[display]`,
//! `[grid]` and `[synth]` sections. Relative paths resolve against the
//! directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbt::{FeatureSet, HyperGrid};
use crate::io::sha256_hex;
use crate::luminance::{DisplayModel, DEFAULT_GAZE_RADIUS_PX};
use crate::preprocess::DEFAULT_PAD_MS;
use crate::synth::SynthConfig;

/// Only environment variable consulted: replaces `paths.output`.
pub const OUTPUT_DIR_ENV: &str = "PUPILKIT_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub lut: PathBuf,
    /// Directory of `<participant>.csv` calibration samples.
    pub calibration: PathBuf,
    /// Directory of `<participant>/<clip>.csv` raw traces.
    pub traces: PathBuf,
    /// Directory of `<clip>.csv` frame means and `<clip>_times.csv`, or
    /// `<clip>/` folders of PPM frames.
    pub frames: PathBuf,
    pub ratings: PathBuf,
    /// External `clip_id,valence,arousal` labels.
    pub labels: Option<PathBuf>,
    pub salient: PathBuf,
    pub output: PathBuf,
    /// Where `synth` puts its ground truth.
    pub truth: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            lut: "study/lut.txt".into(),
            calibration: "study/calibration".into(),
            traces: "study/traces".into(),
            frames: "study/frames".into(),
            ratings: "study/ratings.csv".into(),
            labels: None,
            salient: "study/salient.csv".into(),
            output: "out".into(),
            truth: "study/truth".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitScope {
    /// combined weights refit for every clip
    Clip,
    /// one fit per participant over all of their clips
    Participant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Indscal,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScope {
    Shared,
    Participant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncorrectedFeatures {
    Strict,
    Lenient,
}

impl UncorrectedFeatures {
    pub fn feature_set(self) -> FeatureSet {
        match self {
            UncorrectedFeatures::Strict => FeatureSet::Strict,
            UncorrectedFeatures::Lenient => FeatureSet::Lenient,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub pad_ms: f64,
    pub gaze_radius_px: u32,
    pub combined_fit_scope: FitScope,
    pub label_source: LabelSource,
    pub label_scope: LabelScope,
    pub uncorrected_features: UncorrectedFeatures,
    pub seed: u64,
    pub indscal_restarts: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            pad_ms: DEFAULT_PAD_MS,
            gaze_radius_px: DEFAULT_GAZE_RADIUS_PX,
            combined_fit_scope: FitScope::Clip,
            label_source: LabelSource::Indscal,
            label_scope: LabelScope::Shared,
            uncorrected_features: UncorrectedFeatures::Strict,
            seed: 7,
            indscal_restarts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Display {
    pub gamma: f64,
    pub max_lux: f64,
    pub levels: usize,
    pub luma_weights: [f64; 3],
}

impl Default for Display {
    fn default() -> Self {
        let d = DisplayModel::default();
        Display { gamma: d.gamma, max_lux: d.max_lux, levels: d.levels_per_channel, luma_weights: d.luma_weights }
    }
}

impl Display {
    pub fn model(&self) -> DisplayModel {
        DisplayModel {
            gamma: self.gamma,
            max_lux: self.max_lux,
            levels_per_channel: self.levels,
            luma_weights: self.luma_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub n_trees: Vec<usize>,
    pub lambda_l2: Vec<f64>,
    pub min_samples_leaf: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        let g = HyperGrid::default();
        Grid {
            learning_rate: g.learning_rate,
            max_depth: g.max_depth,
            n_trees: g.n_trees,
            lambda_l2: g.lambda_l2,
            min_samples_leaf: g.min_samples_leaf,
        }
    }
}

impl Grid {
    pub fn hyper_grid(&self) -> HyperGrid {
        HyperGrid {
            learning_rate: self.learning_rate.clone(),
            max_depth: self.max_depth.clone(),
            n_trees: self.n_trees.clone(),
            lambda_l2: self.lambda_l2.clone(),
            min_samples_leaf: self.min_samples_leaf.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub options: Options,
    pub display: Display,
    pub grid: Grid,
    pub synth: SynthConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// Truncated SHA-256 of the config text.
    #[serde(skip)]
    pub hash: String,
}

impl RunConfig {
    /// Parses config text; `base_dir` anchors relative paths.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.hash = sha256_hex(text.as_bytes())[..16].to_string();
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.paths.output = PathBuf::from(dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    /// Defaults anchored at `base_dir`.
    pub fn defaults_at(base_dir: &Path) -> Result<Self> {
        Self::from_toml("", base_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.options;
        if !(o.pad_ms >= 0.0) || !o.pad_ms.is_finite() {
            return Err(Error::Config(format!("options.pad_ms must be >= 0, got {}", o.pad_ms)));
        }
        if o.label_source == LabelSource::External && self.paths.labels.is_none() {
            return Err(Error::Config("label_source = \"external\" needs paths.labels".into()));
        }
        if self.grid.hyper_grid().is_empty() {
            return Err(Error::Config("every [grid] list must be nonempty".into()));
        }
        for p in self.grid.hyper_grid().points() {
            p.validate().map_err(|e| Error::Config(format!("grid: {e}")))?;
        }
        self.synth.validate()?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.resolve(&self.paths.output).join(rel)
    }

    /// Path as recorded in manifests: relative to the config directory when
    /// possible, so relocating a study does not change manifest bytes.
    pub fn display_path(&self, p: &Path) -> String {
        p.strip_prefix(&self.base_dir).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    /// Fails with a config error when a declared input is absent.
    pub fn require(&self, p: &Path, what: &str) -> Result<PathBuf> {
        let full = self.resolve(p);
        if !full.exists() {
            return Err(Error::Config(format!("{what} not found: {}", full.display())));
        }
        Ok(full)
    }
}
