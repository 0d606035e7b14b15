//! Linear arousal detection model: pupil size regressed on arousal, then
//! inverted to predict arousal, evaluated leave-one-participant-out.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{Aggregate, EvalReport};

pub const EPSILON_A: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmCoefficients {
    /// mm per arousal unit
    pub a: f64,
    /// mm
    pub b: f64,
    pub fit_r2: f64,
}

/// OLS fit of `pupil = a·arousal + b` over `(pupil, arousal)` pairs.
pub fn fit_adm(pairs: &[(f64, f64)]) -> Result<AdmCoefficients> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|(p, a)| !p.is_finite() || !a.is_finite()) {
        return Err(Error::InvalidInput("non-finite pupil or arousal".into()));
    }
    let n = pairs.len() as f64;
    let mp = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let ma = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut saa, mut sap, mut spp) = (0.0, 0.0, 0.0);
    for (p, a) in pairs {
        saa += (a - ma).powi(2);
        sap += (a - ma) * (p - mp);
        spp += (p - mp).powi(2);
    }
    if !(saa > 0.0) {
        return Err(Error::InsufficientData("arousal labels have zero variance".into()));
    }
    let a = sap / saa;
    if a.abs() <= EPSILON_A {
        return Err(Error::NonInvertible(format!("slope {a:e} mm/unit is below {EPSILON_A:e}")));
    }
    let b = mp - a * ma;
    let fit_r2 = if spp > 0.0 { (sap * sap / (saa * spp)).min(1.0) } else { 1.0 };
    Ok(AdmCoefficients { a, b, fit_r2 })
}

/// Inverts the fitted line: `(pupil − b) / a`.
pub fn predict_arousal(pupil: f64, coeffs: &AdmCoefficients) -> Result<f64> {
    if !(coeffs.a.abs() > EPSILON_A) {
        return Err(Error::NonInvertible(format!("slope {:e} mm/unit is not invertible", coeffs.a)));
    }
    Ok((pupil - coeffs.b) / coeffs.a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    /// luminosity-corrected residual
    Corrected,
    /// raw measured pupil size
    Uncorrected,
}

impl Signal {
    pub fn as_str(self) -> &'static str {
        match self {
            Signal::Corrected => "corrected",
            Signal::Uncorrected => "uncorrected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub participant: String,
    pub clip: String,
    pub ps_arousal: f64,
    pub ps_measured: f64,
    pub arousal: f64,
    pub valence: f64,
    pub label_source: String,
}

impl StudyRow {
    pub fn signal(&self, s: Signal) -> f64 {
        match s {
            Signal::Corrected => self.ps_arousal,
            Signal::Uncorrected => self.ps_measured,
        }
    }
}

/// Salient-interval summaries for every (participant, clip).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyDataset {
    pub rows: Vec<StudyRow>,
}

impl StudyDataset {
    pub fn new(rows: Vec<StudyRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut sources = BTreeSet::new();
        for r in &rows {
            if !seen.insert((r.participant.as_str(), r.clip.as_str())) {
                return Err(Error::InvalidInput(format!("duplicate row {} {}", r.participant, r.clip)));
            }
            if !(-2.0..=2.0).contains(&r.arousal) || !(-2.0..=2.0).contains(&r.valence) {
                return Err(Error::InvalidInput(format!("label outside [-2, 2] for {} {}", r.participant, r.clip)));
            }
            sources.insert(r.label_source.as_str());
        }
        if sources.len() > 1 {
            return Err(Error::InvalidInput(format!("mixed label sources {sources:?}")));
        }
        Ok(StudyDataset { rows })
    }

    /// Participant ids in first-appearance order.
    pub fn participants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.participant) {
                out.push(r.participant.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub participant: String,
    pub clip: String,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmFold {
    pub held_out: String,
    /// Participants whose rows were used to fit this fold.
    pub train_participants: Vec<String>,
    pub coeffs: Option<AdmCoefficients>,
    pub report: Option<EvalReport>,
    pub predictions: Vec<Prediction>,
    /// Why the fold is excluded from the aggregate, if it is.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LopoResult {
    pub signal: Signal,
    pub folds: Vec<AdmFold>,
    pub aggregate: Aggregate,
}

fn adm_fold(data: &StudyDataset, held_out: &str, signal: Signal) -> AdmFold {
    let train: Vec<&StudyRow> = data.rows.iter().filter(|r| r.participant != held_out).collect();
    let test: Vec<&StudyRow> = data.rows.iter().filter(|r| r.participant == held_out).collect();
    let mut train_participants: Vec<String> = train.iter().map(|r| r.participant.clone()).collect();
    train_participants.sort();
    train_participants.dedup();
    let mut fold = AdmFold {
        held_out: held_out.to_string(),
        train_participants,
        coeffs: None,
        report: None,
        predictions: Vec::new(),
        flag: None,
    };
    let pairs: Vec<(f64, f64)> = train.iter().map(|r| (r.signal(signal), r.arousal)).collect();
    let coeffs = match fit_adm(&pairs) {
        Ok(c) => c,
        Err(e) => {
            fold.flag = Some(e.to_string());
            return fold;
        }
    };
    fold.coeffs = Some(coeffs);
    for r in &test {
        // fit_adm guarantees invertibility
        let predicted = predict_arousal(r.signal(signal), &coeffs).expect("invertible fold model");
        fold.predictions.push(Prediction {
            participant: r.participant.clone(),
            clip: r.clip.clone(),
            predicted,
            actual: r.arousal,
        });
    }
    let actual: Vec<f64> = fold.predictions.iter().map(|p| p.actual).collect();
    let predicted: Vec<f64> = fold.predictions.iter().map(|p| p.predicted).collect();
    match EvalReport::evaluate(&actual, &predicted) {
        Ok(rep) => fold.report = Some(rep),
        Err(e) => fold.flag = Some(e.to_string()),
    }
    fold
}

/// Leave-one-participant-out evaluation of the linear model on one signal.
pub fn lopo_evaluate(data: &StudyDataset, signal: Signal) -> Result<LopoResult> {
    let participants = data.participants();
    if participants.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 participants, got {}", participants.len())));
    }
    for p in &participants {
        let n = data.rows.iter().filter(|r| &r.participant == p).count();
        if n < 3 {
            return Err(Error::InsufficientData(format!("participant {p} has {n} clips, need 3")));
        }
    }
    let folds: Vec<AdmFold> = participants.par_iter().map(|p| adm_fold(data, p, signal)).collect();
    let reports: Vec<EvalReport> = folds.iter().filter_map(|f| f.report).collect();
    Ok(LopoResult { signal, aggregate: Aggregate::of(&reports), folds })
}
