//! Valence/arousal labels from 12-emotion questionnaire ratings via
//! individual-differences scaling (INDSCAL).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const EMOTIONS: [&str; 12] = [
    "positive", "negative", "happy", "calm", "content", "amused", "excited", "angry", "sad", "disgusted", "fearful",
    "bored",
];

pub fn emotion_index(name: &str) -> Option<usize> {
    EMOTIONS.iter().position(|e| *e == name)
}

/// Participants × clips × 12 integer scores in 0..=9.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTensor {
    pub participants: Vec<String>,
    pub clips: Vec<String>,
    /// `scores[p][c][e]`
    pub scores: Vec<Vec<[u8; 12]>>,
}

impl RatingTensor {
    /// Builds the tensor from long-format rows. Every (participant, clip,
    /// emotion) cell must be present exactly once.
    pub fn from_rows<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str, u8)>,
    {
        let mut participants: Vec<String> = Vec::new();
        let mut clips: Vec<String> = Vec::new();
        let mut cells: Vec<(usize, usize, usize, u8)> = Vec::new();
        for (p, c, e, s) in rows {
            let ei = emotion_index(e).ok_or_else(|| Error::InvalidInput(format!("unknown emotion {e:?}")))?;
            if s > 9 {
                return Err(Error::InvalidInput(format!("score {s} outside 0..=9")));
            }
            let pi = participants.iter().position(|x| x == p).unwrap_or_else(|| {
                participants.push(p.to_string());
                participants.len() - 1
            });
            let ci = clips.iter().position(|x| x == c).unwrap_or_else(|| {
                clips.push(c.to_string());
                clips.len() - 1
            });
            cells.push((pi, ci, ei, s));
        }
        let mut seen = vec![vec![[false; 12]; clips.len()]; participants.len()];
        let mut scores = vec![vec![[0u8; 12]; clips.len()]; participants.len()];
        for (p, c, e, s) in cells {
            if seen[p][c][e] {
                return Err(Error::InvalidInput(format!(
                    "duplicate rating {} {} {}",
                    participants[p], clips[c], EMOTIONS[e]
                )));
            }
            seen[p][c][e] = true;
            scores[p][c][e] = s;
        }
        for (p, row) in seen.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if let Some(e) = cell.iter().position(|x| !x) {
                    return Err(Error::MissingData(format!(
                        "no {} rating for participant {} clip {}",
                        EMOTIONS[e], participants[p], clips[c]
                    )));
                }
            }
        }
        Ok(RatingTensor { participants, clips, scores })
    }

    /// Per-clip mean score of one emotion across participants.
    pub fn clip_means(&self, emotion: usize) -> Vec<f64> {
        (0..self.clips.len())
            .map(|c| {
                self.scores.iter().map(|p| p[c][emotion] as f64).sum::<f64>() / self.participants.len() as f64
            })
            .collect()
    }
}

/// Per-participant Euclidean distances between clip rating vectors.
pub fn dissimilarities(ratings: &RatingTensor) -> Result<Vec<DMatrix<f64>>> {
    let n = ratings.clips.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 clips, got {n}")));
    }
    Ok(ratings
        .scores
        .par_iter()
        .map(|clips| {
            DMatrix::from_fn(n, n, |i, j| {
                clips[i]
                    .iter()
                    .zip(&clips[j])
                    .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndscalOptions {
    pub dims: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Random restarts in addition to the classical-scaling start.
    pub restarts: usize,
}

impl Default for IndscalOptions {
    fn default() -> Self {
        IndscalOptions { dims: 2, max_iter: 1000, tol: 1e-10, seed: 0, restarts: 3 }
    }
}

/// Shared clip configuration and per-participant dimension weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpace {
    /// clips × dims; column 0 is valence, column 1 arousal once oriented.
    pub coords: DMatrix<f64>,
    /// participants × dims, all ≥ 0.
    pub weights: DMatrix<f64>,
    pub loss: f64,
    /// Loss after every ALS iteration of the winning start.
    pub loss_history: Vec<f64>,
    pub converged: bool,
}

fn double_center(d: &DMatrix<f64>) -> DMatrix<f64> {
    let n = d.nrows();
    let sq = d.map(|v| v * v);
    let row: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let all = sq.sum() / (n * n) as f64;
    DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row[i] - row[j] + all))
}

/// Nonnegative least squares `min ‖A w − y‖` given `G = AᵀA` and `h = Aᵀy`,
/// by enumerating active sets (dims is small).
fn nnls(g: &DMatrix<f64>, h: &DVector<f64>) -> DVector<f64> {
    let r = h.len();
    let mut best = DVector::zeros(r);
    let mut best_obj = 0.0;
    for mask in 1u32..(1 << r) {
        let idx: Vec<usize> = (0..r).filter(|j| mask & (1 << j) != 0).collect();
        let gs = DMatrix::from_fn(idx.len(), idx.len(), |a, b| g[(idx[a], idx[b])]);
        let hs = DVector::from_fn(idx.len(), |a, _| h[idx[a]]);
        let Some(sol) = gs.clone().cholesky().map(|c| c.solve(&hs)) else {
            continue;
        };
        if sol.iter().any(|v| *v < 0.0) {
            continue;
        }
        // objective up to a constant: wᵀGw − 2hᵀw = −hᵀw at the optimum
        let obj = -hs.dot(&sol);
        if obj < best_obj {
            best_obj = obj;
            best = DVector::zeros(r);
            for (a, &j) in idx.iter().enumerate() {
                best[j] = sol[a];
            }
        }
    }
    best
}

struct Als<'a> {
    b: &'a [DMatrix<f64>],
    l: DMatrix<f64>,
    r: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl Als<'_> {
    fn loss(&self) -> f64 {
        self.b
            .iter()
            .enumerate()
            .map(|(k, bk)| {
                let wk = DMatrix::from_diagonal(&self.w.row(k).transpose());
                (bk - &self.l * wk * self.r.transpose()).norm_squared()
            })
            .sum()
    }

    // argmin over `a` of Σ_k ‖B_k − a W_k otherᵀ‖²
    fn solve_factor(&self, other: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, dims) = (other.nrows(), other.ncols());
        let mut rhs = DMatrix::zeros(n, dims);
        for (k, bk) in self.b.iter().enumerate() {
            let wk = DMatrix::from_diagonal(&self.w.row(k).transpose());
            rhs += bk * other * wk;
        }
        let gram = (other.transpose() * other).component_mul(&(self.w.transpose() * &self.w));
        let inv = gram.pseudo_inverse(1e-12).expect("pseudo-inverse of a square matrix");
        rhs * inv
    }

    fn solve_weights(&mut self) {
        let gram = (self.l.transpose() * &self.l).component_mul(&(self.r.transpose() * &self.r));
        for (k, bk) in self.b.iter().enumerate() {
            let h = DVector::from_fn(self.l.ncols(), |j, _| (self.l.column(j).transpose() * bk * self.r.column(j))[0]);
            self.w.set_row(k, &nnls(&gram, &h).transpose());
        }
    }

    fn normalize(&mut self) {
        for j in 0..self.l.ncols() {
            let (nl, nr) = (self.l.column(j).norm(), self.r.column(j).norm());
            if nl > 0.0 && nr > 0.0 {
                self.l.column_mut(j).unscale_mut(nl);
                self.r.column_mut(j).unscale_mut(nr);
                self.w.column_mut(j).scale_mut(nl * nr);
            }
        }
    }

    fn run(&mut self, max_iter: usize, tol: f64) -> (Vec<f64>, bool) {
        let mut history = vec![self.loss()];
        for _ in 0..max_iter {
            self.l = self.solve_factor(&self.r.clone());
            self.r = self.solve_factor(&self.l.clone());
            self.solve_weights();
            self.normalize();
            let prev = *history.last().unwrap();
            let cur = self.loss();
            assert!(
                cur <= prev * (1.0 + 1e-9) + 1e-12,
                "ALS loss increased from {prev} to {cur}"
            );
            history.push(cur);
            if (prev - cur).abs() <= tol * prev.max(f64::MIN_POSITIVE) {
                return (history, true);
            }
        }
        (history, false)
    }
}

fn is_degenerate(distances: &[DMatrix<f64>]) -> bool {
    distances.iter().all(|d| {
        let n = d.nrows();
        let off: Vec<f64> = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| d[(i, j)]).collect();
        let (lo, hi) = off.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        hi - lo <= 1e-12 * hi.abs().max(1.0)
    })
}

/// Fits a shared configuration with diagonal per-participant weights to the
/// double-centered squared distances. Axes are returned in descending order
/// of total weight; see [`GroupSpace::orient`] for valence/arousal identity.
pub fn indscal_fit(distances: &[DMatrix<f64>], opts: &IndscalOptions) -> Result<GroupSpace> {
    let dims = opts.dims;
    if dims == 0 || dims > 8 {
        return Err(Error::InvalidParameter(format!("dims must be in 1..=8, got {dims}")));
    }
    let Some(first) = distances.first() else {
        return Err(Error::InsufficientData("no participants".into()));
    };
    let n = first.nrows();
    if n < dims + 1 {
        return Err(Error::DegenerateConfiguration(format!("{n} clips cannot span {dims} dimensions")));
    }
    if distances.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 participants, got {}", distances.len())));
    }
    for d in distances {
        if d.nrows() != n || d.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: d.nrows() });
        }
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) || (d - d.transpose()).amax() > 1e-9 {
            return Err(Error::InvalidInput("distance matrix must be finite, nonnegative and symmetric".into()));
        }
    }
    if is_degenerate(distances) {
        return Err(Error::DegenerateConfiguration("all pairwise distances are equal".into()));
    }

    let b: Vec<DMatrix<f64>> = distances.iter().map(double_center).collect();
    let mean_b = b.iter().fold(DMatrix::zeros(n, n), |acc, x| acc + x) / b.len() as f64;

    // classical scaling of the mean scalar products
    let eig = SymmetricEigen::new(mean_b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let x0 = DMatrix::from_fn(n, dims, |i, j| {
        eig.eigenvectors[(i, order[j])] * eig.eigenvalues[order[j]].max(1e-12).sqrt()
    });

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Als, Vec<f64>, bool)> = None;
    for start in 0..=opts.restarts {
        let init = if start == 0 {
            x0.clone()
        } else {
            let s = x0.norm() / (n * dims) as f64;
            x0.map(|v| v + s * rng.random_range(-3.0..3.0))
        };
        let mut als = Als { b: &b, l: init.clone(), r: init, w: DMatrix::from_element(b.len(), dims, 1.0) };
        als.normalize();
        als.solve_weights();
        let (hist, conv) = als.run(opts.max_iter, opts.tol);
        let cur = *hist.last().unwrap();
        if best.as_ref().is_none_or(|(_, h, _)| cur < *h.last().unwrap() - 1e-12 * cur.abs()) {
            best = Some((als, hist, conv));
        }
    }
    let (als, history, converged) = best.unwrap();

    // symmetrize; at a converged INDSCAL solution the two factors coincide
    let mut sign = vec![1.0; dims];
    for (j, s) in sign.iter_mut().enumerate() {
        if als.l.column(j).dot(&als.r.column(j)) < 0.0 {
            *s = -1.0;
        }
    }
    let mut x = DMatrix::from_fn(n, dims, |i, j| 0.5 * (als.l[(i, j)] + sign[j] * als.r[(i, j)]));
    for j in 0..dims {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
        let norm = x.column(j).norm();
        if norm > 0.0 {
            x.column_mut(j).scale_mut((n as f64).sqrt() / norm);
        }
    }
    let mut sym = Als { b: &b, l: x.clone(), r: x, w: DMatrix::zeros(b.len(), dims) };
    sym.solve_weights();
    let loss = sym.loss();

    let totals: Vec<f64> = (0..dims).map(|j| sym.w.column(j).sum()).collect();
    let mut axes: Vec<usize> = (0..dims).collect();
    axes.sort_by(|&i, &j| totals[j].total_cmp(&totals[i]));
    let coords = DMatrix::from_fn(n, dims, |i, j| sym.l[(i, axes[j])]);
    let weights = DMatrix::from_fn(b.len(), dims, |k, j| sym.w[(k, axes[j])]);
    Ok(GroupSpace { coords, weights, loss, loss_history: history, converged })
}

impl GroupSpace {
    /// Assigns the arousal axis (column 1) to whichever axis correlates most
    /// strongly with per-clip "excited" means, then flips signs so the most
    /// excited clip has positive arousal and the most positive clip has
    /// positive valence.
    pub fn orient(&mut self, excited: &[f64], positive: &[f64]) -> Result<()> {
        let (n, dims) = self.coords.shape();
        if dims < 2 {
            return Err(Error::InvalidParameter("orientation needs two dimensions".into()));
        }
        if excited.len() != n || positive.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: excited.len() });
        }
        let corr = |j: usize| {
            let col: Vec<f64> = self.coords.column(j).iter().copied().collect();
            crate::metrics::pearson(&col, excited).map(|(r, _)| r.abs()).unwrap_or(0.0)
        };
        if corr(0) > corr(1) {
            self.coords.swap_columns(0, 1);
            self.weights.swap_columns(0, 1);
        }
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        if self.coords[(argmax(excited), 1)] < 0.0 {
            self.coords.column_mut(1).neg_mut();
        }
        if self.coords[(argmax(positive), 0)] < 0.0 {
            self.coords.column_mut(0).neg_mut();
        }
        Ok(())
    }
}

/// Per-clip valence and arousal in [−2, 2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipLabel {
    pub valence: f64,
    pub arousal: f64,
}

/// Affine rescale so the minimum maps to −2 and the maximum to +2.
pub fn rescale_axis(values: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(hi > lo) || !(hi - lo).is_finite() {
        return Err(Error::Rescale("axis has zero range".into()));
    }
    Ok(values
        .iter()
        .map(|v| {
            if *v == lo {
                -2.0
            } else if *v == hi {
                2.0
            } else {
                (4.0 * (v - lo) / (hi - lo) - 2.0).clamp(-2.0, 2.0)
            }
        })
        .collect())
}

pub fn labels(space: &GroupSpace) -> Result<Vec<ClipLabel>> {
    if space.coords.ncols() < 2 {
        return Err(Error::InvalidParameter("labels need two dimensions".into()));
    }
    let col = |j: usize| space.coords.column(j).iter().copied().collect::<Vec<_>>();
    let v = rescale_axis(&col(0))?;
    let a = rescale_axis(&col(1))?;
    Ok(v.into_iter().zip(a).map(|(valence, arousal)| ClipLabel { valence, arousal }).collect())
}
