use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbtParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub lambda_l2: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams { learning_rate: 0.1, max_depth: 3, n_trees: 100, lambda_l2: 1.0, min_samples_leaf: 2 }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParameter(format!("learning_rate {} outside (0, 1]", self.learning_rate)));
        }
        if !(self.lambda_l2 >= 0.0) || !self.lambda_l2.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda_l2 {} must be >= 0", self.lambda_l2)));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidParameter("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!(
            "lr={};depth={};trees={};lambda={};min_leaf={}",
            self.learning_rate, self.max_depth, self.n_trees, self.lambda_l2, self.min_samples_leaf
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Binary regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtModel {
    pub n_features: usize,
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub lambda_l2: f64,
    pub max_depth: usize,
    pub trees: Vec<Tree>,
    /// Mean squared training loss after each round (index 0 is the base).
    pub train_loss: Vec<f64>,
}

fn check_rows(x: &[Vec<f64>], n_features: usize) -> Result<()> {
    for row in x {
        if row.len() != n_features {
            return Err(Error::DimensionMismatch { expected: n_features, got: row.len() });
        }
    }
    Ok(())
}

impl GbtModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.predict_row_staged(x, self.trees.len())
    }

    /// Prediction using only the first `n_trees` trees.
    pub fn predict_row_staged(&self, x: &[f64], n_trees: usize) -> f64 {
        self.base_prediction + self.learning_rate * self.trees[..n_trees.min(self.trees.len())].iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn truncated(&self, n_trees: usize) -> GbtModel {
        let n = n_trees.min(self.trees.len());
        GbtModel {
            trees: self.trees[..n].to_vec(),
            train_loss: self.train_loss[..=n].to_vec(),
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "pupilkit-gbt v1 features={} base={:?} lr={:?} lambda={:?} max_depth={} trees={}\n",
            self.n_features,
            self.base_prediction,
            self.learning_rate,
            self.lambda_l2,
            self.max_depth,
            self.trees.len()
        );
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(s, "tree {i}");
            fn emit(t: &Tree, i: usize, s: &mut String) {
                match t.nodes[i] {
                    Node::Leaf(v) => {
                        let _ = writeln!(s, "leaf {v:?}");
                    }
                    Node::Split { feature, threshold, left, right } => {
                        let _ = writeln!(s, "split {feature} {threshold:?}");
                        emit(t, left, s);
                        emit(t, right, s);
                    }
                }
            }
            emit(t, 0, &mut s);
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .peekable();
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty model file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 8 || fields[0] != "pupilkit-gbt" || fields[1] != "v1" {
            return Err(Error::parse(path, hl, "expected pupilkit-gbt v1 header"));
        }
        let kv = |i: usize, key: &str| -> Result<&str> {
            fields[i]
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| Error::parse(path, hl, format!("expected {key}=")))
        };
        let num = |v: &str| -> Result<f64> { v.parse().map_err(|_| Error::parse(path, hl, format!("bad number {v:?}"))) };
        let int = |v: &str| -> Result<usize> { v.parse().map_err(|_| Error::parse(path, hl, format!("bad integer {v:?}"))) };
        let n_features = int(kv(2, "features")?)?;
        let base_prediction = num(kv(3, "base")?)?;
        let learning_rate = num(kv(4, "lr")?)?;
        let lambda_l2 = num(kv(5, "lambda")?)?;
        let max_depth = int(kv(6, "max_depth")?)?;
        let n_trees = int(kv(7, "trees")?)?;

        fn parse_node<'a>(
            lines: &mut std::iter::Peekable<impl Iterator<Item = (usize, &'a str)>>,
            nodes: &mut Vec<Node>,
            n_features: usize,
            path: &Path,
        ) -> Result<usize> {
            let (ln, line) = lines.next().ok_or_else(|| Error::parse(path, 0, "truncated tree"))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(path, ln, format!("bad node line {line:?}"));
            let idx = nodes.len();
            match f.as_slice() {
                ["leaf", v] => {
                    nodes.push(Node::Leaf(v.parse().map_err(|_| bad())?));
                }
                ["split", feat, thr] => {
                    let feature: usize = feat.parse().map_err(|_| bad())?;
                    if feature >= n_features {
                        return Err(bad());
                    }
                    let threshold: f64 = thr.parse().map_err(|_| bad())?;
                    nodes.push(Node::Leaf(0.0));
                    let left = parse_node(lines, nodes, n_features, path)?;
                    let right = parse_node(lines, nodes, n_features, path)?;
                    nodes[idx] = Node::Split { feature, threshold, left, right };
                }
                _ => return Err(bad()),
            }
            Ok(idx)
        }

        let mut trees = Vec::with_capacity(n_trees);
        for i in 0..n_trees {
            let (ln, line) = lines.next().ok_or_else(|| Error::parse(path, 0, "missing tree"))?;
            if line != format!("tree {i}") {
                return Err(Error::parse(path, ln, format!("expected `tree {i}`")));
            }
            let mut nodes = Vec::new();
            parse_node(&mut lines, &mut nodes, n_features, path)?;
            trees.push(Tree { nodes });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(path, ln, "trailing content after last tree"));
        }
        Ok(GbtModel { n_features, base_prediction, learning_rate, lambda_l2, max_depth, trees, train_loss: Vec::new() })
    }
}

/// Predicts every row; errors on a feature-count mismatch.
pub fn predict_gbt(model: &GbtModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_rows(x, model.n_features)?;
    Ok(x.iter().map(|r| model.predict_row(r)).collect())
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Fits one tree to `resid` level by level. `order[f]` lists row indices
/// sorted by feature `f`.
fn fit_tree(x: &[Vec<f64>], resid: &[f64], order: &[Vec<usize>], p: &GbtParams) -> Tree {
    let n = resid.len();
    let lam = p.lambda_l2;
    let score = |s: f64, c: f64| s * s / (c + lam);
    let mut nodes = vec![Node::Leaf(0.0)];
    // node id of every row among the currently open leaves
    let mut node_of: Vec<usize> = vec![0; n];
    let mut open: Vec<usize> = vec![0];
    let mut stats: Vec<(f64, usize)> = vec![(resid.iter().sum(), n)];

    for _depth in 0..p.max_depth {
        if open.is_empty() {
            break;
        }
        // slot of each node id in `open`
        let mut slot = vec![usize::MAX; nodes.len()];
        for (k, id) in open.iter().enumerate() {
            slot[*id] = k;
        }
        let mut best: Vec<Option<Best>> = (0..open.len()).map(|_| None).collect();
        let mut left_s = vec![0.0; open.len()];
        let mut left_n = vec![0usize; open.len()];
        let mut last_x = vec![f64::NAN; open.len()];
        for (f, ord) in order.iter().enumerate() {
            left_s.iter_mut().for_each(|v| *v = 0.0);
            left_n.iter_mut().for_each(|v| *v = 0);
            for &row in ord {
                let k = slot[node_of[row]];
                if k == usize::MAX {
                    continue;
                }
                let v = x[row][f];
                let (tot_s, tot_n) = stats[open[k]];
                if left_n[k] > 0 && v > last_x[k] {
                    let (ln, rn) = (left_n[k], tot_n - left_n[k]);
                    if ln >= p.min_samples_leaf && rn >= p.min_samples_leaf {
                        let gain = score(left_s[k], ln as f64) + score(tot_s - left_s[k], rn as f64)
                            - score(tot_s, tot_n as f64);
                        // gains equal up to rounding count as ties
                        if best[k].as_ref().is_none_or(|b| gain > b.gain + 1e-10 * b.gain.abs()) {
                            best[k] = Some(Best { gain, feature: f, threshold: 0.5 * (last_x[k] + v) });
                        }
                    }
                }
                left_s[k] += resid[row];
                left_n[k] += 1;
                last_x[k] = v;
            }
        }

        let mut next_open = Vec::new();
        for (k, id) in open.iter().enumerate() {
            let Some(b) = best[k].take() else { continue };
            if !(b.gain > 1e-12 * (1.0 + stats[*id].0.abs())) {
                continue;
            }
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[*id] = Node::Split { feature: b.feature, threshold: b.threshold, left: l, right: r };
            stats.push((0.0, 0));
            stats.push((0.0, 0));
            next_open.push(l);
            next_open.push(r);
        }
        if next_open.is_empty() {
            break;
        }
        for row in 0..n {
            if let Node::Split { feature, threshold, left, right } = nodes[node_of[row]] {
                let child = if x[row][feature] <= threshold { left } else { right };
                node_of[row] = child;
                stats[child].0 += resid[row];
                stats[child].1 += 1;
            }
        }
        open = next_open;
    }

    for (id, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf(v) = node {
            let (s, c) = stats[id];
            *v = s / (c as f64 + lam);
        }
    }
    Tree { nodes }
}

/// Squared-error gradient boosting with L2-shrunk leaves.
pub fn train_gbt(x: &[Vec<f64>], y: &[f64], params: &GbtParams) -> Result<GbtModel> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: x.len() });
    }
    if x.len() < 10 {
        return Err(Error::InsufficientData(format!("need at least 10 rows, got {}", x.len())));
    }
    if x.len() < 2 * params.min_samples_leaf {
        return Err(Error::Training(format!(
            "{} rows cannot hold two leaves of {}",
            x.len(),
            params.min_samples_leaf
        )));
    }
    let n_features = x[0].len();
    check_rows(x, n_features)?;
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite training value".into()));
    }
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let mse = |pred: &[f64]| y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let mut train_loss = vec![mse(&pred)];
    let order: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut resid = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            resid[i] = y[i] - pred[i];
        }
        let tree = fit_tree(x, &resid, &order, params);
        for i in 0..n {
            pred[i] += params.learning_rate * tree.predict(&x[i]);
        }
        let loss = mse(&pred);
        let prev = *train_loss.last().unwrap();
        assert!(loss <= prev * (1.0 + 1e-12) + 1e-15, "training loss increased from {prev} to {loss}");
        train_loss.push(loss);
        trees.push(tree);
    }
    Ok(GbtModel {
        n_features,
        base_prediction: base,
        learning_rate: params.learning_rate,
        lambda_l2: params.lambda_l2,
        max_depth: params.max_depth,
        trees,
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_xy(n: usize, f: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = x.iter().map(|r| r[0] * r[0] + (3.0 * r[1]).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn depth_zero_predicts_mean() {
        let (x, y) = random_xy(40, 3, 1);
        let p = GbtParams { max_depth: 0, lambda_l2: 0.0, n_trees: 25, ..Default::default() };
        let m = train_gbt(&x, &y, &p).unwrap();
        let mean = y.iter().sum::<f64>() / 40.0;
        for v in predict_gbt(&m, &x).unwrap() {
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn step_target_matches_single_split_oracle() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![((i * 7) % 30) as f64, (i % 4) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| if r[0] < 12.0 { 1.0 } else { 3.0 }).collect();
        let p = GbtParams { max_depth: 1, lambda_l2: 0.0, n_trees: 100, learning_rate: 0.3, min_samples_leaf: 1 };
        let m = train_gbt(&x, &y, &p).unwrap();
        // exhaustive oracle: best single split of the first tree
        let mut best = (f64::NEG_INFINITY, 0usize, 0.0);
        for f in 0..2 {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = 0.5 * (w[0] + w[1]);
                let (mut sl, mut nl, mut sr, mut nr) = (0.0, 0.0, 0.0, 0.0);
                for (r, yy) in x.iter().zip(&y) {
                    let res = yy - m.base_prediction;
                    if r[f] <= t {
                        sl += res;
                        nl += 1.0;
                    } else {
                        sr += res;
                        nr += 1.0;
                    }
                }
                let g = sl * sl / nl + sr * sr / nr;
                if g > best.0 {
                    best = (g, f, t);
                }
            }
        }
        match m.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => assert_eq!((feature, threshold), (best.1, best.2)),
            _ => panic!("root should split"),
        }
        let pred = predict_gbt(&m, &x).unwrap();
        assert!(crate::metrics::r2_score(&y, &pred).unwrap() >= 0.999);
        assert!(pred.iter().zip(&y).all(|(p, t)| (p - t).abs() < 1e-3));
    }

    #[test]
    fn duplicated_rows_give_identical_model() {
        let (x, y) = random_xy(30, 4, 2);
        let p = GbtParams { lambda_l2: 0.0, min_samples_leaf: 1, n_trees: 20, ..Default::default() };
        let a = train_gbt(&x, &y, &p).unwrap();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let b = train_gbt(&x2, &y2, &p).unwrap();
        assert_eq!(a.trees.len(), b.trees.len());
        for (s, t) in a.trees.iter().zip(&b.trees) {
            assert_eq!(s.nodes.len(), t.nodes.len());
            for (u, v) in s.nodes.iter().zip(&t.nodes) {
                match (u, v) {
                    (Node::Leaf(p), Node::Leaf(q)) => assert!((p - q).abs() < 1e-12),
                    (Node::Split { feature: f, threshold: s, .. }, Node::Split { feature: g, threshold: t, .. }) => {
                        assert_eq!((f, s), (g, t))
                    }
                    _ => panic!("structure differs"),
                }
            }
        }
    }

    #[test]
    fn hand_traced_tree() {
        let t = Tree {
            nodes: vec![
                Node::Split { feature: 1, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf(-1.0),
                Node::Split { feature: 0, threshold: 2.0, left: 3, right: 4 },
                Node::Leaf(0.5),
                Node::Leaf(4.0),
            ],
        };
        let m = GbtModel {
            n_features: 2,
            base_prediction: 1.0,
            learning_rate: 0.5,
            lambda_l2: 0.0,
            max_depth: 2,
            trees: vec![t],
            train_loss: vec![],
        };
        let rows = vec![vec![9.0, 0.0], vec![1.0, 1.0], vec![3.0, 1.0]];
        assert_eq!(predict_gbt(&m, &rows).unwrap(), vec![0.5, 1.25, 3.0]);
        assert!(matches!(predict_gbt(&m, &[vec![1.0]]), Err(Error::DimensionMismatch { .. })));
        let empty = GbtModel { trees: vec![], ..m.clone() };
        assert_eq!(predict_gbt(&empty, &rows).unwrap(), vec![1.0; 3]);
        assert_eq!(m.trees[0].depth(), 2);
    }

    #[test]
    fn loss_never_increases_and_text_round_trips() {
        let (x, y) = random_xy(60, 5, 3);
        let p = GbtParams { max_depth: 3, n_trees: 40, ..Default::default() };
        let m = train_gbt(&x, &y, &p).unwrap();
        assert!(m.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(m.trees.iter().all(|t| t.depth() <= 3));
        let back = GbtModel::from_text(&m.to_text(), Path::new("m.txt")).unwrap();
        assert_eq!(back.to_text(), m.to_text());
        assert_eq!(predict_gbt(&back, &x).unwrap(), predict_gbt(&m, &x).unwrap());
    }

    #[test]
    fn permuted_columns_predict_the_same() {
        let (x, y) = random_xy(50, 4, 5);
        let perm = [2, 0, 3, 1];
        let xp: Vec<Vec<f64>> = x.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        let p = GbtParams { n_trees: 30, ..Default::default() };
        let a = predict_gbt(&train_gbt(&x, &y, &p).unwrap(), &x).unwrap();
        let b = predict_gbt(&train_gbt(&xp, &y, &p).unwrap(), &xp).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn training_preconditions() {
        let (x, y) = random_xy(12, 2, 4);
        let p = GbtParams { min_samples_leaf: 7, ..Default::default() };
        assert!(matches!(train_gbt(&x, &y, &p), Err(Error::Training(_))));
        assert!(matches!(train_gbt(&x[..5], &y[..5], &GbtParams::default()), Err(Error::InsufficientData(_))));
    }
}
