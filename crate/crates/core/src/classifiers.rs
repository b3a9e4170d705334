//! Weak multi-class classifiers used as vehicle labelers.
//!
//! Five families give heterogeneous quality levels: a fully grown CART tree,
//! a depth-limited tree, one-vs-rest linear SVMs trained by subgradient
//! descent, one-vs-rest RBF kernel perceptrons, and distance-weighted kNN.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::stratified_folds;
use crate::error::{validation, Result};
use crate::rng::{self, Stream};
use crate::types::{FeatureVector, Label, Sample, VehicleId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierKind {
    /// Unlimited depth, one sample per leaf minimum.
    TreeFine,
    TreeMedium {
        #[serde(default = "default_medium_depth")]
        max_depth: usize,
    },
    LinearOvr {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_linear_epochs")]
        epochs: usize,
    },
    KernelOvr {
        /// RBF width on standardized features; `None` uses `sqrt(d)`.
        #[serde(default)]
        width: Option<f64>,
        #[serde(default = "default_kernel_epochs")]
        epochs: usize,
    },
    WeightedKnn {
        #[serde(default = "default_k")]
        k: usize,
    },
}

fn default_medium_depth() -> usize {
    4
}
fn default_lambda() -> f64 {
    0.01
}
fn default_linear_epochs() -> usize {
    20
}
fn default_kernel_epochs() -> usize {
    10
}
fn default_k() -> usize {
    10
}

impl ClassifierKind {
    pub fn tree_medium() -> Self {
        Self::TreeMedium {
            max_depth: default_medium_depth(),
        }
    }

    pub fn linear_ovr() -> Self {
        Self::LinearOvr {
            lambda: default_lambda(),
            epochs: default_linear_epochs(),
        }
    }

    pub fn kernel_ovr() -> Self {
        Self::KernelOvr {
            width: None,
            epochs: default_kernel_epochs(),
        }
    }

    pub fn weighted_knn() -> Self {
        Self::WeightedKnn { k: default_k() }
    }

    /// The five heterogeneous labeler families.
    pub fn default_profiles() -> Vec<ClassifierKind> {
        vec![
            Self::TreeFine,
            Self::tree_medium(),
            Self::linear_ovr(),
            Self::kernel_ovr(),
            Self::weighted_knn(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TreeFine => "tree_fine",
            Self::TreeMedium { .. } => "tree_medium",
            Self::LinearOvr { .. } => "linear_ovr",
            Self::KernelOvr { .. } => "kernel_ovr",
            Self::WeightedKnn { .. } => "weighted_knn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::TreeFine => true,
            Self::TreeMedium { max_depth } => max_depth > 0,
            Self::LinearOvr { lambda, epochs } => lambda > 0.0 && lambda.is_finite() && epochs > 0,
            Self::KernelOvr { width, epochs } => {
                width.is_none_or(|w| w > 0.0 && w.is_finite()) && epochs > 0
            }
            Self::WeightedKnn { k } => k > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(validation(format!(
                "{}: hyperparameters must be positive",
                self.name()
            )))
        }
    }
}

/// A trained classifier. Immutable once built.
#[derive(Clone, Debug)]
pub struct Model {
    kind: ClassifierKind,
    dim: usize,
    /// `present[c]` is true when class `c` appeared in the training data.
    present: Vec<bool>,
    inner: Inner,
}

#[derive(Clone, Debug)]
enum Inner {
    Tree(Node),
    Linear {
        scaler: Scaler,
        /// One weight vector per class; the last entry is the bias.
        weights: Vec<Vec<f64>>,
    },
    Kernel {
        scaler: Scaler,
        width_sq: f64,
        support: Vec<Vec<f64>>,
        /// `coef[c][s]`: signed averaged mistake count for class `c`, support `s`.
        coef: Vec<Vec<f64>>,
    },
    Knn {
        scaler: Scaler,
        k: usize,
        points: Vec<Vec<f64>>,
        labels: Vec<Label>,
    },
}

pub fn train(kind: &ClassifierKind, data: &[(FeatureVector, Label)], seed: u64) -> Result<Model> {
    kind.validate()?;
    let first = data
        .first()
        .ok_or_else(|| validation("cannot train on an empty set"))?;
    let dim = first.0.len();
    if let Some(i) = data.iter().position(|(x, _)| x.len() != dim) {
        return Err(validation(format!(
            "training sample {i} has {} features, expected {dim}",
            data[i].0.len()
        )));
    }
    let num_classes = data.iter().map(|(_, l)| l.0 + 1).max().unwrap_or(0);
    let mut present = vec![false; num_classes];
    for (_, l) in data {
        present[l.0] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(validation("training data must contain at least 2 classes"));
    }
    let xs: Vec<&[f64]> = data.iter().map(|(x, _)| x.as_slice()).collect();
    let ys: Vec<Label> = data.iter().map(|(_, l)| *l).collect();

    let inner = match *kind {
        ClassifierKind::TreeFine => Inner::Tree(grow_tree(&xs, &ys, num_classes, None)),
        ClassifierKind::TreeMedium { max_depth } => {
            Inner::Tree(grow_tree(&xs, &ys, num_classes, Some(max_depth)))
        }
        ClassifierKind::LinearOvr { lambda, epochs } => {
            let scaler = Scaler::fit(&xs);
            let zs: Vec<Vec<f64>> = xs.iter().map(|x| scaler.apply(x)).collect();
            let weights = train_pegasos(&zs, &ys, &present, lambda, epochs, seed);
            Inner::Linear { scaler, weights }
        }
        ClassifierKind::KernelOvr { width, epochs } => {
            let scaler = Scaler::fit(&xs);
            let zs: Vec<Vec<f64>> = xs.iter().map(|x| scaler.apply(x)).collect();
            let width = width.unwrap_or((dim as f64).sqrt());
            let width_sq = width * width;
            let (support, coef) =
                train_kernel_perceptron(zs, &ys, &present, width_sq, epochs, seed);
            Inner::Kernel {
                scaler,
                width_sq,
                support,
                coef,
            }
        }
        ClassifierKind::WeightedKnn { k } => {
            let scaler = Scaler::fit(&xs);
            let points = xs.iter().map(|x| scaler.apply(x)).collect();
            Inner::Knn {
                scaler,
                k,
                points,
                labels: ys,
            }
        }
    };
    Ok(Model {
        kind: kind.clone(),
        dim,
        present,
        inner,
    })
}

impl Model {
    pub fn kind(&self) -> &ClassifierKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<Label> {
        if x.len() != self.dim {
            return Err(validation(format!(
                "query has {} features, model expects {}",
                x.len(),
                self.dim
            )));
        }
        let x = x.as_slice();
        let label = match &self.inner {
            Inner::Tree(root) => root.predict(x),
            Inner::Linear { scaler, weights } => {
                let z = scaler.apply(x);
                let scores: Vec<f64> = weights.iter().map(|w| linear_score(w, &z)).collect();
                self.argmax_present(&scores)
            }
            Inner::Kernel {
                scaler,
                width_sq,
                support,
                coef,
            } => {
                let z = scaler.apply(x);
                let k: Vec<f64> = support.iter().map(|s| rbf(s, &z, *width_sq)).collect();
                let scores: Vec<f64> = coef
                    .iter()
                    .map(|c| c.iter().zip(&k).map(|(a, kv)| a * kv).sum())
                    .collect();
                self.argmax_present(&scores)
            }
            Inner::Knn {
                scaler,
                k,
                points,
                labels,
            } => {
                let z = scaler.apply(x);
                knn_vote(&z, *k, points, labels, self.present.len())
            }
        };
        Ok(label)
    }

    pub fn predict_all(&self, xs: &[FeatureVector]) -> Result<Vec<Label>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    fn argmax_present(&self, scores: &[f64]) -> Label {
        let mut best: Option<(usize, f64)> = None;
        for (c, &s) in scores.iter().enumerate() {
            if !self.present[c] {
                continue;
            }
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        Label(best.map_or(0, |(c, _)| c))
    }
}

/// Fraction of predictions that equal the reference labels.
pub fn measure_accuracy(model: &Model, eval_set: &[(FeatureVector, Label)]) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(validation("accuracy needs a non-empty evaluation set"));
    }
    let mut hits = 0usize;
    for (x, y) in eval_set {
        if model.predict(x)? == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / eval_set.len() as f64)
}

/// Offline accuracy of a classifier family on labeled history: every
/// history sample is labeled by a model trained on the other folds, and the
/// accuracy is the fraction of those labels that match.
pub fn cross_validated_accuracy(
    kind: &ClassifierKind,
    data: &[(FeatureVector, Label)],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if data.len() < 2 {
        return Err(validation("cross-validation needs at least 2 samples"));
    }
    let folds = folds.clamp(2, data.len());
    let labels: Vec<Label> = data.iter().map(|(_, l)| *l).collect();
    let fold_of = stratified_folds(&labels, folds, &mut rng::stream(seed, Stream::Folds));
    let mut hits = 0usize;
    for f in 0..folds {
        let fit: Vec<(FeatureVector, Label)> = data
            .iter()
            .zip(&fold_of)
            .filter(|(_, &k)| k != f)
            .map(|(s, _)| s.clone())
            .collect();
        let held: Vec<&(FeatureVector, Label)> = data
            .iter()
            .zip(&fold_of)
            .filter(|(_, &k)| k == f)
            .map(|(s, _)| s)
            .collect();
        if held.is_empty() {
            continue;
        }
        let distinct: HashSet<Label> = fit.iter().map(|(_, l)| *l).collect();
        if distinct.len() < 2 {
            // A fold left with one class: the model is that constant.
            let only = fit.first().map(|(_, l)| *l);
            hits += held.iter().filter(|(_, y)| Some(*y) == only).count();
            continue;
        }
        let model = train(kind, &fit, seed)?;
        for (x, y) in held {
            if model.predict(x)? == *y {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Offline history plus samples appended by online selection.
#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    base: Vec<Sample>,
    online: Vec<Sample>,
    seen: HashSet<(VehicleId, u64)>,
}

impl TrainingSet {
    pub fn new(base: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(base.len());
        for s in &base {
            if !seen.insert(s.identity()) {
                return Err(validation("duplicate sample identity in offline history"));
            }
        }
        Ok(Self {
            base,
            online: Vec::new(),
            seen,
        })
    }

    pub fn push_online(&mut self, sample: Sample) -> Result<()> {
        if !self.seen.insert(sample.identity()) {
            return Err(validation(format!(
                "sample from {:?} at t={} already in the training set",
                sample.source,
                sample.time.value()
            )));
        }
        self.online.push(sample);
        Ok(())
    }

    pub fn base(&self) -> &[Sample] {
        &self.base
    }

    pub fn online(&self) -> &[Sample] {
        &self.online
    }

    pub fn pairs(&self) -> Vec<(FeatureVector, Label)> {
        self.base
            .iter()
            .chain(&self.online)
            .map(|s| (s.data.clone(), s.label))
            .collect()
    }
}

/// Full retraining of the model's family over base and online samples.
pub fn retrain_with(model: &Model, training: &TrainingSet, seed: u64) -> Result<Model> {
    train(&model.kind, &training.pairs(), seed)
}

/// A vehicle's labeler: its trained model and measured offline accuracy.
#[derive(Clone, Debug)]
pub struct LabelerProfile {
    pub id: VehicleId,
    pub kind: ClassifierKind,
    pub model: Model,
    pub offline_accuracy: f64,
    /// Per-dimension noise of the vehicle's own view, in feature standard deviations.
    pub view_noise: f64,
}

impl LabelerProfile {
    /// Trains on the offline history and measures its accuracy there.
    pub fn build(
        id: VehicleId,
        kind: ClassifierKind,
        offline: &[(FeatureVector, Label)],
        seed: u64,
    ) -> Result<Self> {
        let offline_accuracy = cross_validated_accuracy(&kind, offline, 5, seed)?;
        let model = train(&kind, offline, seed)?;
        Ok(Self {
            id,
            kind,
            model,
            offline_accuracy,
            view_noise: 0.0,
        })
    }
}

// --- preprocessing -------------------------------------------------------

#[derive(Clone, Debug)]
struct Scaler {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Scaler {
    fn fit(xs: &[&[f64]]) -> Self {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// --- CART ----------------------------------------------------------------

#[derive(Clone, Debug)]
enum Node {
    Leaf(Label),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64]) -> Label {
        let mut node = self;
        loop {
            match node {
                Node::Leaf(l) => return *l,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}

fn grow_tree(xs: &[&[f64]], ys: &[Label], num_classes: usize, max_depth: Option<usize>) -> Node {
    let idx: Vec<usize> = (0..xs.len()).collect();
    grow_node(xs, ys, num_classes, idx, 0, max_depth)
}

fn class_counts(ys: &[Label], idx: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &i in idx {
        counts[ys[i].0] += 1;
    }
    counts
}

fn majority(counts: &[usize]) -> Label {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    Label(best)
}

fn gini_weighted(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let sum_sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    // n * gini = n - sum(c^2)/n
    nf - sum_sq / nf
}

fn grow_node(
    xs: &[&[f64]],
    ys: &[Label],
    num_classes: usize,
    idx: Vec<usize>,
    depth: usize,
    max_depth: Option<usize>,
) -> Node {
    let counts = class_counts(ys, &idx, num_classes);
    let leaf = majority(&counts);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || idx.len() < 2 || max_depth.is_some_and(|m| depth >= m) {
        return Node::Leaf(leaf);
    }

    let parent = gini_weighted(&counts, idx.len());
    let dim = xs[0].len();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = idx.clone();
    #[allow(clippy::needless_range_loop)]
    for f in 0..dim {
        sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let mut left = vec![0usize; num_classes];
        let mut right = counts.clone();
        for pos in 0..sorted.len() - 1 {
            let i = sorted[pos];
            left[ys[i].0] += 1;
            right[ys[i].0] -= 1;
            let here = xs[i][f];
            let next = xs[sorted[pos + 1]][f];
            if here == next {
                continue;
            }
            let nl = pos + 1;
            let impurity = gini_weighted(&left, nl) + gini_weighted(&right, sorted.len() - nl);
            if best.is_none_or(|(b, _, _)| impurity < b - 1e-12) {
                best = Some((impurity, f, here + (next - here) / 2.0));
            }
        }
    }

    match best {
        Some((impurity, feature, threshold)) if impurity < parent - 1e-12 => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.into_iter().partition(|&i| xs[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow_node(xs, ys, num_classes, l, depth + 1, max_depth)),
                right: Box::new(grow_node(xs, ys, num_classes, r, depth + 1, max_depth)),
            }
        }
        _ => Node::Leaf(leaf),
    }
}

// --- linear one-vs-rest ---------------------------------------------------

fn linear_score(w: &[f64], z: &[f64]) -> f64 {
    let d = z.len();
    w[..d].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[d]
}

/// Pegasos subgradient descent on the regularized hinge loss, one binary
/// problem per present class. The bias is folded into the weight vector as
/// a constant feature.
fn train_pegasos(
    zs: &[Vec<f64>],
    ys: &[Label],
    present: &[bool],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let d = zs[0].len();
    let mut order: Vec<usize> = (0..zs.len()).collect();
    let mut rng = rng::stream(seed, Stream::Train);
    let mut schedule = Vec::with_capacity(epochs * zs.len());
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        schedule.extend_from_slice(&order);
    }

    present
        .iter()
        .enumerate()
        .map(|(c, &is_present)| {
            let mut w = vec![0.0; d + 1];
            if !is_present {
                return w;
            }
            for (t, &i) in schedule.iter().enumerate() {
                let eta = 1.0 / (lambda * (t as f64 + 2.0));
                let y = if ys[i].0 == c { 1.0 } else { -1.0 };
                let margin = y * linear_score(&w, &zs[i]);
                let shrink = 1.0 - eta * lambda;
                w.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    for (wj, zj) in w[..d].iter_mut().zip(&zs[i]) {
                        *wj += eta * y * zj;
                    }
                    w[d] += eta * y;
                }
            }
            w
        })
        .collect()
}

// --- kernel one-vs-rest ----------------------------------------------------

fn rbf(a: &[f64], b: &[f64], width_sq: f64) -> f64 {
    // The constant 1 acts as a bias term.
    (-sq_dist(a, b) / width_sq).exp() + 1.0
}

/// Averaged kernel perceptrons, one per present class. Returns the support
/// vectors and the per-class coefficients restricted to them.
fn train_kernel_perceptron(
    zs: Vec<Vec<f64>>,
    ys: &[Label],
    present: &[bool],
    width_sq: f64,
    epochs: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = zs.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = rbf(&zs[i], &zs[j], width_sq);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let mut rng = rng::stream(seed, Stream::Train);
    let mut order: Vec<usize> = (0..n).collect();
    let mut schedule = Vec::with_capacity(epochs * n);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        schedule.extend_from_slice(&order);
    }
    let total = schedule.len() as f64;

    let mut coef_full: Vec<Vec<f64>> = Vec::with_capacity(present.len());
    for (c, &is_present) in present.iter().enumerate() {
        let mut alpha = vec![0.0; n];
        let mut stamped = vec![0.0; n];
        if is_present {
            // score[i] = sum_j alpha[j] * K(j, i), maintained incrementally.
            let mut score = vec![0.0; n];
            for (t, &i) in schedule.iter().enumerate() {
                let y = if ys[i].0 == c { 1.0 } else { -1.0 };
                if y * score[i] <= 0.0 {
                    alpha[i] += y;
                    stamped[i] += y * (t as f64 + 1.0);
                    let row = &gram[i * n..(i + 1) * n];
                    for (s, k) in score.iter_mut().zip(row) {
                        *s += y * k;
                    }
                }
            }
        }
        coef_full.push(
            alpha
                .iter()
                .zip(&stamped)
                .map(|(a, s)| a - s / total)
                .collect(),
        );
    }

    let support_idx: Vec<usize> = (0..n)
        .filter(|&i| coef_full.iter().any(|c| c[i] != 0.0))
        .collect();
    let coef = coef_full
        .iter()
        .map(|c| support_idx.iter().map(|&i| c[i]).collect())
        .collect();
    let mut zs = zs;
    let support = support_idx
        .iter()
        .map(|&i| std::mem::take(&mut zs[i]))
        .collect();
    (support, coef)
}

// --- weighted kNN --------------------------------------------------------

/// Squared-inverse-distance vote among the `k` nearest points. Exact
/// matches dominate: when any neighbor coincides with the query, only
/// coinciding neighbors vote.
fn knn_vote(
    z: &[f64],
    k: usize,
    points: &[Vec<f64>],
    labels: &[Label],
    num_classes: usize,
) -> Label {
    let mut dist: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (sq_dist(p, z), i))
        .collect();
    let k = k.min(dist.len());
    dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest = &mut dist[..k];
    nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut scores = vec![0.0; num_classes];
    if nearest[0].0 == 0.0 {
        for &(_, i) in nearest.iter().take_while(|(d, _)| *d == 0.0) {
            scores[labels[i].0] += 1.0;
        }
    } else {
        for &(d, i) in nearest.iter() {
            scores[labels[i].0] += 1.0 / d;
        }
    }
    let mut best = 0;
    for c in 1..num_classes {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    Label(best)
}
