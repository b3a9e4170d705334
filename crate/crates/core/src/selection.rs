//! Choosing which aggregated samples enter the online training set.
//!
//! Quality-Diversity Selection alternates two choices: the class whose
//! addition maximizes the label entropy of the selection, then the
//! highest-quality remaining candidate of that class. After each addition
//! the learner is retrained and evaluated; the loop stops once the target
//! accuracy is reached. Random selection and quality-only selection share
//! the same loop.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifiers::{measure_accuracy, train, ClassifierKind, TrainingSet};
use crate::error::{validation, Result};
use crate::integration::{argmax_scores, AggregatedSample};
use crate::rng::{self, Stream};
use crate::types::{FeatureVector, Label};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    Qds,
    Rs,
    Mvqs,
}

impl SelectionPolicy {
    pub const ALL: [SelectionPolicy; 3] = [Self::Qds, Self::Rs, Self::Mvqs];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Qds => "qds",
            Self::Rs => "rs",
            Self::Mvqs => "mvqs",
        }
    }
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mean quality of the selected samples.
pub fn quality_score(qualities: &[f64]) -> Result<f64> {
    if qualities.is_empty() {
        return Err(validation("quality score of an empty selection"));
    }
    Ok(qualities.iter().sum::<f64>() / qualities.len() as f64)
}

/// Shannon entropy, in bits, of the class proportions among `labels`.
/// Empty input has entropy 0.
pub fn diversity_score(labels: &[Label], num_classes: usize) -> f64 {
    let mut counts =
        vec![0usize; num_classes.max(labels.iter().map(|l| l.0 + 1).max().unwrap_or(0))];
    for l in labels {
        counts[l.0] += 1;
    }
    entropy_of_counts(&mut counts)
}

/// Counts are summed in sorted order so that permuted count vectors give
/// bit-identical entropies.
fn entropy_of_counts(counts: &mut [usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts.sort_unstable();
    let n = n as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// The available class whose one-sample addition to `current` maximizes
/// the entropy; ties go to the lowest class.
pub fn select_class(
    current: &[Label],
    available: &BTreeSet<Label>,
    num_classes: usize,
) -> Result<Label> {
    if available.is_empty() {
        return Err(validation("no class has remaining candidates"));
    }
    let k = num_classes
        .max(current.iter().map(|l| l.0 + 1).max().unwrap_or(0))
        .max(available.iter().map(|l| l.0 + 1).max().unwrap_or(0));
    let mut counts = vec![0usize; k];
    for l in current {
        counts[l.0] += 1;
    }
    let scored = available.iter().map(|&c| {
        let mut extended = counts.clone();
        extended[c.0] += 1;
        (c.0, entropy_of_counts(&mut extended))
    });
    let (best, _) = argmax_scores(scored).expect("non-empty availability");
    Ok(Label(best))
}

/// Aggregated candidates with the bookkeeping of what has been selected.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    candidates: Vec<AggregatedSample>,
    num_classes: usize,
    selected: Vec<usize>,
    remaining: BTreeSet<usize>,
}

impl CandidatePool {
    pub fn new(candidates: Vec<AggregatedSample>, num_classes: usize) -> Result<Self> {
        if let Some(c) = candidates.iter().find(|c| c.label.0 >= num_classes) {
            return Err(validation(format!(
                "candidate label {} out of range for {num_classes} classes",
                c.label
            )));
        }
        let remaining = (0..candidates.len()).collect();
        Ok(Self {
            candidates,
            num_classes,
            selected: Vec::new(),
            remaining,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn candidates(&self) -> &[AggregatedSample] {
        &self.candidates
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn remaining(&self) -> &BTreeSet<usize> {
        &self.remaining
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining.is_empty()
    }

    pub fn selected_labels(&self) -> Vec<Label> {
        self.selected
            .iter()
            .map(|&i| self.candidates[i].label)
            .collect()
    }

    pub fn available_classes(&self) -> BTreeSet<Label> {
        self.remaining
            .iter()
            .map(|&i| self.candidates[i].label)
            .collect()
    }

    pub fn select(&mut self, index: usize) -> Result<()> {
        if !self.remaining.remove(&index) {
            return Err(validation(format!("candidate {index} is not available")));
        }
        self.selected.push(index);
        Ok(())
    }
}

/// Highest-quality remaining candidate of class `class`; ties go to the
/// lowest index.
pub fn select_sample(pool: &CandidatePool, class: Label) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &i in pool.remaining() {
        let c = &pool.candidates()[i];
        if c.label != class {
            continue;
        }
        if best.is_none_or(|b| c.quality > pool.candidates()[b].quality) {
            best = Some(i);
        }
    }
    best
}

/// Candidate indices in descending quality, ties by index.
pub fn quality_order(pool: &CandidatePool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        pool.candidates()[b]
            .quality
            .total_cmp(&pool.candidates()[a].quality)
            .then(a.cmp(&b))
    });
    order
}

pub fn random_order(pool: &CandidatePool, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng::stream(seed, Stream::RandomOrder));
    order
}

/// The learner the selection loop retrains after every addition.
#[derive(Clone, Debug)]
pub struct Learner<'a> {
    pub kind: &'a ClassifierKind,
    pub training: TrainingSet,
    pub test_set: &'a [(FeatureVector, Label)],
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    /// Target accuracy.
    pub alpha: f64,
    pub max_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutcome {
    /// Candidate indices in selection order.
    pub chosen: Vec<usize>,
    pub n_star: usize,
    /// Accuracy of the last retrained model.
    pub achieved_accuracy: f64,
    pub target_met: bool,
    /// Accuracy of the learner before any online sample.
    pub initial_accuracy: f64,
    /// Accuracy after each step; `accuracies[i]` follows `chosen[i]`.
    pub accuracies: Vec<f64>,
}

pub fn qds_run(
    pool: &CandidatePool,
    learner: Learner<'_>,
    stop: StopRule,
) -> Result<SelectionOutcome> {
    run_policy(pool, SelectionPolicy::Qds, learner, stop, 0)
}

pub fn baseline_rs(
    pool: &CandidatePool,
    learner: Learner<'_>,
    stop: StopRule,
    seed: u64,
) -> Result<SelectionOutcome> {
    run_policy(pool, SelectionPolicy::Rs, learner, stop, seed)
}

pub fn baseline_mvqs(
    pool: &CandidatePool,
    learner: Learner<'_>,
    stop: StopRule,
) -> Result<SelectionOutcome> {
    run_policy(pool, SelectionPolicy::Mvqs, learner, stop, 0)
}

/// The shared loop: pick, append, retrain, evaluate, until the target is
/// met, the pool is exhausted, or `max_steps` additions have been made.
/// `seed` only affects the random policy.
pub fn run_policy(
    pool: &CandidatePool,
    policy: SelectionPolicy,
    learner: Learner<'_>,
    stop: StopRule,
    seed: u64,
) -> Result<SelectionOutcome> {
    if pool.is_empty() {
        return Err(validation("selection needs a non-empty candidate pool"));
    }
    if learner.test_set.is_empty() {
        return Err(validation("selection needs a non-empty test set"));
    }
    if !(0.0..=1.0).contains(&stop.alpha) {
        return Err(validation("alpha must lie in [0, 1]"));
    }
    let Learner {
        kind,
        mut training,
        test_set,
        seed: train_seed,
    } = learner;

    let initial = train(kind, &training.pairs(), train_seed)?;
    let initial_accuracy = measure_accuracy(&initial, test_set)?;

    let mut pool = pool.clone();
    let mut fixed_order = match policy {
        SelectionPolicy::Qds => Vec::new(),
        SelectionPolicy::Rs => random_order(&pool, seed),
        SelectionPolicy::Mvqs => quality_order(&pool),
    }
    .into_iter();

    let mut accuracies = Vec::new();
    let mut achieved = initial_accuracy;
    let mut target_met = false;
    while !pool.is_exhausted() && pool.selected().len() < stop.max_steps {
        let next = match policy {
            SelectionPolicy::Qds => {
                let class = select_class(
                    &pool.selected_labels(),
                    &pool.available_classes(),
                    pool.num_classes(),
                )?;
                select_sample(&pool, class).expect("available class has a remaining candidate")
            }
            SelectionPolicy::Rs | SelectionPolicy::Mvqs => fixed_order
                .next()
                .expect("fixed order covers every remaining candidate"),
        };
        pool.select(next)?;
        let candidate = &pool.candidates()[next];
        for obs in &candidate.data {
            training.push_online(obs.with_label(candidate.label))?;
        }
        let model = train(kind, &training.pairs(), train_seed)?;
        achieved = measure_accuracy(&model, test_set)?;
        accuracies.push(achieved);
        if achieved >= stop.alpha {
            target_met = true;
            break;
        }
    }

    let chosen = pool.selected().to_vec();
    Ok(SelectionOutcome {
        n_star: chosen.len(),
        chosen,
        achieved_accuracy: achieved,
        target_met,
        initial_accuracy,
        accuracies,
    })
}
