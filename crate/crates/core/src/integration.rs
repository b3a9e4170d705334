//! Label integration: turning the labels an ego vehicle collects for one
//! event into a single aggregate label with a quality indicator in `[0, 1]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::types::{Label, Observation, Timestamp, VehicleId};

/// One label received (or produced) for an event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub labeler: VehicleId,
    pub label: Label,
    /// When the labeled data was observed.
    pub time: Timestamp,
    /// Offline accuracy of the labeler, in `[0, 1]`.
    pub accuracy: f64,
}

/// Relative weights of freshness (`a`) and accuracy (`b`) in WA.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaWeights {
    a: f64,
    b: f64,
}

impl WaWeights {
    /// Normalizes so that `a + b = 1`.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0 && a + b > 0.0) {
            return Err(validation("WA weights need a, b >= 0 with a + b > 0"));
        }
        let s = a + b;
        Ok(Self { a: a / s, b: b / s })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Default for WaWeights {
    fn default() -> Self {
        Self { a: 0.5, b: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WmvVariant {
    /// Per-class product of correctness probabilities.
    #[default]
    PaperLiteral,
    /// Per-class sum of log-odds, softmax-normalized quality.
    Likelihood,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    Mv,
    Wmv,
    Wa,
}

impl IntegrationMethod {
    pub const ALL: [IntegrationMethod; 3] = [Self::Mv, Self::Wmv, Self::Wa];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mv => "mv",
            Self::Wmv => "wmv",
            Self::Wa => "wa",
        }
    }
}

impl fmt::Display for IntegrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which rule produced an aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MethodTag {
    Mv,
    Wmv,
    WmvLikelihood,
    Wa,
}

/// Parameters shared by the weighted methods.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationParams {
    pub weights: WaWeights,
    /// Freshness time scale; 1.0 is the unscaled exponential.
    pub decay: f64,
    pub wmv_variant: WmvVariant,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        Self {
            weights: WaWeights::default(),
            decay: 1.0,
            wmv_variant: WmvVariant::PaperLiteral,
        }
    }
}

/// Aggregate label and its quality indicator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrated {
    pub label: Label,
    pub quality: f64,
}

/// The data available at the ego for one event, with its integrated label.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedSample {
    pub data: Vec<Observation>,
    pub label: Label,
    pub quality: f64,
    pub method: MethodTag,
}

/// `exp(-(t_ego - t_j) / decay)` for past data, 0 otherwise.
pub fn freshness(t_ego: Timestamp, t_j: Timestamp, decay: f64) -> f64 {
    debug_assert!(decay > 0.0);
    if t_ego > t_j {
        (-(t_ego.value() - t_j.value()) / decay).exp()
    } else {
        0.0
    }
}

pub fn correctness_probability(freshness: f64, accuracy: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&freshness) {
        return Err(validation(format!("freshness {freshness} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(validation(format!("accuracy {accuracy} outside [0, 1]")));
    }
    Ok(freshness * accuracy)
}

fn check(contribs: &[Contribution]) -> Result<()> {
    if contribs.is_empty() {
        return Err(validation(
            "label integration needs at least one contribution",
        ));
    }
    if let Some(c) = contribs.iter().find(|c| !(0.0..=1.0).contains(&c.accuracy)) {
        return Err(validation(format!(
            "labeler {:?} accuracy {} outside [0, 1]",
            c.labeler, c.accuracy
        )));
    }
    Ok(())
}

fn num_classes(contribs: &[Contribution]) -> usize {
    contribs.iter().map(|c| c.label.0 + 1).max().unwrap_or(0)
}

/// Two scores closer than this relative gap count as a tie, so that
/// floating-point rounding never decides between mathematically equal
/// alternatives.
pub(crate) const TIE_RTOL: f64 = 1e-12;

/// Argmax over `(class, score)` pairs given in ascending class order; ties
/// go to the lowest class.
pub(crate) fn argmax_scores(
    scores: impl IntoIterator<Item = (usize, f64)>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (c, s) in scores {
        match best {
            None => best = Some((c, s)),
            Some((_, b)) => {
                if s - b > TIE_RTOL * s.abs().max(b.abs()) {
                    best = Some((c, s));
                }
            }
        }
    }
    best
}

/// Majority voting; quality is the winning share of votes.
pub fn integrate_mv(contribs: &[Contribution]) -> Result<Integrated> {
    check(contribs)?;
    let mut counts = vec![0usize; num_classes(contribs)];
    for c in contribs {
        counts[c.label.0] += 1;
    }
    let mut best = 0;
    for (k, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = k;
        }
    }
    Ok(Integrated {
        label: Label(best),
        quality: counts[best] as f64 / contribs.len() as f64,
    })
}

/// Weighted majority voting over `(label, p)` votes, where `p` is the
/// correctness probability of each vote.
///
/// Votes with `p = 0` carry no information and are dropped. Classes that
/// receive no remaining vote are not candidates. If nothing remains, the
/// plain majority label is returned with quality 0.
pub fn wmv_from_probabilities(votes: &[(Label, f64)], variant: WmvVariant) -> Result<Integrated> {
    if votes.is_empty() {
        return Err(validation(
            "label integration needs at least one contribution",
        ));
    }
    if let Some((_, p)) = votes.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
        return Err(validation(format!("probability {p} outside [0, 1]")));
    }
    let k = votes.iter().map(|(l, _)| l.0 + 1).max().unwrap_or(0);
    let mut voted = vec![false; k];
    for &(l, p) in votes {
        if p > 0.0 {
            voted[l.0] = true;
        }
    }
    if !voted.iter().any(|&v| v) {
        let mut counts = vec![0usize; k];
        for (l, _) in votes {
            counts[l.0] += 1;
        }
        let best = (0..k).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
        return Ok(Integrated {
            label: Label(best),
            quality: 0.0,
        });
    }

    match variant {
        WmvVariant::PaperLiteral => {
            let mut product = vec![1.0f64; k];
            for &(l, p) in votes {
                if p > 0.0 {
                    product[l.0] *= p;
                }
            }
            let (best, q) = argmax_scores((0..k).filter(|&c| voted[c]).map(|c| (c, product[c])))
                .expect("at least one voted class");
            Ok(Integrated {
                label: Label(best),
                quality: q,
            })
        }
        WmvVariant::Likelihood => {
            const EPS: f64 = 1e-6;
            let mut log_odds = vec![0.0f64; k];
            for &(l, p) in votes {
                if p > 0.0 {
                    let p = p.clamp(EPS, 1.0 - EPS);
                    log_odds[l.0] += (p / (1.0 - p)).ln();
                }
            }
            let (best, top) = argmax_scores((0..k).filter(|&c| voted[c]).map(|c| (c, log_odds[c])))
                .expect("at least one voted class");
            let norm: f64 = (0..k)
                .filter(|&c| voted[c])
                .map(|c| (log_odds[c] - top).exp())
                .sum();
            Ok(Integrated {
                label: Label(best),
                quality: 1.0 / norm,
            })
        }
    }
}

pub fn integrate_wmv(
    contribs: &[Contribution],
    t_ego: Timestamp,
    decay: f64,
    variant: WmvVariant,
) -> Result<Integrated> {
    check(contribs)?;
    let votes: Vec<(Label, f64)> = contribs
        .iter()
        .map(|c| {
            let p = correctness_probability(freshness(t_ego, c.time, decay), c.accuracy)?;
            Ok((c.label, p))
        })
        .collect::<Result<_>>()?;
    wmv_from_probabilities(&votes, variant)
}

/// Weighted average over `(label, lambda)` votes: each vote weighs
/// `exp(lambda)`; quality is the winning class's share of the total weight.
pub fn wa_from_coefficients(votes: &[(Label, f64)]) -> Result<Integrated> {
    if votes.is_empty() {
        return Err(validation(
            "label integration needs at least one contribution",
        ));
    }
    let k = votes.iter().map(|(l, _)| l.0 + 1).max().unwrap_or(0);
    let mut mass = vec![0.0f64; k];
    let mut voted = vec![false; k];
    let mut total = 0.0;
    for &(l, lambda) in votes {
        let w = lambda.exp();
        mass[l.0] += w;
        voted[l.0] = true;
        total += w;
    }
    let (best, top) =
        argmax_scores((0..k).filter(|&c| voted[c]).map(|c| (c, mass[c]))).expect("non-empty votes");
    Ok(Integrated {
        label: Label(best),
        quality: (top / total).min(1.0),
    })
}

pub fn integrate_wa(
    contribs: &[Contribution],
    t_ego: Timestamp,
    decay: f64,
    weights: WaWeights,
) -> Result<Integrated> {
    check(contribs)?;
    let votes: Vec<(Label, f64)> = contribs
        .iter()
        .map(|c| {
            let f = freshness(t_ego, c.time, decay);
            (c.label, weights.a * f + weights.b * c.accuracy)
        })
        .collect();
    wa_from_coefficients(&votes)
}

pub fn integrate(
    method: IntegrationMethod,
    params: &IntegrationParams,
    contribs: &[Contribution],
    t_ego: Timestamp,
) -> Result<(Integrated, MethodTag)> {
    if !(params.decay.is_finite() && params.decay > 0.0) {
        return Err(validation("decay must be > 0"));
    }
    Ok(match method {
        IntegrationMethod::Mv => (integrate_mv(contribs)?, MethodTag::Mv),
        IntegrationMethod::Wmv => {
            let tag = match params.wmv_variant {
                WmvVariant::PaperLiteral => MethodTag::Wmv,
                WmvVariant::Likelihood => MethodTag::WmvLikelihood,
            };
            (
                integrate_wmv(contribs, t_ego, params.decay, params.wmv_variant)?,
                tag,
            )
        }
        IntegrationMethod::Wa => (
            integrate_wa(contribs, t_ego, params.decay, params.weights)?,
            MethodTag::Wa,
        ),
    })
}

/// Fraction of aggregate labels that equal the ground truth.
pub fn labeling_accuracy(aggregates: &[Label], ground_truth: &[Label]) -> Result<f64> {
    if aggregates.is_empty() {
        return Err(validation("labeling accuracy needs at least one label"));
    }
    if aggregates.len() != ground_truth.len() {
        return Err(validation(format!(
            "{} aggregate labels vs {} ground-truth labels",
            aggregates.len(),
            ground_truth.len()
        )));
    }
    let hits = aggregates
        .iter()
        .zip(ground_truth)
        .filter(|(a, g)| a == g)
        .count();
    Ok(hits as f64 / aggregates.len() as f64)
}
