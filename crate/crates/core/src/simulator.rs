//! Fleet and timeline model: an ego vehicle, its neighbors, the road
//! segments they pass, what each mode puts on the air, and the end-to-end
//! experiment that turns pool samples into cooperation events, integrates
//! them, and runs a selection policy.

use serde::{Deserialize, Serialize};

use rand_distr::{Distribution, StandardNormal};

use crate::classifiers::{ClassifierKind, LabelerProfile, TrainingSet};
use crate::dataset::{partition, Dataset, Partition};
use crate::error::{validation, Error, Result};
use crate::integration::{
    integrate, labeling_accuracy, AggregatedSample, Contribution, IntegrationMethod,
    IntegrationParams,
};
use crate::rng::{self, mix, Stream};
use crate::selection::{run_policy, CandidatePool, Learner, SelectionPolicy, StopRule};
use crate::types::{
    FeatureVector, Label, Mode, Observation, Sample, SegmentId, Timestamp, VehicleId,
};

/// Time between consecutive segment visits by the ego vehicle.
pub const SEGMENT_INTERVAL: f64 = 10.0;

/// Byte sizes used to account for traffic received at the ego.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadModel {
    pub label_bytes: u64,
    pub feature_bytes_per_dim: u64,
    pub header_bytes: u64,
}

impl Default for LoadModel {
    fn default() -> Self {
        Self {
            label_bytes: 8,
            feature_bytes_per_dim: 8,
            header_bytes: 16,
        }
    }
}

impl LoadModel {
    pub fn validate(&self) -> Result<()> {
        if self.label_bytes == 0 {
            return Err(validation("load.label_bytes must be > 0"));
        }
        if self.feature_bytes_per_dim == 0 {
            return Err(validation("load.feature_bytes_per_dim must be > 0"));
        }
        Ok(())
    }

    /// Bytes one neighbor sends for one event of dimension `dim`.
    pub fn per_neighbor(&self, mode: Mode, dim: usize) -> u64 {
        let data = dim as u64 * self.feature_bytes_per_dim;
        self.header_bytes
            + match mode {
                Mode::Labels => self.label_bytes,
                Mode::Data => data,
                Mode::Samples => self.label_bytes + data,
            }
    }
}

/// Visit times of one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSchedule {
    pub ego: Timestamp,
    /// `neighbors[j]` is when neighbor `j` passed the segment.
    pub neighbors: Vec<Timestamp>,
}

/// The ego, its neighbors' labelers, and when everyone visits each segment.
#[derive(Clone, Debug)]
pub struct FleetTopology {
    pub ego: LabelerProfile,
    pub neighbors: Vec<LabelerProfile>,
    pub schedule: Vec<SegmentSchedule>,
    /// Per-dimension unit for view noise (typically the feature standard deviation).
    pub feature_scale: Vec<f64>,
    /// Extra view noise per time unit of observation age, in `feature_scale` units.
    pub staleness_noise: f64,
    seed: u64,
}

impl FleetTopology {
    pub fn num_neighbors(&self) -> usize {
        self.neighbors.len()
    }

    pub fn segment(&self, segment: SegmentId) -> Result<&SegmentSchedule> {
        self.schedule
            .get(segment.0 as usize)
            .ok_or_else(|| validation(format!("segment {} is not scheduled", segment.0)))
    }
}

/// Schedules `num_segments` segments. The ego reaches segment `i` at
/// `(i + 1) * SEGMENT_INTERVAL`; every neighbor passed it `Δ` earlier with
/// `Δ ~ Uniform(0, delta_max]`.
pub fn build_topology(
    ego: LabelerProfile,
    neighbors: Vec<LabelerProfile>,
    num_segments: usize,
    delta_max: f64,
    feature_scale: Vec<f64>,
    seed: u64,
) -> Result<FleetTopology> {
    if !(delta_max.is_finite() && delta_max >= 0.0) {
        return Err(validation("delta_max must be a finite value >= 0"));
    }
    if feature_scale.len() != ego.model.dim() {
        return Err(validation(
            "feature_scale length must match the data dimension",
        ));
    }
    let mut rng = rng::stream(seed, Stream::Topology);
    let schedule = (0..num_segments)
        .map(|i| {
            let t0 = (i as f64 + 1.0) * SEGMENT_INTERVAL;
            let neighbors = neighbors
                .iter()
                .map(|_| {
                    // `random` is in [0, 1), so the lag is in (0, delta_max].
                    let u: f64 = rand::Rng::random(&mut rng);
                    Timestamp::new(t0 - delta_max * (1.0 - u))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SegmentSchedule {
                ego: Timestamp::new(t0)?,
                neighbors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FleetTopology {
        ego,
        neighbors,
        schedule,
        feature_scale,
        staleness_noise: 0.0,
        seed,
    })
}

/// What one neighbor transmitted for an event.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborPayload {
    pub vehicle: VehicleId,
    pub time: Timestamp,
    pub label: Option<Label>,
    pub data: Option<FeatureVector>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CooperationEvent {
    pub segment: SegmentId,
    pub mode: Mode,
    /// The ego's own observation, labeled by its own model.
    pub ego_sample: Sample,
    pub neighbor_payloads: Vec<NeighborPayload>,
    /// In data mode, the ego's labels for each received view, in payload order.
    pub ego_labels_of_received: Vec<Label>,
    /// Hidden from learners; used by metrics only.
    pub ground_truth: Label,
}

/// Each neighbor observes the event through its own sensors: the event's
/// feature vector plus Gaussian noise with per-dimension standard deviation
/// `(view_noise + staleness_noise * age) * feature_scale[d]`, where `age`
/// is how long before the ego the neighbor passed the segment. The noise
/// draw depends only on the topology seed, the segment and the neighbor,
/// never on the mode.
fn neighbor_views(
    topology: &FleetTopology,
    x: &FeatureVector,
    segment: SegmentId,
    schedule: &SegmentSchedule,
) -> Vec<FeatureVector> {
    let mut rng = rng::substream(topology.seed, Stream::Views, segment.0 as u64);
    topology
        .neighbors
        .iter()
        .zip(&schedule.neighbors)
        .map(|(n, t)| {
            let age = (schedule.ego.value() - t.value()).max(0.0);
            let sigma = n.view_noise + topology.staleness_noise * age;
            let v = x
                .as_slice()
                .iter()
                .zip(&topology.feature_scale)
                .map(|(&xi, &scale)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    xi + sigma * scale * z
                })
                .collect();
            FeatureVector::new(v).expect("finite view")
        })
        .collect()
}

pub fn generate_event(
    topology: &FleetTopology,
    pool_sample: (&FeatureVector, Label),
    segment: SegmentId,
    mode: Mode,
) -> Result<CooperationEvent> {
    let schedule = topology.segment(segment)?;
    let (x, truth) = pool_sample;
    let ego_label = topology.ego.model.predict(x)?;
    let views = neighbor_views(topology, x, segment, schedule);

    let mut payloads = Vec::with_capacity(topology.neighbors.len());
    let mut ego_labels = Vec::new();
    for ((neighbor, view), &time) in topology
        .neighbors
        .iter()
        .zip(views)
        .zip(&schedule.neighbors)
    {
        let label = match mode {
            Mode::Labels | Mode::Samples => Some(neighbor.model.predict(&view)?),
            Mode::Data => None,
        };
        if mode == Mode::Data {
            ego_labels.push(topology.ego.model.predict(&view)?);
        }
        let data = match mode {
            Mode::Data | Mode::Samples => Some(view),
            Mode::Labels => None,
        };
        payloads.push(NeighborPayload {
            vehicle: neighbor.id,
            time,
            label,
            data,
        });
    }

    Ok(CooperationEvent {
        segment,
        mode,
        ego_sample: Sample {
            data: x.clone(),
            label: ego_label,
            time: schedule.ego,
            source: VehicleId::EGO,
        },
        neighbor_payloads: payloads,
        ego_labels_of_received: ego_labels,
        ground_truth: truth,
    })
}

/// Bytes received at the ego for this event.
pub fn account_load(event: &CooperationEvent, load: &LoadModel) -> u64 {
    event.neighbor_payloads.len() as u64
        * load.per_neighbor(event.mode, event.ego_sample.data.len())
}

/// The labels the ego integrates for an event.
///
/// Labels and samples modes use the ego's own label plus every received
/// label. Data mode uses the ego's labels of its own observation and of
/// each received view, all weighted by the ego's accuracy.
pub fn contributions(event: &CooperationEvent, topology: &FleetTopology) -> Vec<Contribution> {
    let ego = Contribution {
        labeler: VehicleId::EGO,
        label: event.ego_sample.label,
        time: event.ego_sample.time,
        accuracy: topology.ego.offline_accuracy,
    };
    let mut out = vec![ego];
    match event.mode {
        Mode::Labels | Mode::Samples => {
            for (p, n) in event.neighbor_payloads.iter().zip(&topology.neighbors) {
                out.push(Contribution {
                    labeler: p.vehicle,
                    label: p.label.expect("labels present in this mode"),
                    time: p.time,
                    accuracy: n.offline_accuracy,
                });
            }
        }
        Mode::Data => {
            for (p, &label) in event
                .neighbor_payloads
                .iter()
                .zip(&event.ego_labels_of_received)
            {
                out.push(Contribution {
                    labeler: VehicleId::EGO,
                    label,
                    time: p.time,
                    accuracy: topology.ego.offline_accuracy,
                });
            }
        }
    }
    out
}

/// The data available at the ego for this event.
pub fn observations(event: &CooperationEvent) -> Vec<Observation> {
    let mut out = vec![Observation {
        data: event.ego_sample.data.clone(),
        time: event.ego_sample.time,
        source: VehicleId::EGO,
    }];
    for p in &event.neighbor_payloads {
        if let Some(data) = &p.data {
            out.push(Observation {
                data: data.clone(),
                time: p.time,
                source: p.vehicle,
            });
        }
    }
    out
}

pub fn aggregate_event(
    event: &CooperationEvent,
    topology: &FleetTopology,
    method: IntegrationMethod,
    params: &IntegrationParams,
) -> Result<AggregatedSample> {
    let contribs = contributions(event, topology);
    let (integrated, tag) = integrate(method, params, &contribs, event.ego_sample.time)?;
    Ok(AggregatedSample {
        data: observations(event),
        label: integrated.label,
        quality: integrated.quality,
        method: tag,
    })
}

// --- experiment ------------------------------------------------------------

/// How the ego's labeler is picked among the trained profiles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EgoChoice {
    /// Lowest offline accuracy ("LQ" vehicle).
    #[default]
    Lowest,
    /// Highest offline accuracy ("HQ" vehicle).
    Highest,
    /// A fixed profile position.
    Index(usize),
}

/// Unknown keys are rejected by the flattened `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    #[serde(flatten)]
    pub kind: ClassifierKind,
    /// Overrides the accuracy-derived view noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_noise: Option<f64>,
}

impl From<ClassifierKind> for ProfileSpec {
    fn from(kind: ClassifierKind) -> Self {
        Self {
            kind,
            view_noise: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub offline_size: usize,
    /// `None` uses 20% of the dataset.
    pub test_size: Option<usize>,
    pub profiles: Vec<ProfileSpec>,
    pub ego: EgoChoice,
    /// Number of cooperating neighbors `J`.
    pub neighbors: usize,
    pub integration: IntegrationParams,
    pub delta_max: f64,
    /// Default view noise is `view_noise_scale * (1 - A_j)` feature std devs.
    pub view_noise_scale: f64,
    /// View noise added per time unit of observation age.
    pub staleness_noise: f64,
    pub alpha: f64,
    /// `None` allows as many steps as there are candidates.
    pub max_steps: Option<usize>,
    pub load: LoadModel,
    /// Pool events per run; `None` uses one per online-pool sample.
    pub events: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            offline_size: 100,
            test_size: None,
            profiles: ClassifierKind::default_profiles()
                .into_iter()
                .map(Into::into)
                .collect(),
            ego: EgoChoice::Lowest,
            neighbors: 4,
            integration: IntegrationParams::default(),
            delta_max: 2.0,
            view_noise_scale: 1.0,
            staleness_noise: 0.6,
            alpha: 0.95,
            max_steps: None,
            load: LoadModel::default(),
            events: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.offline_size < 2 {
            return Err(validation("offline_size must be >= 2"));
        }
        if self.test_size == Some(0) {
            return Err(validation("test_size must be >= 1"));
        }
        if self.profiles.is_empty() {
            return Err(validation("profiles must not be empty"));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            p.kind
                .validate()
                .map_err(|e| validation(format!("profiles[{i}]: {e}")))?;
            if p.view_noise.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
                return Err(validation(format!("profiles[{i}].view_noise must be >= 0")));
            }
        }
        if let EgoChoice::Index(i) = self.ego {
            if i >= self.profiles.len() {
                return Err(validation(format!("ego index {i} out of range")));
            }
        }
        if self.neighbors > self.profiles.len() - 1 {
            return Err(validation(format!(
                "neighbors = {} but only {} non-ego profiles exist",
                self.neighbors,
                self.profiles.len() - 1
            )));
        }
        if !(self.integration.decay.is_finite() && self.integration.decay > 0.0) {
            return Err(validation("decay must be > 0"));
        }
        if !(self.delta_max.is_finite() && self.delta_max >= 0.0) {
            return Err(validation("delta_max must be >= 0"));
        }
        if !(self.view_noise_scale.is_finite() && self.view_noise_scale >= 0.0) {
            return Err(validation("view_noise_scale must be >= 0"));
        }
        if !(self.staleness_noise.is_finite() && self.staleness_noise >= 0.0) {
            return Err(validation("staleness_noise must be >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(validation("alpha ∈ (0, 1]"));
        }
        if self.max_steps == Some(0) {
            return Err(validation("max_steps must be >= 1"));
        }
        self.load.validate()
    }

    pub fn resolved_test_size(&self, dataset_len: usize) -> usize {
        self.test_size.unwrap_or_else(|| (dataset_len / 5).max(1))
    }
}

/// Everything about a run that does not depend on mode, method or policy.
#[derive(Clone, Debug)]
pub struct PreparedRun<'a> {
    pub seed: u64,
    pub dataset: &'a Dataset,
    pub partition: Partition,
    /// All trained profiles in configuration order.
    pub profiles: Vec<LabelerProfile>,
    pub ego_profile: usize,
    pub topology: FleetTopology,
    pub config: ExperimentConfig,
    offline: TrainingSet,
    test_set: Vec<(FeatureVector, Label)>,
    ego_train_seed: u64,
}

fn profile_seed(seed: u64, index: usize) -> u64 {
    mix(seed ^ mix(0x5EED_0000 + index as u64))
}

pub fn prepare<'a>(
    config: &ExperimentConfig,
    dataset: &'a Dataset,
    seed: u64,
) -> Result<PreparedRun<'a>> {
    config.validate()?;
    let test_size = config.resolved_test_size(dataset.len());
    let partition = partition(dataset, config.offline_size, test_size, seed)?;
    let offline_pairs = dataset.subset(&partition.offline);
    let feature_scale = dataset.feature_std(&partition.offline);

    let mut profiles = config
        .profiles
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            LabelerProfile::build(
                VehicleId(0),
                spec.kind.clone(),
                &offline_pairs,
                profile_seed(seed, i),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    for (p, spec) in profiles.iter_mut().zip(&config.profiles) {
        p.view_noise = spec
            .view_noise
            .unwrap_or(config.view_noise_scale * (1.0 - p.offline_accuracy));
    }

    let ego_profile = match config.ego {
        EgoChoice::Index(i) => i,
        EgoChoice::Lowest => (0..profiles.len()).fold(0, |b, i| {
            if profiles[i].offline_accuracy < profiles[b].offline_accuracy {
                i
            } else {
                b
            }
        }),
        EgoChoice::Highest => (0..profiles.len()).fold(0, |b, i| {
            if profiles[i].offline_accuracy > profiles[b].offline_accuracy {
                i
            } else {
                b
            }
        }),
    };
    let ego = LabelerProfile {
        id: VehicleId::EGO,
        ..profiles[ego_profile].clone()
    };
    let neighbors: Vec<LabelerProfile> = (0..profiles.len())
        .filter(|&i| i != ego_profile)
        .take(config.neighbors)
        .enumerate()
        .map(|(j, i)| LabelerProfile {
            id: VehicleId(j as u32 + 1),
            ..profiles[i].clone()
        })
        .collect();

    let num_events = config
        .events
        .unwrap_or(partition.online_pool.len())
        .min(partition.online_pool.len());
    let mut topology = build_topology(
        ego,
        neighbors,
        num_events + partition.test.len(),
        config.delta_max,
        feature_scale,
        seed,
    )?;
    topology.staleness_noise = config.staleness_noise;

    // Offline history precedes the online timeline.
    let base = partition
        .offline
        .iter()
        .enumerate()
        .map(|(m, &i)| Sample {
            data: dataset.features()[i].clone(),
            label: dataset.labels()[i],
            time: Timestamp::new(-(m as f64) - 1.0).expect("finite"),
            source: VehicleId::EGO,
        })
        .collect();
    let offline = TrainingSet::new(base)?;
    let test_set = dataset.subset(&partition.test);

    Ok(PreparedRun {
        seed,
        dataset,
        ego_train_seed: profile_seed(seed, ego_profile),
        partition,
        profiles,
        ego_profile,
        topology,
        config: config.clone(),
        offline,
        test_set,
    })
}

impl PreparedRun<'_> {
    pub fn num_events(&self) -> usize {
        self.topology.schedule.len() - self.partition.test.len()
    }

    pub fn test_set(&self) -> &[(FeatureVector, Label)] {
        &self.test_set
    }

    fn test_segment(&self, k: usize) -> SegmentId {
        SegmentId((self.num_events() + k) as u32)
    }

    /// One cooperation event per pool sample, in pool order.
    pub fn pool_events(&self, mode: Mode) -> Result<Vec<CooperationEvent>> {
        self.partition
            .online_pool
            .iter()
            .take(self.num_events())
            .enumerate()
            .map(|(k, &i)| {
                let (x, y) = self.dataset.get(i);
                generate_event(&self.topology, (x, y), SegmentId(k as u32), mode)
            })
            .collect()
    }

    /// Labeling accuracy of an integration method over the test events.
    pub fn labeling_accuracy(&self, mode: Mode, method: IntegrationMethod) -> Result<f64> {
        let mut aggregates = Vec::with_capacity(self.partition.test.len());
        let mut truth = Vec::with_capacity(self.partition.test.len());
        for (k, &i) in self.partition.test.iter().enumerate() {
            let (x, y) = self.dataset.get(i);
            let event = generate_event(&self.topology, (x, y), self.test_segment(k), mode)?;
            let contribs = contributions(&event, &self.topology);
            let (r, _) = integrate(
                method,
                &self.config.integration,
                &contribs,
                event.ego_sample.time,
            )?;
            aggregates.push(r.label);
            truth.push(event.ground_truth);
        }
        labeling_accuracy(&aggregates, &truth)
    }

    /// Runs one (mode, method, policy) cell and reports one row per step.
    pub fn run(
        &self,
        mode: Mode,
        method: IntegrationMethod,
        policy: SelectionPolicy,
    ) -> Result<RunMetrics> {
        let la = self.labeling_accuracy(mode, method)?;
        let events = self.pool_events(mode)?;
        let bytes: Vec<u64> = events
            .iter()
            .map(|e| account_load(e, &self.config.load))
            .collect();
        let candidates = events
            .iter()
            .map(|e| aggregate_event(e, &self.topology, method, &self.config.integration))
            .collect::<Result<Vec<_>>>()?;

        let row = |step: usize, accuracy: f64, cum_bytes: u64| MetricsRow {
            step,
            online_size: step,
            mode,
            method,
            policy,
            seed: self.seed,
            labeling_accuracy: la,
            classification_accuracy: accuracy,
            cum_bytes,
        };

        if candidates.is_empty() {
            let initial =
                crate::classifiers::measure_accuracy(&self.topology.ego.model, &self.test_set)?;
            return Ok(RunMetrics {
                rows: vec![row(0, initial, 0)],
                n_star: 0,
                target_met: false,
            });
        }

        let pool = CandidatePool::new(candidates, self.dataset.num_classes())?;
        let learner = Learner {
            kind: &self.topology.ego.kind,
            training: self.offline.clone(),
            test_set: &self.test_set,
            seed: self.ego_train_seed,
        };
        let stop = StopRule {
            alpha: self.config.alpha,
            max_steps: self.config.max_steps.unwrap_or(pool.len()),
        };
        let outcome = run_policy(&pool, policy, learner, stop, mix(self.seed ^ 0xA5A5))?;

        let mut rows = Vec::with_capacity(outcome.n_star + 1);
        rows.push(row(0, outcome.initial_accuracy, 0));
        let mut cum = 0u64;
        for (k, (&c, &acc)) in outcome.chosen.iter().zip(&outcome.accuracies).enumerate() {
            cum += bytes[c];
            rows.push(row(k + 1, acc, cum));
        }
        let metrics = RunMetrics {
            rows,
            n_star: outcome.n_star,
            target_met: outcome.target_met,
        };
        metrics.check()?;
        Ok(metrics)
    }
}

/// Convenience wrapper: prepare and run a single cell.
pub fn run_experiment(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    mode: Mode,
    method: IntegrationMethod,
    policy: SelectionPolicy,
) -> Result<RunMetrics> {
    prepare(config, dataset, seed)?.run(mode, method, policy)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Aggregated samples in the online training set.
    pub online_size: usize,
    pub mode: Mode,
    pub method: IntegrationMethod,
    pub policy: SelectionPolicy,
    pub seed: u64,
    pub labeling_accuracy: f64,
    pub classification_accuracy: f64,
    pub cum_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    /// Row 0 is the offline baseline.
    pub rows: Vec<MetricsRow>,
    pub n_star: usize,
    pub target_met: bool,
}

impl RunMetrics {
    fn check(&self) -> Result<()> {
        for w in self.rows.windows(2) {
            if w[1].step <= w[0].step || w[1].cum_bytes < w[0].cum_bytes {
                return Err(Error::Invariant("metrics rows out of order".into()));
            }
        }
        if self.rows.len() != self.n_star + 1 {
            return Err(Error::Invariant(
                "one row per selection step expected".into(),
            ));
        }
        Ok(())
    }

    /// Accuracy after `online_size` additions; runs that stopped earlier
    /// keep their final accuracy.
    pub fn accuracy_at(&self, online_size: usize) -> f64 {
        self.rows
            .iter()
            .take_while(|r| r.online_size <= online_size)
            .last()
            .map_or(0.0, |r| r.classification_accuracy)
    }

    pub fn final_row(&self) -> &MetricsRow {
        self.rows.last().expect("baseline row always present")
    }
}
