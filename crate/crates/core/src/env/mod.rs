//! Partially observable link-selection environment.
//!
//! Each step the controller picks a non-empty subset of the four links. The
//! selected links aggregate capacity, race for the lowest latency (packet
//! duplication) and add up their power cost. Only the links that were
//! selected are visible in the next observation.

mod toy;

pub use toy::ToyMdp;

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    default_link_table, draw_los, link_metrics, LinkKind, LinkMetrics, LinkParams, PerLink, ServiceModel,
};
use crate::error::{Error, Result};
use crate::geometry::{advance_mobility, Layout, MobilityConfig, WorldState};
use crate::rng::SimRng;

pub const NUM_LINKS: usize = 4;
pub const NUM_ACTIONS: usize = 15;
/// 4 features per link plus the previous-action one-hot.
pub const OBSERVATION_DIM: usize = NUM_LINKS * 4 + NUM_ACTIONS;
pub const EPISODE_LENGTH: usize = 50;
/// SNR is divided by this before it enters the observation, then clamped.
pub const SNR_FEATURE_SCALE_DB: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrafficClass {
    #[serde(rename = "eMBB", alias = "embb")]
    Embb,
    #[serde(rename = "HRLLC", alias = "hrllc")]
    Hrllc,
    #[serde(rename = "mMTC", alias = "mmtc")]
    Mmtc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosRequirement {
    pub min_capacity_bps: f64,
    pub max_latency_s: f64,
    pub max_power_w: f64,
    pub traffic_class: TrafficClass,
}

impl QosRequirement {
    pub fn preset(class: TrafficClass) -> Self {
        let (min_capacity_bps, max_latency_s) = match class {
            TrafficClass::Embb => (100e6, 10e-3),
            TrafficClass::Hrllc => (10e6, 2e-3),
            TrafficClass::Mmtc => (1e6, 100e-3),
        };
        Self {
            min_capacity_bps,
            max_latency_s,
            max_power_w: 14.0,
            traffic_class: class,
        }
    }

    /// Latency reported for a link that carries nothing.
    pub fn unavailable_latency(&self) -> f64 {
        self.max_latency_s * 10.0
    }

    pub fn validate(&self) -> Result<()> {
        if [self.min_capacity_bps, self.max_latency_s, self.max_power_w]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config("QoS thresholds must be positive".into()))
        }
    }
}

impl Default for QosRequirement {
    fn default() -> Self {
        Self::preset(TrafficClass::Embb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_capacity: f64,
    pub w_latency: f64,
    pub w_power: f64,
    pub capacity_norm_bps: f64,
    pub latency_norm_s: f64,
    pub power_norm_w: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_capacity: 1.0,
            w_latency: 0.2,
            w_power: 0.05,
            capacity_norm_bps: 1e9,
            latency_norm_s: 10e-3,
            power_norm_w: 14.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_capacity, self.w_latency, self.w_power];
        let n = [self.capacity_norm_bps, self.latency_norm_s, self.power_norm_w];
        if w.iter().all(|v| v.is_finite() && *v >= 0.0) && n.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config("reward weights must be nonnegative and norms positive".into()))
        }
    }
}

pub fn compute_reward(capacity_bps: f64, latency_s: f64, power_w: f64, w: &RewardWeights) -> f64 {
    w.w_capacity * (capacity_bps / w.capacity_norm_bps)
        - w.w_latency * (latency_s / w.latency_norm_s)
        - w.w_power * (power_w / w.power_norm_w)
}

/// A non-empty subset of links; `index = bitmask - 1`, bit `k` is
/// `LinkKind::ALL[k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionIndex(u8);

impl ActionIndex {
    pub const BS_ONLY: ActionIndex = ActionIndex(0);
    pub const ALL_LINKS: ActionIndex = ActionIndex(14);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_ACTIONS {
            Ok(ActionIndex(index as u8))
        } else {
            Err(Error::InvalidAction(index))
        }
    }

    pub fn from_bitmask(mask: u8) -> Result<Self> {
        if (1..=15).contains(&mask) {
            Ok(ActionIndex(mask - 1))
        } else {
            Err(Error::InvalidAction(usize::from(mask).wrapping_sub(1)))
        }
    }

    pub fn singleton(kind: LinkKind) -> Self {
        ActionIndex((1u8 << kind.index()) - 1)
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn bitmask(self) -> u8 {
        self.0 + 1
    }

    pub fn contains(self, kind: LinkKind) -> bool {
        self.bitmask() & (1 << kind.index()) != 0
    }

    pub fn links(self) -> impl Iterator<Item = LinkKind> {
        LinkKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    pub fn len(self) -> usize {
        self.bitmask().count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

impl std::fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<_> = self.links().map(LinkKind::name).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// All 15 actions in index order.
pub fn enumerate_actions() -> [ActionIndex; NUM_ACTIONS] {
    std::array::from_fn(|i| ActionIndex(i as u8))
}

/// Per-link availability: `+1` meets the QoS share, `-1` does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStateVector(pub [i8; NUM_LINKS]);

impl LinkStateVector {
    pub fn is_available(&self, kind: LinkKind) -> bool {
        self.0[kind.index()] > 0
    }
}

pub fn availability_flags(metrics: &PerLink<LinkMetrics>, qos: &QosRequirement) -> LinkStateVector {
    let share = qos.min_capacity_bps / NUM_LINKS as f64;
    LinkStateVector(metrics.0.map(|m| {
        if m.capacity_bps >= share && m.latency_s <= qos.max_latency_s && m.power_w <= qos.max_power_w {
            1
        } else {
            -1
        }
    }))
}

/// Aggregate capacity, latency and power of a subset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Kpi {
    pub capacity_bps: f64,
    pub latency_s: f64,
    pub power_w: f64,
}

pub fn aggregate(metrics: &PerLink<LinkMetrics>, action: ActionIndex) -> Kpi {
    action.links().fold(
        Kpi {
            capacity_bps: 0.0,
            latency_s: f64::INFINITY,
            power_w: 0.0,
        },
        |acc, k| {
            let m = &metrics[k];
            Kpi {
                capacity_bps: acc.capacity_bps + m.capacity_bps,
                latency_s: acc.latency_s.min(m.latency_s),
                power_w: acc.power_w + m.power_w,
            }
        },
    )
}

/// Exhaustive search over all 15 subsets for a fixed set of link metrics.
/// Ties go to the lowest index.
pub fn best_action(metrics: &PerLink<LinkMetrics>, weights: &RewardWeights) -> (ActionIndex, f64) {
    let mut best = (ActionIndex::BS_ONLY, f64::NEG_INFINITY);
    for a in enumerate_actions() {
        let k = aggregate(metrics, a);
        let r = compute_reward(k.capacity_bps, k.latency_s, k.power_w, weights);
        if r > best.1 {
            best = (a, r);
        }
    }
    best
}

/// Fixed-length feature vector seen by every policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(features: Vec<f64>) -> Self {
        Observation(features)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Observation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Offsets into a link-selection observation.
pub mod features {
    use crate::channel::LinkKind;

    pub const SELECTED: usize = 0;
    pub const SNR: usize = 1;
    pub const LOAD: usize = 2;
    pub const AVAILABLE: usize = 3;
    pub const PREV_ACTION: usize = 16;

    pub fn link(kind: LinkKind, feature: usize) -> usize {
        kind.index() * 4 + feature
    }
}

pub fn encode_observation(
    metrics: &PerLink<LinkMetrics>,
    flags: &LinkStateVector,
    previous: ActionIndex,
) -> Observation {
    let mut v = vec![0.0; OBSERVATION_DIM];
    for kind in previous.links() {
        let m = &metrics[kind];
        v[features::link(kind, features::SELECTED)] = 1.0;
        v[features::link(kind, features::SNR)] = (m.snr_db / SNR_FEATURE_SCALE_DB).clamp(-1.0, 1.0);
        v[features::link(kind, features::LOAD)] = m.load.clamp(0.0, 1.0);
        v[features::link(kind, features::AVAILABLE)] = f64::from(flags.0[kind.index()]);
    }
    v[features::PREV_ACTION + previous.index()] = 1.0;
    Observation(v)
}

/// Result of one environment step as seen by a learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub kpi: Kpi,
}

/// Discrete-action episodic environment driven by the learners.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Start a new episode.
    fn reset(&mut self) -> Observation;
    fn step(&mut self, action: usize) -> Result<Step>;
}

/// Reflected random walk of the per-platform load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadProcess {
    pub initial_max: f64,
    pub step: f64,
    pub max: f64,
}

impl Default for LoadProcess {
    fn default() -> Self {
        Self {
            initial_max: 0.5,
            step: 0.05,
            max: 0.8,
        }
    }
}

impl LoadProcess {
    pub fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> PerLink<f64> {
        PerLink::from_fn(|_| rng.gen_range(0.0..self.initial_max))
    }

    pub fn advance<R: Rng + ?Sized>(&self, loads: &PerLink<f64>, rng: &mut R) -> PerLink<f64> {
        PerLink::from_fn(|k| (loads[k] + rng.gen_range(-self.step..=self.step)).clamp(0.0, self.max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub mobility: MobilityConfig,
    pub layout: Layout,
    pub links: PerLink<LinkParams>,
    pub qos: QosRequirement,
    pub weights: RewardWeights,
    pub loads: LoadProcess,
    pub packet_bits: f64,
    pub episode_length: usize,
    /// Freeze world, loads and LOS draws at the first reset (bandit variant).
    pub frozen: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            mobility: MobilityConfig::default(),
            layout: Layout::default(),
            links: default_link_table(),
            qos: QosRequirement::default(),
            weights: RewardWeights::default(),
            loads: LoadProcess::default(),
            packet_bits: 12_000.0,
            episode_length: EPISODE_LENGTH,
            frozen: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.mobility.validate()?;
        self.layout.validate()?;
        self.qos.validate()?;
        self.weights.validate()?;
        for (_, p) in self.links.iter() {
            p.validate()?;
        }
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be at least 1".into()));
        }
        if !(self.packet_bits > 0.0) {
            return Err(Error::Config("packet_bits must be positive".into()));
        }
        Ok(())
    }

    pub fn service_model(&self) -> ServiceModel {
        ServiceModel {
            packet_bits: self.packet_bits,
            unavailable_latency_s: self.qos.unavailable_latency(),
        }
    }
}

/// Everything an environment step produces, including the hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub action: ActionIndex,
    pub reward: f64,
    pub capacity_bps: f64,
    pub latency_s: f64,
    pub power_w: f64,
    /// Ground-truth availability; not part of the observation.
    pub state_vector: LinkStateVector,
    pub metrics: PerLink<LinkMetrics>,
    pub done: bool,
}

#[derive(Debug, Clone)]
struct Snapshot {
    world: WorldState,
    loads: PerLink<f64>,
    los: PerLink<bool>,
}

/// The space-air-ground link-selection environment.
#[derive(Debug, Clone)]
pub struct SaginEnv {
    cfg: EnvConfig,
    rng: SimRng,
    world: WorldState,
    loads: PerLink<f64>,
    metrics: PerLink<LinkMetrics>,
    previous: ActionIndex,
    step_in_episode: usize,
    frozen: Option<Snapshot>,
}

impl SaginEnv {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::rng::stream(seed, "env");
        let world = WorldState::initial(&cfg.layout, &cfg.mobility, &mut rng);
        let loads = cfg.loads.initial(&mut rng);
        let los = draw_los(&world, &mut rng);
        let metrics = link_metrics(&world, &cfg.links, &loads, &los, &cfg.service_model());
        let frozen = cfg.frozen.then(|| Snapshot {
            world: world.clone(),
            loads,
            los,
        });
        Ok(Self {
            cfg,
            rng,
            world,
            loads,
            metrics,
            previous: ActionIndex::BS_ONLY,
            step_in_episode: 0,
            frozen,
        })
    }

    /// Seeded construction followed by a reset.
    pub fn with_seed(cfg: EnvConfig, seed: u64) -> Result<(Self, Observation)> {
        let mut env = Self::new(cfg, seed)?;
        let obs = env.reset();
        Ok((env, obs))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn current_metrics(&self) -> &PerLink<LinkMetrics> {
        &self.metrics
    }

    pub fn step_in_episode(&self) -> usize {
        self.step_in_episode
    }

    /// Start a new episode. In frozen mode the snapshot is kept.
    pub fn reset(&mut self) -> Observation {
        let service = self.cfg.service_model();
        if let Some(snap) = &self.frozen {
            self.world = snap.world.clone();
            self.loads = snap.loads;
            self.metrics = link_metrics(&snap.world, &self.cfg.links, &snap.loads, &snap.los, &service);
        } else {
            self.world = WorldState::initial(&self.cfg.layout, &self.cfg.mobility, &mut self.rng);
            self.loads = self.cfg.loads.initial(&mut self.rng);
            let los = draw_los(&self.world, &mut self.rng);
            self.metrics = link_metrics(&self.world, &self.cfg.links, &self.loads, &los, &service);
        }
        self.previous = ActionIndex::BS_ONLY;
        self.step_in_episode = 0;
        let flags = availability_flags(&self.metrics, &self.cfg.qos);
        encode_observation(&self.metrics, &flags, self.previous)
    }

    /// Advance the world, evaluate links and apply `action`.
    pub fn step_action(&mut self, action: ActionIndex) -> StepOutcome {
        if self.frozen.is_none() {
            self.world = advance_mobility(&self.world, &self.cfg.layout, &self.cfg.mobility, &mut self.rng);
            self.loads = self.cfg.loads.advance(&self.loads, &mut self.rng);
            let los = draw_los(&self.world, &mut self.rng);
            self.metrics = link_metrics(&self.world, &self.cfg.links, &self.loads, &los, &self.cfg.service_model());
        }
        let kpi = aggregate(&self.metrics, action);
        let reward = compute_reward(kpi.capacity_bps, kpi.latency_s, kpi.power_w, &self.cfg.weights);
        let flags = availability_flags(&self.metrics, &self.cfg.qos);
        self.previous = action;
        self.step_in_episode += 1;
        StepOutcome {
            observation: encode_observation(&self.metrics, &flags, action),
            action,
            reward,
            capacity_bps: kpi.capacity_bps,
            latency_s: kpi.latency_s,
            power_w: kpi.power_w,
            state_vector: flags,
            metrics: self.metrics,
            done: self.step_in_episode >= self.cfg.episode_length,
        }
    }

    /// Validating variant of [`SaginEnv::step_action`]; a bad index leaves
    /// the environment untouched.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let action = ActionIndex::new(action)?;
        Ok(self.step_action(action))
    }

    /// Best subset for the frozen snapshot, by exhaustive search.
    pub fn frozen_best_action(&self) -> Option<(ActionIndex, f64)> {
        self.frozen.as_ref().map(|_| best_action(&self.metrics, &self.cfg.weights))
    }
}

impl Environment for SaginEnv {
    fn observation_dim(&self) -> usize {
        OBSERVATION_DIM
    }

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn reset(&mut self) -> Observation {
        SaginEnv::reset(self)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        let out = SaginEnv::step(self, action)?;
        Ok(Step {
            observation: out.observation,
            reward: out.reward,
            done: out.done,
            kpi: Kpi {
                capacity_bps: out.capacity_bps,
                latency_s: out.latency_s,
                power_w: out.power_w,
            },
        })
    }
}
