//! Comparison policies and the common policy interface.

mod dqn;
mod ppo;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dqn::{epsilon_at, Dqn, DqnConfig};
pub use ppo::{clipped_surrogate_grad, gae, normalize_advantages, Ppo, PpoConfig};

use crate::agent::{ActionMode, ActorCritic, AgentConfig, Transition};
use crate::channel::LinkKind;
use crate::checkpoint::Checkpoint;
use crate::env::{features, ActionIndex, NUM_LINKS, SNR_FEATURE_SCALE_DB};
use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    RoundRobin,
    GreedySnr,
    BsOnly,
    Dqn,
    Ppo,
    Proposed,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Random,
        PolicyKind::RoundRobin,
        PolicyKind::GreedySnr,
        PolicyKind::BsOnly,
        PolicyKind::Dqn,
        PolicyKind::Ppo,
        PolicyKind::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::GreedySnr => "greedy_snr",
            PolicyKind::BsOnly => "bs_only",
            PolicyKind::Dqn => "dqn",
            PolicyKind::Ppo => "ppo",
            PolicyKind::Proposed => "proposed",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(self, PolicyKind::Dqn | PolicyKind::Ppo | PolicyKind::Proposed)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "greedy" && *k == PolicyKind::GreedySnr))
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

/// A decision rule driven by the experiment loop.
pub trait Policy {
    fn kind(&self) -> PolicyKind;

    /// Called before each episode's reset.
    fn begin_episode(&mut self, _episode: usize, _total_episodes: usize) {}

    fn act(&mut self, obs: &[f64], mode: ActionMode) -> Result<usize>;

    /// Feed back the transition produced by the last action.
    fn observe(&mut self, _t: Transition) -> Result<()> {
        Ok(())
    }

    /// Trained parameters, for learners.
    fn checkpoint(&self, _seed: u64, _episodes: usize) -> Result<Option<Checkpoint>> {
        Ok(None)
    }
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R) -> ActionIndex {
    ActionIndex::new(rng.gen_range(0..crate::env::NUM_ACTIONS)).expect("index in range")
}

pub fn round_robin_policy(step_index: usize) -> ActionIndex {
    ActionIndex::singleton(LinkKind::ALL[step_index % NUM_LINKS])
}

/// Singleton of the highest-SNR link; ties go to the lowest link index.
pub fn greedy_snr_policy(snr_db: &[f64; NUM_LINKS]) -> ActionIndex {
    let mut best = 0;
    for i in 1..NUM_LINKS {
        if snr_db[i] > snr_db[best] {
            best = i;
        }
    }
    ActionIndex::singleton(LinkKind::ALL[best])
}

pub fn bs_only_policy() -> ActionIndex {
    ActionIndex::BS_ONLY
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: SimRng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream(seed, "random/act"),
        }
    }
}

impl Policy for RandomPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
    }

    fn act(&mut self, _obs: &[f64], _mode: ActionMode) -> Result<usize> {
        Ok(random_policy(&mut self.rng).index())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    step: usize,
}

impl Policy for RoundRobin {
    fn kind(&self) -> PolicyKind {
        PolicyKind::RoundRobin
    }

    fn begin_episode(&mut self, _episode: usize, _total: usize) {
        self.step = 0;
    }

    fn act(&mut self, _obs: &[f64], _mode: ActionMode) -> Result<usize> {
        let a = round_robin_policy(self.step);
        self.step += 1;
        Ok(a.index())
    }
}

/// Greedy-SNR with per-episode memory of the last SNR seen on each link.
///
/// Unseen links start at an optimistic estimate, so each is probed once
/// before the policy settles.
#[derive(Debug, Clone)]
pub struct GreedySnr {
    estimates: [f64; NUM_LINKS],
}

impl GreedySnr {
    pub const OPTIMISTIC_SNR_DB: f64 = 30.0;

    pub fn new() -> Self {
        Self {
            estimates: [Self::OPTIMISTIC_SNR_DB; NUM_LINKS],
        }
    }

    pub fn estimates(&self) -> &[f64; NUM_LINKS] {
        &self.estimates
    }

    fn absorb(&mut self, obs: &[f64]) {
        for kind in LinkKind::ALL {
            if obs[features::link(kind, features::SELECTED)] > 0.5 {
                self.estimates[kind.index()] = obs[features::link(kind, features::SNR)] * SNR_FEATURE_SCALE_DB;
            }
        }
    }
}

impl Default for GreedySnr {
    fn default() -> Self {
        Self::new()
    }
}

impl Policy for GreedySnr {
    fn kind(&self) -> PolicyKind {
        PolicyKind::GreedySnr
    }

    fn begin_episode(&mut self, _episode: usize, _total: usize) {
        self.estimates = [Self::OPTIMISTIC_SNR_DB; NUM_LINKS];
    }

    fn act(&mut self, obs: &[f64], _mode: ActionMode) -> Result<usize> {
        if obs.len() < features::PREV_ACTION {
            return Err(Error::Shape(format!(
                "greedy-SNR needs a link-selection observation, got length {}",
                obs.len()
            )));
        }
        self.absorb(obs);
        Ok(greedy_snr_policy(&self.estimates).index())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BsOnly;

impl Policy for BsOnly {
    fn kind(&self) -> PolicyKind {
        PolicyKind::BsOnly
    }

    fn act(&mut self, _obs: &[f64], _mode: ActionMode) -> Result<usize> {
        Ok(bs_only_policy().index())
    }
}

impl Policy for ActorCritic {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Proposed
    }

    fn act(&mut self, obs: &[f64], mode: ActionMode) -> Result<usize> {
        ActorCritic::act(self, obs, mode)
    }

    fn observe(&mut self, t: Transition) -> Result<()> {
        self.remember(t);
        if self.is_warmed_up() {
            self.learn()?;
        }
        Ok(())
    }

    fn checkpoint(&self, seed: u64, episodes: usize) -> Result<Option<Checkpoint>> {
        self.to_checkpoint(seed, episodes).map(Some)
    }
}

/// Hyperparameters of every learner, as read from an experiment config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfigs {
    pub proposed: AgentConfig,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
}

impl LearnerConfigs {
    pub fn validate(&self) -> Result<()> {
        self.proposed.validate()?;
        self.dqn.validate()?;
        self.ppo.validate()
    }
}

/// Instantiate a policy; all randomness is derived from `seed`.
pub fn build_policy(
    kind: PolicyKind,
    learners: &LearnerConfigs,
    obs_dim: usize,
    num_actions: usize,
    seed: u64,
) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
        PolicyKind::RoundRobin => Box::new(RoundRobin::default()),
        PolicyKind::GreedySnr => Box::new(GreedySnr::new()),
        PolicyKind::BsOnly => Box::new(BsOnly),
        PolicyKind::Dqn => Box::new(Dqn::new(obs_dim, num_actions, learners.dqn.clone(), seed)?),
        PolicyKind::Ppo => Box::new(Ppo::new(obs_dim, num_actions, learners.ppo.clone(), seed)?),
        PolicyKind::Proposed => Box::new(ActorCritic::new(obs_dim, num_actions, learners.proposed.clone(), seed)?),
    })
}

/// Rebuild a trained learner from its checkpoint.
pub fn policy_from_checkpoint(ckpt: &Checkpoint) -> Result<Box<dyn Policy>> {
    match ckpt.policy.parse::<PolicyKind>()? {
        PolicyKind::Proposed => Ok(Box::new(ActorCritic::from_checkpoint(ckpt)?)),
        PolicyKind::Dqn => Ok(Box::new(Dqn::from_checkpoint(ckpt)?)),
        PolicyKind::Ppo => Ok(Box::new(Ppo::from_checkpoint(ckpt)?)),
        other => Err(Error::Checkpoint(format!("policy `{other}` has no trainable parameters"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, SaginEnv, NUM_ACTIONS};

    #[test]
    fn names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert_eq!("Round-Robin".parse::<PolicyKind>().unwrap(), PolicyKind::RoundRobin);
        assert!(matches!("sarsa".parse::<PolicyKind>(), Err(Error::UnknownPolicy(_))));
    }

    #[test]
    fn random_policy_is_uniform() {
        let mut rng = stream(11, "uniform");
        let mut counts = [0usize; NUM_ACTIONS];
        let n = 100_000;
        for _ in 0..n {
            counts[random_policy(&mut rng).index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 15.0).abs() < 0.01);
        }
    }

    #[test]
    fn random_policy_is_seed_deterministic() {
        let draw = |seed| {
            let mut p = RandomPolicy::new(seed);
            (0..20).map(|_| p.act(&[], ActionMode::Sample).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn round_robin_cycles_singletons() {
        let expect = ["{BS}", "{UAV}", "{HAP}", "{LEO}", "{BS}"];
        for (i, e) in expect.iter().enumerate() {
            let a = round_robin_policy(i);
            assert_eq!(a.to_string(), *e);
            assert_eq!(a.len(), 1);
        }
    }

    #[test]
    fn greedy_snr_examples() {
        assert_eq!(greedy_snr_policy(&[10.0, 20.0, 15.0, 5.0]).to_string(), "{UAV}");
        assert_eq!(greedy_snr_policy(&[7.0; 4]), ActionIndex::BS_ONLY);
    }

    #[test]
    fn greedy_snr_matches_brute_force() {
        let mut rng = stream(12, "snr");
        for _ in 0..1000 {
            let snr: [f64; 4] = std::array::from_fn(|_| (rng.gen_range(-60..40) as f64) * 0.5);
            // Oracle: every singleton is scored, strict improvement keeps the earliest.
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, s) in snr.iter().enumerate() {
                if *s > best.0 {
                    best = (*s, i);
                }
            }
            assert_eq!(greedy_snr_policy(&snr), ActionIndex::singleton(LinkKind::ALL[best.1]));
        }
    }

    #[test]
    fn greedy_snr_probes_each_link_once() {
        let (mut env, mut obs) = SaginEnv::with_seed(EnvConfig::default(), 3).unwrap();
        let mut p = GreedySnr::new();
        let mut seen = Vec::new();
        for _ in 0..4 {
            let a = p.act(&obs, ActionMode::Greedy).unwrap();
            seen.push(a);
            obs = env.step(a).unwrap().observation;
        }
        p.act(&obs, ActionMode::Greedy).unwrap();
        // The reset observation already reveals BS, so probing starts at UAV.
        assert_eq!(&seen[..3], &[1, 3, 7]);
        assert!(p.estimates().iter().all(|s| *s < GreedySnr::OPTIMISTIC_SNR_DB));
    }

    #[test]
    fn bs_only_is_constant() {
        let mut p = BsOnly;
        for _ in 0..10 {
            assert_eq!(p.act(&[], ActionMode::Sample).unwrap(), 0);
        }
    }

    #[test]
    fn only_learners_checkpoint() {
        let cfgs = LearnerConfigs::default();
        for kind in PolicyKind::ALL {
            let p = build_policy(kind, &cfgs, 31, 15, 1).unwrap();
            assert_eq!(p.kind(), kind);
            assert_eq!(p.checkpoint(1, 0).unwrap().is_some(), kind.is_learning());
        }
    }

    #[test]
    fn learner_checkpoints_restore_greedy_behaviour() {
        let cfgs = LearnerConfigs::default();
        let (_, obs) = SaginEnv::with_seed(EnvConfig::default(), 4).unwrap();
        for kind in [PolicyKind::Proposed, PolicyKind::Dqn, PolicyKind::Ppo] {
            let mut p = build_policy(kind, &cfgs, 31, 15, 9).unwrap();
            let ckpt = p.checkpoint(9, 0).unwrap().unwrap();
            let mut buf = Vec::new();
            ckpt.write(&mut buf).unwrap();
            let mut q = policy_from_checkpoint(&Checkpoint::read(&buf[..]).unwrap()).unwrap();
            assert_eq!(
                p.act(&obs, ActionMode::Greedy).unwrap(),
                q.act(&obs, ActionMode::Greedy).unwrap()
            );
        }
    }
}
