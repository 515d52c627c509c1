//! Deep Q-learning with a hard-copied target network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyKind};
use crate::agent::{argmax, ActionMode, ReplayBuffer, Transition};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Head, Mlp};
use crate::rng::{stream, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub warmup: usize,
    /// Updates between hard copies into the target network.
    pub target_update_interval: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all episodes over which epsilon is annealed.
    pub epsilon_fraction: f64,
    pub hidden: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-3,
            replay_capacity: 10_000,
            batch_size: 64,
            warmup: 500,
            target_update_interval: 500,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.5,
            hidden: vec![64, 64],
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("dqn: gamma must be in (0, 1) and learning_rate > 0".into()));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size || self.warmup < self.batch_size {
            return Err(Error::Config(
                "dqn: need 0 < batch_size <= warmup and batch_size <= replay_capacity".into(),
            ));
        }
        if self.target_update_interval == 0 {
            return Err(Error::Config("dqn: target_update_interval must be at least 1".into()));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.epsilon_start) || !unit.contains(&self.epsilon_end) || !unit.contains(&self.epsilon_fraction)
        {
            return Err(Error::Config("dqn: epsilon settings must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Linear annealing from `epsilon_start` to `epsilon_end`, then flat.
pub fn epsilon_at(cfg: &DqnConfig, episode: usize, total_episodes: usize) -> f64 {
    let horizon = cfg.epsilon_fraction * total_episodes as f64;
    if horizon <= 0.0 {
        return cfg.epsilon_end;
    }
    let frac = (episode as f64 / horizon).min(1.0);
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

#[derive(Debug, Clone)]
pub struct Dqn {
    pub config: DqnConfig,
    pub q: Mlp,
    pub target: Mlp,
    opt: AdamState,
    replay: ReplayBuffer,
    act_rng: SimRng,
    replay_rng: SimRng,
    epsilon: f64,
    updates: u64,
}

impl Dqn {
    pub fn new(obs_dim: usize, num_actions: usize, config: DqnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![obs_dim];
        sizes.extend(&config.hidden);
        sizes.push(num_actions);
        let q = Mlp::new(&sizes, Head::Identity, &mut stream(seed, "dqn/init"))?;
        Ok(Self {
            opt: AdamState::new(&q, config.learning_rate),
            target: q.clone(),
            replay: ReplayBuffer::new(config.replay_capacity),
            act_rng: stream(seed, "dqn/act"),
            replay_rng: stream(seed, "dqn/replay"),
            epsilon: config.epsilon_start,
            updates: 0,
            config,
            q,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One gradient step on the squared max-bootstrap TD error; returns the loss.
    pub fn update(&mut self, batch: &[Transition]) -> Result<f64> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let n_act = self.q.output_dim();
        let obs: Vec<f64> = batch.iter().flat_map(|t| t.observation.iter().copied()).collect();
        let next: Vec<f64> = batch.iter().flat_map(|t| t.next_observation.iter().copied()).collect();
        let q_next = self.target.forward_batch(&next, b)?;
        let q = self.q.forward_batch(&obs, b)?;
        let mut grad = vec![0.0; b * n_act];
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            if t.action >= n_act {
                return Err(Error::InvalidAction(t.action));
            }
            let y = if t.done {
                t.reward
            } else {
                let max = q_next.output_row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                t.reward + self.config.gamma * max
            };
            let delta = y - q.output_row(i)[t.action];
            loss += delta * delta;
            grad[i * n_act + t.action] = -2.0 * delta / b as f64;
        }
        let grads = self.q.backward(&q, &grad)?;
        self.opt.step(&mut self.q, &grads)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_update_interval) {
            self.target = self.q.clone();
        }
        Ok(loss / b as f64)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: DqnConfig = serde_json::from_str(&ckpt.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let q = ckpt.net("q")?.clone();
        let mut dqn = Self::new(q.input_dim(), q.output_dim(), config, ckpt.seed)?;
        dqn.target = ckpt.net("target")?.clone();
        dqn.opt = AdamState::new(&q, dqn.config.learning_rate);
        dqn.q = q;
        dqn.epsilon = dqn.config.epsilon_end;
        Ok(dqn)
    }
}

impl Policy for Dqn {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Dqn
    }

    fn begin_episode(&mut self, episode: usize, total_episodes: usize) {
        self.epsilon = epsilon_at(&self.config, episode, total_episodes);
    }

    fn act(&mut self, obs: &[f64], mode: ActionMode) -> Result<usize> {
        let q = self.q.predict(obs)?;
        if mode == ActionMode::Sample && self.act_rng.gen::<f64>() < self.epsilon {
            return Ok(self.act_rng.gen_range(0..q.len()));
        }
        Ok(argmax(&q))
    }

    fn observe(&mut self, t: Transition) -> Result<()> {
        self.replay.push(t);
        if self.replay.len() >= self.config.warmup {
            let batch: Vec<Transition> = self
                .replay
                .sample(self.config.batch_size, &mut self.replay_rng)?
                .into_iter()
                .cloned()
                .collect();
            self.update(&batch)?;
        }
        Ok(())
    }

    fn checkpoint(&self, seed: u64, episodes: usize) -> Result<Option<Checkpoint>> {
        Ok(Some(Checkpoint {
            policy: PolicyKind::Dqn.name().into(),
            seed,
            episodes,
            config: serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
            nets: vec![("q".into(), self.q.clone()), ("target".into(), self.target.clone())],
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ToyMdp;

    #[test]
    fn epsilon_schedule() {
        let cfg = DqnConfig::default();
        assert_eq!(epsilon_at(&cfg, 0, 2000), 1.0);
        assert!((epsilon_at(&cfg, 500, 2000) - 0.525).abs() < 1e-12);
        assert!((epsilon_at(&cfg, 1000, 2000) - 0.05).abs() < 1e-12);
        assert!((epsilon_at(&cfg, 1999, 2000) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn greedy_on_optimal_q_table_is_optimal() {
        // One-hot inputs and a linear net make the weights a Q table.
        let cfg = DqnConfig {
            hidden: vec![],
            ..DqnConfig::default()
        };
        let mut dqn = Dqn::new(2, 2, cfg, 1).unwrap();
        dqn.set_epsilon(0.0);
        let q = ToyMdp::optimal_q(0.9);
        let table = vec![q[0][0], q[1][0], q[0][1], q[1][1], 0.0, 0.0];
        dqn.q = Mlp::from_params(&[2, 2], Head::Identity, table).unwrap();
        for s in 0..2 {
            assert_eq!(dqn.act(&ToyMdp::encode(s), ActionMode::Sample).unwrap(), 1);
        }
    }

    #[test]
    fn target_is_copied_on_schedule() {
        let cfg = DqnConfig {
            target_update_interval: 3,
            hidden: vec![4],
            ..DqnConfig::default()
        };
        let mut dqn = Dqn::new(2, 2, cfg, 2).unwrap();
        let t = Transition {
            observation: vec![1.0, 0.0],
            action: 1,
            reward: 1.0,
            next_observation: vec![0.0, 1.0],
            done: false,
        };
        let initial = dqn.target.params().to_vec();
        dqn.update(std::slice::from_ref(&t)).unwrap();
        dqn.update(std::slice::from_ref(&t)).unwrap();
        assert_eq!(dqn.target.params(), &initial[..]);
        dqn.update(&[t]).unwrap();
        assert_eq!(dqn.target.params(), dqn.q.params());
    }

    #[test]
    fn records_are_seed_deterministic() {
        let run = || {
            let mut env = ToyMdp::new(1);
            let cfg = DqnConfig {
                warmup: 64,
                ..DqnConfig::default()
            };
            let mut dqn = Dqn::new(2, 2, cfg, 5).unwrap();
            crate::harness::run_episodes(&mut env, &mut dqn, 15, 20, |_| {}).unwrap()
        };
        assert_eq!(run(), run());
    }
}
