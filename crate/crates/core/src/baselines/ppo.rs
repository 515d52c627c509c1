//! Proximal policy optimisation with a clipped surrogate and GAE.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyKind};
use crate::agent::{argmax, sample_categorical, ActionMode, Transition};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Head, Mlp};
use crate::rng::{stream, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub rollout: usize,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            epochs: 4,
            minibatch: 256,
            rollout: 2048,
            entropy_coef: 0.01,
            learning_rate: 3e-4,
            hidden: vec![64, 64],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("ppo: gamma must be in (0, 1) and gae_lambda in [0, 1]".into()));
        }
        if !(self.clip > 0.0) || !(self.learning_rate > 0.0) || !(self.entropy_coef >= 0.0) {
            return Err(Error::Config("ppo: clip and learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout < self.minibatch {
            return Err(Error::Config("ppo: need epochs >= 1 and 1 <= minibatch <= rollout".into()));
        }
        Ok(())
    }
}

/// Generalised advantage estimates and the matching value targets.
///
/// `dones[t]` cuts bootstrapping after step `t`; `last_value` bootstraps the
/// step after the final one.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shift to zero mean and scale to unit (population) variance in place.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Derivative of `min(r * A, clip(r, 1 - eps, 1 + eps) * A)` with respect to `r`.
pub fn clipped_surrogate_grad(ratio: f64, advantage: f64, clip: f64) -> f64 {
    if (advantage > 0.0 && ratio > 1.0 + clip) || (advantage < 0.0 && ratio < 1.0 - clip) {
        0.0
    } else {
        advantage
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    log_prob: f64,
    value: f64,
}

#[derive(Debug, Clone, Default)]
struct Rollout {
    obs: Vec<f64>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    last_next_obs: Vec<f64>,
}

impl Rollout {
    fn len(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Debug, Clone)]
pub struct Ppo {
    pub config: PpoConfig,
    pub actor: Mlp,
    pub value: Mlp,
    actor_opt: AdamState,
    value_opt: AdamState,
    act_rng: SimRng,
    shuffle_rng: SimRng,
    pending: Option<Pending>,
    rollout: Rollout,
    updates: u64,
}

impl Ppo {
    pub fn new(obs_dim: usize, num_actions: usize, config: PpoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = stream(seed, "ppo/init");
        let mut sizes = vec![obs_dim];
        sizes.extend(&config.hidden);
        sizes.push(num_actions);
        let mut actor = Mlp::new(&sizes, Head::Softmax, &mut init)?;
        actor.scale_output_layer(crate::agent::ACTOR_OUTPUT_INIT_SCALE);
        *sizes.last_mut().expect("non-empty") = 1;
        let value = Mlp::new(&sizes, Head::Identity, &mut init)?;
        Ok(Self {
            actor_opt: AdamState::new(&actor, config.learning_rate),
            value_opt: AdamState::new(&value, config.learning_rate),
            act_rng: stream(seed, "ppo/act"),
            shuffle_rng: stream(seed, "ppo/shuffle"),
            pending: None,
            rollout: Rollout::default(),
            updates: 0,
            config,
            actor,
            value,
        })
    }

    /// Minibatch gradient steps performed so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Gradient of the negated clipped objective (plus entropy bonus) with
    /// respect to the actor logits, for one minibatch.
    pub fn policy_logit_grad(
        probs: &[f64],
        actions: &[usize],
        old_log_probs: &[f64],
        advantages: &[f64],
        clip: f64,
        entropy_coef: f64,
    ) -> Vec<f64> {
        let b = actions.len();
        let n = probs.len() / b.max(1);
        let mut grad = vec![0.0; probs.len()];
        for i in 0..b {
            let p = &probs[i * n..(i + 1) * n];
            let a = actions[i];
            let ratio = (p[a].max(f64::MIN_POSITIVE).ln() - old_log_probs[i]).exp();
            let g = clipped_surrogate_grad(ratio, advantages[i], clip);
            let h: f64 = -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>();
            for j in 0..n {
                let dlogp = if j == a { 1.0 } else { 0.0 } - p[j];
                let dh = if p[j] > 0.0 { -p[j] * (p[j].ln() + h) } else { 0.0 };
                grad[i * n + j] = -(g * ratio * dlogp + entropy_coef * dh) / b as f64;
            }
        }
        grad
    }

    fn train_on_rollout(&mut self) -> Result<()> {
        let r = std::mem::take(&mut self.rollout);
        let n = r.len();
        let dim = self.actor.input_dim();
        let last_value = if *r.dones.last().unwrap_or(&true) {
            0.0
        } else {
            self.value.predict(&r.last_next_obs)?[0]
        };
        let (mut adv, returns) = gae(&r.rewards, &r.values, &r.dones, last_value, self.config.gamma, self.config.gae_lambda);
        normalize_advantages(&mut adv);

        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(self.config.minibatch) {
                let b = chunk.len();
                let obs: Vec<f64> = chunk.iter().flat_map(|&i| r.obs[i * dim..(i + 1) * dim].iter().copied()).collect();
                let actions: Vec<usize> = chunk.iter().map(|&i| r.actions[i]).collect();
                let old: Vec<f64> = chunk.iter().map(|&i| r.log_probs[i]).collect();
                let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();

                let pi = self.actor.forward_batch(&obs, b)?;
                let grad = Self::policy_logit_grad(pi.output(), &actions, &old, &a, self.config.clip, self.config.entropy_coef);
                let actor_grads = self.actor.backward_logits(&pi, &grad)?;

                let v = self.value.forward_batch(&obs, b)?;
                let vgrad: Vec<f64> = chunk
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| 2.0 * (v.output()[k] - returns[i]) / b as f64)
                    .collect();
                let value_grads = self.value.backward(&v, &vgrad)?;

                self.actor_opt.step(&mut self.actor, &actor_grads)?;
                self.value_opt.step(&mut self.value, &value_grads)?;
                self.updates += 1;
            }
        }
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: PpoConfig = serde_json::from_str(&ckpt.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let actor = ckpt.net("actor")?.clone();
        let value = ckpt.net("value")?.clone();
        let mut ppo = Self::new(actor.input_dim(), actor.output_dim(), config, ckpt.seed)?;
        ppo.actor_opt = AdamState::new(&actor, ppo.config.learning_rate);
        ppo.value_opt = AdamState::new(&value, ppo.config.learning_rate);
        ppo.actor = actor;
        ppo.value = value;
        Ok(ppo)
    }
}

impl Policy for Ppo {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Ppo
    }

    fn act(&mut self, obs: &[f64], mode: ActionMode) -> Result<usize> {
        let probs = self.actor.predict(obs)?;
        let action = match mode {
            ActionMode::Greedy => argmax(&probs),
            ActionMode::Sample => sample_categorical(&probs, &mut self.act_rng),
        };
        self.pending = match mode {
            ActionMode::Sample => Some(Pending {
                log_prob: probs[action].max(f64::MIN_POSITIVE).ln(),
                value: self.value.predict(obs)?[0],
            }),
            ActionMode::Greedy => None,
        };
        Ok(action)
    }

    fn observe(&mut self, t: Transition) -> Result<()> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidArgument("ppo: observe without a sampled action".into()))?;
        self.rollout.obs.extend_from_slice(&t.observation);
        self.rollout.actions.push(t.action);
        self.rollout.log_probs.push(pending.log_prob);
        self.rollout.values.push(pending.value);
        self.rollout.rewards.push(t.reward);
        self.rollout.dones.push(t.done);
        self.rollout.last_next_obs = t.next_observation;
        if self.rollout.len() >= self.config.rollout {
            self.train_on_rollout()?;
        }
        Ok(())
    }

    fn checkpoint(&self, seed: u64, episodes: usize) -> Result<Option<Checkpoint>> {
        Ok(Some(Checkpoint {
            policy: PolicyKind::Ppo.name().into(),
            seed,
            episodes,
            config: serde_json::to_string(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?,
            nets: vec![("actor".into(), self.actor.clone()), ("value".into(), self.value.clone())],
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ToyMdp;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn gae_with_zero_lambda_is_one_step_td() {
        let rewards = [1.0, 0.5, -0.2, 0.3];
        let values = [0.2, 0.4, 0.1, -0.3];
        let dones = [false, false, true, false];
        let (adv, ret) = gae(&rewards, &values, &dones, 0.7, 0.9, 0.0);
        let expect = [
            1.0 + 0.9 * 0.4 - 0.2,
            0.5 + 0.9 * 0.1 - 0.4,
            -0.2 - 0.1,
            0.3 + 0.9 * 0.7 + 0.3,
        ];
        for i in 0..4 {
            assert!((adv[i] - expect[i]).abs() < 1e-12);
            assert!((ret[i] - (expect[i] + values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_with_unit_lambda_is_monte_carlo() {
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.5, -1.0, 2.0];
        let dones = [false, false, true];
        let (_, ret) = gae(&rewards, &values, &dones, 9.0, 0.5, 1.0);
        assert!((ret[0] - (1.0 + 0.5 * 2.0 + 0.25 * 3.0)).abs() < 1e-12);
        assert!((ret[2] - 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalized_advantages_have_unit_moments(xs in prop::collection::vec(-100.0f64..100.0, 2..300)) {
            prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
            let mut a = xs.clone();
            normalize_advantages(&mut a);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn clip_region() {
        assert_eq!(clipped_surrogate_grad(1.0, 2.0, 0.2), 2.0);
        assert_eq!(clipped_surrogate_grad(1.3, 2.0, 0.2), 0.0);
        assert_eq!(clipped_surrogate_grad(1.3, -2.0, 0.2), -2.0);
        assert_eq!(clipped_surrogate_grad(0.7, -2.0, 0.2), 0.0);
        assert_eq!(clipped_surrogate_grad(0.7, 2.0, 0.2), 2.0);
    }

    #[test]
    fn unit_ratio_gives_plain_policy_gradient() {
        let mut rng = stream(3, "ppo");
        let n = 5;
        let b = 4;
        let logits: Vec<f64> = (0..n * b).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let probs = crate::nn::softmax_rows(&logits, n);
        let actions: Vec<usize> = (0..b).map(|_| rng.gen_range(0..n)).collect();
        let old: Vec<f64> = (0..b).map(|i| probs[i * n + actions[i]].ln()).collect();
        let adv: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Ppo::policy_logit_grad(&probs, &actions, &old, &adv, 0.2, 0.0);
        for i in 0..b {
            for j in 0..n {
                let onehot = if j == actions[i] { 1.0 } else { 0.0 };
                let plain = -adv[i] * (onehot - probs[i * n + j]) / b as f64;
                assert!((g[i * n + j] - plain).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trains_after_each_rollout() {
        let cfg = PpoConfig {
            rollout: 100,
            minibatch: 25,
            ..PpoConfig::default()
        };
        let mut ppo = Ppo::new(2, 2, cfg, 1).unwrap();
        let mut env = ToyMdp::new(1);
        crate::harness::run_episodes(&mut env, &mut ppo, 25, 10, |_| {}).unwrap();
        // 250 steps: two full rollouts of 4 epochs x 4 minibatches.
        assert_eq!(ppo.updates(), 2 * 4 * 4);
    }
}
