use rand::Rng;

use super::{Environment, Kpi, Observation, Step};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Two-state, two-action deterministic MDP used to sanity-check learners.
///
/// | state | action | next | reward |
/// |-------|--------|------|--------|
/// | 0     | 0      | 0    | 0.1    |
/// | 0     | 1      | 1    | 0.0    |
/// | 1     | 0      | 0    | 0.0    |
/// | 1     | 1      | 1    | 1.0    |
///
/// The task is continuing: `done` is never set, episodes end only by
/// truncation. Action 1 is optimal in both states for any discount above 0.1; a myopic
/// learner picks action 0 in state 0.
#[derive(Debug, Clone)]
pub struct ToyMdp {
    rng: SimRng,
    state: usize,
}

impl ToyMdp {
    pub const NEXT: [[usize; 2]; 2] = [[0, 1], [0, 1]];
    pub const REWARD: [[f64; 2]; 2] = [[0.1, 0.0], [0.0, 1.0]];

    pub fn new(seed: u64) -> Self {
        Self {
            rng: crate::rng::stream(seed, "toy-mdp"),
            state: 0,
        }
    }

    /// Optimal action values by value iteration.
    pub fn optimal_q(gamma: f64) -> [[f64; 2]; 2] {
        let mut q = [[0.0f64; 2]; 2];
        for _ in 0..10_000 {
            let v = [q[0][0].max(q[0][1]), q[1][0].max(q[1][1])];
            let mut next = [[0.0; 2]; 2];
            for s in 0..2 {
                for a in 0..2 {
                    next[s][a] = Self::REWARD[s][a] + gamma * v[Self::NEXT[s][a]];
                }
            }
            let change = (0..4).map(|i| (next[i / 2][i % 2] - q[i / 2][i % 2]).abs()).fold(0.0, f64::max);
            q = next;
            if change < 1e-12 {
                break;
            }
        }
        q
    }

    /// Greedy policy of [`ToyMdp::optimal_q`]; ties go to action 0.
    pub fn optimal_policy(gamma: f64) -> [usize; 2] {
        let q = Self::optimal_q(gamma);
        [usize::from(q[0][1] > q[0][0]), usize::from(q[1][1] > q[1][0])]
    }

    pub fn encode(state: usize) -> Observation {
        let mut v = vec![0.0; 2];
        v[state] = 1.0;
        Observation::new(v)
    }
}

impl Environment for ToyMdp {
    fn observation_dim(&self) -> usize {
        2
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Observation {
        self.state = self.rng.gen_range(0..2);
        Self::encode(self.state)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if action > 1 {
            return Err(Error::InvalidAction(action));
        }
        let reward = Self::REWARD[self.state][action];
        self.state = Self::NEXT[self.state][action];
        Ok(Step {
            observation: Self::encode(self.state),
            reward,
            done: false,
            kpi: Kpi::default(),
        })
    }
}
