use serde::{Deserialize, Serialize};

use crate::env::{Kpi, NUM_ACTIONS};
use crate::error::{Error, Result};

/// Per-episode aggregates, one row of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Undiscounted sum of per-step rewards.
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub capacity_bps: f64,
    pub latency_s: f64,
    pub power_w: f64,
    pub switch_rate: f64,
}

/// Fraction of consecutive pairs whose actions differ.
pub fn switching_rate(actions: &[usize]) -> Result<f64> {
    if actions.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "switching rate needs at least 2 actions, got {}",
            actions.len()
        )));
    }
    let switches = actions.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(switches as f64 / (actions.len() - 1) as f64)
}

/// Trailing mean over `min(window, i + 1)` items.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Accumulates one episode step by step.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTracker {
    rewards: Vec<f64>,
    actions: Vec<usize>,
    capacity: f64,
    latency: f64,
    power: f64,
}

impl EpisodeTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, action: usize, reward: f64, kpi: &Kpi) {
        debug_assert!(action < NUM_ACTIONS.max(2));
        self.rewards.push(reward);
        self.actions.push(action);
        self.capacity += kpi.capacity_bps;
        self.latency += kpi.latency_s;
        self.power += kpi.power_w;
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Close the episode and reset the tracker.
    pub fn finish(&mut self, episode: usize) -> EpisodeRecord {
        let n = self.rewards.len().max(1) as f64;
        let record = EpisodeRecord {
            episode,
            episode_return: self.rewards.iter().sum(),
            capacity_bps: self.capacity / n,
            latency_s: self.latency / n,
            power_w: self.power / n,
            switch_rate: switching_rate(&self.actions).unwrap_or(0.0),
        };
        *self = Self::default();
        record
    }
}

/// Mean of `values`; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn switching_rate_examples() {
        assert_eq!(switching_rate(&[3, 3, 3, 3]).unwrap(), 0.0);
        assert_eq!(switching_rate(&[0, 1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(switching_rate(&[0, 0, 1, 1, 2]).unwrap(), 0.5);
        assert!(switching_rate(&[1]).is_err());
        assert!(switching_rate(&[]).is_err());
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[4.0, -1.0, 7.5], 1), vec![4.0, -1.0, 7.5]);
        assert_eq!(moving_average(&[2.0; 6], 4), vec![2.0; 6]);
    }

    #[test]
    fn tracker_aggregates() {
        let mut t = EpisodeTracker::new();
        let kpi = |c, l, p| Kpi {
            capacity_bps: c,
            latency_s: l,
            power_w: p,
        };
        t.record(0, 1.0, &kpi(10.0, 1.0, 2.0));
        t.record(0, -0.5, &kpi(20.0, 3.0, 2.0));
        t.record(3, 0.25, &kpi(30.0, 2.0, 5.0));
        let r = t.finish(7);
        assert_eq!(r.episode, 7);
        assert_eq!(r.episode_return, 0.75);
        assert_eq!(r.capacity_bps, 20.0);
        assert_eq!(r.latency_s, 2.0);
        assert_eq!(r.power_w, 3.0);
        assert_eq!(r.switch_rate, 0.5);
        assert!(t.is_empty());
    }

    proptest! {
        #[test]
        fn moving_average_shape(series in proptest::collection::vec(-1e3..1e3f64, 0..50), window in 1usize..10) {
            let out = moving_average(&series, window);
            prop_assert_eq!(out.len(), series.len());
            for (i, v) in out.iter().enumerate() {
                let lo = i + 1 - (i + 1).min(window);
                let direct = mean(&series[lo..=i]);
                prop_assert!((v - direct).abs() < 1e-9);
            }
        }

        #[test]
        fn switching_rate_in_unit_interval(actions in proptest::collection::vec(0usize..15, 2..60)) {
            let r = switching_rate(&actions).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
