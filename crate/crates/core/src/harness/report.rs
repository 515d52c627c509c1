//! Rankings, pairwise differences and qualitative ordering checks.

use std::fmt::Write as _;

use super::{head_means, summarize, EpisodeRecord, RunRecords, SummaryRow};
use crate::baselines::PolicyKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Return = 0,
    Capacity = 1,
    Latency = 2,
    Power = 3,
    SwitchRate = 4,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Return, Metric::Capacity, Metric::Latency, Metric::Power, Metric::SwitchRate];

    pub fn column(self) -> &'static str {
        match self {
            Metric::Return => "return",
            Metric::Capacity => "capacity_bps",
            Metric::Latency => "latency_s",
            Metric::Power => "power_w",
            Metric::SwitchRate => "switch_rate",
        }
    }

    pub fn value(self, r: &EpisodeRecord) -> f64 {
        match self {
            Metric::Return => r.episode_return,
            Metric::Capacity => r.capacity_bps,
            Metric::Latency => r.latency_s,
            Metric::Power => r.power_w,
            Metric::SwitchRate => r.switch_rate,
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Return | Metric::Capacity)
    }
}

/// First- and last-window means of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetrics {
    pub policy: PolicyKind,
    pub seed: u64,
    pub head: [f64; 5],
    pub tail: [f64; 5],
}

impl SeedMetrics {
    pub fn of(run: &RunRecords) -> Self {
        Self {
            policy: run.policy,
            seed: run.seed,
            head: head_means(&run.records),
            tail: super::tail_means(&run.records),
        }
    }

    pub fn tail(&self, m: Metric) -> f64 {
        self.tail[m as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRanking {
    pub metric: Metric,
    /// Best first; equal means share a rank.
    pub entries: Vec<(usize, PolicyKind, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDiff {
    pub metric: Metric,
    pub a: PolicyKind,
    pub b: PolicyKind,
    /// `mean(a) - mean(b)`.
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub name: &'static str,
    pub description: &'static str,
    /// `None` when a required policy is absent.
    pub holds: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub summary: Vec<SummaryRow>,
    pub per_seed: Vec<SeedMetrics>,
    pub rankings: Vec<MetricRanking>,
    pub pairwise: Vec<PairwiseDiff>,
    pub checks: Vec<OrderingCheck>,
}

impl CompareReport {
    pub fn check(&self, name: &str) -> Option<&OrderingCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| c.holds == Some(false)).count()
    }

    pub fn ranking(&self, metric: Metric) -> &MetricRanking {
        &self.rankings[metric as usize]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rankings {
            let dir = if r.metric.higher_is_better() { "higher is better" } else { "lower is better" };
            let _ = writeln!(s, "{} ({dir})", r.metric.column());
            for (rank, p, v) in &r.entries {
                let _ = writeln!(s, "  {rank}. {p:<12} {v:.6e}");
            }
        }
        let _ = writeln!(s, "orderings");
        for c in &self.checks {
            let status = match c.holds {
                Some(true) => "ok",
                Some(false) => "VIOLATED",
                None => "skipped",
            };
            let _ = writeln!(s, "  [{status}] {}: {} ({})", c.name, c.description, c.detail);
        }
        s
    }
}

fn rank(metric: Metric, summary: &[SummaryRow]) -> MetricRanking {
    let mut entries: Vec<(PolicyKind, f64)> = summary.iter().map(|r| (r.policy, r.stat(metric).mean)).collect();
    let better = |a: f64, b: f64| if metric.higher_is_better() { b.total_cmp(&a) } else { a.total_cmp(&b) };
    entries.sort_by(|x, y| better(x.1, y.1).then(x.0.cmp(&y.0)));
    let mut ranked = Vec::with_capacity(entries.len());
    for (i, (p, v)) in entries.iter().enumerate() {
        let r = if i > 0 && entries[i - 1].1 == *v { ranked.last().map(|e: &(usize, _, _)| e.0).unwrap_or(1) } else { i + 1 };
        ranked.push((r, *p, *v));
    }
    MetricRanking { metric, entries: ranked }
}

/// At least two thirds of `n`.
fn supermajority(count: usize, n: usize) -> bool {
    n > 0 && count * 3 >= 2 * n
}

struct Table<'a> {
    per_seed: &'a [SeedMetrics],
    seeds: Vec<u64>,
}

impl Table<'_> {
    fn get(&self, p: PolicyKind, seed: u64) -> Option<&SeedMetrics> {
        self.per_seed.iter().find(|m| m.policy == p && m.seed == seed)
    }

    fn has(&self, p: PolicyKind) -> bool {
        self.seeds.iter().all(|s| self.get(p, *s).is_some())
    }

    fn value(&self, p: PolicyKind, seed: u64, m: Metric) -> f64 {
        self.get(p, seed).map(|x| x.tail(m)).unwrap_or(f64::NAN)
    }

    fn policies(&self) -> Vec<PolicyKind> {
        let mut ps: Vec<PolicyKind> = self.per_seed.iter().map(|m| m.policy).collect();
        ps.sort();
        ps.dedup();
        ps.into_iter().filter(|p| self.has(*p)).collect()
    }

    /// Seeds on which `pred` holds.
    fn count(&self, mut pred: impl FnMut(u64) -> bool) -> usize {
        self.seeds.iter().filter(|s| pred(**s)).count()
    }
}

fn checks(t: &Table) -> Vec<OrderingCheck> {
    use PolicyKind::*;
    let n = t.seeds.len();
    let mut out = Vec::new();
    let mut push = |name, description, needed: &[PolicyKind], eval: &dyn Fn() -> (bool, String)| {
        let (holds, detail) = if needed.iter().all(|p| t.has(*p)) {
            let (h, d) = eval();
            (Some(h), d)
        } else {
            (None, "required policies missing".to_string())
        };
        out.push(OrderingCheck {
            name,
            description,
            holds,
            detail,
        });
    };
    let others = |p: PolicyKind| t.policies().into_iter().filter(move |q| *q != p);

    push("return", "proposed return above DQN and PPO on at least 2/3 of seeds", &[Proposed, Dqn, Ppo], &|| {
        let k = t.count(|s| {
            let v = t.value(Proposed, s, Metric::Return);
            v > t.value(Dqn, s, Metric::Return) && v > t.value(Ppo, s, Metric::Return)
        });
        (supermajority(k, n), format!("{k}/{n} seeds"))
    });
    push("switching", "proposed switching rate in the last window below 25% of the first", &[Proposed], &|| {
        let first: f64 = t.seeds.iter().map(|s| t.get(Proposed, *s).unwrap().head[Metric::SwitchRate as usize]).sum::<f64>() / n as f64;
        let last: f64 = t.seeds.iter().map(|s| t.value(Proposed, *s, Metric::SwitchRate)).sum::<f64>() / n as f64;
        (last < 0.25 * first, format!("first {first:.4}, last {last:.4}"))
    });
    push(
        "capacity_floor",
        "BS-only has the lowest capacity on every seed",
        &[BsOnly],
        &|| {
            let k = t.count(|s| {
                let v = t.value(BsOnly, s, Metric::Capacity);
                others(BsOnly).all(|q| v < t.value(q, s, Metric::Capacity))
            });
            (k == n, format!("{k}/{n} seeds"))
        },
    );
    push("capacity_top", "proposed has the highest capacity on at least 2/3 of seeds", &[Proposed], &|| {
        let k = t.count(|s| {
            let v = t.value(Proposed, s, Metric::Capacity);
            others(Proposed).all(|q| v > t.value(q, s, Metric::Capacity))
        });
        (supermajority(k, n), format!("{k}/{n} seeds"))
    });
    push(
        "latency_vs_naive",
        "proposed latency below random and round-robin on every seed",
        &[Proposed, Random, RoundRobin],
        &|| {
            let k = t.count(|s| {
                let v = t.value(Proposed, s, Metric::Latency);
                v < t.value(Random, s, Metric::Latency) && v < t.value(RoundRobin, s, Metric::Latency)
            });
            (k == n, format!("{k}/{n} seeds"))
        },
    );
    push("latency_min", "proposed has the lowest latency on at least 2/3 of seeds", &[Proposed], &|| {
        let k = t.count(|s| {
            let v = t.value(Proposed, s, Metric::Latency);
            others(Proposed).all(|q| v < t.value(q, s, Metric::Latency))
        });
        (supermajority(k, n), format!("{k}/{n} seeds"))
    });
    push("power_bs_only", "BS-only power is exactly 2 W on every seed", &[BsOnly], &|| {
        let k = t.count(|s| t.value(BsOnly, s, Metric::Power) == 2.0);
        (k == n, format!("{k}/{n} seeds"))
    });
    push("power_above_bs", "proposed power above BS-only on every seed", &[Proposed, BsOnly], &|| {
        let k = t.count(|s| t.value(Proposed, s, Metric::Power) > t.value(BsOnly, s, Metric::Power));
        (k == n, format!("{k}/{n} seeds"))
    });
    out
}

/// Rank policies on every metric and evaluate the expected orderings.
pub fn compare(runs: &[RunRecords]) -> Result<CompareReport> {
    let summary = summarize(runs);
    if summary.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison needs at least 2 policies, got {}",
            summary.len()
        )));
    }
    let per_seed: Vec<SeedMetrics> = runs.iter().map(SeedMetrics::of).collect();
    let mut seeds: Vec<u64> = per_seed.iter().map(|m| m.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let rankings = Metric::ALL.iter().map(|m| rank(*m, &summary)).collect();
    let mut pairwise = Vec::new();
    for m in Metric::ALL {
        for (i, a) in summary.iter().enumerate() {
            for b in &summary[i + 1..] {
                pairwise.push(PairwiseDiff {
                    metric: m,
                    a: a.policy,
                    b: b.policy,
                    diff: a.stat(m).mean - b.stat(m).mean,
                });
            }
        }
    }
    let checks = checks(&Table {
        per_seed: &per_seed,
        seeds,
    });
    Ok(CompareReport {
        summary,
        per_seed,
        rankings,
        pairwise,
        checks,
    })
}
