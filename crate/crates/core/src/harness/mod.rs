//! Experiment orchestration: episode loops, per-run CSV traces, summaries and
//! the ordering report used to compare policies.

pub mod metrics;
mod report;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{mean, moving_average, sample_std, switching_rate, EpisodeRecord, EpisodeTracker};
pub use report::{compare, CompareReport, Metric, MetricRanking, OrderingCheck, PairwiseDiff, SeedMetrics};

use crate::agent::{ActionMode, Transition};
use crate::baselines::{build_policy, LearnerConfigs, Policy, PolicyKind};
use crate::env::{ActionIndex, EnvConfig, Environment, Kpi, QosRequirement, SaginEnv, TrafficClass};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Header of every per-run trace CSV.
pub const TRACE_HEADER: &str = "episode,return,capacity_bps,latency_s,power_w,switch_rate";
pub const SUMMARY_FILE: &str = "summary.csv";
/// Fraction of episodes at each end used for summaries.
pub const TAIL_FRACTION: f64 = 0.1;

/// One environment step as seen by the experiment loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent {
    pub episode: usize,
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub kpi: Kpi,
}

fn drive<E, P, F>(
    env: &mut E,
    policy: &mut P,
    episodes: usize,
    steps: usize,
    mode: ActionMode,
    learn: bool,
    mut on_step: F,
) -> Result<Vec<EpisodeRecord>>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
    F: FnMut(&StepEvent),
{
    if episodes == 0 || steps == 0 {
        return Err(Error::Config("episodes and steps must be at least 1".into()));
    }
    let mut records = Vec::with_capacity(episodes);
    let mut tracker = EpisodeTracker::new();
    for episode in 0..episodes {
        policy.begin_episode(episode, episodes);
        let mut obs = env.reset();
        for step in 0..steps {
            let action = policy.act(&obs, mode)?;
            let out = env.step(action)?;
            tracker.record(action, out.reward, &out.kpi);
            on_step(&StepEvent {
                episode,
                step,
                action,
                reward: out.reward,
                kpi: out.kpi,
            });
            // Hitting the step limit truncates without marking a terminal state.
            let done = out.done;
            if learn {
                policy.observe(Transition {
                    observation: obs.into_inner(),
                    action,
                    reward: out.reward,
                    next_observation: out.observation.to_vec(),
                    done,
                })?;
            }
            obs = out.observation;
            if done || step + 1 == steps {
                break;
            }
        }
        records.push(tracker.finish(episode));
    }
    Ok(records)
}

/// Interact and learn for `episodes` episodes of at most `steps` steps.
pub fn run_episodes<E, P, F>(env: &mut E, policy: &mut P, episodes: usize, steps: usize, on_step: F) -> Result<Vec<EpisodeRecord>>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
    F: FnMut(&StepEvent),
{
    drive(env, policy, episodes, steps, ActionMode::Sample, true, on_step)
}

/// Greedy rollouts without learning.
pub fn evaluate<E, P, F>(env: &mut E, policy: &mut P, episodes: usize, steps: usize, on_step: F) -> Result<Vec<EpisodeRecord>>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
    F: FnMut(&StepEvent),
{
    drive(env, policy, episodes, steps, ActionMode::Greedy, false, on_step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 2,000 episodes x 3 seeds.
    Desk,
    /// 10,000 episodes x 3 seeds.
    Paper,
}

impl Profile {
    pub fn episodes(self) -> usize {
        match self {
            Profile::Desk => 2_000,
            Profile::Paper => 10_000,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub policies: Vec<PolicyKind>,
    pub episodes: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    /// Overrides `env.qos` with a preset when set.
    pub traffic: Option<TrafficClass>,
    pub env: EnvConfig,
    pub learners: LearnerConfigs,
    pub out_dir: PathBuf,
    /// Moving-average window of the plot series.
    pub plot_window: usize,
    /// Also write per-step traces under `steps/`.
    pub log_steps: bool,
    /// Also write learner checkpoints under `checkpoints/`.
    pub checkpoints: bool,
    /// Run (policy, seed) cells on the rayon pool.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            policies: PolicyKind::ALL.to_vec(),
            episodes: Profile::Desk.episodes(),
            steps: crate::env::EPISODE_LENGTH,
            seeds: vec![1, 2, 3],
            traffic: None,
            env: EnvConfig::default(),
            learners: LearnerConfigs::default(),
            out_dir: PathBuf::from("results"),
            plot_window: 100,
            log_steps: false,
            checkpoints: false,
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            episodes: profile.episodes(),
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Environment settings with the traffic preset and step count applied.
    pub fn effective_env(&self) -> EnvConfig {
        let mut env = self.env.clone();
        if let Some(class) = self.traffic {
            env.qos = QosRequirement::preset(class);
        }
        env.episode_length = self.steps;
        env
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.steps == 0 {
            return Err(Error::Config("episodes and steps must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        let mut seen = self.policies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.policies.len() {
            return Err(Error::Config("policies must not repeat".into()));
        }
        if self.plot_window == 0 {
            return Err(Error::Config("plot_window must be at least 1".into()));
        }
        self.effective_env().validate()?;
        self.learners.validate()
    }
}

/// Episode records of one (policy, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecords {
    pub policy: PolicyKind,
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
}

/// Across-seed mean and sample standard deviation of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            std: sample_std(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: PolicyKind,
    pub seeds: usize,
    pub stats: [Stat; Metric::ALL.len()],
}

impl SummaryRow {
    pub fn stat(&self, metric: Metric) -> Stat {
        self.stats[metric as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub runs: Vec<RunRecords>,
    pub summary: Vec<SummaryRow>,
}

/// Number of episodes in a 10% window, at least one.
pub fn window_len(episodes: usize) -> usize {
    ((episodes as f64 * TAIL_FRACTION).round() as usize).clamp(1, episodes.max(1))
}

/// Per-metric means over the last 10% of episodes.
pub fn tail_means(records: &[EpisodeRecord]) -> [f64; Metric::ALL.len()] {
    let w = window_len(records.len());
    window_means(&records[records.len() - w..])
}

/// Per-metric means over the first 10% of episodes.
pub fn head_means(records: &[EpisodeRecord]) -> [f64; Metric::ALL.len()] {
    window_means(&records[..window_len(records.len())])
}

fn window_means(window: &[EpisodeRecord]) -> [f64; Metric::ALL.len()] {
    Metric::ALL.map(|m| mean(&window.iter().map(|r| m.value(r)).collect::<Vec<_>>()))
}

/// Summary rows in policy order, from the last 10% of each run.
pub fn summarize(runs: &[RunRecords]) -> Vec<SummaryRow> {
    let mut policies: Vec<PolicyKind> = Vec::new();
    for r in runs {
        if !policies.contains(&r.policy) {
            policies.push(r.policy);
        }
    }
    policies
        .into_iter()
        .map(|policy| {
            let tails: Vec<_> = runs.iter().filter(|r| r.policy == policy).map(|r| tail_means(&r.records)).collect();
            let stats = Metric::ALL.map(|m| Stat::of(&tails.iter().map(|t| t[m as usize]).collect::<Vec<_>>()));
            SummaryRow {
                policy,
                seeds: tails.len(),
                stats,
            }
        })
        .collect()
}

pub fn trace_file_name(policy: PolicyKind, seed: u64) -> String {
    format!("{policy}_seed{seed}.csv")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parse a trace CSV, checking the header.
pub fn read_trace(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    for column in TRACE_HEADER.split(',') {
        if !headers.iter().any(|h| h == column) {
            return Err(Error::MissingMetric(format!("{}: no `{column}` column", path.display())));
        }
    }
    let records = r.deserialize().collect::<std::result::Result<Vec<EpisodeRecord>, _>>()?;
    Ok(records)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["policy".to_string(), "seeds".to_string()];
    for m in Metric::ALL {
        header.push(format!("{}_mean", m.column()));
        header.push(format!("{}_std", m.column()));
    }
    w.write_record(&header)?;
    for row in rows {
        let mut fields = vec![row.policy.to_string(), row.seeds.to_string()];
        for s in row.stats {
            fields.push(s.mean.to_string());
            fields.push(s.std.to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_plot(path: &Path, records: &[EpisodeRecord], window: usize) -> Result<()> {
    let smoothed = Metric::ALL.map(|m| moving_average(&records.iter().map(|r| m.value(r)).collect::<Vec<_>>(), window));
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(TRACE_HEADER.split(','))?;
    for (i, r) in records.iter().enumerate() {
        let mut fields = vec![r.episode.to_string()];
        fields.extend(smoothed.iter().map(|s| s[i].to_string()));
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row of a per-step trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub episode: usize,
    pub step: usize,
    pub action: usize,
    pub bitmask: u8,
    pub reward: f64,
    pub capacity_bps: f64,
    pub latency_s: f64,
    pub power_w: f64,
}

impl From<&StepEvent> for StepRow {
    fn from(e: &StepEvent) -> Self {
        Self {
            episode: e.episode,
            step: e.step,
            action: e.action,
            bitmask: ActionIndex::new(e.action).map(ActionIndex::bitmask).unwrap_or(0),
            reward: e.reward,
            capacity_bps: e.kpi.capacity_bps,
            latency_s: e.kpi.latency_s,
            power_w: e.kpi.power_w,
        }
    }
}

pub fn read_steps(path: &Path) -> Result<Vec<StepRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<StepRow>, _>>()?;
    Ok(rows)
}

struct CellOutput {
    run: RunRecords,
    steps: Vec<StepRow>,
    checkpoint: Option<crate::checkpoint::Checkpoint>,
}

/// Train one policy against one seeded environment.
pub fn run_cell(cfg: &ExperimentConfig, policy: PolicyKind, seed: u64) -> Result<RunRecords> {
    run_cell_full(cfg, policy, seed, false).map(|c| c.run)
}

fn run_cell_full(cfg: &ExperimentConfig, kind: PolicyKind, seed: u64, keep_steps: bool) -> Result<CellOutput> {
    let mut env = SaginEnv::new(cfg.effective_env(), seed)?;
    let mut policy = build_policy(
        kind,
        &cfg.learners,
        env.observation_dim(),
        env.num_actions(),
        derive_seed(seed, kind.name()),
    )?;
    let mut steps = Vec::new();
    let records = run_episodes(&mut env, policy.as_mut(), cfg.episodes, cfg.steps, |e| {
        if keep_steps {
            steps.push(StepRow::from(e));
        }
    })?;
    let checkpoint = if cfg.checkpoints {
        policy.checkpoint(seed, cfg.episodes)?
    } else {
        None
    };
    Ok(CellOutput {
        run: RunRecords {
            policy: kind,
            seed,
            records,
        },
        steps,
        checkpoint,
    })
}

/// Run every (policy, seed) cell, write traces and the summary to `out_dir`.
///
/// `progress` is called once per finished cell, possibly from worker threads.
pub fn run_experiment_with<F>(cfg: &ExperimentConfig, progress: F) -> Result<ExperimentResult>
where
    F: Fn(&RunRecords) + Sync,
{
    cfg.validate()?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let plot_dir = out.join("plot");
    fs::create_dir_all(&plot_dir).map_err(|e| Error::io(&plot_dir, e))?;

    let cells: Vec<(PolicyKind, u64)> = cfg
        .policies
        .iter()
        .flat_map(|p| cfg.seeds.iter().map(move |s| (*p, *s)))
        .collect();
    let work = |&(p, s): &(PolicyKind, u64)| {
        let cell = run_cell_full(cfg, p, s, cfg.log_steps);
        if let Ok(c) = &cell {
            progress(&c.run);
        }
        cell
    };
    let outputs: Vec<CellOutput> = if cfg.parallel {
        cells.par_iter().map(work).collect::<Result<_>>()?
    } else {
        cells.iter().map(work).collect::<Result<_>>()?
    };

    for c in &outputs {
        let name = trace_file_name(c.run.policy, c.run.seed);
        write_trace(&out.join(&name), &c.run.records)?;
        write_plot(&plot_dir.join(&name), &c.run.records, cfg.plot_window)?;
        if cfg.log_steps {
            let dir = out.join("steps");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(&name);
            let mut w = csv::Writer::from_writer(create(&path)?);
            for row in &c.steps {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        if let Some(ckpt) = &c.checkpoint {
            let dir = out.join("checkpoints");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            ckpt.save(&dir.join(format!("{}_seed{}.ckpt", c.run.policy, c.run.seed)))?;
        }
    }
    let runs: Vec<RunRecords> = outputs.into_iter().map(|c| c.run).collect();
    let summary = summarize(&runs);
    write_summary(&out.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentResult { runs, summary })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, |_| {})
}

/// Reload the traces written by [`run_experiment`].
pub fn load_runs(cfg: &ExperimentConfig) -> Result<Vec<RunRecords>> {
    let mut runs = Vec::new();
    for &policy in &cfg.policies {
        for &seed in &cfg.seeds {
            let records = read_trace(&cfg.out_dir.join(trace_file_name(policy, seed)))?;
            runs.push(RunRecords { policy, seed, records });
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ToyMdp;

    #[test]
    fn window_length() {
        assert_eq!(window_len(2000), 200);
        assert_eq!(window_len(5), 1);
        assert_eq!(window_len(1), 1);
    }

    #[test]
    fn episodes_are_truncated_at_step_limit() {
        let mut env = ToyMdp::new(1);
        let mut p = crate::baselines::BsOnly;
        let mut n = 0;
        let recs = run_episodes(&mut env, &mut p, 3, 7, |_| n += 1).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(n, 21);
        assert!(run_episodes(&mut env, &mut p, 0, 7, |_| {}).is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = ExperimentConfig {
            policies: vec![PolicyKind::Proposed, PolicyKind::BsOnly],
            traffic: Some(TrafficClass::Hrllc),
            ..ExperimentConfig::default()
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml_str("episodes = 10\nseeds = [4]\npolicies = [\"dqn\"]\n").unwrap();
        assert_eq!(partial.episodes, 10);
        assert_eq!(partial.steps, 50);
        assert_eq!(partial.learners.dqn.batch_size, 64);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            "episodes = 0",
            "seeds = []",
            "policies = [\"sarsa\"]",
            "policies = [\"dqn\", \"dqn\"]",
            "[env.weights]\nw_power = -1.0",
            "bogus = 1",
        ] {
            let err = ExperimentConfig::from_toml_str(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn traffic_preset_overrides_qos() {
        let cfg = ExperimentConfig {
            traffic: Some(TrafficClass::Mmtc),
            steps: 20,
            ..ExperimentConfig::default()
        };
        let env = cfg.effective_env();
        assert_eq!(env.qos, QosRequirement::preset(TrafficClass::Mmtc));
        assert_eq!(env.episode_length, 20);
    }
}
