//! Experiment orchestration: world setup, seeded end-to-end runs, metrics,
//! PU-only reference runs and the training-cost probe.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::agent::{AgentConfig, DeqnAgent, Learner, RoundStats, StateSource, Trainer};
use crate::baselines::FixedPolicy;
use crate::channel::{build_geometry, Geometry};
use crate::config::{AgentKind, ExperimentConfig};
use crate::env::{DssEnv, PeriodOutcome, SuState, TraceWriter};
use crate::error::{Error, Result};
use crate::esn::NetworkConfig;
use crate::seed;
use crate::toy::{greedy_policy, ring_mdp, toy_mdp_oracle, MdpEnv};

/// Window of the moving-average series, in periods.
pub const MOVING_AVERAGE_WINDOW: usize = 300;

/// Trailing-window mean; the output has `len - window + 1` entries.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(xs.len() - window + 1);
    // Each window is summed afresh so the result does not depend on history.
    for w in xs.windows(window) {
        out.push(w.iter().sum::<f64>() / window as f64);
    }
    out
}

/// Per-round aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Mean over the round's periods, bits/s.
    pub pu_system_throughput: f64,
    pub su_system_throughput: f64,
    /// Mean over periods and SUs.
    pub mean_reward: f64,
    /// Warnings heard by some SU, per PU.
    pub warnings_heard: Vec<usize>,
    /// Periods each PU was active.
    pub pu_active_periods: Vec<usize>,
    pub agent_mean_reward: Vec<f64>,
    pub agent_mean_loss: Vec<Option<f64>>,
    /// Wall-clock; excluded from the deterministic outputs.
    #[serde(skip)]
    pub train_seconds: f64,
}

impl RoundMetrics {
    pub fn warning_frequency(&self) -> Vec<f64> {
        frequency(&self.warnings_heard, &self.pu_active_periods)
    }
}

fn frequency(heard: &[usize], active: &[usize]) -> Vec<f64> {
    heard
        .iter()
        .zip(active)
        .map(|(&h, &a)| if a == 0 { 0.0 } else { h as f64 / a as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub rounds: Vec<RoundMetrics>,
    pub period_pu_throughput: Vec<f64>,
    pub period_su_throughput: Vec<f64>,
    pub period_mean_reward: Vec<f64>,
    pub period_seconds: f64,
}

impl RunMetrics {
    fn window(&self, rounds: std::ops::Range<usize>) -> &[RoundMetrics] {
        let end = rounds.end.min(self.rounds.len());
        &self.rounds[rounds.start.min(end)..end]
    }

    /// Per-PU warning frequency pooled over a range of rounds.
    pub fn warning_frequency(&self, rounds: std::ops::Range<usize>) -> Vec<f64> {
        let w = self.window(rounds);
        let m = self.rounds.first().map_or(0, |r| r.warnings_heard.len());
        let heard: Vec<usize> = (0..m).map(|p| w.iter().map(|r| r.warnings_heard[p]).sum()).collect();
        let active: Vec<usize> = (0..m).map(|p| w.iter().map(|r| r.pu_active_periods[p]).sum()).collect();
        frequency(&heard, &active)
    }

    pub fn mean_warning_frequency(&self, rounds: std::ops::Range<usize>) -> f64 {
        mean(&self.warning_frequency(rounds))
    }

    pub fn mean_pu_throughput(&self, rounds: std::ops::Range<usize>) -> f64 {
        mean(&self.window(rounds).iter().map(|r| r.pu_system_throughput).collect::<Vec<_>>())
    }

    pub fn mean_su_throughput(&self, rounds: std::ops::Range<usize>) -> f64 {
        mean(&self.window(rounds).iter().map(|r| r.su_system_throughput).collect::<Vec<_>>())
    }

    pub fn mean_reward(&self, rounds: std::ops::Range<usize>) -> f64 {
        mean(&self.window(rounds).iter().map(|r| r.mean_reward).collect::<Vec<_>>())
    }

    pub fn num_rounds(&self) -> usize {
        self.rounds.len()
    }

    /// Last `n` rounds.
    pub fn last(&self, n: usize) -> std::ops::Range<usize> {
        self.rounds.len().saturating_sub(n)..self.rounds.len()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Geometry and environment for a config; both depend only on the seed.
pub fn build_world(cfg: &ExperimentConfig) -> Result<DssEnv> {
    let geometry = world_geometry(cfg)?;
    DssEnv::new(&cfg.scenario, &cfg.channel, geometry, environment_seed(cfg))
}

pub fn environment_seed(cfg: &ExperimentConfig) -> u64 {
    seed::derive(cfg.seed, "environment", 0)
}

/// Seed of the link channels inside the environment, so a gain dump shows
/// exactly the gains the experiment sees (slot 0 is the first calibration slot).
pub fn channel_seed(cfg: &ExperimentConfig) -> u64 {
    seed::derive(environment_seed(cfg), "channel", 0)
}

pub fn world_geometry(cfg: &ExperimentConfig) -> Result<Geometry> {
    build_geometry(&cfg.scenario, seed::derive(cfg.seed, "geometry", 0))
}

fn network_for(kind: AgentKind, base: &NetworkConfig) -> Option<NetworkConfig> {
    kind.reservoir_layers().map(|layers| NetworkConfig {
        layers,
        ..base.clone()
    })
}

/// One learner per SU according to `agent_kinds`.
pub fn build_learners(cfg: &ExperimentConfig) -> Result<Vec<Learner>> {
    let m = cfg.scenario.num_pus;
    (0..cfg.scenario.num_sus)
        .map(|su| {
            let kind = cfg.agent_kind(su);
            Ok(match kind {
                AgentKind::Random => Learner::Fixed(FixedPolicy::random(m, seed::rng(cfg.seed, "random-policy", su as u64))),
                AgentKind::Threshold => Learner::Fixed(FixedPolicy::threshold(m, cfg.threshold_feature)?),
                _ => {
                    let net = network_for(kind, &cfg.network).expect("learning kinds have a network");
                    Learner::Deqn(Box::new(DeqnAgent::new(1 + m, 2 * m, &net, cfg.agent.buffer_size, cfg.seed, su)?))
                }
            })
        })
        .collect()
}

/// Runs `total_samples / Z` rounds and writes artifacts to `out_dir` if set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    cfg.validate()?;
    let mut env = build_world(cfg)?;
    let mut trainer = Trainer::new(build_learners(cfg)?, cfg.agent.clone()).with_parallel(cfg.parallel_training);

    let out = cfg.out_dir.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_manifest(cfg, &dir.join("manifest.json"))?;
        env.geometry().write_csv(BufWriter::new(fs::File::create(dir.join("geometry.csv"))?))?;
    }
    let mut trace = match (out, cfg.write_trace) {
        (Some(dir), true) => Some(TraceWriter::new(BufWriter::new(fs::File::create(dir.join("trace.csv"))?))?),
        _ => None,
    };

    let m = cfg.scenario.num_pus;
    let mut metrics = RunMetrics {
        rounds: Vec::with_capacity(cfg.num_rounds()),
        period_pu_throughput: Vec::with_capacity(cfg.total_samples),
        period_su_throughput: Vec::with_capacity(cfg.total_samples),
        period_mean_reward: Vec::with_capacity(cfg.total_samples),
        period_seconds: cfg.scenario.period_slots as f64 * cfg.scenario.slot_seconds,
    };
    for _ in 0..cfg.num_rounds() {
        let mut heard = vec![0usize; m];
        let mut active = vec![0usize; m];
        let mut pu_tp = 0.0;
        let mut su_tp = 0.0;
        let mut reward = 0.0;
        let stats: RoundStats = trainer.run_round(&mut env, |o: &PeriodOutcome| {
            for p in 0..m {
                heard[p] += usize::from(o.warnings_heard[p]);
                active[p] += usize::from(o.pu_active[p]);
            }
            let (pt, st, r) = (o.pu_system_throughput(), o.su_system_throughput(), o.mean_reward());
            pu_tp += pt;
            su_tp += st;
            reward += r;
            metrics.period_pu_throughput.push(pt);
            metrics.period_su_throughput.push(st);
            metrics.period_mean_reward.push(r);
            if let Some(t) = trace.as_mut() {
                t.write(o)?;
            }
            Ok(())
        })?;
        let z = cfg.agent.buffer_size as f64;
        metrics.rounds.push(RoundMetrics {
            round: stats.round,
            epsilon: stats.epsilon,
            learning_rate: stats.learning_rate,
            pu_system_throughput: pu_tp / z,
            su_system_throughput: su_tp / z,
            mean_reward: reward / z,
            warnings_heard: heard,
            pu_active_periods: active,
            agent_mean_reward: stats.mean_reward,
            agent_mean_loss: stats.mean_loss,
            train_seconds: stats.train_seconds,
        });
    }
    if let Some(t) = trace.as_mut() {
        t.flush()?;
    }
    if let Some(dir) = out {
        write_metrics(&metrics, dir)?;
        write_checkpoints(&trainer, dir)?;
    }
    Ok(metrics)
}

fn write_manifest(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        program: &'static str,
        version: &'static str,
        num_rounds: usize,
        moving_average_window: usize,
        agent_kind_per_su: Vec<AgentKind>,
        config: &'a ExperimentConfig,
    }
    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        num_rounds: cfg.num_rounds(),
        moving_average_window: MOVING_AVERAGE_WINDOW,
        agent_kind_per_su: (0..cfg.scenario.num_sus).map(|s| cfg.agent_kind(s)).collect(),
        config: cfg,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Deterministic metric CSVs plus the wall-clock `timing.csv`.
pub fn write_metrics(metrics: &RunMetrics, dir: &Path) -> Result<()> {
    let m = metrics.rounds.first().map_or(0, |r| r.warnings_heard.len());
    let round_seconds = |r: &RoundMetrics, periods: usize| (r.round + 1) as f64 * periods as f64 * metrics.period_seconds;
    let periods_per_round = if metrics.rounds.is_empty() {
        0
    } else {
        metrics.period_pu_throughput.len() / metrics.rounds.len()
    };

    let mut w = csv::Writer::from_path(dir.join("rounds.csv"))?;
    let mut header = vec![
        "round".to_string(),
        "sim_seconds".into(),
        "epsilon".into(),
        "lr".into(),
        "pu_system_throughput".into(),
        "su_system_throughput".into(),
        "mean_reward".into(),
    ];
    header.extend((1..=m).map(|p| format!("warning_freq_pu{p}")));
    w.write_record(&header)?;
    for r in &metrics.rounds {
        let mut row = vec![
            r.round.to_string(),
            round_seconds(r, periods_per_round).to_string(),
            r.epsilon.to_string(),
            r.learning_rate.to_string(),
            r.pu_system_throughput.to_string(),
            r.su_system_throughput.to_string(),
            r.mean_reward.to_string(),
        ];
        row.extend(r.warning_frequency().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("training_log.csv"))?;
    w.write_record(["round", "su", "mean_loss", "epsilon", "lr", "mean_reward"])?;
    for r in &metrics.rounds {
        for (su, (loss, reward)) in r.agent_mean_loss.iter().zip(&r.agent_mean_reward).enumerate() {
            w.write_record([
                r.round.to_string(),
                (su + 1).to_string(),
                fmt_opt(*loss),
                r.epsilon.to_string(),
                r.learning_rate.to_string(),
                reward.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let pu = moving_average(&metrics.period_pu_throughput, MOVING_AVERAGE_WINDOW);
    let su = moving_average(&metrics.period_su_throughput, MOVING_AVERAGE_WINDOW);
    let rw = moving_average(&metrics.period_mean_reward, MOVING_AVERAGE_WINDOW);
    let mut w = csv::Writer::from_path(dir.join("moving_average.csv"))?;
    w.write_record(["period", "sim_seconds", "pu_system_throughput", "su_system_throughput", "mean_reward"])?;
    for i in 0..pu.len() {
        // Labelled by the last period of the window.
        let k = i + MOVING_AVERAGE_WINDOW - 1;
        w.write_record([
            k.to_string(),
            ((k + 1) as f64 * metrics.period_seconds).to_string(),
            pu[i].to_string(),
            su[i].to_string(),
            rw[i].to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("timing.csv"))?;
    w.write_record(["round", "train_seconds"])?;
    for r in &metrics.rounds {
        w.write_record([r.round.to_string(), r.train_seconds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_checkpoints(trainer: &Trainer, dir: &Path) -> Result<()> {
    for (su, l) in trainer.learners().iter().enumerate() {
        if let Some(agent) = l.as_deqn() {
            let id = su + 1;
            fs::write(dir.join(format!("network_su{id}.json")), agent.network().save_json()?)?;
            let ckpt = serde_json::to_string(&agent.checkpoint(trainer.round()))
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            fs::write(dir.join(format!("agent_su{id}.json")), ckpt)?;
        }
    }
    Ok(())
}

/// PU system throughput with no SU transmitting, in the same world.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PuBaseline {
    /// Mean PU system throughput per round.
    pub round_pu_throughput: Vec<f64>,
    pub period_pu_throughput: Vec<f64>,
}

impl PuBaseline {
    pub fn mean(&self, rounds: std::ops::Range<usize>) -> f64 {
        let end = rounds.end.min(self.round_pu_throughput.len());
        mean(&self.round_pu_throughput[rounds.start.min(end)..end])
    }
}

pub fn run_pu_only_baseline(cfg: &ExperimentConfig) -> Result<PuBaseline> {
    cfg.validate()?;
    let mut env = build_world(cfg)?;
    let z = cfg.agent.buffer_size;
    let mut out = PuBaseline {
        round_pu_throughput: Vec::with_capacity(cfg.num_rounds()),
        period_pu_throughput: Vec::with_capacity(cfg.total_samples),
    };
    for _ in 0..cfg.num_rounds() {
        let mut sum = 0.0;
        for _ in 0..z {
            let o = env.step_pu_only()?;
            let t: f64 = o.pu_throughputs.iter().sum();
            sum += t;
            out.period_pu_throughput.push(t);
        }
        out.round_pu_throughput.push(sum / z as f64);
    }
    if let Some(dir) = cfg.out_dir.as_deref() {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("pu_baseline.csv"))?;
        w.write_record(["round", "pu_system_throughput"])?;
        for (r, t) in out.round_pu_throughput.iter().enumerate() {
            w.write_record([r.to_string(), t.to_string()])?;
        }
        w.flush()?;
        let ma = moving_average(&out.period_pu_throughput, MOVING_AVERAGE_WINDOW);
        let mut w = csv::Writer::from_path(dir.join("pu_baseline_moving_average.csv"))?;
        w.write_record(["period", "pu_system_throughput"])?;
        for (i, t) in ma.iter().enumerate() {
            w.write_record([(i + MOVING_AVERAGE_WINDOW - 1).to_string(), t.to_string()])?;
        }
        w.flush()?;
    }
    Ok(out)
}

/// One point of the training-cost probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingPoint {
    /// Mean stream position of the buffered experiences.
    pub mean_k: f64,
    pub cached_seconds_per_iteration: f64,
    pub recompute_seconds_per_iteration: f64,
    /// Analytic floating-point operations per training iteration.
    pub cached_flops_per_iteration: f64,
    pub recompute_flops_per_iteration: f64,
}

impl TimingPoint {
    pub fn speedup(&self) -> f64 {
        self.recompute_seconds_per_iteration / self.cached_seconds_per_iteration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub points: Vec<TimingPoint>,
    /// Least-squares slope of cached seconds per iteration against mean k.
    pub cached_slope: f64,
    /// Standard error of `cached_slope`.
    pub cached_slope_stderr: f64,
    pub recompute_slope: f64,
}

/// Least-squares slope and its standard error.
pub fn linear_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let stderr = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, stderr)
}

/// Synthetic observation `[feature, one-hot channel]`.
fn synthetic_obs<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let s = SuState {
        energy_feature: rng.random_range(-2.0..2.0),
        sensed_channel: rng.random_range(0..m),
        num_channels: m,
    };
    s.to_vector()
}

/// An agent whose buffer holds `size` experiences at stream positions
/// `start .. start + size`.
fn agent_with_buffer(
    net: &NetworkConfig,
    m: usize,
    start: usize,
    size: usize,
    master_seed: u64,
) -> Result<DeqnAgent> {
    let mut agent = DeqnAgent::new(1 + m, 2 * m, net, size, master_seed, 0)?;
    agent.enable_input_log();
    let mut rng = seed::rng(master_seed, "timing-stream", 0);
    let mut obs = synthetic_obs(&mut rng, m);
    for k in 0..start + size {
        if k == start {
            agent.clear_buffer();
        }
        let a = agent.act(&obs, 1.0)?;
        let next = synthetic_obs(&mut rng, m);
        agent.observe(a, rng.random_range(-2..=3) as f64, &next)?;
        obs = next;
    }
    Ok(agent)
}

/// Settings of [`timing_probe`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingProbeConfig {
    /// Centre positions of the synthetic buffers.
    pub mean_ks: Vec<usize>,
    pub buffer_size: usize,
    pub cached_iterations: usize,
    /// The recompute variant is slow, so it is timed over fewer iterations.
    pub recompute_iterations: usize,
    /// Best-of-`repeats` timing per variant.
    pub repeats: usize,
}

impl Default for TimingProbeConfig {
    fn default() -> Self {
        Self {
            mean_ks: vec![50, 100, 150, 200, 300, 400],
            buffer_size: 32,
            cached_iterations: 200,
            recompute_iterations: 10,
            repeats: 5,
        }
    }
}

/// Times training steps with cached states versus re-advancing the reservoir
/// from the zero state for every sampled experience, over buffers centred at
/// each of the configured stream positions.
pub fn timing_probe(
    net: &NetworkConfig,
    agent_cfg: &AgentConfig,
    num_channels: usize,
    probe: &TimingProbeConfig,
    master_seed: u64,
) -> Result<TimingReport> {
    let m = num_channels;
    let size = probe.buffer_size.max(1);
    let mut points = Vec::with_capacity(probe.mean_ks.len());
    for &k in &probe.mean_ks {
        let start = k.saturating_sub(size / 2);
        let base = agent_with_buffer(net, m, start, size, master_seed)?;
        let mean_k = base.buffer().records().iter().map(|e| e.step as f64).sum::<f64>() / size as f64;
        let measure = |source: StateSource, iterations: usize| -> Result<f64> {
            let cfg = AgentConfig {
                iterations: iterations.max(1),
                ..agent_cfg.clone()
            };
            let mut best = f64::INFINITY;
            for _ in 0..probe.repeats.max(1) {
                let mut agent = base.clone();
                let t0 = Instant::now();
                agent.train(&cfg, cfg.lr_initial, source)?;
                best = best.min(t0.elapsed().as_secs_f64() / cfg.iterations as f64);
            }
            Ok(best)
        };
        let cached = measure(StateSource::Cached, probe.cached_iterations)?;
        let recompute = measure(StateSource::RecomputeFromOrigin, probe.recompute_iterations)?;

        let feature = base.network().feature_dim() as f64;
        let outputs = base.network().output_dim() as f64;
        let advance = base.network().reservoir().advance_flops() as f64;
        let batch = agent_cfg.batch_size as f64;
        // Three readouts (current, evaluation-next, target-next) plus the update.
        let readout = 3.0 * 2.0 * outputs * feature + 2.0 * feature;
        points.push(TimingPoint {
            mean_k,
            cached_seconds_per_iteration: cached,
            recompute_seconds_per_iteration: recompute,
            cached_flops_per_iteration: batch * readout,
            recompute_flops_per_iteration: batch * (readout + (mean_k + 2.0) * advance),
        });
    }
    let ks: Vec<f64> = points.iter().map(|p| p.mean_k).collect();
    let cached: Vec<f64> = points.iter().map(|p| p.cached_seconds_per_iteration).collect();
    let recompute: Vec<f64> = points.iter().map(|p| p.recompute_seconds_per_iteration).collect();
    let (cached_slope, cached_slope_stderr) = linear_slope(&ks, &cached);
    let (recompute_slope, _) = linear_slope(&ks, &recompute);
    Ok(TimingReport {
        points,
        cached_slope,
        cached_slope_stderr,
        recompute_slope,
    })
}

impl TimingReport {
    /// The cached cost shows no dependence on k: the slope is within three
    /// standard errors of zero, or the fitted change across the probed k
    /// range is below 10% of the mean cached cost.
    pub fn cached_slope_consistent_with_zero(&self) -> bool {
        let ks: Vec<f64> = self.points.iter().map(|p| p.mean_k).collect();
        let span = ks.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ks.iter().copied().fold(f64::INFINITY, f64::min);
        let mean_cost = mean(&self.points.iter().map(|p| p.cached_seconds_per_iteration).collect::<Vec<_>>());
        self.cached_slope.abs() <= 3.0 * self.cached_slope_stderr || (self.cached_slope * span).abs() < 0.1 * mean_cost
    }

    /// Analytic cached cost is identical at every k.
    pub fn cached_flops_constant(&self) -> bool {
        self.points.windows(2).all(|w| w[0].cached_flops_per_iteration == w[1].cached_flops_per_iteration)
    }
}

pub fn write_timing_report(report: &TimingReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "mean_k",
        "cached_s_per_iter",
        "recompute_s_per_iter",
        "speedup",
        "cached_flops_per_iter",
        "recompute_flops_per_iter",
    ])?;
    for p in &report.points {
        w.write_record([
            p.mean_k.to_string(),
            p.cached_seconds_per_iteration.to_string(),
            p.recompute_seconds_per_iteration.to_string(),
            p.speedup().to_string(),
            p.cached_flops_per_iteration.to_string(),
            p.recompute_flops_per_iteration.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Schedule used on the toy problems: short rounds, full exploration at
/// first, decaying to 0.25 by round 50 so every state keeps being visited.
pub fn toy_agent_config() -> AgentConfig {
    AgentConfig {
        gamma: 0.9,
        epsilon0: 1.0,
        epsilon_decay_per_round: 0.015,
        lr_initial: 0.01,
        lr_reduced: 0.01,
        lr_switch_epsilon: 0.0,
        batch_size: 32,
        iterations: 200,
        buffer_size: 200,
    }
}

/// Greedy policy of a DEQN agent on a one-hot-observed problem. For each
/// state the greedy actions at every buffered visit (with the reservoir
/// context the agent actually had) are tallied and the majority wins, ties
/// to the lower action. States absent from the buffer are scored from the
/// agent's current reservoir state.
pub fn learned_policy(agent: &DeqnAgent, num_states: usize) -> Result<Vec<usize>> {
    let num_actions = agent.network().output_dim();
    let mut votes = vec![vec![0usize; num_actions]; num_states];
    for e in agent.buffer().records() {
        let Some(s) = e.state_k.iter().position(|&x| x == 1.0) else {
            continue;
        };
        let a = crate::agent::greedy_action(&agent.q_values(&e.state_k, &e.hidden_k)?)?;
        votes[s][a] += 1;
    }
    (0..num_states)
        .map(|s| {
            if votes[s].iter().any(|&v| v > 0) {
                let mut best = 0;
                for (a, &v) in votes[s].iter().enumerate() {
                    if v > votes[s][best] {
                        best = a;
                    }
                }
                return Ok(best);
            }
            let mut obs = vec![0.0; num_states];
            obs[s] = 1.0;
            let h = agent.network().advance(agent.hidden(), &obs)?;
            crate::agent::greedy_action(&agent.q_values(&obs, &h)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTestResult {
    pub oracle_q: Vec<Vec<f64>>,
    pub oracle_policy: Vec<usize>,
    /// Greedy policy after the last round.
    pub learned_policy: Vec<usize>,
    /// First round (1-based) after which the policies agreed.
    pub first_match: Option<usize>,
    pub rounds_run: usize,
}

impl OracleTestResult {
    pub fn final_match(&self) -> bool {
        self.learned_policy == self.oracle_policy
    }
}

/// Trains one learner on the 4-state ring MDP for `rounds` rounds and
/// compares its greedy policy with the value-iteration policy.
pub fn oracle_test(net: &NetworkConfig, agent_cfg: &AgentConfig, seed: u64, rounds: usize) -> Result<OracleTestResult> {
    let mdp = ring_mdp(agent_cfg.gamma);
    let oracle_q = toy_mdp_oracle(&mdp)?;
    let oracle_policy = greedy_policy(&oracle_q);
    let agent = DeqnAgent::new(mdp.num_states, mdp.num_actions, net, agent_cfg.buffer_size, seed, 0)?;
    let mut trainer = Trainer::new(vec![Learner::Deqn(Box::new(agent))], agent_cfg.clone());
    let mut env = MdpEnv::new(mdp, 0, seed)?;
    let mut learned = Vec::new();
    let mut first_match = None;
    for round in 1..=rounds {
        let z = agent_cfg.buffer_size;
        trainer.collect(&mut env, z, |_| Ok(()))?;
        trainer.train()?;
        learned = learned_policy(trainer.deqn(0).expect("learner is a DEQN"), oracle_policy.len())?;
        trainer.finish_round();
        if first_match.is_none() && learned == oracle_policy {
            first_match = Some(round);
        }
    }
    Ok(OracleTestResult {
        oracle_q,
        oracle_policy,
        learned_policy: learned,
        first_match,
        rounds_run: rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_length_and_values() {
        let xs: Vec<f64> = (0..1000).map(f64::from).collect();
        let ma = moving_average(&xs, 300);
        assert_eq!(ma.len(), 701);
        assert_eq!(ma[0], 149.5);
        assert!(moving_average(&xs[..10], 300).is_empty());
    }

    #[test]
    fn slope_of_a_line() {
        let (s, e) = linear_slope(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]);
        assert!((s - 2.0).abs() < 1e-12);
        assert!(e.abs() < 1e-9);
    }

    #[test]
    fn pooled_warning_frequency() {
        let r = |heard: Vec<usize>, active: Vec<usize>| RoundMetrics {
            round: 0,
            epsilon: 0.0,
            learning_rate: 0.0,
            pu_system_throughput: 0.0,
            su_system_throughput: 0.0,
            mean_reward: 0.0,
            warnings_heard: heard,
            pu_active_periods: active,
            agent_mean_reward: vec![],
            agent_mean_loss: vec![],
            train_seconds: 0.0,
        };
        let m = RunMetrics {
            rounds: vec![r(vec![1, 0], vec![2, 0]), r(vec![3, 0], vec![2, 4])],
            period_pu_throughput: vec![],
            period_su_throughput: vec![],
            period_mean_reward: vec![],
            period_seconds: 0.01,
        };
        assert_eq!(m.warning_frequency(0..2), vec![1.0, 0.0]);
        assert_eq!(m.warning_frequency(0..1), vec![0.5, 0.0]);
        assert_eq!(m.mean_warning_frequency(0..1), 0.25);
    }
}
