//! End-to-end runs through the harness and the command-line interface.

use std::path::Path;
use std::process::Command;

use deqn::config::{AgentKind, ExperimentConfig};
use deqn::esn::DeqnNetwork;
use deqn::harness::{self, RunMetrics, MOVING_AVERAGE_WINDOW};

fn small(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        total_samples: 900,
        seed,
        ..ExperimentConfig::default()
    }
}

fn without_wall_clock(mut m: RunMetrics) -> RunMetrics {
    for r in &mut m.rounds {
        r.train_seconds = 0.0;
    }
    m
}

#[test]
fn default_run_has_two_hundred_rounds() {
    assert_eq!(ExperimentConfig::default().num_rounds(), 200);
    assert_eq!(harness::run_experiment(&small(1)).unwrap().num_rounds(), 3);
}

#[test]
fn parallel_training_does_not_change_results() {
    let mut serial = small(4);
    serial.parallel_training = false;
    let mut parallel = small(4);
    parallel.parallel_training = true;
    let a = without_wall_clock(harness::run_experiment(&serial).unwrap());
    let b = without_wall_clock(harness::run_experiment(&parallel).unwrap());
    assert_eq!(a, b);
}

#[test]
fn mixed_agent_kinds_run() {
    let mut cfg = small(2);
    cfg.agent_kinds = vec![AgentKind::Deqn1, AgentKind::Deqn2, AgentKind::Dqn0, AgentKind::Random, AgentKind::Threshold];
    let m = harness::run_experiment(&cfg).unwrap();
    assert_eq!(m.rounds[0].agent_mean_loss.iter().filter(|l| l.is_some()).count(), 4);
}

fn never_access(seed: u64) -> ExperimentConfig {
    let mut cfg = small(seed);
    cfg.set_all_agents(AgentKind::Threshold);
    cfg.threshold_feature = f64::NEG_INFINITY;
    cfg
}

#[test]
fn idle_population_earns_minus_one_and_no_throughput() {
    let m = harness::run_experiment(&never_access(3)).unwrap();
    assert!(m.period_su_throughput.iter().all(|&t| t == 0.0));
    assert!(m.period_mean_reward.iter().all(|&r| r == -1.0));
    assert!(m.rounds.iter().all(|r| r.mean_reward == -1.0 && r.su_system_throughput == 0.0));
    assert!(m.rounds.iter().all(|r| r.warnings_heard.iter().all(|&w| w == 0)));
}

#[test]
fn pu_baseline_equals_never_access_run_bit_exactly() {
    let cfg = never_access(5);
    let run = harness::run_experiment(&cfg).unwrap();
    let base = harness::run_pu_only_baseline(&cfg).unwrap();
    assert_eq!(run.period_pu_throughput, base.period_pu_throughput);
    let per_round: Vec<f64> = run.rounds.iter().map(|r| r.pu_system_throughput).collect();
    assert_eq!(per_round, base.round_pu_throughput);
    assert!(base.period_pu_throughput.iter().any(|&t| t > 0.0));
}

#[test]
fn silent_pus_give_zero_baseline() {
    let mut cfg = small(6);
    // Phase shifts every PU into the inactive half of a very long cycle.
    cfg.scenario.pu_period_multiples = vec![1_000_000];
    cfg.scenario.pu_phases = vec![1_000_000];
    let base = harness::run_pu_only_baseline(&cfg).unwrap();
    assert!(base.period_pu_throughput.iter().all(|&t| t == 0.0));
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn run_writes_manifest_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(7);
    cfg.out_dir = Some(dir.path().to_path_buf());
    cfg.write_trace = true;
    let m = harness::run_experiment(&cfg).unwrap();

    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "manifest.json")).unwrap();
    let c = &manifest["config"];
    assert_eq!(c["agent"]["gamma"], 0.9);
    assert_eq!(c["agent"]["buffer_size"], 300);
    assert_eq!(c["network"]["neurons"], 32);
    assert_eq!(c["network"]["leak"], 0.7);
    assert_eq!(c["channel"]["shadowing_sigma_db"], 8.0);
    assert_eq!(c["scenario"]["noise_dbm"], -157.3);
    assert_eq!(c["seed"], 7);
    assert_eq!(manifest["num_rounds"], 3);
    assert_eq!(manifest["moving_average_window"], 300);

    let rounds = read(dir.path(), "rounds.csv");
    assert!(rounds.starts_with("round,sim_seconds,epsilon,lr,pu_system_throughput,su_system_throughput,mean_reward,warning_freq_pu1"));
    assert_eq!(rounds.lines().count(), 1 + 3);
    let log = read(dir.path(), "training_log.csv");
    assert!(log.starts_with("round,su,mean_loss,epsilon,lr,mean_reward\n"));
    assert_eq!(log.lines().count(), 1 + 3 * 6);
    let ma = read(dir.path(), "moving_average.csv");
    assert_eq!(ma.lines().count() - 1, 900 - (MOVING_AVERAGE_WINDOW - 1));
    let trace = read(dir.path(), "trace.csv");
    assert!(trace.starts_with("k,su,action_q,action_z,reward,su_eff,pu_eff,warning_flags\n"));
    assert_eq!(trace.lines().count(), 1 + 900 * 6);

    // Trace rewards aggregate to the per-period mean reward.
    let mut sums = vec![0.0; 900];
    let mut periods: Vec<usize> = Vec::new();
    for line in trace.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let k: usize = f[0].parse().unwrap();
        if periods.last() != Some(&k) {
            periods.push(k);
        }
        sums[periods.len() - 1] += f[4].parse::<f64>().unwrap();
    }
    for (i, s) in sums.iter().enumerate() {
        assert!((s / 6.0 - m.period_mean_reward[i]).abs() < 1e-12);
    }

    for su in 1..=6 {
        let net = DeqnNetwork::load_json(&read(dir.path(), &format!("network_su{su}.json"))).unwrap();
        assert_eq!(net.config().neurons, 32);
        assert!(dir.path().join(format!("agent_su{su}.json")).exists());
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_deqn")).args(args).output().unwrap()
}

#[test]
fn cli_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "gamma = 1.5\n").unwrap();
    let out = cli(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));

    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = cli(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    std::fs::write(&bad, "total_samples = 1000\n").unwrap();
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(1));

    assert_eq!(cli(&["run", "--config", "/nonexistent/cfg.toml"]).status.code(), Some(1));
    assert_eq!(cli(&["run", "--agent", "lstm"]).status.code(), Some(1));
}

#[test]
fn cli_run_and_baseline_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "total_samples = 600\nnum_sus = 2\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "11",
        "--agent",
        "deqn1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out_dir, "manifest.json")).unwrap();
    assert_eq!(manifest["config"]["seed"], 11);
    assert_eq!(manifest["agent_kind_per_su"], serde_json::json!(["deqn1", "deqn1"]));

    let out = cli(&["pu-baseline", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(read(&out_dir, "pu_baseline.csv").lines().count(), 1 + 2);
}

#[test]
fn cli_gain_dump_matches_generator() {
    let out = cli(&["dump-gains", "--slots", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("link_id,t,re,im\n"));
    assert_eq!(text.lines().count(), 1 + 112 * 3);
}
