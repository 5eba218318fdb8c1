use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deqn::channel::{generate_gain_series, write_gain_csv};
use deqn::config::{AgentKind, ExperimentConfig};
use deqn::esn::NetworkConfig;
use deqn::harness::{self, world_geometry};
use deqn::phy::write_cqi_csv;
use deqn::{Error, Result};

#[derive(Parser)]
#[command(name = "deqn", version, about = "Echo-state Q-learning for dynamic spectrum sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value config file; missing keys use defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Controller for every SU (overrides `agent_kind`).
    #[arg(long)]
    agent: Option<AgentKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Full training run; writes metric CSVs, manifest and checkpoints.
    Run(Common),
    /// PU system throughput with no SU transmitting.
    PuBaseline(Common),
    /// Cached versus recompute-from-origin training cost.
    Timing(Common),
    /// Value-iteration oracle versus the learner on the 4-state toy MDP.
    OracleTest(Common),
    /// The SINR to CQI table as CSV.
    DumpCqi(Common),
    /// Geometry and per-slot complex gains of every link as CSV.
    DumpGains {
        #[command(flatten)]
        common: Common,
        /// Number of slots per link.
        #[arg(long, default_value_t = 100)]
        slots: usize,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(kind) = common.agent {
        cfg.set_all_agents(kind);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(out: Option<&Path>, name: &str) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Box::new(BufWriter::new(fs::File::create(dir.join(name))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(c) => {
            let cfg = load(&c)?;
            let metrics = harness::run_experiment(&cfg)?;
            let last = metrics.last(20);
            println!("rounds: {}", metrics.num_rounds());
            println!("final-20 PU system throughput: {:.6e} bit/s", metrics.mean_pu_throughput(last.clone()));
            println!("final-20 SU system throughput: {:.6e} bit/s", metrics.mean_su_throughput(last.clone()));
            println!("final-20 mean SU reward: {:.4}", metrics.mean_reward(last.clone()));
            println!("final-20 warning frequency per PU: {:?}", metrics.warning_frequency(last));
        }
        Command::PuBaseline(c) => {
            let cfg = load(&c)?;
            let base = harness::run_pu_only_baseline(&cfg)?;
            println!("mean PU system throughput: {:.6e} bit/s", base.mean(0..base.round_pu_throughput.len()));
        }
        Command::Timing(c) => {
            let cfg = load(&c)?;
            let net = NetworkConfig {
                layers: cfg.agent_kind(0).reservoir_layers().filter(|&l| l > 0).unwrap_or(2),
                ..cfg.network.clone()
            };
            let report = harness::timing_probe(
                &net,
                &cfg.agent,
                cfg.scenario.num_pus,
                &harness::TimingProbeConfig::default(),
                cfg.seed,
            )?;
            harness::write_timing_report(&report, output(cfg.out_dir.as_deref(), "timing_probe.csv")?)?;
            eprintln!(
                "cached slope {:.3e} s/iter per k (stderr {:.3e}, consistent with zero: {}); recompute slope {:.3e}",
                report.cached_slope,
                report.cached_slope_stderr,
                report.cached_slope_consistent_with_zero(),
                report.recompute_slope
            );
        }
        Command::OracleTest(c) => {
            let cfg = load(&c)?;
            let layers = cfg.agent_kind(0).reservoir_layers().unwrap_or(2);
            let net = NetworkConfig { layers, ..cfg.network.clone() };
            let r = harness::oracle_test(&net, &harness::toy_agent_config(), cfg.seed, 50)?;
            println!("oracle Q*: {:?}", r.oracle_q);
            println!("oracle policy:  {:?}", r.oracle_policy);
            println!("learned policy: {:?}", r.learned_policy);
            if let Some(round) = r.first_match {
                println!("first matched after round {round}");
            }
            if r.final_match() {
                println!("match after {} rounds", r.rounds_run);
            } else {
                println!("no match after {} rounds", r.rounds_run);
                return Err(Error::Divergence(format!(
                    "learned policy differs from the oracle after {} rounds",
                    r.rounds_run
                )));
            }
        }
        Command::DumpCqi(c) => {
            let out = c.out.as_deref();
            write_cqi_csv(output(out, "cqi.csv")?)?;
        }
        Command::DumpGains { common, slots } => {
            let cfg = load(&common)?;
            let geometry = world_geometry(&cfg)?;
            let series = geometry
                .links
                .iter()
                .map(|l| generate_gain_series(l, &geometry, &cfg.channel, harness::channel_seed(&cfg), slots))
                .collect::<Result<Vec<_>>>()?;
            if let Some(dir) = cfg.out_dir.as_deref() {
                geometry.write_csv(output(Some(dir), "geometry.csv")?)?;
            }
            write_gain_csv(&series, output(cfg.out_dir.as_deref(), "gains.csv")?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors; bad arguments are
            // configuration errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

