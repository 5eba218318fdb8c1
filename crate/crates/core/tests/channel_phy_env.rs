//! Statistical and end-to-end checks of the channel, physical-layer and
//! environment modules.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use deqn::channel::{ChannelModelConfig, Geometry, LinkChannel, NodePosition};
use deqn::config::ScenarioConfig;
use deqn::env::{DssEnv, PuSchedule, SuAction};
use deqn::phy::{efficiency_of_sinr, sense_energy};

const SLOTS: usize = 100_000;

fn fading(rho: f64, link_id: usize, seed: u64) -> Vec<Complex64> {
    let cfg = ChannelModelConfig {
        fading_correlation: rho,
        ..ChannelModelConfig::default()
    };
    let mut ch = LinkChannel::new(420.0, link_id, &cfg, seed).unwrap();
    (0..SLOTS).map(|_| ch.next_fading()).collect()
}

#[test]
fn fading_lag_one_autocorrelation_matches_coefficient() {
    let f = fading(0.999, 7, 11);
    let num: f64 = f.windows(2).map(|w| (w[1] * w[0].conj()).re).sum();
    let den: f64 = f[..SLOTS - 1].iter().map(|x| x.norm_sqr()).sum();
    let r = num / den;
    assert!((r - 0.999).abs() <= 0.01, "lag-1 autocorrelation {r}");
}

#[test]
fn fading_has_unit_power() {
    for (rho, seed) in [(0.0, 1u64), (0.99, 2)] {
        let f = fading(rho, 3, seed);
        let mean = f.iter().map(|x| x.norm_sqr()).sum::<f64>() / SLOTS as f64;
        // |f|^2 is unit-mean exponential with autocorrelation rho^(2 lag);
        // the effective sample count accounts for that correlation.
        let r2 = rho * rho;
        let n_eff = SLOTS as f64 * (1.0 - r2) / (1.0 + r2);
        let sigma = 1.0 / n_eff.sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "rho {rho}: mean power {mean}, 3 sigma {}", 3.0 * sigma);
    }
}

#[test]
fn fading_of_distinct_links_is_uncorrelated() {
    let a = fading(0.9, 0, 5);
    let b = fading(0.9, 1, 5);
    let cross: Complex64 = a.iter().zip(&b).map(|(x, y)| x * y.conj()).sum();
    let pa: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let pb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
    let c = cross.norm() / (pa * pb).sqrt();
    assert!(c < 0.05, "cross-correlation {c}");
}

#[test]
fn energy_mean_with_active_pu_matches_closed_form() {
    let (ts, p, g, noise) = (2usize, 4.0, 0.5, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let trials = 100_000;
    let samples: Vec<f64> = (0..trials)
        .map(|_| sense_energy(0, 0, ts, &|_| true, &|_| Some(g), p, noise, &mut rng).unwrap().energy)
        .collect();
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let var = samples.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let expected = ts as f64 * (p * g + noise);
    let sigma = (var / trials as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * sigma, "mean {mean} vs {expected} (sigma {sigma})");
    assert!(samples.iter().all(|&e| e >= 0.0));
}

fn pos(x: f64, y: f64) -> NodePosition {
    NodePosition { x, y }
}

fn deterministic_channel() -> ChannelModelConfig {
    ChannelModelConfig {
        shadowing_sigma_db: 0.0,
        rayleigh_fading: false,
        ..ChannelModelConfig::default()
    }
}

fn one_pair_scenario() -> ScenarioConfig {
    ScenarioConfig {
        num_pus: 1,
        num_sus: 1,
        calibration_periods: 10,
        ..ScenarioConfig::default()
    }
}

#[test]
fn su_next_to_active_pu_receiver_is_penalised_and_warned() {
    // The SU transmitter sits 1 m from the PU receiver.
    let geometry = Geometry::from_positions(
        vec![pos(0.0, 0.0)],
        vec![pos(400.0, 0.0)],
        vec![pos(401.0, 0.0)],
        vec![pos(801.0, 0.0)],
    )
    .unwrap();
    let mut env = DssEnv::with_schedules(
        &one_pair_scenario(),
        &deterministic_channel(),
        geometry,
        3,
        vec![PuSchedule::new(1_000_000, 0)],
    )
    .unwrap();
    let (o, _) = env
        .step_actions(&[SuAction {
            access: true,
            next_channel: 0,
        }])
        .unwrap();
    let pu = o.pu_efficiencies[0].expect("PU transmits");
    assert!(pu < 1.5, "PU efficiency {pu}");
    assert_eq!(o.su_rewards, vec![-2]);
    assert!(o.warnings[0] && o.warnings_heard[0]);
}

#[test]
fn strong_link_over_idle_pu_earns_top_reward() {
    let geometry = Geometry::from_positions(
        vec![pos(0.0, 0.0)],
        vec![pos(400.0, 0.0)],
        vec![pos(1500.0, 1500.0)],
        vec![pos(1510.0, 1500.0)],
    )
    .unwrap();
    let scenario = one_pair_scenario();
    let channel = deterministic_channel();
    let mut env =
        DssEnv::with_schedules(&scenario, &channel, geometry.clone(), 4, vec![PuSchedule::silent()]).unwrap();
    let (o, _) = env
        .step_actions(&[SuAction {
            access: true,
            next_channel: 0,
        }])
        .unwrap();
    // Independent evaluation: no interferers, so SINR = P g / N.
    let sinr = scenario.su_power_mw * channel.path_gain(10.0) / scenario.noise_mw();
    let eff = efficiency_of_sinr(sinr);
    assert!(eff >= 3.0);
    assert_eq!(o.su_efficiencies[0], eff);
    assert_eq!(o.su_rewards, vec![3]);
    assert_eq!(o.pu_efficiencies[0], None);
    assert!(!o.warnings[0]);
}

#[test]
fn period_invariants_hold_under_random_actions() {
    use deqn::harness::build_world;
    use rand::Rng;
    let cfg = deqn::config::ExperimentConfig::default();
    let mut env = build_world(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, n) = (cfg.scenario.num_pus, cfg.scenario.num_sus);
    let bw = cfg.scenario.bandwidth_hz;
    for _ in 0..300 {
        let actions: Vec<SuAction> = (0..n)
            .map(|_| SuAction::from_index(rng.random_range(0..2 * m), m))
            .collect();
        let (o, states) = env.step_actions(&actions).unwrap();
        for s in &states {
            let hot = s.onehot();
            assert_eq!(hot.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(hot.iter().sum::<f64>(), 1.0);
        }
        for p in 0..m {
            if o.warnings[p] {
                assert!(o.pu_active[p]);
            }
            assert_eq!(o.pu_efficiencies[p].is_some(), o.pu_active[p]);
        }
        for (s, a) in actions.iter().enumerate() {
            if !a.access {
                assert_eq!(o.su_rewards[s], -1);
                assert_eq!(o.su_throughputs[s], 0.0);
            }
            assert!([-2, -1, 0, 1, 2, 3].contains(&o.su_rewards[s]));
        }
        // System throughput against independent per-user accumulation.
        let su: f64 = o.su_efficiencies.iter().map(|e| e * bw).sum();
        let pu: f64 = o.pu_efficiencies.iter().map(|e| e.unwrap_or(0.0) * bw).sum();
        assert!((o.su_system_throughput() - su).abs() <= 1e-9 * su.max(1.0));
        assert!((o.pu_system_throughput() - pu).abs() <= 1e-9 * pu.max(1.0));
    }
}
