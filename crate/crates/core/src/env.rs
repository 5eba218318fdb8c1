//! The dynamic spectrum sharing environment.
//!
//! Each period of `T` slots starts with `T_s` sensing slots followed by
//! `T - T_s` transmission slots. An SU transmits (or stays idle) on the
//! channel it sensed at the start of the period and picks the channel it will
//! sense next period. PU `m` owns channel `m` and transmits whenever its
//! schedule says it is active.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelBank, ChannelModelConfig, Geometry, NodeId, PeriodGains};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::phy::{self, PeriodView, UserId};
use crate::seed;

/// One step of a multi-agent environment.
#[derive(Debug, Clone)]
pub struct Transition<I> {
    pub rewards: Vec<f64>,
    /// Observation of every agent for the next step.
    pub observations: Vec<Vec<f64>>,
    pub info: I,
}

/// Environment interface driven by [`crate::agent::Trainer`]. All agents act
/// simultaneously on the same snapshot.
pub trait MultiAgentEnv {
    type Info;

    fn num_agents(&self) -> usize;
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Current observation of every agent.
    fn observations(&self) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[usize]) -> Result<Transition<Self::Info>>;
}

/// Square-wave activity: active while `floor((k + phase) / multiple)` is even.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PuSchedule {
    pub multiple: usize,
    pub phase: usize,
}

impl PuSchedule {
    pub fn new(multiple: usize, phase: usize) -> Self {
        assert!(multiple >= 1, "period multiple must be >= 1");
        Self { multiple, phase }
    }

    pub fn is_active(&self, period: usize) -> bool {
        pu_activity(self, period)
    }

    /// A schedule that is never active.
    pub fn silent() -> Self {
        Self {
            multiple: usize::MAX / 2,
            phase: usize::MAX / 2,
        }
    }
}

pub fn pu_activity(schedule: &PuSchedule, period: usize) -> bool {
    (period.wrapping_add(schedule.phase) / schedule.multiple).is_multiple_of(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuState {
    pub energy_feature: f64,
    pub sensed_channel: usize,
    pub num_channels: usize,
}

impl SuState {
    pub fn onehot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_channels];
        v[self.sensed_channel] = 1.0;
        v
    }

    /// `[energy_feature, one-hot(sensed channel)]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.num_channels);
        v.push(self.energy_feature);
        v.extend(self.onehot());
        v
    }

    pub fn from_vector(v: &[f64]) -> Option<Self> {
        let onehot = v.get(1..)?;
        let mut hot = onehot.iter().enumerate().filter(|(_, &x)| x != 0.0);
        let (channel, &x) = hot.next()?;
        if x != 1.0 || hot.next().is_some() {
            return None;
        }
        Some(Self {
            energy_feature: v[0],
            sensed_channel: channel,
            num_channels: onehot.len(),
        })
    }
}

/// Joint decision. Channels are zero-based here; the flat index is
/// `access * M + next_channel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuAction {
    pub access: bool,
    pub next_channel: usize,
}

impl SuAction {
    pub fn from_index(index: usize, num_channels: usize) -> Self {
        assert!(index < 2 * num_channels, "action index out of range");
        Self {
            access: index >= num_channels,
            next_channel: index % num_channels,
        }
    }

    pub fn index(&self, num_channels: usize) -> usize {
        usize::from(self.access) * num_channels + self.next_channel
    }
}

pub const WARNING_EFFICIENCY: f64 = 1.5;

/// Reward tiers with the default 1.5 bits/symbol PU protection threshold.
pub fn reward_of(accessed: bool, pu_efficiency: Option<f64>, su_efficiency: f64) -> i32 {
    reward_with_threshold(accessed, pu_efficiency, su_efficiency, WARNING_EFFICIENCY)
}

/// `pu_efficiency` is `None` when the channel's PU did not transmit, in which
/// case only the SU-efficiency tiers apply.
pub fn reward_with_threshold(
    accessed: bool,
    pu_efficiency: Option<f64>,
    su_efficiency: f64,
    warning_threshold: f64,
) -> i32 {
    if !accessed {
        return -1;
    }
    if pu_efficiency.is_some_and(|e| e < warning_threshold) {
        return -2;
    }
    match su_efficiency {
        e if e >= 3.0 => 3,
        e if e >= 2.0 => 2,
        e if e >= 1.0 => 1,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodOutcome {
    pub period: usize,
    pub actions: Vec<SuAction>,
    /// Channel each SU sensed (and would transmit on) this period.
    pub channels: Vec<usize>,
    pub su_rewards: Vec<i32>,
    /// Zero for idle SUs.
    pub su_efficiencies: Vec<f64>,
    /// `None` for PUs inactive this period.
    pub pu_efficiencies: Vec<Option<f64>>,
    pub pu_active: Vec<bool>,
    pub warnings: Vec<bool>,
    /// Warning raised and at least one SU accessed that channel.
    pub warnings_heard: Vec<bool>,
    pub pu_throughputs: Vec<f64>,
    pub su_throughputs: Vec<f64>,
}

impl PeriodOutcome {
    pub fn pu_system_throughput(&self) -> f64 {
        self.pu_throughputs.iter().sum()
    }

    pub fn su_system_throughput(&self) -> f64 {
        self.su_throughputs.iter().sum()
    }

    pub fn mean_reward(&self) -> f64 {
        self.su_rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / self.su_rewards.len() as f64
    }

    fn warning_flags(&self) -> String {
        self.warnings.iter().map(|&w| if w { '1' } else { '0' }).collect()
    }
}

/// Per-period PU efficiencies with no SU transmitting.
#[derive(Debug, Clone, PartialEq)]
pub struct PuOnlyOutcome {
    pub period: usize,
    pub pu_efficiencies: Vec<Option<f64>>,
    pub pu_throughputs: Vec<f64>,
}

/// Affine map `(log10(E) - mean) / std` frozen after calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyNormalizer {
    pub mean: f64,
    pub std: f64,
}

impl EnergyNormalizer {
    /// Smallest energy fed to the logarithm.
    const ENERGY_FLOOR: f64 = 1e-300;

    pub fn log_energy(energy: f64) -> f64 {
        energy.max(Self::ENERGY_FLOOR).log10()
    }

    pub fn fit(log_energies: &[f64]) -> Self {
        let n = log_energies.len() as f64;
        let mean = log_energies.iter().sum::<f64>() / n;
        let var = log_energies.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn feature(&self, energy: f64) -> f64 {
        (Self::log_energy(energy) - self.mean) / self.std
    }
}

pub struct DssEnv {
    cfg: ScenarioConfig,
    geometry: Geometry,
    bank: ChannelBank,
    gains: PeriodGains,
    period: usize,
    schedules: Vec<PuSchedule>,
    noise_mw: f64,
    normalizers: Vec<EnergyNormalizer>,
    states: Vec<SuState>,
    sensing_rngs: Vec<ChaCha8Rng>,
    last_energy: Vec<f64>,
}

impl DssEnv {
    /// Builds the world, runs the sensing-only calibration periods to freeze
    /// each SU's energy normalization, then has every SU sense a random
    /// channel to form its first state.
    pub fn new(
        cfg: &ScenarioConfig,
        channel: &ChannelModelConfig,
        geometry: Geometry,
        seed: u64,
    ) -> Result<Self> {
        let schedules = (0..cfg.num_pus)
            .map(|m| PuSchedule::new(cfg.pu_multiple(m), cfg.pu_phase(m)))
            .collect();
        Self::with_schedules(cfg, channel, geometry, seed, schedules)
    }

    pub fn with_schedules(
        cfg: &ScenarioConfig,
        channel: &ChannelModelConfig,
        geometry: Geometry,
        seed: u64,
        schedules: Vec<PuSchedule>,
    ) -> Result<Self> {
        cfg.validate()?;
        channel.validate()?;
        if geometry.num_pus != cfg.num_pus || geometry.num_sus != cfg.num_sus {
            return Err(Error::config("num_pus", "geometry does not match scenario"));
        }
        if schedules.len() != cfg.num_pus {
            return Err(Error::config("pu_period_multiples", "need one schedule per PU"));
        }
        let mut bank = ChannelBank::new(&geometry, channel, seed::derive(seed, "channel", 0), cfg.period_slots)?;
        let gains = bank.next_period();
        let n = cfg.num_sus;
        let mut env = Self {
            cfg: cfg.clone(),
            geometry,
            bank,
            gains,
            period: 0,
            schedules,
            noise_mw: cfg.noise_mw(),
            normalizers: vec![EnergyNormalizer { mean: 0.0, std: 1.0 }; n],
            states: Vec::new(),
            sensing_rngs: (0..n).map(|i| seed::rng(seed, "sensing", i as u64)).collect(),
            last_energy: vec![0.0; n],
        };

        let m = cfg.num_pus;
        let mut samples = vec![Vec::with_capacity(cfg.calibration_periods); n];
        for k in 0..cfg.calibration_periods {
            for (su, s) in samples.iter_mut().enumerate() {
                let e = env.sense(su, (k + su) % m)?;
                s.push(EnergyNormalizer::log_energy(e));
            }
            env.advance_period();
        }
        env.normalizers = samples.iter().map(|s| EnergyNormalizer::fit(s)).collect();

        let mut pick = seed::rng(seed, "initial-channel", 0);
        let first: Vec<usize> = (0..n).map(|_| pick.random_range(0..m)).collect();
        env.states = first
            .iter()
            .enumerate()
            .map(|(su, &ch)| env.observe(su, ch))
            .collect::<Result<_>>()?;
        Ok(env)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Index of the current period (counting calibration periods).
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn states(&self) -> &[SuState] {
        &self.states
    }

    pub fn normalizers(&self) -> &[EnergyNormalizer] {
        &self.normalizers
    }

    pub fn schedules(&self) -> &[PuSchedule] {
        &self.schedules
    }

    pub fn last_raw_energy(&self, su: usize) -> f64 {
        self.last_energy[su]
    }

    pub fn pu_active(&self, pu: usize, period: usize) -> bool {
        self.schedules[pu].is_active(period)
    }

    fn advance_period(&mut self) {
        self.gains = self.bank.next_period();
        self.period += 1;
    }

    fn view(&self) -> PeriodView<'_> {
        PeriodView {
            geometry: &self.geometry,
            gains: &self.gains,
        }
    }

    fn power_of(&self, user: UserId) -> f64 {
        match user {
            UserId::Pu(_) => self.cfg.pu_power_mw,
            UserId::Su(_) => self.cfg.su_power_mw,
        }
    }

    /// Raw energy detected by `su` on `channel` over this period's sensing slots.
    fn sense(&mut self, su: usize, channel: usize) -> Result<f64> {
        let m = self.cfg.num_pus;
        if channel >= m {
            return Err(Error::InvalidChannel {
                channel,
                num_channels: m,
            });
        }
        let active = self.pu_active(channel, self.period);
        let link = self
            .geometry
            .link_between(NodeId::PuTx(channel), NodeId::SuTx(su))
            .ok_or_else(|| Error::MissingGain {
                tx: NodeId::PuTx(channel).to_string(),
                rx: NodeId::SuTx(su).to_string(),
                slot: 0,
            })?;
        let gains = &self.gains;
        let result = phy::sense_energy(
            channel,
            0,
            self.cfg.sense_slots,
            &|_| active,
            &|t| gains.power(link, t),
            self.cfg.pu_power_mw,
            self.noise_mw,
            &mut self.sensing_rngs[su],
        )?;
        self.last_energy[su] = result.energy;
        Ok(result.energy)
    }

    /// Senses `channel` for `su` in the current period and builds its state.
    pub fn observe(&mut self, su: usize, channel: usize) -> Result<SuState> {
        let energy = self.sense(su, channel)?;
        Ok(SuState {
            energy_feature: self.normalizers[su].feature(energy),
            sensed_channel: channel,
            num_channels: self.cfg.num_pus,
        })
    }

    /// Average per-slot efficiency of every transmitter on one channel.
    fn channel_efficiencies(&self, transmitters: &[UserId]) -> Result<Vec<f64>> {
        let view = self.view();
        let power = |u: UserId| self.power_of(u);
        let mut sums = vec![0.0; transmitters.len()];
        for slot in self.cfg.sense_slots..self.cfg.period_slots {
            for (i, &u) in transmitters.iter().enumerate() {
                let s = phy::compute_sinr(u, slot, transmitters, &view, &power, self.noise_mw)?;
                sums[i] += phy::efficiency_of_sinr(s);
            }
        }
        let n = self.cfg.transmit_slots() as f64;
        Ok(sums.into_iter().map(|s| s / n).collect())
    }

    /// Runs the transmission part of the current period, then moves to the
    /// next period and senses each SU's chosen channel.
    pub fn step_actions(&mut self, actions: &[SuAction]) -> Result<(PeriodOutcome, Vec<SuState>)> {
        let (m, n) = (self.cfg.num_pus, self.cfg.num_sus);
        if actions.len() != n {
            return Err(Error::Dimension {
                context: "step actions",
                expected: n,
                got: actions.len(),
            });
        }
        for a in actions {
            if a.next_channel >= m {
                return Err(Error::InvalidChannel {
                    channel: a.next_channel,
                    num_channels: m,
                });
            }
        }
        let k = self.period;
        let channels: Vec<usize> = self.states.iter().map(|s| s.sensed_channel).collect();
        let pu_active: Vec<bool> = (0..m).map(|p| self.pu_active(p, k)).collect();

        let mut su_eff = vec![0.0; n];
        let mut pu_eff = vec![None; m];
        for ch in 0..m {
            let mut tx = Vec::new();
            if pu_active[ch] {
                tx.push(UserId::Pu(ch));
            }
            tx.extend((0..n).filter(|&s| actions[s].access && channels[s] == ch).map(UserId::Su));
            if tx.is_empty() {
                continue;
            }
            for (u, e) in tx.iter().zip(self.channel_efficiencies(&tx)?) {
                match *u {
                    UserId::Pu(p) => pu_eff[p] = Some(e),
                    UserId::Su(s) => su_eff[s] = e,
                }
            }
        }

        let thr = self.cfg.warning_threshold;
        let warnings: Vec<bool> = pu_eff.iter().map(|e| e.is_some_and(|e| e < thr)).collect();
        let warnings_heard = (0..m)
            .map(|ch| warnings[ch] && (0..n).any(|s| actions[s].access && channels[s] == ch))
            .collect();
        let su_rewards = (0..n)
            .map(|s| reward_with_threshold(actions[s].access, pu_eff[channels[s]], su_eff[s], thr))
            .collect();
        let bw = self.cfg.bandwidth_hz;
        let outcome = PeriodOutcome {
            period: k,
            actions: actions.to_vec(),
            channels,
            su_rewards,
            su_throughputs: su_eff.iter().map(|&e| phy::throughput(e, bw)).collect(),
            su_efficiencies: su_eff,
            pu_throughputs: pu_eff.iter().map(|e| phy::throughput(e.unwrap_or(0.0), bw)).collect(),
            pu_efficiencies: pu_eff,
            pu_active,
            warnings,
            warnings_heard,
        };

        self.advance_period();
        let next = actions
            .iter()
            .enumerate()
            .map(|(s, a)| self.observe(s, a.next_channel))
            .collect::<Result<Vec<_>>>()?;
        self.states = next.clone();
        Ok((outcome, next))
    }

    /// PU efficiencies for the current period with every SU silent, then
    /// moves to the next period. SU states are not refreshed.
    pub fn step_pu_only(&mut self) -> Result<PuOnlyOutcome> {
        let m = self.cfg.num_pus;
        let k = self.period;
        let mut pu_eff = vec![None; m];
        for (ch, eff) in pu_eff.iter_mut().enumerate() {
            if self.pu_active(ch, k) {
                *eff = Some(self.channel_efficiencies(&[UserId::Pu(ch)])?[0]);
            }
        }
        let bw = self.cfg.bandwidth_hz;
        let out = PuOnlyOutcome {
            period: k,
            pu_throughputs: pu_eff.iter().map(|e| phy::throughput(e.unwrap_or(0.0), bw)).collect(),
            pu_efficiencies: pu_eff,
        };
        self.advance_period();
        Ok(out)
    }
}

impl MultiAgentEnv for DssEnv {
    type Info = PeriodOutcome;

    fn num_agents(&self) -> usize {
        self.cfg.num_sus
    }

    fn observation_dim(&self) -> usize {
        1 + self.cfg.num_pus
    }

    fn num_actions(&self) -> usize {
        2 * self.cfg.num_pus
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(SuState::to_vector).collect()
    }

    fn step(&mut self, actions: &[usize]) -> Result<Transition<PeriodOutcome>> {
        let m = self.cfg.num_pus;
        let decoded = actions
            .iter()
            .map(|&a| {
                if a < 2 * m {
                    Ok(SuAction::from_index(a, m))
                } else {
                    Err(Error::Dimension {
                        context: "action index",
                        expected: 2 * m,
                        got: a,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (outcome, next) = self.step_actions(&decoded)?;
        Ok(Transition {
            rewards: outcome.su_rewards.iter().map(|&r| f64::from(r)).collect(),
            observations: next.iter().map(SuState::to_vector).collect(),
            info: outcome,
        })
    }
}

/// Writer for the per-period trace
/// `k,su,action_q,action_z,reward,su_eff,pu_eff,warning_flags`.
/// `action_z` is one-based.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record([
            "k", "su", "action_q", "action_z", "reward", "su_eff", "pu_eff", "warning_flags",
        ])?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, o: &PeriodOutcome) -> Result<()> {
        let flags = o.warning_flags();
        for (su, a) in o.actions.iter().enumerate() {
            let pu_eff = if a.access {
                o.pu_efficiencies[o.channels[su]].map(|e| e.to_string()).unwrap_or_default()
            } else {
                String::new()
            };
            self.inner.write_record([
                o.period.to_string(),
                (su + 1).to_string(),
                u8::from(a.access).to_string(),
                (a.next_channel + 1).to_string(),
                o.su_rewards[su].to_string(),
                o.su_efficiencies[su].to_string(),
                pu_eff,
                flags.clone(),
            ])?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
