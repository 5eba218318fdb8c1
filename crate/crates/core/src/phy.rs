//! Link-level arithmetic: SINR, energy detection, CQI lookup and throughput.
//!
//! Powers are linear milliwatts throughout; dB only appears at the CQI lookup.

use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::channel::{complex_gaussian, Geometry, NodeId, PeriodGains};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    OutOfRange,
    Qpsk,
    Qam16,
    Qam64,
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::OutOfRange => "out of range",
            Modulation::Qpsk => "QPSK",
            Modulation::Qam16 => "16QAM",
            Modulation::Qam64 => "64QAM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqiRow {
    pub cqi: u8,
    /// Inclusive lower SINR bound in dB; `-inf` for index 0.
    pub sinr_threshold_db: f64,
    pub modulation: Modulation,
    pub code_rate_x1024: u16,
    pub efficiency: f64,
}

const fn row(cqi: u8, th: f64, modulation: Modulation, rate: u16, eff: f64) -> CqiRow {
    CqiRow {
        cqi,
        sinr_threshold_db: th,
        modulation,
        code_rate_x1024: rate,
        efficiency: eff,
    }
}

use Modulation::{OutOfRange, Qam16, Qam64, Qpsk};

/// 4-bit LTE CQI table with SINR switching points.
pub const CQI_TABLE: [CqiRow; 16] = [
    row(0, f64::NEG_INFINITY, OutOfRange, 0, 0.0),
    row(1, -6.9360, Qpsk, 78, 0.1523),
    row(2, -5.1470, Qpsk, 120, 0.2344),
    row(3, -3.1800, Qpsk, 193, 0.3770),
    row(4, -1.2530, Qpsk, 308, 0.6016),
    row(5, 0.7610, Qpsk, 449, 0.8770),
    row(6, 2.6990, Qpsk, 602, 1.1758),
    row(7, 4.6940, Qam16, 378, 1.4766),
    row(8, 6.5250, Qam16, 490, 1.9141),
    row(9, 8.5730, Qam16, 616, 2.4063),
    row(10, 10.3660, Qam64, 466, 2.7305),
    row(11, 12.2890, Qam64, 567, 3.3223),
    row(12, 14.1730, Qam64, 666, 3.9023),
    row(13, 15.8880, Qam64, 772, 4.5234),
    row(14, 17.8140, Qam64, 873, 5.1152),
    row(15, 19.8290, Qam64, 948, 5.5547),
];

/// Highest CQI whose threshold is at or below `sinr_db`, with its efficiency.
pub fn sinr_to_efficiency(sinr_db: f64) -> (u8, f64) {
    CQI_TABLE
        .iter()
        .rev()
        .find(|r| r.sinr_threshold_db <= sinr_db)
        .map(|r| (r.cqi, r.efficiency))
        .unwrap_or((0, 0.0))
}

/// Same lookup on a linear SINR.
pub fn efficiency_of_sinr(sinr: f64) -> f64 {
    if sinr <= 0.0 {
        return 0.0;
    }
    sinr_to_efficiency(10.0 * sinr.log10()).1
}

/// Writes the table as `cqi,thresh_db,mod,rate,eff`. Row 0 has empty
/// threshold, rate and efficiency columns.
pub fn write_cqi_csv<W: Write>(out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cqi", "thresh_db", "mod", "rate", "eff"])?;
    for r in &CQI_TABLE {
        if r.modulation == Modulation::OutOfRange {
            w.write_record([r.cqi.to_string(), String::new(), r.modulation.to_string(), String::new(), String::new()])?;
        } else {
            w.write_record([
                r.cqi.to_string(),
                format!("{:.4}", r.sinr_threshold_db),
                r.modulation.to_string(),
                r.code_rate_x1024.to_string(),
                format!("{:.4}", r.efficiency),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn throughput(efficiency: f64, bandwidth_hz: f64) -> f64 {
    efficiency * bandwidth_hz
}

/// SINR from already-resolved received powers: desired / (interference + noise).
pub fn sinr(desired_rx_mw: f64, interference_rx_mw: impl IntoIterator<Item = f64>, noise_mw: f64) -> f64 {
    let interference: f64 = interference_rx_mw.into_iter().sum();
    desired_rx_mw / (interference + noise_mw)
}

/// A transmitting user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UserId {
    Pu(usize),
    Su(usize),
}

impl UserId {
    pub fn tx(self) -> NodeId {
        match self {
            UserId::Pu(m) => NodeId::PuTx(m),
            UserId::Su(n) => NodeId::SuTx(n),
        }
    }

    pub fn rx(self) -> NodeId {
        match self {
            UserId::Pu(m) => NodeId::PuRx(m),
            UserId::Su(n) => NodeId::SuRx(n),
        }
    }
}

/// Power-gain lookup for one period of slots.
pub trait GainLookup {
    fn power_gain(&self, tx: NodeId, rx: NodeId, slot: usize) -> Option<f64>;
}

/// Geometry's link map over one period's generated gains.
pub struct PeriodView<'a> {
    pub geometry: &'a Geometry,
    pub gains: &'a PeriodGains,
}

impl GainLookup for PeriodView<'_> {
    fn power_gain(&self, tx: NodeId, rx: NodeId, slot: usize) -> Option<f64> {
        let link = self.geometry.link_between(tx, rx)?;
        self.gains.power(link, slot)
    }
}

fn gain_of(gains: &dyn GainLookup, tx: NodeId, rx: NodeId, slot: usize) -> Result<f64> {
    gains.power_gain(tx, rx, slot).ok_or_else(|| Error::MissingGain {
        tx: tx.to_string(),
        rx: rx.to_string(),
        slot,
    })
}

/// SINR of `user` at `slot` given every co-channel transmitter in `active`
/// (which must include `user`). `power` maps a user to its transmit power.
pub fn compute_sinr(
    user: UserId,
    slot: usize,
    active: &[UserId],
    gains: &dyn GainLookup,
    power: &dyn Fn(UserId) -> f64,
    noise_mw: f64,
) -> Result<f64> {
    if !active.contains(&user) {
        return Err(Error::config("active_transmitters", "user must be transmitting"));
    }
    let desired = power(user) * gain_of(gains, user.tx(), user.rx(), slot)?;
    let mut interference = 0.0;
    for &z in active.iter().filter(|&&z| z != user) {
        interference += power(z) * gain_of(gains, z.tx(), user.rx(), slot)?;
    }
    Ok(desired / (interference + noise_mw))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingResult {
    pub channel: usize,
    pub energy: f64,
    pub num_slots: usize,
}

/// Energy detector: sums `|y|^2` over `num_slots` slots from `start_slot`,
/// where `y` is noise alone when the PU is idle and `sqrt(P) H + noise` when
/// it is transmitting. `sensing_gain(slot)` returns `|H|^2` of the sensing link.
#[allow(clippy::too_many_arguments)]
pub fn sense_energy<R: Rng + ?Sized>(
    channel: usize,
    start_slot: usize,
    num_slots: usize,
    pu_active: &dyn Fn(usize) -> bool,
    sensing_gain: &dyn Fn(usize) -> Option<f64>,
    pu_power_mw: f64,
    noise_mw: f64,
    rng: &mut R,
) -> Result<SensingResult> {
    if num_slots == 0 {
        return Err(Error::config("sense_Ts", "must be at least 1"));
    }
    let mut energy = 0.0;
    for t in start_slot..start_slot + num_slots {
        let noise = complex_gaussian(rng, noise_mw);
        let y = if pu_active(t) {
            let g = sensing_gain(t).ok_or_else(|| Error::MissingGain {
                tx: format!("PUT{}", channel + 1),
                rx: "SUT".into(),
                slot: t,
            })?;
            // Deterministic phase: only |H|^2 enters the energy distribution.
            noise + (pu_power_mw * g).sqrt()
        } else {
            noise
        };
        energy += y.norm_sqr();
    }
    Ok(SensingResult {
        channel,
        energy,
        num_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn table_examples() {
        assert_eq!(sinr_to_efficiency(5.0), (7, 1.4766));
        assert_eq!(sinr_to_efficiency(-7.0), (0, 0.0));
        assert_eq!(sinr_to_efficiency(19.829), (15, 5.5547));
        assert_eq!(sinr_to_efficiency(-6.936), (1, 0.1523));
        assert_eq!(sinr_to_efficiency(100.0), (15, 5.5547));
    }

    #[test]
    fn table_shape() {
        for (i, r) in CQI_TABLE.iter().enumerate() {
            assert_eq!(r.cqi as usize, i);
        }
        for w in CQI_TABLE[1..].windows(2) {
            assert!(w[1].sinr_threshold_db > w[0].sinr_threshold_db);
            assert!(w[1].efficiency > w[0].efficiency);
        }
        assert_eq!(CQI_TABLE[0].efficiency, 0.0);
    }

    #[test]
    fn throughput_examples() {
        assert!((throughput(1.4766, 5e6) - 7.383e6).abs() < 1e-6);
        assert_eq!(throughput(0.0, 5e6), 0.0);
        assert!((throughput(5.5547, 5e6) - 2.77735e7).abs() < 1e-6);
    }

    struct MapGains(HashMap<(NodeId, NodeId), f64>);

    impl GainLookup for MapGains {
        fn power_gain(&self, tx: NodeId, rx: NodeId, _slot: usize) -> Option<f64> {
            self.0.get(&(tx, rx)).copied()
        }
    }

    #[test]
    fn sinr_examples() {
        let u = UserId::Pu(0);
        let z = UserId::Su(0);
        let mut g = HashMap::new();
        g.insert((u.tx(), u.rx()), 1.0);
        g.insert((z.tx(), u.rx()), 1.0);
        let gains = MapGains(g);
        let power = |id: UserId| if id == u { 4.0 } else { 2.0 };
        assert_eq!(compute_sinr(u, 0, &[u], &gains, &power, 1.0).unwrap(), 4.0);
        let s = compute_sinr(u, 0, &[u, z], &gains, &power, 1.0).unwrap();
        assert!((s - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn missing_gain_is_an_error() {
        let u = UserId::Su(1);
        let z = UserId::Su(2);
        let mut g = HashMap::new();
        g.insert((u.tx(), u.rx()), 1.0);
        let gains = MapGains(g);
        let err = compute_sinr(u, 3, &[u, z], &gains, &|_| 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::MissingGain { slot: 3, .. }));
    }

    #[test]
    fn sinr_random_instance_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let u = UserId::Su(0);
            let others = [UserId::Pu(0), UserId::Su(1), UserId::Su(2)];
            let mut g = HashMap::new();
            let hk: f64 = rng.random::<f64>() * 1e-10;
            g.insert((u.tx(), u.rx()), hk);
            let mut p = HashMap::new();
            p.insert(u, rng.random::<f64>() * 1000.0);
            let mut hz = Vec::new();
            for &o in &others {
                let h: f64 = rng.random::<f64>() * 1e-11;
                g.insert((o.tx(), u.rx()), h);
                p.insert(o, rng.random::<f64>() * 1000.0);
                hz.push(h);
            }
            let noise = rng.random::<f64>() * 1e-12;
            let active = [u, others[0], others[1], others[2]];
            let got = compute_sinr(u, 0, &active, &MapGains(g), &|id| p[&id], noise).unwrap();
            // Written out longhand.
            let num = p[&u] * hk;
            let den = p[&others[0]] * hz[0] + p[&others[1]] * hz[1] + p[&others[2]] * hz[2] + noise;
            assert!((got - num / den).abs() <= 1e-12 * (num / den));
        }
    }

    #[test]
    fn energy_zero_without_signal_or_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sense_energy(0, 0, 5, &|_| false, &|_| Some(1.0), 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(r.energy, 0.0);
    }

    #[test]
    fn energy_needs_a_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sense_energy(0, 0, 0, &|_| false, &|_| Some(1.0), 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn energy_mean_noise_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..trials {
            let e = sense_energy(0, 0, 2, &|_| false, &|_| None, 1.0, 1.0, &mut rng)
                .unwrap()
                .energy;
            assert!(e >= 0.0);
            sum += e;
            sumsq += e * e;
        }
        let mean = sum / trials as f64;
        let var = sumsq / trials as f64 - mean * mean;
        let se = (var / trials as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    proptest! {
        #[test]
        fn cqi_lookup_monotone(a in -30.0f64..40.0, b in -30.0f64..40.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (ci, ei) = sinr_to_efficiency(lo);
            let (cj, ej) = sinr_to_efficiency(hi);
            prop_assert!(ci <= cj);
            prop_assert!(ei <= ej);
        }

        #[test]
        fn sinr_monotone_in_interference_and_gain(
            p in 0.1f64..1000.0, h in 1e-12f64..1e-6, pz in 0.1f64..1000.0,
            hz in 1e-12f64..1e-6, n in 1e-15f64..1e-9, bump in 1.01f64..10.0,
        ) {
            let base = sinr(p * h, [pz * hz], n);
            prop_assert!(sinr(p * h, [pz * bump * hz], n) < base);
            prop_assert!(sinr(p * h * bump, [pz * hz], n) > base);
        }
    }
}
