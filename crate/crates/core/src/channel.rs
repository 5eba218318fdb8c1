//! Network geometry and time-correlated link gains.
//!
//! Gains follow log-distance path loss, one log-normal shadowing draw per link,
//! and unit-power AR(1) Rayleigh fading stepped once per slot. Every link owns
//! an RNG stream keyed by `(seed, link id)`, so a link's series never depends
//! on which other links were generated or in what order.

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{db_to_linear, ScenarioConfig};
use crate::error::{Error, Result};
use crate::seed;

/// Endpoint of a link. PU/SU indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum NodeId {
    PuTx(usize),
    PuRx(usize),
    SuTx(usize),
    SuRx(usize),
}

impl NodeId {
    /// Dense index: PU nodes first, then SU nodes; tx before rx.
    pub fn dense(self, num_pus: usize) -> usize {
        match self {
            NodeId::PuTx(m) => 2 * m,
            NodeId::PuRx(m) => 2 * m + 1,
            NodeId::SuTx(n) => 2 * num_pus + 2 * n,
            NodeId::SuRx(n) => 2 * num_pus + 2 * n + 1,
        }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeId::PuTx(m) => write!(f, "PUT{}", m + 1),
            NodeId::PuRx(m) => write!(f, "PUR{}", m + 1),
            NodeId::SuTx(n) => write!(f, "SUT{}", n + 1),
            NodeId::SuRx(n) => write!(f, "SUR{}", n + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodePosition {
    pub x: f64,
    pub y: f64,
}

impl NodePosition {
    pub fn distance(&self, other: &NodePosition) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LinkKind {
    Desired,
    SuSuInterference,
    SuTxToPuRx,
    PuTxToSuRx,
    Sensing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LinkSpec {
    pub id: usize,
    pub tx: NodeId,
    pub rx: NodeId,
    pub kind: LinkKind,
}

/// Node placement plus the full link list and a dense `(tx, rx) -> link` map.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub num_pus: usize,
    pub num_sus: usize,
    pub pu_tx: Vec<NodePosition>,
    pub pu_rx: Vec<NodePosition>,
    pub su_tx: Vec<NodePosition>,
    pub su_rx: Vec<NodePosition>,
    pub links: Vec<LinkSpec>,
    lookup: Vec<Option<usize>>,
}

/// Closed-form link count: desired, SU–SU, SUT→PUR, PUT→SUR and sensing.
pub fn expected_link_count(num_pus: usize, num_sus: usize) -> usize {
    let (m, n) = (num_pus, num_sus);
    (m + n) + n * n.saturating_sub(1) + 3 * m * n
}

impl Geometry {
    fn num_nodes(&self) -> usize {
        2 * (self.num_pus + self.num_sus)
    }

    pub fn position(&self, node: NodeId) -> NodePosition {
        match node {
            NodeId::PuTx(m) => self.pu_tx[m],
            NodeId::PuRx(m) => self.pu_rx[m],
            NodeId::SuTx(n) => self.su_tx[n],
            NodeId::SuRx(n) => self.su_rx[n],
        }
    }

    pub fn link_between(&self, tx: NodeId, rx: NodeId) -> Option<usize> {
        let n = self.num_nodes();
        let (a, b) = (tx.dense(self.num_pus), rx.dense(self.num_pus));
        if a >= n || b >= n {
            return None;
        }
        self.lookup[a * n + b]
    }

    pub fn link_distance(&self, link: &LinkSpec) -> f64 {
        self.position(link.tx).distance(&self.position(link.rx))
    }

    /// Assembles a geometry from explicit positions (used by tests and tools).
    pub fn from_positions(
        pu_tx: Vec<NodePosition>,
        pu_rx: Vec<NodePosition>,
        su_tx: Vec<NodePosition>,
        su_rx: Vec<NodePosition>,
    ) -> Result<Self> {
        if pu_tx.len() != pu_rx.len() || su_tx.len() != su_rx.len() {
            return Err(Error::Geometry("tx/rx position counts differ".into()));
        }
        let (m, n) = (pu_tx.len(), su_tx.len());
        let mut links = Vec::with_capacity(expected_link_count(m, n));
        let mut push = |tx, rx, kind| {
            let id = links.len();
            links.push(LinkSpec { id, tx, rx, kind });
        };
        for p in 0..m {
            push(NodeId::PuTx(p), NodeId::PuRx(p), LinkKind::Desired);
        }
        for s in 0..n {
            push(NodeId::SuTx(s), NodeId::SuRx(s), LinkKind::Desired);
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    push(NodeId::SuTx(i), NodeId::SuRx(j), LinkKind::SuSuInterference);
                }
            }
        }
        for s in 0..n {
            for p in 0..m {
                push(NodeId::SuTx(s), NodeId::PuRx(p), LinkKind::SuTxToPuRx);
            }
        }
        for p in 0..m {
            for s in 0..n {
                push(NodeId::PuTx(p), NodeId::SuRx(s), LinkKind::PuTxToSuRx);
            }
        }
        for p in 0..m {
            for s in 0..n {
                push(NodeId::PuTx(p), NodeId::SuTx(s), LinkKind::Sensing);
            }
        }
        let mut geo = Geometry {
            num_pus: m,
            num_sus: n,
            pu_tx,
            pu_rx,
            su_tx,
            su_rx,
            links,
            lookup: Vec::new(),
        };
        let nodes = geo.num_nodes();
        geo.lookup = vec![None; nodes * nodes];
        for link in &geo.links {
            let (a, b) = (link.tx.dense(m), link.rx.dense(m));
            geo.lookup[a * nodes + b] = Some(link.id);
        }
        Ok(geo)
    }

    /// Writes `link_id,kind,tx,rx,tx_x,tx_y,rx_x,rx_y,distance_m`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "link_id", "kind", "tx", "rx", "tx_x", "tx_y", "rx_x", "rx_y", "distance_m",
        ])?;
        for link in &self.links {
            let (a, b) = (self.position(link.tx), self.position(link.rx));
            w.write_record([
                link.id.to_string(),
                format!("{:?}", link.kind),
                link.tx.to_string(),
                link.rx.to_string(),
                a.x.to_string(),
                a.y.to_string(),
                b.x.to_string(),
                b.y.to_string(),
                a.distance(&b).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Places every transmitter uniformly in the square and its receiver at a
/// uniform distance in the configured band and a uniform bearing, redrawing
/// receivers that fall outside the area.
pub fn build_geometry(cfg: &ScenarioConfig, rng_seed: u64) -> Result<Geometry> {
    if cfg.num_pus == 0 || cfg.num_sus == 0 {
        return Err(Error::Geometry("need at least one PU and one SU".into()));
    }
    if !(cfg.area_m > 0.0) {
        return Err(Error::Geometry("area side must be positive".into()));
    }
    let (dmin, dmax) = (cfg.link_distance_min_m, cfg.link_distance_max_m);
    if !(dmin > 0.0 && dmin <= dmax) {
        return Err(Error::Geometry(format!("bad desired-link distance band [{dmin}, {dmax}]")));
    }
    if dmax > cfg.area_m {
        return Err(Error::Geometry(format!(
            "desired-link distance up to {dmax} m does not fit in a {} m area",
            cfg.area_m
        )));
    }
    let mut rng = seed::rng(rng_seed, "geometry", 0);
    let place_pair = |rng: &mut ChaCha8Rng| -> Result<(NodePosition, NodePosition)> {
        for _ in 0..10_000 {
            let tx = NodePosition {
                x: rng.random::<f64>() * cfg.area_m,
                y: rng.random::<f64>() * cfg.area_m,
            };
            let d = if dmax > dmin { rng.random_range(dmin..=dmax) } else { dmin };
            let theta = rng.random::<f64>() * TAU;
            let rx = NodePosition {
                x: tx.x + d * theta.cos(),
                y: tx.y + d * theta.sin(),
            };
            if (0.0..=cfg.area_m).contains(&rx.x) && (0.0..=cfg.area_m).contains(&rx.y) {
                return Ok((tx, rx));
            }
        }
        Err(Error::Geometry("could not place a link inside the area".into()))
    };
    let mut pu_tx = Vec::new();
    let mut pu_rx = Vec::new();
    for _ in 0..cfg.num_pus {
        let (t, r) = place_pair(&mut rng)?;
        pu_tx.push(t);
        pu_rx.push(r);
    }
    let mut su_tx = Vec::new();
    let mut su_rx = Vec::new();
    for _ in 0..cfg.num_sus {
        let (t, r) = place_pair(&mut rng)?;
        su_tx.push(t);
        su_rx.push(r);
    }
    Geometry::from_positions(pu_tx, pu_rx, su_tx, su_rx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelModelConfig {
    pub path_loss_exponent: f64,
    /// Loss at the 1 m reference distance.
    pub reference_loss_db: f64,
    pub shadowing_sigma_db: f64,
    /// AR(1) coefficient between consecutive slots.
    pub fading_correlation: f64,
    /// When false the fading term is frozen at 1.
    pub rayleigh_fading: bool,
}

impl Default for ChannelModelConfig {
    fn default() -> Self {
        Self {
            path_loss_exponent: 3.5,
            reference_loss_db: 46.0,
            shadowing_sigma_db: 8.0,
            fading_correlation: 0.99,
            rayleigh_fading: true,
        }
    }
}

impl ChannelModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.path_loss_exponent > 0.0) {
            return Err(Error::config("path_loss_exponent", "must be positive"));
        }
        if !self.reference_loss_db.is_finite() {
            return Err(Error::config("reference_loss_db", "must be finite"));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(Error::config("shadowing_sigma_db", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.fading_correlation) {
            return Err(Error::config("fading_correlation", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Linear power gain of log-distance path loss at `distance_m`.
    pub fn path_gain(&self, distance_m: f64) -> f64 {
        let loss_db = self.reference_loss_db + 10.0 * self.path_loss_exponent * distance_m.log10();
        db_to_linear(-loss_db)
    }
}

/// Circularly-symmetric complex Gaussian with the given total variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Streaming gain generator for one link.
#[derive(Debug, Clone)]
pub struct LinkChannel {
    /// sqrt(path gain * shadowing); multiplies the unit-power fading term.
    amplitude: f64,
    rho: f64,
    innovation: f64,
    rayleigh: bool,
    fading: Complex64,
    rng: ChaCha8Rng,
}

impl LinkChannel {
    pub fn new(distance_m: f64, link_id: usize, cfg: &ChannelModelConfig, seed: u64) -> Result<Self> {
        if !(distance_m > 0.0) || !distance_m.is_finite() {
            return Err(Error::Geometry(format!(
                "link {link_id} has non-positive length {distance_m}"
            )));
        }
        let mut rng = seed::rng(seed, "link", link_id as u64);
        let shadow_db: f64 = StandardNormal.sample(&mut rng);
        let shadowing = db_to_linear(shadow_db * cfg.shadowing_sigma_db);
        let amplitude = (cfg.path_gain(distance_m) * shadowing).sqrt();
        let fading = if cfg.rayleigh_fading {
            complex_gaussian(&mut rng, 1.0)
        } else {
            Complex64::new(1.0, 0.0)
        };
        let rho = cfg.fading_correlation;
        Ok(Self {
            amplitude,
            rho,
            innovation: (1.0 - rho * rho).sqrt(),
            rayleigh: cfg.rayleigh_fading,
            fading,
            rng,
        })
    }

    /// Deterministic large-scale power gain (path loss times shadowing).
    pub fn mean_power_gain(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    /// Returns the gain for the current slot and steps the fading process.
    pub fn next_gain(&mut self) -> Complex64 {
        let g = self.fading * self.amplitude;
        if self.rayleigh {
            let w = complex_gaussian(&mut self.rng, 1.0);
            self.fading = self.fading * self.rho + w * self.innovation;
        }
        g
    }

    /// Unit-power fading term for the current slot, stepping the process.
    pub fn next_fading(&mut self) -> Complex64 {
        let f = self.fading;
        self.next_gain();
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkGainSeries {
    pub link: LinkSpec,
    pub gains: Vec<Complex64>,
}

impl LinkGainSeries {
    pub fn power(&self, t: usize) -> f64 {
        self.gains[t].norm_sqr()
    }
}

pub fn generate_gain_series(
    link: &LinkSpec,
    geometry: &Geometry,
    cfg: &ChannelModelConfig,
    seed: u64,
    num_slots: usize,
) -> Result<LinkGainSeries> {
    if num_slots == 0 {
        return Err(Error::config("num_slots", "must be at least 1"));
    }
    let mut ch = LinkChannel::new(geometry.link_distance(link), link.id, cfg, seed)?;
    Ok(LinkGainSeries {
        link: *link,
        gains: (0..num_slots).map(|_| ch.next_gain()).collect(),
    })
}

/// Writes `link_id,t,re,im` rows for each series.
pub fn write_gain_csv<W: Write>(series: &[LinkGainSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["link_id", "t", "re", "im"])?;
    for s in series {
        for (t, g) in s.gains.iter().enumerate() {
            w.write_record([
                s.link.id.to_string(),
                t.to_string(),
                g.re.to_string(),
                g.im.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// All links' gains for the slots of one period, `gains[link][slot]` as power.
#[derive(Debug, Clone)]
pub struct PeriodGains {
    slots: usize,
    power: Vec<f64>,
}

impl PeriodGains {
    pub fn power(&self, link: usize, slot: usize) -> Option<f64> {
        if slot >= self.slots {
            return None;
        }
        self.power.get(link * self.slots + slot).copied()
    }
}

/// Advances every link channel in lock-step one period at a time.
#[derive(Debug, Clone)]
pub struct ChannelBank {
    channels: Vec<LinkChannel>,
    slots_per_period: usize,
}

impl ChannelBank {
    pub fn new(
        geometry: &Geometry,
        cfg: &ChannelModelConfig,
        seed: u64,
        slots_per_period: usize,
    ) -> Result<Self> {
        let channels = geometry
            .links
            .iter()
            .map(|l| LinkChannel::new(geometry.link_distance(l), l.id, cfg, seed))
            .collect::<Result<_>>()?;
        Ok(Self {
            channels,
            slots_per_period,
        })
    }

    pub fn next_period(&mut self) -> PeriodGains {
        let slots = self.slots_per_period;
        let mut power = Vec::with_capacity(self.channels.len() * slots);
        for ch in &mut self.channels {
            for _ in 0..slots {
                power.push(ch.next_gain().norm_sqr());
            }
        }
        PeriodGains { slots, power }
    }

    pub fn mean_power_gain(&self, link: usize) -> f64 {
        self.channels[link].mean_power_gain()
    }
}
