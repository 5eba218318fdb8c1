//! Stacked leaky echo state reservoirs with a single trainable linear readout.
//!
//! Reservoir weights are drawn once and never change, so a hidden state
//! computed at collection time stays valid for every later training step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of stacked reservoirs; 0 gives a plain linear readout on the input.
    pub layers: usize,
    pub neurons: usize,
    /// Leak rate in `[0, 1]`; 1 is a non-leaky tanh reservoir.
    pub leak: f64,
    pub spectral_radius: f64,
    pub input_scale: f64,
    /// Fraction of nonzero recurrent weights.
    pub density: f64,
    /// Feed the raw input to every layer, not just the first.
    pub input_to_all_layers: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            neurons: 32,
            leak: 0.7,
            spectral_radius: 0.9,
            input_scale: 1.0,
            density: 0.2,
            input_to_all_layers: false,
        }
    }
}

impl NetworkConfig {
    pub fn with_layers(layers: usize) -> Self {
        Self {
            layers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 {
            return Err(Error::config("neurons", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.leak) {
            return Err(Error::config("leak_beta", "must lie in [0, 1]"));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius < 1.0) {
            return Err(Error::config("spectral_radius", "must lie in (0, 1)"));
        }
        if !(self.input_scale >= 0.0) {
            return Err(Error::config("input_scale", "must be non-negative"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::config("reservoir_density", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Largest eigenvalue magnitude, from the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirLayer {
    w_in: DMatrix<f64>,
    w_rec: DMatrix<f64>,
    leak: f64,
}

impl ReservoirLayer {
    pub fn from_weights(w_in: DMatrix<f64>, w_rec: DMatrix<f64>, leak: f64) -> Result<Self> {
        if !w_rec.is_square() || w_rec.nrows() != w_in.nrows() {
            return Err(Error::Dimension {
                context: "reservoir weights",
                expected: w_in.nrows(),
                got: w_rec.nrows(),
            });
        }
        Ok(Self { w_in, w_rec, leak })
    }

    fn random<R: Rng>(
        rng: &mut R,
        input_dim: usize,
        cfg: &NetworkConfig,
    ) -> Result<Self> {
        const MAX_DRAWS: usize = 16;
        let n = cfg.neurons;
        let w_in = DMatrix::from_fn(n, input_dim, |_, _| {
            cfg.input_scale * rng.random_range(-1.0..=1.0)
        });
        for _ in 0..MAX_DRAWS {
            let mut w_rec = DMatrix::from_fn(n, n, |_, _| {
                if rng.random::<f64>() < cfg.density {
                    rng.random_range(-1.0..=1.0)
                } else {
                    0.0
                }
            });
            let rho = spectral_radius(&w_rec);
            if !(rho > 1e-9) || !rho.is_finite() {
                continue;
            }
            w_rec *= cfg.spectral_radius / rho;
            let check = spectral_radius(&w_rec);
            if (check - cfg.spectral_radius).abs() <= 1e-6 {
                return Ok(Self {
                    w_in,
                    w_rec,
                    leak: cfg.leak,
                });
            }
        }
        Err(Error::Reservoir(format!(
            "no usable recurrent matrix after {MAX_DRAWS} draws"
        )))
    }

    pub fn w_in(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn w_rec(&self) -> &DMatrix<f64> {
        &self.w_rec
    }

    pub fn leak(&self) -> f64 {
        self.leak
    }

    pub fn neurons(&self) -> usize {
        self.w_rec.nrows()
    }

    /// `(1 - beta) h + beta tanh(W_in x + W_rec h)`.
    fn update(&self, prev: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let pre = &self.w_in * x + &self.w_rec * prev;
        let b = self.leak;
        DVector::from_fn(prev.len(), |i, _| (1.0 - b) * prev[i] + b * pre[i].tanh())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<DVector<f64>>,
}

impl HiddenState {
    pub fn max_abs_diff(&self, other: &HiddenState) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.iter().all(|x| x.is_finite()))
    }
}

/// The frozen part of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    layers: Vec<ReservoirLayer>,
    input_dim: usize,
    input_to_all_layers: bool,
}

impl Reservoir {
    pub fn random(input_dim: usize, cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut rng = seed::rng(seed, "reservoir", l as u64);
            let dim = match l {
                0 => input_dim,
                _ if cfg.input_to_all_layers => cfg.neurons + input_dim,
                _ => cfg.neurons,
            };
            layers.push(ReservoirLayer::random(&mut rng, dim, cfg)?);
        }
        Ok(Self {
            layers,
            input_dim,
            input_to_all_layers: cfg.input_to_all_layers,
        })
    }

    pub fn from_layers(input_dim: usize, layers: Vec<ReservoirLayer>, input_to_all_layers: bool) -> Result<Self> {
        for (l, layer) in layers.iter().enumerate() {
            let expected = match l {
                0 => input_dim,
                _ => layers[l - 1].neurons() + if input_to_all_layers { input_dim } else { 0 },
            };
            if layer.w_in.ncols() != expected {
                return Err(Error::Dimension {
                    context: "layer input",
                    expected,
                    got: layer.w_in.ncols(),
                });
            }
        }
        Ok(Self {
            layers,
            input_dim,
            input_to_all_layers,
        })
    }

    pub fn layers(&self) -> &[ReservoirLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn state_dim(&self) -> usize {
        self.layers.iter().map(ReservoirLayer::neurons).sum()
    }

    pub fn zero_state(&self) -> HiddenState {
        HiddenState {
            layers: self.layers.iter().map(|l| DVector::zeros(l.neurons())).collect(),
        }
    }

    /// One period of the leaky update. Layer 1 reads the input; deeper layers
    /// read the fresh state of the layer below.
    pub fn advance(&self, prev: &HiddenState, input: &[f64]) -> Result<HiddenState> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension {
                context: "reservoir input",
                expected: self.input_dim,
                got: input.len(),
            });
        }
        if prev.layers.len() != self.layers.len() {
            return Err(Error::Dimension {
                context: "hidden state layers",
                expected: self.layers.len(),
                got: prev.layers.len(),
            });
        }
        let raw = DVector::from_column_slice(input);
        let mut out: Vec<DVector<f64>> = Vec::with_capacity(self.layers.len());
        for (l, (layer, h)) in self.layers.iter().zip(&prev.layers).enumerate() {
            if h.len() != layer.neurons() {
                return Err(Error::Dimension {
                    context: "hidden state width",
                    expected: layer.neurons(),
                    got: h.len(),
                });
            }
            let next = match l {
                0 => layer.update(h, &raw),
                _ if self.input_to_all_layers => {
                    let below = &out[l - 1];
                    let x = DVector::from_iterator(
                        below.len() + raw.len(),
                        below.iter().chain(raw.iter()).copied(),
                    );
                    layer.update(h, &x)
                }
                _ => layer.update(h, &out[l - 1]),
            };
            out.push(next);
        }
        Ok(HiddenState { layers: out })
    }

    /// `[input; h^1; ...; h^L]`.
    pub fn features(&self, input: &[f64], h: &HiddenState) -> DVector<f64> {
        let len = input.len() + h.layers.iter().map(|l| l.len()).sum::<usize>();
        DVector::from_iterator(
            len,
            input.iter().copied().chain(h.layers.iter().flat_map(|l| l.iter().copied())),
        )
    }

    /// Floating-point operations for one `advance`.
    pub fn advance_flops(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let n = l.neurons();
                2 * n * (l.w_in.ncols() + n) + 4 * n
            })
            .sum()
    }
}

/// One readout regression sample.
#[derive(Debug, Clone, Copy)]
pub struct ReadoutSample<'a> {
    pub features: &'a DVector<f64>,
    pub action: usize,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean squared error over accepted samples, before the update.
    pub loss: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// Reservoir plus linear readout `o = W_out u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeqnNetwork {
    reservoir: Reservoir,
    readout: DMatrix<f64>,
    config: NetworkConfig,
    seed: u64,
}

impl DeqnNetwork {
    /// Random reservoir with a zero readout.
    pub fn new(input_dim: usize, output_dim: usize, cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        let reservoir = Reservoir::random(input_dim, cfg, seed)?;
        let readout = DMatrix::zeros(output_dim, input_dim + reservoir.state_dim());
        Ok(Self {
            reservoir,
            readout,
            config: cfg.clone(),
            seed,
        })
    }

    pub fn from_parts(reservoir: Reservoir, readout: DMatrix<f64>) -> Result<Self> {
        let width = reservoir.input_dim() + reservoir.state_dim();
        if readout.ncols() != width {
            return Err(Error::Dimension {
                context: "readout width",
                expected: width,
                got: readout.ncols(),
            });
        }
        let config = NetworkConfig {
            layers: reservoir.layers.len(),
            neurons: reservoir.layers.first().map_or(0, ReservoirLayer::neurons),
            leak: reservoir.layers.first().map_or(1.0, ReservoirLayer::leak),
            input_to_all_layers: reservoir.input_to_all_layers,
            ..NetworkConfig::default()
        };
        Ok(Self {
            reservoir,
            readout,
            config,
            seed: 0,
        })
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    pub fn readout_weights(&self) -> &DMatrix<f64> {
        &self.readout
    }

    pub fn set_readout_weights(&mut self, w: DMatrix<f64>) -> Result<()> {
        if w.shape() != self.readout.shape() {
            return Err(Error::Dimension {
                context: "readout shape",
                expected: self.readout.len(),
                got: w.len(),
            });
        }
        self.readout = w;
        Ok(())
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.reservoir.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.readout.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.readout.ncols()
    }

    pub fn zero_state(&self) -> HiddenState {
        self.reservoir.zero_state()
    }

    pub fn advance(&self, prev: &HiddenState, input: &[f64]) -> Result<HiddenState> {
        self.reservoir.advance(prev, input)
    }

    pub fn features(&self, input: &[f64], h: &HiddenState) -> DVector<f64> {
        self.reservoir.features(input, h)
    }

    pub fn readout(&self, input: &[f64], h: &HiddenState) -> Result<DVector<f64>> {
        let u = self.features(input, h);
        self.readout_features(&u)
    }

    pub fn readout_features(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        readout_with(&self.readout, u)
    }

    /// Mean over samples of `(target - o_action)^2`.
    pub fn loss(&self, samples: &[ReadoutSample<'_>]) -> f64 {
        batch_loss(&self.readout, samples)
    }

    /// Gradient of [`DeqnNetwork::loss`] w.r.t. the readout. Only rows of the
    /// selected actions are nonzero.
    pub fn loss_gradient(&self, samples: &[ReadoutSample<'_>]) -> DMatrix<f64> {
        let mut grad = DMatrix::zeros(self.readout.nrows(), self.readout.ncols());
        let b = samples.len() as f64;
        for s in samples {
            let err = s.target - self.readout.row(s.action).dot(&s.features.transpose());
            let scale = -2.0 * err / b;
            for (j, &u) in s.features.iter().enumerate() {
                grad[(s.action, j)] += scale * u;
            }
        }
        grad
    }

    /// One plain gradient-descent step on the batch loss. Samples with a
    /// non-finite target or a bad action index are skipped.
    pub fn train_readout_step(&mut self, samples: &[ReadoutSample<'_>], learning_rate: f64) -> Result<StepStats> {
        let accepted: Vec<ReadoutSample<'_>> = samples
            .iter()
            .copied()
            .filter(|s| s.target.is_finite() && s.action < self.readout.nrows())
            .collect();
        for s in &accepted {
            if s.features.len() != self.readout.ncols() {
                return Err(Error::Dimension {
                    context: "training features",
                    expected: self.readout.ncols(),
                    got: s.features.len(),
                });
            }
        }
        let rejected = samples.len() - accepted.len();
        if accepted.is_empty() {
            return Ok(StepStats {
                loss: 0.0,
                accepted: 0,
                rejected,
            });
        }
        let loss = self.loss(&accepted);
        let grad = self.loss_gradient(&accepted);
        self.readout -= grad * learning_rate;
        Ok(StepStats {
            loss,
            accepted: accepted.len(),
            rejected,
        })
    }

    pub fn checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            version: NetworkCheckpoint::VERSION,
            config: self.config.clone(),
            seed: self.seed,
            input_dim: self.reservoir.input_dim,
            layers: self
                .reservoir
                .layers
                .iter()
                .map(|l| LayerData {
                    leak: l.leak,
                    w_in: MatrixData::from(&l.w_in),
                    w_rec: MatrixData::from(&l.w_rec),
                })
                .collect(),
            readout: MatrixData::from(&self.readout),
        }
    }

    pub fn from_checkpoint(c: &NetworkCheckpoint) -> Result<Self> {
        if c.version != NetworkCheckpoint::VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
        }
        let layers = c
            .layers
            .iter()
            .map(|l| ReservoirLayer::from_weights(l.w_in.to_matrix()?, l.w_rec.to_matrix()?, l.leak))
            .collect::<Result<Vec<_>>>()?;
        let reservoir = Reservoir::from_layers(c.input_dim, layers, c.config.input_to_all_layers)?;
        let mut net = Self::from_parts(reservoir, c.readout.to_matrix()?)?;
        net.config = c.config.clone();
        net.seed = c.seed;
        Ok(net)
    }

    pub fn save_json(&self) -> Result<String> {
        serde_json::to_string(&self.checkpoint()).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn load_json(s: &str) -> Result<Self> {
        let c: NetworkCheckpoint = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&c)
    }
}

pub fn readout_with(w: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if u.len() != w.ncols() {
        return Err(Error::Dimension {
            context: "readout input",
            expected: w.ncols(),
            got: u.len(),
        });
    }
    Ok(w * u)
}

fn batch_loss(w: &DMatrix<f64>, samples: &[ReadoutSample<'_>]) -> f64 {
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let err = s.target - w.row(s.action).dot(&s.features.transpose());
            err * err
        })
        .sum();
    sum / samples.len() as f64
}

/// Row-major matrix for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixData {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixData {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Checkpoint(format!(
                "matrix {}x{} has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerData {
    pub leak: f64,
    pub w_in: MatrixData,
    pub w_rec: MatrixData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub version: u32,
    pub config: NetworkConfig,
    pub seed: u64,
    pub input_dim: usize,
    pub layers: Vec<LayerData>,
    pub readout: MatrixData,
}

impl NetworkCheckpoint {
    pub const VERSION: u32 = 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(layers: usize, seed: u64) -> DeqnNetwork {
        DeqnNetwork::new(5, 8, &NetworkConfig::with_layers(layers), seed).unwrap()
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(net(2, 3), net(2, 3));
        assert_ne!(net(2, 3), net(2, 4));
    }

    #[test]
    fn zero_readout_outputs_zero() {
        let n = net(1, 1);
        let h = n.advance(&n.zero_state(), &[0.3, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let o = n.readout(&[0.3, 0.0, 1.0, 0.0, 0.0], &h).unwrap();
        assert_eq!(o.len(), 8);
        assert!(o.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spectral_radius_hits_target() {
        for seed in 0..5 {
            let n = net(2, seed);
            for l in n.reservoir().layers() {
                assert!((spectral_radius(l.w_rec()) - 0.9).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn zero_leak_keeps_state() {
        let cfg = NetworkConfig {
            leak: 0.0,
            layers: 1,
            ..Default::default()
        };
        let n = DeqnNetwork::new(3, 2, &cfg, 1).unwrap();
        let h0 = n.advance(&n.zero_state(), &[1.0, 0.0, 0.0]).unwrap();
        assert!(h0.layers[0].iter().all(|&x| x == 0.0));
        let mut h = n.zero_state();
        h.layers[0][3] = 0.42;
        let next = n.advance(&h, &[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(next, h);
    }

    #[test]
    fn zero_weights_stay_at_origin() {
        let layer = ReservoirLayer::from_weights(DMatrix::zeros(4, 2), DMatrix::zeros(4, 4), 1.0).unwrap();
        let r = Reservoir::from_layers(2, vec![layer], false).unwrap();
        let h = r.advance(&r.zero_state(), &[0.7, -0.2]).unwrap();
        assert!(h.layers[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_dim_update_matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = || rng.random_range(-1.0..1.0);
        let (a, b, c, d) = (draw(), draw(), draw(), draw());
        let (e, f, g, hh) = (draw(), draw(), draw(), draw());
        let (x0, x1, p0, p1) = (draw(), draw(), draw(), draw());
        let beta = 0.7;
        let w_in = DMatrix::from_row_slice(2, 2, &[a, b, c, d]);
        let w_rec = DMatrix::from_row_slice(2, 2, &[e, f, g, hh]);
        let r = Reservoir::from_layers(2, vec![ReservoirLayer::from_weights(w_in, w_rec, beta).unwrap()], false).unwrap();
        let prev = HiddenState {
            layers: vec![DVector::from_vec(vec![p0, p1])],
        };
        let next = r.advance(&prev, &[x0, x1]).unwrap();
        let h0 = (1.0 - beta) * p0 + beta * (a * x0 + b * x1 + e * p0 + f * p1).tanh();
        let h1 = (1.0 - beta) * p1 + beta * (c * x0 + d * x1 + g * p0 + hh * p1).tanh();
        assert!((next.layers[0][0] - h0).abs() < 1e-15);
        assert!((next.layers[0][1] - h1).abs() < 1e-15);
    }

    #[test]
    fn second_layer_reads_first_layer_state() {
        let n = net(2, 9);
        let x = [0.1, 1.0, 0.0, 0.0, 0.0];
        let h = n.advance(&n.zero_state(), &x).unwrap();
        let l1 = &n.reservoir().layers()[1];
        let expected = (l1.w_in() * &h.layers[0]).map(|p| 0.7 * p.tanh());
        assert!((&h.layers[1] - expected).amax() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let n = net(1, 1);
        assert!(matches!(n.advance(&n.zero_state(), &[1.0]), Err(Error::Dimension { .. })));
        assert!(n.readout_features(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn selecting_readout_returns_unit_value() {
        let mut n = DeqnNetwork::new(2, 1, &NetworkConfig::with_layers(1), 2).unwrap();
        let h = n.advance(&n.zero_state(), &[0.4, -0.3]).unwrap();
        let mut w = DMatrix::zeros(1, n.feature_dim());
        w[(0, 2 + 5)] = 1.0;
        n.set_readout_weights(w).unwrap();
        assert_eq!(n.readout(&[0.4, -0.3], &h).unwrap()[0], h.layers[0][5]);
    }

    #[test]
    fn readout_matches_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut n = net(2, 6);
        let w = DMatrix::from_fn(8, n.feature_dim(), |_, _| rng.random_range(-1.0..1.0));
        n.set_readout_weights(w.clone()).unwrap();
        let x = [0.2, 0.0, 0.0, 1.0, 0.0];
        let h = n.advance(&n.zero_state(), &x).unwrap();
        let u: Vec<f64> = x.iter().copied().chain(h.layers.iter().flat_map(|l| l.iter().copied())).collect();
        let o = n.readout(&x, &h).unwrap();
        for a in 0..8 {
            let dot: f64 = (0..u.len()).map(|j| w[(a, j)] * u[j]).sum();
            assert!((o[a] - dot).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_leaves_readout() {
        let mut n = net(1, 2);
        let before = n.readout_weights().clone();
        let u = DVector::from_element(n.feature_dim(), 0.5);
        n.train_readout_step(&[ReadoutSample { features: &u, action: 3, target: 2.0 }], 0.0)
            .unwrap();
        assert_eq!(n.readout_weights(), &before);
    }

    #[test]
    fn single_sample_update_value() {
        let r = Reservoir::from_layers(1, vec![], false).unwrap();
        let mut n = DeqnNetwork::from_parts(r, DMatrix::zeros(2, 1)).unwrap();
        let u = DVector::from_vec(vec![1.0]);
        n.train_readout_step(&[ReadoutSample { features: &u, action: 1, target: 1.0 }], 0.5)
            .unwrap();
        assert_eq!(n.readout_weights()[(1, 0)], 1.0);
        assert_eq!(n.readout_weights()[(0, 0)], 0.0);
    }

    #[test]
    fn non_finite_targets_rejected() {
        let mut n = net(1, 2);
        let u = DVector::from_element(n.feature_dim(), 0.5);
        let stats = n
            .train_readout_step(
                &[
                    ReadoutSample { features: &u, action: 0, target: f64::NAN },
                    ReadoutSample { features: &u, action: 1, target: 1.0 },
                ],
                0.1,
            )
            .unwrap();
        assert_eq!((stats.accepted, stats.rejected), (1, 1));
        assert!(n.readout_weights().row(0).iter().all(|&x| x == 0.0));
        assert!(n.readout_weights().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn training_leaves_reservoir_untouched() {
        let mut n = net(2, 4);
        let frozen = n.reservoir().clone();
        let u = DVector::from_element(n.feature_dim(), 0.1);
        for _ in 0..10 {
            n.train_readout_step(&[ReadoutSample { features: &u, action: 2, target: 1.0 }], 0.01)
                .unwrap();
        }
        assert_eq!(n.reservoir(), &frozen);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut n = net(2, 8);
        let w = DMatrix::from_fn(8, n.feature_dim(), |_, _| rng.random::<f64>() * 1e-3);
        n.set_readout_weights(w).unwrap();
        let back = DeqnNetwork::load_json(&n.save_json().unwrap()).unwrap();
        assert_eq!(back, n);
    }

    proptest! {
        #[test]
        fn readout_is_linear(scale in -10.0f64..10.0, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut n = net(1, 1);
            let w = DMatrix::from_fn(8, n.feature_dim(), |_, _| rng.random_range(-1.0..1.0));
            n.set_readout_weights(w).unwrap();
            let u = DVector::from_fn(n.feature_dim(), |_, _| rng.random_range(-1.0..1.0));
            let a = n.readout_features(&(&u * scale)).unwrap();
            let b = n.readout_features(&u).unwrap() * scale;
            prop_assert!((a - b).amax() <= 1e-12 * (1.0 + scale.abs()) * 10.0);
        }

        #[test]
        fn tanh_range_after_update(seed in 0u64..100, x in -5.0f64..5.0) {
            let cfg = NetworkConfig { leak: 1.0, layers: 2, ..Default::default() };
            let n = DeqnNetwork::new(3, 2, &cfg, seed).unwrap();
            let h = n.advance(&n.zero_state(), &[x, 1.0, -x]).unwrap();
            prop_assert!(h.layers.iter().all(|l| l.iter().all(|v| v.abs() < 1.0)));
        }
    }
}
