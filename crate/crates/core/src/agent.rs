//! Per-SU learners, experience replay and the round-based training loop.
//!
//! A round collects `Z` periods of experience with every learner acting
//! simultaneously, trains each readout for `I` mini-batch iterations, copies
//! the evaluation readout into the target readout and clears the buffers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::FixedPolicy;
use crate::env::MultiAgentEnv;
use crate::error::{Error, Result};
use crate::esn::{readout_with, DeqnNetwork, HiddenState, MatrixData, NetworkCheckpoint, NetworkConfig, ReadoutSample};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon0: f64,
    pub epsilon_decay_per_round: f64,
    pub lr_initial: f64,
    pub lr_reduced: f64,
    /// The learning rate drops to `lr_reduced` once epsilon falls below this.
    pub lr_switch_epsilon: f64,
    pub batch_size: usize,
    /// Mini-batch iterations per round.
    pub iterations: usize,
    /// Periods collected per round.
    pub buffer_size: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon0: 0.3,
            epsilon_decay_per_round: 0.0015,
            lr_initial: 0.01,
            lr_reduced: 0.001,
            lr_switch_epsilon: 0.2,
            batch_size: 32,
            iterations: 200,
            buffer_size: 300,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return Err(Error::config("epsilon0", "must lie in [0, 1]"));
        }
        if !(self.epsilon_decay_per_round >= 0.0) {
            return Err(Error::config("epsilon_decay_per_round", "must be non-negative"));
        }
        for (key, v) in [("lr_initial", self.lr_initial), ("lr_reduced", self.lr_reduced)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(key, "must be a non-negative number"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.buffer_size == 0 {
            return Err(Error::config("buffer_Z", "must be positive"));
        }
        Ok(())
    }

    /// Exploration rate in round `round` (zero-based), floored at zero.
    pub fn epsilon_at(&self, round: usize) -> f64 {
        let e = self.epsilon0 - round as f64 * self.epsilon_decay_per_round;
        if e < 1e-12 {
            0.0
        } else {
            e
        }
    }

    pub fn learning_rate_for(&self, epsilon: f64) -> f64 {
        if epsilon < self.lr_switch_epsilon {
            self.lr_reduced
        } else {
            self.lr_initial
        }
    }
}

/// One stored transition together with the reservoir states it was acted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    /// Index of the period in the agent's input stream.
    pub step: usize,
    pub state_k: Vec<f64>,
    pub hidden_k: HiddenState,
    pub action_k: usize,
    pub reward_k: f64,
    pub state_k1: Vec<f64>,
    pub hidden_k1: HiddenState,
}

/// Fixed-capacity FIFO store; the oldest record is evicted when full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<Experience>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            records: Vec::with_capacity(capacity),
            head: 0,
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.records.len() < self.capacity {
            self.records.push(e);
        } else {
            self.records[self.head] = e;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> &[Experience] {
        &self.records
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.head = 0;
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.records.len())).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn greedy_action(q: &DVector<f64>) -> Result<usize> {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::Divergence(format!("non-finite Q-value {v} at action {i}")));
        }
        if v > q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Epsilon-greedy choice: uniform with probability `epsilon`, greedy otherwise.
pub fn select_action<R: Rng>(q: &DVector<f64>, epsilon: f64, rng: &mut R) -> Result<usize> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..q.len()))
    } else {
        greedy_action(q)
    }
}

/// Double-Q target: the evaluation readout picks the next action, the target
/// readout scores it.
pub fn double_q_target(reward: f64, gamma: f64, eval_next: &DVector<f64>, target_next: &DVector<f64>) -> Result<f64> {
    let y = greedy_action(eval_next)?;
    Ok(reward + gamma * target_next[y])
}

/// How training obtains the reservoir states of sampled records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSource {
    /// Reuse the states stored at collection time.
    Cached,
    /// Re-advance the reservoir from the zero state over the whole input log.
    RecomputeFromOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub mean_loss: f64,
    pub rejected: usize,
}

/// Echo-state Q-learner for one SU.
#[derive(Debug, Clone)]
pub struct DeqnAgent {
    net: DeqnNetwork,
    target_readout: DMatrix<f64>,
    /// Reservoir state after the most recent acted-on observation.
    hidden: HiddenState,
    current_obs: Option<Vec<f64>>,
    /// Target-stream state computed during `observe`, checked on the next `act`.
    lookahead: Option<(Vec<f64>, HiddenState)>,
    steps: usize,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    buffer: ReplayBuffer,
    input_log: Option<Vec<Vec<f64>>>,
}

impl DeqnAgent {
    pub fn new(
        input_dim: usize,
        num_actions: usize,
        net_cfg: &NetworkConfig,
        buffer_size: usize,
        master_seed: u64,
        index: usize,
    ) -> Result<Self> {
        let net = DeqnNetwork::new(
            input_dim,
            num_actions,
            net_cfg,
            seed::derive(master_seed, "network", index as u64),
        )?;
        Ok(Self::from_network(net, buffer_size, master_seed, index))
    }

    pub fn from_network(net: DeqnNetwork, buffer_size: usize, master_seed: u64, index: usize) -> Self {
        let target_readout = net.readout_weights().clone();
        let hidden = net.zero_state();
        Self {
            net,
            target_readout,
            hidden,
            current_obs: None,
            lookahead: None,
            steps: 0,
            explore_rng: seed::rng(master_seed, "explore", index as u64),
            replay_rng: seed::rng(master_seed, "replay", index as u64),
            buffer: ReplayBuffer::new(buffer_size),
            input_log: None,
        }
    }

    /// Keep every observation since the zero state (needed for recompute).
    pub fn enable_input_log(&mut self) {
        if self.input_log.is_none() {
            self.input_log = Some(Vec::new());
        }
    }

    pub fn input_log(&self) -> Option<&[Vec<f64>]> {
        self.input_log.as_deref()
    }

    pub fn network(&self) -> &DeqnNetwork {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut DeqnNetwork {
        &mut self.net
    }

    pub fn target_readout(&self) -> &DMatrix<f64> {
        &self.target_readout
    }

    pub fn hidden(&self) -> &HiddenState {
        &self.hidden
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn q_values(&self, obs: &[f64], h: &HiddenState) -> Result<DVector<f64>> {
        self.net.readout(obs, h)
    }

    /// Advances the reservoir with `obs` and picks an action.
    pub fn act(&mut self, obs: &[f64], epsilon: f64) -> Result<usize> {
        let h = self.net.advance(&self.hidden, obs)?;
        // The target stream advanced with this observation during `observe`;
        // with a shared frozen reservoir both streams must agree exactly.
        if let Some((o, target_h)) = self.lookahead.take() {
            if o == obs && target_h != h {
                return Err(Error::Divergence("evaluation and target hidden streams disagree".into()));
            }
        }
        if !h.is_finite() {
            return Err(Error::Divergence("reservoir state became non-finite".into()));
        }
        if let Some(log) = &mut self.input_log {
            log.push(obs.to_vec());
        }
        let q = self.net.readout(obs, &h)?;
        let a = select_action(&q, epsilon, &mut self.explore_rng)?;
        self.hidden = h;
        self.current_obs = Some(obs.to_vec());
        Ok(a)
    }

    /// Stores the transition that followed the last `act`.
    pub fn observe(&mut self, action: usize, reward: f64, next_obs: &[f64]) -> Result<()> {
        let state_k = self
            .current_obs
            .take()
            .ok_or_else(|| Error::Divergence("observe called before act".into()))?;
        let hidden_k1 = self.net.advance(&self.hidden, next_obs)?;
        self.buffer.push(Experience {
            step: self.steps,
            state_k,
            hidden_k: self.hidden.clone(),
            action_k: action,
            reward_k: reward,
            state_k1: next_obs.to_vec(),
            hidden_k1: hidden_k1.clone(),
        });
        self.lookahead = Some((next_obs.to_vec(), hidden_k1));
        self.steps += 1;
        Ok(())
    }

    /// Reservoir states `h[0..=last]` re-advanced from zero over the input log.
    pub fn replay_states(&self, last: usize) -> Result<Vec<HiddenState>> {
        let log = self
            .input_log
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("input log is disabled".into()))?;
        let mut h = self.net.zero_state();
        let mut out = Vec::with_capacity(last + 1);
        for input in log.iter().take(last + 1) {
            h = self.net.advance(&h, input)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    fn recompute_state(&self, step: usize) -> Result<HiddenState> {
        let log = self
            .input_log
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("recompute needs the input log".into()))?;
        let mut h = self.net.zero_state();
        for input in &log[..=step] {
            h = self.net.advance(&h, input)?;
        }
        Ok(h)
    }

    /// `iterations` mini-batch steps on the current buffer.
    pub fn train(&mut self, cfg: &AgentConfig, lr: f64, source: StateSource) -> Result<TrainStats> {
        if self.buffer.is_empty() || cfg.iterations == 0 {
            return Ok(TrainStats {
                mean_loss: 0.0,
                rejected: 0,
            });
        }
        let cached: Vec<(DVector<f64>, DVector<f64>)> = match source {
            StateSource::Cached => self
                .buffer
                .records()
                .iter()
                .map(|e| (self.net.features(&e.state_k, &e.hidden_k), self.net.features(&e.state_k1, &e.hidden_k1)))
                .collect(),
            StateSource::RecomputeFromOrigin => Vec::new(),
        };
        let mut loss_sum = 0.0;
        let mut rejected = 0;
        for _ in 0..cfg.iterations {
            let idx = self.buffer.sample_indices(&mut self.replay_rng, cfg.batch_size);
            let feats: Vec<(DVector<f64>, DVector<f64>)> = match source {
                StateSource::Cached => idx.iter().map(|&i| cached[i].clone()).collect(),
                StateSource::RecomputeFromOrigin => idx
                    .iter()
                    .map(|&i| {
                        let e = &self.buffer.records()[i];
                        let hk = self.recompute_state(e.step)?;
                        let hk1 = self.net.advance(&hk, &e.state_k1)?;
                        Ok((self.net.features(&e.state_k, &hk), self.net.features(&e.state_k1, &hk1)))
                    })
                    .collect::<Result<_>>()?,
            };
            let mut targets = Vec::with_capacity(idx.len());
            for (&i, (_, u1)) in idx.iter().zip(&feats) {
                let e = &self.buffer.records()[i];
                let eval_next = self.net.readout_features(u1)?;
                let target_next = readout_with(&self.target_readout, u1)?;
                // A non-finite next-state estimate is passed on and rejected by the step.
                let t = match greedy_action(&eval_next) {
                    Ok(y) => e.reward_k + cfg.gamma * target_next[y],
                    Err(_) => f64::NAN,
                };
                targets.push(t);
            }
            let samples: Vec<ReadoutSample<'_>> = idx
                .iter()
                .zip(&feats)
                .zip(&targets)
                .map(|((&i, (u, _)), &t)| ReadoutSample {
                    features: u,
                    action: self.buffer.records()[i].action_k,
                    target: t,
                })
                .collect();
            let stats = self.net.train_readout_step(&samples, lr)?;
            if !stats.loss.is_finite() || !self.net.readout_weights().iter().all(|w| w.is_finite()) {
                return Err(Error::Divergence(format!("training loss became {}", stats.loss)));
            }
            loss_sum += stats.loss;
            rejected += stats.rejected;
        }
        Ok(TrainStats {
            mean_loss: loss_sum / cfg.iterations as f64,
            rejected,
        })
    }

    pub fn sync_target(&mut self) {
        self.target_readout = self.net.readout_weights().clone();
    }

    pub fn clear_buffer(&mut self) {
        self.buffer.clear();
    }

    pub fn checkpoint(&self, round: usize) -> AgentCheckpoint {
        AgentCheckpoint {
            version: AgentCheckpoint::VERSION,
            round,
            steps: self.steps,
            network: self.net.checkpoint(),
            target_readout: MatrixData::from(&self.target_readout),
            hidden: self.hidden.layers.iter().map(|l| l.iter().copied().collect()).collect(),
        }
    }

    /// Restores weights and reservoir state; buffers and RNG streams restart.
    pub fn from_checkpoint(c: &AgentCheckpoint, buffer_size: usize, master_seed: u64, index: usize) -> Result<Self> {
        if c.version != AgentCheckpoint::VERSION {
            return Err(Error::Checkpoint(format!("unsupported agent checkpoint version {}", c.version)));
        }
        let net = DeqnNetwork::from_checkpoint(&c.network)?;
        let mut agent = Self::from_network(net, buffer_size, master_seed, index);
        let target = c.target_readout.to_matrix()?;
        if target.shape() != agent.target_readout.shape() {
            return Err(Error::Checkpoint("target readout shape mismatch".into()));
        }
        agent.target_readout = target;
        let hidden = HiddenState {
            layers: c.hidden.iter().map(|l| DVector::from_vec(l.clone())).collect(),
        };
        if hidden.layers.len() != agent.hidden.layers.len() {
            return Err(Error::Checkpoint("hidden state layer count mismatch".into()));
        }
        agent.hidden = hidden;
        agent.steps = c.steps;
        Ok(agent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub round: usize,
    pub steps: usize,
    pub network: NetworkCheckpoint,
    pub target_readout: MatrixData,
    pub hidden: Vec<Vec<f64>>,
}

impl AgentCheckpoint {
    pub const VERSION: u32 = 1;
}

/// Anything that can drive one agent slot.
#[derive(Debug, Clone)]
pub enum Learner {
    Deqn(Box<DeqnAgent>),
    Fixed(FixedPolicy),
}

impl Learner {
    pub fn act(&mut self, obs: &[f64], epsilon: f64) -> Result<usize> {
        match self {
            Learner::Deqn(a) => a.act(obs, epsilon),
            Learner::Fixed(p) => p.act(obs),
        }
    }

    pub fn observe(&mut self, action: usize, reward: f64, next_obs: &[f64]) -> Result<()> {
        match self {
            Learner::Deqn(a) => a.observe(action, reward, next_obs),
            Learner::Fixed(_) => Ok(()),
        }
    }

    pub fn as_deqn(&self) -> Option<&DeqnAgent> {
        match self {
            Learner::Deqn(a) => Some(a),
            Learner::Fixed(_) => None,
        }
    }

    pub fn as_deqn_mut(&mut self) -> Option<&mut DeqnAgent> {
        match self {
            Learner::Deqn(a) => Some(a),
            Learner::Fixed(_) => None,
        }
    }
}

/// Summary of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Per agent; `None` for fixed policies.
    pub mean_loss: Vec<Option<f64>>,
    /// Mean reward of each agent over the collected periods.
    pub mean_reward: Vec<f64>,
    pub train_seconds: f64,
}

/// Runs rounds of collect / train / sync for a set of learners.
#[derive(Debug, Clone)]
pub struct Trainer {
    learners: Vec<Learner>,
    cfg: AgentConfig,
    round: usize,
    parallel: bool,
    state_source: StateSource,
}

impl Trainer {
    pub fn new(learners: Vec<Learner>, cfg: AgentConfig) -> Self {
        Self {
            learners,
            cfg,
            round: 0,
            parallel: false,
            state_source: StateSource::Cached,
        }
    }

    /// Train agents on separate threads. Results do not depend on this.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn with_state_source(mut self, source: StateSource) -> Self {
        self.state_source = source;
        if source == StateSource::RecomputeFromOrigin {
            for l in &mut self.learners {
                if let Learner::Deqn(a) = l {
                    a.enable_input_log();
                }
            }
        }
        self
    }

    pub fn learners(&self) -> &[Learner] {
        &self.learners
    }

    pub fn learners_mut(&mut self) -> &mut [Learner] {
        &mut self.learners
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon_at(self.round)
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate_for(self.epsilon())
    }

    /// Acts for `periods` steps, storing experience. `on_step` sees every
    /// environment step info. Returns the per-agent reward sums.
    pub fn collect<E: MultiAgentEnv>(
        &mut self,
        env: &mut E,
        periods: usize,
        mut on_step: impl FnMut(&E::Info) -> Result<()>,
    ) -> Result<Vec<f64>> {
        if env.num_agents() != self.learners.len() {
            return Err(Error::Dimension {
                context: "learners per environment agent",
                expected: env.num_agents(),
                got: self.learners.len(),
            });
        }
        let eps = self.epsilon();
        let mut totals = vec![0.0; self.learners.len()];
        for _ in 0..periods {
            let obs = env.observations();
            let actions = self
                .learners
                .iter_mut()
                .zip(&obs)
                .map(|(l, o)| l.act(o, eps))
                .collect::<Result<Vec<_>>>()?;
            let tr = env.step(&actions)?;
            for (i, l) in self.learners.iter_mut().enumerate() {
                l.observe(actions[i], tr.rewards[i], &tr.observations[i])?;
                totals[i] += tr.rewards[i];
            }
            on_step(&tr.info)?;
        }
        Ok(totals)
    }

    /// Trains every learning agent on its buffer.
    pub fn train(&mut self) -> Result<Vec<Option<TrainStats>>> {
        let lr = self.learning_rate();
        let cfg = &self.cfg;
        let source = self.state_source;
        let job = |l: &mut Learner| -> Result<Option<TrainStats>> {
            match l {
                Learner::Deqn(a) => a.train(cfg, lr, source).map(Some),
                Learner::Fixed(_) => Ok(None),
            }
        };
        if self.parallel {
            self.learners.par_iter_mut().map(job).collect()
        } else {
            self.learners.iter_mut().map(job).collect()
        }
    }

    /// Copies readouts, clears buffers and moves the schedule on.
    pub fn finish_round(&mut self) {
        for l in &mut self.learners {
            if let Learner::Deqn(a) = l {
                a.sync_target();
                a.clear_buffer();
            }
        }
        self.round += 1;
    }

    /// One full round: collect `Z` periods, train, sync, clear.
    pub fn run_round<E: MultiAgentEnv>(
        &mut self,
        env: &mut E,
        on_step: impl FnMut(&E::Info) -> Result<()>,
    ) -> Result<RoundStats> {
        let round = self.round;
        let epsilon = self.epsilon();
        let learning_rate = self.learning_rate();
        let z = self.cfg.buffer_size;
        let totals = self.collect(env, z, on_step)?;
        let start = std::time::Instant::now();
        let stats = self.train()?;
        let train_seconds = start.elapsed().as_secs_f64();
        self.finish_round();
        Ok(RoundStats {
            round,
            epsilon,
            learning_rate,
            mean_loss: stats.iter().map(|s| s.map(|s| s.mean_loss)).collect(),
            mean_reward: totals.iter().map(|t| t / z as f64).collect(),
            train_seconds,
        })
    }

    /// The learner at `index`, if it is a DEQN agent.
    pub fn deqn(&self, index: usize) -> Option<&DeqnAgent> {
        self.learners.get(index).and_then(Learner::as_deqn)
    }
}
