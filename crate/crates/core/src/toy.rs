//! Small reference problems with known answers, used to validate the learner
//! independently of the radio environment.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::{MultiAgentEnv, Transition};
use crate::error::{Error, Result};
use crate::seed;

/// Finite MDP with explicit transition probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transitions[s][a]` lists `(next_state, probability)`.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl FiniteMdp {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "value iteration needs 0 <= gamma < 1"));
        }
        if self.transitions.len() != self.num_states || self.rewards.len() != self.num_states {
            return Err(Error::Dimension {
                context: "MDP states",
                expected: self.num_states,
                got: self.transitions.len(),
            });
        }
        for s in 0..self.num_states {
            if self.transitions[s].len() != self.num_actions || self.rewards[s].len() != self.num_actions {
                return Err(Error::Dimension {
                    context: "MDP actions",
                    expected: self.num_actions,
                    got: self.transitions[s].len(),
                });
            }
            for next in &self.transitions[s] {
                let total: f64 = next.iter().map(|(_, p)| p).sum();
                if (total - 1.0).abs() > 1e-9 || next.iter().any(|&(n, p)| n >= self.num_states || p < 0.0) {
                    return Err(Error::config("transitions", format!("row for state {s} is not a distribution")));
                }
            }
        }
        Ok(())
    }
}

/// Optimal action values by value iteration to a sup-norm change of `tol`.
pub fn value_iteration(mdp: &FiniteMdp, tol: f64, max_iterations: usize) -> Result<Vec<Vec<f64>>> {
    mdp.validate()?;
    let mut v = vec![0.0; mdp.num_states];
    for _ in 0..max_iterations {
        let q = backup(mdp, &v);
        let next: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta <= tol {
            return Ok(backup(mdp, &v));
        }
    }
    Err(Error::NonConvergence(max_iterations))
}

fn backup(mdp: &FiniteMdp, v: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.num_states)
        .map(|s| {
            (0..mdp.num_actions)
                .map(|a| mdp.rewards[s][a] + mdp.gamma * mdp.transitions[s][a].iter().map(|&(n, p)| p * v[n]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Tabular `Q*` with the default tolerance `1e-10`.
pub fn toy_mdp_oracle(mdp: &FiniteMdp) -> Result<Vec<Vec<f64>>> {
    value_iteration(mdp, 1e-10, 100_000)
}

/// Greedy policy of a Q table; ties go to the lowest action.
pub fn greedy_policy(q: &[Vec<f64>]) -> Vec<usize> {
    q.iter()
        .map(|row| {
            let mut best = 0;
            for (a, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Four states on a ring. Action 0 stays, action 1 moves to the next state.
/// Staying in the last state pays 1; everything else pays 0.
pub fn ring_mdp(gamma: f64) -> FiniteMdp {
    let n = 4;
    FiniteMdp {
        num_states: n,
        num_actions: 2,
        transitions: (0..n).map(|s| vec![vec![(s, 1.0)], vec![((s + 1) % n, 1.0)]]).collect(),
        rewards: (0..n).map(|s| vec![if s == n - 1 { 1.0 } else { 0.0 }, 0.0]).collect(),
        gamma,
    }
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Single-agent wrapper around a [`FiniteMdp`] that observes the one-hot state.
#[derive(Debug, Clone)]
pub struct MdpEnv {
    mdp: FiniteMdp,
    state: usize,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MdpStepInfo {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

impl MdpEnv {
    pub fn new(mdp: FiniteMdp, start: usize, seed: u64) -> Result<Self> {
        mdp.validate()?;
        if start >= mdp.num_states {
            return Err(Error::config("start", "state out of range"));
        }
        Ok(Self {
            mdp,
            state: start,
            rng: seed::rng(seed, "mdp", 0),
        })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn reset_to(&mut self, state: usize) {
        self.state = state;
    }

    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }
}

impl MultiAgentEnv for MdpEnv {
    type Info = MdpStepInfo;

    fn num_agents(&self) -> usize {
        1
    }

    fn observation_dim(&self) -> usize {
        self.mdp.num_states
    }

    fn num_actions(&self) -> usize {
        self.mdp.num_actions
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        vec![one_hot(self.state, self.mdp.num_states)]
    }

    fn step(&mut self, actions: &[usize]) -> Result<Transition<MdpStepInfo>> {
        let a = *actions.first().filter(|&&a| a < self.mdp.num_actions).ok_or(Error::Dimension {
            context: "toy action",
            expected: self.mdp.num_actions,
            got: actions.first().copied().unwrap_or(usize::MAX),
        })?;
        let s = self.state;
        let reward = self.mdp.rewards[s][a];
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let row = &self.mdp.transitions[s][a];
        let mut next = row.last().map_or(s, |&(n, _)| n);
        for &(n, p) in row {
            acc += p;
            if u < acc {
                next = n;
                break;
            }
        }
        self.state = next;
        Ok(Transition {
            rewards: vec![reward],
            observations: self.observations(),
            info: MdpStepInfo {
                state: s,
                action: a,
                next_state: next,
            },
        })
    }
}

/// Two-armed deterministic bandit with a constant observation: arm `i`
/// always pays `rewards[i]`.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub rewards: [f64; 2],
}

impl MultiAgentEnv for BanditEnv {
    type Info = ();

    fn num_agents(&self) -> usize {
        1
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        vec![vec![1.0]]
    }

    fn step(&mut self, actions: &[usize]) -> Result<Transition<()>> {
        let a = *actions.first().filter(|&&a| a < 2).ok_or(Error::Dimension {
            context: "bandit action",
            expected: 2,
            got: actions.first().copied().unwrap_or(usize::MAX),
        })?;
        Ok(Transition {
            rewards: vec![self.rewards[a]],
            observations: self.observations(),
            info: (),
        })
    }
}

/// Memory probe: each period shows a fresh random bit (one-hot over two
/// values); the action pays 1 iff it names the bit shown one period earlier.
/// The current observation carries no information about the reward, so any
/// memoryless policy earns 0.5 on average.
#[derive(Debug, Clone)]
pub struct RecallEnv {
    previous: usize,
    current: usize,
    rng: ChaCha8Rng,
}

impl RecallEnv {
    pub fn new(seed: u64) -> Self {
        let mut rng = seed::rng(seed, "recall", 0);
        let previous = rng.random_range(0..2);
        let current = rng.random_range(0..2);
        Self { previous, current, rng }
    }
}

impl MultiAgentEnv for RecallEnv {
    type Info = ();

    fn num_agents(&self) -> usize {
        1
    }

    fn observation_dim(&self) -> usize {
        2
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        vec![one_hot(self.current, 2)]
    }

    fn step(&mut self, actions: &[usize]) -> Result<Transition<()>> {
        let a = *actions.first().ok_or(Error::Dimension {
            context: "recall action",
            expected: 1,
            got: 0,
        })?;
        let reward = if a == self.previous { 1.0 } else { 0.0 };
        self.previous = self.current;
        self.current = self.rng.random_range(0..2);
        Ok(Transition {
            rewards: vec![reward],
            observations: self.observations(),
            info: (),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(r: f64, gamma: f64) -> FiniteMdp {
        FiniteMdp {
            num_states: 1,
            num_actions: 1,
            transitions: vec![vec![vec![(0, 1.0)]]],
            rewards: vec![vec![r]],
            gamma,
        }
    }

    #[test]
    fn geometric_series() {
        let q = toy_mdp_oracle(&single(1.0, 0.9)).unwrap();
        assert!((q[0][0] - 10.0).abs() < 1e-8);
    }

    #[test]
    fn two_state_chain_by_hand() {
        // 0 -> 1 -> 1, reward 0 in state 0 and 1 in state 1, gamma 0.5.
        let mdp = FiniteMdp {
            num_states: 2,
            num_actions: 1,
            transitions: vec![vec![vec![(1, 1.0)]], vec![vec![(1, 1.0)]]],
            rewards: vec![vec![0.0], vec![1.0]],
            gamma: 0.5,
        };
        let q = toy_mdp_oracle(&mdp).unwrap();
        // Q(1) = 1 / (1 - 0.5) = 2, Q(0) = 0.5 * 2 = 1.
        assert!((q[1][0] - 2.0).abs() < 1e-9);
        assert!((q[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_discount_gives_immediate_rewards() {
        let mdp = ring_mdp(0.0);
        assert_eq!(toy_mdp_oracle(&mdp).unwrap(), mdp.rewards);
    }

    #[test]
    fn ring_policy() {
        let q = toy_mdp_oracle(&ring_mdp(0.9)).unwrap();
        assert_eq!(greedy_policy(&q), vec![1, 1, 1, 0]);
        assert!((q[3][0] - 10.0).abs() < 1e-8);
        assert!((q[0][1] - 0.729 * 10.0).abs() < 1e-8);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        assert!(matches!(value_iteration(&single(1.0, 0.99), 1e-10, 5), Err(Error::NonConvergence(5))));
    }

    #[test]
    fn recall_rewards_previous_bit() {
        let mut env = RecallEnv::new(4);
        for _ in 0..100 {
            let prev = env.previous;
            let tr = env.step(&[prev]).unwrap();
            assert_eq!(tr.rewards[0], 1.0);
        }
    }
}
