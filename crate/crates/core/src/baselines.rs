//! Fixed, training-free comparison policies. The memoryless DQN ablation is a
//! [`crate::agent::DeqnAgent`] built with zero reservoir layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{SuAction, SuState};
use crate::error::{Error, Result};

/// Uniform over all `2M` actions.
pub fn random_policy<R: Rng>(num_channels: usize, rng: &mut R) -> SuAction {
    SuAction::from_index(rng.random_range(0..2 * num_channels), num_channels)
}

/// Access iff the energy feature is strictly below `threshold`; sense the
/// next channel round-robin.
pub fn threshold_policy(state: &SuState, threshold: f64) -> SuAction {
    SuAction {
        access: state.energy_feature < threshold,
        next_channel: (state.sensed_channel + 1) % state.num_channels,
    }
}

#[derive(Debug, Clone)]
pub enum FixedPolicy {
    Random { num_channels: usize, rng: ChaCha8Rng },
    Threshold { num_channels: usize, threshold: f64 },
}

impl FixedPolicy {
    pub fn random(num_channels: usize, rng: ChaCha8Rng) -> Self {
        FixedPolicy::Random { num_channels, rng }
    }

    /// `+inf` always accesses, `-inf` never does.
    pub fn threshold(num_channels: usize, threshold: f64) -> Result<Self> {
        if threshold.is_nan() {
            return Err(Error::config("threshold_feature", "must not be NaN"));
        }
        Ok(FixedPolicy::Threshold {
            num_channels,
            threshold,
        })
    }

    /// Flat action index for an observation `[feature, one-hot channel]`.
    pub fn act(&mut self, obs: &[f64]) -> Result<usize> {
        match self {
            FixedPolicy::Random { num_channels, rng } => Ok(random_policy(*num_channels, rng).index(*num_channels)),
            FixedPolicy::Threshold {
                num_channels,
                threshold,
            } => {
                let state = SuState::from_vector(obs).filter(|s| s.num_channels == *num_channels).ok_or(
                    Error::Dimension {
                        context: "threshold policy observation",
                        expected: 1 + *num_channels,
                        got: obs.len(),
                    },
                )?;
                Ok(threshold_policy(&state, *threshold).index(*num_channels))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn state(feature: f64, channel: usize) -> SuState {
        SuState {
            energy_feature: feature,
            sensed_channel: channel,
            num_channels: 4,
        }
    }

    #[test]
    fn random_actions_in_range_and_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            counts[random_policy(4, &mut rng).index(4)] += 1;
        }
        let expected = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 7 degrees of freedom, 99.9% quantile.
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }

    #[test]
    fn random_is_reproducible() {
        let mut a = FixedPolicy::random(4, ChaCha8Rng::seed_from_u64(5));
        let mut b = FixedPolicy::random(4, ChaCha8Rng::seed_from_u64(5));
        let obs = state(0.0, 0).to_vector();
        for _ in 0..50 {
            assert_eq!(a.act(&obs).unwrap(), b.act(&obs).unwrap());
        }
    }

    #[test]
    fn threshold_boundaries() {
        assert!(!threshold_policy(&state(0.5, 1), 0.5).access);
        assert!(threshold_policy(&state(0.49, 1), 0.5).access);
        assert!(threshold_policy(&state(1e300, 1), f64::INFINITY).access);
        assert!(!threshold_policy(&state(-1e300, 1), f64::NEG_INFINITY).access);
        assert_eq!(threshold_policy(&state(0.0, 3), 0.0).next_channel, 0);
        assert_eq!(threshold_policy(&state(0.0, 1), 0.0).next_channel, 2);
    }

    #[test]
    fn threshold_is_stateless() {
        let mut p = FixedPolicy::threshold(4, 0.0).unwrap();
        let obs = state(-0.3, 2).to_vector();
        let first = p.act(&obs).unwrap();
        for _ in 0..10 {
            assert_eq!(p.act(&obs).unwrap(), first);
        }
        assert_eq!(first, SuAction { access: true, next_channel: 3 }.index(4));
        assert!(FixedPolicy::threshold(4, f64::NAN).is_err());
    }
}
