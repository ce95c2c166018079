//! Closed-system cooling environment seen by the schedule optimizers.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{thermal_occupation, thermal_state, ResonatorPopulations};
use crate::maps::{higher_reserved_states, reserved_interval, UnconditionalKernel, LEAKAGE_TOL};
use crate::params::PhysicalParams;

/// Fidelity at which the tangent reward is capped.
pub const REWARD_FIDELITY_CAP: f64 = 1.0 - 1e-9;

/// r = 10·tan(F_r·π/2), with F_r clamped to [0, 1 − 1e-9].
pub fn reward(state: &ResonatorPopulations, n_r: usize) -> f64 {
    reward_from_fidelity(state.as_slice().get(n_r).copied().unwrap_or(0.0))
}

pub fn reward_from_fidelity(f: f64) -> f64 {
    10.0 * (f.clamp(0.0, REWARD_FIDELITY_CAP) * FRAC_PI_2).tan()
}

/// When rewards are granted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// After every measurement.
    #[default]
    PerStep,
    /// Only after the last measurement.
    Terminal,
}

/// M unconditional rounds from a fixed initial state, one kernel per action.
#[derive(Debug, Clone)]
pub struct CoolingEnv {
    n_r: usize,
    rounds: usize,
    tau_r: f64,
    kernels: Vec<UnconditionalKernel>,
    initial: ResonatorPopulations,
    obs_len: usize,
    reward_mode: RewardMode,
}

impl CoolingEnv {
    /// Thermal start at the temperature in `params`.
    pub fn new(params: &PhysicalParams, n_r: usize, rounds: usize, d: usize) -> Result<Self> {
        let initial = thermal_state(&thermal_occupation(params), params.n_c)?;
        Self::with_initial(params, n_r, rounds, d, initial)
    }

    pub fn with_initial(
        params: &PhysicalParams,
        n_r: usize,
        rounds: usize,
        d: usize,
        initial: ResonatorPopulations,
    ) -> Result<Self> {
        if d == 0 || rounds == 0 {
            return Err(Error::InvalidParameter(
                "need d >= 1 and at least one round".into(),
            ));
        }
        let n_c = initial.n_c();
        if n_r > n_c {
            return Err(Error::IndexOutOfRange { index: n_r, n_c });
        }
        let tau_r = reserved_interval(params, n_r);
        let kernels = (1..=d)
            .map(|a| UnconditionalKernel::new(params, a as f64 * tau_r, n_c))
            .collect();
        let second = higher_reserved_states(params, n_r, 2)?
            .get(2)
            .unwrap_or(n_c);
        let obs_len = (second + 5).min(n_c) + 1;
        Ok(Self {
            n_r,
            rounds,
            tau_r,
            kernels,
            initial: initial.normalized()?,
            obs_len,
            reward_mode: RewardMode::PerStep,
        })
    }

    pub fn with_reward_mode(mut self, mode: RewardMode) -> Self {
        self.reward_mode = mode;
        self
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn actions(&self) -> usize {
        self.kernels.len()
    }

    pub fn tau_r(&self) -> f64 {
        self.tau_r
    }

    pub fn reward_mode(&self) -> RewardMode {
        self.reward_mode
    }

    pub fn initial(&self) -> &ResonatorPopulations {
        &self.initial
    }

    /// Policy input size: populations p_0..p_{n_c'} and the step fraction.
    pub fn observation_dim(&self) -> usize {
        self.obs_len + 1
    }

    pub fn observe(&self, p: &[f64], step: usize) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.obs_len + 1);
        obs.extend_from_slice(&p[..self.obs_len]);
        obs.push(step as f64 / self.rounds as f64);
        obs
    }

    /// Applies the 1-based `action` to `p` in place.
    pub fn apply(&self, p: &mut [f64], action: u32) -> Result<()> {
        let kernel = self
            .kernels
            .get((action as usize).wrapping_sub(1))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "action {action} outside 1..={}",
                    self.kernels.len()
                ))
            })?;
        let leaked = kernel.apply_in_place(p);
        if leaked > LEAKAGE_TOL {
            return Err(Error::CutoffLeakage {
                leaked,
                n_c: p.len() - 1,
            });
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        Ok(())
    }

    /// Reward for arriving in `p` after round `step` (0-based).
    pub fn reward_at(&self, p: &[f64], step: usize) -> f64 {
        match self.reward_mode {
            RewardMode::PerStep => reward_from_fidelity(p[self.n_r]),
            RewardMode::Terminal if step + 1 == self.rounds => reward_from_fidelity(p[self.n_r]),
            RewardMode::Terminal => 0.0,
        }
    }

    /// Final state after the given actions.
    pub fn run(&self, actions: &[u32]) -> Result<Vec<f64>> {
        let mut p = self.initial.as_slice().to_vec();
        for a in actions {
            self.apply(&mut p, *a)?;
        }
        Ok(p)
    }

    /// Reserved-state fidelity F_r after the given actions.
    pub fn fidelity(&self, actions: &[u32]) -> Result<f64> {
        Ok(self.run(actions)?[self.n_r])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::unconditional_map;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reward_examples() {
        assert_abs_diff_eq!(reward_from_fidelity(0.5), 10.0, epsilon = 1e-12);
        assert_eq!(reward_from_fidelity(0.0), 0.0);
        assert_abs_diff_eq!(reward_from_fidelity(0.9), 63.1375151467504, epsilon = 1e-9);
        let cap = reward_from_fidelity(1.0);
        assert!(cap.is_finite() && cap > 6.3e9 && cap < 6.4e9, "{cap}");
        assert_eq!(reward_from_fidelity(2.0), cap);
    }

    #[test]
    fn env_matches_measurement_maps() {
        let p = PhysicalParams::reference();
        let env = CoolingEnv::new(&p, 10, 6, 5).unwrap();
        let actions = [1, 3, 5, 2, 4, 5];
        let mut s = env.initial().clone();
        for a in actions {
            s = unconditional_map(&s, &p, f64::from(a) * env.tau_r())
                .unwrap()
                .post_state;
        }
        let direct = env.run(&actions).unwrap();
        for (x, y) in direct.iter().zip(s.as_slice()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        assert_eq!(env.observation_dim(), 43 + 5 + 2);
        assert!(env.apply(&mut direct.clone(), 6).is_err());
        assert!(env.apply(&mut direct.clone(), 0).is_err());
    }

    #[test]
    fn terminal_reward_only_at_the_end() {
        let p = PhysicalParams::reference();
        let env = CoolingEnv::new(&p, 10, 3, 2)
            .unwrap()
            .with_reward_mode(RewardMode::Terminal);
        let s = env.run(&[1, 1, 1]).unwrap();
        assert_eq!(env.reward_at(&s, 0), 0.0);
        assert!(env.reward_at(&s, 2) > 0.0);
    }
}
