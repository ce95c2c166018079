//! Step-one interval schedules and the optimizers that produce them.
//!
//! A schedule picks, for each of the M unconditional rounds, an interval
//! a·τ_r with a ∈ {1..d}. [`ppo`] learns it with distributed PPO; [`beam`]
//! searches the d^M tree directly and serves as a cross-check.

pub mod beam;
pub mod checkpoint;
pub mod env;
pub mod nn;
pub mod ppo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{optimal_conditional_interval, reserved_interval};
use crate::params::PhysicalParams;

pub use beam::{beam_search_baseline, equal_spacing, exhaustive_search, BeamScore, SearchResult};
pub use env::{reward, CoolingEnv, RewardMode};
pub use ppo::{
    rollout, train, update_global, PolicyParams, Sampling, TrainConfig, TrainResult, Trajectory,
};

/// Available interval multiples {1..d}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub d: usize,
}

impl ActionSpace {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("action space needs d >= 1".into()));
        }
        Ok(Self { d })
    }

    /// Interval for a 1-based action.
    pub fn interval(&self, action: u32, tau_r: f64) -> f64 {
        f64::from(action) * tau_r
    }
}

/// How the conditional rounds of step two are timed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepTwoIntervals {
    /// Round k uses π/(2Ω_n) for the level n = n_r − k + 1 being emptied.
    #[default]
    PerLevel,
    /// Every round uses π/(2Ω_{n_r}).
    Fixed,
}

/// Intervals of a full two-step run: step-one multiples of τ_r and the step-two timing rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSchedule {
    pub n_r: usize,
    pub tau_r: f64,
    pub actions: Vec<u32>,
    #[serde(default)]
    pub step_two: StepTwoIntervals,
}

impl MeasurementSchedule {
    pub fn new(params: &PhysicalParams, n_r: usize, actions: Vec<u32>) -> Self {
        Self {
            n_r,
            tau_r: reserved_interval(params, n_r),
            actions,
            step_two: StepTwoIntervals::PerLevel,
        }
    }

    /// All-τ_r schedule of length `rounds`.
    pub fn equal(params: &PhysicalParams, n_r: usize, rounds: usize) -> Self {
        Self::new(params, n_r, vec![1; rounds])
    }

    pub fn with_step_two(mut self, step_two: StepTwoIntervals) -> Self {
        self.step_two = step_two;
        self
    }

    pub fn rounds(&self) -> usize {
        self.actions.len()
    }

    /// Step-one intervals in seconds.
    pub fn step_one_intervals(&self) -> Vec<f64> {
        self.actions
            .iter()
            .map(|a| f64::from(*a) * self.tau_r)
            .collect()
    }

    /// The n_r step-two intervals in seconds.
    pub fn step_two_intervals(&self, params: &PhysicalParams) -> Result<Vec<f64>> {
        (0..self.n_r)
            .map(|k| match self.step_two {
                StepTwoIntervals::PerLevel => optimal_conditional_interval(params, self.n_r - k),
                StepTwoIntervals::Fixed => optimal_conditional_interval(params, self.n_r),
            })
            .collect()
    }

    /// Mean action of the first and last `k` rounds.
    pub fn head_tail_means(&self, k: usize) -> (f64, f64) {
        let k = k.min(self.actions.len()).max(1);
        let mean = |s: &[u32]| s.iter().map(|a| f64::from(*a)).sum::<f64>() / s.len() as f64;
        (
            mean(&self.actions[..k]),
            mean(&self.actions[self.actions.len() - k..]),
        )
    }
}
