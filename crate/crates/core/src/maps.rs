//! Measurement superoperators acting on diagonal resonator states.
//!
//! An unconditional round prepares the qubit in |e⟩, evolves for τ and
//! discards the measurement record:
//! p_n → p_n|α_{n+1}|² + p_{n−1}|β_n|².
//! A conditional round prepares |g⟩ and keeps only the |e⟩ outcome, which
//! shifts every population down one level: p_{n−1} ← |β_n|² p_n.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{ResonatorPopulations, ThermalSpec};
use crate::jc::{rabi, weights};
use crate::params::PhysicalParams;

/// Largest population allowed to leave the truncated space in one round.
pub const LEAKAGE_TOL: f64 = 1e-9;
/// Conditional rounds below this success probability are reported as failures.
pub const MIN_SUCCESS_PROB: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservedState {
    pub k: u32,
    pub exact: f64,
    /// Largest Fock index not above the exact value.
    pub index: usize,
}

/// First reserved state, its base interval τ_r and the higher-order states
/// protected by the same interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservedStateTable {
    pub n_r1: usize,
    pub tau_r: f64,
    pub higher: Vec<ReservedState>,
}

impl ReservedStateTable {
    pub fn get(&self, k: u32) -> Option<usize> {
        match k {
            1 => Some(self.n_r1),
            _ => self.higher.iter().find(|s| s.k == k).map(|s| s.index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementOutcome {
    /// Normalized resonator state; its weight is the branch's cumulative success probability.
    pub post_state: ResonatorPopulations,
    /// Probability of the kept outcome in this round (1 for unconditional rounds).
    pub success_prob: f64,
    pub conditional: bool,
}

/// τ_r = π/Ω_{n_r1+1}: the interval for which |α_{n_r1+1}|² = 1.
pub fn reserved_interval(params: &PhysicalParams, n_r1: usize) -> f64 {
    PI / rabi(params, n_r1 + 1)
}

/// Real-valued order-k reserved index for a given first reserved state.
pub fn reserved_index_exact(params: &PhysicalParams, n_r1: f64, k: u32) -> f64 {
    let k2 = f64::from(k * k);
    let ratio = params.detuning * params.detuning / (4.0 * params.g * params.g);
    k2 * (n_r1 + 1.0) + (k2 - 1.0) * ratio - 1.0
}

/// n_r^(k) = k²(n_r1 + 1) + (k² − 1)Δ²/(4g²) − 1 for k = 2..=k_max, rounded
/// down (the reference point gives 23.19, 53.5 and 95.94).
pub fn higher_reserved_states(
    params: &PhysicalParams,
    n_r1: usize,
    k_max: u32,
) -> Result<ReservedStateTable> {
    if k_max < 2 {
        return Err(Error::InvalidParameter(format!(
            "k_max must be >= 2, got {k_max}"
        )));
    }
    let higher = (2..=k_max)
        .map(|k| {
            let exact = reserved_index_exact(params, n_r1 as f64, k);
            ReservedState {
                k,
                exact,
                index: (exact + 1e-9).floor() as usize,
            }
        })
        .collect();
    Ok(ReservedStateTable {
        n_r1,
        tau_r: reserved_interval(params, n_r1),
        higher,
    })
}

/// Smallest real n_r1 whose second reserved state lies beyond n̄ + 4Δn,
/// clamped at zero.
pub fn min_first_reserved(params: &PhysicalParams, spec: &ThermalSpec) -> f64 {
    let target = spec.n_bar_th + 4.0 * spec.spread();
    let ratio = params.detuning * params.detuning / (4.0 * params.g * params.g);
    // invert 4(n + 1) + 3·ratio − 1 = target
    let n = (target + 1.0 - 3.0 * ratio) / 4.0 - 1.0;
    n.max(0.0)
}

/// τ_opt = π/(2Ω_n): the interval with |sin Ω_nτ| = 1, transferring |n⟩ → |n−1⟩ optimally.
pub fn optimal_conditional_interval(params: &PhysicalParams, n_r: usize) -> Result<f64> {
    if n_r == 0 {
        return Err(Error::NothingToTransfer);
    }
    Ok(PI / (2.0 * rabi(params, n_r)))
}

/// Precomputed |α_{n+1}(τ)|², |β_n(τ)|² for repeated unconditional rounds at one τ.
#[derive(Debug, Clone)]
pub struct UnconditionalKernel {
    tau: f64,
    retain: Vec<f64>,
    raise: Vec<f64>,
    top_leak: f64,
}

impl UnconditionalKernel {
    pub fn new(params: &PhysicalParams, tau: f64, n_c: usize) -> Self {
        let retain = (0..=n_c).map(|n| weights(params, n + 1, tau).0).collect();
        let raise = (0..=n_c).map(|n| weights(params, n, tau).1).collect();
        let top_leak = weights(params, n_c + 1, tau).1;
        Self {
            tau,
            retain,
            raise,
            top_leak,
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_c(&self) -> usize {
        self.retain.len() - 1
    }

    /// Applies one round in place. Returns the population that left through the cutoff.
    pub fn apply_in_place(&self, p: &mut [f64]) -> f64 {
        debug_assert_eq!(p.len(), self.retain.len());
        let n_c = p.len() - 1;
        let leaked = p[n_c] * self.top_leak;
        for n in (1..=n_c).rev() {
            p[n] = p[n] * self.retain[n] + p[n - 1] * self.raise[n];
        }
        p[0] *= self.retain[0];
        leaked
    }

    pub fn apply(&self, state: &ResonatorPopulations) -> Result<MeasurementOutcome> {
        if state.n_c() != self.n_c() {
            return Err(Error::InvalidParameter(format!(
                "kernel built for n_c = {}, state has n_c = {}",
                self.n_c(),
                state.n_c()
            )));
        }
        let input = state.normalized()?;
        let mut p = input.clone().into_vec();
        let leaked = self.apply_in_place(&mut p);
        if leaked > LEAKAGE_TOL {
            return Err(Error::CutoffLeakage {
                leaked,
                n_c: self.n_c(),
            });
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        Ok(MeasurementOutcome {
            post_state: ResonatorPopulations::from_parts(p, input.weight(), true),
            success_prob: 1.0,
            conditional: false,
        })
    }
}

/// One unconditional measurement round of duration `tau` (qubit prepared in |e⟩).
pub fn unconditional_map(
    state: &ResonatorPopulations,
    params: &PhysicalParams,
    tau: f64,
) -> Result<MeasurementOutcome> {
    UnconditionalKernel::new(params, tau, state.n_c()).apply(state)
}

/// η_n^(m) = p_n^(m) / p_n^(m−1) from a history whose entry m is the state after m rounds.
pub fn transfer_ratio(history: &[ResonatorPopulations], m: usize, n: usize) -> Result<f64> {
    if m == 0 || m >= history.len() {
        return Err(Error::InvalidParameter(format!(
            "measurement index {m} outside 1..{}",
            history.len()
        )));
    }
    let before = history[m - 1].get(n)?;
    let after = history[m].get(n)?;
    if before <= 0.0 {
        return Err(Error::UndefinedRatio { m, n });
    }
    Ok(after / before)
}

/// All ratios after round m; `None` where the earlier population vanished.
pub fn transfer_ratios(history: &[ResonatorPopulations], m: usize) -> Result<Vec<Option<f64>>> {
    let n_c = history
        .get(m)
        .ok_or_else(|| Error::InvalidParameter(format!("no snapshot {m}")))?
        .n_c();
    (0..=n_c)
        .map(|n| match transfer_ratio(history, m, n) {
            Ok(eta) => Ok(Some(eta)),
            Err(Error::UndefinedRatio { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Rotating-frame phase rate carried by the Kraus operator.
///
/// Chosen so that R(τ) equals ⟨e|U(τ)|g⟩ exactly; no population depends on it.
pub fn kraus_phase_rate(params: &PhysicalParams) -> f64 {
    -0.5 * params.detuning
}

/// R(τ) = ⟨e|U(τ)|g⟩ = Σ_{n≥1} −i e^{iφτ} g√n sin(Ω_nτ)/Ω_n |n−1⟩⟨n|.
pub fn kraus_r(params: &PhysicalParams, tau: f64) -> DMatrix<Complex64> {
    let n_c = params.n_c;
    let mut r = DMatrix::zeros(n_c + 1, n_c + 1);
    let phase = Complex64::from_polar(1.0, kraus_phase_rate(params) * tau);
    for n in 1..=n_c {
        let beta = crate::jc::cooling_coeffs(params, n, tau).beta;
        r[(n - 1, n)] = phase * beta;
    }
    r
}

/// One conditional round (qubit prepared in |g⟩, outcome |e⟩ kept).
pub fn conditional_map(
    state: &ResonatorPopulations,
    params: &PhysicalParams,
    tau: f64,
) -> Result<MeasurementOutcome> {
    let input = state.normalized()?;
    let p = input.as_slice();
    let n_c = input.n_c();
    let mut out = vec![0.0; n_c + 1];
    for n in 1..=n_c {
        out[n - 1] = weights(params, n, tau).1 * p[n];
    }
    let success_prob: f64 = out.iter().sum();
    if success_prob < MIN_SUCCESS_PROB {
        return Err(Error::MeasurementFailed { success_prob });
    }
    out.iter_mut().for_each(|x| *x /= success_prob);
    Ok(MeasurementOutcome {
        post_state: ResonatorPopulations::from_parts(out, input.weight() * success_prob, true),
        success_prob,
        conditional: true,
    })
}

/// Upper bound on p_{n_r} reachable by unconditional rounds from `initial`.
///
/// Unconditional rounds only move population upward, and |n_r⟩ never leaks
/// at multiples of τ_r, so Σ_{n≤n_r} p_n can only flow into |n_r⟩.
pub fn reserved_fidelity_ceiling(initial: &ResonatorPopulations, n_r: usize) -> f64 {
    initial.as_slice().iter().take(n_r + 1).sum()
}
