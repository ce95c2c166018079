//! Model constants shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{default_cutoff, thermal_occupation_at};

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const K_B: f64 = 1.380_649e-23;
/// Reference decoherence unit γ₀ in units of ω_b.
pub const GAMMA0_RATIO: f64 = 1e-5;

/// Physical constants of the qubit–resonator model.
///
/// Frequencies are angular (rad/s), times are seconds. `detuning` is
/// Δ = ω_e − ω_b and `n_c` is the highest retained Fock index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub omega_b: f64,
    pub detuning: f64,
    pub g: f64,
    pub temperature: f64,
    pub gamma: f64,
    pub n_c: usize,
}

impl PhysicalParams {
    /// Builds parameters from ratios to ω_b and picks the default cutoff for the
    /// resulting thermal occupation.
    pub fn from_ratios(
        omega_b: f64,
        g_ratio: f64,
        detuning_ratio: f64,
        temperature: f64,
        gamma_ratio: f64,
    ) -> Result<Self> {
        let n_bar = thermal_occupation_at(omega_b, temperature);
        let params = Self {
            omega_b,
            detuning: detuning_ratio * omega_b,
            g: g_ratio * omega_b,
            temperature,
            gamma: gamma_ratio * omega_b,
            n_c: default_cutoff(n_bar),
        };
        params.validate()?;
        Ok(params)
    }

    /// ω_b = 3.7 GHz, T = 0.1 K, g = 0.04 ω_b, Δ = 0.02 ω_b, closed system.
    pub fn reference() -> Self {
        Self::from_ratios(3.7e9, 0.04, 0.02, 0.1, 0.0).expect("reference parameters are valid")
    }

    pub fn with_cutoff(mut self, n_c: usize) -> Self {
        self.n_c = n_c;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// γ₀ = 10⁻⁵ ω_b.
    pub fn gamma0(&self) -> f64 {
        GAMMA0_RATIO * self.omega_b
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.omega_b,
            self.detuning,
            self.g,
            self.temperature,
            self.gamma,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(
                "non-finite physical constant".into(),
            ));
        }
        if self.g <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "g must be positive, got {}",
                self.g
            )));
        }
        if self.n_c < 1 {
            return Err(Error::InvalidParameter("n_c must be at least 1".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.temperature < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameters() {
        let p = PhysicalParams::reference();
        assert_eq!(p.g, 0.04 * 3.7e9);
        assert_eq!(p.detuning, 0.02 * 3.7e9);
        assert_eq!(p.n_c, 97);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        let p = PhysicalParams::reference();
        assert!(PhysicalParams { g: 0.0, ..p }.validate().is_err());
        assert!(PhysicalParams { n_c: 0, ..p }.validate().is_err());
        assert!(PhysicalParams { gamma: -1.0, ..p }.validate().is_err());
        assert!(PhysicalParams {
            temperature: -0.1,
            ..p
        }
        .validate()
        .is_err());
    }
}
