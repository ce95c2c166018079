//! Fock-space states of the resonator, the thermal initial state and the
//! scalar figures of merit computed from populations.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{PhysicalParams, HBAR, K_B};

/// Largest thermal weight allowed to fall outside the truncated space.
pub const MAX_TRUNCATION_LOSS: f64 = 1e-8;
/// Thermal tail used by [`default_cutoff`].
const CUTOFF_TAIL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-9;

/// Bose–Einstein mean occupation of the resonator's bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalSpec {
    pub n_bar_th: f64,
}

impl ThermalSpec {
    pub fn new(n_bar_th: f64) -> Result<Self> {
        if !(n_bar_th >= 0.0 && n_bar_th.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "n_bar_th must be >= 0, got {n_bar_th}"
            )));
        }
        Ok(Self { n_bar_th })
    }

    /// Geometric ratio n̄/(1+n̄) between neighbouring thermal populations.
    pub fn ratio(&self) -> f64 {
        self.n_bar_th / (1.0 + self.n_bar_th)
    }

    /// Root-mean-square spread Δn = sqrt(n̄ + n̄²).
    pub fn spread(&self) -> f64 {
        (self.n_bar_th + self.n_bar_th * self.n_bar_th).sqrt()
    }
}

pub(crate) fn thermal_occupation_at(omega_b: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    let x = HBAR * omega_b / (K_B * temperature);
    1.0 / x.exp_m1()
}

/// n̄_th = 1/(exp(ħω_b / k_B T) − 1); zero at T = 0.
pub fn thermal_occupation(params: &PhysicalParams) -> ThermalSpec {
    ThermalSpec {
        n_bar_th: thermal_occupation_at(params.omega_b, params.temperature),
    }
}

/// Cutoff covering `max(40, n̄ + 10Δn)` and a thermal tail below 1e-12.
pub fn default_cutoff(n_bar_th: f64) -> usize {
    let spec = ThermalSpec { n_bar_th };
    let spread_rule = (n_bar_th + 10.0 * spec.spread()).ceil() as usize;
    let q = spec.ratio();
    let tail_rule = if q > 0.0 {
        ((CUTOFF_TAIL.ln() / q.ln()).ceil() as usize).saturating_sub(1)
    } else {
        0
    };
    40.max(spread_rule).max(tail_rule)
}

/// Exact partial sum P(N) = Σ_{n≤N} p_n^th = 1 − q^{N+1}.
pub fn accumulated_population(spec: &ThermalSpec, n: usize) -> f64 {
    let q = spec.ratio();
    1.0 - q.powf(n as f64 + 1.0)
}

/// Diagonal resonator state.
///
/// `weight` is the cumulative success probability of the branch this state
/// belongs to. When `normalized` is set the populations sum to one; otherwise
/// they sum to `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorPopulations {
    p: Vec<f64>,
    weight: f64,
    normalized: bool,
}

impl ResonatorPopulations {
    /// Wraps a normalized population vector (weight 1).
    pub fn from_normalized(p: Vec<f64>) -> Result<Self> {
        check_entries(&p)?;
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { total });
        }
        Ok(Self {
            p,
            weight: 1.0,
            normalized: true,
        })
    }

    /// Wraps raw populations; the weight is their sum.
    pub fn from_unnormalized(p: Vec<f64>) -> Result<Self> {
        check_entries(&p)?;
        let weight = p.iter().sum();
        Ok(Self {
            p,
            weight,
            normalized: false,
        })
    }

    /// Fock state |n⟩ in a space with cutoff `n_c`.
    pub fn fock(n: usize, n_c: usize) -> Result<Self> {
        if n > n_c {
            return Err(Error::IndexOutOfRange { index: n, n_c });
        }
        let mut p = vec![0.0; n_c + 1];
        p[n] = 1.0;
        Ok(Self {
            p,
            weight: 1.0,
            normalized: true,
        })
    }

    pub(crate) fn from_parts(p: Vec<f64>, weight: f64, normalized: bool) -> Self {
        Self {
            p,
            weight,
            normalized,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.p
    }

    pub fn n_c(&self) -> usize {
        self.p.len() - 1
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Normalized copy that keeps the branch weight.
    pub fn normalized(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::MeasurementFailed {
                success_prob: total,
            });
        }
        Ok(Self {
            p: self.p.iter().map(|x| x / total).collect(),
            weight: self.weight,
            normalized: true,
        })
    }

    /// Raw populations scaled by the branch weight.
    pub fn unnormalized(&self) -> Self {
        if !self.normalized {
            return self.clone();
        }
        Self {
            p: self.p.iter().map(|x| x * self.weight).collect(),
            weight: self.weight,
            normalized: false,
        }
    }

    /// Copy padded with zeros (or checked-truncated) to a new cutoff.
    pub fn resized(&self, n_c: usize) -> Result<Self> {
        let mut p = self.p.clone();
        if n_c + 1 < p.len() {
            let dropped: f64 = p[n_c + 1..].iter().sum();
            if dropped > 0.0 {
                return Err(Error::CutoffLeakage {
                    leaked: dropped,
                    n_c,
                });
            }
        }
        p.resize(n_c + 1, 0.0);
        Ok(Self { p, ..self.clone() })
    }

    pub fn get(&self, n: usize) -> Result<f64> {
        self.p.get(n).copied().ok_or(Error::IndexOutOfRange {
            index: n,
            n_c: self.n_c(),
        })
    }
}

fn check_entries(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidParameter("empty population vector".into()));
    }
    if let Some(bad) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "population entry {bad} is not a probability"
        )));
    }
    Ok(())
}

/// Thermal populations over |0⟩..|n_c⟩, renormalized on the truncated space.
pub fn thermal_state(spec: &ThermalSpec, n_c: usize) -> Result<ResonatorPopulations> {
    let q = spec.ratio();
    let loss = q.powf(n_c as f64 + 1.0);
    if loss > MAX_TRUNCATION_LOSS {
        return Err(Error::TruncationLoss {
            loss,
            n_c,
            suggested: default_cutoff(spec.n_bar_th),
        });
    }
    let mut p = Vec::with_capacity(n_c + 1);
    let mut term = 1.0;
    for _ in 0..=n_c {
        p.push(term);
        term *= q;
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(ResonatorPopulations {
        p,
        weight: 1.0,
        normalized: true,
    })
}

/// ⟨n̂⟩ = Σ n p_n of a normalized state.
pub fn average_occupation(state: &ResonatorPopulations) -> Result<f64> {
    let total = state.total();
    if !state.normalized || (total - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized { total });
    }
    Ok(state.p.iter().enumerate().map(|(n, p)| n as f64 * p).sum())
}

/// ⟨n|ρ_b|n⟩. Ground-state fidelity for n = 0, reserved-state fidelity for n = n_r.
pub fn fidelity(state: &ResonatorPopulations, n: usize) -> Result<f64> {
    state.get(n)
}

/// Qubit basis state used to prepare the ancilla.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Qubit {
    Ground,
    Excited,
}

impl Qubit {
    pub fn index(self) -> usize {
        match self {
            Qubit::Ground => 0,
            Qubit::Excited => 1,
        }
    }
}

/// Density matrix on {|g⟩,|e⟩} ⊗ {|0⟩..|n_c⟩}; basis index is `q·(n_c+1) + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDensityMatrix {
    rho: DMatrix<Complex64>,
    n_c: usize,
}

impl CompositeDensityMatrix {
    pub fn new(rho: DMatrix<Complex64>, n_c: usize) -> Result<Self> {
        let dim = 2 * (n_c + 1);
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::InvalidParameter(format!(
                "density matrix must be {dim}x{dim}, got {}x{}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        Ok(Self { rho, n_c })
    }

    /// |q⟩⟨q| ⊗ diag(p). Unnormalized inputs keep their raw trace.
    pub fn product(qubit: Qubit, resonator: &ResonatorPopulations) -> Self {
        let n_c = resonator.n_c();
        let dim = 2 * (n_c + 1);
        let mut rho = DMatrix::zeros(dim, dim);
        let offset = qubit.index() * (n_c + 1);
        for (n, p) in resonator.as_slice().iter().enumerate() {
            rho[(offset + n, offset + n)] = Complex64::new(*p, 0.0);
        }
        Self { rho, n_c }
    }

    pub fn index(n_c: usize, qubit: Qubit, n: usize) -> usize {
        qubit.index() * (n_c + 1) + n
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn dim(&self) -> usize {
        2 * (self.n_c + 1)
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    /// Tr_qubit ρ as a (n_c+1)×(n_c+1) matrix.
    pub fn resonator_matrix(&self) -> DMatrix<Complex64> {
        let m = self.n_c + 1;
        let gg = self.rho.view((0, 0), (m, m));
        let ee = self.rho.view((m, m), (m, m));
        gg + ee
    }

    /// ⟨q|ρ|q⟩ as a (n_c+1)×(n_c+1) resonator operator.
    pub fn qubit_block(&self, qubit: Qubit) -> DMatrix<Complex64> {
        let m = self.n_c + 1;
        let o = qubit.index() * m;
        self.rho.view((o, o), (m, m)).into_owned()
    }

    /// Diagonal of the reduced resonator state, raw (not renormalized).
    pub fn resonator_diagonal(&self) -> Vec<f64> {
        let m = self.n_c + 1;
        (0..m)
            .map(|n| self.rho[(n, n)].re + self.rho[(m + n, m + n)].re)
            .collect()
    }

    /// Largest |ρ − ρ†| entry.
    pub fn hermiticity_error(&self) -> f64 {
        let diff = &self.rho - self.rho.adjoint();
        diff.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Checks Hermiticity (1e-12), trace in [0, 1+1e-9] and eigenvalues ≥ −1e-9.
    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "density matrix not Hermitian ({herm:.3e})"
            )));
        }
        let tr = self.trace();
        if !(-1e-12..=1.0 + 1e-9).contains(&tr) {
            return Err(Error::InvalidParameter(format!(
                "trace {tr} outside [0, 1]"
            )));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < -1e-9 {
            return Err(Error::InvalidParameter(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        sym.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}
