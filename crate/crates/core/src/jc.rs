//! Exact Jaynes–Cummings propagation in the rotating frame,
//! H = Δ|e⟩⟨e| + g(b†σ₋ + bσ₊).
//!
//! H conserves the excitation number, so U(τ) is a direct sum of 2×2 blocks
//! on span{|g,n⟩, |e,n−1⟩} plus the decoupled |g,0⟩. With a finite cutoff the
//! state |e,n_c⟩ loses its partner |g,n_c+1⟩ and only picks up the phase e^{−iΔτ}.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fock::{CompositeDensityMatrix, Qubit};
use crate::params::PhysicalParams;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiFrequency {
    pub omega_n: f64,
    pub n: usize,
}

/// Ω_n = sqrt(g²n + Δ²/4).
pub fn rabi_frequency(params: &PhysicalParams, n: usize) -> RabiFrequency {
    RabiFrequency {
        omega_n: rabi(params, n),
        n,
    }
}

#[inline]
pub(crate) fn rabi(params: &PhysicalParams, n: usize) -> f64 {
    (params.g * params.g * n as f64 + 0.25 * params.detuning * params.detuning).sqrt()
}

/// Block amplitudes α_n (retention) and β_n (exchange) after time `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingCoefficients {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub n: usize,
    pub tau: f64,
}

impl CoolingCoefficients {
    pub fn alpha_sq(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn beta_sq(&self) -> f64 {
        self.beta.norm_sqr()
    }
}

/// α_n = cos Ω_nτ + iΔ sin(Ω_nτ)/(2Ω_n), β_n = −i g√n sin(Ω_nτ)/Ω_n.
pub fn cooling_coeffs(params: &PhysicalParams, n: usize, tau: f64) -> CoolingCoefficients {
    let omega = rabi(params, n);
    let (sin, cos) = (omega * tau).sin_cos();
    // sin(Ωτ)/Ω, with the Ω → 0 limit (n = 0, Δ = 0)
    let sinc = if omega > 0.0 { sin / omega } else { tau };
    CoolingCoefficients {
        alpha: Complex64::new(cos, 0.5 * params.detuning * sinc),
        beta: Complex64::new(0.0, -params.g * (n as f64).sqrt() * sinc),
        n,
        tau,
    }
}

/// |α_n(τ)|² and |β_n(τ)|² without building complex numbers.
#[inline]
pub(crate) fn weights(params: &PhysicalParams, n: usize, tau: f64) -> (f64, f64) {
    let c = cooling_coeffs(params, n, tau);
    (c.alpha_sq(), c.beta_sq())
}

/// e^{−iΔτ/2} [[α_n, β_n], [β_n, α_n*]] in the ordered basis (|g,n⟩, |e,n−1⟩).
pub fn propagator_block(params: &PhysicalParams, n: usize, tau: f64) -> Matrix2<Complex64> {
    let c = cooling_coeffs(params, n, tau);
    let phase = (-I * 0.5 * params.detuning * tau).exp();
    Matrix2::new(c.alpha, c.beta, c.beta, c.alpha.conj()) * phase
}

/// Rotating-frame Hamiltonian on the truncated composite space.
pub fn hamiltonian(params: &PhysicalParams) -> DMatrix<Complex64> {
    let n_c = params.n_c;
    let dim = 2 * (n_c + 1);
    let mut h = DMatrix::zeros(dim, dim);
    for n in 0..=n_c {
        let e = CompositeDensityMatrix::index(n_c, Qubit::Excited, n);
        h[(e, e)] = Complex64::new(params.detuning, 0.0);
        if n < n_c {
            let g = CompositeDensityMatrix::index(n_c, Qubit::Ground, n + 1);
            let c = Complex64::new(params.g * ((n + 1) as f64).sqrt(), 0.0);
            h[(e, g)] = c;
            h[(g, e)] = c;
        }
    }
    h
}

/// Dense U(τ) on the full composite space.
#[derive(Debug, Clone)]
pub struct Propagator {
    unitary: DMatrix<Complex64>,
    n_c: usize,
}

impl Propagator {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.unitary
    }

    /// U ρ U†.
    pub fn apply(&self, rho: &CompositeDensityMatrix) -> CompositeDensityMatrix {
        assert_eq!(rho.n_c(), self.n_c, "cutoff mismatch");
        let out = &self.unitary * rho.matrix() * self.unitary.adjoint();
        CompositeDensityMatrix::new(out, self.n_c).expect("dimension preserved")
    }

    /// ⟨q'|U|q⟩ as a resonator-space operator.
    pub fn qubit_element(&self, out: Qubit, input: Qubit) -> DMatrix<Complex64> {
        let m = self.n_c + 1;
        self.unitary
            .view((out.index() * m, input.index() * m), (m, m))
            .into_owned()
    }
}

/// Assembles ⊕_n U_n(τ) on the truncated space.
pub fn full_propagator(params: &PhysicalParams, tau: f64) -> Propagator {
    let n_c = params.n_c;
    let dim = 2 * (n_c + 1);
    let mut u = DMatrix::zeros(dim, dim);
    let g0 = CompositeDensityMatrix::index(n_c, Qubit::Ground, 0);
    u[(g0, g0)] = Complex64::new(1.0, 0.0);
    for n in 1..=n_c {
        let block = propagator_block(params, n, tau);
        let idx = [
            CompositeDensityMatrix::index(n_c, Qubit::Ground, n),
            CompositeDensityMatrix::index(n_c, Qubit::Excited, n - 1),
        ];
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                u[(ia, ib)] = block[(a, b)];
            }
        }
    }
    let top = CompositeDensityMatrix::index(n_c, Qubit::Excited, n_c);
    u[(top, top)] = (-I * params.detuning * tau).exp();
    Propagator { unitary: u, n_c }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::ResonatorPopulations;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params() -> PhysicalParams {
        PhysicalParams::reference().with_cutoff(12)
    }

    fn max_abs(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn rabi_examples() {
        let p = params();
        assert_abs_diff_eq!(
            rabi_frequency(&p, 0).omega_n,
            p.detuning / 2.0,
            epsilon = 1e-6
        );
        let expected = 0.0097f64.sqrt() * p.omega_b;
        assert!((rabi_frequency(&p, 6).omega_n - expected).abs() / expected < 1e-12);
        assert!((rabi_frequency(&p, 6).omega_n / p.omega_b - 0.098489).abs() < 1e-6);
        let resonant = PhysicalParams { detuning: 0.0, ..p };
        assert_abs_diff_eq!(rabi_frequency(&resonant, 1).omega_n, p.g, epsilon = 1e-6);
    }

    #[test]
    fn rabi_is_increasing() {
        let p = params();
        for n in 0..200 {
            assert!(rabi(&p, n + 1) > rabi(&p, n));
            assert!(rabi(&p, n) >= p.detuning.abs() / 2.0);
        }
    }

    #[test]
    fn identity_at_zero_time() {
        let p = params();
        for n in 0..20 {
            let c = cooling_coeffs(&p, n, 0.0);
            assert_eq!(c.alpha, Complex64::new(1.0, 0.0));
            assert_eq!(c.beta_sq(), 0.0);
        }
        let u = full_propagator(&p, 0.0);
        let id = DMatrix::<Complex64>::identity(26, 26);
        assert!(max_abs(&(u.matrix() - id)) < 1e-15);
    }

    #[test]
    fn ground_retention_for_fifth_reserved_state() {
        let p = params();
        let tau_r = std::f64::consts::PI / rabi(&p, 6);
        let (a1, _) = weights(&p, 1, tau_r);
        assert!((a1 - 0.12).abs() < 0.005, "{a1}");
        let (a6, b6) = weights(&p, 6, tau_r);
        assert_abs_diff_eq!(a6, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b6, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn beta_zero_exactly_at_n_zero() {
        let p = params();
        assert_eq!(cooling_coeffs(&p, 0, 3.7e-9).beta_sq(), 0.0);
        let resonant = PhysicalParams { detuning: 0.0, ..p };
        let c = cooling_coeffs(&resonant, 0, 1e-8);
        assert_eq!(c.alpha_sq(), 1.0);
    }

    #[test]
    fn blocks_are_unitary() {
        let p = params();
        for n in 1..30 {
            for k in 0..25 {
                let tau = k as f64 * 1.3e-9;
                let u = propagator_block(&p, n, tau);
                let err = u * u.adjoint() - Matrix2::identity();
                assert!(err.iter().all(|z| z.norm() < 1e-12));
            }
        }
    }

    #[test]
    fn block_generator_matches_hamiltonian() {
        // U(h) = I − iHh + O(h²); the O(h) residual must shrink linearly
        let p = params();
        let n = 4usize;
        let gn = p.g * (n as f64).sqrt();
        let h_block = Matrix2::new(
            Complex64::new(0.0, 0.0),
            Complex64::new(gn, 0.0),
            Complex64::new(gn, 0.0),
            Complex64::new(p.detuning, 0.0),
        );
        let scale = 1.0 / p.omega_b;
        let mut errors = Vec::new();
        for k in 0..4 {
            let h = scale * 1e-2 / 2f64.powi(k);
            let u = propagator_block(&p, n, h);
            let fd = (u - Matrix2::identity()) / Complex64::new(h, 0.0);
            let target = h_block * (-I);
            let err = (fd - target).iter().map(|z| z.norm()).fold(0.0, f64::max);
            errors.push(err);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                (ratio - 2.0).abs() < 0.05,
                "first-order refinement ratio {ratio}"
            );
        }
    }

    #[test]
    fn full_propagator_is_exp_of_hamiltonian() {
        let p = params();
        let tau = 4.1e-9;
        let h = hamiltonian(&p);
        let expm = (h * Complex64::new(0.0, -tau)).exp();
        let u = full_propagator(&p, tau);
        assert!(max_abs(&(u.matrix() - expm)) < 1e-10);
    }

    #[test]
    fn ground_state_is_stationary() {
        let p = params();
        let rho = CompositeDensityMatrix::product(
            Qubit::Ground,
            &ResonatorPopulations::fock(0, p.n_c).unwrap(),
        );
        let out = full_propagator(&p, 7.7e-9).apply(&rho);
        assert!(max_abs(&(out.matrix() - rho.matrix())) < 1e-15);
    }

    #[test]
    fn excited_fock_state_splits_by_block_weights() {
        let p = params();
        let tau = 2.9e-9;
        for n in 0..p.n_c {
            let rho = CompositeDensityMatrix::product(
                Qubit::Excited,
                &ResonatorPopulations::fock(n, p.n_c).unwrap(),
            );
            let out = full_propagator(&p, tau).apply(&rho);
            let (a, b) = weights(&p, n + 1, tau);
            let m = out.matrix();
            let e = CompositeDensityMatrix::index(p.n_c, Qubit::Excited, n);
            let g = CompositeDensityMatrix::index(p.n_c, Qubit::Ground, n + 1);
            assert_abs_diff_eq!(m[(e, e)].re, a, epsilon = 1e-12);
            assert_abs_diff_eq!(m[(g, g)].re, b, epsilon = 1e-12);
            assert_abs_diff_eq!(out.trace(), 1.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn coefficient_norm_and_periodicity(n in 0usize..400, x in 0.0f64..500.0) {
            let p = params();
            let tau = x / p.omega_b;
            let c = cooling_coeffs(&p, n, tau);
            prop_assert!((c.alpha_sq() + c.beta_sq() - 1.0).abs() < 1e-12);
            let period = 2.0 * std::f64::consts::PI / rabi(&p, n);
            let d = cooling_coeffs(&p, n, tau + period);
            prop_assert!((c.alpha - d.alpha).norm() < 1e-10);
            prop_assert!((c.beta - d.beta).norm() < 1e-10);
        }

        #[test]
        fn full_propagator_preserves_trace(seed in 0u64..1000, x in 0.0f64..300.0) {
            use rand::{Rng, SeedableRng};
            let p = PhysicalParams::reference().with_cutoff(6);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dim = 14;
            let a = DMatrix::from_fn(dim, dim, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let mut m = &a * a.adjoint();
            let tr = m.trace();
            m /= tr;
            let rho = CompositeDensityMatrix::new(m, 6).unwrap();
            let u = full_propagator(&p, x / p.omega_b);
            let out = u.apply(&rho);
            prop_assert!((out.trace() - 1.0).abs() < 1e-12);
            // blockwise: single-block support stays in its block
            let unit = u.matrix() * u.matrix().adjoint() - DMatrix::identity(dim, dim);
            prop_assert!(max_abs(&unit) < 1e-12);
        }
    }

    #[test]
    fn full_propagator_acts_blockwise() {
        let p = params().with_cutoff(12);
        let tau = 0.37 * std::f64::consts::PI / rabi(&p, 6);
        let u = full_propagator(&p, tau);
        let m = p.n_c + 1;
        for n in 1..=p.n_c {
            let block = propagator_block(&p, n, tau);
            let (g, e) = (n, m + n - 1);
            let idx = [g, e];
            for (i, a) in idx.iter().enumerate() {
                for (j, b) in idx.iter().enumerate() {
                    assert!(
                        (u.matrix()[(*a, *b)] - block[(i, j)]).norm() < 1e-12,
                        "n = {n}"
                    );
                }
            }
        }
    }
}
