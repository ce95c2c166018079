//! Lindblad evolution of the qubit–resonator state between measurements,
//!
//! dρ/dt = −i[H, ρ] + γ(n̄+1)D[b]ρ + γn̄ D[b†]ρ,  D[A]ρ = AρA† − ½{A†A, ρ},
//!
//! with the dissipators acting on the resonator only. Two representations are
//! integrated with the same fixed-step RK4 scheme:
//!
//! * the dense [`CompositeDensityMatrix`] (any input state), and
//! * [`ExcitationBlocks`], which stores only the 2×2 blocks on
//!   span{|g,N⟩, |e,N−1⟩}. H conserves N and b, b† shift it by one, so a
//!   state that starts block-diagonal in N stays that way; every protocol
//!   state (|q⟩⟨q| ⊗ diagonal resonator) is of this form.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{thermal_occupation, CompositeDensityMatrix, Qubit, ResonatorPopulations};
use crate::jc::{hamiltonian, rabi};
use crate::maps::{reserved_interval, MeasurementOutcome, MIN_SUCCESS_PROB};
use crate::params::PhysicalParams;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Trace drift that aborts an evolution.
pub const MAX_TRACE_DRIFT: f64 = 1e-6;
/// Negative eigenvalues below −CLIP_TOL are clipped (and counted).
pub const CLIP_TOL: f64 = 1e-10;
/// Default number of RK4 steps per base interval τ_r.
pub const STEPS_PER_TAU_R: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Integrator {
    #[default]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LindbladConfig {
    pub gamma: f64,
    pub n_bar_th: f64,
    pub dt: f64,
    pub method: Integrator,
}

impl LindbladConfig {
    pub fn new(gamma: f64, n_bar_th: f64, dt: f64) -> Result<Self> {
        if !(gamma >= 0.0 && n_bar_th >= 0.0 && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need gamma >= 0, n_bar_th >= 0, dt > 0 (got {gamma}, {n_bar_th}, {dt})"
            )));
        }
        Ok(Self {
            gamma,
            n_bar_th,
            dt,
            method: Integrator::Rk4,
        })
    }

    /// γ and n̄_th from `params`, dt = τ_r/2000 for the given first reserved state.
    pub fn for_protocol(params: &PhysicalParams, n_r: usize) -> Self {
        Self {
            gamma: params.gamma,
            n_bar_th: thermal_occupation(params).n_bar_th,
            dt: reserved_interval(params, n_r) / STEPS_PER_TAU_R,
            method: Integrator::Rk4,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// Largest generator frequency on a space with cutoff `n_c`.
    pub fn max_frequency(&self, params: &PhysicalParams, n_c: usize) -> f64 {
        let coherent = 0.5 * params.detuning.abs() + rabi(params, n_c + 1);
        let n = n_c as f64;
        let dissipative = self.gamma * ((self.n_bar_th + 1.0) * n + self.n_bar_th * (n + 1.0));
        coherent + dissipative
    }

    fn steps(&self, params: &PhysicalParams, n_c: usize, tau: f64) -> Result<(usize, f64)> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "evolution time must be >= 0, got {tau}"
            )));
        }
        if tau == 0.0 {
            return Ok((0, 0.0));
        }
        let steps = (tau / self.dt).ceil().max(1.0) as usize;
        let h = tau / steps as f64;
        let stiffness = h * self.max_frequency(params, n_c);
        if stiffness >= 0.1 {
            return Err(Error::InvalidParameter(format!(
                "step too large: dt·ω_max = {stiffness:.3} (need < 0.1)"
            )));
        }
        Ok((steps, h))
    }
}

trait OdeState: Clone {
    fn axpy(&mut self, a: f64, x: &Self);
}

impl OdeState for DMatrix<Complex64> {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.zip_apply(x, |s, v| *s += v * a);
    }
}

fn rk4<S: OdeState>(y: &mut S, h: f64, steps: usize, rhs: impl Fn(&S) -> S) {
    for _ in 0..steps {
        let k1 = rhs(y);
        let mut t = y.clone();
        t.axpy(0.5 * h, &k1);
        let k2 = rhs(&t);
        let mut t = y.clone();
        t.axpy(0.5 * h, &k2);
        let k3 = rhs(&t);
        let mut t = y.clone();
        t.axpy(h, &k3);
        let k4 = rhs(&t);
        y.axpy(h / 6.0, &k1);
        y.axpy(h / 3.0, &k2);
        y.axpy(h / 3.0, &k3);
        y.axpy(h / 6.0, &k4);
    }
}

/// Precomputed generator on the dense composite space.
struct DenseLiouvillian {
    n_c: usize,
    h: Vec<(usize, usize, Complex64)>,
    down: f64,
    up: f64,
    /// Diagonal of ½(γ↓ b†b + γ↑ bb†).
    damping: Vec<f64>,
}

impl DenseLiouvillian {
    fn new(params: &PhysicalParams, config: &LindbladConfig, n_c: usize) -> Self {
        let p = PhysicalParams { n_c, ..*params };
        let hm = hamiltonian(&p);
        let mut h = Vec::new();
        for j in 0..hm.ncols() {
            for i in 0..hm.nrows() {
                if hm[(i, j)] != ZERO {
                    h.push((i, j, hm[(i, j)]));
                }
            }
        }
        let down = config.gamma * (config.n_bar_th + 1.0);
        let up = config.gamma * config.n_bar_th;
        let m = n_c + 1;
        let damping = (0..2 * m)
            .map(|k| {
                let n = k % m;
                let raise = if n < n_c { n as f64 + 1.0 } else { 0.0 };
                0.5 * (down * n as f64 + up * raise)
            })
            .collect();
        Self {
            n_c,
            h,
            down,
            up,
            damping,
        }
    }

    fn rhs(&self, rho: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let dim = rho.nrows();
        let m = self.n_c + 1;
        let mut out = DMatrix::zeros(dim, dim);
        // −i(Hρ − ρH)
        for &(i, k, hv) in &self.h {
            let c = -I * hv;
            for j in 0..dim {
                out[(i, j)] += c * rho[(k, j)];
            }
            for r in 0..dim {
                out[(r, k)] -= c * rho[(r, i)];
            }
        }
        if self.down == 0.0 && self.up == 0.0 {
            return out;
        }
        for j in 0..dim {
            let (qj, nj) = (j / m, j % m);
            for i in 0..dim {
                let (qi, ni) = (i / m, i % m);
                let mut acc = -(self.damping[i] + self.damping[j]) * rho[(i, j)];
                if ni < self.n_c && nj < self.n_c {
                    let f = ((ni + 1) as f64 * (nj + 1) as f64).sqrt();
                    acc += self.down * f * rho[(qi * m + ni + 1, qj * m + nj + 1)];
                }
                if ni >= 1 && nj >= 1 {
                    let f = (ni as f64 * nj as f64).sqrt();
                    acc += self.up * f * rho[(qi * m + ni - 1, qj * m + nj - 1)];
                }
                out[(i, j)] += acc;
            }
        }
        out
    }
}

/// dρ/dt for a dense composite state.
pub fn lindblad_rhs(
    rho: &CompositeDensityMatrix,
    params: &PhysicalParams,
    config: &LindbladConfig,
) -> DMatrix<Complex64> {
    DenseLiouvillian::new(params, config, rho.n_c()).rhs(rho.matrix())
}

/// Result of a dense evolution.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub state: CompositeDensityMatrix,
    /// Number of eigenvalues below −1e-10 that were clipped to zero.
    pub clipped_eigenvalues: usize,
}

/// Integrates the master equation for a time `tau` with fixed RK4 steps.
pub fn evolve(
    rho: &CompositeDensityMatrix,
    params: &PhysicalParams,
    config: &LindbladConfig,
    tau: f64,
) -> Result<Evolution> {
    let n_c = rho.n_c();
    let (steps, h) = config.steps(params, n_c, tau)?;
    let gen = DenseLiouvillian::new(params, config, n_c);
    let start = rho.trace();
    let mut y = rho.matrix().clone();
    rk4(&mut y, h, steps, |s| gen.rhs(s));
    let drift = (y.trace().re - start).abs();
    if drift > MAX_TRACE_DRIFT || !drift.is_finite() {
        return Err(Error::IntegratorInstability { drift });
    }
    let (y, clipped) = clip_negative(y);
    Ok(Evolution {
        state: CompositeDensityMatrix::new(y, n_c)?,
        clipped_eigenvalues: clipped,
    })
}

fn clip_negative(y: DMatrix<Complex64>) -> (DMatrix<Complex64>, usize) {
    let herm = (&y + y.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.iter().filter(|v| **v < -CLIP_TOL).count();
    if clipped == 0 {
        return (y, 0);
    }
    log::warn!("clipping {clipped} negative eigenvalue(s) of the density matrix");
    let trace = herm.trace().re;
    let mut vals = eig.eigenvalues.clone();
    vals.iter_mut().for_each(|v| *v = v.max(0.0));
    let kept: f64 = vals.iter().sum();
    let d = DMatrix::from_diagonal(&vals.map(|v| Complex64::new(v * trace / kept, 0.0)));
    let rebuilt = &eig.eigenvectors * d * eig.eigenvectors.adjoint();
    (rebuilt, clipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementKind {
    /// Record discarded: the qubit is traced out.
    Unconditional,
    /// Only the |e⟩ outcome is kept.
    Conditional,
}

/// Dense-state outcome of one evolve-and-measure round.
#[derive(Debug, Clone)]
pub struct OpenMeasurement {
    /// Normalized post-measurement state with the qubit re-prepared.
    pub state: CompositeDensityMatrix,
    pub resonator: ResonatorPopulations,
    pub success_prob: f64,
    pub conditional: bool,
    pub clipped_eigenvalues: usize,
}

/// Evolves for `tau`, measures the qubit, then re-prepares it in `qubit_prep`
/// for the next round.
pub fn measured_evolution(
    rho: &CompositeDensityMatrix,
    params: &PhysicalParams,
    config: &LindbladConfig,
    tau: f64,
    kind: MeasurementKind,
    qubit_prep: Qubit,
) -> Result<OpenMeasurement> {
    let evolved = evolve(rho, params, config, tau)?;
    let n_c = rho.n_c();
    let (mut res, success_prob) = match kind {
        MeasurementKind::Unconditional => (evolved.state.resonator_matrix(), 1.0),
        MeasurementKind::Conditional => {
            let block = evolved.state.qubit_block(Qubit::Excited);
            let prob = block.trace().re;
            if prob < MIN_SUCCESS_PROB {
                return Err(Error::MeasurementFailed { success_prob: prob });
            }
            (block, prob)
        }
    };
    let tr = res.trace().re;
    res /= Complex64::new(tr, 0.0);
    let m = n_c + 1;
    let mut full = DMatrix::zeros(2 * m, 2 * m);
    let o = qubit_prep.index() * m;
    full.view_mut((o, o), (m, m)).copy_from(&res);
    let diag: Vec<f64> = (0..m).map(|n| res[(n, n)].re.max(0.0)).collect();
    let resonator = ResonatorPopulations::from_unnormalized(diag)?.normalized()?;
    let resonator = ResonatorPopulations::from_parts(resonator.into_vec(), success_prob, true);
    Ok(OpenMeasurement {
        state: CompositeDensityMatrix::new(full, n_c)?,
        resonator,
        success_prob,
        conditional: kind == MeasurementKind::Conditional,
        clipped_eigenvalues: evolved.clipped_eigenvalues,
    })
}

/// Composite state stored as the Hermitian excitation-number blocks
/// ρ_N on (|g,N⟩, |e,N−1⟩), N = 0..=n_c+1.
///
/// Each block is kept as `[ρ_gg, ρ_ee, Re ρ_ge, Im ρ_ge]`. Slot (e,−1) of
/// block 0 and slot (g,n_c+1) of block n_c+1 do not exist and stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationBlocks {
    data: Vec<f64>,
    n_c: usize,
}

impl ExcitationBlocks {
    /// |q⟩⟨q| ⊗ diag(p), using the raw populations.
    pub fn product(qubit: Qubit, resonator: &ResonatorPopulations) -> Self {
        let n_c = resonator.n_c();
        let mut data = vec![0.0; 4 * (n_c + 2)];
        for (n, p) in resonator.as_slice().iter().enumerate() {
            match qubit {
                Qubit::Ground => data[4 * n] = *p,
                Qubit::Excited => data[4 * (n + 1) + 1] = *p,
            }
        }
        Self { data, n_c }
    }

    fn basis(n_c: usize, block: usize, slot: usize) -> Option<usize> {
        match slot {
            0 if block <= n_c => Some(CompositeDensityMatrix::index(n_c, Qubit::Ground, block)),
            1 if block >= 1 && block - 1 <= n_c => Some(CompositeDensityMatrix::index(
                n_c,
                Qubit::Excited,
                block - 1,
            )),
            _ => None,
        }
    }

    /// Extracts the blocks of a Hermitian state; fails if ρ has weight outside them.
    pub fn from_composite(rho: &CompositeDensityMatrix, tol: f64) -> Result<Self> {
        let n_c = rho.n_c();
        let m = rho.matrix();
        let mut data = vec![0.0; 4 * (n_c + 2)];
        let mut captured = 0.0;
        for b in 0..n_c + 2 {
            let g = Self::basis(n_c, b, 0);
            let e = Self::basis(n_c, b, 1);
            if let Some(i) = g {
                data[4 * b] = m[(i, i)].re;
                captured += m[(i, i)].norm_sqr();
            }
            if let Some(j) = e {
                data[4 * b + 1] = m[(j, j)].re;
                captured += m[(j, j)].norm_sqr();
            }
            if let (Some(i), Some(j)) = (g, e) {
                data[4 * b + 2] = m[(i, j)].re;
                data[4 * b + 3] = m[(i, j)].im;
                captured += m[(i, j)].norm_sqr() + m[(j, i)].norm_sqr();
            }
        }
        let total: f64 = m.iter().map(|z| z.norm_sqr()).sum();
        if (total - captured).max(0.0).sqrt() > tol || rho.hermiticity_error() > tol {
            return Err(Error::InvalidParameter(
                "state is not Hermitian and block-diagonal in the excitation number".into(),
            ));
        }
        Ok(Self { data, n_c })
    }

    pub fn to_composite(&self) -> CompositeDensityMatrix {
        let n_c = self.n_c;
        let dim = 2 * (n_c + 1);
        let mut m = DMatrix::zeros(dim, dim);
        for b in 0..n_c + 2 {
            let blk = &self.data[4 * b..4 * b + 4];
            let g = Self::basis(n_c, b, 0);
            let e = Self::basis(n_c, b, 1);
            if let Some(i) = g {
                m[(i, i)] = Complex64::new(blk[0], 0.0);
            }
            if let Some(j) = e {
                m[(j, j)] = Complex64::new(blk[1], 0.0);
            }
            if let (Some(i), Some(j)) = (g, e) {
                m[(i, j)] = Complex64::new(blk[2], blk[3]);
                m[(j, i)] = Complex64::new(blk[2], -blk[3]);
            }
        }
        CompositeDensityMatrix::new(m, n_c).expect("dimension matches cutoff")
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn trace(&self) -> f64 {
        self.data.chunks_exact(4).map(|b| b[0] + b[1]).sum()
    }

    /// Populations of ⟨q|ρ|q⟩ over |0⟩..|n_c⟩.
    pub fn qubit_populations(&self, qubit: Qubit) -> Vec<f64> {
        (0..=self.n_c)
            .map(|n| match qubit {
                Qubit::Ground => self.data[4 * n],
                Qubit::Excited => self.data[4 * (n + 1) + 1],
            })
            .collect()
    }

    pub fn resonator_populations(&self) -> Vec<f64> {
        let g = self.qubit_populations(Qubit::Ground);
        let e = self.qubit_populations(Qubit::Excited);
        g.iter().zip(&e).map(|(a, b)| a + b).collect()
    }
}

/// Per-block rates of the generator in the real block representation.
#[derive(Debug, Clone, Copy, Default)]
struct BlockRates {
    coupling: f64,
    detuning: f64,
    /// −½ Σ (A†A) diagonal for the g and e slots.
    damp_g: f64,
    damp_e: f64,
    /// Inflow from block N+1 through b and from block N−1 through b†.
    down_g: f64,
    down_e: f64,
    down_c: f64,
    up_g: f64,
    up_e: f64,
    up_c: f64,
}

struct BlockLiouvillian {
    rates: Vec<BlockRates>,
}

impl BlockLiouvillian {
    fn new(params: &PhysicalParams, config: &LindbladConfig, n_c: usize) -> Self {
        let down = config.gamma * (config.n_bar_th + 1.0);
        let up = config.gamma * config.n_bar_th;
        let damping = |n: usize| {
            let raise = if n < n_c { n as f64 + 1.0 } else { 0.0 };
            0.5 * (down * n as f64 + up * raise)
        };
        let rates = (0..n_c + 2)
            .map(|b| {
                let ng = (b <= n_c).then_some(b);
                let ne = (b >= 1 && b - 1 <= n_c).then(|| b - 1);
                let both = ng.is_some() && ne.is_some();
                let from_above = |n: Option<usize>| n.filter(|n| *n < n_c).map(|n| n as f64 + 1.0);
                let from_below = |n: Option<usize>| n.filter(|n| *n >= 1).map(|n| n as f64);
                let (ag, ae) = (from_above(ng), from_above(ne));
                let (bg, be) = (from_below(ng), from_below(ne));
                BlockRates {
                    coupling: if both {
                        params.g * (b as f64).sqrt()
                    } else {
                        0.0
                    },
                    detuning: if ne.is_some() { params.detuning } else { 0.0 },
                    damp_g: ng.map_or(0.0, damping),
                    damp_e: ne.map_or(0.0, damping),
                    down_g: down * ag.unwrap_or(0.0),
                    down_e: down * ae.unwrap_or(0.0),
                    down_c: match (ag, ae) {
                        (Some(x), Some(y)) if both => down * (x * y).sqrt(),
                        _ => 0.0,
                    },
                    up_g: up * bg.unwrap_or(0.0),
                    up_e: up * be.unwrap_or(0.0),
                    up_c: match (bg, be) {
                        (Some(x), Some(y)) if both => up * (x * y).sqrt(),
                        _ => 0.0,
                    },
                }
            })
            .collect();
        Self { rates }
    }

    fn rhs(&self, y: &[f64], out: &mut [f64]) {
        let nb = self.rates.len();
        for (b, r) in self.rates.iter().enumerate() {
            let (a, d, cr, ci) = (y[4 * b], y[4 * b + 1], y[4 * b + 2], y[4 * b + 3]);
            // −i[H, ρ] with H = [[0, κ], [κ, Δ]]
            let mut da = -2.0 * r.coupling * ci;
            let mut dd = 2.0 * r.coupling * ci;
            let mut dcr = -r.detuning * ci;
            let mut dci = -r.coupling * (d - a) + r.detuning * cr;
            da -= 2.0 * r.damp_g * a;
            dd -= 2.0 * r.damp_e * d;
            let dc = r.damp_g + r.damp_e;
            dcr -= dc * cr;
            dci -= dc * ci;
            if b + 1 < nb {
                let s = &y[4 * (b + 1)..4 * (b + 2)];
                da += r.down_g * s[0];
                dd += r.down_e * s[1];
                dcr += r.down_c * s[2];
                dci += r.down_c * s[3];
            }
            if b >= 1 {
                let s = &y[4 * (b - 1)..4 * b];
                da += r.up_g * s[0];
                dd += r.up_e * s[1];
                dcr += r.up_c * s[2];
                dci += r.up_c * s[3];
            }
            out[4 * b] = da;
            out[4 * b + 1] = dd;
            out[4 * b + 2] = dcr;
            out[4 * b + 3] = dci;
        }
    }
}

fn rk4_flat(y: &mut [f64], h: f64, steps: usize, rhs: impl Fn(&[f64], &mut [f64])) {
    let n = y.len();
    let (mut k1, mut k2, mut k3, mut k4, mut t) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    for _ in 0..steps {
        rhs(y, &mut k1);
        t.iter_mut()
            .zip(y.iter())
            .zip(&k1)
            .for_each(|((t, y), k)| *t = y + 0.5 * h * k);
        rhs(&t, &mut k2);
        t.iter_mut()
            .zip(y.iter())
            .zip(&k2)
            .for_each(|((t, y), k)| *t = y + 0.5 * h * k);
        rhs(&t, &mut k3);
        t.iter_mut()
            .zip(y.iter())
            .zip(&k3)
            .for_each(|((t, y), k)| *t = y + h * k);
        rhs(&t, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
    }
}

/// Block-structured evolution, returning the clipped-eigenvalue count.
pub fn evolve_blocks(
    state: &ExcitationBlocks,
    params: &PhysicalParams,
    config: &LindbladConfig,
    tau: f64,
) -> Result<(ExcitationBlocks, usize)> {
    let (steps, h) = config.steps(params, state.n_c, tau)?;
    let gen = BlockLiouvillian::new(params, config, state.n_c);
    let start = state.trace();
    let mut y = state.clone();
    rk4_flat(&mut y.data, h, steps, |s, o| gen.rhs(s, o));
    let drift = (y.trace() - start).abs();
    if drift > MAX_TRACE_DRIFT || !drift.is_finite() {
        return Err(Error::IntegratorInstability { drift });
    }
    let clipped: usize = y.data.chunks_exact_mut(4).map(clip_block).sum();
    if clipped > 0 {
        log::warn!("clipping {clipped} negative block eigenvalue(s)");
    }
    Ok((y, clipped))
}

fn clip_block(blk: &mut [f64]) -> usize {
    let (a, d) = (blk[0], blk[1]);
    let c2 = blk[2] * blk[2] + blk[3] * blk[3];
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + c2).sqrt();
    let (lo, hi) = (mean - radius, mean + radius);
    if lo >= -CLIP_TOL {
        return 0;
    }
    let trace = (a + d).max(0.0);
    if hi <= 0.0 {
        blk.iter_mut().for_each(|v| *v = 0.0);
        return 2;
    }
    // keep the positive eigenvector, rescaled to the original trace
    let (vg, ve) = if c2 > 0.0 {
        let c = Complex64::new(blk[2], blk[3]);
        let norm = (c2 + (hi - a) * (hi - a)).sqrt();
        (c / norm, Complex64::new((hi - a) / norm, 0.0))
    } else if a >= d {
        (Complex64::new(1.0, 0.0), ZERO)
    } else {
        (ZERO, Complex64::new(1.0, 0.0))
    };
    let c = vg * ve.conj() * trace;
    blk[0] = vg.norm_sqr() * trace;
    blk[1] = ve.norm_sqr() * trace;
    blk[2] = c.re;
    blk[3] = c.im;
    1
}

/// One evolve-and-measure round on a diagonal resonator state.
///
/// The qubit starts in `prep`; afterwards the resonator is either traced
/// (`Unconditional`) or projected on ⟨e|·|e⟩ (`Conditional`). The returned
/// state is normalized and carries the input weight times the round's
/// success probability.
pub fn open_round(
    state: &ResonatorPopulations,
    params: &PhysicalParams,
    config: &LindbladConfig,
    tau: f64,
    kind: MeasurementKind,
    prep: Qubit,
) -> Result<(MeasurementOutcome, usize)> {
    let input = state.normalized()?;
    let blocks = ExcitationBlocks::product(prep, &input);
    let (evolved, clipped) = evolve_blocks(&blocks, params, config, tau)?;
    let (raw, success_prob) = match kind {
        MeasurementKind::Unconditional => (evolved.resonator_populations(), 1.0),
        MeasurementKind::Conditional => {
            let raw = evolved.qubit_populations(Qubit::Excited);
            let prob: f64 = raw.iter().sum();
            if prob < MIN_SUCCESS_PROB {
                return Err(Error::MeasurementFailed { success_prob: prob });
            }
            (raw, prob)
        }
    };
    let raw: Vec<f64> = raw.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    let p = raw.into_iter().map(|v| v / total).collect();
    Ok((
        MeasurementOutcome {
            post_state: ResonatorPopulations::from_parts(p, input.weight() * success_prob, true),
            success_prob,
            conditional: kind == MeasurementKind::Conditional,
        },
        clipped,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{average_occupation, thermal_state, ThermalSpec};
    use crate::jc::full_propagator;
    use crate::maps::{conditional_map, optimal_conditional_interval, unconditional_map};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn small() -> PhysicalParams {
        PhysicalParams::reference().with_cutoff(8)
    }

    fn random_density(n_c: usize, seed: u64) -> CompositeDensityMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = 2 * (n_c + 1);
        let a = DMatrix::from_fn(dim, dim, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let mut m = &a * a.adjoint();
        let tr = m.trace();
        m /= tr;
        CompositeDensityMatrix::new(m, n_c).unwrap()
    }

    fn max_abs(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let p = small();
        let cfg = LindbladConfig::new(0.01 * p.omega_b, 2.0, 1e-11).unwrap();
        for seed in 0..5 {
            let rho = random_density(8, seed);
            let d = lindblad_rhs(&rho, &p, &cfg);
            assert!(d.trace().norm() < 1e-12 * p.omega_b);
            assert!(max_abs(&(&d - d.adjoint())) < 1e-12 * p.omega_b);
        }
    }

    #[test]
    fn thermal_resonator_is_dissipator_fixed_point() {
        let p = PhysicalParams {
            g: 1e-12 * 3.7e9,
            ..PhysicalParams::reference().with_cutoff(60)
        };
        let n_bar = 1.5;
        let th = thermal_state(&ThermalSpec::new(n_bar).unwrap(), 60).unwrap();
        let cfg = LindbladConfig::new(1e-3 * p.omega_b, n_bar, 1e-11).unwrap();
        for q in [Qubit::Ground, Qubit::Excited] {
            let rho = CompositeDensityMatrix::product(q, &th);
            let no_h = PhysicalParams { detuning: 0.0, ..p };
            let d = lindblad_rhs(&rho, &no_h, &cfg);
            // exact up to the truncated tail at n_c
            let m = 61;
            for n in 0..59 {
                let i = q.index() * m + n;
                assert!(
                    d[(i, i)].norm() < 1e-12 * p.omega_b,
                    "n = {n}: {}",
                    d[(i, i)]
                );
            }
        }
    }

    #[test]
    fn unitary_rhs_matches_propagator_derivative() {
        let p = small();
        let cfg = LindbladConfig::new(0.0, 0.0, 1e-11).unwrap();
        let rho = random_density(8, 11);
        let d = lindblad_rhs(&rho, &p, &cfg);
        let h = 1e-4 / p.omega_b;
        let plus = full_propagator(&p, h).apply(&rho);
        let minus = full_propagator(&p, -h).apply(&rho);
        let fd = (plus.matrix() - minus.matrix()) / Complex64::new(2.0 * h, 0.0);
        assert!(max_abs(&(fd - d)) < 1e-8 * p.omega_b);
    }

    #[test]
    fn unitary_limit_matches_propagator() {
        let p = small();
        let tau = crate::maps::reserved_interval(&p, 3) * 1.7;
        let cfg = LindbladConfig::new(0.0, 0.0, tau / 2000.0).unwrap();
        for seed in 0..3 {
            let rho = random_density(8, seed);
            let ev = evolve(&rho, &p, &cfg, tau).unwrap();
            let exact = full_propagator(&p, tau).apply(&rho);
            assert!(max_abs(&(ev.state.matrix() - exact.matrix())) < 1e-8);
            assert_eq!(ev.clipped_eigenvalues, 0);
        }
    }

    #[test]
    fn bare_decay_of_fock_state() {
        let p = PhysicalParams {
            g: 1e-12 * 3.7e9,
            detuning: 0.0,
            ..PhysicalParams::reference().with_cutoff(8)
        };
        let gamma = 1e-3 * p.omega_b;
        let cfg = LindbladConfig::new(gamma, 0.0, 0.5 / p.omega_b).unwrap();
        let rho = CompositeDensityMatrix::product(
            Qubit::Ground,
            &ResonatorPopulations::fock(5, 8).unwrap(),
        );
        let tau = 700.0 / p.omega_b;
        let ev = evolve(&rho, &p, &cfg, tau).unwrap();
        let pops = ev.state.resonator_diagonal();
        let mean: f64 = pops.iter().enumerate().map(|(n, v)| n as f64 * v).sum();
        assert_abs_diff_eq!(mean, 5.0 * (-gamma * tau).exp(), epsilon = 1e-8);
    }

    #[test]
    fn long_time_relaxes_to_thermal() {
        let p = PhysicalParams {
            g: 1e-12 * 3.7e9,
            detuning: 0.0,
            ..PhysicalParams::reference().with_cutoff(40)
        };
        let gamma = 1e-2 * p.omega_b;
        let n_bar = 0.8;
        let cfg = LindbladConfig::new(gamma, n_bar, 0.05 / p.omega_b).unwrap();
        let start = ResonatorPopulations::fock(3, 40).unwrap();
        let blocks = ExcitationBlocks::product(Qubit::Ground, &start);
        let (end, _) = evolve_blocks(&blocks, &p, &cfg, 30.0 / gamma).unwrap();
        let pops = end.resonator_populations();
        let th = thermal_state(&ThermalSpec::new(n_bar).unwrap(), 40).unwrap();
        for (a, b) in pops.iter().zip(th.as_slice()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn block_and_dense_routes_agree() {
        let p = small();
        let th = thermal_state(&ThermalSpec::new(0.1).unwrap(), 8).unwrap();
        let tau = crate::maps::reserved_interval(&p, 2) * 2.0;
        let cfg = LindbladConfig::new(3e-3 * p.omega_b, 0.7, tau / 500.0).unwrap();
        for q in [Qubit::Ground, Qubit::Excited] {
            let rho = CompositeDensityMatrix::product(q, &th);
            let dense = evolve(&rho, &p, &cfg, tau).unwrap().state;
            let blocks = ExcitationBlocks::from_composite(&rho, 1e-14).unwrap();
            assert_eq!(blocks.to_composite(), rho);
            let (b, _) = evolve_blocks(&blocks, &p, &cfg, tau).unwrap();
            assert!(max_abs(&(b.to_composite().matrix() - dense.matrix())) < 1e-13);
        }
        let mixed = random_density(8, 3);
        assert!(ExcitationBlocks::from_composite(&mixed, 1e-9).is_err());
    }

    #[test]
    fn fourth_order_convergence() {
        let p = small();
        let tau = crate::maps::reserved_interval(&p, 3);
        let rho = random_density(8, 5);
        let base = LindbladConfig::new(2e-3 * p.omega_b, 1.0, tau / 80.0).unwrap();
        let run = |dt: f64| {
            evolve(&rho, &p, &base.with_dt(dt), tau)
                .unwrap()
                .state
                .into_matrix()
        };
        let reference = run(tau / 640.0);
        let e1 = max_abs(&(run(tau / 80.0) - &reference));
        let e2 = max_abs(&(run(tau / 160.0) - &reference));
        let ratio = e1 / e2;
        assert!((ratio - 16.0).abs() < 2.5, "ratio {ratio}");
    }

    #[test]
    fn trace_and_hermiticity_over_many_rounds() {
        let p = small();
        let th = thermal_state(&ThermalSpec::new(0.05).unwrap(), 8).unwrap();
        let mut rho = CompositeDensityMatrix::product(Qubit::Excited, &th);
        let cfg = LindbladConfig::for_protocol(&p.with_gamma(1e-3 * p.omega_b), 2)
            .with_dt(crate::maps::reserved_interval(&p, 2) / 400.0);
        let tau = crate::maps::reserved_interval(&p, 2);
        for _ in 0..10 {
            let ev = evolve(&rho, &p, &cfg, tau).unwrap();
            assert_abs_diff_eq!(ev.state.trace(), 1.0, epsilon = 1e-8);
            assert!(ev.state.hermiticity_error() < 1e-10);
            rho = ev.state;
        }
    }

    #[test]
    fn rejects_oversized_steps() {
        let p = small();
        let cfg = LindbladConfig::new(0.0, 0.0, 10.0 / p.omega_b).unwrap();
        let rho = random_density(8, 1);
        assert!(matches!(
            evolve(&rho, &p, &cfg, 1e-8),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn projection_algebra_at_zero_time() {
        let p = PhysicalParams::reference().with_cutoff(1);
        let cfg = LindbladConfig::new(0.0, 0.0, 1e-11).unwrap();
        // ψ = a|g,0⟩ + b|e,1⟩
        let (a, b) = (0.6f64, 0.8f64);
        let mut v = nalgebra::DVector::zeros(4);
        v[0] = Complex64::new(a, 0.0);
        v[3] = Complex64::new(0.0, b);
        let rho = CompositeDensityMatrix::new(&v * v.adjoint(), 1).unwrap();

        let un = measured_evolution(
            &rho,
            &p,
            &cfg,
            0.0,
            MeasurementKind::Unconditional,
            Qubit::Excited,
        )
        .unwrap();
        assert_eq!(un.success_prob, 1.0);
        assert_abs_diff_eq!(un.resonator.as_slice()[0], a * a, epsilon = 1e-15);
        assert_abs_diff_eq!(un.resonator.as_slice()[1], b * b, epsilon = 1e-15);
        let m = un.state.matrix();
        assert_abs_diff_eq!(m[(2, 2)].re, a * a, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(3, 3)].re, b * b, epsilon = 1e-15);
        assert_eq!(m[(2, 3)].norm(), 0.0);

        let cond = measured_evolution(
            &rho,
            &p,
            &cfg,
            0.0,
            MeasurementKind::Conditional,
            Qubit::Ground,
        )
        .unwrap();
        assert_abs_diff_eq!(cond.success_prob, b * b, epsilon = 1e-15);
        assert_abs_diff_eq!(cond.resonator.as_slice()[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cond.state.matrix()[(1, 1)].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn closed_limit_reproduces_measurement_maps() {
        let p = PhysicalParams::reference().with_cutoff(30);
        let th = thermal_state(&ThermalSpec::new(0.6).unwrap(), 30).unwrap();
        let tau = crate::maps::reserved_interval(&p, 4) * 3.0;
        let cfg = LindbladConfig::for_protocol(&p, 4);
        let (open, _) = open_round(
            &th,
            &p,
            &cfg,
            tau,
            MeasurementKind::Unconditional,
            Qubit::Excited,
        )
        .unwrap();
        let closed = unconditional_map(&th, &p, tau).unwrap();
        for (a, b) in open
            .post_state
            .as_slice()
            .iter()
            .zip(closed.post_state.as_slice())
        {
            assert!((a - b).abs() < 1e-8);
        }
        let fock = ResonatorPopulations::fock(4, 30).unwrap();
        let t_opt = optimal_conditional_interval(&p, 4).unwrap();
        let (open, _) = open_round(
            &fock,
            &p,
            &cfg,
            t_opt,
            MeasurementKind::Conditional,
            Qubit::Ground,
        )
        .unwrap();
        let closed = conditional_map(&fock, &p, t_opt).unwrap();
        assert!((open.success_prob - closed.success_prob).abs() < 1e-8);
        assert!((open.post_state.weight() - closed.post_state.weight()).abs() < 1e-8);

        // dense route agrees as well
        let rho = CompositeDensityMatrix::product(Qubit::Excited, &th);
        let dense = measured_evolution(
            &rho,
            &p,
            &cfg,
            tau,
            MeasurementKind::Unconditional,
            Qubit::Excited,
        )
        .unwrap();
        let closed = unconditional_map(&th, &p, tau).unwrap();
        for (a, b) in dense
            .resonator
            .as_slice()
            .iter()
            .zip(closed.post_state.as_slice())
        {
            assert!((a - b).abs() < 1e-8);
        }
        let _ = average_occupation(&dense.resonator).unwrap();
    }

    #[test]
    fn conditional_failure_is_reported() {
        let p = small();
        let cfg = LindbladConfig::for_protocol(&p, 2);
        let ground = ResonatorPopulations::fock(0, 8).unwrap();
        let err = open_round(
            &ground,
            &p,
            &cfg,
            1e-9,
            MeasurementKind::Conditional,
            Qubit::Ground,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MeasurementFailed { .. }));
    }
}
