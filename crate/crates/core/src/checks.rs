//! Acceptance checks, shared by the `acceptance` test target and `mbcool check`.
//!
//! Each check returns a [`Check`] with a pass flag and a one-line detail.
//! Checks that need a trained schedule share one cached training run per M.

use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fock::{thermal_occupation, ResonatorPopulations};
use crate::jc::{cooling_coeffs, full_propagator, rabi_frequency};
use crate::maps::{
    conditional_map, higher_reserved_states, optimal_conditional_interval, reserved_interval,
};
use crate::open_system::{evolve_blocks, ExcitationBlocks, LindbladConfig};
use crate::params::PhysicalParams;
use crate::protocol::{
    gamma_grid, run_protocol, run_schedule, step_two_product, sweep_reserved_state, ProtocolConfig,
    Route, ScheduleSource,
};
use crate::schedule::{
    beam_search_baseline, equal_spacing, exhaustive_search, train, BeamScore, MeasurementSchedule,
    RewardMode, TrainConfig, TrainResult,
};
use crate::Qubit;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} [{}] {}: {}", self.id, self.title, self.detail)
    }
}

/// Sub-results joined into one line; the check passes when all of them do.
struct Parts(Vec<(bool, String)>);

impl Parts {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn add(&mut self, ok: bool, text: String) {
        self.0.push((ok, text));
    }

    fn finish(self, id: u8, title: &'static str) -> Check {
        let passed = self.0.iter().all(|(ok, _)| *ok);
        let detail = self
            .0
            .iter()
            .map(|(ok, t)| format!("{}{t}", if *ok { "" } else { "✗ " }))
            .collect::<Vec<_>>()
            .join("; ");
        Check {
            id,
            title,
            passed,
            detail,
        }
    }
}

fn reference() -> PhysicalParams {
    PhysicalParams::reference()
}

/// Full-scale training run (n_r = 10, d = 5, default PPO settings) for `rounds` measurements.
pub fn trained(rounds: usize) -> Result<&'static TrainResult> {
    static M20: OnceLock<std::result::Result<TrainResult, String>> = OnceLock::new();
    static M30: OnceLock<std::result::Result<TrainResult, String>> = OnceLock::new();
    let cell = match rounds {
        20 => &M20,
        30 => &M30,
        _ => panic!("only M = 20 and M = 30 are cached"),
    };
    let r = cell.get_or_init(|| {
        let config = TrainConfig {
            rounds,
            ..Default::default()
        };
        train(&reference(), &config, None).map_err(|e| e.to_string())
    });
    r.as_ref()
        .map_err(|e| crate::Error::InvalidParameter(e.clone()))
}

pub fn criterion_1() -> Result<Check> {
    let table = higher_reserved_states(&reference(), 5, 4)?;
    let (n2, n3, n4) = (
        table.get(2).unwrap(),
        table.get(3).unwrap(),
        table.get(4).unwrap(),
    );
    let mut parts = Parts::new();
    parts.add(n2 == 23, format!("n_r^(2) = {n2} (23)"));
    parts.add(n3 == 53, format!("n_r^(3) = {n3} (53)"));
    parts.add(n4.abs_diff(95) <= 1, format!("n_r^(4) = {n4} (95 ± 1)"));
    Ok(parts.finish(1, "reserved-state table"))
}

pub fn criterion_2() -> Result<Check> {
    let n = thermal_occupation(&reference()).n_bar_th;
    let mut parts = Parts::new();
    parts.add(
        (n - 3.06).abs() <= 0.02,
        format!("n̄ = {n:.6} (3.06 ± 0.02)"),
    );
    Ok(parts.finish(2, "thermal occupation"))
}

pub fn criterion_3() -> Result<Check> {
    let p = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.gen_range(0..=200);
        let tau = rng.gen_range(0.0..50.0) / p.g;
        let c = cooling_coeffs(&p, n, tau);
        worst = worst.max((c.alpha_sq() + c.beta_sq() - 1.0).abs());
    }
    let tau_r = reserved_interval(&p, 5);
    let a = cooling_coeffs(&p, 6, tau_r).alpha_sq();
    let mut parts = Parts::new();
    parts.add(
        worst <= 1e-12,
        format!("max ||α|²+|β|²−1| = {worst:.2e} over 10⁴ samples"),
    );
    parts.add(
        (a - 1.0).abs() <= 1e-12,
        format!("|α_6(τ_r)|² − 1 = {:.2e}", a - 1.0),
    );
    Ok(parts.finish(3, "coefficient identity"))
}

pub fn criterion_4() -> Result<Check> {
    let p = reference();
    let a = cooling_coeffs(&p, 1, reserved_interval(&p, 5)).alpha_sq();
    let mut parts = Parts::new();
    parts.add(
        (a - 0.12).abs() <= 0.005,
        format!("|α_1(τ_r)|² = {a:.6} (0.12 ± 0.005)"),
    );
    Ok(parts.finish(4, "ground-state retention"))
}

pub fn criterion_5() -> Result<Check> {
    let p = reference().with_cutoff(12);
    let tau = optimal_conditional_interval(&p, 10)?;
    let omega = rabi_frequency(&p, 10).omega_n;
    let analytic = p.g * p.g * 10.0 / (omega * omega);
    let map = conditional_map(&ResonatorPopulations::fock(10, 12)?, &p, tau)?;
    let u = full_propagator(&p, tau).qubit_element(Qubit::Excited, Qubit::Ground);
    let oracle = u[(9, 10)].norm_sqr();
    let mut parts = Parts::new();
    parts.add(
        (map.success_prob - analytic).abs() <= 1e-12,
        format!("map {:.15} vs g²·10/Ω² {analytic:.15}", map.success_prob),
    );
    parts.add(
        (oracle - analytic).abs() <= 1e-12,
        format!(
            "propagator |⟨e,9|U|g,10⟩|² − analytic = {:.1e}",
            oracle - analytic
        ),
    );
    parts.add(
        map.post_state.as_slice()[9] == 1.0,
        "post-state is |9⟩".into(),
    );
    Ok(parts.finish(5, "single conditional transfer"))
}

pub fn criterion_6() -> Result<Check> {
    let start = Instant::now();
    let t = trained(30)?;
    let config = ProtocolConfig {
        schedule: ScheduleSource::Actions(t.schedule.actions.clone()),
        ..Default::default()
    };
    let r = run_protocol(&config)?;

    // step two alone on |n_r⟩ against the closed-form product
    let p = reference();
    let schedule = MeasurementSchedule::new(&p, 10, Vec::new());
    let fock = run_schedule(
        &p,
        &schedule,
        &ResonatorPopulations::fock(10, p.n_c)?,
        Route::Closed,
    )?;
    let product = step_two_product(&p, &schedule)?;

    let mut parts = Parts::new();
    parts.add(
        r.fidelity >= 0.9999,
        format!("F = {:.7} (≥ 0.9999)", r.fidelity),
    );
    parts.add(
        r.mean_occupation <= 1e-4,
        format!("n̄ = {:.3e} (≤ 1e-4)", r.mean_occupation),
    );
    parts.add(
        r.success_prob >= 0.90,
        format!(
            "P_s = {:.4} (≥ 0.90; bounded by Π g²n/Ω_n² · F_r = {:.4})",
            r.success_prob,
            product * r.reserved_fidelity
        ),
    );
    parts.add(
        (fock.success_prob - product).abs() <= 1e-12,
        format!(
            "step-two product {product:.12} reproduced to {:.1e}",
            (fock.success_prob - product).abs()
        ),
    );
    parts.add(
        true,
        format!(
            "F_r = {:.5}, {:.0} s incl. training",
            r.reserved_fidelity,
            start.elapsed().as_secs_f64()
        ),
    );
    Ok(parts.finish(6, "closed-system protocol"))
}

pub fn criterion_7() -> Result<Check> {
    let t = trained(20)?;
    let mut parts = Parts::new();
    parts.add(
        t.fidelity >= 0.90,
        format!("F_r after 20 maps = {:.5} (≥ 0.90)", t.fidelity),
    );
    Ok(parts.finish(7, "Fock-state preparation at M = 20"))
}

pub fn criterion_8() -> Result<Check> {
    let closed_cfg = ProtocolConfig::default();
    let closed = run_protocol(&closed_cfg)?;
    let open = run_protocol(&ProtocolConfig {
        open: true,
        schedule: ScheduleSource::Actions(closed.schedule.actions.clone()),
        ..closed_cfg
    })?;
    let mut diff: f64 = (open.success_prob - closed.success_prob)
        .abs()
        .max((open.fidelity - closed.fidelity).abs());
    for (a, b) in open.snapshots.iter().zip(&closed.snapshots) {
        for (x, y) in a.iter().zip(b) {
            diff = diff.max((x - y).abs());
        }
    }

    // decoupled relaxation from |5⟩ into the reference bath
    let p = PhysicalParams {
        g: 1e-12 * 3.7e9,
        detuning: 0.0,
        ..reference()
    };
    let gamma = p.gamma0();
    let n_th = thermal_occupation(&p).n_bar_th;
    let cfg = LindbladConfig::new(gamma, n_th, 1e-4 / gamma)?;
    let mut state =
        ExcitationBlocks::product(Qubit::Ground, &ResonatorPopulations::fock(5, p.n_c)?);
    let mut relax: f64 = 0.0;
    let mut t = 0.0;
    for _ in 0..6 {
        let step = 0.5 / gamma;
        state = evolve_blocks(&state, &p, &cfg, step)?.0;
        t += step;
        let mean: f64 = state
            .resonator_populations()
            .iter()
            .enumerate()
            .map(|(n, v)| n as f64 * v)
            .sum();
        relax = relax.max((mean - (n_th + (5.0 - n_th) * (-gamma * t).exp())).abs());
    }
    let mut parts = Parts::new();
    parts.add(
        diff <= 1e-6,
        format!("γ = 0 master equation vs maps: max deviation {diff:.1e}"),
    );
    parts.add(
        relax <= 1e-6,
        format!("g → 0 relaxation vs n̄ + (n_0 − n̄)e^(−γt): {relax:.1e} up to t = 3/γ"),
    );
    Ok(parts.finish(8, "open-system limits"))
}

/// True when `v` rises strictly until it is within 5% of its maximum and stays there.
pub fn rises_to_plateau(v: &[f64]) -> bool {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let Some(k) = v.iter().position(|x| *x >= 0.95 * max) else {
        return false;
    };
    v[..=k].windows(2).all(|w| w[1] > w[0]) && v[k..].iter().all(|x| *x >= 0.95 * max)
}

pub fn criterion_9() -> Result<Check> {
    let config = ProtocolConfig::default();
    let n_rs: Vec<usize> = (5..=12).collect();
    let closed = sweep_reserved_state(&config, &n_rs, &[0.0])?;
    let ps: Vec<f64> = closed.iter().map(|r| r.success_prob).collect();
    let gammas = gamma_grid(config.omega_b, &[0.5, 1.0, 1.5]);
    let open = sweep_reserved_state(&config, &[10], &gammas)?;

    let mut parts = Parts::new();
    let f15 = open[2].fidelity;
    parts.add(f15 >= 0.85, format!("F(1.5γ_0) = {f15:.4} (≥ 0.85)"));
    parts.add(
        rises_to_plateau(&ps),
        format!(
            "P_s(n_r = 5..12) = [{}]",
            ps.iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
    for (row, (m, min)) in open.iter().zip([(0.5, 0.70), (1.0, 0.50), (1.5, 0.40)]) {
        parts.add(
            row.success_prob >= min,
            format!("P_s({m}γ_0) = {:.4} (≥ {min})", row.success_prob),
        );
    }
    Ok(parts.finish(9, "decoherence sweep trends"))
}

pub fn criterion_10() -> Result<Check> {
    let p = reference();
    let toy = TrainConfig {
        n_r: 5,
        rounds: 6,
        actions: 2,
        updates: 150,
        reward_mode: RewardMode::Terminal,
        ..Default::default()
    };
    let optimum = exhaustive_search(&toy.env(&p)?)?;
    let rl_toy = train(&p, &toy, None)?;

    let start = Instant::now();
    let t = trained(30)?;
    let wall = t
        .log
        .last()
        .map_or(start.elapsed().as_secs_f64(), |r| r.wall_time_s);
    let env = TrainConfig::default().env(&p)?;
    let beam = beam_search_baseline(&env, 64, BeamScore::TailRollout)?;
    let equal = equal_spacing(&env)?;

    let mut parts = Parts::new();
    parts.add(
        rl_toy.schedule.actions == optimum.actions,
        format!(
            "toy RL {:?} vs exhaustive {:?}",
            rl_toy.schedule.actions, optimum.actions
        ),
    );
    parts.add(
        (t.fidelity - beam.fidelity).abs() <= 0.01,
        format!("RL F_r {:.5} vs beam(64) {:.5}", t.fidelity, beam.fidelity),
    );
    parts.add(t.fidelity > equal, format!("equal spacing {equal:.5}"));
    parts.add(wall <= 4.0 * 3600.0, format!("training {wall:.0} s"));
    Ok(parts.finish(10, "optimizer sanity"))
}

pub fn criterion_11() -> Result<Check> {
    let config = ProtocolConfig {
        schedule: ScheduleSource::Train,
        train: TrainConfig {
            updates: 5,
            ..Default::default()
        },
        seed: 7,
        ..Default::default()
    };
    let a = run_protocol(&config)?;
    let b = run_protocol(&config)?;
    let tc = config.train_config();
    let t1 = train(&reference(), &tc, None)?;
    let t2 = train(&reference(), &tc, None)?;
    let metrics = |t: &TrainResult| {
        t.log
            .iter()
            .map(|r| (r.update, r.mean_reward, r.best_fidelity))
            .collect::<Vec<_>>()
    };

    let mut parts = Parts::new();
    parts.add(
        a.without_timing() == b.without_timing(),
        "ProtocolResult bit-identical".into(),
    );
    parts.add(
        metrics(&t1) == metrics(&t2) && t1.policy == t2.policy,
        format!(
            "training metrics bit-identical over {} updates, W = {}",
            tc.updates, tc.workers
        ),
    );
    Ok(parts.finish(11, "determinism"))
}

pub fn all() -> Vec<fn() -> Result<Check>> {
    vec![
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
        criterion_11,
    ]
}

/// The ideal step-two success probability Π g²n/Ω_n² for n = 1..n_r.
pub fn step_two_ceiling(params: &PhysicalParams, n_r: usize) -> f64 {
    (1..=n_r)
        .map(|n| {
            let o = rabi_frequency(params, n).omega_n;
            params.g * params.g * n as f64 / (o * o)
        })
        .product()
}
