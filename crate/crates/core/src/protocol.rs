//! The two-step cooling protocol end to end: schedule resolution, closed or
//! open-system runs, Fig. 4 style sweeps, CSV figure data and run manifests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fock::{average_occupation, thermal_occupation, thermal_state, ResonatorPopulations};
use crate::jc::weights;
use crate::maps::{conditional_map, min_first_reserved, reserved_interval, unconditional_map};
use crate::open_system::{open_round, LindbladConfig, MeasurementKind, STEPS_PER_TAU_R};
use crate::params::{PhysicalParams, GAMMA0_RATIO};
use crate::schedule::{
    beam_search_baseline, train, BeamScore, MeasurementSchedule, StepTwoIntervals, TrainConfig,
};
use crate::Qubit;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Where the step-one schedule comes from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ScheduleSource {
    /// All intervals τ_r.
    Equal,
    /// Rollout-scored beam search.
    #[default]
    Beam,
    /// Trained with PPO using the `train` section.
    Train,
    /// JSON file holding a schedule object or a bare array of multiples.
    File(PathBuf),
    /// Explicit multiples, as recorded in manifests.
    Actions(Vec<u32>),
}

impl ScheduleSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "equal" => Self::Equal,
            "beam" => Self::Beam,
            "train" => Self::Train,
            path => Self::File(PathBuf::from(path)),
        }
    }
}

impl fmt::Display for ScheduleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Equal => write!(f, "equal"),
            Self::Beam => write!(f, "beam"),
            Self::Train => write!(f, "train"),
            Self::File(p) => write!(f, "{}", p.display()),
            Self::Actions(a) => write!(f, "{a:?}"),
        }
    }
}

impl Serialize for ScheduleSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Actions(a) => a.serialize(s),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for ScheduleSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            List(Vec<u32>),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Name(s) => Self::parse(&s),
            Raw::List(a) => Self::Actions(a),
        })
    }
}

/// Everything needed to reproduce a run. Keys match the CLI flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Resonator frequency in rad/s.
    pub omega_b: f64,
    /// Bath temperature in kelvin.
    pub temp: f64,
    pub g_ratio: f64,
    pub detuning_ratio: f64,
    /// γ/ω_b; any positive value selects the master-equation route.
    pub gamma_ratio: f64,
    /// Fock cutoff; automatic when absent.
    pub cutoff: Option<usize>,
    pub n_r: usize,
    pub rounds: usize,
    pub schedule: ScheduleSource,
    pub beam_width: usize,
    pub step_two: StepTwoIntervals,
    /// Forces the master-equation route even at γ = 0.
    pub open: bool,
    pub steps_per_tau_r: f64,
    /// Reject n_r below the minimum first reserved state instead of warning.
    pub strict: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub train: TrainConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            omega_b: 3.7e9,
            temp: 0.1,
            g_ratio: 0.04,
            detuning_ratio: 0.02,
            gamma_ratio: 0.0,
            cutoff: None,
            n_r: 10,
            rounds: 30,
            schedule: ScheduleSource::Beam,
            beam_width: 64,
            step_two: StepTwoIntervals::PerLevel,
            open: false,
            steps_per_tau_r: STEPS_PER_TAU_R,
            strict: false,
            seed: 0,
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn params(&self) -> Result<PhysicalParams> {
        let p = PhysicalParams::from_ratios(
            self.omega_b,
            self.g_ratio,
            self.detuning_ratio,
            self.temp,
            self.gamma_ratio,
        )?;
        Ok(match self.cutoff {
            Some(n_c) => p.with_cutoff(n_c),
            None => p,
        })
    }

    /// Training settings with this run's n_r, M and seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_r: self.n_r,
            rounds: self.rounds,
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn is_open(&self) -> bool {
        self.open || self.gamma_ratio > 0.0
    }

    pub fn lindblad(&self, params: &PhysicalParams) -> LindbladConfig {
        LindbladConfig::for_protocol(params, self.n_r)
            .with_dt(reserved_interval(params, self.n_r) / self.steps_per_tau_r)
    }

    /// Checks n_r against the minimum first reserved state: an error in strict
    /// mode, a warning otherwise.
    pub fn check_reserved_state(&self, params: &PhysicalParams) -> Result<()> {
        let min = min_first_reserved(params, &thermal_occupation(params)).ceil() as usize;
        if self.n_r < min {
            let msg = format!(
                "n_r = {} is below the minimum first reserved state {min}",
                self.n_r
            );
            if self.strict {
                return Err(Error::InvalidParameter(msg));
            }
            log::warn!(
                "{msg}; high-lying thermal population will spill past the second reserved state"
            );
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<PhysicalParams> {
        let params = self.params()?;
        if self.n_r > params.n_c {
            return Err(Error::IndexOutOfRange {
                index: self.n_r,
                n_c: params.n_c,
            });
        }
        if self.steps_per_tau_r.is_nan() || self.steps_per_tau_r < 1.0 {
            return Err(Error::InvalidParameter(
                "steps_per_tau_r must be >= 1".into(),
            ));
        }
        self.check_reserved_state(&params)?;
        Ok(params)
    }
}

/// Closed-system maps or the Lindblad route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Route {
    Closed,
    Open(LindbladConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub schedule_s: f64,
    pub simulate_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    /// M + n_r + 1 resonator snapshots. Step-one entries sum to one; step-two
    /// entries sum to the cumulative success probability.
    pub snapshots: Vec<Vec<f64>>,
    /// Ground-state fidelity after step two.
    pub fidelity: f64,
    pub mean_occupation: f64,
    pub success_prob: f64,
    pub step_two_probs: Vec<f64>,
    /// p_{n_r} after step one.
    pub reserved_fidelity: f64,
    /// Population left outside |0⟩ after step two (normalized).
    pub residual: f64,
    pub schedule: MeasurementSchedule,
    pub open: bool,
    pub clipped_eigenvalues: usize,
    pub timing: Timing,
}

impl ProtocolResult {
    /// Copy with timing zeroed, for bit-level comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: Timing::default(),
            ..self.clone()
        }
    }
}

/// Step-one schedule for a config, after checking its length and n_r.
pub fn resolve_schedule(
    config: &ProtocolConfig,
    params: &PhysicalParams,
) -> Result<MeasurementSchedule> {
    let closed = params.with_gamma(0.0);
    let actions = match &config.schedule {
        ScheduleSource::Equal => vec![1; config.rounds],
        ScheduleSource::Actions(a) => a.clone(),
        ScheduleSource::Beam => {
            let env = config.train_config().env(&closed)?;
            beam_search_baseline(&env, config.beam_width, BeamScore::TailRollout)?.actions
        }
        ScheduleSource::Train => {
            let result = train(&closed, &config.train_config(), None)?;
            if result.failed {
                log::warn!("trained schedule is worse than equal spacing");
            }
            result.schedule.actions
        }
        ScheduleSource::File(path) => load_schedule(path, config.n_r)?,
    };
    if actions.len() != config.rounds {
        return Err(Error::ScheduleMismatch {
            expected: config.rounds,
            got: actions.len(),
        });
    }
    if actions.contains(&0) {
        return Err(Error::InvalidParameter(
            "interval multiples must be >= 1".into(),
        ));
    }
    Ok(MeasurementSchedule::new(params, config.n_r, actions).with_step_two(config.step_two))
}

fn load_schedule(path: &Path, n_r: usize) -> Result<Vec<u32>> {
    let text = fs::read_to_string(path)?;
    if let Ok(actions) = serde_json::from_str::<Vec<u32>>(&text) {
        return Ok(actions);
    }
    let s: MeasurementSchedule = serde_json::from_str(&text)?;
    if s.n_r != n_r {
        return Err(Error::InvalidParameter(format!(
            "schedule file is for n_r = {}, run uses {n_r}",
            s.n_r
        )));
    }
    Ok(s.actions)
}

/// Runs the protocol described by `config` from the thermal state.
pub fn run_protocol(config: &ProtocolConfig) -> Result<ProtocolResult> {
    let params = config.validate()?;
    let start = Instant::now();
    let schedule = resolve_schedule(config, &params)?;
    let schedule_s = start.elapsed().as_secs_f64();
    let initial = thermal_state(&thermal_occupation(&params), params.n_c)?;
    let route = if config.is_open() {
        Route::Open(config.lindblad(&params))
    } else {
        Route::Closed
    };
    let mut result = run_schedule(&params, &schedule, &initial, route)?;
    result.timing.schedule_s = schedule_s;
    Ok(result)
}

/// Step one (unconditional rounds, qubit in |e⟩) then n_r conditional rounds
/// (qubit in |g⟩, outcome |e⟩ kept) from an explicit initial state.
pub fn run_schedule(
    params: &PhysicalParams,
    schedule: &MeasurementSchedule,
    initial: &ResonatorPopulations,
    route: Route,
) -> Result<ProtocolResult> {
    let start = Instant::now();
    if schedule.n_r > initial.n_c() {
        return Err(Error::IndexOutOfRange {
            index: schedule.n_r,
            n_c: initial.n_c(),
        });
    }
    let mut clipped = 0;
    let mut round = |state: &ResonatorPopulations, tau: f64, kind: MeasurementKind| -> Result<_> {
        match route {
            Route::Closed => match kind {
                MeasurementKind::Unconditional => unconditional_map(state, params, tau),
                MeasurementKind::Conditional => conditional_map(state, params, tau),
            },
            Route::Open(lindblad) => {
                let prep = match kind {
                    MeasurementKind::Unconditional => Qubit::Excited,
                    MeasurementKind::Conditional => Qubit::Ground,
                };
                let (outcome, c) = open_round(state, params, &lindblad, tau, kind, prep)?;
                clipped += c;
                Ok(outcome)
            }
        }
    };

    let mut state = initial.normalized()?;
    let mut snapshots = Vec::with_capacity(schedule.rounds() + schedule.n_r + 1);
    snapshots.push(state.as_slice().to_vec());
    for tau in schedule.step_one_intervals() {
        state = round(&state, tau, MeasurementKind::Unconditional)?.post_state;
        snapshots.push(state.as_slice().to_vec());
    }
    let reserved_fidelity = state.as_slice()[schedule.n_r];

    let mut step_two_probs = Vec::with_capacity(schedule.n_r);
    for tau in schedule.step_two_intervals(params)? {
        let outcome = round(&state, tau, MeasurementKind::Conditional)?;
        step_two_probs.push(outcome.success_prob);
        state = outcome.post_state;
        snapshots.push(state.unnormalized().into_vec());
    }
    let success_prob = step_two_probs.iter().product();
    let fidelity = state.as_slice()[0];
    Ok(ProtocolResult {
        snapshots,
        fidelity,
        mean_occupation: average_occupation(&state)?,
        success_prob,
        step_two_probs,
        reserved_fidelity,
        residual: state.as_slice()[1..].iter().sum(),
        schedule: schedule.clone(),
        open: matches!(route, Route::Open(_)),
        clipped_eigenvalues: clipped,
        timing: Timing {
            schedule_s: 0.0,
            simulate_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Π_{n=1..n_r} |β_n(τ_n)|² for the step-two intervals of `schedule` acting on |n_r⟩.
pub fn step_two_product(params: &PhysicalParams, schedule: &MeasurementSchedule) -> Result<f64> {
    let taus = schedule.step_two_intervals(params)?;
    Ok(taus
        .iter()
        .enumerate()
        .map(|(k, tau)| weights(params, schedule.n_r - k, *tau).1)
        .product())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_r: usize,
    /// Decay rate in rad/s.
    pub gamma: f64,
    pub fidelity: f64,
    pub success_prob: f64,
    pub reserved_fidelity: f64,
}

/// γ values as multiples of γ_0 = 1e-5 ω_b.
pub fn gamma_grid(omega_b: f64, multiples: &[f64]) -> Vec<f64> {
    multiples
        .iter()
        .map(|m| m * GAMMA0_RATIO * omega_b)
        .collect()
}

/// Runs every (n_r, γ) pair. Schedules are optimized once per n_r on the
/// closed system and reused for every γ; rows come back in (n_r, γ) order.
pub fn sweep_reserved_state(
    config: &ProtocolConfig,
    n_rs: &[usize],
    gammas: &[f64],
) -> Result<Vec<SweepRow>> {
    let base = config.params()?;
    let schedules: Vec<MeasurementSchedule> = n_rs
        .par_iter()
        .map(|&n_r| {
            let c = ProtocolConfig {
                n_r,
                gamma_ratio: 0.0,
                ..config.clone()
            };
            let params = c.validate()?;
            resolve_schedule(&c, &params)
        })
        .collect::<Result<_>>()?;
    let grid: Vec<(usize, f64)> = n_rs
        .iter()
        .enumerate()
        .flat_map(|(i, _)| gammas.iter().map(move |g| (i, *g)))
        .collect();
    grid.par_iter()
        .map(|&(i, gamma)| {
            let c = ProtocolConfig {
                n_r: n_rs[i],
                gamma_ratio: gamma / base.omega_b,
                schedule: ScheduleSource::Actions(schedules[i].actions.clone()),
                ..config.clone()
            };
            let r = run_protocol(&c)?;
            Ok(SweepRow {
                n_r: n_rs[i],
                gamma,
                fidelity: r.fidelity,
                success_prob: r.success_prob,
                reserved_fidelity: r.reserved_fidelity,
            })
        })
        .collect()
}

/// Reference-point data behind Fig. 1: T = 1 K, n_r1 = 5, equal intervals τ_r.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Data {
    pub params: PhysicalParams,
    pub n_r1: usize,
    pub tau_r: f64,
    pub history: Vec<ResonatorPopulations>,
    pub n_max: usize,
}

pub const FIG1_TEMPERATURE: f64 = 1.0;
pub const FIG1_RESERVED: usize = 5;
/// Highest Fock level written to the Fig. 1 tables (past n_r^(4) = 96).
pub const FIG1_MAX_LEVEL: usize = 120;

pub fn fig1_data(config: &ProtocolConfig) -> Result<Fig1Data> {
    let c = ProtocolConfig {
        temp: FIG1_TEMPERATURE,
        gamma_ratio: 0.0,
        cutoff: None,
        ..config.clone()
    };
    let params = c.params()?;
    let tau_r = reserved_interval(&params, FIG1_RESERVED);
    let mut history = vec![thermal_state(&thermal_occupation(&params), params.n_c)?];
    for _ in 0..config.rounds {
        let next = unconditional_map(history.last().unwrap(), &params, tau_r)?.post_state;
        history.push(next);
    }
    Ok(Fig1Data {
        n_max: FIG1_MAX_LEVEL.min(params.n_c),
        params,
        n_r1: FIG1_RESERVED,
        tau_r,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureId {
    Fig1a,
    Fig1b,
    Fig1c,
    Fig2,
    Fig3,
    Fig4,
}

impl FigureId {
    pub fn file_name(self) -> &'static str {
        match self {
            Self::Fig1a => "fig1a.csv",
            Self::Fig1b => "fig1b.csv",
            Self::Fig1c => "fig1c.csv",
            Self::Fig2 => "fig2.csv",
            Self::Fig3 => "fig3.csv",
            Self::Fig4 => "fig4.csv",
        }
    }
}

pub enum FigureData<'a> {
    Fig1(&'a Fig1Data),
    Protocol(&'a ProtocolResult),
    Sweep(&'a [SweepRow]),
}

/// Float with 12 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

/// Samples of τ/τ_r in Fig. 1(c): 0 to 3 in steps of 0.01.
pub fn fig1c_grid() -> Vec<f64> {
    (0..=300).map(|i| f64::from(i) / 100.0).collect()
}

/// Writes one figure table into `dir` and returns its path.
pub fn emit_figure_data(dir: &Path, data: &FigureData<'_>, id: FigureId) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(id.file_name());
    let mut w = csv::Writer::from_path(&path)?;
    match (data, id) {
        (FigureData::Fig1(d), FigureId::Fig1a) => {
            w.write_record(["m", "n", "eta"])?;
            for m in 1..d.history.len() {
                let etas = crate::maps::transfer_ratios(&d.history, m)?;
                for (n, eta) in etas.iter().enumerate().take(d.n_max + 1) {
                    if let Some(eta) = eta {
                        w.write_record([m.to_string(), n.to_string(), fmt_float(*eta)])?;
                    }
                }
            }
        }
        (FigureData::Fig1(d), FigureId::Fig1b) => {
            w.write_record(["m", "n", "p_n"])?;
            for (m, s) in d.history.iter().enumerate() {
                for (n, p) in s.as_slice().iter().enumerate().take(d.n_max + 1) {
                    w.write_record([m.to_string(), n.to_string(), fmt_float(*p)])?;
                }
            }
        }
        (FigureData::Fig1(d), FigureId::Fig1c) => {
            w.write_record(["tau_over_tau_r", "n", "alpha_sq"])?;
            for x in fig1c_grid() {
                for n in 0..=d.n_max {
                    let a = weights(&d.params, n + 1, x * d.tau_r).0;
                    w.write_record([fmt_float(x), n.to_string(), fmt_float(a)])?;
                }
            }
        }
        (FigureData::Protocol(r), FigureId::Fig2) => {
            w.write_record(["step", "action"])?;
            for (i, a) in r.schedule.actions.iter().enumerate() {
                w.write_record([(i + 1).to_string(), a.to_string()])?;
            }
        }
        (FigureData::Protocol(r), FigureId::Fig3) => {
            w.write_record(["measurement", "n", "p_n"])?;
            for (m, s) in r.snapshots.iter().enumerate() {
                for (n, p) in s.iter().enumerate() {
                    w.write_record([m.to_string(), n.to_string(), fmt_float(*p)])?;
                }
            }
        }
        (FigureData::Sweep(rows), FigureId::Fig4) => {
            w.write_record(["n_r", "gamma", "F", "P_s"])?;
            for r in rows.iter() {
                w.write_record([
                    r.n_r.to_string(),
                    fmt_float(r.gamma),
                    fmt_float(r.fidelity),
                    fmt_float(r.success_prob),
                ])?;
            }
        }
        (_, id) => {
            drop(w);
            fs::remove_file(&path).ok();
            return Err(Error::InvalidParameter(format!(
                "{id:?} cannot be drawn from this data"
            )));
        }
    }
    w.flush()?;
    Ok(path)
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub command: String,
    /// Config with the schedule pinned to the multiples actually used.
    pub config: ProtocolConfig,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &ProtocolConfig) -> Self {
        Self {
            code_version: CODE_VERSION.to_string(),
            command: command.to_string(),
            config: config.clone(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    /// Records a protocol result: pins its schedule and stores the headline numbers.
    pub fn with_result(mut self, result: &ProtocolResult) -> Self {
        self.config.schedule = ScheduleSource::Actions(result.schedule.actions.clone());
        self.summary = serde_json::json!({
            "fidelity": result.fidelity,
            "mean_occupation": result.mean_occupation,
            "success_prob": result.success_prob,
            "reserved_fidelity": result.reserved_fidelity,
            "open": result.open,
        });
        self
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Re-runs the protocol recorded in a manifest.
pub fn run_from_manifest(path: &Path) -> Result<ProtocolResult> {
    run_protocol(&RunManifest::read(path)?.config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quick() -> ProtocolConfig {
        ProtocolConfig {
            schedule: ScheduleSource::Equal,
            ..Default::default()
        }
    }

    #[test]
    fn snapshot_count_and_traces() {
        let r = run_protocol(&quick()).unwrap();
        assert_eq!(r.snapshots.len(), 30 + 10 + 1);
        for s in &r.snapshots[..31] {
            assert_abs_diff_eq!(s.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let mut weight = 1.0;
        for (k, s) in r.snapshots[31..].iter().enumerate() {
            weight *= r.step_two_probs[k];
            assert_abs_diff_eq!(s.iter().sum::<f64>(), weight, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r.success_prob, weight, epsilon = 1e-15);
        assert!((0.0..=1.0).contains(&r.success_prob) && (0.0..=1.0).contains(&r.fidelity));
    }

    #[test]
    fn occupation_does_not_increase_in_step_two() {
        let r = run_protocol(&quick()).unwrap();
        let mean = |s: &Vec<f64>| {
            let t: f64 = s.iter().sum();
            s.iter().enumerate().map(|(n, p)| n as f64 * p).sum::<f64>() / t
        };
        for w in r.snapshots[30..].windows(2) {
            assert!(mean(&w[1]) <= mean(&w[0]) + 1e-12);
        }
    }

    #[test]
    fn schedule_length_is_checked() {
        let c = ProtocolConfig {
            schedule: ScheduleSource::Actions(vec![1; 5]),
            ..quick()
        };
        assert!(matches!(
            run_protocol(&c),
            Err(Error::ScheduleMismatch {
                expected: 30,
                got: 5
            })
        ));
    }

    #[test]
    fn strict_mode_rejects_low_reserved_state() {
        let c = ProtocolConfig {
            n_r: 2,
            strict: true,
            ..quick()
        };
        assert!(run_protocol(&c).is_err());
        let c = ProtocolConfig { n_r: 2, ..quick() };
        assert!(run_protocol(&c).is_ok());
    }

    #[test]
    fn schedule_source_round_trips() {
        for s in ["equal", "beam", "train", "runs/s.json"] {
            let src = ScheduleSource::parse(s);
            let json = serde_json::to_string(&src).unwrap();
            assert_eq!(serde_json::from_str::<ScheduleSource>(&json).unwrap(), src);
        }
        let a = ScheduleSource::Actions(vec![1, 2, 3]);
        assert_eq!(serde_json::to_string(&a).unwrap(), "[1,2,3]");
        assert_eq!(
            serde_json::from_str::<ScheduleSource>("[1,2,3]").unwrap(),
            a
        );
    }

    #[test]
    fn float_format_has_twelve_digits() {
        assert_eq!(fmt_float(1.0), "1.00000000000e0");
        assert_eq!(fmt_float(-0.000123456789012345), "-1.23456789012e-4");
        let back: f64 = fmt_float(std::f64::consts::PI).parse().unwrap();
        assert!((back - std::f64::consts::PI).abs() < 1e-11);
    }
}
