//! Experiment drivers: ensembles, refinement studies, twin runs, checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Experiment, SimConfig, VariantKind};
use crate::diagnostics::DiagnosticsRecord;
use crate::initial::unit_h1_velocity;
use crate::integrator::{run, RunOptions, StepError, TerminalStatus, Trajectory, Variant};
use crate::model::SystemState;
use crate::noise::BrownianPath;
use crate::spectral::{bessel_norm, ScalarField, SobolevIndex, SpectralError, TorusGrid, VelocityField};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("every path failed: {0:?}")]
    AllPathsFailed(Vec<(u64, TerminalStatus)>),
    #[error("{0}")]
    InvalidStudy(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Per-path quantities accumulated from the record stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub path_id: u64,
    pub status: TerminalStatus,
    pub failure_time: Option<f64>,
    /// `sup_t F`.
    pub sup_f: f64,
    /// `int_0^T G dt` by the trapezoidal rule over the records.
    pub int_g: f64,
    pub sup_u_h1: f64,
    /// Every record entry finite.
    pub finite: bool,
}

impl PathSummary {
    pub fn from_trajectory(path_id: u64, traj: &Trajectory) -> Self {
        let r = &traj.records;
        let sup_f = r.iter().map(|x| x.f.total()).fold(f64::NEG_INFINITY, f64::max);
        let int_g = r
            .windows(2)
            .map(|w| 0.5 * (w[1].t - w[0].t) * (w[0].g.total() + w[1].g.total()))
            .sum();
        PathSummary {
            path_id,
            status: traj.status,
            failure_time: traj.failure_time,
            sup_f,
            int_g,
            sup_u_h1: r.iter().map(|x| x.u_h1).fold(f64::NEG_INFINITY, f64::max),
            finite: r.iter().all(DiagnosticsRecord::is_finite),
        }
    }
}

/// Monte-Carlo estimate of `E[X^p]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub p: f64,
    pub mean: f64,
    pub std_error: f64,
    /// 95% normal confidence half-width.
    pub half_width: f64,
}

fn moment(values: &[f64], p: f64) -> MomentEstimate {
    let m = values.len() as f64;
    let xs: Vec<f64> = values.iter().map(|v| v.powf(p)).collect();
    // shifted by the first sample so identical samples give exactly zero variance
    let shift = xs[0];
    let mean_d = xs.iter().map(|x| x - shift).sum::<f64>() / m;
    let mean = shift + mean_d;
    let var = if values.len() > 1 {
        xs.iter().map(|x| (x - shift - mean_d).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let std_error = (var / m).sqrt();
    MomentEstimate {
        p,
        mean,
        std_error,
        half_width: 1.96 * std_error,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub eps: f64,
    pub path_count: usize,
    pub completed: usize,
    pub failures: usize,
    pub paths: Vec<PathSummary>,
    /// Estimates of `E[(sup_t F)^p]`.
    pub sup_f: Vec<MomentEstimate>,
    /// Estimates of `E[(int G dt)^p]`.
    pub int_g: Vec<MomentEstimate>,
    pub max_sup_u_h1: f64,
    pub all_finite: bool,
}

impl EnsembleReport {
    /// Reduction over per-path summaries, in ascending `path_id` order.
    pub fn reduce(eps: f64, mut paths: Vec<PathSummary>, p_list: &[f64]) -> Result<Self, HarnessError> {
        paths.sort_by_key(|p| p.path_id);
        let done: Vec<&PathSummary> = paths
            .iter()
            .filter(|p| p.status == TerminalStatus::Completed)
            .collect();
        if done.is_empty() {
            return Err(HarnessError::AllPathsFailed(
                paths.iter().map(|p| (p.path_id, p.status)).collect(),
            ));
        }
        let f: Vec<f64> = done.iter().map(|p| p.sup_f).collect();
        let g: Vec<f64> = done.iter().map(|p| p.int_g).collect();
        Ok(EnsembleReport {
            eps,
            path_count: paths.len(),
            completed: done.len(),
            failures: paths.len() - done.len(),
            sup_f: p_list.iter().map(|&p| moment(&f, p)).collect(),
            int_g: p_list.iter().map(|&p| moment(&g, p)).collect(),
            max_sup_u_h1: done.iter().map(|p| p.sup_u_h1).fold(f64::NEG_INFINITY, f64::max),
            all_finite: done.iter().all(|p| p.finite),
            paths,
        })
    }
}

/// Runs `path_count` independent paths (ids `0..path_count`) in parallel.
pub fn ensemble_run(exp: &Experiment, path_count: usize, p_list: &[f64]) -> Result<EnsembleReport, HarnessError> {
    if path_count == 0 {
        return Err(HarnessError::InvalidStudy("path_count must be at least 1".into()));
    }
    let opts = exp.run_options();
    let end = exp.steps();
    let summaries: Result<Vec<PathSummary>, StepError> = (0..path_count as u64)
        .into_par_iter()
        .map(|id| {
            let traj = run(&exp.stepper, &exp.initial, &exp.path(id), 0, end, &opts)?;
            Ok(PathSummary::from_trajectory(id, &traj))
        })
        .collect();
    EnsembleReport::reduce(exp.config.eps_effective(), summaries?, p_list)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSweepReport {
    pub reports: Vec<EnsembleReport>,
    /// `(max - min) / mean` of `E[sup F]` across the sweep.
    pub sup_f_variation: f64,
    /// `(max - min) / mean` of `E[int G]` across the sweep.
    pub int_g_variation: f64,
}

/// Ensembles at each mollifier width, sharing seeds and path ids.
pub fn eps_sweep(
    config: &SimConfig,
    eps_values: &[f64],
    path_count: usize,
    p_list: &[f64],
) -> Result<EpsSweepReport, HarnessError> {
    let mut p = p_list.to_vec();
    if !p.contains(&1.0) {
        p.insert(0, 1.0);
    }
    let mut reports = Vec::new();
    for &eps in eps_values {
        let mut cfg = config.clone();
        cfg.eps = eps;
        if cfg.variant == VariantKind::Exact {
            cfg.variant = VariantKind::Mollified;
        }
        reports.push(ensemble_run(&cfg.build()?, path_count, &p)?);
    }
    let first = |v: &[MomentEstimate]| v.iter().find(|m| m.p == 1.0).expect("p = 1 present").mean;
    let spread = |xs: Vec<f64>| {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        (max - min) / (xs.iter().sum::<f64>() / xs.len() as f64)
    };
    Ok(EpsSweepReport {
        sup_f_variation: spread(reports.iter().map(|r| first(&r.sup_f)).collect()),
        int_g_variation: spread(reports.iter().map(|r| first(&r.int_g)).collect()),
        reports,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    K,
    Eps,
    Dt,
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k" => Ok(Axis::K),
            "eps" => Ok(Axis::Eps),
            "dt" => Ok(Axis::Dt),
            _ => Err(format!("unknown axis {s:?}, expected k, eps, or dt")),
        }
    }
}

impl Axis {
    pub fn default_levels(&self, cfg: &SimConfig) -> Vec<f64> {
        match self {
            Axis::K => vec![4.0, 8.0, 16.0],
            Axis::Eps => vec![0.2, 0.1, 0.05],
            Axis::Dt => vec![cfg.dt, cfg.dt / 2.0, cfg.dt / 4.0],
        }
    }
}

/// Pathwise Cauchy differences along one parameter axis with a fixed noise path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub axis: Axis,
    pub levels: Vec<f64>,
    pub sobolev_index: f64,
    /// `sup_t (|dn|_{H^s} + |dc|_{H^s} + |du|_{H^s})` between levels `i` and `i+1`.
    pub differences: Vec<f64>,
    /// Least-squares slope of `ln difference` against `ln h` (`h = 1/k`, `eps`, or `dt`).
    pub observed_order: Option<f64>,
    pub failures: Vec<String>,
    pub note: String,
}

impl RefinementReport {
    pub fn monotone_decreasing(&self) -> bool {
        self.differences.windows(2).all(|w| w[1] < w[0])
    }
}

fn h_of(axis: Axis, level: f64) -> f64 {
    match axis {
        Axis::K => 1.0 / level,
        _ => level,
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_order(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / m,
        pts.iter().map(|p| p.1).sum::<f64>() / m,
    );
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `|dn|_{H^s} + |dc|_{H^s} + |du|_{H^s}`.
pub fn state_distance(a: &SystemState, b: &SystemState, s: f64) -> Result<f64, SpectralError> {
    let idx = SobolevIndex::new(s)?;
    Ok(bessel_norm(&a.n.sub(&b.n)?, idx)?
        + bessel_norm(&a.c.sub(&b.c)?, idx)?
        + bessel_norm(&a.u.sub(&b.u)?, idx)?)
}

const COMPARISONS: u64 = 20;

/// Refinement study along `axis`. For the `k` axis the truncated variant is used and the
/// initial data is truncated to the level's ball; for `dt`, increments at coarse levels are
/// sums of the finest-level increments.
pub fn refinement_study(config: &SimConfig, axis: Axis, levels: &[f64]) -> Result<RefinementReport, HarnessError> {
    if levels.len() < 3 {
        return Err(HarnessError::InvalidStudy("a refinement study needs at least 3 levels".into()));
    }
    let increasing = levels.windows(2).all(|w| w[1] > w[0]);
    let decreasing = levels.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(HarnessError::InvalidStudy("levels must be strictly ordered".into()));
    }
    let fine_dt = match axis {
        Axis::Dt => levels.iter().copied().fold(f64::INFINITY, f64::min),
        _ => config.dt,
    };
    let mut runs: Vec<Result<Vec<SystemState>, String>> = Vec::new();
    for &level in levels {
        let mut cfg = config.clone();
        match axis {
            Axis::K => {
                cfg.variant = VariantKind::Truncated;
                cfg.k = level;
            }
            Axis::Eps => {
                cfg.eps = level;
                if cfg.variant == VariantKind::Exact {
                    cfg.variant = VariantKind::Mollified;
                }
            }
            Axis::Dt => cfg.dt = level,
        }
        let exp = cfg.build()?;
        let substeps = (cfg.dt / fine_dt).round();
        if (substeps * fine_dt - cfg.dt).abs() > 1e-9 * cfg.dt {
            return Err(HarnessError::InvalidStudy(format!(
                "dt level {} is not a multiple of the finest level {fine_dt}",
                cfg.dt
            )));
        }
        let path = BrownianPath::new(cfg.seed, 0, fine_dt, substeps as u64)
            .map_err(|e| HarnessError::InvalidStudy(e.to_string()))?;
        let steps = exp.steps();
        if steps % COMPARISONS != 0 {
            return Err(HarnessError::InvalidStudy(format!(
                "step count {steps} at level {level} is not a multiple of {COMPARISONS}"
            )));
        }
        let initial = match axis {
            Axis::K => exp.stepper.truncate_state(&exp.initial),
            _ => exp.initial.clone(),
        };
        let opts = RunOptions {
            output_every: steps / COMPARISONS,
            diag_every: 0,
            diagnostics: None,
        };
        let traj = run(&exp.stepper, &initial, &path, 0, steps, &opts)?;
        runs.push(match traj.status {
            TerminalStatus::Completed => Ok(traj.snapshots),
            st => Err(format!("level {level}: {st:?} at t = {:?}", traj.failure_time)),
        });
    }
    let s = config.sobolev_index;
    let mut differences = Vec::new();
    let mut failures = Vec::new();
    for (i, pair) in runs.windows(2).enumerate() {
        match (&pair[0], &pair[1]) {
            (Ok(a), Ok(b)) => {
                let mut sup: f64 = 0.0;
                for (x, y) in a.iter().zip(b) {
                    sup = sup.max(state_distance(x, y, s)?);
                }
                differences.push(sup);
            }
            _ => {
                failures.push(format!("levels {} and {} not comparable", levels[i], levels[i + 1]));
                differences.push(f64::NAN);
            }
        }
    }
    for r in &runs {
        if let Err(e) = r {
            failures.push(e.clone());
        }
    }
    let hs: Vec<f64> = levels[..levels.len() - 1].iter().map(|&l| h_of(axis, l)).collect();
    let observed_order = if failures.is_empty() { fit_order(&hs, &differences) } else { None };
    Ok(RefinementReport {
        axis,
        levels: levels.to_vec(),
        sobolev_index: s,
        differences,
        observed_order,
        failures,
        note: "pathwise Cauchy differences on a fixed noise path, a computable surrogate for convergence in probability".into(),
    })
}

/// Which field the twin run perturbs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    #[default]
    Velocity,
    Density,
    Chemical,
}

impl std::str::FromStr for Perturbation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "velocity" | "u" => Ok(Perturbation::Velocity),
            "density" | "n" => Ok(Perturbation::Density),
            "chemical" | "c" => Ok(Perturbation::Chemical),
            _ => Err(format!("unknown perturbation {s:?}")),
        }
    }
}

/// Two trajectories from nearby data driven by the same noise path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinRunReport {
    pub delta: f64,
    pub perturbation: Perturbation,
    pub times: Vec<f64>,
    /// `|dn|_{H^1} + |dc|_{H^2} + |du|_{H^1}` at each time.
    pub divergence: Vec<f64>,
    /// Fitted `Lambda` in `d(t) ~ d(0) exp(Lambda t)`; `None` when `d` vanishes.
    pub rate: Option<f64>,
    pub noise_checksums: [u32; 2],
    pub bit_identical: bool,
    pub status: [TerminalStatus; 2],
}

impl TwinRunReport {
    /// `d(t) <= factor * delta * exp(Lambda t)` at every recorded time.
    pub fn within_envelope(&self, factor: f64) -> bool {
        let rate = self.rate.unwrap_or(0.0);
        self.times
            .iter()
            .zip(&self.divergence)
            .all(|(t, d)| *d <= factor * self.delta * (rate * t).exp())
    }
}

/// Twin divergence `|dn|_{H^1} + |dc|_{H^2} + |du|_{H^1}`.
pub fn twin_distance(a: &SystemState, b: &SystemState) -> Result<f64, SpectralError> {
    Ok(bessel_norm(&a.n.sub(&b.n)?, 1.into())?
        + bessel_norm(&a.c.sub(&b.c)?, 2.into())?
        + bessel_norm(&a.u.sub(&b.u)?, 1.into())?)
}

fn state_bits(s: &SystemState) -> Vec<u64> {
    let mut out = Vec::new();
    for f in [&s.n, &s.c, s.u.component(0), s.u.component(1), s.u.component(2)] {
        out.extend(f.spectral().iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]));
    }
    out
}

fn perturb(exp: &Experiment, delta: f64, mode: Perturbation) -> SystemState {
    let mut s = exp.initial.clone();
    if delta == 0.0 {
        return s;
    }
    let g = &exp.grid;
    let seed = exp.config.seed ^ 0x7477_696e;
    let unit_scalar = |h: f64| {
        let f = crate::initial::filtered_noise(g, seed, crate::initial::resolved_mode(g), 4.0);
        let norm = bessel_norm(&f, SobolevIndex::new(h).expect("finite")).expect("finite");
        f.scale(delta / norm)
    };
    match mode {
        Perturbation::Velocity => {
            let du = unit_h1_velocity(g, seed).scale(delta);
            s.u = s.u.add(&du).expect("same grid");
        }
        Perturbation::Density => s.n = s.n.add(&unit_scalar(1.0)).expect("same grid"),
        Perturbation::Chemical => s.c = s.c.add(&unit_scalar(2.0)).expect("same grid"),
    }
    s
}

/// Runs the base and perturbed trajectories in lockstep on path 0, recording the
/// divergence every `every` steps. Each twin draws its own increments.
pub fn twin_run(exp: &Experiment, delta: f64, mode: Perturbation, every: u64) -> Result<TwinRunReport, HarnessError> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(HarnessError::InvalidStudy(format!("delta must be nonnegative, got {delta}")));
    }
    let every = every.max(1);
    let path = exp.path(0);
    let modes = exp.stepper.noise().spec().modes;
    let noisy = !exp.stepper.noise().is_off();
    let mut states = [exp.initial.clone(), perturb(exp, delta, mode)];
    let mut crcs = [crc32fast::Hasher::new(), crc32fast::Hasher::new()];
    let mut status = [TerminalStatus::Completed; 2];
    let mut times = vec![0.0];
    let mut divergence = vec![twin_distance(&states[0], &states[1])?];
    let mut identical = state_bits(&states[0]) == state_bits(&states[1]);
    for s in 0..exp.steps() {
        for k in 0..2 {
            let dw = if noisy {
                let inc = path.increment(s, modes).values;
                for v in &inc {
                    crcs[k].update(&v.to_bits().to_le_bytes());
                }
                inc
            } else {
                Vec::new()
            };
            match exp.stepper.step(&states[k], s, &dw) {
                Ok(next) => states[k] = next,
                Err(StepError::NonFinite { status: st, .. }) => status[k] = st,
                Err(e) => return Err(e.into()),
            }
        }
        if status.iter().any(|s| *s != TerminalStatus::Completed) {
            break;
        }
        identical &= state_bits(&states[0]) == state_bits(&states[1]);
        if (s + 1) % every == 0 {
            times.push(states[0].t);
            divergence.push(twin_distance(&states[0], &states[1])?);
        }
    }
    let rate = if divergence.iter().all(|d| *d > 0.0) {
        let logs: Vec<f64> = divergence.iter().map(|d| d.ln()).collect();
        linear_slope(&times, &logs)
    } else {
        None
    };
    let [a, b] = crcs;
    Ok(TwinRunReport {
        delta,
        perturbation: mode,
        times,
        divergence,
        rate,
        noise_checksums: [a.finalize(), b.finalize()],
        bit_identical: identical,
        status,
    })
}

fn linear_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let m = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint grid {found:?} does not match {expected:?}")]
    GridMismatch { expected: [usize; 3], found: [usize; 3] },
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"STCN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable simulation state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: SystemState,
    /// Steps taken so far; the next step draws increment `step`.
    pub step: u64,
    pub dt: f64,
    pub variant: Variant,
    pub seed: u64,
    pub path_id: u64,
}

impl Checkpoint {
    pub fn from_trajectory(traj: &Trajectory, exp: &Experiment, path_id: u64) -> Self {
        Checkpoint {
            state: traj.final_state.clone(),
            step: traj.final_step,
            dt: exp.config.dt,
            variant: exp.config.variant(),
            seed: exp.config.seed,
            path_id,
        }
    }
}

/// Layout (little-endian): magic, version u32, dims 3 x u32, lengths 3 x f64, t, step u64,
/// dt, variant code u32, eps, k, R, annulus u8, seed u64, path_id u64, then the spectral
/// coefficients of n, c, u1, u2, u3 as interleaved (re, im) f64, then CRC-32 of all
/// preceding bytes.
pub fn checkpoint_save(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(ck);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let g = ck.state.grid();
    let mut b = Vec::with_capacity(128 + 5 * 16 * g.spectral_len());
    b.extend_from_slice(&CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in g.dims() {
        b.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for l in g.lengths() {
        b.extend_from_slice(&l.to_le_bytes());
    }
    b.extend_from_slice(&ck.state.t.to_le_bytes());
    b.extend_from_slice(&ck.step.to_le_bytes());
    b.extend_from_slice(&ck.dt.to_le_bytes());
    let (code, eps, k, r, ann) = match ck.variant {
        Variant::Exact => (0u32, 0.0, 0.0, 0.0, false),
        Variant::Mollified { eps } => (1, eps, 0.0, 0.0, false),
        Variant::Truncated {
            eps,
            k,
            radius,
            annulus,
        } => (2, eps, k, radius, annulus),
    };
    b.extend_from_slice(&code.to_le_bytes());
    for v in [eps, k, r] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.push(ann as u8);
    b.extend_from_slice(&ck.seed.to_le_bytes());
    b.extend_from_slice(&ck.path_id.to_le_bytes());
    let s = &ck.state;
    for f in [&s.n, &s.c, s.u.component(0), s.u.component(1), s.u.component(2)] {
        for c in f.spectral() {
            b.extend_from_slice(&c.re.to_le_bytes());
            b.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&b);
    b.extend_from_slice(&crc.to_le_bytes());
    b
}

/// Loads a checkpoint; with `expected` set, the grid shape must match.
pub fn checkpoint_load(path: &Path, expected: Option<&TorusGrid>) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes, expected)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos + n;
        if end > self.data.len() {
            return Err(CheckpointError::Corrupt("unexpected end of file".into()));
        }
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.u64()?))
    }
}

pub fn decode_checkpoint(bytes: &[u8], expected: Option<&TorusGrid>) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Corrupt("file too short for a header".into()));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut cur = Cursor { data: bytes, pos: 4 };
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let dims = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
    let lengths = [cur.f64()?, cur.f64()?, cur.f64()?];
    if let Some(g) = expected {
        if g.dims() != dims || g.lengths() != lengths {
            return Err(CheckpointError::GridMismatch {
                expected: g.dims(),
                found: dims,
            });
        }
    }
    let grid = TorusGrid::new(dims, lengths).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let payload_len = 5 * 16 * grid.spectral_len();
    let header_len = 4 + 4 + 12 + 24 + 8 + 8 + 8 + 4 + 24 + 1 + 8 + 8;
    if bytes.len() != header_len + payload_len + 4 {
        return Err(CheckpointError::Corrupt(format!(
            "expected {} bytes, found {}",
            header_len + payload_len + 4,
            bytes.len()
        )));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }
    let t = cur.f64()?;
    let step = cur.u64()?;
    let dt = cur.f64()?;
    let code = cur.u32()?;
    let (eps, k, radius) = (cur.f64()?, cur.f64()?, cur.f64()?);
    let annulus = cur.take(1)?[0] != 0;
    let variant = match code {
        0 => Variant::Exact,
        1 => Variant::Mollified { eps },
        2 => Variant::Truncated {
            eps,
            k,
            radius,
            annulus,
        },
        other => return Err(CheckpointError::Corrupt(format!("unknown variant code {other}"))),
    };
    let seed = cur.u64()?;
    let path_id = cur.u64()?;
    let mut field = || -> Result<ScalarField, CheckpointError> {
        let mut coeffs = Vec::with_capacity(grid.spectral_len());
        for _ in 0..grid.spectral_len() {
            coeffs.push(Complex64::new(cur.f64()?, cur.f64()?));
        }
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(CheckpointError::Corrupt("non-finite coefficient".into()));
        }
        ScalarField::from_spectral(grid.clone(), coeffs).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    };
    let n = field()?;
    let c = field()?;
    let u = [field()?, field()?, field()?];
    Ok(Checkpoint {
        state: SystemState {
            n,
            c,
            u: VelocityField::from_projected(u),
            t,
        },
        step,
        dt,
        variant,
        seed,
        path_id,
    })
}

/// Continues a checkpointed path to `end_step` with the experiment's stepper.
pub fn resume(exp: &Experiment, ck: &Checkpoint, end_step: u64, opts: &RunOptions) -> Result<Trajectory, HarnessError> {
    if ck.dt != exp.config.dt || ck.variant != exp.config.variant() || ck.seed != exp.config.seed {
        return Err(HarnessError::InvalidStudy(
            "checkpoint scheme (dt, variant, seed) differs from the configuration".into(),
        ));
    }
    if !ck.state.grid().same_shape(&exp.grid) {
        return Err(SpectralError::GridMismatch.into());
    }
    let path = exp.path(ck.path_id);
    Ok(run(&exp.stepper, &ck.state, &path, ck.step, end_step, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            grid: crate::config::GridSpec::Cubic(8),
            t_final: 0.04,
            dt: 0.01,
            ..SimConfig::default()
        }
    }

    #[test]
    fn moments_of_constant_sample() {
        let m = moment(&[2.0, 2.0, 2.0], 2.0);
        assert_eq!((m.mean, m.std_error), (4.0, 0.0));
    }

    #[test]
    fn ensemble_is_deterministic_and_order_free() {
        let exp = small().build().unwrap();
        let a = ensemble_run(&exp, 3, &[1.0, 2.0]).unwrap();
        let b = ensemble_run(&exp, 3, &[1.0, 2.0]).unwrap();
        assert_eq!(a, b);
        let mut paths = a.paths.clone();
        paths.reverse();
        assert_eq!(EnsembleReport::reduce(a.eps, paths, &[1.0, 2.0]).unwrap(), a);
        assert!(a.int_g[0].std_error > 0.0);
    }

    #[test]
    fn noise_off_paths_coincide() {
        let mut cfg = small();
        cfg.noise = crate::noise::NoiseSpec::off();
        let r = ensemble_run(&cfg.build().unwrap(), 3, &[1.0]).unwrap();
        assert_eq!(r.sup_f[0].std_error, 0.0);
        assert_eq!(r.int_g[0].std_error, 0.0);
    }

    #[test]
    fn twin_zero_delta_is_identical() {
        let exp = small().build().unwrap();
        let r = twin_run(&exp, 0.0, Perturbation::Velocity, 1).unwrap();
        assert!(r.bit_identical);
        assert!(r.divergence.iter().all(|d| *d == 0.0));
        assert_eq!(r.noise_checksums[0], r.noise_checksums[1]);
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let cfg = SimConfig {
            variant: VariantKind::Truncated,
            ..small()
        };
        let exp = cfg.build().unwrap();
        let traj = run(&exp.stepper, &exp.initial, &exp.path(2), 0, 2, &RunOptions::final_only()).unwrap();
        let ck = Checkpoint::from_trajectory(&traj, &exp, 2);
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes, Some(&exp.grid)).unwrap();
        assert_eq!(state_bits(&back.state), state_bits(&ck.state));
        assert_eq!((back.step, back.variant, back.path_id), (2, ck.variant, 2));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() / 2], None),
            Err(CheckpointError::Corrupt(_))
        ));
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped, None), Err(CheckpointError::Corrupt(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic, None), Err(CheckpointError::BadMagic)));
        let other = TorusGrid::cubic(16, 2.0 * std::f64::consts::PI).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes, Some(&other)),
            Err(CheckpointError::GridMismatch { .. })
        ));
    }

    #[test]
    fn order_fit() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|h: &f64| 3.0 * h * h).collect();
        assert!((fit_order(&x, &y).unwrap() - 2.0).abs() < 1e-12);
    }
}
