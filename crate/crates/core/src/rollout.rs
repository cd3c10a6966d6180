//! Forward simulation of learned latent dynamics against recorded jumps.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autoencoder::Derivative;
use crate::data::{Phase, ProcessedTrajectory};
use crate::library::Library;
use crate::ode::{integrate_intervals, IntegratorConfig};
use crate::pipeline::MultiPhaseModel;
use crate::sindy::predict_with;
use crate::{Error, Result};

/// Allowed relative mismatch between the recording interval and the
/// integration output interval.
const RATE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Output rate in Hz; must match the recording rate.
    pub step_rate: f64,
    /// Steps between re-encodings of the recorded state; 0 disables resets.
    pub reset_interval: usize,
    pub integrator: IntegratorConfig,
    /// Truncates the horizon to this many steps.
    pub max_steps: Option<usize>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            step_rate: 500.0,
            reset_interval: 0,
            integrator: IntegratorConfig::default(),
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub times: Vec<f64>,
    /// `(H + 1) × 2l`, rows `[ξ, ξ̇]`. Empty for baselines without a latent
    /// state.
    pub latent_pred: DMatrix<f64>,
    pub q_pred: DMatrix<f64>,
    pub q_true: DMatrix<f64>,
    pub columns: Vec<String>,
    /// Per-column root-mean-square error against `q_true`.
    pub rmse: Vec<f64>,
    /// Phase used on each of the `H` intervals.
    pub schedule: Vec<Phase>,
    pub reset_indices: Vec<usize>,
    /// Latent state `[ξ, ξ̇]` each segment started from, one row per reset.
    pub reset_states: DMatrix<f64>,
}

pub fn configuration_columns(m: usize) -> Vec<String> {
    let mut c: Vec<String> = (0..m).map(|i| format!("joint_{i}")).collect();
    c.extend(["base_x", "base_y", "base_z", "base_roll", "base_pitch", "base_yaw"].map(String::from));
    c
}

pub fn rmse_columns(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<f64> {
    let n = pred.nrows().max(1) as f64;
    (0..pred.ncols())
        .map(|c| ((pred.column(c) - truth.column(c)).norm_squared() / n).sqrt())
        .collect()
}

impl RolloutResult {
    pub fn horizon(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn mean_rmse(&self) -> f64 {
        if self.rmse.is_empty() {
            return 0.0;
        }
        self.rmse.iter().sum::<f64>() / self.rmse.len() as f64
    }

    /// Root-mean-square error over columns at each output time.
    pub fn error_series(&self) -> Vec<f64> {
        let n = self.q_pred.ncols().max(1) as f64;
        (0..self.q_pred.nrows())
            .map(|r| ((self.q_pred.row(r) - self.q_true.row(r)).norm_squared() / n).sqrt())
            .collect()
    }

    /// Delimited table: `t`, predicted columns, recorded columns, error.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in &self.columns {
            write!(out, ",{c}_pred").unwrap();
        }
        for c in &self.columns {
            write!(out, ",{c}_true").unwrap();
        }
        out.push_str(",error\n");
        let err = self.error_series();
        for (r, t) in self.times.iter().enumerate() {
            write!(out, "{t:.6}").unwrap();
            for v in self.q_pred.row(r).iter().chain(self.q_true.row(r).iter()) {
                write!(out, ",{v:e}").unwrap();
            }
            writeln!(out, ",{:e}", err[r]).unwrap();
        }
        out
    }
}

/// Per-phase library and coefficients, built once per rollout.
struct CompiledModel<'a> {
    phases: Vec<(Phase, Library, &'a DMatrix<f64>)>,
    l: usize,
}

impl<'a> CompiledModel<'a> {
    fn new(model: &'a MultiPhaseModel, schedule: &[Phase]) -> Result<Self> {
        let l = model.autoencoder.latent_dim();
        let mut phases = Vec::new();
        for &p in schedule {
            if phases.iter().any(|(q, _, _)| *q == p) {
                continue;
            }
            let pm = model.phase(p).ok_or(Error::MissingPhaseModel(p))?;
            phases.push((p, pm.coefficients.library.library(l)?, &pm.coefficients.xi));
        }
        Ok(Self { phases, l })
    }

    fn rhs(&self, phase: Phase, y: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
        let l = self.l;
        let (_, lib, xi) = self.phases.iter().find(|(p, _, _)| *p == phase).ok_or(Error::MissingPhaseModel(phase))?;
        let pos = y.rows(0, l).into_owned();
        let vel = y.rows(l, l).into_owned();
        let acc = predict_with(lib, xi, &pos, &vel, nu)?;
        let mut dy = DVector::zeros(2 * l);
        dy.rows_mut(0, l).copy_from(&vel);
        dy.rows_mut(l, l).copy_from(&acc);
        Ok(dy)
    }
}

/// Integrates the latent system from `(ξ₀, ξ̇₀)` with inputs held constant
/// over each interval. `nu` has one row per interval, `times` one more
/// entry than `nu` has rows. Returns `[ξ, ξ̇]` at every time.
pub fn integrate(
    model: &MultiPhaseModel,
    xi0: &DVector<f64>,
    dxi0: &DVector<f64>,
    nu: &DMatrix<f64>,
    schedule: &[Phase],
    times: &[f64],
    config: &IntegratorConfig,
) -> Result<DMatrix<f64>> {
    let l = model.autoencoder.latent_dim();
    if xi0.len() != l || dxi0.len() != l {
        return Err(Error::shape("initial latent state", l, xi0.len().max(dxi0.len())));
    }
    let steps = times.len().saturating_sub(1);
    if schedule.len() < steps || nu.nrows() < steps {
        return Err(Error::shape(
            "rollout schedule and inputs",
            steps,
            schedule.len().min(nu.nrows()),
        ));
    }
    if nu.ncols() != l {
        return Err(Error::shape("latent inputs", l, nu.ncols()));
    }
    let compiled = CompiledModel::new(model, &schedule[..steps])?;
    let nus: Vec<DVector<f64>> = (0..steps).map(|k| nu.row(k).transpose()).collect();
    let mut y0 = DVector::zeros(2 * l);
    y0.rows_mut(0, l).copy_from(xi0);
    y0.rows_mut(l, l).copy_from(dxi0);
    let mut f = |k: usize, _t: f64, y: &DVector<f64>| compiled.rhs(schedule[k], y, &nus[k]);
    let states = integrate_intervals(&mut f, times, &y0, config)?;
    Ok(DMatrix::from_fn(states.len(), 2 * l, |r, c| states[r][c]))
}

pub(crate) fn check_rate(traj: &ProcessedTrajectory, config: &RolloutConfig) -> Result<()> {
    if !(config.step_rate > 0.0) {
        return Err(Error::Config(format!("step rate must be positive, got {}", config.step_rate)));
    }
    let dt = traj.raw.mean_dt();
    let expected = 1.0 / config.step_rate;
    if traj.len() > 1 && ((dt - expected) / expected).abs() > RATE_TOLERANCE {
        return Err(Error::Config(format!(
            "{}: recording interval {dt} s does not match the {} Hz integration rate",
            traj.raw.name, config.step_rate
        )));
    }
    Ok(())
}

pub(crate) fn horizon(traj: &ProcessedTrajectory, config: &RolloutConfig) -> usize {
    let h = traj.len().saturating_sub(1);
    config.max_steps.map_or(h, |m| m.min(h))
}

fn latent_inputs(model: &MultiPhaseModel, traj: &ProcessedTrajectory, steps: usize) -> Result<DMatrix<f64>> {
    let n = model.autoencoder.full_dim();
    if traj.u.ncols() != n || traj.raw.q.ncols() != n {
        return Err(Error::shape("trajectory inputs", n, traj.u.ncols()));
    }
    let t = model.autoencoder.input_transform()?;
    Ok(traj.u.rows(0, steps) * t.transpose())
}

fn encode_state(model: &MultiPhaseModel, traj: &ProcessedTrajectory, k: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    let ae = &model.autoencoder;
    Ok((
        ae.encode(&traj.q_row(k), Derivative::Position)?,
        ae.encode(&traj.dq_row(k), Derivative::Velocity)?,
    ))
}

fn assemble(
    model: &MultiPhaseModel,
    traj: &ProcessedTrajectory,
    steps: usize,
    latent: DMatrix<f64>,
    reset_indices: Vec<usize>,
    reset_states: DMatrix<f64>,
) -> RolloutResult {
    let l = model.autoencoder.latent_dim();
    let q_pred = model.autoencoder.decode_rows(&latent.columns(0, l).into_owned(), Derivative::Position);
    let q_true = traj.raw.q.rows(0, steps + 1).into_owned();
    let rmse = rmse_columns(&q_pred, &q_true);
    RolloutResult {
        times: traj.raw.timestamps[..=steps].to_vec(),
        latent_pred: latent,
        q_pred,
        q_true,
        columns: configuration_columns(traj.raw.joints()),
        rmse,
        schedule: traj.phases[..steps].to_vec(),
        reset_indices,
        reset_states,
    }
}

/// Encodes the initial recorded state and integrates the whole horizon.
pub fn rollout_full(model: &MultiPhaseModel, traj: &ProcessedTrajectory, config: &RolloutConfig) -> Result<RolloutResult> {
    check_rate(traj, config)?;
    let steps = horizon(traj, config);
    let nu = latent_inputs(model, traj, steps)?;
    let (xi0, dxi0) = encode_state(model, traj, 0)?;
    let times = &traj.raw.timestamps[..=steps];
    let latent = integrate(model, &xi0, &dxi0, &nu, &traj.phases, times, &config.integrator)?;
    let start = latent.rows(0, 1).into_owned();
    Ok(assemble(model, traj, steps, latent, vec![0], start))
}

/// As [`rollout_full`], but the latent state is re-encoded from the
/// recording every `reset_interval` steps. Output rows hold the prediction
/// arriving at each time; the re-encoded states are in `reset_states`.
pub fn rollout_with_reset(
    model: &MultiPhaseModel,
    traj: &ProcessedTrajectory,
    config: &RolloutConfig,
) -> Result<RolloutResult> {
    if config.reset_interval == 0 {
        return rollout_full(model, traj, config);
    }
    check_rate(traj, config)?;
    let steps = horizon(traj, config);
    let nu = latent_inputs(model, traj, steps)?;
    let l = model.autoencoder.latent_dim();
    let mut latent = DMatrix::zeros(steps + 1, 2 * l);
    let mut resets = Vec::new();
    let mut reset_rows = Vec::new();
    let mut start = 0;
    loop {
        let (xi, dxi) = encode_state(model, traj, start)?;
        let end = (start + config.reset_interval).min(steps);
        let seg = integrate(
            model,
            &xi,
            &dxi,
            &nu.rows(start, end - start).into_owned(),
            &traj.phases[start..end],
            &traj.raw.timestamps[start..=end],
            &config.integrator,
        )?;
        if start == 0 {
            latent.row_mut(0).copy_from(&seg.row(0));
        }
        latent.rows_mut(start + 1, end - start).copy_from(&seg.rows(1, end - start));
        resets.push(start);
        reset_rows.push(seg.row(0).into_owned());
        if end >= steps {
            break;
        }
        start = end;
    }
    let reset_states = DMatrix::from_rows(&reset_rows);
    Ok(assemble(model, traj, steps, latent, resets, reset_states))
}

/// Dispatches on `config.reset_interval`.
pub fn rollout(model: &MultiPhaseModel, traj: &ProcessedTrajectory, config: &RolloutConfig) -> Result<RolloutResult> {
    if config.reset_interval > 0 {
        rollout_with_reset(model, traj, config)
    } else {
        rollout_full(model, traj, config)
    }
}

/// RMSE table over the union of predicted columns, plus per-timestep error
/// series.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
    pub series: Vec<(String, Vec<f64>)>,
    pub times: Vec<f64>,
}

pub fn compare_models(results: &[(&str, &RolloutResult)]) -> Comparison {
    let mut columns: Vec<String> = Vec::new();
    for (_, r) in results {
        for c in &r.columns {
            if !columns.contains(c) {
                columns.push(c.clone());
            }
        }
    }
    let rows = results
        .iter()
        .map(|(name, r)| {
            let cells = columns
                .iter()
                .map(|c| r.columns.iter().position(|x| x == c).map(|i| r.rmse[i]))
                .collect();
            (name.to_string(), cells)
        })
        .collect();
    let series = results.iter().map(|(name, r)| (name.to_string(), r.error_series())).collect();
    let times = results
        .iter()
        .map(|(_, r)| &r.times)
        .max_by_key(|t| t.len())
        .cloned()
        .unwrap_or_default();
    Comparison {
        columns,
        rows,
        series,
        times,
    }
}

impl Comparison {
    pub fn table_csv(&self) -> String {
        let mut out = String::from("model");
        for c in &self.columns {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (name, cells) in &self.rows {
            out.push_str(name);
            for c in cells {
                match c {
                    Some(v) => write!(out, ",{v:e}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from("t");
        for (name, _) in &self.series {
            write!(out, ",{name}").unwrap();
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t:.6}").unwrap();
            for (_, s) in &self.series {
                match s.get(k) {
                    Some(v) => write!(out, ",{v:e}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}
