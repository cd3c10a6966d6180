//! Actuated spring-loaded inverted pendulum, used as a CoM prediction
//! baseline.
//!
//! In stance the body is pushed along the leg `l = b − p` by a linear spring
//! acting on the compression `|‖l₀‖ − ‖l‖|`, plus gravity and a driving
//! acceleration `u`. In flight only gravity acts.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::{Phase, ProcessedTrajectory};
use crate::ode::{integrate_intervals, IntegratorConfig};
use crate::rollout::{check_rate, horizon, rmse_columns, RolloutConfig, RolloutResult};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AslipParams {
    /// Spring constant, N/m.
    pub k_s: f64,
    /// Body mass, kg.
    pub m: f64,
    /// Rest leg vector, m.
    #[serde(with = "crate::serde_mat::vector3")]
    pub l0: Vector3<f64>,
    pub g: f64,
}

impl Default for AslipParams {
    fn default() -> Self {
        Self {
            k_s: 2000.0,
            m: 12.0,
            l0: Vector3::new(0.0, 0.0, 0.3),
            g: 9.81,
        }
    }
}

impl AslipParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("spring constant", self.k_s),
            ("mass", self.m),
            ("rest length", self.l0.norm()),
            ("gravity", self.g),
        ];
        for (name, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("aSLIP {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn rest_length(&self) -> f64 {
        self.l0.norm()
    }

    fn gravity(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.g)
    }

    /// Spring acceleration for leg vector `l`.
    pub fn spring_accel(&self, l: &Vector3<f64>) -> Result<Vector3<f64>> {
        let len = l.norm();
        if len == 0.0 {
            return Err(Error::ZeroLegLength);
        }
        Ok(l * (self.k_s * (self.rest_length() - len).abs() / (self.m * len)))
    }

    /// Mechanical energy per the compressed-spring potential; `foot` is
    /// ignored in flight.
    pub fn energy(&self, state: &AslipState) -> f64 {
        let kinetic = 0.5 * self.m * state.db.norm_squared();
        let potential = self.m * self.g * state.b.z;
        let spring = match state.phase {
            AslipPhase::Contact => 0.5 * self.k_s * (self.rest_length() - (state.b - state.foot).norm()).powi(2),
            AslipPhase::Flight => 0.0,
        };
        kinetic + potential + spring
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AslipPhase {
    Contact,
    Flight,
}

impl From<Phase> for AslipPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::Flight => AslipPhase::Flight,
            Phase::Contact | Phase::PartialContact => AslipPhase::Contact,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AslipState {
    pub b: Vector3<f64>,
    pub db: Vector3<f64>,
    /// Stance foot position.
    pub foot: Vector3<f64>,
    pub phase: AslipPhase,
}

pub fn aslip_accel(state: &AslipState, params: &AslipParams, u: &Vector3<f64>) -> Result<Vector3<f64>> {
    match state.phase {
        AslipPhase::Flight => Ok(params.gravity()),
        AslipPhase::Contact => Ok(params.spring_accel(&(state.b - state.foot))? + params.gravity() + u),
    }
}

/// Driving acceleration supplied to the stance dynamics.
pub trait AslipInput {
    fn at(&self, interval: usize, t: f64, b: &Vector3<f64>, db: &Vector3<f64>) -> Vector3<f64>;
}

/// Zero-order hold: one value per output interval.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldInput(pub Vec<Vector3<f64>>);

impl AslipInput for HeldInput {
    fn at(&self, interval: usize, _t: f64, _b: &Vector3<f64>, _db: &Vector3<f64>) -> Vector3<f64> {
        self.0.get(interval).copied().unwrap_or_else(Vector3::zeros)
    }
}

impl<F> AslipInput for F
where
    F: Fn(usize, f64, &Vector3<f64>, &Vector3<f64>) -> Vector3<f64>,
{
    fn at(&self, interval: usize, t: f64, b: &Vector3<f64>, db: &Vector3<f64>) -> Vector3<f64> {
        self(interval, t, b, db)
    }
}

/// Phase and stance foot for one output interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    pub phase: AslipPhase,
    pub foot: Vector3<f64>,
}

impl ScheduleEntry {
    pub fn flight() -> Self {
        Self {
            phase: AslipPhase::Flight,
            foot: Vector3::zeros(),
        }
    }

    pub fn contact(foot: Vector3<f64>) -> Self {
        Self {
            phase: AslipPhase::Contact,
            foot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AslipTrajectory {
    pub times: Vec<f64>,
    /// `(H + 1) × 3`
    pub b: DMatrix<f64>,
    pub db: DMatrix<f64>,
}

fn vec3(y: &DVector<f64>, offset: usize) -> Vector3<f64> {
    Vector3::new(y[offset], y[offset + 1], y[offset + 2])
}

/// Integrates the model over `times`, one schedule entry per interval.
pub fn simulate_aslip<I: AslipInput + ?Sized>(
    params: &AslipParams,
    b0: &Vector3<f64>,
    db0: &Vector3<f64>,
    input: &I,
    schedule: &[ScheduleEntry],
    times: &[f64],
    config: &IntegratorConfig,
) -> Result<AslipTrajectory> {
    params.validate()?;
    let steps = times.len().saturating_sub(1);
    if schedule.len() < steps {
        return Err(Error::shape("aSLIP contact schedule", steps, schedule.len()));
    }
    let y0 = DVector::from_iterator(6, b0.iter().chain(db0.iter()).copied());
    let mut f = |k: usize, t: f64, y: &DVector<f64>| {
        let e = schedule[k];
        let state = AslipState {
            b: vec3(y, 0),
            db: vec3(y, 3),
            foot: e.foot,
            phase: e.phase,
        };
        let u = match e.phase {
            AslipPhase::Contact => input.at(k, t, &state.b, &state.db),
            AslipPhase::Flight => Vector3::zeros(),
        };
        let a = aslip_accel(&state, params, &u)?;
        Ok(DVector::from_iterator(6, state.db.iter().chain(a.iter()).copied()))
    };
    let ys = integrate_intervals(&mut f, times, &y0, config)?;
    Ok(AslipTrajectory {
        times: times.to_vec(),
        b: DMatrix::from_fn(ys.len(), 3, |r, c| ys[r][c]),
        db: DMatrix::from_fn(ys.len(), 3, |r, c| ys[r][3 + c]),
    })
}

/// Stance foot for each sample: the mean over a contact segment of the
/// positions of the feet touching the ground, or a point one rest length
/// below the base at segment start when no foot positions were recorded.
pub fn stance_feet(traj: &ProcessedTrajectory, params: &AslipParams) -> Vec<Vector3<f64>> {
    let raw = &traj.raw;
    let mut feet = vec![Vector3::zeros(); traj.len()];
    for seg in &traj.segments {
        if AslipPhase::from(seg.phase) == AslipPhase::Flight {
            continue;
        }
        let foot = match &raw.foot_positions {
            Some(fp) => {
                let mut sum = Vector3::zeros();
                let mut n = 0usize;
                for k in seg.start..=seg.end {
                    for i in (0..4).filter(|&i| raw.contact[k].foot(i)) {
                        sum += Vector3::new(fp[(k, 3 * i)], fp[(k, 3 * i + 1)], fp[(k, 3 * i + 2)]);
                        n += 1;
                    }
                }
                sum / n.max(1) as f64
            }
            None => raw.base_position(seg.start) - Vector3::new(0.0, 0.0, params.rest_length()),
        };
        for f in &mut feet[seg.start..=seg.end] {
            *f = foot;
        }
    }
    feet
}

/// Driving acceleration from the recorded net ground force.
pub fn recorded_input(traj: &ProcessedTrajectory, params: &AslipParams) -> HeldInput {
    let m = traj.raw.joints();
    HeldInput(
        (0..traj.len())
            .map(|k| Vector3::new(traj.u[(k, m)], traj.u[(k, m + 1)], traj.u[(k, m + 2)]) / params.m)
            .collect(),
    )
}

pub const BASELINE_COLUMNS: [&str; 3] = ["base_x", "base_y", "base_z"];

/// Predicts the base position of a recorded jump with the aSLIP model,
/// starting from the recorded base state and re-initialising every
/// `reset_interval` steps when that is non-zero.
pub fn aslip_baseline(
    params: &AslipParams,
    traj: &ProcessedTrajectory,
    config: &RolloutConfig,
) -> Result<RolloutResult> {
    params.validate()?;
    check_rate(traj, config)?;
    let steps = horizon(traj, config);
    let raw = &traj.raw;
    let m = raw.joints();
    let feet = stance_feet(traj, params);
    let schedule: Vec<ScheduleEntry> = (0..steps)
        .map(|k| ScheduleEntry {
            phase: traj.phases[k].into(),
            foot: feet[k],
        })
        .collect();
    let input = recorded_input(traj, params);
    let interval = if config.reset_interval == 0 { steps.max(1) } else { config.reset_interval };

    let mut q_pred = DMatrix::zeros(steps + 1, 3);
    q_pred.row_mut(0).copy_from(&raw.base_position(0).transpose());
    let mut resets = Vec::new();
    let mut reset_rows = Vec::new();
    let mut start = 0;
    while start < steps {
        let end = (start + interval).min(steps);
        let b0 = raw.base_position(start);
        let db0 = Vector3::new(raw.dq[(start, m)], raw.dq[(start, m + 1)], raw.dq[(start, m + 2)]);
        let shifted = |k: usize, t: f64, b: &Vector3<f64>, db: &Vector3<f64>| input.at(start + k, t, b, db);
        let seg = simulate_aslip(
            params,
            &b0,
            &db0,
            &shifted,
            &schedule[start..end],
            &raw.timestamps[start..=end],
            &config.integrator,
        )?;
        q_pred.rows_mut(start + 1, end - start).copy_from(&seg.b.rows(1, end - start));
        resets.push(start);
        reset_rows.push(DVector::from_iterator(6, b0.iter().chain(db0.iter()).copied()).transpose());
        start = end;
    }
    if resets.is_empty() {
        resets.push(0);
        reset_rows.push(DVector::zeros(6).transpose());
    }
    let q_true = DMatrix::from_fn(steps + 1, 3, |r, c| raw.q[(r, m + c)]);
    let rmse = rmse_columns(&q_pred, &q_true);
    Ok(RolloutResult {
        times: raw.timestamps[..=steps].to_vec(),
        latent_pred: DMatrix::zeros(steps + 1, 0),
        q_pred,
        q_true,
        columns: BASELINE_COLUMNS.map(String::from).to_vec(),
        rmse,
        schedule: traj.phases[..steps].to_vec(),
        reset_indices: resets,
        reset_states: DMatrix::from_rows(&reset_rows),
    })
}
