//! Explicit integrators for first-order systems `ẏ = f(t, y)`, advanced one
//! output interval at a time.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Dormand–Prince 5(4) with error control.
    Adaptive,
    /// Classic fourth-order Runge–Kutta with a fixed number of substeps per
    /// interval; bit-reproducible.
    FixedRk4,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Method::Adaptive),
            "fixed_rk4" | "rk4" => Ok(Method::FixedRk4),
            other => Err(Error::Config(format!(
                "unknown integrator `{other}` (expected adaptive or fixed_rk4)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Adaptive => "adaptive",
            Method::FixedRk4 => "fixed_rk4",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// RK4 substeps per output interval.
    pub substeps: usize,
    /// Adaptive steps allowed per output interval.
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Adaptive,
            rtol: 1e-6,
            atol: 1e-9,
            substeps: 1,
            max_steps: 10_000,
        }
    }
}

impl IntegratorConfig {
    pub fn fixed(substeps: usize) -> Self {
        Self {
            method: Method::FixedRk4,
            substeps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Config("integrator tolerances must be positive".into()));
        }
        if self.substeps == 0 || self.max_steps == 0 {
            return Err(Error::Config("integrator step counts must be positive".into()));
        }
        Ok(())
    }
}

const STIFF_LIMIT: f64 = 3.25;
const STIFF_RUN: usize = 15;
/// Non-stiff steps that clear the stiffness counter.
const CALM_RUN: usize = 6;

// Dormand–Prince tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Stateful stepper; keeps the adaptive step size and the stiffness
/// monitor across consecutive intervals.
#[derive(Debug, Clone)]
pub struct Integrator {
    config: IntegratorConfig,
    h_last: Option<f64>,
    stiff_run: usize,
    calm_run: usize,
    warned: bool,
}

fn check_finite(y: &DVector<f64>, t: f64) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationBlowUp { time: t })
    }
}

impl Integrator {
    pub fn new(config: &IntegratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            h_last: None,
            stiff_run: 0,
            calm_run: 0,
            warned: false,
        })
    }

    pub fn stiffness_warned(&self) -> bool {
        self.warned
    }

    /// Integrates from `t0` to `t1` starting at `y`.
    pub fn advance<F>(&mut self, f: &mut F, t0: f64, t1: f64, y: &DVector<f64>) -> Result<DVector<f64>>
    where
        F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>> + ?Sized,
    {
        if t1 == t0 {
            return Ok(y.clone());
        }
        match self.config.method {
            Method::FixedRk4 => self.rk4(f, t0, t1, y),
            Method::Adaptive => self.dopri(f, t0, t1, y),
        }
    }

    fn rk4<F>(&mut self, f: &mut F, t0: f64, t1: f64, y: &DVector<f64>) -> Result<DVector<f64>>
    where
        F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>> + ?Sized,
    {
        let n = self.config.substeps;
        let h = (t1 - t0) / n as f64;
        let mut y = y.clone();
        for i in 0..n {
            let t = t0 + h * i as f64;
            let k1 = f(t, &y)?;
            let k2 = f(t + 0.5 * h, &(&y + &k1 * (0.5 * h)))?;
            let k3 = f(t + 0.5 * h, &(&y + &k2 * (0.5 * h)))?;
            let k4 = f(t + h, &(&y + &k3 * h))?;
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            check_finite(&y, t + h)?;
        }
        Ok(y)
    }

    fn dopri<F>(&mut self, f: &mut F, t0: f64, t1: f64, y0: &DVector<f64>) -> Result<DVector<f64>>
    where
        F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>> + ?Sized,
    {
        let span = t1 - t0;
        let mut h = self.h_last.unwrap_or(span).min(span);
        let mut t = t0;
        let mut y = y0.clone();
        let mut k1 = f(t, &y)?;
        let mut steps = 0;
        while t < t1 {
            if steps >= self.config.max_steps {
                return Err(Error::StepLimit {
                    t0,
                    t1,
                    max_steps: self.config.max_steps,
                });
            }
            steps += 1;
            let last = t + h >= t1 - 1e-12 * span;
            let h_try = if last { t1 - t } else { h };

            let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
            k.push(k1.clone());
            // arguments of the sixth and seventh stages; the seventh is the
            // new solution (first same as last)
            let mut stage6 = y.clone();
            let mut y_new = y.clone();
            for s in 1..7 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate().take(s) {
                    if A[s][j] != 0.0 {
                        ys.axpy(h_try * A[s][j], kj, 1.0);
                    }
                }
                k.push(f(t + C[s] * h_try, &ys)?);
                match s {
                    5 => stage6 = ys,
                    6 => y_new = ys,
                    _ => {}
                }
            }
            let mut err = DVector::zeros(y.len());
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    err.axpy(h_try * E[j], kj, 1.0);
                }
            }
            let norm = (err
                .iter()
                .zip(y.iter().zip(y_new.iter()))
                .map(|(e, (a, b))| {
                    let sc = self.config.atol + self.config.rtol * a.abs().max(b.abs());
                    (e / sc).powi(2)
                })
                .sum::<f64>()
                / y.len().max(1) as f64)
                .sqrt();
            if !norm.is_finite() {
                if h_try < 1e-14 * span.max(1.0) {
                    return Err(Error::IntegrationBlowUp { time: t });
                }
                h = h_try * 0.2;
                continue;
            }
            let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
            if norm <= 1.0 {
                // stiffness estimate from the last two stages
                let dk = (&k[6] - &k[5]).norm();
                let dy = (&y_new - &stage6).norm();
                if dy > 0.0 && h_try * dk / dy > STIFF_LIMIT {
                    self.calm_run = 0;
                    self.stiff_run += 1;
                    if self.stiff_run >= STIFF_RUN && !self.warned {
                        self.warned = true;
                        log::warn!("integration looks stiff near t = {t:.4} s; the explicit solver may be slow");
                    }
                } else {
                    self.calm_run += 1;
                    if self.calm_run >= CALM_RUN {
                        self.stiff_run = 0;
                    }
                }
                t = if last { t1 } else { t + h_try };
                y = y_new;
                check_finite(&y, t)?;
                k1 = k.swap_remove(6);
                if !last {
                    h = h_try * factor;
                } else {
                    h = h.max(h_try);
                }
            } else {
                h = h_try * factor.min(1.0);
            }
        }
        self.h_last = Some(h);
        Ok(y)
    }
}

/// Integrates over consecutive intervals `[times[i], times[i+1]]`,
/// returning the state at every entry of `times`.
pub fn integrate_intervals<F>(
    f: &mut F,
    times: &[f64],
    y0: &DVector<f64>,
    config: &IntegratorConfig,
) -> Result<Vec<DVector<f64>>>
where
    F: FnMut(usize, f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    check_finite(y0, times.first().copied().unwrap_or(0.0))?;
    let mut integ = Integrator::new(config)?;
    let mut out = Vec::with_capacity(times.len());
    out.push(y0.clone());
    for i in 0..times.len().saturating_sub(1) {
        let y = out.last().unwrap().clone();
        let mut g = |t: f64, y: &DVector<f64>| f(i, t, y);
        out.push(integ.advance(&mut g, times[i], times[i + 1], &y)?);
    }
    Ok(out)
}
