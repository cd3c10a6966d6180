//! Sparse identification of latent second-order dynamics
//! `ξ̈ = Θ(ξ, ξ̇, ν) Ξ` by sequentially thresholded least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AutoencoderParams, Derivative};
use crate::data::{Dataset, Phase};
use crate::library::{FunctionLibrarySpec, Library};
use crate::linalg;
use crate::{Error, Result};

/// Above this many active coefficients the coupled system is solved
/// matrix-free by conjugate gradients instead of a dense factorisation.
const DENSE_LIMIT: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparsityMode {
    Stlsq,
    /// Proximal gradient on an explicit L1 penalty with the given weight.
    ProximalL1 { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SindyConfig {
    pub threshold: f64,
    pub ridge: f64,
    pub max_iters: usize,
    /// Weight of the decoded-acceleration residual relative to the latent one.
    pub decoded_weight: f64,
    pub mode: SparsityMode,
}

impl Default for SindyConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            ridge: 1e-8,
            max_iters: 20,
            decoded_weight: 1.0,
            mode: SparsityMode::Stlsq,
        }
    }
}

impl SindyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!("threshold must be >= 0, got {}", self.threshold)));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config(format!("ridge must be >= 0, got {}", self.ridge)));
        }
        if !(self.decoded_weight >= 0.0 && self.decoded_weight.is_finite()) {
            return Err(Error::Config(format!(
                "decoded loss weight must be >= 0, got {}",
                self.decoded_weight
            )));
        }
        if let SparsityMode::ProximalL1 { weight } = self.mode {
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(Error::Config(format!("L1 weight must be >= 0, got {weight}")));
            }
        }
        Ok(())
    }
}

/// Raw result of a sparse regression.
#[derive(Debug, Clone, PartialEq)]
pub struct StlsqSolution {
    /// `p × l`
    pub xi: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoefficients {
    pub xi: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub library: FunctionLibrarySpec,
    pub threshold: f64,
}

impl SparseCoefficients {
    pub fn latent_dim(&self) -> usize {
        self.xi.ncols()
    }

    pub fn count_active(&self) -> usize {
        count_active(&self.xi)
    }

    /// L1 norm of the coefficients.
    pub fn l1(&self) -> f64 {
        self.xi.iter().map(|x| x.abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel {
    pub phase: Phase,
    pub coefficients: SparseCoefficients,
}

/// Number of nonzero entries.
pub fn count_active(xi: &DMatrix<f64>) -> usize {
    xi.iter().filter(|&&x| x != 0.0).count()
}

/// Keeps entries of `mask` whose coefficient magnitude reaches `threshold`.
pub fn threshold_support(xi: &DMatrix<f64>, mask: &DMatrix<bool>, threshold: f64) -> DMatrix<bool> {
    DMatrix::from_fn(xi.nrows(), xi.ncols(), |r, c| mask[(r, c)] && xi[(r, c)].abs() >= threshold)
}

/// Quadratic problem `min (1/N)‖Y − ΘΞ‖² + (w/N)‖Q̈ − ΘΞW_dᵀ‖² + λ‖Ξ‖²`
/// expressed through its normal equations `G Ξ C + λ Ξ = R`.
struct NormalSystem {
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    r: DMatrix<f64>,
    ridge: f64,
}

impl NormalSystem {
    fn p(&self) -> usize {
        self.g.nrows()
    }

    fn l(&self) -> usize {
        self.c.nrows()
    }

    fn decoupled(&self) -> bool {
        self.c == DMatrix::identity(self.l(), self.l())
    }

    fn solve(&self, mask: &DMatrix<bool>) -> DMatrix<f64> {
        let (p, l) = (self.p(), self.l());
        let mut xi = DMatrix::zeros(p, l);
        if self.decoupled() {
            for j in 0..l {
                let idx: Vec<usize> = (0..p).filter(|&i| mask[(i, j)]).collect();
                if idx.is_empty() {
                    continue;
                }
                let h = DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
                    self.g[(idx[a], idx[b])] + if a == b { self.ridge } else { 0.0 }
                });
                let rhs = DVector::from_fn(idx.len(), |a, _| self.r[(idx[a], j)]);
                let x = linalg::solve_psd(&h, &rhs);
                for (a, &i) in idx.iter().enumerate() {
                    xi[(i, j)] = x[a];
                }
            }
            return xi;
        }
        let idx: Vec<(usize, usize)> = (0..l)
            .flat_map(|j| (0..p).map(move |i| (i, j)))
            .filter(|&(i, j)| mask[(i, j)])
            .collect();
        if idx.is_empty() {
            return xi;
        }
        if idx.len() > DENSE_LIMIT {
            return self.solve_cg(mask);
        }
        let h = DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            let ((i, j), (k, h)) = (idx[a], idx[b]);
            self.g[(i, k)] * self.c[(j, h)] + if a == b { self.ridge } else { 0.0 }
        });
        let rhs = DVector::from_fn(idx.len(), |a, _| self.r[idx[a]]);
        let x = linalg::solve_psd(&h, &rhs);
        for (a, &ij) in idx.iter().enumerate() {
            xi[ij] = x[a];
        }
        xi
    }

    fn apply(&self, x: &DMatrix<f64>, mask: &DMatrix<bool>) -> DMatrix<f64> {
        let mut y = &self.g * x * &self.c + x * self.ridge;
        y.zip_apply(mask, |v, m| {
            if !m {
                *v = 0.0
            }
        });
        y
    }

    fn solve_cg(&self, mask: &DMatrix<bool>) -> DMatrix<f64> {
        let masked = |m: &DMatrix<f64>| {
            let mut m = m.clone();
            m.zip_apply(mask, |v, k| {
                if !k {
                    *v = 0.0
                }
            });
            m
        };
        let b = masked(&self.r);
        let mut x = DMatrix::zeros(self.p(), self.l());
        let mut r = b.clone();
        let mut d = r.clone();
        let mut rr = r.norm_squared();
        let tol = 1e-28 * rr.max(f64::MIN_POSITIVE);
        let n = mask.iter().filter(|&&m| m).count();
        for _ in 0..(4 * n).max(100) {
            if rr <= tol {
                break;
            }
            let hd = self.apply(&d, mask);
            let denom = d.dot(&hd);
            if denom <= 0.0 {
                break;
            }
            let alpha = rr / denom;
            x += &d * alpha;
            r -= &hd * alpha;
            let rr_new = r.norm_squared();
            d = &r + &d * (rr_new / rr);
            rr = rr_new;
        }
        x
    }

    fn lipschitz(&self) -> f64 {
        let eg = self.g.clone().symmetric_eigen().eigenvalues.amax();
        let ec = self.c.clone().symmetric_eigen().eigenvalues.amax();
        eg * ec + self.ridge
    }
}

fn run_stlsq(
    system: &NormalSystem,
    threshold: f64,
    max_iters: usize,
    warm: Option<&DMatrix<bool>>,
) -> StlsqSolution {
    let (p, l) = (system.p(), system.l());
    let mut mask = warm.cloned().unwrap_or_else(|| DMatrix::from_element(p, l, true));
    let mut xi = system.solve(&mask);
    let mut iterations = 1;
    let mut converged = false;
    while iterations <= max_iters {
        let next = threshold_support(&xi, &mask, threshold);
        if next == mask {
            converged = true;
            break;
        }
        mask = next;
        xi = system.solve(&mask);
        iterations += 1;
    }
    finish(xi, mask, iterations, converged)
}

fn finish(mut xi: DMatrix<f64>, mut mask: DMatrix<bool>, iterations: usize, converged: bool) -> StlsqSolution {
    for (m, x) in mask.iter_mut().zip(xi.iter_mut()) {
        if !*m {
            *x = 0.0;
        }
        *m = *m && *x != 0.0;
    }
    for j in 0..mask.ncols() {
        if mask.column(j).iter().all(|&m| !m) {
            log::warn!("latent dimension {} has no active terms; its dynamics are constant zero", j + 1);
        }
    }
    StlsqSolution {
        xi,
        mask,
        iterations,
        converged,
    }
}

/// Iterative soft-thresholding on `(1/N)‖·‖² + λ‖Ξ‖² + weight‖Ξ‖₁`.
fn run_proximal(system: &NormalSystem, weight: f64, max_iters: usize) -> StlsqSolution {
    let (p, l) = (system.p(), system.l());
    let all = DMatrix::from_element(p, l, true);
    let lip = 2.0 * system.lipschitz();
    if !(lip > 0.0) {
        return finish(DMatrix::zeros(p, l), all, 0, true);
    }
    let step = 1.0 / lip;
    let mut xi = DMatrix::zeros(p, l);
    let mut converged = false;
    let mut it = 0;
    let limit = max_iters.max(1) * 1000;
    while it < limit {
        it += 1;
        let grad = (system.apply(&xi, &all) - &system.r) * 2.0;
        let next = (&xi - grad * step).map(|v| v.signum() * (v.abs() - step * weight).max(0.0));
        let delta = (&next - &xi).amax();
        xi = next;
        if delta <= 1e-12 * xi.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    let mask = xi.map(|v| v != 0.0);
    finish(xi, mask, it, converged)
}

fn plain_system(theta: &DMatrix<f64>, targets: &DMatrix<f64>, ridge: f64) -> Result<NormalSystem> {
    if theta.nrows() != targets.nrows() {
        return Err(Error::shape("target rows", theta.nrows(), targets.nrows()));
    }
    let n = theta.nrows();
    if n == 0 {
        return Err(Error::Config("sparse regression needs at least one sample".into()));
    }
    if n < theta.ncols() {
        log::warn!("{n} samples for {} library terms; the regression is underdetermined", theta.ncols());
    }
    let nf = n as f64;
    Ok(NormalSystem {
        g: theta.transpose() * theta / nf,
        c: DMatrix::identity(targets.ncols(), targets.ncols()),
        r: theta.transpose() * targets / nf,
        ridge,
    })
}

/// Sequentially thresholded ridge regression of `targets ≈ theta · Ξ`.
pub fn stlsq(
    theta: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    threshold: f64,
    ridge: f64,
    max_iters: usize,
) -> Result<StlsqSolution> {
    stlsq_warm(theta, targets, threshold, ridge, max_iters, None)
}

/// As [`stlsq`], starting from the given support instead of the full one.
pub fn stlsq_warm(
    theta: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    threshold: f64,
    ridge: f64,
    max_iters: usize,
    warm: Option<&DMatrix<bool>>,
) -> Result<StlsqSolution> {
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!("threshold must be >= 0, got {threshold}")));
    }
    let system = plain_system(theta, targets, ridge)?;
    check_warm(warm, system.p(), system.l())?;
    Ok(run_stlsq(&system, threshold, max_iters, warm))
}

fn check_warm(warm: Option<&DMatrix<bool>>, p: usize, l: usize) -> Result<()> {
    match warm {
        Some(m) if m.shape() != (p, l) => Err(Error::shape(
            "warm-start support",
            format!("{p}x{l}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        )),
        _ => Ok(()),
    }
}

/// Latent regression data for one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPhaseData {
    pub xi: DMatrix<f64>,
    pub dxi: DMatrix<f64>,
    pub nu: DMatrix<f64>,
    /// Latent accelerations `W_e q̈`.
    pub ddxi: DMatrix<f64>,
    /// Configuration-space accelerations.
    pub ddq: DMatrix<f64>,
}

impl LatentPhaseData {
    pub fn len(&self) -> usize {
        self.xi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.nrows() == 0
    }

    /// Encodes every sample of `phase` in the given jumps.
    pub fn collect(dataset: &Dataset, jumps: &[usize], phase: Phase, params: &AutoencoderParams) -> Result<Self> {
        let n = params.full_dim();
        let transform = params.input_transform()?;
        let mut rows = Vec::new();
        for &j in jumps {
            let jump = &dataset.jumps[j];
            if jump.raw.full_dim() != n {
                return Err(Error::shape("jump configuration width", n, jump.raw.full_dim()));
            }
            rows.extend((0..jump.len()).filter(|&k| jump.phases[k] == phase).map(|k| (j, k)));
        }
        if rows.is_empty() {
            return Err(Error::NoPhaseData(phase));
        }
        let stack = |f: &dyn Fn(&crate::data::ProcessedTrajectory, usize) -> DVector<f64>| {
            let mut m = DMatrix::zeros(rows.len(), n);
            for (r, &(j, k)) in rows.iter().enumerate() {
                m.row_mut(r).copy_from(&f(&dataset.jumps[j], k).transpose());
            }
            m
        };
        let q = stack(&|t, k| t.q_row(k));
        let dq = stack(&|t, k| t.dq_row(k));
        let ddq = stack(&|t, k| t.ddq_row(k));
        let u = stack(&|t, k| t.u_row(k));
        Ok(Self {
            xi: params.encode_rows(&q, Derivative::Position),
            dxi: params.encode_rows(&dq, Derivative::Velocity),
            nu: u * transform.transpose(),
            ddxi: params.encode_rows(&ddq, Derivative::Acceleration),
            ddq,
        })
    }
}

/// Residual metrics of a phase model on phase data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    /// `‖ξ̈ − ΘΞ‖² / N`
    pub latent_mse: f64,
    /// `‖q̈ − W_d ΘΞ‖² / N`
    pub decoded_mse: f64,
    pub l1: f64,
    pub active: usize,
}

/// Fits `Ξ` for one phase with the autoencoder frozen.
pub fn fit_phase_model(
    params: &AutoencoderParams,
    spec: &FunctionLibrarySpec,
    phase: Phase,
    data: &LatentPhaseData,
    config: &SindyConfig,
    warm: Option<&DMatrix<bool>>,
) -> Result<PhaseModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::NoPhaseData(phase));
    }
    let l = params.latent_dim();
    let library = spec.library(l)?;
    let theta = library.matrix(&data.xi, &data.dxi, &data.nu)?;
    let nf = data.len() as f64;
    let mut system = plain_system(&theta, &data.ddxi, config.ridge)?;
    let w = config.decoded_weight;
    if w > 0.0 {
        if data.ddq.shape() != (data.len(), params.full_dim()) {
            return Err(Error::shape("ddq", params.full_dim(), data.ddq.ncols()));
        }
        system.c += params.w_d.transpose() * &params.w_d * w;
        system.r += theta.transpose() * &data.ddq * &params.w_d * (w / nf);
    }
    check_warm(warm, library.len(), l)?;
    let sol = match config.mode {
        SparsityMode::Stlsq => run_stlsq(&system, config.threshold, config.max_iters, warm),
        SparsityMode::ProximalL1 { weight } => run_proximal(&system, weight, config.max_iters),
    };
    if !sol.converged {
        log::warn!(
            "sparse regression for phase {phase} stopped after {} iterations without a stable support",
            sol.iterations
        );
    }
    Ok(PhaseModel {
        phase,
        coefficients: SparseCoefficients {
            xi: sol.xi,
            mask: sol.mask,
            library: spec.clone(),
            threshold: config.threshold,
        },
    })
}

pub fn fit_metrics(
    model: &PhaseModel,
    params: &AutoencoderParams,
    data: &LatentPhaseData,
) -> Result<FitMetrics> {
    let coeffs = &model.coefficients;
    let library = coeffs.library.library(coeffs.latent_dim())?;
    let theta = library.matrix(&data.xi, &data.dxi, &data.nu)?;
    let pred = theta * &coeffs.xi;
    let nf = data.len().max(1) as f64;
    let decoded = &pred * params.w_d.transpose();
    Ok(FitMetrics {
        latent_mse: (&data.ddxi - &pred).norm_squared() / nf,
        decoded_mse: (&data.ddq - decoded).norm_squared() / nf,
        l1: coeffs.l1(),
        active: coeffs.count_active(),
    })
}

/// `Θ(ξ, ξ̇, ν) Ξ` at one state.
pub fn predict_latent_accel(
    coeffs: &SparseCoefficients,
    xi: &DVector<f64>,
    dxi: &DVector<f64>,
    nu: &DVector<f64>,
) -> Result<DVector<f64>> {
    let library = coeffs.library.library(coeffs.latent_dim())?;
    predict_with(&library, &coeffs.xi, xi, dxi, nu)
}

pub(crate) fn predict_with(
    library: &Library,
    xi_mat: &DMatrix<f64>,
    xi: &DVector<f64>,
    dxi: &DVector<f64>,
    nu: &DVector<f64>,
) -> Result<DVector<f64>> {
    let row = library.row(xi, dxi, nu)?;
    Ok(xi_mat.transpose() * row)
}

fn format_coefficient(c: f64, precision: usize) -> Option<String> {
    let s = format!("{:.*}", precision, c.abs());
    if s.parse::<f64>().map_or(true, |v| v == 0.0) {
        None
    } else {
        Some(s)
    }
}

/// One equation per latent dimension, e.g. `ξ̈_1 = 0.36 - 0.16·ξ̇_1`.
pub fn print_symbolic(model: &PhaseModel, precision: usize) -> Vec<String> {
    let coeffs = &model.coefficients;
    let l = coeffs.latent_dim();
    let names = coeffs.library.term_names(l);
    (0..l)
        .map(|k| {
            let mut eq = format!("ξ\u{308}_{} =", k + 1);
            let mut first = true;
            for (i, name) in names.iter().enumerate() {
                let c = coeffs.xi[(i, k)];
                let Some(mag) = format_coefficient(c, precision) else {
                    continue;
                };
                let body = if name == "1" { mag } else { format!("{mag}·{name}") };
                match (first, c < 0.0) {
                    (true, true) => eq.push_str(&format!(" -{body}")),
                    (true, false) => eq.push_str(&format!(" {body}")),
                    (false, true) => eq.push_str(&format!(" - {body}")),
                    (false, false) => eq.push_str(&format!(" + {body}")),
                }
                first = false;
            }
            if first {
                eq.push_str(" 0");
            }
            eq
        })
        .collect()
}
