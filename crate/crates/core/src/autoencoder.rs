//! Shared-weight linear autoencoder between configuration space and the
//! latent space.
//!
//! A single encoder matrix `W_e` maps configurations, velocities and
//! accelerations alike; the bias `B_e` is applied to configurations only.
//! Actuation is mapped with the transposed pseudoinverse of `W_e`, which
//! keeps the power pairing `νᵀ ξ̇ = uᵀ q̇` whenever `W_e` is invertible.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, RCOND};
use crate::{serde_mat, Error, Result};

/// Time-derivative order of the signal being encoded or decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Position,
    Velocity,
    Acceleration,
}

impl Derivative {
    pub fn from_order(n: usize) -> Result<Self> {
        match n {
            0 => Ok(Derivative::Position),
            1 => Ok(Derivative::Velocity),
            2 => Ok(Derivative::Acceleration),
            n => Err(Error::Config(format!("derivative order must be 0, 1 or 2, got {n}"))),
        }
    }

    fn has_bias(self) -> bool {
        self == Derivative::Position
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    /// `l × (m + 6)`
    #[serde(with = "serde_mat::matrix")]
    pub w_e: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub b_e: DVector<f64>,
    /// `(m + 6) × l`
    #[serde(with = "serde_mat::matrix")]
    pub w_d: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub b_d: DVector<f64>,
}

/// Latent configuration and velocity, optionally with acceleration.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub xi: DVector<f64>,
    pub dxi: DVector<f64>,
    pub ddxi: Option<DVector<f64>>,
}

impl AutoencoderParams {
    pub fn latent_dim(&self) -> usize {
        self.w_e.nrows()
    }

    pub fn full_dim(&self) -> usize {
        self.w_e.ncols()
    }

    /// Identity embedding of a `dim`-dimensional space.
    pub fn identity(dim: usize) -> Self {
        Self {
            w_e: DMatrix::identity(dim, dim),
            b_e: DVector::zeros(dim),
            w_d: DMatrix::identity(dim, dim),
            b_d: DVector::zeros(dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (l, n) = self.w_e.shape();
        if l == 0 || l > n {
            return Err(Error::Config(format!("latent dimension {l} outside 1..={n}")));
        }
        if self.b_e.len() != l {
            return Err(Error::shape("B_e", l, self.b_e.len()));
        }
        if self.w_d.shape() != (n, l) {
            return Err(Error::shape(
                "W_d",
                format!("{n}x{l}"),
                format!("{}x{}", self.w_d.nrows(), self.w_d.ncols()),
            ));
        }
        if self.b_d.len() != n {
            return Err(Error::shape("B_d", n, self.b_d.len()));
        }
        let finite = self.w_e.iter().chain(self.b_e.iter()).chain(self.w_d.iter()).chain(self.b_d.iter());
        if finite.clone().any(|x| !x.is_finite()) {
            return Err(Error::Config("autoencoder parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn encode(&self, x: &DVector<f64>, order: Derivative) -> Result<DVector<f64>> {
        if x.len() != self.full_dim() {
            return Err(Error::shape("encoder input", self.full_dim(), x.len()));
        }
        let z = &self.w_e * x;
        Ok(if order.has_bias() { z + &self.b_e } else { z })
    }

    pub fn decode(&self, z: &DVector<f64>, order: Derivative) -> Result<DVector<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape("decoder input", self.latent_dim(), z.len()));
        }
        let x = &self.w_d * z;
        Ok(if order.has_bias() { x + &self.b_d } else { x })
    }

    /// Encodes every row of a row-per-sample matrix.
    pub fn encode_rows(&self, x: &DMatrix<f64>, order: Derivative) -> DMatrix<f64> {
        let mut z = x * self.w_e.transpose();
        if order.has_bias() {
            for mut row in z.row_iter_mut() {
                row += self.b_e.transpose();
            }
        }
        z
    }

    pub fn decode_rows(&self, z: &DMatrix<f64>, order: Derivative) -> DMatrix<f64> {
        let mut x = z * self.w_d.transpose();
        if order.has_bias() {
            for mut row in x.row_iter_mut() {
                row += self.b_d.transpose();
            }
        }
        x
    }

    /// `(W_e⁺)ᵀ`, the `l × (m + 6)` matrix mapping inputs to latent inputs.
    pub fn input_transform(&self) -> Result<DMatrix<f64>> {
        let sv = linalg::singular_values(&self.w_e);
        let (max, min) = (sv[0], *sv.last().unwrap());
        if !(min > RCOND * max) {
            return Err(Error::RankDeficient { smallest: min });
        }
        Ok(linalg::pinv(&self.w_e, 0.0).transpose())
    }

    /// `ν = (W_e⁺)ᵀ u`.
    pub fn transform_input(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.full_dim() {
            return Err(Error::shape("input", self.full_dim(), u.len()));
        }
        Ok(self.input_transform()? * u)
    }

    /// `W_d (W_e q + B_e) + B_d`.
    pub fn reconstruct(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.decode(&self.encode(q, Derivative::Position)?, Derivative::Position)
    }

    pub fn reconstruct_rows(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        self.decode_rows(&self.encode_rows(q, Derivative::Position), Derivative::Position)
    }

    /// Mean over rows of the squared reconstruction error norm.
    pub fn recon_loss(&self, batch: &DMatrix<f64>) -> f64 {
        if batch.nrows() == 0 {
            return 0.0;
        }
        let err = self.reconstruct_rows(batch) - batch;
        err.norm_squared() / batch.nrows() as f64
    }

    pub fn latent_state(&self, q: &DVector<f64>, dq: &DVector<f64>) -> Result<LatentState> {
        Ok(LatentState {
            xi: self.encode(q, Derivative::Position)?,
            dxi: self.encode(dq, Derivative::Velocity)?,
            ddxi: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderInit {
    /// Leading principal directions of the training configurations.
    Pca,
    /// Seeded Gaussian weights.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub init: EncoderInit,
    pub seed: u64,
    /// Train on per-column standardised data; the result is folded back
    /// into physical units.
    pub standardize: bool,
    /// Ridge weight for the closed-form decoder fit.
    pub decoder_ridge: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            epochs: 200,
            init: EncoderInit::Pca,
            seed: 0,
            standardize: false,
            decoder_ridge: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderFit {
    pub params: AutoencoderParams,
    pub history: LossHistory,
}

/// Parameters in centred (and optionally scaled) coordinates
/// `x = (q − μ) / s`, which decouples the weight updates from the data
/// offset.
struct Centered {
    w: DMatrix<f64>,
    beta: DVector<f64>,
    v: DMatrix<f64>,
    gamma: DVector<f64>,
}

struct Normalizer {
    mean: DVector<f64>,
    scale: DVector<f64>,
}

impl Normalizer {
    fn fit(x: &DMatrix<f64>, standardize: bool) -> Self {
        let mean = linalg::column_means(x);
        let scale = if standardize {
            let n = x.nrows().max(2) as f64;
            DVector::from_fn(x.ncols(), |c, _| {
                let var = x.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / (n - 1.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
        } else {
            DVector::from_element(x.ncols(), 1.0)
        };
        Self { mean, scale }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = linalg::center_rows(x, &self.mean);
        for mut row in out.row_iter_mut() {
            row.component_div_assign(&self.scale.transpose());
        }
        out
    }

    fn to_centered(&self, p: &AutoencoderParams) -> Centered {
        let s = DMatrix::from_diagonal(&self.scale);
        let s_inv = DMatrix::from_diagonal(&self.scale.map(|v| 1.0 / v));
        Centered {
            w: &p.w_e * &s,
            beta: &p.w_e * &self.mean + &p.b_e,
            v: &s_inv * &p.w_d,
            gamma: (&p.b_d - &self.mean).component_div(&self.scale),
        }
    }

    fn to_params(&self, c: &Centered) -> AutoencoderParams {
        let s_inv = DMatrix::from_diagonal(&self.scale.map(|v| 1.0 / v));
        let w_e = &c.w * &s_inv;
        let b_e = &c.beta - &w_e * &self.mean;
        let w_d = DMatrix::from_diagonal(&self.scale) * &c.v;
        let b_d = &self.mean + c.gamma.component_mul(&self.scale);
        AutoencoderParams { w_e, b_e, w_d, b_d }
    }
}

/// Encoder rows are the leading eigenvectors of the covariance, each signed
/// so its largest-magnitude entry is positive; the decoder is the transpose.
fn pca_init(x: &DMatrix<f64>, l: usize) -> Centered {
    let n = x.ncols();
    let cov = x.transpose() * x / x.nrows().max(1) as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut w = DMatrix::zeros(l, n);
    for (r, &i) in order.iter().take(l).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        w.row_mut(r).copy_from(&v.transpose());
    }
    Centered {
        v: w.transpose(),
        w,
        beta: DVector::zeros(l),
        gamma: DVector::zeros(n),
    }
}

fn random_init(n: usize, l: usize, seed: u64) -> Centered {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (n as f64).sqrt()).unwrap();
    let w = DMatrix::from_fn(l, n, |_, _| normal.sample(&mut rng));
    let v = DMatrix::from_fn(n, l, |_, _| normal.sample(&mut rng));
    Centered {
        w,
        beta: DVector::zeros(l),
        v,
        gamma: DVector::zeros(n),
    }
}

fn centered_loss(c: &Centered, x: &DMatrix<f64>) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let mut z = x * c.w.transpose();
    for mut row in z.row_iter_mut() {
        row += c.beta.transpose();
    }
    let mut err = &z * c.v.transpose();
    for mut row in err.row_iter_mut() {
        row += c.gamma.transpose();
    }
    err -= x;
    let loss = err.norm_squared() / x.nrows().max(1) as f64;
    (loss, z, err)
}

fn gradient_descent(
    mut c: Centered,
    x: &DMatrix<f64>,
    val: Option<&DMatrix<f64>>,
    lr: f64,
    momentum: f64,
    epochs: usize,
) -> Result<(Centered, LossHistory)> {
    let nf = x.nrows().max(1) as f64;
    let mut history = LossHistory::default();
    let mut vel = Centered {
        w: DMatrix::zeros(c.w.nrows(), c.w.ncols()),
        beta: DVector::zeros(c.beta.len()),
        v: DMatrix::zeros(c.v.nrows(), c.v.ncols()),
        gamma: DVector::zeros(c.gamma.len()),
    };
    for epoch in 0..=epochs {
        let (loss, z, err) = centered_loss(&c, x);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: epoch, loss });
        }
        history.train.push(loss);
        if let Some(v) = val {
            history.validation.push(centered_loss(&c, v).0);
        }
        if epoch == epochs {
            break;
        }
        let g_out = err * (2.0 / nf);
        let g_v = g_out.transpose() * &z;
        let g_gamma = DVector::from_fn(g_out.ncols(), |i, _| g_out.column(i).sum());
        let g_z = &g_out * &c.v;
        let g_w = g_z.transpose() * x;
        let g_beta = DVector::from_fn(g_z.ncols(), |i, _| g_z.column(i).sum());

        vel.w = &vel.w * momentum - g_w * lr;
        vel.beta = &vel.beta * momentum - g_beta * lr;
        vel.v = &vel.v * momentum - g_v * lr;
        vel.gamma = &vel.gamma * momentum - g_gamma * lr;
        c.w += &vel.w;
        c.beta += &vel.beta;
        c.v += &vel.v;
        c.gamma += &vel.gamma;
    }
    Ok((c, history))
}

/// Trains encoder and decoder on `train` (one configuration per row) by
/// full-batch gradient descent with momentum on the reconstruction loss.
pub fn train_autoencoder(
    train: &DMatrix<f64>,
    validation: Option<&DMatrix<f64>>,
    latent_dim: usize,
    config: &AutoencoderConfig,
) -> Result<AutoencoderFit> {
    let n = train.ncols();
    if train.nrows() == 0 {
        return Err(Error::Config("empty training set for autoencoder".into()));
    }
    if latent_dim == 0 || latent_dim > n {
        return Err(Error::Config(format!("latent dimension {latent_dim} outside 1..={n}")));
    }
    let norm = Normalizer::fit(train, config.standardize);
    let x = norm.apply(train);
    let xv = validation.filter(|v| v.nrows() > 0).map(|v| norm.apply(v));
    let init = match config.init {
        EncoderInit::Pca => pca_init(&x, latent_dim),
        EncoderInit::Random => random_init(n, latent_dim, config.seed),
    };
    let (c, history) = gradient_descent(init, &x, xv.as_ref(), config.learning_rate, config.momentum, config.epochs)?;
    let params = norm.to_params(&c);
    params.validate()?;
    Ok(AutoencoderFit { params, history })
}

/// Continues gradient descent from existing parameters. With zero epochs
/// the parameters are returned untouched.
pub fn continue_training(
    params: &AutoencoderParams,
    train: &DMatrix<f64>,
    validation: Option<&DMatrix<f64>>,
    config: &AutoencoderConfig,
) -> Result<AutoencoderFit> {
    if train.ncols() != params.full_dim() {
        return Err(Error::shape("training data width", params.full_dim(), train.ncols()));
    }
    if config.epochs == 0 || train.nrows() == 0 {
        let history = LossHistory {
            train: vec![params.recon_loss(train)],
            validation: validation.map(|v| vec![params.recon_loss(v)]).unwrap_or_default(),
        };
        return Ok(AutoencoderFit {
            params: params.clone(),
            history,
        });
    }
    let norm = Normalizer::fit(train, config.standardize);
    let x = norm.apply(train);
    let xv = validation.filter(|v| v.nrows() > 0).map(|v| norm.apply(v));
    let start = norm.to_centered(params);
    let (c, history) = gradient_descent(start, &x, xv.as_ref(), config.learning_rate, config.momentum, config.epochs)?;
    let params = norm.to_params(&c);
    params.validate()?;
    Ok(AutoencoderFit { params, history })
}

/// Refits `W_d, B_d` in closed form on `data` with the encoder frozen.
pub fn finetune_decoder(params: &AutoencoderParams, data: &DMatrix<f64>, ridge: f64) -> Result<AutoencoderParams> {
    if data.ncols() != params.full_dim() {
        return Err(Error::shape("decoder data width", params.full_dim(), data.ncols()));
    }
    if data.nrows() == 0 {
        return Err(Error::Config("empty data for decoder fine-tuning".into()));
    }
    let z = params.encode_rows(data, Derivative::Position);
    let z_mean = linalg::column_means(&z);
    let q_mean = linalg::column_means(data);
    let zc = linalg::center_rows(&z, &z_mean);
    let qc = linalg::center_rows(data, &q_mean);
    let w_d_t = linalg::ridge_lstsq(&zc, &qc, ridge);
    let w_d = w_d_t.transpose();
    let b_d = &q_mean - &w_d * &z_mean;
    let out = AutoencoderParams {
        w_e: params.w_e.clone(),
        b_e: params.b_e.clone(),
        w_d,
        b_d,
    };
    out.validate()?;
    Ok(out)
}

/// Reference latent coordinates `ξ_ref = W q + B` used to fix the gauge of
/// a trained autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentReference {
    #[serde(with = "serde_mat::matrix")]
    pub w: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub b: DVector<f64>,
}

/// Re-expresses the latent coordinates through the affine map `ξ' = M ξ + k`
/// that best matches `reference` on `data`. Reconstructions are unchanged.
pub fn anchor_latent(
    params: &AutoencoderParams,
    reference: &LatentReference,
    data: &DMatrix<f64>,
) -> Result<AutoencoderParams> {
    let l = params.latent_dim();
    if reference.w.shape() != (l, params.full_dim()) || reference.b.len() != l {
        return Err(Error::shape(
            "latent reference",
            format!("{l}x{}", params.full_dim()),
            format!("{}x{}", reference.w.nrows(), reference.w.ncols()),
        ));
    }
    let z = params.encode_rows(data, Derivative::Position);
    let y = {
        let mut y = data * reference.w.transpose();
        for mut row in y.row_iter_mut() {
            row += reference.b.transpose();
        }
        y
    };
    let z_mean = linalg::column_means(&z);
    let y_mean = linalg::column_means(&y);
    let m_t = linalg::ridge_lstsq(&linalg::center_rows(&z, &z_mean), &linalg::center_rows(&y, &y_mean), 0.0);
    let m = m_t.transpose();
    let cond = linalg::condition_number(&m);
    if !(cond < 1e8) {
        return Err(Error::Config(format!(
            "latent reference is degenerate on the training data (condition {cond:e})"
        )));
    }
    let k = &y_mean - &m * &z_mean;
    let m_inv = m.clone().try_inverse().ok_or_else(|| Error::Config("singular gauge map".into()))?;
    let w_d = &params.w_d * &m_inv;
    let out = AutoencoderParams {
        w_e: &m * &params.w_e,
        b_e: &m * &params.b_e + &k,
        b_d: &params.b_d - &w_d * &k,
        w_d,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn e1(n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[0] = 1.0;
        v
    }

    fn single_row_params(n: usize) -> AutoencoderParams {
        let mut w_e = DMatrix::zeros(1, n);
        w_e[(0, 0)] = 1.0;
        AutoencoderParams {
            w_e,
            b_e: DVector::from_element(1, 0.5),
            w_d: DMatrix::zeros(n, 1),
            b_d: DVector::from_fn(n, |i, _| i as f64),
        }
    }

    /// Rows on an affine `l`-dimensional subspace of `R^n`.
    fn subspace_data(rows: usize, n: usize, l: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = DMatrix::from_fn(n, l, |_, _| rng.gen_range(-1.0..1.0));
        let offset = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let data = DMatrix::from_fn(rows, n, |_, _| 0.0);
        let mut data = data;
        for r in 0..rows {
            let coef = DVector::from_fn(l, |_, _| rng.gen_range(-1.0..1.0));
            data.row_mut(r).copy_from(&(&basis * coef + &offset).transpose());
        }
        (data, basis)
    }

    #[test]
    fn encode_examples() {
        let p = single_row_params(18);
        assert_eq!(p.encode(&e1(18), Derivative::Position).unwrap()[0], 1.5);
        assert_eq!(p.encode(&e1(18), Derivative::Velocity).unwrap()[0], 1.0);
        assert_eq!(p.encode(&DVector::zeros(18), Derivative::Position).unwrap(), p.b_e);
        assert!(p.encode(&DVector::zeros(5), Derivative::Position).is_err());
        assert!(Derivative::from_order(3).is_err());
    }

    #[test]
    fn decode_examples() {
        let p = single_row_params(18);
        let z = DVector::zeros(1);
        assert_eq!(p.decode(&z, Derivative::Position).unwrap(), p.b_d);
        assert!(p.decode(&z, Derivative::Acceleration).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn input_transform_examples() {
        let mut p = AutoencoderParams::identity(18);
        p.w_e *= 2.0;
        let nu = p.transform_input(&DVector::from_element(18, 2.0)).unwrap();
        assert_abs_diff_eq!(nu, DVector::from_element(18, 1.0), epsilon = 1e-14);
        let id = AutoencoderParams::identity(18);
        let u = DVector::from_fn(18, |i, _| i as f64 - 3.0);
        assert_abs_diff_eq!(id.transform_input(&u).unwrap(), u, epsilon = 1e-14);
    }

    #[test]
    fn rank_deficient_encoder_is_rejected() {
        let mut p = AutoencoderParams::identity(6);
        p.w_e = DMatrix::from_fn(2, 6, |_, c| c as f64);
        p.b_e = DVector::zeros(2);
        p.w_d = DMatrix::zeros(6, 2);
        assert!(matches!(p.input_transform(), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn power_pairing_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = 18;
            let w = DMatrix::from_fn(n, n, |r, c| rng.gen_range(-1.0..1.0) + if r == c { 3.0 } else { 0.0 });
            let p = AutoencoderParams {
                w_e: w,
                b_e: DVector::zeros(n),
                w_d: DMatrix::identity(n, n),
                b_d: DVector::zeros(n),
            };
            let u = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let dq = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let nu = p.transform_input(&u).unwrap();
            let dxi = p.encode(&dq, Derivative::Velocity).unwrap();
            assert!((nu.dot(&dxi) - u.dot(&dq)).abs() < 1e-10 * (1.0 + u.dot(&dq).abs()));
        }
    }

    #[test]
    fn reconstruct_examples() {
        // orthonormal rows, q in row space
        let w_e = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.8, 0.0]);
        let p = AutoencoderParams {
            w_d: w_e.transpose(),
            w_e,
            b_e: DVector::zeros(2),
            b_d: DVector::zeros(4),
        };
        let q = DVector::from_vec(vec![2.0, 0.3, 0.4, 0.0]);
        assert_abs_diff_eq!(p.reconstruct(&q).unwrap(), q, epsilon = 1e-15);

        let zero = AutoencoderParams {
            w_e: DMatrix::zeros(2, 4),
            b_e: DVector::zeros(2),
            w_d: DMatrix::zeros(4, 2),
            b_d: DVector::zeros(4),
        };
        assert!(zero.reconstruct(&q).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn recon_loss_examples() {
        let id = AutoencoderParams::identity(4);
        let batch = DMatrix::from_fn(5, 4, |r, c| (r + c) as f64);
        assert_eq!(id.recon_loss(&batch), 0.0);

        let mut shifted = AutoencoderParams::identity(4);
        shifted.b_d[0] = 1.0;
        let one = DMatrix::from_row_slice(1, 4, &[0.3, 0.1, 0.2, 0.4]);
        assert_abs_diff_eq!(shifted.recon_loss(&one), 1.0, epsilon = 1e-15);
        shifted.b_d[0] = 2.0;
        assert_abs_diff_eq!(shifted.recon_loss(&one), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn subspace_data_is_reconstructed() {
        let (train, _) = subspace_data(300, 18, 3, 1);
        let (val, _) = {
            // same subspace: reuse seed to draw basis, new coefficients
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let basis = DMatrix::from_fn(18, 3, |_, _| rng.gen_range(-1.0..1.0));
            let offset = DVector::from_fn(18, |_, _| rng.gen_range(-2.0..2.0));
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut v = DMatrix::zeros(50, 18);
            for r in 0..50 {
                let coef = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
                v.row_mut(r).copy_from(&(&basis * coef + &offset).transpose());
            }
            (v, ())
        };
        let fit = train_autoencoder(&train, Some(&val), 3, &AutoencoderConfig::default()).unwrap();
        assert!(fit.params.recon_loss(&val) < 1e-8);
        assert!(fit.params.reconstruct_rows(&train).iter().zip(train.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
        assert_eq!(fit.history.train.len(), AutoencoderConfig::default().epochs + 1);
        assert_eq!(fit.history.validation.len(), fit.history.train.len());
    }

    #[test]
    fn full_rank_latent_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = DMatrix::from_fn(100, 8, |_, _| rng.gen_range(-1.0..1.0));
        let fit = train_autoencoder(&data, None, 8, &AutoencoderConfig::default()).unwrap();
        assert!(fit.params.recon_loss(&data) < 1e-8);
    }

    #[test]
    fn random_init_is_deterministic_and_converges() {
        let (train, _) = subspace_data(200, 6, 2, 4);
        let cfg = AutoencoderConfig {
            init: EncoderInit::Random,
            epochs: 3000,
            learning_rate: 0.05,
            seed: 7,
            ..Default::default()
        };
        let a = train_autoencoder(&train, None, 2, &cfg).unwrap();
        let b = train_autoencoder(&train, None, 2, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let first = a.history.train[0];
        let last = *a.history.train.last().unwrap();
        assert!(last < 1e-3 * first, "{first} -> {last}");
    }

    #[test]
    fn divergence_is_reported() {
        let (train, _) = subspace_data(50, 6, 2, 4);
        let cfg = AutoencoderConfig {
            init: EncoderInit::Random,
            learning_rate: 1e3,
            momentum: 0.0,
            epochs: 500,
            ..Default::default()
        };
        assert!(matches!(
            train_autoencoder(&(&train * 10.0), None, 2, &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn standardized_training_reports_physical_units() {
        let (mut train, _) = subspace_data(200, 6, 2, 8);
        train.column_mut(0).scale_mut(100.0);
        let cfg = AutoencoderConfig {
            standardize: true,
            ..Default::default()
        };
        let fit = train_autoencoder(&train, None, 2, &cfg).unwrap();
        assert!(fit.params.recon_loss(&train) < 1e-8);
    }

    #[test]
    fn decoder_finetune_keeps_encoder_and_respects_subspace() {
        let (contact, basis) = subspace_data(200, 10, 2, 21);
        let step1 = train_autoencoder(&contact, None, 2, &AutoencoderConfig::default()).unwrap().params;
        // more samples on the same affine subspace
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let offset = contact.row(0).transpose() - &basis * DVector::zeros(2);
        let mut all = DMatrix::zeros(100, 10);
        for r in 0..100 {
            let c = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            all.row_mut(r).copy_from(&(&basis * c + &offset).transpose());
        }
        let before = step1.recon_loss(&all);
        let step2 = finetune_decoder(&step1, &all, 0.0).unwrap();
        assert_eq!(step2.w_e, step1.w_e);
        assert_eq!(step2.b_e, step1.b_e);
        assert!(step2.recon_loss(&all) <= before * (1.0 + 1e-9) + 1e-18);
    }

    #[test]
    fn decoder_finetune_reduces_loss_with_flight_direction() {
        let (contact, _) = subspace_data(200, 10, 2, 31);
        let step1 = train_autoencoder(&contact, None, 2, &AutoencoderConfig::default()).unwrap().params;
        // add a direction unseen in contact data
        let mut all = contact.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for mut row in all.row_iter_mut() {
            row[9] += rng.gen_range(-0.5..0.5);
            row[4] += 0.3 * row[9];
        }
        let before = step1.recon_loss(&all);
        let step2 = finetune_decoder(&step1, &all, 0.0).unwrap();
        assert!(step2.recon_loss(&all) < before);
    }

    #[test]
    fn anchoring_matches_reference_and_preserves_reconstruction() {
        let (data, basis) = subspace_data(200, 8, 2, 41);
        let params = train_autoencoder(&data, None, 2, &AutoencoderConfig::default()).unwrap().params;
        let pinv = linalg::pinv(&basis, RCOND);
        let reference = LatentReference {
            b: -(&pinv * data.row(0).transpose()),
            w: pinv,
        };
        let anchored = anchor_latent(&params, &reference, &data).unwrap();
        let z = anchored.encode_rows(&data, Derivative::Position);
        let mut want = &data * reference.w.transpose();
        for mut r in want.row_iter_mut() {
            r += reference.b.transpose();
        }
        assert!((z - want).amax() < 1e-9);
        let r1 = params.reconstruct_rows(&data);
        let r2 = anchored.reconstruct_rows(&data);
        assert!((r1 - r2).amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn shared_weights_for_derivatives(xs in proptest::collection::vec(-10f64..10.0, 6), ys in proptest::collection::vec(-10f64..10.0, 6), a in -3f64..3.0, b in -3f64..3.0) {
            let p = AutoencoderParams {
                w_e: DMatrix::from_fn(3, 6, |r, c| (r as f64 + 1.0) * 0.3 - c as f64 * 0.1),
                b_e: DVector::from_vec(vec![1.0, -2.0, 0.5]),
                w_d: DMatrix::zeros(6, 3),
                b_d: DVector::zeros(6),
            };
            let x = DVector::from_vec(xs);
            let y = DVector::from_vec(ys);
            let v = p.encode(&x, Derivative::Velocity).unwrap();
            let acc = p.encode(&x, Derivative::Acceleration).unwrap();
            prop_assert_eq!(&v, &acc);
            let lhs = p.encode(&(&x * a + &y * b), Derivative::Velocity).unwrap();
            let rhs = v * a + p.encode(&y, Derivative::Velocity).unwrap() * b;
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }

        #[test]
        fn recon_loss_nonnegative(entries in proptest::collection::vec(-5f64..5.0, 12)) {
            let p = AutoencoderParams {
                w_e: DMatrix::from_row_slice(1, 4, &[0.5, -0.5, 0.1, 0.0]),
                b_e: DVector::from_element(1, 0.2),
                w_d: DMatrix::from_column_slice(4, 1, &[1.0, 0.0, -1.0, 0.3]),
                b_d: DVector::zeros(4),
            };
            let batch = DMatrix::from_row_slice(3, 4, &entries);
            prop_assert!(p.recon_loss(&batch) >= 0.0);
        }
    }
}
