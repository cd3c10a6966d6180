//! Jump datasets with known latent dynamics.
//!
//! Each jump integrates `ξ̈ = Θ(ξ, ξ̇, ν)·Ξ_phase` through a fixed phase
//! schedule and lifts the result with a seeded affine map `q = L·ξ + c`, so
//! `dq = L·ξ̇` and `ddq = L·ξ̈`. The latent input `ν(t)` is a sum of random
//! sinusoids in every phase with ground contact and zero in flight.
//!
//! Recorded inputs are built so that `Lᵀ·u = ν`. Writing `u = [τ; w]` and
//! splitting `L` into joint rows `L_j` and base rows `L_b`, the CoM wrench
//! `w` comes from vertical foot forces and the torques are
//!
//! ```text
//! τ = L_j (L_jᵀ L_j)⁻¹ (ν − L_bᵀ w)
//! ```

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::LatentReference;
use crate::data::{
    check_sigma, compute_com_wrench, perturb, save_dataset, split_dataset, ContactFlags, Dataset, DatasetMetadata,
    NoiseSigma, Phase, Trajectory,
};
use crate::library::FunctionLibrarySpec;
use crate::linalg::{condition_number, pinv};
use crate::ode::{integrate_intervals, IntegratorConfig};
use crate::serde_mat;
use crate::sindy::predict_with;
use crate::{Error, Result};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const MAX_LIFT_CONDITION: f64 = 1e4;
pub const LIFT_ATTEMPTS: usize = 10;

const BODY_MASS: f64 = 12.0;
const SINUSOIDS: usize = 3;
/// Foot offsets from the initial base position, ordered as the contact flags.
const FOOT_OFFSETS: [[f64; 2]; 4] = [[0.19, -0.13], [0.19, 0.13], [-0.19, -0.13], [-0.19, 0.13]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDynamics {
    pub phase: Phase,
    /// `p × l_true` coefficients over the declared library.
    #[serde(with = "serde_mat::matrix")]
    pub xi: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub phase: Phase,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub robot: String,
    /// Actuated joints; the configuration has `m + 6` coordinates.
    pub m: usize,
    pub l_true: usize,
    pub lift_seed: u64,
    /// Seeds initial states, inputs, noise and the split.
    pub seed: u64,
    pub library: FunctionLibrarySpec,
    pub dynamics: Vec<PhaseDynamics>,
    /// Phase sequence of every jump.
    pub schedule: Vec<ScheduleSegment>,
    pub n_jumps: usize,
    pub dt: f64,
    /// RK4 substeps per sample.
    pub substeps: usize,
    pub input_amplitude: f64,
    /// Half-widths of the uniform initial latent position and velocity.
    pub initial_position: f64,
    pub initial_velocity: f64,
    #[serde(default)]
    pub noise: NoiseSigma,
    /// Train/validation/test counts; 60/10/30 percent when absent.
    #[serde(default)]
    pub split: Option<(usize, usize, usize)>,
}

fn matching_library() -> FunctionLibrarySpec {
    FunctionLibrarySpec {
        poly_degree: 1,
        include_constant: true,
        include_sin_states: false,
        include_sin_velocities: false,
        include_inputs: true,
    }
}

/// Coefficients for the degree-1 library with constant and inputs over two
/// latent coordinates. `rows` lists `(term name, ξ̈_1, ξ̈_2)`.
fn coefficients(rows: &[(&str, f64, f64)]) -> DMatrix<f64> {
    let names = matching_library().term_names(2);
    let mut xi = DMatrix::zeros(names.len(), 2);
    for (name, a, b) in rows {
        let r = names.iter().position(|n| n == name).expect("known term");
        xi[(r, 0)] = *a;
        xi[(r, 1)] = *b;
    }
    xi
}

fn spring_damper(w1: f64, w2: f64, c: f64, offset: (f64, f64)) -> DMatrix<f64> {
    coefficients(&[
        ("1", offset.0, offset.1),
        ("ξ_1", -w1, 0.0),
        ("ξ_2", 0.0, -w2),
        ("ξ̇_1", -c, 0.0),
        ("ξ̇_2", 0.0, -c),
        ("ν_1", 1.0, 0.0),
        ("ν_2", 0.0, 1.0),
    ])
}

fn ballistic() -> DMatrix<f64> {
    coefficients(&[("1", 1.5, -9.81)])
}

impl SyntheticSpec {
    /// Spring-damper contact around a ballistic flight, 18 coordinates.
    pub fn two_phase() -> Self {
        Self {
            robot: "synthetic".into(),
            m: 12,
            l_true: 2,
            lift_seed: 7,
            seed: 0,
            library: matching_library(),
            dynamics: vec![
                PhaseDynamics {
                    phase: Phase::Contact,
                    xi: spring_damper(40.0, 60.0, 2.0, (0.0, 0.0)),
                },
                PhaseDynamics {
                    phase: Phase::Flight,
                    xi: ballistic(),
                },
            ],
            schedule: vec![
                ScheduleSegment {
                    phase: Phase::Contact,
                    steps: 150,
                },
                ScheduleSegment {
                    phase: Phase::Flight,
                    steps: 100,
                },
                ScheduleSegment {
                    phase: Phase::Contact,
                    steps: 150,
                },
            ],
            n_jumps: 20,
            dt: 0.002,
            substeps: 10,
            input_amplitude: 5.0,
            initial_position: 0.3,
            initial_velocity: 1.0,
            noise: NoiseSigma::default(),
            split: None,
        }
    }

    /// Full contact, rear-feet contact, then flight.
    pub fn froggy() -> Self {
        Self {
            dynamics: vec![
                PhaseDynamics {
                    phase: Phase::Contact,
                    xi: spring_damper(40.0, 60.0, 2.0, (0.0, 0.0)),
                },
                PhaseDynamics {
                    phase: Phase::PartialContact,
                    xi: spring_damper(20.0, 30.0, 1.0, (0.5, -4.0)),
                },
                PhaseDynamics {
                    phase: Phase::Flight,
                    xi: ballistic(),
                },
            ],
            schedule: vec![
                ScheduleSegment {
                    phase: Phase::Contact,
                    steps: 120,
                },
                ScheduleSegment {
                    phase: Phase::PartialContact,
                    steps: 60,
                },
                ScheduleSegment {
                    phase: Phase::Flight,
                    steps: 100,
                },
            ],
            ..Self::two_phase()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "two-phase" | "two_phase" => Ok(Self::two_phase()),
            "froggy" => Ok(Self::froggy()),
            other => Err(Error::Config(format!(
                "unknown synthetic preset `{other}` (expected two-phase or froggy)"
            ))),
        }
    }

    pub fn full_dim(&self) -> usize {
        self.m + 6
    }

    pub fn samples_per_jump(&self) -> usize {
        self.schedule.iter().map(|s| s.steps).sum()
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        self.split.unwrap_or_else(|| {
            let train = self.n_jumps * 6 / 10;
            let val = self.n_jumps / 10;
            (train, val, self.n_jumps - train - val)
        })
    }

    pub fn dynamics_for(&self, phase: Phase) -> Option<&DMatrix<f64>> {
        self.dynamics.iter().find(|d| d.phase == phase).map(|d| &d.xi)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.l_true == 0 || self.l_true > self.m {
            return cfg(format!("l_true must be in 1..={}, got {}", self.m, self.l_true));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.substeps == 0 {
            return cfg("synthetic dt and substeps must be positive".into());
        }
        if self.n_jumps == 0 || self.schedule.is_empty() {
            return cfg("synthetic dataset needs at least one jump and one schedule segment".into());
        }
        self.library.validate()?;
        check_sigma(&self.noise)?;
        let p = self.library.term_count(self.l_true);
        for (i, d) in self.dynamics.iter().enumerate() {
            if self.dynamics[..i].iter().any(|e| e.phase == d.phase) {
                return cfg(format!("duplicate dynamics for phase {}", d.phase));
            }
            if d.xi.shape() != (p, self.l_true) {
                return Err(Error::shape(
                    "synthetic coefficient matrix",
                    format!("{p}x{}", self.l_true),
                    format!("{}x{}", d.xi.nrows(), d.xi.ncols()),
                ));
            }
        }
        for s in &self.schedule {
            if s.steps < 3 {
                return cfg(format!("schedule segment {} has {} steps, need at least 3", s.phase, s.steps));
            }
            if self.dynamics_for(s.phase).is_none() {
                return Err(Error::MissingPhaseModel(s.phase));
            }
        }
        let (a, b, c) = self.split_counts();
        if a + b + c != self.n_jumps {
            return cfg(format!("split {a}+{b}+{c} does not cover {} jumps", self.n_jumps));
        }
        Ok(())
    }
}

/// Latent signals of one generated jump, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub xi: DMatrix<f64>,
    pub dxi: DMatrix<f64>,
    pub ddxi: DMatrix<f64>,
    pub nu: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub l_true: usize,
    #[serde(with = "serde_mat::matrix")]
    pub lift: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    pub offset: DVector<f64>,
    pub lift_condition: f64,
    /// Seed the accepted lift was drawn from.
    pub lift_seed: u64,
    pub library: FunctionLibrarySpec,
    pub terms: Vec<String>,
    pub phases: Vec<PhaseDynamics>,
    #[serde(skip)]
    pub latent: Vec<LatentPath>,
}

impl GroundTruth {
    pub fn phase(&self, phase: Phase) -> Option<&DMatrix<f64>> {
        self.phases.iter().find(|d| d.phase == phase).map(|d| &d.xi)
    }

    /// Affine encoder `ξ = L⁺ (q − c)` inverting the lift.
    pub fn latent_reference(&self) -> LatentReference {
        let w = pinv(&self.lift, 1e-12);
        let b = -(&w * &self.offset);
        LatentReference { w, b }
    }

    /// Configuration accelerations `ddq = L·ξ̈` of jump `j`.
    pub fn ddq(&self, j: usize) -> DMatrix<f64> {
        &self.latent[j].ddxi * self.lift.transpose()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("ground truth serialises");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: e.to_string(),
        })
    }
}

/// Seeded `n × l` lift with full column rank. Draws are rejected while the
/// triangular factor is worse conditioned than [`MAX_LIFT_CONDITION`].
pub fn random_lift(n: usize, l: usize, seed: u64) -> Result<(DMatrix<f64>, f64, u64)> {
    let mut worst = f64::INFINITY;
    for attempt in 0..LIFT_ATTEMPTS {
        let s = seed.wrapping_add(attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let normal = rand_distr::StandardNormal;
        let g = DMatrix::from_fn(n, l, |_, _| rng.sample::<f64, _>(normal));
        let qr = g.qr();
        let r = qr.r();
        let condition = condition_number(&r);
        if condition <= MAX_LIFT_CONDITION {
            let lift = qr.q() * r / (n as f64).sqrt();
            return Ok((lift, condition, s));
        }
        log::warn!("lift from seed {s} has condition {condition:.3e}; redrawing");
        worst = worst.min(condition);
    }
    Err(Error::IllConditionedLift {
        attempts: LIFT_ATTEMPTS,
        condition: worst,
    })
}

fn flags(phase: Phase) -> ContactFlags {
    match phase {
        Phase::Contact => ContactFlags::ALL,
        Phase::PartialContact => ContactFlags::REAR,
        Phase::Flight => ContactFlags::NONE,
    }
}

/// `Σ a·sin(2πft + φ)` per latent coordinate.
struct SmoothInput {
    waves: Vec<[(f64, f64, f64); SINUSOIDS]>,
}

impl SmoothInput {
    fn random(l: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..l)
            .map(|_| {
                std::array::from_fn(|_| {
                    (
                        amplitude / SINUSOIDS as f64 * rng.gen_range(0.5..1.0),
                        rng.gen_range(0.5..4.0),
                        rng.gen_range(0.0..2.0 * PI),
                    )
                })
            })
            .collect();
        Self { waves }
    }

    fn at(&self, t: f64, phase: Phase) -> DVector<f64> {
        DVector::from_fn(self.waves.len(), |i, _| {
            if phase == Phase::Flight {
                return 0.0;
            }
            self.waves[i].iter().map(|(a, f, p)| a * (2.0 * PI * f * t + p).sin()).sum()
        })
    }
}

struct Lift<'a> {
    l: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
    /// `L_j (L_jᵀ L_j)⁻¹`
    torque_map: DMatrix<f64>,
    base_rows: DMatrix<f64>,
}

impl<'a> Lift<'a> {
    fn new(l: &'a DMatrix<f64>, c: &'a DVector<f64>, m: usize) -> Result<Self> {
        let lj = l.rows(0, m).into_owned();
        let gram = lj.transpose() * &lj;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Config("joint rows of the lift are rank deficient".into()))?;
        Ok(Self {
            l,
            c,
            torque_map: lj * inv,
            base_rows: l.rows(m, 6).into_owned(),
        })
    }

    fn torques(&self, nu: &DVector<f64>, wrench: &DVector<f64>) -> DVector<f64> {
        &self.torque_map * (nu - self.base_rows.transpose() * wrench)
    }
}

fn simulate_jump(
    spec: &SyntheticSpec,
    lift: &Lift<'_>,
    library: &crate::library::Library,
    name: String,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, LatentPath)> {
    let l = spec.l_true;
    let m = spec.m;
    let n_samples = spec.samples_per_jump();
    let labels: Vec<Phase> = spec
        .schedule
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.phase, s.steps))
        .collect();
    let times: Vec<f64> = (0..n_samples).map(|k| k as f64 * spec.dt).collect();

    let mut y0 = DVector::zeros(2 * l);
    for i in 0..l {
        y0[i] = rng.gen_range(-spec.initial_position..=spec.initial_position);
        y0[l + i] = rng.gen_range(-spec.initial_velocity..=spec.initial_velocity);
    }
    let input = SmoothInput::random(l, spec.input_amplitude, rng);

    let accel = |phase: Phase, t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let xi = spec.dynamics_for(phase).ok_or(Error::MissingPhaseModel(phase))?;
        let pos = y.rows(0, l).into_owned();
        let vel = y.rows(l, l).into_owned();
        predict_with(library, xi, &pos, &vel, &input.at(t, phase))
    };
    let mut rhs = |k: usize, t: f64, y: &DVector<f64>| {
        let a = accel(labels[k], t, y)?;
        let mut dy = DVector::zeros(2 * l);
        dy.rows_mut(0, l).copy_from(&y.rows(l, l));
        dy.rows_mut(l, l).copy_from(&a);
        Ok(dy)
    };
    let states = integrate_intervals(&mut rhs, &times, &y0, &IntegratorConfig::fixed(spec.substeps))?;

    let mut path = LatentPath {
        xi: DMatrix::zeros(n_samples, l),
        dxi: DMatrix::zeros(n_samples, l),
        ddxi: DMatrix::zeros(n_samples, l),
        nu: DMatrix::zeros(n_samples, l),
    };
    for (k, y) in states.iter().enumerate() {
        path.xi.row_mut(k).copy_from(&y.rows(0, l).transpose());
        path.dxi.row_mut(k).copy_from(&y.rows(l, l).transpose());
        path.ddxi.row_mut(k).copy_from(&accel(labels[k], times[k], y)?.transpose());
        path.nu.row_mut(k).copy_from(&input.at(times[k], labels[k]).transpose());
    }

    let q = &path.xi * lift.l.transpose() + DMatrix::from_fn(n_samples, m + 6, |_, c| lift.c[c]);
    let dq = &path.dxi * lift.l.transpose();

    let base0 = Vector3::new(q[(0, m)], q[(0, m + 1)], q[(0, m + 2)]);
    let feet: [Vector3<f64>; 4] = std::array::from_fn(|i| Vector3::new(base0.x + FOOT_OFFSETS[i][0], base0.y + FOOT_OFFSETS[i][1], 0.0));
    let mut tau = DMatrix::zeros(n_samples, m);
    let mut forces = DMatrix::zeros(n_samples, 12);
    let mut positions = DMatrix::zeros(n_samples, 12);
    let mut contact = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let c = flags(labels[k]);
        let mut f = [Vector3::zeros(); 4];
        let share = BODY_MASS * 9.81 / c.count().max(1) as f64;
        for i in 0..4 {
            if c.foot(i) {
                f[i] = Vector3::new(0.0, 0.0, share * (1.0 + 0.2 * (4.0 * PI * times[k]).sin()));
            }
            for d in 0..3 {
                forces[(k, 3 * i + d)] = f[i][d];
                positions[(k, 3 * i + d)] = feet[i][d];
            }
        }
        let base = Vector3::new(q[(k, m)], q[(k, m + 1)], q[(k, m + 2)]);
        let wrench = compute_com_wrench(&f, &feet, &base);
        let w = DVector::from_column_slice(wrench.as_slice());
        tau.row_mut(k).copy_from(&lift.torques(&path.nu.row(k).transpose(), &w).transpose());
        contact.push(c);
    }

    let traj = Trajectory {
        name,
        timestamps: times,
        q,
        dq,
        tau,
        contact,
        foot_forces: Some(forces),
        foot_positions: Some(positions),
        com_positions: None,
        leg_jacobians: None,
    };
    Ok((traj, path))
}

/// Simulates every jump of `spec` and returns the recordings together with
/// the hidden ground truth.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset<Trajectory>, GroundTruth)> {
    spec.validate()?;
    let n = spec.full_dim();
    let l = spec.l_true;
    let (lift, lift_condition, lift_seed) = random_lift(n, l, spec.lift_seed)?;
    let mut offset_rng = ChaCha8Rng::seed_from_u64(lift_seed);
    offset_rng.set_stream(1);
    let mut offset = DVector::from_fn(n, |_, _| offset_rng.gen_range(-0.5..0.5));
    offset[spec.m + 2] = 0.3;

    let library = spec.library.library(l)?;
    let lifted = Lift::new(&lift, &offset, spec.m)?;
    let mut jumps = Vec::with_capacity(spec.n_jumps);
    let mut latent = Vec::with_capacity(spec.n_jumps);
    for j in 0..spec.n_jumps {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(j as u64);
        let (mut traj, path) = simulate_jump(spec, &lifted, &library, format!("jump_{j:03}"), &mut rng)?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        noise_rng.set_stream((1 << 32) | j as u64);
        perturb(&mut traj, &spec.noise, &mut noise_rng);
        jumps.push(traj);
        latent.push(path);
    }
    let noisy = spec.noise.q > 0.0 || spec.noise.dq > 0.0 || spec.noise.tau > 0.0;
    let dataset = Dataset {
        split: vec![crate::data::Split::Train; jumps.len()],
        jumps,
        metadata: DatasetMetadata {
            robot: spec.robot.clone(),
            m: spec.m,
            dt: spec.dt,
            noise: noisy.then(|| spec.noise.clone()),
        },
    };
    let dataset = split_dataset(&dataset, spec.split_counts(), spec.seed)?;
    let truth = GroundTruth {
        l_true: l,
        lift,
        offset,
        lift_condition,
        lift_seed,
        library: spec.library.clone(),
        terms: spec.library.term_names(l),
        phases: spec.dynamics.clone(),
        latent,
    };
    Ok((dataset, truth))
}

/// Writes the dataset files and the ground-truth sidecar into `dir`.
pub fn save_synthetic(dataset: &Dataset<Trajectory>, truth: &GroundTruth, dir: &Path) -> Result<()> {
    save_dataset(dataset, dir)?;
    truth.save(&dir.join(GROUND_TRUTH_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{differentiate_segments, segment_phases, DatasetSchema};
    use crate::linalg::{center_rows, column_means, singular_values};

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_jumps: 4,
            split: Some((2, 1, 1)),
            ..SyntheticSpec::two_phase()
        }
    }

    #[test]
    fn lies_on_affine_subspace() {
        let (ds, truth) = generate(&small()).unwrap();
        let q = &ds.jumps[0].q;
        let centered = center_rows(q, &column_means(q));
        let s = singular_values(&centered);
        assert!(s[truth.l_true] < 1e-9 * s[0], "{s:?}");
    }

    #[test]
    fn accelerations_match_differentiated_velocities() {
        let (ds, truth) = generate(&small()).unwrap();
        let traj = &ds.jumps[1];
        let (_, segments) = segment_phases(&traj.contact);
        let fd = differentiate_segments(traj, &segments).unwrap();
        let exact = truth.ddq(1);
        let scale = exact.amax();
        // interior samples only: the one-sided end stencils are first-order
        // accurate across the ends of each segment
        for seg in &segments {
            for k in seg.start + 1..seg.end {
                let err = (fd.row(k) - exact.row(k)).amax();
                assert!(err < 1e-3 * scale, "sample {k}: {err}");
            }
        }
    }

    #[test]
    fn inputs_satisfy_transpose_relation() {
        let spec = small();
        let (ds, truth) = generate(&spec).unwrap();
        let processed = crate::data::preprocess(&ds.jumps[0], &Default::default()).unwrap();
        let nu = &processed.u * &truth.lift;
        let err = (nu - &truth.latent[0].nu).amax();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, truth) = generate(&small()).unwrap();
        save_synthetic(&ds, &truth, dir.path()).unwrap();
        let loaded = crate::data::load_dataset(dir.path(), &DatasetSchema::default()).unwrap();
        for (a, b) in loaded.jumps.iter().zip(&ds.jumps) {
            assert_eq!(Trajectory { name: b.name.clone(), ..a.clone() }, *b);
        }
        assert_eq!(loaded.split, ds.split);
        let t2 = GroundTruth::load(&dir.path().join(GROUND_TRUTH_FILE)).unwrap();
        assert_eq!(t2.lift, truth.lift);
        assert_eq!(t2.phases, truth.phases);
        assert!(t2.latent.is_empty());
    }

    #[test]
    fn froggy_phase_sequence() {
        let (ds, _) = generate(&SyntheticSpec {
            n_jumps: 2,
            split: Some((1, 0, 1)),
            ..SyntheticSpec::froggy()
        })
        .unwrap();
        for j in &ds.jumps {
            let (_, segs) = segment_phases(&j.contact);
            let seq: Vec<Phase> = segs.iter().map(|s| s.phase).collect();
            assert_eq!(seq, [Phase::Contact, Phase::PartialContact, Phase::Flight]);
        }
    }

    #[test]
    fn reference_encoder_recovers_latent() {
        let (ds, truth) = generate(&small()).unwrap();
        let r = truth.latent_reference();
        let z = &ds.jumps[2].q * r.w.transpose();
        for k in 0..z.nrows() {
            let xi = z.row(k).transpose() + &r.b;
            assert!((xi - truth.latent[2].xi.row(k).transpose()).amax() < 1e-10);
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = small();
        s.schedule[1].steps = 2;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = small();
        s.dynamics.pop();
        assert!(matches!(s.validate(), Err(Error::MissingPhaseModel(Phase::Flight))));
        let mut s = small();
        s.l_true = 13;
        assert!(s.validate().is_err());
        assert!(SyntheticSpec::preset("nope").is_err());
    }

    #[test]
    fn spec_survives_toml() {
        let s = SyntheticSpec::froggy();
        let text = toml::to_string(&s).unwrap();
        assert_eq!(toml::from_str::<SyntheticSpec>(&text).unwrap(), s);
    }

    #[test]
    fn lift_is_well_conditioned() {
        let (lift, cond, seed) = random_lift(18, 2, 3).unwrap();
        assert_eq!(lift.shape(), (18, 2));
        assert!(cond <= MAX_LIFT_CONDITION);
        assert_eq!(seed, 3);
    }
}
