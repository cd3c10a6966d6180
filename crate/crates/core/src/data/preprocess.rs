use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{segment_phases, Dataset, PhaseSegment, ProcessedTrajectory, Trajectory};
use crate::{Error, Result};

/// Jacobians with a larger 2-norm condition number are rejected.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e8;

const DT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    /// Differentiate each phase segment separately so that the kinks at
    /// touchdown and liftoff do not leak into neighbouring samples.
    pub segment_aware: bool,
    /// Odd centred moving-average window applied to the accelerations.
    pub smoothing_window: Option<usize>,
    pub jacobian_condition_limit: f64,
    /// Use a zero wrench when the file carries neither forces nor jacobians.
    pub allow_missing_grf: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            segment_aware: true,
            smoothing_window: None,
            jacobian_condition_limit: DEFAULT_CONDITION_LIMIT,
            allow_missing_grf: false,
        }
    }
}

/// Where the per-foot ground reaction forces come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrfSource {
    Measured,
    Jacobians,
    Absent,
}

impl GrfSource {
    pub fn of(traj: &Trajectory) -> Self {
        if traj.foot_forces.is_some() {
            GrfSource::Measured
        } else if traj.leg_jacobians.is_some() {
            GrfSource::Jacobians
        } else {
            GrfSource::Absent
        }
    }
}

fn check_uniform(timestamps: &[f64]) -> Result<f64> {
    let n = timestamps.len();
    let mean = (timestamps[n - 1] - timestamps[0]) / (n - 1) as f64;
    for (i, w) in timestamps.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - mean).abs() > DT_TOLERANCE * mean.abs() {
            return Err(Error::NonUniformStep { index: i, step, mean });
        }
    }
    Ok(mean)
}

/// Second-order finite differences down the columns of `values`: central
/// in the interior, one-sided three-point at both ends.
fn finite_difference(values: &DMatrix<f64>, timestamps: &[f64], context: &str) -> Result<DMatrix<f64>> {
    let t = values.nrows();
    if t < 3 {
        return Err(Error::TooFewSamples {
            context: context.to_string(),
            samples: t,
        });
    }
    let dt = check_uniform(timestamps)?;
    let h2 = 2.0 * dt;
    let mut out = DMatrix::zeros(t, values.ncols());
    for c in 0..values.ncols() {
        let v = values.column(c);
        out[(0, c)] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / h2;
        for k in 1..t - 1 {
            out[(k, c)] = (v[k + 1] - v[k - 1]) / h2;
        }
        out[(t - 1, c)] = (3.0 * v[t - 1] - 4.0 * v[t - 2] + v[t - 3]) / h2;
    }
    Ok(out)
}

/// Accelerations from recorded velocities.
pub fn differentiate_velocity(traj: &Trajectory) -> Result<DMatrix<f64>> {
    finite_difference(&traj.dq, &traj.timestamps, &traj.name)
}

/// Like [`differentiate_velocity`], but each segment of three or more
/// samples is differentiated on its own. Shorter segments keep the
/// whole-trajectory estimate.
pub fn differentiate_segments(traj: &Trajectory, segments: &[PhaseSegment]) -> Result<DMatrix<f64>> {
    let mut out = differentiate_velocity(traj)?;
    for s in segments.iter().filter(|s| s.len() >= 3) {
        let rows = traj.dq.rows(s.start, s.len()).into_owned();
        let local = finite_difference(&rows, &traj.timestamps[s.start..=s.end], &traj.name)?;
        out.rows_mut(s.start, s.len()).copy_from(&local);
    }
    Ok(out)
}

fn moving_average(values: &mut DMatrix<f64>, start: usize, len: usize, window: usize) {
    let half = window / 2;
    let src = values.rows(start, len).into_owned();
    for k in 0..len {
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(len - 1);
        let count = (hi - lo + 1) as f64;
        for c in 0..src.ncols() {
            let sum: f64 = (lo..=hi).map(|r| src[(r, c)]).sum();
            values[(start + k, c)] = sum / count;
        }
    }
}

/// `F = J^{-T} τ` for one leg.
pub fn compute_foot_force(jacobian: &DMatrix<f64>, leg_torques: &DVector<f64>) -> Result<Vector3<f64>> {
    compute_foot_force_bounded(jacobian, leg_torques, DEFAULT_CONDITION_LIMIT)
}

pub fn compute_foot_force_bounded(
    jacobian: &DMatrix<f64>,
    leg_torques: &DVector<f64>,
    condition_limit: f64,
) -> Result<Vector3<f64>> {
    if jacobian.shape() != (3, 3) {
        return Err(Error::shape(
            "leg jacobian (3 joints per leg)",
            "3x3",
            format!("{}x{}", jacobian.nrows(), jacobian.ncols()),
        ));
    }
    if leg_torques.len() != 3 {
        return Err(Error::shape("leg torques", 3, leg_torques.len()));
    }
    let j = Matrix3::from_iterator(jacobian.iter().copied());
    let sv = j.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < condition_limit) {
        return Err(Error::SingularJacobian { condition });
    }
    let tau = Vector3::new(leg_torques[0], leg_torques[1], leg_torques[2]);
    j.transpose()
        .lu()
        .solve(&tau)
        .ok_or(Error::SingularJacobian { condition })
}

/// Net linear and angular momentum rates at the CoM from four foot forces.
/// Feet out of contact must be passed with zero force.
pub fn compute_com_wrench(
    foot_forces: &[Vector3<f64>; 4],
    foot_positions: &[Vector3<f64>; 4],
    com: &Vector3<f64>,
) -> Vector6<f64> {
    let mut linear = Vector3::zeros();
    let mut angular = Vector3::zeros();
    for (f, p) in foot_forces.iter().zip(foot_positions) {
        linear += f;
        angular += (p - com).cross(f);
    }
    Vector6::new(linear.x, linear.y, linear.z, angular.x, angular.y, angular.z)
}

/// Stacks joint torques and the CoM wrench into `u = [τ; F]`.
pub fn assemble_input(tau: &DVector<f64>, wrench: &Vector6<f64>) -> DVector<f64> {
    let m = tau.len();
    DVector::from_fn(m + 6, |i, _| if i < m { tau[i] } else { wrench[i - m] })
}

/// Inverse of [`assemble_input`].
pub fn split_input(u: &DVector<f64>) -> Result<(DVector<f64>, Vector6<f64>)> {
    if u.len() < 6 {
        return Err(Error::shape("input vector", ">= 6", u.len()));
    }
    let m = u.len() - 6;
    Ok((u.rows(0, m).into_owned(), Vector6::from_iterator(u.rows(m, 6).iter().copied())))
}

fn row_vec3(mat: &DMatrix<f64>, row: usize, offset: usize) -> Vector3<f64> {
    Vector3::new(mat[(row, offset)], mat[(row, offset + 1)], mat[(row, offset + 2)])
}

fn wrench_at(traj: &Trajectory, k: usize, source: GrfSource, opts: &PreprocessOptions) -> Result<Vector6<f64>> {
    let contact = traj.contact[k];
    if contact.count() == 0 || source == GrfSource::Absent {
        return Ok(Vector6::zeros());
    }
    let positions = traj.foot_positions.as_ref().ok_or_else(|| Error::MissingColumn {
        file: traj.name.clone().into(),
        column: "fp_0".into(),
    })?;
    let n_j = traj.joints() / 4;
    let mut forces = [Vector3::zeros(); 4];
    let mut feet = [Vector3::zeros(); 4];
    for foot in 0..4 {
        feet[foot] = row_vec3(positions, k, 3 * foot);
        if !contact.foot(foot) {
            continue;
        }
        forces[foot] = match source {
            GrfSource::Measured => row_vec3(traj.foot_forces.as_ref().unwrap(), k, 3 * foot),
            GrfSource::Jacobians => {
                let jac = traj.leg_jacobians.as_ref().unwrap();
                let j = DMatrix::from_row_iterator(3, 3, (0..9).map(|i| jac[(k, 9 * foot + i)]));
                let tau = DVector::from_fn(n_j, |i, _| traj.tau[(k, foot * n_j + i)]);
                compute_foot_force_bounded(&j, &tau, opts.jacobian_condition_limit)?
            }
            GrfSource::Absent => unreachable!(),
        };
    }
    Ok(compute_com_wrench(&forces, &feet, &traj.com_position(k)))
}

/// Fills accelerations, stacked inputs and phase labels.
pub fn preprocess(traj: &Trajectory, opts: &PreprocessOptions) -> Result<ProcessedTrajectory> {
    traj.validate()?;
    let (phases, segments) = segment_phases(&traj.contact);
    let mut ddq = if opts.segment_aware {
        differentiate_segments(traj, &segments)?
    } else {
        differentiate_velocity(traj)?
    };
    if let Some(w) = opts.smoothing_window.filter(|&w| w > 1) {
        if w % 2 == 0 {
            return Err(Error::Config(format!("smoothing window must be odd, got {w}")));
        }
        let spans: Vec<(usize, usize)> = if opts.segment_aware {
            segments.iter().map(|s| (s.start, s.len())).collect()
        } else {
            vec![(0, traj.len())]
        };
        for (start, len) in spans {
            moving_average(&mut ddq, start, len, w);
        }
    }

    let source = GrfSource::of(traj);
    if source == GrfSource::Absent && !opts.allow_missing_grf {
        return Err(Error::MissingColumn {
            file: traj.name.clone().into(),
            column: "ff_0 (or jacobian columns j0_00..)".into(),
        });
    }
    let m = traj.joints();
    let mut u = DMatrix::zeros(traj.len(), m + 6);
    for k in 0..traj.len() {
        let wrench = wrench_at(traj, k, source, opts)?;
        let tau = traj.tau.row(k).transpose();
        u.row_mut(k).copy_from(&assemble_input(&tau, &wrench).transpose());
    }
    Ok(ProcessedTrajectory {
        raw: traj.clone(),
        ddq,
        u,
        phases,
        segments,
    })
}

pub fn preprocess_dataset(raw: &Dataset<Trajectory>, opts: &PreprocessOptions) -> Result<Dataset> {
    let jumps = raw
        .jumps
        .iter()
        .map(|j| preprocess(j, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        jumps,
        split: raw.split.clone(),
        metadata: raw.metadata.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ContactFlags;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj_with_dq(dq: Vec<f64>, dt: f64) -> Trajectory {
        let t = dq.len();
        let n = 10;
        let mut dq_m = DMatrix::zeros(t, n);
        dq_m.column_mut(0).copy_from(&DVector::from_vec(dq));
        Trajectory {
            name: "test".into(),
            timestamps: (0..t).map(|k| k as f64 * dt).collect(),
            q: DMatrix::zeros(t, n),
            dq: dq_m,
            tau: DMatrix::zeros(t, 4),
            contact: vec![ContactFlags::ALL; t],
            foot_forces: None,
            foot_positions: None,
            com_positions: None,
            leg_jacobians: None,
        }
    }

    #[test]
    fn linear_ramp() {
        let tr = traj_with_dq(vec![0.0, 1.0, 2.0], 0.1);
        let a = differentiate_velocity(&tr).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(a[(k, 0)], 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_velocity_has_zero_acceleration() {
        let tr = traj_with_dq(vec![3.5; 7], 0.01);
        let a = differentiate_velocity(&tr).unwrap();
        assert!(a.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn sine_against_analytic_derivative() {
        let dt = 1.0 / 500.0;
        let n = 501;
        let tau = std::f64::consts::TAU;
        let dq: Vec<f64> = (0..n).map(|k| (tau * k as f64 * dt).sin()).collect();
        let tr = traj_with_dq(dq, dt);
        let a = differentiate_velocity(&tr).unwrap();
        let max_err = (0..n)
            .map(|k| (a[(k, 0)] - tau * (tau * k as f64 * dt).cos()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max error {max_err}");
    }

    #[test]
    fn rejects_non_uniform_steps() {
        let mut tr = traj_with_dq(vec![0.0, 1.0, 2.0, 3.0], 0.1);
        tr.timestamps[3] = 0.35;
        assert!(matches!(differentiate_velocity(&tr), Err(Error::NonUniformStep { .. })));
    }

    #[test]
    fn two_samples_is_too_few() {
        let tr = traj_with_dq(vec![0.0, 1.0], 0.1);
        assert!(matches!(differentiate_velocity(&tr), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn segment_aware_removes_kink_leakage() {
        // velocity ramps up then stays flat: acceleration 1 then 0
        let dt = 0.01;
        let dq: Vec<f64> = (0..20).map(|k| (k.min(10) as f64) * dt).collect();
        let mut tr = traj_with_dq(dq, dt);
        for k in 10..20 {
            tr.contact[k] = ContactFlags::NONE;
        }
        let (_, segs) = segment_phases(&tr.contact);
        let a = differentiate_segments(&tr, &segs).unwrap();
        for k in 0..10 {
            assert_abs_diff_eq!(a[(k, 0)], 1.0, epsilon = 1e-9);
        }
        for k in 10..20 {
            assert_abs_diff_eq!(a[(k, 0)], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn foot_force_identity_and_diagonal() {
        let tau = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let f = compute_foot_force(&DMatrix::identity(3, 3), &tau).unwrap();
        assert_eq!(f, Vector3::new(1.0, 2.0, 3.0));
        let j = DMatrix::from_diagonal_element(3, 3, 2.0);
        let f = compute_foot_force(&j, &DVector::from_vec(vec![2.0, 4.0, 6.0])).unwrap();
        assert_abs_diff_eq!(f, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-15);
    }

    #[test]
    fn singular_jacobian_reports_condition() {
        let mut j = DMatrix::identity(3, 3);
        j[(2, 2)] = 0.0;
        let err = compute_foot_force(&j, &DVector::from_vec(vec![1.0, 1.0, 1.0])).unwrap_err();
        match err {
            Error::SingularJacobian { condition } => assert!(condition > DEFAULT_CONDITION_LIMIT),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn random_jacobian_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let j = DMatrix::from_fn(3, 3, |r, c| rng.gen_range(-1.0..1.0) + if r == c { 2.0 } else { 0.0 });
            let tau = DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0));
            let f = compute_foot_force(&j, &tau).unwrap();
            let back = j.transpose() * DVector::from_column_slice(f.as_slice());
            assert!((back - &tau).amax() < 1e-10);
        }
    }

    #[test]
    fn wrench_examples() {
        let z = Vector3::zeros();
        let w = compute_com_wrench(
            &[Vector3::new(0.0, 0.0, 10.0), z, z, z],
            &[Vector3::new(1.0, 0.0, 0.0), z, z, z],
            &z,
        );
        assert_eq!(w, Vector6::new(0.0, 0.0, 10.0, 0.0, -10.0, 0.0));

        let w = compute_com_wrench(&[z; 4], &[Vector3::new(1.0, 2.0, 3.0); 4], &z);
        assert_eq!(w, Vector6::zeros());

        let f = Vector3::new(0.0, 0.0, 5.0);
        let p = [
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(1.0, -1.0, 0.0),
            Vector3::new(-1.0, 1.0, 0.0),
            Vector3::new(-1.0, -1.0, 0.0),
        ];
        let w = compute_com_wrench(&[f; 4], &p, &z);
        assert_abs_diff_eq!(w, Vector6::new(0.0, 0.0, 20.0, 0.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn input_assembly() {
        let u = assemble_input(&DVector::from_element(12, 1.0), &Vector6::zeros());
        assert_eq!(u.len(), 18);
        assert!(u.rows(0, 12).iter().all(|&x| x == 1.0));
        assert!(u.rows(12, 6).iter().all(|&x| x == 0.0));
        let z = assemble_input(&DVector::zeros(12), &Vector6::zeros());
        assert!(z.iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn assemble_split_round_trip(tau in proptest::collection::vec(-1e3f64..1e3, 4..16), w in proptest::array::uniform6(-1e3f64..1e3)) {
            let tau = DVector::from_vec(tau);
            let w = Vector6::from_column_slice(&w);
            let (t2, w2) = split_input(&assemble_input(&tau, &w)).unwrap();
            prop_assert_eq!(t2, tau);
            prop_assert_eq!(w2, w);
        }

        #[test]
        fn wrench_is_linear_in_forces(
            f in proptest::collection::vec(-50f64..50.0, 12),
            p in proptest::collection::vec(-1f64..1.0, 12),
            alpha in -10f64..10.0,
        ) {
            let forces: [Vector3<f64>; 4] = std::array::from_fn(|k| Vector3::new(f[3*k], f[3*k+1], f[3*k+2]));
            let pos: [Vector3<f64>; 4] = std::array::from_fn(|k| Vector3::new(p[3*k], p[3*k+1], p[3*k+2]));
            let com = Vector3::new(0.1, -0.2, 0.3);
            let scaled: [Vector3<f64>; 4] = std::array::from_fn(|k| forces[k] * alpha);
            let a = compute_com_wrench(&scaled, &pos, &com);
            let b = compute_com_wrench(&forces, &pos, &com) * alpha;
            prop_assert!((a - b).amax() < 1e-9 * (1.0 + b.amax()));
        }

        #[test]
        fn torque_round_trip(entries in proptest::collection::vec(-1f64..1.0, 9), tau in proptest::array::uniform3(-10f64..10.0)) {
            let j = DMatrix::from_row_slice(3, 3, &entries);
            let tau = DVector::from_column_slice(&tau);
            let sv = j.clone().singular_values();
            let cond = sv.max() / sv.min();
            prop_assume!(cond < 1e6);
            let f = compute_foot_force(&j, &tau).unwrap();
            let back = j.transpose() * DVector::from_column_slice(f.as_slice());
            prop_assert!((back - &tau).amax() < 1e-9);
        }

        #[test]
        fn exact_on_affine_velocity(a in -10f64..10.0, b in -10f64..10.0, n in 3usize..40) {
            let dt = 0.002;
            let tr = traj_with_dq((0..n).map(|k| a + b * k as f64 * dt).collect(), dt);
            let acc = differentiate_velocity(&tr).unwrap();
            for k in 0..n {
                prop_assert!((acc[(k, 0)] - b).abs() < 1e-7 * (1.0 + b.abs()));
            }
        }
    }
}
