//! Jump trajectory datasets: loading, validation, preprocessing and
//! phase segmentation.
//!
//! A [`Trajectory`] is the raw per-jump recording. Preprocessing turns it
//! into a [`ProcessedTrajectory`] carrying accelerations, the stacked input
//! `u = [τ; F]` (joint torques followed by the CoM wrench) and per-sample
//! phase labels.

mod io;
mod phases;
mod preprocess;
mod split;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use io::{load_dataset, save_dataset, write_trajectory_csv, DatasetSchema, MANIFEST_FILE};
pub use phases::{segment_phases, PhaseSegment};
pub use preprocess::{
    assemble_input, compute_com_wrench, compute_foot_force, differentiate_segments,
    differentiate_velocity, preprocess, preprocess_dataset, split_input, GrfSource,
    PreprocessOptions,
};
pub use split::{add_noise, split_dataset, NoiseSigma};
pub(crate) use split::{check_sigma, perturb};

/// Motion phase of a hybrid jump, determined by which feet touch the ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Contact,
    PartialContact,
    Flight,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Contact, Phase::PartialContact, Phase::Flight];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Contact => "Contact",
            Phase::PartialContact => "PartialContact",
            Phase::Flight => "Flight",
        }
    }

    pub fn from_contact(flags: ContactFlags) -> Phase {
        match flags.count() {
            4 => Phase::Contact,
            0 => Phase::Flight,
            _ => Phase::PartialContact,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "contact" => Ok(Phase::Contact),
            "partialcontact" | "partial_contact" | "partial" => Ok(Phase::PartialContact),
            "flight" => Ok(Phase::Flight),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

/// Per-foot contact flags, ordered front-right, front-left, rear-right,
/// rear-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContactFlags(pub [bool; 4]);

impl ContactFlags {
    pub const ALL: ContactFlags = ContactFlags([true; 4]);
    pub const NONE: ContactFlags = ContactFlags([false; 4]);
    pub const REAR: ContactFlags = ContactFlags([false, false, true, true]);

    pub fn count(self) -> usize {
        self.0.iter().filter(|&&c| c).count()
    }

    pub fn foot(self, k: usize) -> bool {
        self.0[k]
    }
}

/// Raw time-stamped recording of one jump.
///
/// Matrices are row-per-sample. `q` and `dq` hold the `m` joint
/// coordinates followed by base position (x, y, z) and base ZYX Euler
/// angles (roll, pitch, yaw).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub name: String,
    pub timestamps: Vec<f64>,
    pub q: DMatrix<f64>,
    pub dq: DMatrix<f64>,
    pub tau: DMatrix<f64>,
    pub contact: Vec<ContactFlags>,
    /// World-frame ground reaction forces, 3 per foot.
    pub foot_forces: Option<DMatrix<f64>>,
    /// World-frame foot positions, 3 per foot.
    pub foot_positions: Option<DMatrix<f64>>,
    pub com_positions: Option<DMatrix<f64>>,
    /// Row-major 3×3 leg jacobians, 9 entries per foot.
    pub leg_jacobians: Option<DMatrix<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Number of actuated joints.
    pub fn joints(&self) -> usize {
        self.tau.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.q.ncols()
    }

    /// Mean sample spacing.
    pub fn mean_dt(&self) -> f64 {
        let n = self.timestamps.len();
        if n < 2 {
            return 0.0;
        }
        (self.timestamps[n - 1] - self.timestamps[0]) / (n - 1) as f64
    }

    /// Base position at sample `k`.
    pub fn base_position(&self, k: usize) -> nalgebra::Vector3<f64> {
        let m = self.joints();
        nalgebra::Vector3::new(self.q[(k, m)], self.q[(k, m + 1)], self.q[(k, m + 2)])
    }

    /// CoM position at sample `k`, falling back to the base position when
    /// no CoM channel was recorded.
    pub fn com_position(&self, k: usize) -> nalgebra::Vector3<f64> {
        match &self.com_positions {
            Some(c) => nalgebra::Vector3::new(c[(k, 0)], c[(k, 1)], c[(k, 2)]),
            None => self.base_position(k),
        }
    }

    /// Checks the structural invariants shared by every trajectory.
    pub fn validate(&self) -> crate::Result<()> {
        let t = self.len();
        let n = self.q.ncols();
        if n < 7 || !(n - 6).is_multiple_of(4) {
            return Err(crate::Error::shape(
                "configuration width (m + 6 with m divisible by 4)",
                "m + 6",
                n,
            ));
        }
        let m = n - 6;
        let check = |what: &str, mat: &DMatrix<f64>, cols: usize| -> crate::Result<()> {
            if mat.nrows() != t || mat.ncols() != cols {
                return Err(crate::Error::shape(
                    what,
                    format!("{t}x{cols}"),
                    format!("{}x{}", mat.nrows(), mat.ncols()),
                ));
            }
            Ok(())
        };
        check("q", &self.q, n)?;
        check("dq", &self.dq, n)?;
        check("tau", &self.tau, m)?;
        if self.contact.len() != t {
            return Err(crate::Error::shape("contact", t, self.contact.len()));
        }
        if let Some(f) = &self.foot_forces {
            check("foot_forces", f, 12)?;
        }
        if let Some(p) = &self.foot_positions {
            check("foot_positions", p, 12)?;
        }
        if let Some(c) = &self.com_positions {
            check("com_positions", c, 3)?;
        }
        if let Some(j) = &self.leg_jacobians {
            check("leg_jacobians", j, 36)?;
        }
        if t < 3 {
            return Err(crate::Error::TooFewSamples {
                context: self.name.clone(),
                samples: t,
            });
        }
        for (k, w) in self.timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(crate::Error::NonMonotoneTime {
                    file: self.name.clone().into(),
                    row: k + 1,
                });
            }
        }
        Ok(())
    }
}

/// A trajectory with accelerations, stacked inputs and phase labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedTrajectory {
    pub raw: Trajectory,
    pub ddq: DMatrix<f64>,
    /// `T × (m + 6)`: joint torques then the CoM wrench (linear momentum
    /// rate, angular momentum rate).
    pub u: DMatrix<f64>,
    pub phases: Vec<Phase>,
    pub segments: Vec<PhaseSegment>,
}

impl ProcessedTrajectory {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn q_row(&self, k: usize) -> DVector<f64> {
        self.raw.q.row(k).transpose()
    }

    pub fn dq_row(&self, k: usize) -> DVector<f64> {
        self.raw.dq.row(k).transpose()
    }

    pub fn ddq_row(&self, k: usize) -> DVector<f64> {
        self.ddq.row(k).transpose()
    }

    pub fn u_row(&self, k: usize) -> DVector<f64> {
        self.u.row(k).transpose()
    }

    /// Distinct phases in order of first appearance.
    pub fn phases_present(&self) -> Vec<Phase> {
        let mut out = Vec::new();
        for s in &self.segments {
            if !out.contains(&s.phase) {
                out.push(s.phase);
            }
        }
        out
    }
}

/// Assignment of a jump to a dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub robot: String,
    /// Number of actuated joints.
    pub m: usize,
    pub dt: f64,
    #[serde(default)]
    pub noise: Option<NoiseSigma>,
}

/// A collection of jumps with a train/validation/test assignment.
///
/// `J` is [`Trajectory`] straight out of [`load_dataset`] and
/// [`ProcessedTrajectory`] after [`preprocess_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<J = ProcessedTrajectory> {
    pub jumps: Vec<J>,
    pub split: Vec<Split>,
    pub metadata: DatasetMetadata,
}

impl<J> Dataset<J> {
    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    pub fn full_dim(&self) -> usize {
        self.metadata.m + 6
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.jumps.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = &J> {
        self.jumps
            .iter()
            .zip(&self.split)
            .filter(move |(_, s)| **s == split)
            .map(|(j, _)| j)
    }

    pub fn split_counts(&self) -> (usize, usize, usize) {
        let c = |s| self.split.iter().filter(|&&x| x == s).count();
        (c(Split::Train), c(Split::Validation), c(Split::Test))
    }
}

impl Dataset<ProcessedTrajectory> {
    /// Stacks the configurations of every sample in `split` labelled with
    /// one of `phases` (all phases when `None`).
    pub fn stack_configurations(&self, split: Split, phases: Option<&[Phase]>) -> DMatrix<f64> {
        let n = self.full_dim();
        let rows: Vec<_> = self
            .iter_split(split)
            .flat_map(|j| {
                (0..j.len())
                    .filter(move |&k| phases.is_none_or(|p| p.contains(&j.phases[k])))
                    .map(move |k| (j, k))
            })
            .collect();
        DMatrix::from_fn(rows.len(), n, |r, c| rows[r].0.raw.q[(rows[r].1, c)])
    }

    /// Phases present in the given split, in canonical order.
    pub fn phases_in(&self, split: Split) -> Vec<Phase> {
        let mut present = [false; 3];
        for j in self.iter_split(split) {
            for p in &j.phases {
                present[Phase::ALL.iter().position(|x| x == p).unwrap()] = true;
            }
        }
        Phase::ALL
            .iter()
            .zip(present)
            .filter(|(_, b)| *b)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Drops derived fields, keeping the raw recordings.
    pub fn to_raw(&self) -> Dataset<Trajectory> {
        Dataset {
            jumps: self.jumps.iter().map(|j| j.raw.clone()).collect(),
            split: self.split.clone(),
            metadata: self.metadata.clone(),
        }
    }
}
