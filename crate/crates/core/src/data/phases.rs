use serde::{Deserialize, Serialize};

use super::{ContactFlags, Phase};

/// Maximal run of samples sharing a phase label; `end` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSegment {
    pub phase: Phase,
    pub start: usize,
    pub end: usize,
}

impl PhaseSegment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Labels each sample from its contact flags and groups the labels into
/// maximal contiguous segments.
pub fn segment_phases(contact: &[ContactFlags]) -> (Vec<Phase>, Vec<PhaseSegment>) {
    let labels: Vec<Phase> = contact.iter().map(|&c| Phase::from_contact(c)).collect();
    let mut segments: Vec<PhaseSegment> = Vec::new();
    for (k, &phase) in labels.iter().enumerate() {
        match segments.last_mut() {
            Some(s) if s.phase == phase => s.end = k,
            _ => segments.push(PhaseSegment {
                phase,
                start: k,
                end: k,
            }),
        }
    }
    (labels, segments)
}
