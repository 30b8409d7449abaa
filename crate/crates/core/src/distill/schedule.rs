use serde::{Deserialize, Serialize};

use super::BatchSource;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// `ratio_in` anchor draws followed by `ratio_out` augmented draws, repeated.
    #[default]
    DeterministicCycle,
    /// Independent draws, anchor with probability `ratio_in / (ratio_in + ratio_out)`.
    Bernoulli,
}

/// How often training batches come from the anchor set versus the
/// augmentation stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSchedule {
    pub ratio_in: u32,
    pub ratio_out: u32,
    pub mode: ScheduleMode,
    pub seed: u64,
}

impl Default for SamplingSchedule {
    fn default() -> Self {
        Self { ratio_in: 1, ratio_out: 2, mode: ScheduleMode::DeterministicCycle, seed: 0 }
    }
}

impl SamplingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.ratio_in + self.ratio_out == 0 {
            return Err(Error::config("sampling ratios must not both be zero"));
        }
        Ok(())
    }

    pub fn anchor_fraction(&self) -> f64 {
        self.ratio_in as f64 / (self.ratio_in + self.ratio_out) as f64
    }

    /// Source of draw `index`; a pure function of the schedule and `index`.
    pub fn at(&self, index: u64) -> BatchSource {
        let anchor = match self.mode {
            ScheduleMode::DeterministicCycle => {
                let period = (self.ratio_in + self.ratio_out) as u64;
                index % period < u64::from(self.ratio_in)
            }
            ScheduleMode::Bernoulli => {
                let bits = rng::mix(rng::derive(self.seed, "schedule") ^ rng::mix(index));
                let u = (bits >> 11) as f64 / (1u64 << 53) as f64;
                u < self.anchor_fraction()
            }
        };
        if anchor {
            BatchSource::Anchor
        } else {
            BatchSource::Augmented
        }
    }
}

/// A position within a [`SamplingSchedule`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleCursor {
    pub schedule: SamplingSchedule,
    pub position: u64,
}

impl ScheduleCursor {
    pub fn new(schedule: SamplingSchedule) -> Self {
        Self { schedule, position: 0 }
    }
}

pub fn schedule_next(cursor: &mut ScheduleCursor) -> BatchSource {
    let s = cursor.schedule.at(cursor.position);
    cursor.position += 1;
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_anchor(mode: ScheduleMode, n: usize, seed: u64) -> usize {
        let mut c = ScheduleCursor::new(SamplingSchedule { mode, seed, ..Default::default() });
        (0..n).filter(|_| schedule_next(&mut c) == BatchSource::Anchor).count()
    }

    #[test]
    fn cycle_is_exactly_one_to_two() {
        let mut c = ScheduleCursor::new(SamplingSchedule::default());
        let first: Vec<_> = (0..3).map(|_| schedule_next(&mut c)).collect();
        assert_eq!(first, [BatchSource::Anchor, BatchSource::Augmented, BatchSource::Augmented]);
        assert_eq!(count_anchor(ScheduleMode::DeterministicCycle, 30_000, 0), 10_000);
    }

    #[test]
    fn bernoulli_concentrates_near_one_third() {
        for seed in 0..5 {
            let frac = count_anchor(ScheduleMode::Bernoulli, 30_000, seed) as f64 / 30_000.0;
            assert!((frac - 1.0 / 3.0).abs() < 0.02, "seed {seed}: {frac}");
        }
    }
}
