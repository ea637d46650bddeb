//! Train/validation/test partitioning by source dialogue.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::state::{Fnv, PromptRecord, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, AugmentError> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(AugmentError::InvalidRatios(format!("{parts:?} must be non-negative")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(AugmentError::InvalidRatios(format!("{parts:?} sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Group counts per split by the largest-remainder method; they sum to
    /// `n`. Ties in the remainder go to train, then val.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let exact = [self.train, self.val, self.test].map(|r| r * n as f64);
        let mut counts = exact.map(|x| (x + 1e-9).floor() as usize);
        let mut left = n.saturating_sub(counts.iter().sum());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - counts[a] as f64;
            let fb = exact[b] - counts[b] as f64;
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

/// The record's dialogue id, or a hash of its first turn when it has none.
fn group_key(record: &PromptRecord) -> String {
    match &record.dialogue_id {
        Some(id) => id.clone(),
        None => {
            let mut h = Fnv::new();
            if let Some(t) = record.conversation.turns.first() {
                h.write(t.text.as_bytes());
            }
            format!("conversation-{:016x}", h.finish())
        }
    }
}

/// Assigns whole dialogues to splits: groups are sorted, shuffled by `seed`
/// and cut by [`SplitRatios::counts`]. Records keep their input order.
pub fn split_dataset(mut records: Vec<PromptRecord>, ratios: SplitRatios, seed: u64) -> Result<Vec<PromptRecord>, AugmentError> {
    ratios.validate()?;
    let groups: BTreeSet<String> = records.iter().map(group_key).collect();
    let mut groups: Vec<String> = groups.into_iter().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [train, val, _] = ratios.counts(groups.len());
    let assignment: HashMap<String, Split> = groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (g, split)
        })
        .collect();
    for r in &mut records {
        r.split = assignment[&group_key(r)];
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder() {
        assert_eq!(SplitRatios::new(0.8, 0.1, 0.1).unwrap().counts(10), [8, 1, 1]);
        assert_eq!(SplitRatios::new(1.0, 0.0, 0.0).unwrap().counts(7), [7, 0, 0]);
        assert_eq!(SplitRatios::new(0.5, 0.25, 0.25).unwrap().counts(3), [1, 1, 1]);
        assert_eq!(SplitRatios::new(0.6, 0.3, 0.1).unwrap().counts(3), [2, 1, 0]);
        assert_eq!(SplitRatios::new(0.34, 0.33, 0.33).unwrap().counts(100), [34, 33, 33]);
    }

    #[test]
    fn bad_ratios() {
        assert!(SplitRatios::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitRatios::new(1.5, -0.5, 0.0).is_err());
    }
}
