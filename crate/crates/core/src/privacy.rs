//! Membership inference by Hamming distance to synthetic records.
//!
//! The attacker holds `n_r` training records and `n_r` held-out records and
//! claims a record was used for training when some synthetic record lies
//! within a normalized Hamming distance threshold of it.

use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("sequences have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need {needed} {what} records, have {available}")]
    InsufficientRecords {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("invalid attack config: {0}")]
    InvalidConfig(&'static str),
}

/// Differing positions and that count divided by the length.
pub fn hamming(a: &[u32], b: &[u32]) -> Result<(usize, f64), PrivacyError> {
    if a.len() != b.len() {
        return Err(PrivacyError::LengthMismatch(a.len(), b.len()));
    }
    let raw = a.iter().zip(b).filter(|(x, y)| x != y).count();
    let normalized = if a.is_empty() { 0.0 } else { raw as f64 / a.len() as f64 };
    Ok((raw, normalized))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Records drawn from each of the training and held-out sets.
    pub n_r: usize,
    /// Ascending normalized distances in `[0, 1]`.
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), PrivacyError> {
        if self.n_r == 0 {
            return Err(PrivacyError::InvalidConfig("n_r must be at least 1"));
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(PrivacyError::InvalidConfig("thresholds must lie in [0, 1]"));
        }
        if self.thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(PrivacyError::InvalidConfig("thresholds must be ascending"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Train,
    Heldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub source: Source,
    /// Index into the source set.
    pub index: usize,
    /// Smallest normalized distance to any synthetic record; `None` when
    /// there are no synthetic records.
    pub nearest: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub flagged_count: usize,
    pub true_positives: usize,
    /// True positives over flagged records; 0 when nothing is flagged.
    pub precision: f64,
    /// True positives over `n_r`.
    pub recall: f64,
    /// Pool positions of the flagged records.
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub n_r: usize,
    pub seed: u64,
    pub pool: Vec<PoolRecord>,
    pub results: Vec<ThresholdResult>,
}

fn sample(what: &'static str, records: usize, n_r: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, PrivacyError> {
    if records < n_r {
        return Err(PrivacyError::InsufficientRecords {
            what,
            needed: n_r,
            available: records,
        });
    }
    let mut picked = index::sample(rng, records, n_r).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub fn membership_attack(
    train: &[Vec<u32>],
    heldout: &[Vec<u32>],
    synthetic: &[Vec<u32>],
    config: &AttackConfig,
) -> Result<PrivacyReport, PrivacyError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let from_train = sample("training", train.len(), config.n_r, &mut rng)?;
    let from_heldout = sample("held-out", heldout.len(), config.n_r, &mut rng)?;

    let mut pool = Vec::with_capacity(2 * config.n_r);
    let members = from_train.iter().map(|&i| (Source::Train, i, &train[i]));
    let others = from_heldout.iter().map(|&i| (Source::Heldout, i, &heldout[i]));
    for (source, index, record) in members.chain(others) {
        let mut nearest: Option<f64> = None;
        for s in synthetic {
            let (_, d) = hamming(record, s)?;
            nearest = Some(nearest.map_or(d, |n| n.min(d)));
        }
        pool.push(PoolRecord {
            source,
            index,
            nearest,
        });
    }

    let results = config
        .thresholds
        .iter()
        .map(|&threshold| {
            let flagged: Vec<usize> = pool
                .iter()
                .enumerate()
                .filter(|(_, r)| r.nearest.is_some_and(|d| d <= threshold))
                .map(|(i, _)| i)
                .collect();
            let true_positives = flagged.iter().filter(|&&i| pool[i].source == Source::Train).count();
            let precision = if flagged.is_empty() {
                0.0
            } else {
                true_positives as f64 / flagged.len() as f64
            };
            ThresholdResult {
                threshold,
                flagged_count: flagged.len(),
                true_positives,
                precision,
                recall: true_positives as f64 / config.n_r as f64,
                flagged,
            }
        })
        .collect();

    Ok(PrivacyReport {
        n_r: config.n_r,
        seed: config.seed,
        pool,
        results,
    })
}
