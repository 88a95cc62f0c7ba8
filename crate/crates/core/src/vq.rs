//! Vector quantization of latent fibers.
//!
//! Each fiber (row) of a `t × c` latent is cut into four pieces of width
//! `c / 4`, and every piece is replaced by its nearest codebook entry.
//! Codebook entries are maintained by exponential moving averages.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pieces per fiber.
pub const PIECES: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VqError {
    #[error("codebook is empty")]
    EmptyCodebook,
    #[error("decay {0} is outside (0, 1]")]
    InvalidDecay(f64),
    #[error("expected width {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("fiber width {0} is not divisible by 4")]
    NotDivisible(usize),
    #[error("code {0} is out of range")]
    UnknownCode(usize),
    #[error("operands have different shapes")]
    ShapeMismatch,
    #[error("accumulators do not match the entries")]
    CorruptAccumulators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub decay: f64,
    pub entries: Vec<Vec<f64>>,
    /// EMA of assignment counts per entry.
    pub counts: Vec<f64>,
    /// EMA of assigned vector sums per entry.
    pub sums: Vec<Vec<f64>>,
}

impl Codebook {
    /// Accumulators start at `count = 1`, `sum = entry`.
    pub fn new(entries: Vec<Vec<f64>>, decay: f64) -> Result<Self, VqError> {
        let book = Codebook {
            decay,
            counts: vec![1.0; entries.len()],
            sums: entries.clone(),
            entries,
        };
        book.check()?;
        Ok(book)
    }

    /// Entries drawn uniformly from `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(size: usize, width: usize, decay: f64, rng: &mut R) -> Result<Self, VqError> {
        let entries = (0..size)
            .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        Self::new(entries, decay)
    }

    /// Checks the invariants; used after deserializing.
    pub fn check(&self) -> Result<(), VqError> {
        let width = self.entries.first().ok_or(VqError::EmptyCodebook)?.len();
        if width == 0 {
            return Err(VqError::WidthMismatch { expected: 1, found: 0 });
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(VqError::InvalidDecay(self.decay));
        }
        if let Some(e) = self.entries.iter().find(|e| e.len() != width) {
            return Err(VqError::WidthMismatch {
                expected: width,
                found: e.len(),
            });
        }
        if self.counts.len() != self.entries.len()
            || self.sums.len() != self.entries.len()
            || self.sums.iter().any(|s| s.len() != width)
        {
            return Err(VqError::CorruptAccumulators);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn width(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    /// Index and squared distance of the closest entry; ties go to the
    /// lowest index.
    pub fn nearest(&self, piece: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, e) in self.entries.iter().enumerate() {
            let d = squared_distance(piece, e);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// EMA step over one batch of `(code, vector)` assignments. Codes with no
    /// assignment in the batch are left untouched. Nothing changes on error.
    pub fn ema_update(&mut self, assignments: &[(usize, &[f64])]) -> Result<(), VqError> {
        let width = self.width();
        let mut counts = vec![0.0; self.len()];
        let mut sums = vec![vec![0.0; width]; self.len()];
        for (code, v) in assignments {
            if *code >= self.len() {
                return Err(VqError::UnknownCode(*code));
            }
            if v.len() != width {
                return Err(VqError::WidthMismatch {
                    expected: width,
                    found: v.len(),
                });
            }
            counts[*code] += 1.0;
            for (s, x) in sums[*code].iter_mut().zip(v.iter()) {
                *s += x;
            }
        }
        let keep = self.decay;
        let take = 1.0 - keep;
        for k in 0..self.len() {
            if counts[k] == 0.0 {
                continue;
            }
            self.counts[k] = keep * self.counts[k] + take * counts[k];
            for (m, s) in self.sums[k].iter_mut().zip(&sums[k]) {
                *m = keep * *m + take * s;
            }
            if self.counts[k] > 0.0 {
                let n = self.counts[k];
                for (e, m) in self.entries[k].iter_mut().zip(&self.sums[k]) {
                    *e = m / n;
                }
            }
        }
        Ok(())
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn squared_norm_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, VqError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(VqError::ShapeMismatch);
    }
    Ok(a.iter().zip(b).map(|(x, y)| squared_distance(x, y)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationResult {
    /// Four code ids per fiber.
    pub indices: Vec<[usize; PIECES]>,
    pub quantized: Vec<Vec<f64>>,
    /// `‖z − z_q‖²`.
    pub commitment_distance: f64,
}

impl QuantizationResult {
    /// Rebuilds `z_q` from the codebook and the chosen indices.
    pub fn reassemble(&self, book: &Codebook) -> Result<Vec<Vec<f64>>, VqError> {
        self.indices
            .iter()
            .map(|ids| {
                let mut row = Vec::with_capacity(PIECES * book.width());
                for &k in ids {
                    row.extend_from_slice(book.entries.get(k).ok_or(VqError::UnknownCode(k))?);
                }
                Ok(row)
            })
            .collect()
    }
}

pub fn quantize(z: &[Vec<f64>], book: &Codebook) -> Result<QuantizationResult, VqError> {
    book.check()?;
    let width = book.width();
    let mut indices = Vec::with_capacity(z.len());
    let mut quantized = Vec::with_capacity(z.len());
    let mut distance = 0.0;
    for fiber in z {
        if fiber.len() % PIECES != 0 {
            return Err(VqError::NotDivisible(fiber.len()));
        }
        if fiber.len() / PIECES != width {
            return Err(VqError::WidthMismatch {
                expected: width * PIECES,
                found: fiber.len(),
            });
        }
        let mut ids = [0; PIECES];
        let mut row = Vec::with_capacity(fiber.len());
        for (j, piece) in fiber.chunks_exact(width).enumerate() {
            let (k, d) = book.nearest(piece);
            ids[j] = k;
            distance += d;
            row.extend_from_slice(&book.entries[k]);
        }
        indices.push(ids);
        quantized.push(row);
    }
    Ok(QuantizationResult {
        indices,
        quantized,
        commitment_distance: distance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VqLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub commitment: f64,
}

/// Reconstruction error plus `beta`-weighted commitment; the codebook term
/// is handled by the EMA update instead of a loss.
pub fn vq_loss(
    x: &[Vec<f64>],
    x_rec: &[Vec<f64>],
    z: &[Vec<f64>],
    z_q: &[Vec<f64>],
    beta: f64,
) -> Result<VqLoss, VqError> {
    let reconstruction = squared_norm_diff(x, x_rec)?;
    let commitment = beta * squared_norm_diff(z, z_q)?;
    Ok(VqLoss {
        total: reconstruction + commitment,
        reconstruction,
        commitment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pair() -> Codebook {
        Codebook::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], 0.9).unwrap()
    }

    #[test]
    fn nearest_and_ties() {
        let b = pair();
        let (k, d) = b.nearest(&[0.9, 0.7]);
        assert_eq!(k, 1);
        assert!((d - 0.10).abs() < 1e-12);
        assert!((squared_distance(&[0.9, 0.7], &[0.0, 0.0]) - 1.30).abs() < 1e-12);
        assert_eq!(b.nearest(&[0.5, 0.5]).0, 0);
    }

    #[test]
    fn exact_match() {
        let entries: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64, -(k as f64)]).collect();
        let b = Codebook::new(entries, 0.5).unwrap();
        let z = vec![[3.0, -3.0, 3.0, -3.0, 3.0, -3.0, 3.0, -3.0].to_vec()];
        let r = quantize(&z, &b).unwrap();
        assert_eq!(r.indices, [[3; 4]]);
        assert_eq!(r.quantized, z);
        assert_eq!(r.commitment_distance, 0.0);
        assert_eq!(r.reassemble(&b).unwrap(), r.quantized);
    }

    #[test]
    fn quantize_errors() {
        let b = pair();
        assert_eq!(quantize(&[vec![0.0; 6]], &b), Err(VqError::NotDivisible(6)));
        assert!(matches!(quantize(&[vec![0.0; 4]], &b), Err(VqError::WidthMismatch { .. })));
        assert!(quantize(&[], &b).unwrap().indices.is_empty());
    }

    #[test]
    fn codebook_checks() {
        assert_eq!(Codebook::new(vec![], 0.9), Err(VqError::EmptyCodebook));
        assert_eq!(Codebook::new(vec![vec![1.0]], 0.0), Err(VqError::InvalidDecay(0.0)));
        assert!(Codebook::new(vec![vec![1.0], vec![1.0, 2.0]], 0.5).is_err());
        assert!(Codebook::new(vec![vec![1.0]], 1.0).is_ok());
    }

    #[test]
    fn loss_terms() {
        let l = vq_loss(
            &[vec![1.0, 0.0]],
            &[vec![0.0, 0.0]],
            &[vec![1.0, 1.0]],
            &[vec![0.0, 1.0]],
            0.25,
        )
        .unwrap();
        assert_eq!((l.total, l.reconstruction, l.commitment), (1.25, 1.0, 0.25));
        let zero = vq_loss(&[vec![2.0]], &[vec![2.0]], &[vec![1.0]], &[vec![1.0]], 0.25).unwrap();
        assert_eq!((zero.total, zero.reconstruction, zero.commitment), (0.0, 0.0, 0.0));
        let no_beta = vq_loss(&[vec![3.0]], &[vec![1.0]], &[vec![1.0]], &[vec![0.0]], 0.0).unwrap();
        assert_eq!(no_beta.total, no_beta.reconstruction);
        assert_eq!(
            vq_loss(&[vec![1.0]], &[vec![1.0, 2.0]], &[], &[], 1.0),
            Err(VqError::ShapeMismatch)
        );
    }

    #[test]
    fn full_decay_keeps_codebook() {
        let mut b = Codebook::new(vec![vec![0.5, 0.5]], 1.0).unwrap();
        let before = b.clone();
        b.ema_update(&[(0, &[3.0, 4.0])]).unwrap();
        assert_eq!(b, before);
    }

    #[test]
    fn single_vector_geometric_approach() {
        let v = [2.0, -1.0];
        let e0 = [1.99, -1.02];
        let mut b = Codebook::new(vec![e0.to_vec(), vec![9.0, 9.0]], 0.9).unwrap();
        for _ in 0..100 {
            b.ema_update(&[(0, &v)]).unwrap();
        }
        // with N0 = 1 the entry keeps exactly 0.9^t of its initial offset
        let keep = (0..100).fold(1.0, |acc, _| acc * 0.9);
        for i in 0..2 {
            assert!((b.entries[0][i] - v[i]).abs() < 1e-6);
            assert!((b.entries[0][i] - (v[i] + keep * (e0[i] - v[i]))).abs() < 1e-12);
        }
        assert_eq!(b.entries[1], [9.0, 9.0]);
    }

    #[test]
    fn update_errors_leave_codebook_intact() {
        let mut b = pair();
        let before = b.clone();
        assert_eq!(b.ema_update(&[(0, &[1.0, 1.0]), (7, &[1.0, 1.0])]), Err(VqError::UnknownCode(7)));
        assert!(b.ema_update(&[(0, &[1.0])]).is_err());
        assert_eq!(b, before);
    }
}
