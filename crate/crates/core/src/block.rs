//! Cell-availability state of the erasure-extended block matrix.
//!
//! Cells are tracked at the availability level only; recoverability is the
//! K-of-N threshold rule, so no erasure arithmetic is needed.

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::config::ValidatedConfig;

#[derive(Debug, Error, PartialEq)]
pub enum BlockError {
    #[error("row/column {0} is not recoverable")]
    NotRecoverable(usize),
}

/// Bitmap of held cells over an `n_rows` x `n_cols` matrix.
///
/// `n_rows` equals the configured column length (colSizeN) and `n_cols` the
/// row length (rowSizeN). Bits are only ever set, never cleared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockAvailability {
    n_rows: usize,
    n_cols: usize,
    words: Vec<u64>,
}

impl BlockAvailability {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        let bits = n_rows * n_cols;
        BlockAvailability {
            n_rows,
            n_cols,
            words: vec![0; bits.div_ceil(64)],
        }
    }

    pub fn for_config(cfg: &ValidatedConfig) -> Self {
        Self::new(cfg.col_size_n, cfg.row_size_n)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    fn bit(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        row * self.n_cols + col
    }

    #[inline]
    pub fn has(&self, row: usize, col: usize) -> bool {
        let b = self.bit(row, col);
        self.words[b / 64] >> (b % 64) & 1 == 1
    }

    /// Sets a cell; returns true if it was newly set.
    #[inline]
    pub fn set(&mut self, row: usize, col: usize) -> bool {
        let b = self.bit(row, col);
        let w = &mut self.words[b / 64];
        let mask = 1u64 << (b % 64);
        let fresh = *w & mask == 0;
        *w |= mask;
        fresh
    }

    pub fn count_held(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn row_held(&self, row: usize) -> usize {
        (0..self.n_cols).filter(|&c| self.has(row, c)).count()
    }

    pub fn col_held(&self, col: usize) -> usize {
        (0..self.n_rows).filter(|&r| self.has(r, col)).count()
    }

    /// True iff at least `k` cells of the row are held.
    pub fn is_row_recoverable(&self, row: usize, k: usize) -> bool {
        self.row_held(row) >= k
    }

    /// True iff at least `k` cells of the column are held.
    pub fn is_col_recoverable(&self, col: usize, k: usize) -> bool {
        self.col_held(col) >= k
    }

    /// Sets every cell of a recoverable row; returns the number newly set.
    pub fn reconstruct_row(&mut self, row: usize, k: usize) -> Result<usize, BlockError> {
        if !self.is_row_recoverable(row, k) {
            return Err(BlockError::NotRecoverable(row));
        }
        let mut added = 0;
        for c in 0..self.n_cols {
            if self.set(row, c) {
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn reconstruct_col(&mut self, col: usize, k: usize) -> Result<usize, BlockError> {
        if !self.is_col_recoverable(col, k) {
            return Err(BlockError::NotRecoverable(col));
        }
        let mut added = 0;
        for r in 0..self.n_rows {
            if self.set(r, col) {
                added += 1;
            }
        }
        Ok(added)
    }

    /// Applies row and column reconstruction until no line crosses its K
    /// threshold. The result is order-independent.
    pub fn reconstruct_fixpoint(&mut self, row_k: usize, col_k: usize) -> usize {
        let mut total = 0;
        loop {
            let mut added = 0;
            for r in 0..self.n_rows {
                let held = self.row_held(r);
                if held >= row_k && held < self.n_cols {
                    added += self.reconstruct_row(r, row_k).expect("checked recoverable");
                }
            }
            for c in 0..self.n_cols {
                let held = self.col_held(c);
                if held >= col_k && held < self.n_rows {
                    added += self.reconstruct_col(c, col_k).expect("checked recoverable");
                }
            }
            if added == 0 {
                return total;
            }
            total += added;
        }
    }
}

fn round_half_away(x: f64) -> usize {
    // f64::round rounds half away from zero.
    x.round() as usize
}

/// Ground-truth availability after producer withholding: exactly
/// `round(failure_rate * cells)` cells are cleared, chosen uniformly without
/// replacement.
pub fn new_released_block<R: Rng>(cfg: &ValidatedConfig, rng: &mut R) -> BlockAvailability {
    let mut avail = BlockAvailability::for_config(cfg);
    let cells = avail.n_rows * avail.n_cols;
    let withheld = round_half_away(cfg.failure_rate * cells as f64).min(cells);
    let mut withheld_bits = vec![false; cells];
    for i in sample(rng, cells, withheld) {
        withheld_bits[i] = true;
    }
    for r in 0..avail.n_rows {
        for c in 0..avail.n_cols {
            if !withheld_bits[r * avail.n_cols + c] {
                avail.set(r, c);
            }
        }
    }
    avail
}
