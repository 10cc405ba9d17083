use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{DybmError, Result};

/// An `N x T` matrix of binary values. Stored time-major so that the pattern
/// at one time step is a contiguous slice.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinarySequence {
    n_dims: usize,
    values: Vec<u8>,
}

impl BinarySequence {
    /// An all-zero sequence.
    pub fn zeros(n_dims: usize, length: usize) -> Self {
        BinarySequence {
            n_dims,
            values: vec![0; n_dims * length],
        }
    }

    /// An empty sequence that grows with [`push`](Self::push).
    pub fn empty(n_dims: usize) -> Self {
        Self::zeros(n_dims, 0)
    }

    /// Builds a sequence from per-time-step patterns.
    pub fn from_columns<C: AsRef<[u8]>>(n_dims: usize, columns: &[C]) -> Result<Self> {
        let mut seq = Self::empty(n_dims);
        for col in columns {
            seq.push(col.as_ref())?;
        }
        Ok(seq)
    }

    /// Builds a sequence from per-dimension rows (row `i` is the series of unit `i`).
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let n_dims = rows.len();
        let length = rows.first().map_or(0, |r| r.as_ref().len());
        let mut seq = Self::zeros(n_dims, length);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != length {
                return Err(DybmError::shape(format!(
                    "row {i} has length {}, expected {length}",
                    row.len()
                )));
            }
            for (t, &v) in row.iter().enumerate() {
                check_bit(v)?;
                seq.values[t * n_dims + i] = v;
            }
        }
        Ok(seq)
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.n_dims).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of unit `dim` at time `t` (both zero-based).
    pub fn get(&self, dim: usize, t: usize) -> u8 {
        self.values[t * self.n_dims + dim]
    }

    pub fn set(&mut self, dim: usize, t: usize, value: bool) {
        self.values[t * self.n_dims + dim] = value as u8;
    }

    /// The pattern at time `t`.
    pub fn column(&self, t: usize) -> &[u8] {
        &self.values[t * self.n_dims..(t + 1) * self.n_dims]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.values.chunks_exact(self.n_dims.max(1))
    }

    pub fn push(&mut self, column: &[u8]) -> Result<()> {
        if column.len() != self.n_dims {
            return Err(DybmError::shape(format!(
                "pattern has {} dims, sequence has {}",
                column.len(),
                self.n_dims
            )));
        }
        for &v in column {
            check_bit(v)?;
        }
        self.values.extend_from_slice(column);
        Ok(())
    }

    /// Time sub-range as a new sequence.
    pub fn slice(&self, range: Range<usize>) -> BinarySequence {
        BinarySequence {
            n_dims: self.n_dims,
            values: self.values[range.start * self.n_dims..range.end * self.n_dims].to_vec(),
        }
    }

    /// Cuts the sequence into consecutive pieces of `piece_len` steps; a
    /// shorter tail is dropped.
    pub fn split_into(&self, piece_len: usize) -> Vec<BinarySequence> {
        if piece_len == 0 {
            return Vec::new();
        }
        (0..self.len() / piece_len)
            .map(|p| self.slice(p * piece_len..(p + 1) * piece_len))
            .collect()
    }

    /// Number of positions where the two sequences differ.
    pub fn hamming(&self, other: &BinarySequence) -> Result<usize> {
        self.check_same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a != b)
            .count())
    }

    pub fn check_same_shape(&self, other: &BinarySequence) -> Result<()> {
        if self.n_dims != other.n_dims || self.len() != other.len() {
            return Err(DybmError::shape(format!(
                "{}x{} vs {}x{}",
                self.n_dims,
                self.len(),
                other.n_dims,
                other.len()
            )));
        }
        Ok(())
    }

    /// CSV with one row per dimension and one column per time step.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 2);
        for i in 0..self.n_dims {
            for t in 0..self.len() {
                if t > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", self.get(i, t));
            }
            out.push('\n');
        }
        out
    }
}

fn check_bit(v: u8) -> Result<()> {
    if v > 1 {
        return Err(DybmError::Data(format!("non-binary value {v}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_columns_agree() {
        let seq = BinarySequence::from_rows(&[[1u8, 0, 1], [0, 0, 1]]).unwrap();
        assert_eq!(seq.n_dims(), 2);
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.column(0), &[1, 0]);
        assert_eq!(seq.column(2), &[1, 1]);
        assert_eq!(seq.to_csv(), "1,0,1\n0,0,1\n");
    }

    #[test]
    fn rejects_non_binary_and_ragged() {
        assert!(BinarySequence::from_rows(&[vec![0u8, 2]]).is_err());
        assert!(BinarySequence::from_rows(&[vec![0u8, 1], vec![1]]).is_err());
        let mut seq = BinarySequence::empty(2);
        assert!(seq.push(&[1, 0, 1]).is_err());
    }

    #[test]
    fn split_drops_tail() {
        let seq = BinarySequence::zeros(3, 10);
        let parts = seq.split_into(4);
        assert_eq!(parts.len(), 2);
        assert!(parts.iter().all(|p| p.len() == 4));
    }
}
