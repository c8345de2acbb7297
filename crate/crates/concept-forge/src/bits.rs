//! Bit-packed boolean matrix with popcount-based row operations.
//!
//! Rows are stored as little-endian u64 words; bits past the logical column
//! count are kept at zero so popcounts never need masking. Row intersections
//! (`and_popcount`) are the hot path of correlation computation: one AND and
//! one POPCNT per 64 columns.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BitMatrixError {
    #[error("row {row} has {got} hex characters, expected {expected}")]
    BadRowLength { row: usize, got: usize, expected: usize },
    #[error("row {row} contains a non-hex character")]
    BadHex { row: usize },
    #[error("row {row} has bits set past column {cols}")]
    TrailingBits { row: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        BitMatrix {
            rows,
            cols,
            words_per_row,
            data: vec![0; rows * words_per_row],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        assert!(row < self.rows && col < self.cols, "bit ({row},{col}) out of range");
        let word = row * self.words_per_row + col / 64;
        let mask = 1u64 << (col % 64);
        if value {
            self.data[word] |= mask;
        } else {
            self.data[word] &= !mask;
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        assert!(row < self.rows && col < self.cols, "bit ({row},{col}) out of range");
        let word = row * self.words_per_row + col / 64;
        self.data[word] & (1u64 << (col % 64)) != 0
    }

    fn row_words(&self, row: usize) -> &[u64] {
        let start = row * self.words_per_row;
        &self.data[start..start + self.words_per_row]
    }

    /// Number of set bits in a row.
    pub fn row_popcount(&self, row: usize) -> usize {
        self.row_words(row).iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of columns where both rows are set.
    pub fn and_popcount(&self, a: usize, b: usize) -> usize {
        self.row_words(a)
            .iter()
            .zip(self.row_words(b))
            .map(|(x, y)| (x & y).count_ones() as usize)
            .sum()
    }

    /// Replaces one row from a dense bit slice (used by parallel assembly).
    pub fn write_row(&mut self, row: usize, bits: &[bool]) {
        assert_eq!(bits.len(), self.cols);
        for (col, &bit) in bits.iter().enumerate() {
            self.set(row, col, bit);
        }
    }

    /// Lowercase hex encoding of a row, least-significant word first.
    pub fn row_hex(&self, row: usize) -> String {
        self.row_words(row)
            .iter()
            .map(|w| format!("{w:016x}"))
            .collect()
    }

    pub fn from_hex_rows(rows: &[String], cols: usize) -> Result<BitMatrix, BitMatrixError> {
        let mut m = BitMatrix::zero(rows.len(), cols);
        let expected = m.words_per_row * 16;
        for (r, hex) in rows.iter().enumerate() {
            if hex.len() != expected {
                return Err(BitMatrixError::BadRowLength {
                    row: r,
                    got: hex.len(),
                    expected,
                });
            }
            for (i, chunk) in hex.as_bytes().chunks(16).enumerate() {
                let s = std::str::from_utf8(chunk).map_err(|_| BitMatrixError::BadHex { row: r })?;
                let word =
                    u64::from_str_radix(s, 16).map_err(|_| BitMatrixError::BadHex { row: r })?;
                m.data[r * m.words_per_row + i] = word;
            }
            let tail = cols % 64;
            if tail != 0 {
                let last = m.data[r * m.words_per_row + m.words_per_row - 1];
                if last >> tail != 0 {
                    return Err(BitMatrixError::TrailingBits { row: r, cols });
                }
            }
        }
        Ok(m)
    }
}
