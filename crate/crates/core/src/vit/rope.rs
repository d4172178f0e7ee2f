//! Axial 2D rotary position embedding.
//!
//! The first half of a head vector rotates with the row coordinate and the
//! second half with the column coordinate. Within each half, channel pairs
//! `(2i, 2i + 1)` turn by `pos * theta^(-i / (head_dim / 4))`.

use ndarray::{ArrayViewMut2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Rope2d {
    head_dim: usize,
    freqs: Vec<f64>,
}

impl Rope2d {
    pub fn new(head_dim: usize, theta: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(4) {
            return Err(Error::InvalidSpec(format!(
                "2D rotary embedding needs a head dim divisible by 4, got {head_dim}"
            )));
        }
        let quarter = head_dim / 4;
        let freqs = (0..quarter)
            .map(|i| theta.powf(-(i as f64) / quarter as f64))
            .collect();
        Ok(Self { head_dim, freqs })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Rotates one head vector in place for grid position `(row, col)`.
    pub fn rotate(&self, v: &mut [f32], row: usize, col: usize) {
        debug_assert_eq!(v.len(), self.head_dim);
        let half = self.head_dim / 2;
        for (offset, pos) in [(0, row), (half, col)] {
            for (i, &f) in self.freqs.iter().enumerate() {
                let (sin, cos) = (pos as f64 * f).sin_cos();
                let (a, b) = (v[offset + 2 * i] as f64, v[offset + 2 * i + 1] as f64);
                v[offset + 2 * i] = (a * cos - b * sin) as f32;
                v[offset + 2 * i + 1] = (a * sin + b * cos) as f32;
            }
        }
    }

    /// Rotates every row of an `n x head_dim` block by its coordinate.
    pub fn apply(&self, mut x: ArrayViewMut2<f32>, coords: &[(usize, usize)]) {
        assert_eq!(x.nrows(), coords.len());
        assert_eq!(x.ncols(), self.head_dim);
        for (mut row, &(r, c)) in x.axis_iter_mut(Axis(0)).zip(coords) {
            let mut buf: Vec<f32> = row.to_vec();
            self.rotate(&mut buf, r, c);
            row.iter_mut().zip(buf).for_each(|(dst, v)| *dst = v);
        }
    }
}
