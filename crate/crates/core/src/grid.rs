//! Dense token feature maps.
//!
//! A [`TokenGrid`] stores `height * width` tokens of `dim` channels in
//! row-major, channel-last order: the token at `(row, col)` occupies
//! `data[(row * width + col) * dim..][..dim]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenGrid {
    /// Builds a grid, rejecting zero extents, a wrong payload length, or any
    /// non-finite value.
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::ShapeMismatch(format!(
                "grid extents must be positive, got {height}x{width}x{dim}"
            )));
        }
        let expected = height * width * dim;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{dim} grid needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    /// Grid with every token equal to `token`.
    pub fn filled(height: usize, width: usize, token: &[f32]) -> Result<Self> {
        let data = token
            .iter()
            .copied()
            .cycle()
            .take(height * width * token.len())
            .collect();
        Self::new(height, width, token.len(), data)
    }

    /// Builds a grid from `height * width` token vectors in row-major order.
    pub fn from_tokens<T: AsRef<[f32]>>(height: usize, width: usize, tokens: &[T]) -> Result<Self> {
        if tokens.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} grid needs {} tokens, got {}",
                height * width,
                tokens.len()
            )));
        }
        let dim = tokens.first().map(|t| t.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(height * width * dim);
        for t in tokens {
            let t = t.as_ref();
            if t.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: t.len(),
                });
            }
            data.extend_from_slice(t);
        }
        Self::new(height, width, dim, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn token(&self, row: usize, col: usize) -> &[f32] {
        self.token_flat(row * self.width + col)
    }

    pub fn token_flat(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    /// Token vectors of one row, left to right.
    pub fn row(&self, row: usize) -> Vec<&[f32]> {
        (0..self.width).map(|c| self.token(row, c)).collect()
    }

    /// Token vectors of one column, top to bottom.
    pub fn column(&self, col: usize) -> Vec<&[f32]> {
        (0..self.height).map(|r| self.token(r, col)).collect()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Swaps rows and columns.
    pub fn transpose(&self) -> TokenGrid {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.width {
            for r in 0..self.height {
                data.extend_from_slice(self.token(r, c));
            }
        }
        TokenGrid {
            height: self.width,
            width: self.height,
            dim: self.dim,
            data,
        }
    }

    /// Same tokens laid out as a single row, the layout used for reductions
    /// that do not preserve 2D structure.
    pub fn flattened(&self) -> TokenGrid {
        TokenGrid {
            height: 1,
            width: self.len(),
            dim: self.dim,
            data: self.data.clone(),
        }
    }
}

/// Count of original tokens represented by each grid position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSizeGrid {
    height: usize,
    width: usize,
    sizes: Vec<u32>,
}

impl TokenSizeGrid {
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            sizes: vec![1; height * width],
        }
    }

    pub fn new(height: usize, width: usize, sizes: Vec<u32>) -> Result<Self> {
        if sizes.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} size grid needs {} entries, got {}",
                height * width,
                sizes.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidSpec("token sizes must be at least 1".into()));
        }
        Ok(Self {
            height,
            width,
            sizes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.sizes[row * self.width + col]
    }

    pub fn total(&self) -> u64 {
        self.sizes.iter().map(|&s| s as u64).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut sizes = Vec::with_capacity(self.sizes.len());
        for c in 0..self.width {
            for r in 0..self.height {
                sizes.push(self.get(r, c));
            }
        }
        Self {
            height: self.width,
            width: self.height,
            sizes,
        }
    }

    /// Cuts the size grid into windows in the same order as [`window_partition`].
    pub fn partition(&self, window: usize) -> Result<Vec<TokenSizeGrid>> {
        check_divisible(self.height, self.width, window)?;
        let mut out = Vec::new();
        for wr in 0..self.height / window {
            for wc in 0..self.width / window {
                let mut sizes = Vec::with_capacity(window * window);
                for r in 0..window {
                    for c in 0..window {
                        sizes.push(self.get(wr * window + r, wc * window + c));
                    }
                }
                out.push(TokenSizeGrid {
                    height: window,
                    width: window,
                    sizes,
                });
            }
        }
        Ok(out)
    }

    /// Inverse of [`TokenSizeGrid::partition`] for `windows_h x windows_w` equally sized windows.
    pub fn unpartition(windows: &[TokenSizeGrid], windows_h: usize, windows_w: usize) -> Result<Self> {
        let (wh, ww) = common_window_shape(windows.iter().map(|w| (w.height, w.width)), windows_h * windows_w)?;
        let (height, width) = (windows_h * wh, windows_w * ww);
        let mut sizes = vec![0; height * width];
        for (i, w) in windows.iter().enumerate() {
            let (wr, wc) = (i / windows_w, i % windows_w);
            for r in 0..wh {
                for c in 0..ww {
                    sizes[(wr * wh + r) * width + wc * ww + c] = w.get(r, c);
                }
            }
        }
        Ok(Self {
            height,
            width,
            sizes,
        })
    }
}

fn check_divisible(height: usize, width: usize, window: usize) -> Result<()> {
    if window == 0 || !height.is_multiple_of(window) || !width.is_multiple_of(window) {
        return Err(Error::InvalidSpec(format!(
            "grid {height}x{width} is not divisible by window {window}"
        )));
    }
    Ok(())
}

fn common_window_shape(
    mut shapes: impl Iterator<Item = (usize, usize)>,
    expected: usize,
) -> Result<(usize, usize)> {
    let first = shapes
        .next()
        .ok_or_else(|| Error::ShapeMismatch("no windows to reassemble".into()))?;
    let mut count = 1;
    for s in shapes {
        if s != first {
            return Err(Error::ShapeMismatch(format!(
                "window shapes differ: {}x{} vs {}x{}",
                first.0, first.1, s.0, s.1
            )));
        }
        count += 1;
    }
    if count != expected {
        return Err(Error::ShapeMismatch(format!(
            "expected {expected} windows, got {count}"
        )));
    }
    Ok(first)
}

/// Splits a grid into non-overlapping `window x window` tiles, in row-major
/// order over tile indices.
pub fn window_partition(grid: &TokenGrid, window: usize) -> Result<Vec<TokenGrid>> {
    check_divisible(grid.height, grid.width, window)?;
    let d = grid.dim;
    let mut out = Vec::with_capacity((grid.height / window) * (grid.width / window));
    for wr in 0..grid.height / window {
        for wc in 0..grid.width / window {
            let mut data = Vec::with_capacity(window * window * d);
            for r in 0..window {
                let start = ((wr * window + r) * grid.width + wc * window) * d;
                data.extend_from_slice(&grid.data[start..start + window * d]);
            }
            out.push(TokenGrid {
                height: window,
                width: window,
                dim: d,
                data,
            });
        }
    }
    Ok(out)
}

/// Reassembles `windows_h x windows_w` equally shaped tiles (row-major) into
/// one grid. Tiles need not be square, which is how reduced windows come back.
pub fn window_unpartition(windows: &[TokenGrid], windows_h: usize, windows_w: usize) -> Result<TokenGrid> {
    let (wh, ww) = common_window_shape(windows.iter().map(|w| (w.height, w.width)), windows_h * windows_w)?;
    let d = windows[0].dim;
    if let Some(w) = windows.iter().find(|w| w.dim != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: w.dim,
        });
    }
    let (height, width) = (windows_h * wh, windows_w * ww);
    let mut data = vec![0.0; height * width * d];
    for (i, w) in windows.iter().enumerate() {
        let (wr, wc) = (i / windows_w, i % windows_w);
        for r in 0..wh {
            let dst = ((wr * wh + r) * width + wc * ww) * d;
            data[dst..dst + ww * d].copy_from_slice(&w.data[r * ww * d..(r + 1) * ww * d]);
        }
    }
    Ok(TokenGrid {
        height,
        width,
        dim: d,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, d: usize) -> TokenGrid {
        TokenGrid::new(h, w, d, (0..h * w * d).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_payloads() {
        assert!(matches!(
            TokenGrid::new(2, 2, 1, vec![0.0; 3]),
            Err(Error::ShapeMismatch(_))
        ));
        assert_eq!(
            TokenGrid::new(1, 2, 1, vec![0.0, f32::NAN]),
            Err(Error::NonFinite(1))
        );
        assert!(TokenGrid::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn sixteen_by_sixteen_window_eight() {
        let g = ramp(16, 16, 3);
        let ws = window_partition(&g, 8).unwrap();
        assert_eq!(ws.len(), 4);
        assert!(ws.iter().all(|w| w.height() == 8 && w.width() == 8));
        // second window is the top-right tile
        assert_eq!(ws[1].token(0, 0), g.token(0, 8));
        assert_eq!(ws[2].token(0, 0), g.token(8, 0));
    }

    #[test]
    fn fourteen_not_divisible_by_eight() {
        let g = ramp(14, 14, 1);
        assert!(matches!(window_partition(&g, 8), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn transpose_moves_tokens() {
        let g = ramp(2, 3, 2);
        let t = g.transpose();
        assert_eq!((t.height(), t.width()), (3, 2));
        assert_eq!(t.token(2, 1), g.token(1, 2));
        assert_eq!(t.transpose(), g);
    }

    #[test]
    fn size_grid_partition_round_trip() {
        let s = TokenSizeGrid::new(4, 4, (1..=16).collect()).unwrap();
        let parts = s.partition(2).unwrap();
        assert_eq!(TokenSizeGrid::unpartition(&parts, 2, 2).unwrap(), s);
        assert_eq!(s.transpose().transpose(), s);
    }

    proptest! {
        #[test]
        fn partition_unpartition_inverse(
            window in 1usize..5,
            wh in 1usize..4,
            ww in 1usize..4,
            d in 1usize..4,
        ) {
            let g = ramp(window * wh, window * ww, d);
            let parts = window_partition(&g, window).unwrap();
            prop_assert_eq!(parts.len(), wh * ww);
            prop_assert_eq!(window_unpartition(&parts, wh, ww).unwrap(), g);
        }
    }
}
