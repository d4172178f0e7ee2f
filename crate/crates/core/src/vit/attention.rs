//! Multi-head softmax attention over windows of a token grid.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::grid::{TokenGrid, TokenSizeGrid};
use crate::vit::rope::Rope2d;

/// Multiply-accumulate counts, split by how they scale with token count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    /// Projections and MLP: proportional to token count.
    pub linear_macs: u64,
    /// Score and mixing products: quadratic in tokens per window.
    pub attention_macs: u64,
}

impl OpCount {
    pub fn total(&self) -> u64 {
        self.linear_macs + self.attention_macs
    }
}

impl std::ops::AddAssign for OpCount {
    fn add_assign(&mut self, rhs: Self) {
        self.linear_macs += rhs.linear_macs;
        self.attention_macs += rhs.attention_macs;
    }
}

#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub query: Array2<f32>,
    pub key: Array2<f32>,
    pub value: Array2<f32>,
    pub output: Array2<f32>,
    pub heads: usize,
}

impl AttentionWeights {
    pub fn dim(&self) -> usize {
        self.query.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }
}

fn softmax_rows(x: &mut Array2<f32>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0f32;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|v| v / sum);
    }
}

/// Attention of a token sequence over itself.
///
/// `rope` carries the rotation and one grid coordinate per token.
/// `key_sizes`, when given, adds `ln(size)` to every logit of that key, which
/// makes a key of size `s` weigh like `s` identical copies.
pub fn attend(
    x: ArrayView2<f32>,
    weights: &AttentionWeights,
    rope: Option<(&Rope2d, &[(usize, usize)])>,
    key_sizes: Option<&[u32]>,
    ops: &mut OpCount,
) -> Array2<f32> {
    let n = x.nrows();
    let d = weights.dim();
    let hd = weights.head_dim();
    let mut q = x.dot(&weights.query);
    let mut k = x.dot(&weights.key);
    let v = x.dot(&weights.value);
    let log_sizes: Option<Vec<f32>> = key_sizes.map(|s| {
        assert_eq!(s.len(), n);
        s.iter().map(|&s| (s as f32).ln()).collect()
    });
    let scale = 1.0 / (hd as f32).sqrt();
    let mut mixed = Array2::<f32>::zeros((n, d));
    for h in 0..weights.heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        if let Some((rope, coords)) = rope {
            rope.apply(q.slice_mut(cols), coords);
            rope.apply(k.slice_mut(cols), coords);
        }
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores.mapv_inplace(|s| s * scale);
        if let Some(ls) = &log_sizes {
            for mut row in scores.axis_iter_mut(Axis(0)) {
                row.iter_mut().zip(ls).for_each(|(s, l)| *s += l);
            }
        }
        softmax_rows(&mut scores);
        mixed.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        ops.attention_macs += 2 * (n * n * hd) as u64;
    }
    let out = mixed.dot(&weights.output);
    ops.linear_macs += 4 * (n * d * d) as u64;
    out
}

/// Attention restricted to non-overlapping `(height, width)` windows, or over
/// the whole grid when `window` is `None`.
///
/// Fails with a spatial-incompatibility error when the grid cannot be tiled
/// by the window, which is what happens to unstructured merge outputs.
pub fn window_attention(
    grid: &TokenGrid,
    window: Option<(usize, usize)>,
    weights: &AttentionWeights,
    sizes: Option<&TokenSizeGrid>,
    proportional: bool,
    rope: Option<&Rope2d>,
) -> Result<TokenGrid> {
    let mut ops = OpCount::default();
    window_attention_counted(grid, window, weights, sizes, proportional, rope, &mut ops)
}

pub(crate) fn window_attention_counted(
    grid: &TokenGrid,
    window: Option<(usize, usize)>,
    weights: &AttentionWeights,
    sizes: Option<&TokenSizeGrid>,
    proportional: bool,
    rope: Option<&Rope2d>,
    ops: &mut OpCount,
) -> Result<TokenGrid> {
    let (h, w, d) = (grid.height(), grid.width(), grid.dim());
    if d != weights.dim() {
        return Err(Error::DimensionMismatch {
            expected: weights.dim(),
            found: d,
        });
    }
    let (wh, ww) = window.unwrap_or((h, w));
    if wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0 {
        return Err(Error::SpatialIncompatibility(format!(
            "{h}x{w} token layout cannot be tiled by {wh}x{ww} windows"
        )));
    }
    if let Some(s) = sizes {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::ShapeMismatch("size grid does not match token grid".into()));
        }
    }
    let sizes = sizes.filter(|_| proportional);
    let x = ArrayView2::from_shape((h * w, d), grid.data()).expect("grid data is h*w x d");
    let mut out = Array2::<f32>::zeros((h * w, d));
    let n = wh * ww;
    let mut block = Array2::<f32>::zeros((n, d));
    let mut index = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    let mut block_sizes = Vec::with_capacity(n);
    for br in 0..h / wh {
        for bc in 0..w / ww {
            index.clear();
            coords.clear();
            block_sizes.clear();
            for r in br * wh..(br + 1) * wh {
                for c in bc * ww..(bc + 1) * ww {
                    index.push(r * w + c);
                    coords.push((r, c));
                    if let Some(s) = sizes {
                        block_sizes.push(s.get(r, c));
                    }
                }
            }
            for (i, &src) in index.iter().enumerate() {
                block.row_mut(i).assign(&x.row(src));
            }
            let y = attend(
                block.view(),
                weights,
                rope.map(|r| (r, coords.as_slice())),
                sizes.map(|_| block_sizes.as_slice()),
                ops,
            );
            for (i, &dst) in index.iter().enumerate() {
                out.row_mut(dst).assign(&y.row(i));
            }
        }
    }
    TokenGrid::new(h, w, d, out.into_raw_vec_and_offset().0)
}
