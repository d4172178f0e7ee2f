//! Forward-only toy vision transformer used to exercise reduced grids with
//! window attention and 2D rotary positions, and to time them.

mod attention;
mod rope;

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

pub use attention::{attend, window_attention, AttentionWeights, OpCount};
pub use rope::Rope2d;

use crate::config::{ReductionSpec, Representation};
use crate::error::{Error, Result};
use crate::grid::{TokenGrid, TokenSizeGrid};
use crate::pipeline::{cubist_reduce, ReducedGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosMode {
    #[default]
    Rope2d,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyVitConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    /// Attention window side; `None` attends over the whole grid.
    pub window: Option<usize>,
    pub pos_mode: PosMode,
    /// Reduction inserted before layer `reduction.layer`.
    pub reduction: Option<ReductionSpec>,
    /// Adds `ln(size)` to attention logits; needs a size-tracking representation.
    pub proportional_attention: bool,
    pub mlp_ratio: usize,
    pub rope_theta: f64,
    pub seed: u64,
}

impl Default for ToyVitConfig {
    fn default() -> Self {
        Self {
            depth: 12,
            dim: 384,
            heads: 6,
            window: None,
            pos_mode: PosMode::Rope2d,
            reduction: None,
            proportional_attention: false,
            mlp_ratio: 4,
            rope_theta: 100.0,
            seed: 0,
        }
    }
}

impl ToyVitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.depth == 0 || self.dim == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return bad("depth, dim, heads and mlp ratio must be positive".into());
        }
        if !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} is not divisible by {} heads", self.dim, self.heads));
        }
        if self.pos_mode == PosMode::Rope2d && !(self.dim / self.heads).is_multiple_of(4) {
            return bad(format!(
                "head dim {} must be divisible by 4 for 2D rotary positions",
                self.dim / self.heads
            ));
        }
        if self.window == Some(0) {
            return bad("window must be positive".into());
        }
        if let Some(r) = &self.reduction {
            if r.layer >= self.depth {
                return bad(format!("reduction layer {} must be below depth {}", r.layer, self.depth));
            }
        }
        if self.proportional_attention
            && !self
                .reduction
                .is_some_and(|r| r.representation == Representation::WeightedAverage)
        {
            return bad("proportional attention needs the weighted-average representation".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attention: AttentionWeights,
    pub mlp_in: Array2<f32>,
    pub mlp_out: Array2<f32>,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
    let std = (1.0 / rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        (z * std) as f32
    })
}

impl LayerWeights {
    pub fn random(dim: usize, heads: usize, mlp_ratio: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = dim * mlp_ratio;
        Self {
            attention: AttentionWeights {
                query: random_matrix(rng, dim, dim),
                key: random_matrix(rng, dim, dim),
                value: random_matrix(rng, dim, dim),
                output: random_matrix(rng, dim, dim),
                heads,
            },
            mlp_in: random_matrix(rng, dim, hidden),
            mlp_out: random_matrix(rng, hidden, dim),
        }
    }
}

/// One line of the per-layer trace.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LayerTrace {
    pub layer: usize,
    pub tokens: usize,
    pub ms: f64,
    #[serde(skip)]
    pub height: usize,
    #[serde(skip)]
    pub width: usize,
    #[serde(skip)]
    pub ops: OpCount,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub grid: TokenGrid,
    pub sizes: Option<TokenSizeGrid>,
    pub trace: Vec<LayerTrace>,
    pub reduced: Option<ReducedGrid>,
}

impl ForwardOutput {
    pub fn ops(&self) -> OpCount {
        let mut total = OpCount::default();
        for t in &self.trace {
            total += t.ops;
        }
        total
    }

    pub fn total_ms(&self) -> f64 {
        self.trace.iter().map(|t| t.ms).sum()
    }
}

fn layer_norm(x: ArrayView2<f32>) -> Array2<f32> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let n = row.len() as f32;
        let mean = row.sum() / n;
        let var = row.fold(0.0, |a, &v| a + (v - mean) * (v - mean)) / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044_715 * x * x * x)).tanh())
}

#[derive(Debug, Clone)]
pub struct ToyVit {
    config: ToyVitConfig,
    layers: Vec<LayerWeights>,
    rope: Option<Rope2d>,
}

impl ToyVit {
    pub fn new(config: ToyVitConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = (0..config.depth)
            .map(|_| LayerWeights::random(config.dim, config.heads, config.mlp_ratio, &mut rng))
            .collect();
        let rope = match config.pos_mode {
            PosMode::Rope2d => Some(Rope2d::new(config.dim / config.heads, config.rope_theta)?),
            PosMode::None => None,
        };
        Ok(Self {
            config,
            layers,
            rope,
        })
    }

    pub fn config(&self) -> &ToyVitConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    /// Attention window for a grid, given the reduction applied so far.
    ///
    /// A windowed reduction with the attention window's side shrinks every
    /// window to `(w - r_h) x (w - r_w)`; otherwise the window is unchanged
    /// and must still tile the grid.
    fn window_for(&self, reduced: Option<&ReducedGrid>) -> Option<(usize, usize)> {
        let w = self.config.window?;
        match (reduced, self.config.reduction) {
            (Some(r), Some(spec)) if spec.window == Some(w) && r.is_structured() => {
                Some((w - r.rates.0, w - r.rates.1))
            }
            _ => Some((w, w)),
        }
    }

    fn block(
        &self,
        layer: &LayerWeights,
        x: &TokenGrid,
        sizes: Option<&TokenSizeGrid>,
        window: Option<(usize, usize)>,
        ops: &mut OpCount,
    ) -> Result<TokenGrid> {
        let (h, w, d) = (x.height(), x.width(), x.dim());
        let xs = ArrayView2::from_shape((h * w, d), x.data()).expect("grid is h*w x d");
        let normed = TokenGrid::new(h, w, d, layer_norm(xs).into_raw_vec_and_offset().0)?;
        let attn = attention::window_attention_counted(
            &normed,
            window,
            &layer.attention,
            sizes,
            self.config.proportional_attention,
            self.rope.as_ref(),
            ops,
        )?;
        let attn = ArrayView2::from_shape((h * w, d), attn.data()).expect("same shape");
        let y = &xs + &attn;
        let mut hidden = layer_norm(y.view()).dot(&layer.mlp_in);
        hidden.mapv_inplace(gelu);
        let out = &y + &hidden.dot(&layer.mlp_out);
        ops.linear_macs += 2 * (h * w * d * layer.mlp_in.ncols()) as u64;
        TokenGrid::new(h, w, d, out.into_raw_vec_and_offset().0)
    }

    /// Runs every layer, reducing before layer `reduction.layer` when set.
    ///
    /// After reduction the grid is indexed as a fresh regular grid, so rotary
    /// positions are `0..H'` by `0..W'`.
    pub fn forward(&self, input: &TokenGrid) -> Result<ForwardOutput> {
        if input.dim() != self.config.dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim,
                found: input.dim(),
            });
        }
        let mut x = input.clone();
        let mut sizes: Option<TokenSizeGrid> = None;
        let mut reduced: Option<ReducedGrid> = None;
        let mut trace = Vec::with_capacity(self.config.depth);
        for (i, layer) in self.layers.iter().enumerate() {
            let start = Instant::now();
            if let Some(spec) = self.config.reduction.filter(|r| r.layer == i) {
                let r = cubist_reduce(&x, &spec)?;
                x = r.grid.clone();
                sizes = r.sizes.clone();
                reduced = Some(r);
            }
            let window = self.window_for(reduced.as_ref());
            let mut ops = OpCount::default();
            x = self.block(layer, &x, sizes.as_ref(), window, &mut ops)?;
            trace.push(LayerTrace {
                layer: i,
                tokens: x.len(),
                ms: start.elapsed().as_secs_f64() * 1e3,
                height: x.height(),
                width: x.width(),
                ops,
            });
        }
        Ok(ForwardOutput {
            grid: x,
            sizes,
            trace,
            reduced,
        })
    }
}

/// Predicted per-layer MACs for `tokens` tokens split into `windows` equal
/// windows (1 for global attention).
pub fn analytic_layer_ops(tokens: usize, windows: usize, dim: usize, mlp_ratio: usize) -> OpCount {
    let per_window = tokens / windows;
    OpCount {
        linear_macs: (tokens * dim * dim * (4 + 2 * mlp_ratio)) as u64,
        attention_macs: (2 * windows * per_window * per_window * dim) as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Rate, Strategy};

    fn small(window: Option<usize>, reduction: Option<ReductionSpec>) -> ToyVitConfig {
        ToyVitConfig {
            depth: 3,
            dim: 16,
            heads: 2,
            window,
            reduction,
            seed: 11,
            ..ToyVitConfig::default()
        }
    }

    fn input(h: usize, w: usize, d: usize) -> TokenGrid {
        TokenGrid::new(h, w, d, (0..h * w * d).map(|i| ((i * 7919) % 113) as f32 / 56.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn constant_token_count_without_reduction() {
        let vit = ToyVit::new(small(Some(4), None)).unwrap();
        let out = vit.forward(&input(8, 8, 16)).unwrap();
        assert!(out.trace.iter().all(|t| t.tokens == 64));
        assert_eq!(out.trace.len(), 3);
    }

    #[test]
    fn reduction_shrinks_grid_and_windows() {
        let spec = ReductionSpec::new(Rate::Count(2), Rate::Count(1)).with_window(Some(4)).with_layer(1);
        let vit = ToyVit::new(small(Some(4), Some(spec))).unwrap();
        let out = vit.forward(&input(8, 8, 16)).unwrap();
        let tokens: Vec<usize> = out.trace.iter().map(|t| t.tokens).collect();
        assert_eq!(tokens, vec![64, 24, 24]);
        assert_eq!((out.grid.height(), out.grid.width()), (4, 6));
    }

    #[test]
    fn deterministic_outputs() {
        let spec = ReductionSpec::new(Rate::Count(2), Rate::Count(2));
        let vit = ToyVit::new(small(None, Some(spec))).unwrap();
        let a = vit.forward(&input(6, 6, 16)).unwrap();
        let b = ToyVit::new(small(None, Some(spec))).unwrap().forward(&input(6, 6, 16)).unwrap();
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn global_strategy_breaks_window_attention() {
        // global budget per 4x4 window is 7, leaving a flat 1x36 layout
        let spec = ReductionSpec::new(Rate::Count(1), Rate::Count(1))
            .with_window(Some(4))
            .with_strategy(Strategy::BipartiteGlobal);
        let vit = ToyVit::new(small(Some(4), Some(spec))).unwrap();
        assert!(matches!(vit.forward(&input(8, 8, 16)), Err(Error::SpatialIncompatibility(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = small(None, None);
        c.heads = 3;
        assert!(ToyVit::new(c).is_err());
        let mut c = small(None, None);
        c.dim = 24;
        c.heads = 4; // head dim 6
        assert!(ToyVit::new(c.clone()).is_err());
        c.pos_mode = PosMode::None;
        assert!(ToyVit::new(c).is_ok());
        let spec = ReductionSpec::new(Rate::Count(1), Rate::Count(1)).with_layer(3);
        assert!(ToyVit::new(small(None, Some(spec))).is_err());
        let mut c = small(None, Some(spec.with_layer(0)));
        c.proportional_attention = true;
        assert!(ToyVit::new(c.clone()).is_err());
        c.reduction = c.reduction.map(|r| r.with_representation(Representation::WeightedAverage));
        assert!(ToyVit::new(c).is_ok());
    }

    #[test]
    fn op_counts_match_analytic_formula() {
        let spec = ReductionSpec::new(Rate::Count(2), Rate::Count(2)).with_window(Some(4));
        let vit = ToyVit::new(small(Some(4), Some(spec))).unwrap();
        let out = vit.forward(&input(8, 8, 16)).unwrap();
        for t in &out.trace {
            assert_eq!(t.ops, analytic_layer_ops(t.tokens, 4, 16, 4));
        }
    }

    #[test]
    fn trace_serializes_to_schema() {
        let t = LayerTrace {
            layer: 2,
            tokens: 144,
            ms: 1.5,
            height: 12,
            width: 12,
            ops: OpCount::default(),
        };
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"{"layer":2,"tokens":144,"ms":1.5}"#);
    }
}
