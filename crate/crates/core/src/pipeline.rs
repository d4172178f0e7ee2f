//! Two-phase grid reduction.
//!
//! Every row loses `r_w` tokens, then every column of the result loses `r_h`
//! tokens. Within a line the merged token takes the slot of its group root
//! (the destination) and the remaining slots are compacted out, so spatial
//! order survives. With a window set, each tile is reduced on its own and the
//! shrunken tiles are stitched back in place.

use rayon::prelude::*;

use crate::config::{resolve_rates, ReductionSpec, Representation, Strategy};
use crate::error::{Error, Result};
use crate::grid::{window_partition, window_unpartition, TokenGrid, TokenSizeGrid};
use crate::matching::{match_line, max_merges, select_edges_global, EdgeSet};
use crate::merge_map::{lift_window_maps, MergeMap};

/// Result of one horizontal or vertical phase.
#[derive(Debug, Clone)]
pub struct PhaseOutput {
    pub grid: TokenGrid,
    pub sizes: Option<TokenSizeGrid>,
    pub map: MergeMap,
    /// Selected edges per line, offsets along that line.
    pub edges: Vec<EdgeSet>,
}

/// Edges chosen inside one region (the whole grid or one window).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionEdges {
    /// Per row of the region; for the global strategy a single entry over
    /// the flattened region.
    pub horizontal: Vec<EdgeSet>,
    /// Per column of the post-horizontal region; empty for the global strategy.
    pub vertical: Vec<EdgeSet>,
}

#[derive(Debug, Clone)]
pub struct ReducedGrid {
    /// `(H - r_h) x (W - r_w)` per region for path-graph strategies; a
    /// single row for the global strategy.
    pub grid: TokenGrid,
    /// Present only for the weighted-average representation.
    pub sizes: Option<TokenSizeGrid>,
    /// Original position to reduced position.
    pub map: MergeMap,
    /// Original grid to post-horizontal grid.
    pub horizontal_map: MergeMap,
    /// Post-horizontal grid to reduced grid.
    pub vertical_map: MergeMap,
    /// One entry per region, row-major over windows.
    pub regions: Vec<RegionEdges>,
    /// Resolved `(r_h, r_w)` per region.
    pub rates: (usize, usize),
    /// Region shape `(height, width)` before reduction.
    pub region: (usize, usize),
    pub strategy: Strategy,
}

impl ReducedGrid {
    /// Whether the output keeps uniform rows and columns.
    pub fn is_structured(&self) -> bool {
        self.strategy.is_structured()
    }

    pub fn edges(&self) -> impl Iterator<Item = &crate::matching::Edge> {
        self.regions
            .iter()
            .flat_map(|r| r.horizontal.iter().chain(r.vertical.iter()))
            .flat_map(|s| s.edges().iter())
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn similarity_sum(&self) -> f64 {
        self.edges().map(|e| e.similarity).sum()
    }

    /// Mean similarity over every merged pair, 0 when nothing merged.
    pub fn mean_merged_similarity(&self) -> f64 {
        let n = self.edge_count();
        if n == 0 {
            0.0
        } else {
            self.similarity_sum() / n as f64
        }
    }
}

struct LineOutput {
    tokens: Vec<Vec<f32>>,
    sizes: Option<Vec<u32>>,
    slots: Vec<usize>,
    edges: EdgeSet,
}

fn merge_groups(
    features: &[&[f32]],
    sizes: Option<&[u32]>,
    edges: EdgeSet,
    representation: Representation,
) -> Result<LineOutput> {
    let groups = edges.groups(features.len());
    let mut slots = vec![0; features.len()];
    let mut tokens = Vec::with_capacity(groups.len());
    let mut out_sizes = sizes.map(|_| Vec::with_capacity(groups.len()));
    for (slot, group) in groups.iter().enumerate() {
        for &m in group {
            slots[m] = slot;
        }
        let members: Vec<&[f32]> = group.iter().map(|&m| features[m]).collect();
        let member_sizes: Option<Vec<u32>> = sizes.map(|s| group.iter().map(|&m| s[m]).collect());
        let (token, size) = representation.merge(&members, member_sizes.as_deref())?;
        if let (Some(out), Some(size)) = (out_sizes.as_mut(), size) {
            out.push(size);
        }
        tokens.push(token);
    }
    Ok(LineOutput {
        tokens,
        sizes: out_sizes,
        slots,
        edges,
    })
}

fn check_line_feasible(strategy: Strategy, k: usize, len: usize, what: &str) -> Result<()> {
    if strategy == Strategy::BipartiteGlobal {
        return Err(Error::InvalidSpec(
            "the global strategy has no per-line phase; use cubist_reduce".into(),
        ));
    }
    let available = max_merges(strategy, len);
    if k >= len || k > available {
        return Err(Error::InfeasibleRate {
            requested: k,
            available: available.min(len.saturating_sub(1)),
            context: format!("each {what} of {len} tokens under {strategy}"),
        });
    }
    Ok(())
}

/// Removes `r_w` tokens from every row.
pub fn reduce_horizontal(
    grid: &TokenGrid,
    sizes: Option<&TokenSizeGrid>,
    r_w: usize,
    strategy: Strategy,
    representation: Representation,
) -> Result<PhaseOutput> {
    reduce_rows(grid, sizes, r_w, strategy, representation, "row")
}

/// Removes `r_h` tokens from every column.
pub fn reduce_vertical(
    grid: &TokenGrid,
    sizes: Option<&TokenSizeGrid>,
    r_h: usize,
    strategy: Strategy,
    representation: Representation,
) -> Result<PhaseOutput> {
    let t_sizes = sizes.map(|s| s.transpose());
    let out = reduce_rows(&grid.transpose(), t_sizes.as_ref(), r_h, strategy, representation, "column")?;
    Ok(PhaseOutput {
        grid: out.grid.transpose(),
        sizes: out.sizes.map(|s| s.transpose()),
        map: out.map.transpose(),
        edges: out.edges,
    })
}

fn reduce_rows(
    grid: &TokenGrid,
    sizes: Option<&TokenSizeGrid>,
    k: usize,
    strategy: Strategy,
    representation: Representation,
    what: &str,
) -> Result<PhaseOutput> {
    let (h, w) = (grid.height(), grid.width());
    if let Some(s) = sizes {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::ShapeMismatch("size grid does not match token grid".into()));
        }
    }
    if k == 0 {
        return Ok(PhaseOutput {
            grid: grid.clone(),
            sizes: sizes.cloned(),
            map: MergeMap::identity(h, w),
            edges: vec![EdgeSet::default(); h],
        });
    }
    check_line_feasible(strategy, k, w, what)?;

    let lines: Vec<LineOutput> = (0..h)
        .into_par_iter()
        .map(|r| {
            let features = grid.row(r);
            let line_sizes = sizes.map(|s| &s.sizes()[r * w..(r + 1) * w]);
            let edges = match_line(strategy, &features, k)?;
            merge_groups(&features, line_sizes, edges, representation)
        })
        .collect::<Result<_>>()?;

    let new_w = w - k;
    let mut data = Vec::with_capacity(h * new_w * grid.dim());
    let mut targets = Vec::with_capacity(h * w);
    let mut new_sizes = sizes.map(|_| Vec::with_capacity(h * new_w));
    let mut edges = Vec::with_capacity(h);
    for (r, line) in lines.into_iter().enumerate() {
        debug_assert_eq!(line.tokens.len(), new_w);
        for t in &line.tokens {
            data.extend_from_slice(t);
        }
        targets.extend(line.slots.iter().map(|&s| r * new_w + s));
        if let (Some(all), Some(s)) = (new_sizes.as_mut(), line.sizes) {
            all.extend(s);
        }
        edges.push(line.edges);
    }
    Ok(PhaseOutput {
        grid: TokenGrid::new(h, new_w, grid.dim(), data)?,
        sizes: new_sizes.map(|s| TokenSizeGrid::new(h, new_w, s)).transpose()?,
        map: MergeMap::new((h, w), (h, new_w), targets)?,
        edges,
    })
}

/// Global bipartite reduction of a whole region into a single row of
/// `len - k` tokens, ordered by destination flat index.
pub fn reduce_flat(
    grid: &TokenGrid,
    sizes: Option<&TokenSizeGrid>,
    k: usize,
    representation: Representation,
) -> Result<PhaseOutput> {
    let n = grid.len();
    let features: Vec<&[f32]> = grid.tokens().collect();
    let edges = if k == 0 {
        EdgeSet::default()
    } else {
        select_edges_global(&features, k)?
    };
    let line = merge_groups(&features, sizes.map(|s| s.sizes()), edges, representation)?;
    let new_w = n - k;
    let data: Vec<f32> = line.tokens.concat();
    Ok(PhaseOutput {
        grid: TokenGrid::new(1, new_w, grid.dim(), data)?,
        sizes: line.sizes.map(|s| TokenSizeGrid::new(1, new_w, s)).transpose()?,
        map: MergeMap::new((grid.height(), grid.width()), (1, new_w), line.slots)?,
        edges: vec![line.edges],
    })
}

struct RegionOutput {
    grid: TokenGrid,
    sizes: Option<TokenSizeGrid>,
    horizontal_map: MergeMap,
    vertical_map: MergeMap,
    edges: RegionEdges,
}

fn reduce_region(
    grid: &TokenGrid,
    sizes: Option<&TokenSizeGrid>,
    r_h: usize,
    r_w: usize,
    strategy: Strategy,
    representation: Representation,
) -> Result<RegionOutput> {
    if strategy == Strategy::BipartiteGlobal {
        // same token budget as the structured reduction
        let n = grid.len();
        let k = n - (grid.height() - r_h) * (grid.width() - r_w);
        if k > n / 2 {
            return Err(Error::InfeasibleRate {
                requested: k,
                available: n / 2,
                context: format!("global bipartite over a {}x{} region", grid.height(), grid.width()),
            });
        }
        let flat = reduce_flat(grid, sizes, k, representation)?;
        let (fh, fw) = (flat.grid.height(), flat.grid.width());
        return Ok(RegionOutput {
            grid: flat.grid,
            sizes: flat.sizes,
            horizontal_map: flat.map,
            vertical_map: MergeMap::identity(fh, fw),
            edges: RegionEdges {
                horizontal: flat.edges,
                vertical: Vec::new(),
            },
        });
    }
    // both feasibility checks up front so a bad vertical rate fails before any work
    if r_w > 0 {
        check_line_feasible(strategy, r_w, grid.width(), "row")?;
    }
    if r_h > 0 {
        check_line_feasible(strategy, r_h, grid.height(), "column")?;
    }
    let h = reduce_horizontal(grid, sizes, r_w, strategy, representation)?;
    let v = reduce_vertical(&h.grid, h.sizes.as_ref(), r_h, strategy, representation)?;
    Ok(RegionOutput {
        grid: v.grid,
        sizes: v.sizes,
        horizontal_map: h.map,
        vertical_map: v.map,
        edges: RegionEdges {
            horizontal: h.edges,
            vertical: v.edges,
        },
    })
}

/// Full reduction of `grid` under `spec`.
pub fn cubist_reduce(grid: &TokenGrid, spec: &ReductionSpec) -> Result<ReducedGrid> {
    let (height, width) = (grid.height(), grid.width());
    let region = spec.region(height, width)?;
    let (r_h, r_w) = resolve_rates(spec, region.0, region.1)?;
    let representation = spec.representation;
    let sizes = representation
        .tracks_sizes()
        .then(|| TokenSizeGrid::ones(height, width));

    let (out_grid, out_sizes, horizontal_map, vertical_map, regions) = match spec.window {
        None => {
            let out = reduce_region(grid, sizes.as_ref(), r_h, r_w, spec.strategy, representation)?;
            (out.grid, out.sizes, out.horizontal_map, out.vertical_map, vec![out.edges])
        }
        Some(window) => {
            let tiles = (height / window, width / window);
            let windows = window_partition(grid, window)?;
            let size_windows = sizes.as_ref().map(|s| s.partition(window)).transpose()?;
            let outs: Vec<RegionOutput> = windows
                .par_iter()
                .enumerate()
                .map(|(i, w)| {
                    let s = size_windows.as_ref().map(|sw| &sw[i]);
                    reduce_region(w, s, r_h, r_w, spec.strategy, representation)
                })
                .collect::<Result<_>>()?;
            // flat outputs are concatenated window after window
            let out_tiles = if spec.strategy.is_structured() {
                tiles
            } else {
                (1, tiles.0 * tiles.1)
            };
            let grids: Vec<TokenGrid> = outs.iter().map(|o| o.grid.clone()).collect();
            let out_grid = window_unpartition(&grids, out_tiles.0, out_tiles.1)?;
            let out_sizes = if representation.tracks_sizes() {
                let parts: Vec<TokenSizeGrid> = outs
                    .iter()
                    .map(|o| o.sizes.clone().expect("weighted average tracks sizes"))
                    .collect();
                Some(TokenSizeGrid::unpartition(&parts, out_tiles.0, out_tiles.1)?)
            } else {
                None
            };
            let h_maps: Vec<MergeMap> = outs.iter().map(|o| o.horizontal_map.clone()).collect();
            let v_maps: Vec<MergeMap> = outs.iter().map(|o| o.vertical_map.clone()).collect();
            let mid_tiles = if spec.strategy.is_structured() { tiles } else { out_tiles };
            let horizontal_map = lift_window_maps(&h_maps, tiles, mid_tiles)?;
            let vertical_map = lift_window_maps(&v_maps, mid_tiles, out_tiles)?;
            let regions = outs.into_iter().map(|o| o.edges).collect();
            (out_grid, out_sizes, horizontal_map, vertical_map, regions)
        }
    };
    let map = horizontal_map.compose(&vertical_map)?;
    Ok(ReducedGrid {
        grid: out_grid,
        sizes: out_sizes,
        map,
        horizontal_map,
        vertical_map,
        regions,
        rates: (r_h, r_w),
        region,
        strategy: spec.strategy,
    })
}

/// Dense recovery: every original position receives its representative.
pub fn unmerge(reduced: &ReducedGrid) -> TokenGrid {
    unmerge_with(&reduced.grid, &reduced.map)
}

pub fn unmerge_with(grid: &TokenGrid, map: &MergeMap) -> TokenGrid {
    let (h, w) = map.orig_shape();
    let d = grid.dim();
    let mut data = Vec::with_capacity(h * w * d);
    for &t in map.targets() {
        data.extend_from_slice(grid.token_flat(t));
    }
    TokenGrid::new(h, w, d, data).expect("gathered tokens are finite and correctly sized")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Rate;

    fn spec(rh: usize, rw: usize) -> ReductionSpec {
        ReductionSpec::new(Rate::Count(rh), Rate::Count(rw))
    }

    fn noisy(h: usize, w: usize, d: usize, seed: u64) -> TokenGrid {
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        let data = (0..h * w * d)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32
            })
            .collect();
        TokenGrid::new(h, w, d, data).unwrap()
    }

    #[test]
    fn fourteen_to_twelve() {
        let g = noisy(14, 14, 8, 1);
        let h = reduce_horizontal(&g, None, 2, Strategy::BipartiteLocal, Representation::MaxPerDim).unwrap();
        assert_eq!((h.grid.height(), h.grid.width()), (14, 12));
        let v = reduce_vertical(&h.grid, None, 2, Strategy::BipartiteLocal, Representation::MaxPerDim).unwrap();
        assert_eq!((v.grid.height(), v.grid.width()), (12, 12));
        let full = cubist_reduce(&g, &spec(2, 2)).unwrap();
        assert_eq!((full.grid.height(), full.grid.width()), (12, 12));
        assert_eq!(full.grid, v.grid);
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = noisy(5, 7, 3, 2);
        let h = reduce_horizontal(&g, None, 0, Strategy::BipartiteLocal, Representation::MaxPerDim).unwrap();
        assert_eq!(h.grid, g);
        assert!(h.map.is_identity());
        let r = cubist_reduce(&g, &spec(0, 0)).unwrap();
        assert_eq!(r.grid, g);
        assert!(r.map.is_identity());
        assert_eq!(unmerge(&r), g);
    }

    #[test]
    fn identical_pair_row() {
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 1.0];
        let g = TokenGrid::from_tokens(1, 4, &[a, a, b, b]).unwrap();
        // roles d s d s: source 1 takes 0 (sim 1), source 3 takes 2 (sim 1);
        // tie on similarity goes to the lower source.
        let h = reduce_horizontal(&g, None, 1, Strategy::BipartiteLocal, Representation::MaxPerDim).unwrap();
        assert_eq!(h.grid.width(), 3);
        assert_eq!(h.map.targets(), &[0, 0, 1, 2]);
        assert_eq!(h.grid.token(0, 0), &a);
        assert_eq!(h.grid.token(0, 1), &b);
        assert_eq!(h.grid.token(0, 2), &b);
    }

    #[test]
    fn vertical_is_transposed_horizontal() {
        let g = noisy(9, 6, 4, 3);
        for strategy in [Strategy::BipartiteLocal, Strategy::NaiveLocal] {
            let v = reduce_vertical(&g, None, 3, strategy, Representation::MaxPerDim).unwrap();
            // explicit transpose through token copies
            let mut t = Vec::new();
            for c in 0..g.width() {
                for r in 0..g.height() {
                    t.push(g.token(r, c).to_vec());
                }
            }
            let tg = TokenGrid::from_tokens(g.width(), g.height(), &t).unwrap();
            let h = reduce_horizontal(&tg, None, 3, strategy, Representation::MaxPerDim).unwrap();
            assert_eq!(v.grid, h.grid.transpose());
            assert_eq!(v.map, h.map.transpose());
        }
    }

    #[test]
    fn infeasible_rates() {
        let g = noisy(6, 6, 2, 4);
        // bipartite has only 3 sources per 6-token row
        let err = cubist_reduce(&g, &spec(0, 4)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleRate { requested: 4, available: 3, .. }), "{err}");
        assert!(err.to_string().contains("row"));
        assert!(cubist_reduce(&g, &spec(4, 0)).unwrap_err().to_string().contains("column"));
        // naive allows up to 5
        assert!(cubist_reduce(&g, &spec(5, 5).with_strategy(Strategy::NaiveLocal)).is_ok());
        assert!(matches!(cubist_reduce(&g, &spec(6, 0)), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn windowed_shapes() {
        let g = noisy(16, 16, 4, 5);
        let r = cubist_reduce(&g, &spec(2, 2).with_window(Some(8))).unwrap();
        assert_eq!((r.grid.height(), r.grid.width()), (12, 12));
        assert_eq!(r.regions.len(), 4);
        assert!(cubist_reduce(&noisy(14, 14, 2, 0), &spec(1, 1).with_window(Some(8))).is_err());
    }

    #[test]
    fn identical_tokens_stay_identical() {
        let t = [0.5f32, -2.0, 3.0];
        let g = TokenGrid::filled(8, 8, &t).unwrap();
        for repr in Representation::ALL {
            for strategy in Strategy::ALL {
                let r = cubist_reduce(&g, &spec(2, 2).with_representation(repr).with_strategy(strategy)).unwrap();
                assert!(r.grid.tokens().all(|x| x == t), "{strategy} {repr}");
                assert_eq!(unmerge(&r), g);
            }
        }
    }

    #[test]
    fn weighted_average_tracks_sizes() {
        let g = noisy(8, 10, 3, 6);
        let r = cubist_reduce(&g, &spec(3, 4).with_representation(Representation::WeightedAverage)).unwrap();
        let sizes = r.sizes.as_ref().unwrap();
        assert_eq!(sizes.total(), 80);
        let counts = r.map.preimage_counts();
        assert_eq!(sizes.sizes().iter().map(|&s| s as usize).collect::<Vec<_>>(), counts);
        assert!(cubist_reduce(&g, &spec(3, 4)).unwrap().sizes.is_none());
    }

    #[test]
    fn unmerge_broadcasts_pair() {
        let a = [1.0f32, 2.0];
        let c = [0.0f32, -1.0];
        let g = TokenGrid::from_tokens(1, 3, &[a, a, c]).unwrap();
        let r = cubist_reduce(&g, &spec(0, 1)).unwrap();
        let u = unmerge(&r);
        assert_eq!(u.token(0, 0), u.token(0, 1));
        assert_eq!(u.token(0, 2), &c);
    }

    #[test]
    fn bipartite_preimages_at_most_nine() {
        for seed in 0..20 {
            let g = noisy(10, 12, 3, seed);
            let r = cubist_reduce(&g, &spec(5, 6)).unwrap();
            assert!(r.map.max_preimage() <= 9);
            assert!(r.horizontal_map.max_preimage() <= 3);
            assert!(r.vertical_map.max_preimage() <= 3);
        }
    }

    #[test]
    fn global_output_is_flat() {
        let g = noisy(6, 6, 4, 7);
        let r = cubist_reduce(&g, &spec(1, 1).with_strategy(Strategy::BipartiteGlobal)).unwrap();
        assert!(!r.is_structured());
        assert_eq!((r.grid.height(), r.grid.width()), (1, 25));
        assert_eq!(r.map.reduced_shape(), (1, 25));
        assert_eq!(r.edge_count(), 11);
        let windowed = cubist_reduce(
            &noisy(8, 8, 4, 8),
            &spec(1, 1).with_strategy(Strategy::BipartiteGlobal).with_window(Some(4)),
        )
        .unwrap();
        assert_eq!((windowed.grid.height(), windowed.grid.width()), (1, 36));
        assert!(cubist_reduce(&g, &spec(4, 4).with_strategy(Strategy::BipartiteGlobal)).is_err());
    }

    #[test]
    fn determinism_across_thread_counts() {
        let g = noisy(24, 24, 16, 9);
        let s = spec(4, 5).with_window(Some(12));
        let many = cubist_reduce(&g, &s).unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| cubist_reduce(&g, &s).unwrap());
        assert_eq!(many.grid, one.grid);
        assert_eq!(many.map, one.map);
        assert_eq!(many.regions, one.regions);
    }

    #[test]
    fn composed_map_keeps_row_order_but_not_always_column_order() {
        // Original column 2 reaches the vertical phase through different
        // intermediate columns in rows 3 and 4, whose compactions differ.
        let g = noisy(8, 8, 3, 1);
        let r = cubist_reduce(&g, &spec(3, 3)).unwrap();
        assert!(r.map.preserves_row_order());
        assert!(r.horizontal_map.preserves_row_order());
        assert!(r.vertical_map.preserves_column_order());
        assert!(!r.map.preserves_column_order());
        assert_eq!(r.map.target(3, 2), (3, 1));
        assert_eq!(r.map.target(4, 2), (2, 2));
    }
}
