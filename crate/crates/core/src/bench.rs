//! Strategy comparison and timing sweeps behind the `cubist` CLI.
//!
//! Both produce fixed-schema CSV rows; column order follows field order.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

pub use csv::Error as CsvError;

use crate::config::{resolve_rates, Rate, ReductionSpec, Representation, Strategy};
use crate::error::{Error, Result};
use crate::grid::{window_partition, TokenGrid};
use crate::matching::{match_line, select_edges_global};
use crate::pipeline::{cubist_reduce, unmerge};
use crate::synth::{generate, Pattern};
use crate::vit::{LayerTrace, ToyVit, ToyVitConfig};

fn shape(h: usize, w: usize, d: usize) -> String {
    format!("{h}x{w}x{d}")
}

/// Sum of selected-edge similarities when `spec.strategy`'s matcher runs
/// directly on the input: on every row with `k = r_w` and every column with
/// `k = r_h` (per window when windowed). The global strategy instead runs
/// once per region with the structured token budget.
///
/// Unlike the similarity of a full reduction, both local strategies see
/// identical lines here, so the naive sum is never below the bipartite one.
pub fn retained_similarity(grid: &TokenGrid, spec: &ReductionSpec) -> Result<f64> {
    let region = spec.region(grid.height(), grid.width())?;
    let (r_h, r_w) = resolve_rates(spec, region.0, region.1)?;
    let regions = match spec.window {
        Some(w) => window_partition(grid, w)?,
        None => vec![grid.clone()],
    };
    let mut total = 0.0;
    for g in &regions {
        if spec.strategy == Strategy::BipartiteGlobal {
            let k = g.len() - (g.height() - r_h) * (g.width() - r_w);
            let features: Vec<&[f32]> = g.tokens().collect();
            total += select_edges_global(&features, k)?.similarity_sum();
            continue;
        }
        if r_w > 0 {
            for r in 0..g.height() {
                total += match_line(spec.strategy, &g.row(r), r_w)?.similarity_sum();
            }
        }
        if r_h > 0 {
            for c in 0..g.width() {
                total += match_line(spec.strategy, &g.column(c), r_h)?.similarity_sum();
            }
        }
    }
    Ok(total)
}

pub fn mean_squared_error(a: &TokenGrid, b: &TokenGrid) -> f64 {
    assert_eq!(a.data().len(), b.data().len());
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let e = *x as f64 - *y as f64;
            e * e
        })
        .sum();
    sum / a.data().len() as f64
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CompareRow {
    pub strategy: String,
    pub representation: String,
    pub r_h: usize,
    pub r_w: usize,
    pub window: usize,
    pub input_shape: String,
    pub output_shape: String,
    pub structured: bool,
    pub retained_similarity: f64,
    pub mean_merged_similarity: f64,
    pub reconstruction_mse: f64,
    pub wall_ms: f64,
}

/// One row per (rates, strategy, representation). `window = 0` in the CSV
/// means no windowing.
pub fn compare(grid: &TokenGrid, rates: &[(Rate, Rate)], window: Option<usize>) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for &(rate_h, rate_w) in rates {
        for strategy in Strategy::ALL {
            let base = ReductionSpec::new(rate_h, rate_w)
                .with_window(window)
                .with_strategy(strategy);
            let retained = retained_similarity(grid, &base)?;
            for representation in Representation::ALL {
                let spec = base.with_representation(representation);
                let start = Instant::now();
                let reduced = cubist_reduce(grid, &spec)?;
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                let mse = mean_squared_error(&unmerge(&reduced), grid);
                rows.push(CompareRow {
                    strategy: strategy.to_string(),
                    representation: representation.to_string(),
                    r_h: reduced.rates.0,
                    r_w: reduced.rates.1,
                    window: window.unwrap_or(0),
                    input_shape: shape(grid.height(), grid.width(), grid.dim()),
                    output_shape: shape(reduced.grid.height(), reduced.grid.width(), reduced.grid.dim()),
                    structured: reduced.is_structured(),
                    retained_similarity: retained,
                    mean_merged_similarity: reduced.mean_merged_similarity(),
                    reconstruction_mse: mse,
                    wall_ms,
                });
            }
        }
    }
    Ok(rows)
}

/// Checks that naive-local selection retains at least as much similarity as
/// bipartite-local for every rate and representation.
pub fn check_naive_dominates(rows: &[CompareRow]) -> Result<()> {
    for naive in rows.iter().filter(|r| r.strategy == Strategy::NaiveLocal.name()) {
        let bip = rows
            .iter()
            .find(|r| {
                r.strategy == Strategy::BipartiteLocal.name()
                    && r.representation == naive.representation
                    && (r.r_h, r.r_w) == (naive.r_h, naive.r_w)
            })
            .ok_or_else(|| Error::InvalidSpec("comparison is missing a bipartite_local row".into()))?;
        if naive.retained_similarity < bip.retained_similarity - 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "naive_local retained {} < bipartite_local {} at r_h={} r_w={}",
                naive.retained_similarity, bip.retained_similarity, naive.r_h, naive.r_w
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub height: usize,
    pub width: usize,
    /// Attention window; reduction uses the same windows.
    pub window: Option<usize>,
    pub layer: usize,
    /// Symmetric rates `r_h = r_w`; 0 is always measured first as the baseline.
    pub rates: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub representation: Representation,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            depth: 12,
            dim: 384,
            heads: 6,
            height: 56,
            width: 56,
            window: Some(14),
            layer: 0,
            rates: vec![0, 2, 4, 6],
            repeats: 3,
            seed: 0,
            strategy: Strategy::BipartiteLocal,
            representation: Representation::MaxPerDim,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BenchRow {
    pub strategy: String,
    pub representation: String,
    pub r_h: usize,
    pub r_w: usize,
    pub layer: usize,
    pub window: usize,
    pub input_shape: String,
    pub output_shape: String,
    pub mean_merged_similarity: f64,
    pub wall_ms: f64,
    pub speedup: f64,
    /// FNV-1a over the output bits; equal digests mean bit-identical outputs.
    pub output_digest: String,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// Per-layer trace of the last timed run, one entry per row.
    pub traces: Vec<Vec<LayerTrace>>,
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn digest(grid: &TokenGrid) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in grid.data() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Times the toy transformer at every rate: one discarded warm-up, then the
/// median of `repeats` sequential runs.
pub fn run_bench(config: &BenchConfig) -> Result<BenchResult> {
    if config.repeats == 0 {
        return Err(Error::InvalidSpec("repeats must be at least 1".into()));
    }
    let input = generate(Pattern::Blobs, config.height, config.width, config.dim, config.seed)?.grid;
    let mut rates = vec![0];
    rates.extend(config.rates.iter().copied().filter(|&r| r != 0));

    let mut rows: Vec<BenchRow> = Vec::new();
    let mut traces = Vec::new();
    let mut baseline_ms = None;
    for &r in &rates {
        let spec = ReductionSpec::new(Rate::Count(r), Rate::Count(r))
            .with_window(config.window)
            .with_layer(config.layer)
            .with_strategy(config.strategy)
            .with_representation(config.representation);
        let vit = ToyVit::new(ToyVitConfig {
            depth: config.depth,
            dim: config.dim,
            heads: config.heads,
            window: config.window,
            reduction: Some(spec),
            seed: config.seed,
            ..ToyVitConfig::default()
        })?;
        vit.forward(&input)?;
        let mut times = Vec::with_capacity(config.repeats);
        let mut last = None;
        for _ in 0..config.repeats {
            let start = Instant::now();
            let out = vit.forward(&input)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
            last = Some(out);
        }
        let out = last.expect("repeats >= 1");
        let ms = median(&mut times);
        let base = *baseline_ms.get_or_insert(ms);
        let reduced = out.reduced.as_ref();
        rows.push(BenchRow {
            strategy: config.strategy.to_string(),
            representation: config.representation.to_string(),
            r_h: r,
            r_w: r,
            layer: config.layer,
            window: config.window.unwrap_or(0),
            input_shape: shape(input.height(), input.width(), input.dim()),
            output_shape: shape(out.grid.height(), out.grid.width(), out.grid.dim()),
            mean_merged_similarity: reduced.map_or(0.0, |r| r.mean_merged_similarity()),
            wall_ms: ms,
            speedup: base / ms,
            output_digest: digest(&out.grid),
        });
        traces.push(out.trace);
    }
    Ok(BenchResult { rows, traces })
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per layer: `{"layer": int, "tokens": int, "ms": float}`.
pub fn write_trace_jsonl<W: Write>(traces: &[Vec<LayerTrace>], mut out: W) -> std::io::Result<()> {
    for t in traces.iter().flatten() {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn compare_has_nine_rows_per_rate() {
        let g = generate(Pattern::Blobs, 12, 12, 8, 2).unwrap().grid;
        let rows = compare(&g, &[(Rate::Count(2), Rate::Count(2))], None).unwrap();
        assert_eq!(rows.len(), 9);
        check_naive_dominates(&rows).unwrap();
        assert!(rows.iter().filter(|r| r.strategy == "bipartite_global").all(|r| !r.structured));
        assert!(rows.iter().filter(|r| r.strategy != "bipartite_global").all(|r| r.output_shape == "10x10x8"));
    }

    #[test]
    fn compare_uniform_grid_reconstructs_exactly() {
        let g = generate(Pattern::Uniform, 8, 8, 4, 0).unwrap().grid;
        let rows = compare(&g, &[(Rate::Count(1), Rate::Count(1))], Some(4)).unwrap();
        assert!(rows.iter().all(|r| r.reconstruction_mse == 0.0));
    }

    #[test]
    fn csv_header_order() {
        let g = generate(Pattern::Stripes, 8, 8, 4, 0).unwrap().grid;
        let rows = compare(&g, &[(Rate::Count(1), Rate::Count(1))], None).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "strategy,representation,r_h,r_w,window,input_shape,output_shape,structured,\
             retained_similarity,mean_merged_similarity,reconstruction_mse,wall_ms"
        );
        assert_eq!(text.lines().count(), 10);
    }

    #[test]
    fn tiny_bench_is_self_normalized_and_deterministic() {
        let cfg = BenchConfig {
            depth: 2,
            dim: 16,
            heads: 2,
            height: 8,
            width: 8,
            window: Some(4),
            rates: vec![1, 2],
            repeats: 1,
            ..BenchConfig::default()
        };
        let a = run_bench(&cfg).unwrap();
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.rows[0].speedup, 1.0);
        assert_eq!(a.rows[2].output_shape, "4x4x16");
        let b = run_bench(&BenchConfig { repeats: 3, ..cfg }).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.output_digest, y.output_digest);
        }
        let mut buf = Vec::new();
        write_trace_jsonl(&a.traces, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().next().unwrap().starts_with(r#"{"layer":0,"tokens":64,"ms":"#));
    }
}
