use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use cubist_merge::bench::{check_naive_dominates, compare, run_bench, write_csv, write_trace_jsonl, BenchConfig};
use cubist_merge::format::{load_grid, save_grid};
use cubist_merge::synth::{generate, Pattern};
use cubist_merge::{cubist_reduce, Error, Rate, ReductionSpec, Representation, Strategy};

/// Structure-preserving token merging on token-grid files.
#[derive(Parser)]
#[command(name = "cubist", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce a grid file and optionally dump the merge map as CSV.
    Reduce {
        #[arg(long)]
        input: PathBuf,
        /// Tokens removed from every column: a count, or a fraction like 0.25.
        #[arg(long)]
        rh: Rate,
        /// Tokens removed from every row.
        #[arg(long)]
        rw: Rate,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value = "bipartite_local")]
        strategy: Strategy,
        #[arg(long = "repr", default_value = "max_per_dim")]
        representation: Representation,
        #[arg(long)]
        output: PathBuf,
        /// Writes orig_row,orig_col,new_row,new_col per input position.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Compare every strategy and representation; CSV goes to stdout or --output.
    Compare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rh: Rate,
        #[arg(long)]
        rw: Rate,
        /// Extra sweep points; each k adds r_h = r_w = k.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        k_list: Vec<Rate>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Time the toy transformer at several reduction rates.
    Bench {
        #[arg(long, default_value_t = 12)]
        depth: usize,
        #[arg(long, default_value_t = 384)]
        dim: usize,
        #[arg(long, default_value_t = 6)]
        heads: usize,
        #[arg(long, default_value = "56x56")]
        grid: GridShape,
        /// Attention and reduction window; 0 means global attention.
        #[arg(long, default_value_t = 14)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,2,4,6")]
        rates: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bipartite_local")]
        strategy: Strategy,
        #[arg(long = "repr", default_value = "max_per_dim")]
        representation: Representation,
        /// CSV report path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON-lines per-layer trace of the last timed run at each rate.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write a synthetic grid file.
    Gen {
        #[arg(long)]
        grid: GridShape,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value = "blobs")]
        pattern: Pattern,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy)]
struct GridShape(usize, usize);

impl FromStr for GridShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        Ok(GridShape(parse(h)?, parse(w)?))
    }
}

enum Failure {
    Lib(Error),
    Io(PathBuf, io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(path.to_path_buf(), e)
}

fn csv_at(path: &Path) -> impl FnOnce(cubist_merge::bench::CsvError) -> Failure + '_ {
    move |e| Failure::Io(path.to_path_buf(), e.into())
}

/// Opens `path` for writing, or stdout when `None`.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_at(p))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Reduce {
            input,
            rh,
            rw,
            window,
            strategy,
            representation,
            output,
            map,
        } => {
            let grid = load_grid(&input)?;
            let spec = ReductionSpec::new(rh, rw)
                .with_window(window)
                .with_strategy(strategy)
                .with_representation(representation);
            let reduced = cubist_reduce(&grid, &spec)?;
            save_grid(&output, &reduced.grid).map_err(io_at(&output))?;
            if let Some(path) = map {
                let f = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
                reduced.map.write_csv(f).map_err(csv_at(&path))?;
            }
            eprintln!(
                "{}x{} -> {}x{} ({} merges)",
                grid.height(),
                grid.width(),
                reduced.grid.height(),
                reduced.grid.width(),
                reduced.edge_count()
            );
        }
        Command::Compare {
            input,
            rh,
            rw,
            k_list,
            window,
            output,
        } => {
            let grid = load_grid(&input)?;
            let mut rates = vec![(rh, rw)];
            rates.extend(k_list.into_iter().map(|k| (k, k)));
            let rows = compare(&grid, &rates, window)?;
            check_naive_dominates(&rows)?;
            let target = output.clone().unwrap_or_else(|| "<stdout>".into());
            write_csv(&rows, sink(output.as_deref())?).map_err(csv_at(&target))?;
        }
        Command::Bench {
            depth,
            dim,
            heads,
            grid,
            window,
            layer,
            rates,
            repeats,
            seed,
            strategy,
            representation,
            output,
            trace,
        } => {
            let config = BenchConfig {
                depth,
                dim,
                heads,
                height: grid.0,
                width: grid.1,
                window: (window > 0).then_some(window),
                layer,
                rates,
                repeats,
                seed,
                strategy,
                representation,
            };
            let result = run_bench(&config)?;
            let target = output.clone().unwrap_or_else(|| "<stdout>".into());
            write_csv(&result.rows, sink(output.as_deref())?).map_err(csv_at(&target))?;
            if let Some(path) = trace {
                let mut f = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
                write_trace_jsonl(&result.traces, &mut f).map_err(io_at(&path))?;
                f.flush().map_err(io_at(&path))?;
            }
        }
        Command::Gen {
            grid,
            dim,
            pattern,
            seed,
            output,
        } => {
            let synth = generate(pattern, grid.0, grid.1, dim, seed)?;
            save_grid(&output, &synth.grid).map_err(io_at(&output))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_spec_error() {
                2
            } else if matches!(e, Error::Format(_) | Error::NonFinite(_)) {
                3
            } else {
                1
            })
        }
        // unreadable or unwritable files count as malformed
        Err(Failure::Io(path, e)) => {
            eprintln!("error: {}: {e}", path.display());
            ExitCode::from(3)
        }
    }
}
