use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cubist_merge::format::{load_grid, save_grid};
use cubist_merge::TokenGrid;

fn cubist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cubist"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noisy(h: usize, w: usize, d: usize) -> TokenGrid {
    let data = (0..h * w * d).map(|i| ((i * 2654435761usize) % 1009) as f32 / 504.5 - 1.0).collect();
    TokenGrid::new(h, w, d, data).unwrap()
}

#[test]
fn reduce_14_to_12() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output, map) = (dir.path().join("in"), dir.path().join("out"), dir.path().join("map.csv"));
    save_grid(&input, &noisy(14, 14, 64)).unwrap();
    let out = cubist(&["reduce", "--input", s(&input), "--rh", "2", "--rw", "2", "--output", s(&output), "--map", s(&map)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let g = load_grid(&output).unwrap();
    assert_eq!((g.height(), g.width(), g.dim()), (12, 12, 64));
    let csv = fs::read_to_string(&map).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "orig_row,orig_col,new_row,new_col");
    assert_eq!(csv.lines().count(), 1 + 196);
}

#[test]
fn zero_rate_copies_payload() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("in"), dir.path().join("out"));
    save_grid(&input, &noisy(6, 5, 3)).unwrap();
    let out = cubist(&["reduce", "--input", s(&input), "--rh", "0", "--rw", "0", "--output", s(&output)]);
    assert!(out.status.success());
    assert_eq!(fs::read(&input).unwrap(), fs::read(&output).unwrap());
}

#[test]
fn full_height_rate_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    save_grid(&input, &noisy(14, 14, 4)).unwrap();
    let out = cubist(&["reduce", "--input", s(&input), "--rh", "14", "--rw", "0", "--output", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("14"));
}

#[test]
fn malformed_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::write(&input, b"TGRDxxxxxxxxxxxxxxxxxxxxxxxx").unwrap();
    let out = cubist(&["reduce", "--input", s(&input), "--rh", "1", "--rw", "1", "--output", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let missing = cubist(&["reduce", "--input", s(&dir.path().join("nope")), "--rh", "1", "--rw", "1", "--output", "o"]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for p in [&a, &b] {
        let out = cubist(&["gen", "--grid", "10x12", "--dim", "8", "--pattern", "stripes", "--seed", "4", "--output", s(p)]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let g = load_grid(&a).unwrap();
    assert_eq!((g.height(), g.width(), g.dim()), (10, 12, 8));
}

#[test]
fn compare_emits_nine_rows_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    cubist(&["gen", "--grid", "12x12", "--dim", "16", "--pattern", "uniform", "--output", s(&input)]);
    let out = cubist(&["compare", "--input", s(&input), "--rh", "2", "--rw", "2", "--k-list", "1,3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 27);
    // identical tokens reconstruct exactly under every combination
    let mse_col = text.lines().next().unwrap().split(',').position(|c| c == "reconstruction_mse").unwrap();
    for line in text.lines().skip(1) {
        assert_eq!(line.split(',').nth(mse_col).unwrap(), "0.0");
    }
}

#[test]
fn bench_rate_zero_is_baseline_and_outputs_repeat() {
    let run = |repeats: &str| {
        let out = cubist(&[
            "bench", "--depth", "2", "--dim", "16", "--heads", "2", "--grid", "8x8", "--window", "4", "--rates", "0,1,2",
            "--repeats", repeats, "--seed", "3",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let (one, nine) = (run("1"), run("9"));
    let digests = |t: &str| t.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect::<Vec<_>>();
    assert_eq!(digests(&one), digests(&nine));
    let first = one.lines().nth(1).unwrap();
    assert_eq!(first.split(',').nth(10).unwrap(), "1.0");
}

#[test]
fn bench_invalid_config_exits_2() {
    let out = cubist(&["bench", "--depth", "2", "--dim", "18", "--heads", "4", "--grid", "8x8", "--window", "4", "--repeats", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
