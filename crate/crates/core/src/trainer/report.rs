//! Score files and the averaging of several runs onto a common grid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// One finished training episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRecord {
    /// Transitions counted when the episode ended.
    pub transitions: u64,
    pub episode: u64,
    pub score: f64,
    pub walltime: f64,
}

/// C-style `%.{prec}e`: signed exponent of at least two digits.
pub fn sci(x: f64, prec: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.prec$e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Score file text: `#` header lines, then `transitions episode score walltime` rows.
pub fn format_scores(header: &[String], records: &[ScoreRecord]) -> String {
    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "# {h}");
    }
    for r in records {
        let _ = writeln!(
            out,
            "{} {} {} {:.3}",
            r.transitions,
            r.episode,
            sci(r.score, 6),
            r.walltime
        );
    }
    out
}

pub fn write_scores(path: &Path, header: &[String], records: &[ScoreRecord]) -> Result<()> {
    std::fs::write(path, format_scores(header, records)).map_err(|e| Error::io(path, e))
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || {
            Error::Format(format!(
                "line {}: expected 4 numeric columns in `{line}`",
                n + 1
            ))
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(bad());
        }
        out.push(ScoreRecord {
            transitions: cols[0].parse().map_err(|_| bad())?,
            episode: cols[1].parse().map_err(|_| bad())?,
            score: cols[2].parse().map_err(|_| bad())?,
            walltime: cols[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Cross-run statistics at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub transitions: u64,
    pub n_runs: usize,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCurve {
    pub points: Vec<CurvePoint>,
}

pub const DEFAULT_GRID_POINTS: usize = 200;
pub const DEFAULT_WINDOW: usize = 20;

/// Linear interpolation of `(xs, ys)` at `x`, flat outside the data.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x);
    if i == 0 {
        return ys[0];
    }
    if i == xs.len() || xs[i - 1] == x {
        return ys[i - 1];
    }
    let (x0, x1) = (xs[i - 1], xs[i]);
    ys[i - 1] + (ys[i] - ys[i - 1]) * (x - x0) / (x1 - x0)
}

/// Trailing moving average: point `t` averages the last `window` values up to `t`.
pub fn trailing_mean(ys: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..ys.len())
        .map(|t| {
            let s = (t + 1).saturating_sub(w);
            ys[s..=t].iter().sum::<f64>() / (t + 1 - s) as f64
        })
        .collect()
}

/// Grid of `points` transition counts spanning the range every run covers.
pub fn common_grid(runs: &[Vec<ScoreRecord>], points: usize) -> Result<Vec<u64>> {
    if runs.is_empty() || runs.iter().any(Vec::is_empty) {
        return Err(Error::Insufficient(
            "averaging needs at least one non-empty run".into(),
        ));
    }
    let lo = runs
        .iter()
        .map(|r| r[0].transitions)
        .max()
        .expect("non-empty");
    let hi = runs
        .iter()
        .map(|r| r[r.len() - 1].transitions)
        .min()
        .expect("non-empty");
    if lo > hi {
        return Err(Error::Insufficient(format!(
            "runs share no transition range ({lo} > {hi})"
        )));
    }
    let points = points.max(1);
    let mut grid: Vec<u64> = if points == 1 || lo == hi {
        vec![lo]
    } else {
        (0..points)
            .map(|i| lo + ((hi - lo) as f64 * i as f64 / (points - 1) as f64).round() as u64)
            .collect()
    };
    grid.dedup();
    Ok(grid)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Interpolates every run onto the common grid, smooths each with a trailing
/// window and reduces across runs; the band is mean +- population std.
pub fn average_runs(
    runs: &[Vec<ScoreRecord>],
    grid_points: usize,
    window: usize,
) -> Result<AveragedCurve> {
    let grid = common_grid(runs, grid_points)?;
    let smoothed: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            let xs: Vec<f64> = r.iter().map(|s| s.transitions as f64).collect();
            let ys: Vec<f64> = r.iter().map(|s| s.score).collect();
            let on_grid: Vec<f64> = grid
                .iter()
                .map(|&g| interpolate(&xs, &ys, g as f64))
                .collect();
            trailing_mean(&on_grid, window)
        })
        .collect();
    let n = runs.len() as f64;
    let points = grid
        .iter()
        .enumerate()
        .map(|(t, &g)| {
            let mut vals: Vec<f64> = smoothed.iter().map(|s| s[t]).collect();
            vals.sort_by(f64::total_cmp);
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            CurvePoint {
                transitions: g,
                n_runs: runs.len(),
                min: vals[0],
                max: vals[vals.len() - 1],
                median: median(&vals),
                mean,
                lower: mean - std,
                upper: mean + std,
            }
        })
        .collect();
    Ok(AveragedCurve { points })
}

/// Reads score files (concurrently, order preserved) and averages them.
pub fn average_files(
    files: &[PathBuf],
    grid_points: usize,
    window: usize,
) -> Result<AveragedCurve> {
    let runs = files
        .par_iter()
        .map(|f| read_scores(f))
        .collect::<Result<Vec<_>>>()?;
    average_runs(&runs, grid_points, window)
}

pub fn format_averaged(curve: &AveragedCurve) -> String {
    let mut out = String::from("# transitions n_runs min max median mean lower upper\n");
    for p in &curve.points {
        let stats = [p.min, p.max, p.median, p.mean, p.lower, p.upper].map(|v| sci(v, 6));
        let _ = writeln!(out, "{} {} {}", p.transitions, p.n_runs, stats.join(" "));
    }
    out
}

pub fn write_averaged(curve: &AveragedCurve, path: &Path) -> Result<()> {
    std::fs::write(path, format_averaged(curve)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn rec(t: u64, ep: u64, score: f64) -> ScoreRecord {
        ScoreRecord {
            transitions: t,
            episode: ep,
            score,
            walltime: 0.0,
        }
    }

    fn run(points: &[(u64, f64)]) -> Vec<ScoreRecord> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(t, s))| rec(t, i as u64 + 1, s))
            .collect()
    }

    #[test]
    fn sci_matches_printf() {
        assert_eq!(sci(1.5, 6), "1.500000e+00");
        assert_eq!(sci(-0.000123, 6), "-1.230000e-04");
        assert_eq!(sci(0.0, 6), "0.000000e+00");
        assert_eq!(sci(1e100, 6), "1.000000e+100");
        assert_eq!(sci(-200.0, 3), "-2.000e+02");
    }

    #[test]
    fn empty_records_give_header_only() {
        let text = format_scores(&["config x".into()], &[]);
        assert_eq!(text, "# config x\n");
        assert!(parse_scores(&text).unwrap().is_empty());
    }

    #[test]
    fn score_file_round_trip() {
        let records = vec![rec(10, 1, -1234.5), rec(25, 2, 0.0), rec(31, 3, 500.0)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.dat");
        write_scores(&path, &["seed 0".into()], &records).unwrap();
        assert_eq!(read_scores(&path).unwrap(), records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("10 1 -1.234500e+03 0.000\n"));
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_scores("1 2 3\n").is_err());
        assert!(parse_scores("1 2 x 0\n").is_err());
    }

    #[test]
    fn single_run_window_one_is_the_raw_curve() {
        let r = run(&[(0, 1.0), (10, 2.0), (20, 4.0)]);
        let c = average_runs(&[r], 3, 1).unwrap();
        let got: Vec<(u64, f64)> = c.points.iter().map(|p| (p.transitions, p.mean)).collect();
        assert_eq!(got, vec![(0, 1.0), (10, 2.0), (20, 4.0)]);
        for p in &c.points {
            assert_eq!(
                (p.lower, p.upper, p.min, p.max, p.median),
                (p.mean, p.mean, p.mean, p.mean, p.mean)
            );
        }
    }

    #[test]
    fn constant_runs_use_population_std() {
        let a = run(&[(0, 1.0), (100, 1.0)]);
        let b = run(&[(0, 3.0), (100, 3.0)]);
        let c = average_runs(&[a, b], 11, 5).unwrap();
        assert_eq!(c.points.len(), 11);
        for p in &c.points {
            assert_eq!(
                (p.n_runs, p.mean, p.lower, p.upper, p.median),
                (2, 2.0, 1.0, 3.0, 2.0)
            );
        }
    }

    #[test]
    fn grid_clamps_to_the_overlap() {
        // two straight lines y = 2x over different ranges
        let a = run(&[(10, 20.0), (40, 80.0), (100, 200.0)]);
        let b = run(&[(50, 100.0), (70, 140.0), (200, 400.0)]);
        let c = average_runs(&[a, b], 6, 1).unwrap();
        let grid: Vec<u64> = c.points.iter().map(|p| p.transitions).collect();
        assert_eq!(grid, vec![50, 60, 70, 80, 90, 100]);
        for p in &c.points {
            let want = 2.0 * p.transitions as f64;
            assert!((p.mean - want).abs() < 1e-12 && (p.upper - p.lower).abs() < 1e-12);
        }
        assert!(average_runs(&[run(&[(0, 0.0), (5, 0.0)]), run(&[(6, 0.0)])], 10, 1).is_err());
    }

    #[test]
    fn hand_computed_two_run_fixture() {
        let a = run(&[(0, 0.0), (10, 10.0)]);
        let b = run(&[(0, 4.0), (10, 2.0)]);
        // grid 0, 5, 10; a -> 0, 5, 10; b -> 4, 3, 2; window 2
        // smoothed a: 0, 2.5, 7.5; smoothed b: 4, 3.5, 2.5
        let c = average_runs(&[a, b], 3, 2).unwrap();
        let text = format_averaged(&c);
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(
            rows,
            vec![
                "0 2 0.000000e+00 4.000000e+00 2.000000e+00 2.000000e+00 0.000000e+00 4.000000e+00",
                "5 2 2.500000e+00 3.500000e+00 3.000000e+00 3.000000e+00 2.500000e+00 3.500000e+00",
                "10 2 2.500000e+00 7.500000e+00 5.000000e+00 5.000000e+00 2.500000e+00 7.500000e+00",
            ]
        );
    }

    #[test]
    fn file_averaging_ignores_order() {
        let dir = tempfile::tempdir().unwrap();
        let runs = [
            run(&[(0, 1.0), (50, 7.0), (90, -3.0)]),
            run(&[(5, 2.0), (95, 0.5)]),
            run(&[(1, 9.0), (80, 1.0), (99, 1.0)]),
        ];
        let paths: Vec<PathBuf> = runs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let p = dir.path().join(format!("{i}.dat"));
                write_scores(&p, &[], r).unwrap();
                p
            })
            .collect();
        let fwd = average_files(&paths, 17, 4).unwrap();
        let rev: Vec<PathBuf> = paths.iter().rev().cloned().collect();
        assert_eq!(
            format_averaged(&fwd),
            format_averaged(&average_files(&rev, 17, 4).unwrap())
        );
        assert!(average_files(&[dir.path().join("missing.dat")], 10, 1).is_err());
    }

    fn brute_trailing(ys: &[f64], w: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for t in 0..ys.len() {
            let mut sum = 0.0;
            let mut n = 0;
            for k in 0..w {
                if k <= t {
                    sum += ys[t - k];
                    n += 1;
                }
            }
            out.push(sum / n as f64);
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn band_orders_and_smoothing_matches_brute_force(
            scores in prop::collection::vec(prop::collection::vec(-500.0f64..500.0, 1..30), 1..5),
            window in 1usize..25,
            points in 1usize..60,
        ) {
            let runs: Vec<Vec<ScoreRecord>> = scores
                .iter()
                .map(|s| s.iter().enumerate().map(|(i, &v)| rec(3 * i as u64, i as u64 + 1, v)).collect())
                .collect();
            let c = average_runs(&runs, points, window).unwrap();
            for p in &c.points {
                prop_assert!(p.lower <= p.mean + 1e-9 && p.mean <= p.upper + 1e-9);
                prop_assert!(p.min <= p.median && p.median <= p.max);
                prop_assert!(p.min <= p.mean + 1e-9 && p.mean <= p.max + 1e-9);
            }
            let s = &scores[0];
            prop_assert_eq!(trailing_mean(s, window).len(), s.len());
            for (a, b) in trailing_mean(s, window).iter().zip(brute_trailing(s, window)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
