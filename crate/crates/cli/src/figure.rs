//! Bound vs empirical sample-size curves on padded island instances.

use std::fs;
use std::path::Path;
use std::time::Instant;

use dsmis::bounds::{island_sequences_padded, prop3_l2_bound, prop4_island_l2};
use dsmis::estimator::{chebychev_sample_size, NStarConvention};
use dsmis::rng::derive_seed;
use dsmis::{estimate, ModelConfig, RunConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{FigureArgs, Preset};
use crate::commands::read_config;
use crate::error::{CliError, CliResult};
use crate::output::{num, opt_num, Table};
use crate::plot;

pub const CSV_NAME: &str = "figure.csv";
pub const SVG_NAME: &str = "figure.svg";
pub const RESUME_NAME: &str = "figure.resume";
pub const SCHEMA: &str = "figure/1";

pub const COLUMNS: [&str; 18] = [
    "r",
    "n",
    "T",
    "t_mult",
    "lambda",
    "epsilon",
    "replicates",
    "N",
    "seed",
    "bound_log_l2",
    "bound_l2",
    "n_star_bound",
    "l2_hat_mean",
    "l2_ci_lo",
    "l2_ci_hi",
    "n_star_hat",
    "n_star_lo",
    "n_star_hi",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub n: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub r: Vec<usize>,
    /// Horizons as multiples of `r / n`; exclusive with `horizon`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t_mult: Vec<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Vec::is_empty")]
    pub horizon: Vec<f64>,
    pub replicates: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl ExperimentGrid {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => ExperimentGrid {
                n: 1600,
                lambda: 0.5,
                epsilon: 0.01,
                r: (1..=8).map(|k| 10 * k).collect(),
                t_mult: vec![0.25, 0.5, 1.0],
                horizon: Vec::new(),
                replicates: 100,
                samples: 10_000,
                seed: 1,
                workers: 1,
            },
            Preset::Desk => ExperimentGrid {
                r: vec![10, 20, 40, 80],
                t_mult: vec![0.25, 1.0],
                replicates: 20,
                ..Self::preset(Preset::Paper)
            },
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::usage(m));
        if self.n == 0 || self.replicates == 0 || self.samples == 0 || self.workers == 0 {
            return bad("n, replicates, N and workers must be positive".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.r.is_empty() {
            return bad("the grid needs at least one r".into());
        }
        for &r in &self.r {
            if r == 0 || r % 2 != 0 || 2 * r + 2 > self.n {
                return bad(format!("r = {r} must be even, positive and at most (n - 2) / 2"));
            }
        }
        match (self.t_mult.is_empty(), self.horizon.is_empty()) {
            (true, true) => return bad("the grid needs t_mult or T values".into()),
            (false, false) => return bad("give t_mult or T, not both".into()),
            _ => {}
        }
        if self.t_mult.iter().chain(&self.horizon).any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("time horizons must be positive".into());
        }
        Ok(())
    }

    /// Grid points in output order: horizon series outermost, then r.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        let series: Vec<(Option<f64>, Option<f64>)> = if self.horizon.is_empty() {
            self.t_mult.iter().map(|&m| (Some(m), None)).collect()
        } else {
            self.horizon.iter().map(|&t| (None, Some(t))).collect()
        };
        for (s, &(mult, abs)) in series.iter().enumerate() {
            for &r in &self.r {
                let horizon = abs.unwrap_or_else(|| mult.unwrap() * r as f64 / self.n as f64);
                out.push(GridPoint { index: out.len(), series: s, r, horizon, t_mult: mult });
            }
        }
        out
    }

    /// Stable fingerprint used in resume tokens (FNV-1a of the JSON form).
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("grid serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub series: usize,
    pub r: usize,
    pub horizon: f64,
    pub t_mult: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub r: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub t_mult: Option<f64>,
    pub lambda: f64,
    pub epsilon: f64,
    pub replicates: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    pub seed: u64,
    pub bound_log_l2: f64,
    pub bound_l2: f64,
    pub n_star_bound: f64,
    pub l2_hat_mean: f64,
    pub l2_ci_lo: f64,
    pub l2_ci_hi: f64,
    pub n_star_hat: f64,
    pub n_star_lo: f64,
    pub n_star_hi: f64,
}

/// `ceil(L2 / eps^2)`, left unrounded once it no longer fits an integer.
fn n_star(epsilon: f64, l2: f64) -> CliResult<f64> {
    let raw = l2 / (epsilon * epsilon);
    if !raw.is_finite() || raw >= 1e15 {
        return Ok(raw);
    }
    Ok(chebychev_sample_size(epsilon, l2, NStarConvention::Figure, 0.25)? as f64)
}

pub fn run_point(grid: &ExperimentGrid, point: &GridPoint) -> CliResult<FigureRow> {
    let model = ModelConfig::cpg(grid.lambda).build()?;
    let islands = point.r / 2;
    let pair = island_sequences_padded(islands, grid.n)?;
    let bound = prop3_l2_bound(grid.lambda, &pair, point.horizon, prop4_island_l2(islands, grid.lambda))?;
    let seed = derive_seed(grid.seed, point.index as u64);
    let reports = (0..grid.replicates as u64)
        .into_par_iter()
        .map(|k| {
            let cfg = RunConfig::new(grid.samples, derive_seed(seed, k)).with_workers(grid.workers);
            estimate(&model, &pair, point.horizon, &cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let l2: Vec<f64> = reports.iter().map(|r| r.l2_hat).collect();
    if let Some(bad) = reports.iter().find(|r| !r.log_p_hat.is_finite()) {
        return Err(CliError::Numeric(format!("replicate seed {} gave log p = {}", bad.seed, bad.log_p_hat)));
    }
    let k = l2.len() as f64;
    let mean = l2.iter().sum::<f64>() / k;
    let sd = if l2.len() > 1 { (l2.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() } else { 0.0 };
    let half = 1.96 * sd / k.sqrt();
    // L2 >= 1 always; the normal interval is clipped there.
    let (lo, hi) = ((mean - half).max(1.0), mean + half);
    Ok(FigureRow {
        r: point.r,
        n: grid.n,
        horizon: point.horizon,
        t_mult: point.t_mult,
        lambda: grid.lambda,
        epsilon: grid.epsilon,
        replicates: grid.replicates,
        samples: grid.samples,
        seed,
        bound_log_l2: bound.log_l2,
        bound_l2: bound.value,
        n_star_bound: n_star(grid.epsilon, bound.l2())?,
        l2_hat_mean: mean,
        l2_ci_lo: lo,
        l2_ci_hi: hi,
        n_star_hat: n_star(grid.epsilon, mean)?,
        n_star_lo: n_star(grid.epsilon, lo)?,
        n_star_hi: n_star(grid.epsilon, hi)?,
    })
}

pub fn run_grid(grid: &ExperimentGrid) -> CliResult<Vec<FigureRow>> {
    grid.validate()?;
    grid.points().iter().map(|p| run_point(grid, p)).collect()
}

pub fn render_csv(rows: &[FigureRow]) -> CliResult<String> {
    let mut t = Table::new(SCHEMA, &COLUMNS)?;
    for row in rows {
        t.row(&[
            row.r.to_string(),
            row.n.to_string(),
            num(row.horizon),
            opt_num(row.t_mult),
            num(row.lambda),
            num(row.epsilon),
            row.replicates.to_string(),
            row.samples.to_string(),
            row.seed.to_string(),
            num(row.bound_log_l2),
            num(row.bound_l2),
            num(row.n_star_bound),
            num(row.l2_hat_mean),
            num(row.l2_ci_lo),
            num(row.l2_ci_hi),
            num(row.n_star_hat),
            num(row.n_star_lo),
            num(row.n_star_hi),
        ])?;
    }
    t.finish()
}

pub fn parse_csv(text: &str) -> CliResult<Vec<FigureRow>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = reader.deserialize().collect::<Result<Vec<FigureRow>, _>>()?;
    Ok(rows)
}

/// Partial grid description accepted by `figure --config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    preset: Option<Preset>,
    n: Option<usize>,
    lambda: Option<f64>,
    epsilon: Option<f64>,
    r: Option<Vec<usize>>,
    t_mult: Option<Vec<f64>>,
    #[serde(rename = "T")]
    horizon: Option<Vec<f64>>,
    replicates: Option<usize>,
    #[serde(rename = "N")]
    samples: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
}

pub fn resolve_grid(args: &FigureArgs) -> CliResult<ExperimentGrid> {
    let file: GridFile = read_config(args.config.as_deref())?;
    let preset = args.preset.or(file.preset).unwrap_or_default();
    let mut g = ExperimentGrid::preset(preset);
    macro_rules! pick {
        ($field:ident) => {
            if let Some(v) = args.$field.clone().or(file.$field.clone()) {
                g.$field = v;
            }
        };
    }
    pick!(n);
    pick!(lambda);
    pick!(epsilon);
    pick!(r);
    pick!(replicates);
    pick!(samples);
    pick!(seed);
    pick!(workers);
    let flag_times = args.t_mult.is_some() || args.horizon.is_some();
    let (mult, abs) = if flag_times {
        (args.t_mult.clone(), args.horizon.clone())
    } else {
        (file.t_mult.clone(), file.horizon.clone())
    };
    if let Some(h) = abs {
        g.horizon = h;
        g.t_mult = mult.unwrap_or_default();
    } else if let Some(m) = mult {
        g.t_mult = m;
    }
    g.validate()?;
    Ok(g)
}

fn parse_token(token: &str) -> CliResult<(String, usize)> {
    let bad = || CliError::usage(format!("malformed resume token {token:?}"));
    let (hash, index) = token.trim().split_once('-').ok_or_else(bad)?;
    Ok((hash.to_string(), index.parse().map_err(|_| bad())?))
}

fn write_outputs(dir: &Path, grid: &ExperimentGrid, rows: &[FigureRow]) -> CliResult<()> {
    fs::write(dir.join(CSV_NAME), render_csv(rows)?)?;
    fs::write(dir.join(SVG_NAME), plot::render_svg(grid, rows))?;
    Ok(())
}

/// Runs the grid into `out_dir`. Rows are written in grid order after every
/// point, so an interrupted or budget-limited run leaves a valid prefix.
pub fn cmd_figure(args: &FigureArgs) -> CliResult<String> {
    let grid = resolve_grid(args)?;
    let points = grid.points();
    let dir = args.out_dir.as_path();
    fs::create_dir_all(dir)?;
    let fingerprint = grid.fingerprint();
    let mut rows = match &args.resume {
        None => Vec::new(),
        Some(token) => {
            let (hash, index) = parse_token(token)?;
            if hash != fingerprint {
                return Err(CliError::usage("resume token belongs to a different grid"));
            }
            let text = fs::read_to_string(dir.join(CSV_NAME))?;
            let rows = parse_csv(&text)?;
            if rows.len() != index || index > points.len() {
                return Err(CliError::usage(format!("{} holds {} rows, token expects {index}", CSV_NAME, rows.len())));
            }
            rows
        }
    };
    let started = Instant::now();
    for point in &points[rows.len()..] {
        rows.push(run_point(&grid, point)?);
        write_outputs(dir, &grid, &rows)?;
        let spent = started.elapsed().as_secs_f64();
        if rows.len() < points.len() && args.budget_secs.is_some_and(|b| spent >= b) {
            let token = format!("{fingerprint}-{}", rows.len());
            fs::write(dir.join(RESUME_NAME), format!("{token}\n"))?;
            return Ok(format!("partial: {} of {} points; resume={token}\n", rows.len(), points.len()));
        }
    }
    write_outputs(dir, &grid, &rows)?;
    let stale = dir.join(RESUME_NAME);
    if stale.exists() {
        fs::remove_file(stale)?;
    }
    Ok(format!("complete: {} points\n", points.len()))
}
