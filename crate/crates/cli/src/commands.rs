use std::fs;
use std::path::{Path, PathBuf};

use dsmis::bounds::{
    assumption_check, island_kl, island_sequences_padded, prop3_l2_bound, prop4_island_l2, prop4_report, rate_extremes,
    theorem1_chi2_bound, theorem3_l2_bound, AssumptionReport, BoundReport,
};
use dsmis::estimator::{chebychev_sample_size, median_of_estimates, NStarConvention};
use dsmis::oracle::{enumerate_orderings, exact_transition_prob_with, OrderingTable, ORACLE_TAIL};
use dsmis::seq::parse_fasta_pair;
use dsmis::{estimate, Alphabet, EstimateReport, ModelConfig, RunConfig, SequencePair};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{BoundArgs, EstimateArgs, Format, IslandArgs, KindArg, ModelArgs, OracleArgs, PairArgs};
use crate::error::{CliError, CliResult};
use crate::output::{deliver, json, num, opt_num, Table};

pub const DEFAULT_SAMPLES: usize = 10_000;

/// Shared shape of the `--config` file for estimate, island and oracle.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub model: Option<ModelConfig>,
    pub x: Option<String>,
    pub y: Option<String>,
    pub fasta: Option<PathBuf>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[serde(rename = "N")]
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub median_delta: Option<f64>,
}

pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))
        }
    }
}

fn resolve_model(file: Option<ModelConfig>, args: &ModelArgs) -> CliResult<ModelConfig> {
    if let Some(name) = &args.model {
        if name != "jc69+cpg" {
            return Err(CliError::usage(format!("unknown model {name:?}; table models are read from --config")));
        }
    }
    match (file, args.lambda) {
        (Some(ModelConfig::JcCpg { base_rate, .. }), Some(lambda)) => Ok(ModelConfig::JcCpg { lambda, base_rate }),
        (Some(m), None) => {
            if args.model.is_some() && m.lambda().is_none() {
                return Err(CliError::usage("--model jc69+cpg needs --lambda"));
            }
            Ok(m)
        }
        (Some(_), Some(_)) => Err(CliError::usage("--lambda only applies to the jc69+cpg model")),
        (None, Some(lambda)) => Ok(ModelConfig::cpg(lambda)),
        (None, None) => Err(CliError::usage("no model given: pass --lambda (jc69+cpg) or a config with a model")),
    }
}

fn resolve_pair(file: &RunFile, args: &PairArgs, alphabet: &Alphabet) -> CliResult<SequencePair> {
    let fasta = args.fasta.clone().or_else(|| if args.x.is_some() { None } else { file.fasta.clone() });
    if let Some(path) = fasta {
        let text = fs::read_to_string(&path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        return parse_fasta_pair(&text, alphabet).map_err(|e| CliError::usage(format!("{}: {e}", path.display())));
    }
    let x = args.x.clone().or_else(|| file.x.clone());
    let y = args.y.clone().or_else(|| file.y.clone());
    match (x, y) {
        (Some(x), Some(y)) => Ok(SequencePair::parse(&x, &y, alphabet)?),
        _ => Err(CliError::usage("no sequences given: pass --fasta or both --x and --y")),
    }
}

/// A zero horizon is allowed: the endpoint is then either the start itself
/// or unreachable (exit 3).
fn require_horizon(v: Option<f64>) -> CliResult<f64> {
    let t = v.ok_or_else(|| CliError::usage("missing required --T"))?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(CliError::usage(format!("--T must be finite and >= 0, got {t}")));
    }
    Ok(t)
}

fn check_report(r: &EstimateReport) -> CliResult<()> {
    if r.log_p_hat.is_finite() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("estimate is not finite (log p = {})", r.log_p_hat)))
    }
}

const ESTIMATE_COLUMNS: [&str; 11] = ["n", "r", "T", "lambda", "N", "seed", "log_p_hat", "se_rel", "cv2", "ess", "wall_time"];

pub fn cmd_estimate(args: &EstimateArgs) -> CliResult<String> {
    let file: RunFile = read_config(args.config.as_deref())?;
    let model_cfg = resolve_model(file.model.clone(), &args.model)?;
    let alphabet = model_cfg.alphabet()?;
    let model = model_cfg.build()?;
    let pair = resolve_pair(&file, &args.pair, &alphabet)?;
    let horizon = require_horizon(args.run.horizon.or(file.horizon))?;
    let cfg = RunConfig {
        samples: args.run.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
        seed: args.run.seed.or(file.seed).unwrap_or(0),
        workers: args.run.workers.or(file.workers).unwrap_or(1),
        epsilon: None,
        delta: args.median_delta.or(file.median_delta),
        timed: args.timing,
    };
    let report = match cfg.delta {
        Some(delta) => median_of_estimates(&model, &pair, horizon, &cfg, delta)?,
        None => estimate(&model, &pair, horizon, &cfg)?,
    };
    check_report(&report)?;
    let text = match args.format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let mut t = Table::new("estimate/1", &ESTIMATE_COLUMNS)?;
            let lead = [pair.len().to_string(), pair.hamming().to_string(), num(horizon), opt_num(model_cfg.lambda())];
            match &report.batches {
                None => {
                    let mut row = lead.to_vec();
                    row.extend([
                        report.samples.to_string(),
                        report.seed.to_string(),
                        num(report.log_p_hat),
                        num(report.se_rel),
                        num(report.cv2),
                        num(report.ess),
                        opt_num(report.wall_time),
                    ]);
                    t.row(&row)?;
                }
                Some(batches) => {
                    for b in batches {
                        let mut row = lead.to_vec();
                        row.extend([
                            report.samples.to_string(),
                            b.seed.to_string(),
                            num(b.log_p_hat),
                            num((b.cv2 / report.samples as f64).sqrt()),
                            num(b.cv2),
                            num(b.ess),
                            String::new(),
                        ]);
                        t.row(&row)?;
                    }
                }
            }
            t.finish()?
        }
    };
    deliver(text, args.out.as_deref())
}

struct BoundInstance {
    pair: SequencePair,
    islands: Option<usize>,
}

#[derive(Debug, Serialize)]
struct BoundRow {
    r: usize,
    n: usize,
    #[serde(rename = "T")]
    horizon: f64,
    lambda: f64,
    report: BoundReport,
    n_star_figure: Option<u64>,
    assumption: AssumptionReport,
}

fn island_instance(r: usize, n: usize) -> CliResult<BoundInstance> {
    if r == 0 || r % 2 != 0 {
        return Err(CliError::usage(format!("island instances need an even r >= 2, got {r}")));
    }
    Ok(BoundInstance { pair: island_sequences_padded(r / 2, n)?, islands: Some(r / 2) })
}

/// `L^2` of the ordering measure used to scale the bounds.
fn ordering_l2(instance: &BoundInstance, lambda: f64, phi_star: f64) -> CliResult<f64> {
    if let Some(ri) = instance.islands {
        return Ok(prop4_island_l2(ri, lambda));
    }
    let r = instance.pair.hamming();
    if r <= dsmis::oracle::MAX_ENUMERATED_SITES {
        let model = ModelConfig::cpg(lambda).build()?;
        Ok(enumerate_orderings(&model, &instance.pair)?.l2)
    } else {
        Ok(phi_star.powi(2 * r as i32))
    }
}

fn n_star(epsilon: f64, report: &BoundReport) -> CliResult<Option<u64>> {
    if report.overflow {
        return Ok(None);
    }
    Ok(Some(chebychev_sample_size(epsilon, report.l2(), NStarConvention::Figure, 0.25)?))
}

pub fn cmd_bound(args: &BoundArgs) -> CliResult<String> {
    if !(args.epsilon > 0.0 && args.epsilon < 1.0) {
        return Err(CliError::usage("--epsilon must lie in (0, 1)"));
    }
    let has_pair = args.pair.fasta.is_some() || args.pair.x.is_some();
    let instances: Vec<BoundInstance> = if has_pair {
        if !args.r.is_empty() || args.n.is_some() {
            return Err(CliError::usage("give either a sequence pair or --n/--r, not both"));
        }
        vec![BoundInstance { pair: resolve_pair(&RunFile::default(), &args.pair, &Alphabet::dna())?, islands: None }]
    } else {
        let n = args.n.ok_or_else(|| CliError::usage("missing --n (or a sequence pair)"))?;
        if args.r.is_empty() {
            return Err(CliError::usage("missing --r (or a sequence pair)"));
        }
        args.r.iter().map(|&r| island_instance(r, n)).collect::<CliResult<_>>()?
    };
    if args.horizon.is_empty() && args.t_mult.is_empty() {
        return Err(CliError::usage("missing --T or --t-mult"));
    }
    let mut rows = Vec::new();
    for inst in &instances {
        let (r, n) = (inst.pair.hamming(), inst.pair.len());
        let horizons: Vec<f64> = if args.horizon.is_empty() {
            args.t_mult.iter().map(|m| m * r as f64 / n as f64).collect()
        } else {
            args.horizon.clone()
        };
        for &t in &horizons {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::usage(format!("time horizons must be positive, got {t}")));
            }
            for &lambda in &args.lambda {
                let model = ModelConfig::cpg(lambda).build()?;
                let ex = rate_extremes(&model);
                let l2_phi = ordering_l2(inst, lambda, ex.phi_star)?;
                let mut reports = Vec::new();
                let want = |k: KindArg| args.kind == KindArg::All || args.kind == k;
                if want(KindArg::Theorem1) {
                    reports.push(theorem1_chi2_bound(&ex, r, n, t)?);
                }
                if want(KindArg::Theorem3) {
                    reports.push(theorem3_l2_bound(&ex, r, n, t, l2_phi)?);
                }
                if want(KindArg::Prop3) {
                    reports.push(prop3_l2_bound(lambda, &inst.pair, t, l2_phi)?);
                }
                if let (true, Some(ri)) = (want(KindArg::Prop4), inst.islands) {
                    reports.push(prop4_report(ri, lambda));
                }
                for report in reports {
                    let n_star_figure = n_star(args.epsilon, &report)?;
                    rows.push(BoundRow { r, n, horizon: t, lambda, report, n_star_figure, assumption: assumption_check(r, n, t) });
                }
            }
        }
    }
    let text = match args.format {
        Format::Json => json(&rows)?,
        Format::Csv => {
            let mut t = Table::new(
                "bound/1",
                &["r", "n", "T", "lambda", "bound_kind", "log_l2_bound", "value", "overflow", "n_star_figure"],
            )?;
            for row in &rows {
                t.row(&[
                    row.r.to_string(),
                    row.n.to_string(),
                    num(row.horizon),
                    num(row.lambda),
                    row.report.kind.name().to_string(),
                    num(row.report.log_l2),
                    num(row.report.value),
                    row.report.overflow.to_string(),
                    row.n_star_figure.map_or_else(|| "inf".to_string(), |v| v.to_string()),
                ])?;
            }
            t.finish()?
        }
    };
    deliver(text, args.out.as_deref())
}

#[derive(Debug, Serialize)]
pub struct IslandRow {
    pub r_islands: usize,
    pub n: usize,
    pub r: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub lambda: f64,
    #[serde(rename = "N")]
    pub samples: usize,
    pub seed: u64,
    pub log_p_hat: f64,
    pub se_rel: f64,
    pub l2_hat: f64,
    pub l2_se: f64,
    pub log_p_oracle: Option<f64>,
    pub oracle_skipped: bool,
    pub rel_error: Option<f64>,
    pub prop4_l2: f64,
    pub prop3_l2: f64,
    pub theorem1_chi2: f64,
    pub island_kl: f64,
}

const ISLAND_COLUMNS: [&str; 18] = [
    "r_islands",
    "n",
    "r",
    "T",
    "lambda",
    "N",
    "seed",
    "log_p_hat",
    "se_rel",
    "l2_hat",
    "l2_se",
    "log_p_oracle",
    "oracle_skipped",
    "rel_error",
    "prop4_l2",
    "prop3_l2",
    "theorem1_chi2",
    "island_kl",
];

pub fn cmd_island(args: &IslandArgs) -> CliResult<String> {
    let file: RunFile = read_config(args.config.as_deref())?;
    if args.islands == 0 {
        return Err(CliError::usage("--islands must be at least 1"));
    }
    let model_cfg = resolve_model(file.model.clone(), &ModelArgs { model: None, lambda: args.lambda })?;
    let Some(lambda) = model_cfg.lambda() else {
        return Err(CliError::usage("the island problem uses the jc69+cpg model"));
    };
    let model = model_cfg.build()?;
    let n = args.n.unwrap_or(4 * args.islands + 2);
    let pair = island_sequences_padded(args.islands, n)?;
    let horizon = require_horizon(args.run.horizon.or(file.horizon))?;
    let cfg = RunConfig {
        samples: args.run.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
        seed: args.run.seed.or(file.seed).unwrap_or(0),
        workers: args.run.workers.or(file.workers).unwrap_or(1),
        epsilon: None,
        delta: None,
        timed: false,
    };
    let report = estimate(&model, &pair, horizon, &cfg)?;
    check_report(&report)?;
    let log_p_oracle = match exact_transition_prob_with(&model, &pair, horizon, ORACLE_TAIL, dsmis::oracle::DEFAULT_STATE_LIMIT) {
        Ok(p) => Some(p.ln()),
        Err(dsmis::Error::StateSpaceTooLarge { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let prop4 = prop4_island_l2(args.islands, lambda);
    let prop3 = prop3_l2_bound(lambda, &pair, horizon, prop4)?;
    let thm1 = theorem1_chi2_bound(&rate_extremes(&model), pair.hamming(), n, horizon)?;
    let row = IslandRow {
        r_islands: args.islands,
        n,
        r: pair.hamming(),
        horizon,
        lambda,
        samples: report.samples,
        seed: report.seed,
        log_p_hat: report.log_p_hat,
        se_rel: report.se_rel,
        l2_hat: report.l2_hat,
        l2_se: report.l2_se,
        log_p_oracle,
        oracle_skipped: log_p_oracle.is_none(),
        rel_error: log_p_oracle.map(|lp| (report.log_p_hat - lp).exp() - 1.0).map(f64::abs),
        prop4_l2: prop4,
        prop3_l2: prop3.value,
        theorem1_chi2: thm1.value,
        island_kl: island_kl(args.islands, lambda),
    };
    let text = match args.format {
        Format::Json => json(&row)?,
        Format::Csv => {
            let mut t = Table::new("island/1", &ISLAND_COLUMNS)?;
            t.row(&[
                row.r_islands.to_string(),
                row.n.to_string(),
                row.r.to_string(),
                num(row.horizon),
                num(row.lambda),
                row.samples.to_string(),
                row.seed.to_string(),
                num(row.log_p_hat),
                num(row.se_rel),
                num(row.l2_hat),
                num(row.l2_se),
                opt_num(row.log_p_oracle),
                row.oracle_skipped.to_string(),
                opt_num(row.rel_error),
                num(row.prop4_l2),
                num(row.prop3_l2),
                num(row.theorem1_chi2),
                num(row.island_kl),
            ])?;
            t.finish()?
        }
    };
    deliver(text, args.out.as_deref())
}

#[derive(Debug, Serialize)]
struct OracleOutput {
    n: usize,
    r: usize,
    #[serde(rename = "T")]
    horizon: f64,
    p: f64,
    log_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    orderings: Option<OrderingTable>,
}

pub fn cmd_oracle(args: &OracleArgs) -> CliResult<String> {
    let file: RunFile = read_config(args.config.as_deref())?;
    let model_cfg = resolve_model(file.model.clone(), &args.model)?;
    let alphabet = model_cfg.alphabet()?;
    let model = model_cfg.build()?;
    let pair = resolve_pair(&file, &args.pair, &alphabet)?;
    let orderings = if args.orderings { Some(enumerate_orderings(&model, &pair)?) } else { None };
    if args.format == Format::Csv {
        let Some(table) = orderings else {
            return Err(CliError::usage("CSV output is the ordering table; add --orderings"));
        };
        let mut t = Table::new("orderings/1", &["order", "phi", "phi_tilde"])?;
        for ((order, phi), pt) in table.orders.iter().zip(&table.phi).zip(&table.phi_tilde) {
            let order: Vec<String> = order.iter().map(|s| (s + 1).to_string()).collect();
            t.row(&[order.join("-"), num(*phi), num(*pt)])?;
        }
        return deliver(t.finish()?, args.out.as_deref());
    }
    let horizon = require_horizon(args.horizon.or(file.horizon))?;
    let p = exact_transition_prob_with(&model, &pair, horizon, ORACLE_TAIL, args.state_limit as u128)?;
    if p <= 0.0 {
        return Err(dsmis::Error::Unreachable.into());
    }
    let out = OracleOutput { n: pair.len(), r: pair.hamming(), horizon, p, log_p: p.ln(), orderings };
    deliver(json(&out)?, args.out.as_deref())
}
