//! Importance sampler for the dependent-site transition probability.
//!
//! Paths are drawn from the endpoint-conditioned independent-site process and
//! weighted by the density ratio. Since the two processes share base rates,
//! the log weight of a path reduces to
//!
//! ```text
//! sum_j ln phi_j  -  sum_j dt_j * (gt(x^j) - g(x^j))
//! ```
//!
//! and the rate excess `gt - g` is tracked incrementally, so a multiplier of
//! one gives a weight of exactly one.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsm::DsmModel;
use crate::error::{Error, Result};
use crate::ism::{ism_marginal_likelihood, JointSampler};
use crate::rng::{derive_seed, worker_stream};
use crate::seq::{require_valid, Path, SequencePair};
use crate::series::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSample {
    pub log_w: f64,
    pub m: usize,
}

/// Replays paths against a fixed pair, keeping a scratch copy of the start
/// sequence that is restored after every path.
#[derive(Debug, Clone)]
pub struct WeightEvaluator<'a> {
    model: &'a DsmModel,
    horizon: f64,
    scratch: Vec<u8>,
    start_excess: f64,
    undo: Vec<(usize, u8)>,
}

impl<'a> WeightEvaluator<'a> {
    pub fn new(model: &'a DsmModel, pair: &SequencePair, horizon: f64) -> Result<Self> {
        model.check_length(pair.len())?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("time horizon must be > 0, got {horizon}")));
        }
        let scratch = pair.start().bases().to_vec();
        let start_excess = (0..scratch.len()).map(|i| model.site_excess(&scratch, i)).sum();
        Ok(WeightEvaluator { model, horizon, scratch, start_excess, undo: Vec::new() })
    }

    /// Log weight of a path already known to be valid for the pair.
    pub fn log_weight(&mut self, path: &Path) -> WeightSample {
        let model = self.model;
        let n = self.scratch.len();
        let mut excess = self.start_excess;
        let mut log_w = 0.0;
        let mut last = 0.0;
        for jump in &path.jumps {
            log_w += model.phi(&self.scratch, jump.site, jump.base).ln() - (jump.time - last) * excess;
            let sites = model.affected(n, jump.site);
            let before: f64 = sites.clone().map(|i| model.site_excess(&self.scratch, i)).sum();
            self.undo.push((jump.site, self.scratch[jump.site]));
            self.scratch[jump.site] = jump.base;
            let after: f64 = sites.map(|i| model.site_excess(&self.scratch, i)).sum();
            excess += after - before;
            last = jump.time;
        }
        log_w -= (self.horizon - last) * excess;
        while let Some((site, base)) = self.undo.pop() {
            self.scratch[site] = base;
        }
        WeightSample { log_w, m: path.jumps.len() }
    }
}

/// Log importance weight of one path, with validation.
pub fn log_importance_weight(model: &DsmModel, path: &Path, pair: &SequencePair, horizon: f64) -> Result<WeightSample> {
    if path.horizon != horizon {
        return Err(Error::InvalidArgument(format!("path horizon {} does not match T = {horizon}", path.horizon)));
    }
    require_valid(path, pair)?;
    Ok(WeightEvaluator::new(model, pair, horizon)?.log_weight(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    /// Record wall-clock time in the report. Off by default so that reports
    /// are byte-reproducible.
    #[serde(default)]
    pub timed: bool,
}

impl RunConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        RunConfig { samples, seed, workers: 1, epsilon: None, delta: None, timed: false }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// One batch of a median-of-estimates run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub seed: u64,
    pub log_p_hat: f64,
    pub cv2: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub log_p_hat: f64,
    pub log_p_ism: f64,
    pub mean_log_w: f64,
    pub log_mean_w: f64,
    pub cv2: f64,
    pub ess: f64,
    pub se_rel: f64,
    /// Empirical second moment ratio `1 + cv2` and its delta-method SE.
    pub l2_hat: f64,
    pub l2_se: f64,
    pub mean_m: f64,
    #[serde(rename = "N")]
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
    pub wall_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub batches: Option<Vec<BatchSummary>>,
}

impl EstimateReport {
    pub fn p_hat(&self) -> f64 {
        self.log_p_hat.exp()
    }
}

/// Per-worker sums of powers of `w / exp(max)`.
#[derive(Debug, Clone, Copy)]
struct Partial {
    count: usize,
    max: f64,
    s: [f64; 4],
    sum_log: f64,
    sum_m: f64,
}

impl Partial {
    fn from_samples(ws: &[WeightSample]) -> Self {
        let max = ws.iter().map(|w| w.log_w).fold(f64::NEG_INFINITY, f64::max);
        let mut s = [0.0; 4];
        let mut sum_log = 0.0;
        let mut sum_m = 0.0;
        for w in ws {
            let v = (w.log_w - max).exp();
            let mut p = v;
            for acc in s.iter_mut() {
                *acc += p;
                p *= v;
            }
            sum_log += w.log_w;
            sum_m += w.m as f64;
        }
        Partial { count: ws.len(), max, s, sum_log, sum_m }
    }

    fn merge(self, other: Partial) -> Partial {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let max = self.max.max(other.max);
        let mut s = [0.0; 4];
        let (fa, fb) = ((self.max - max).exp(), (other.max - max).exp());
        let (mut pa, mut pb) = (fa, fb);
        for (k, acc) in s.iter_mut().enumerate() {
            *acc = self.s[k] * pa + other.s[k] * pb;
            pa *= fa;
            pb *= fb;
        }
        Partial {
            count: self.count + other.count,
            max,
            s,
            sum_log: self.sum_log + other.sum_log,
            sum_m: self.sum_m + other.sum_m,
        }
    }
}

fn summarize(p: &Partial, log_p_ism: f64, cfg: &RunConfig) -> EstimateReport {
    let n = p.count as f64;
    let [s1, s2, s3, s4] = p.s;
    let log_mean_w = p.max + (s1 / n).ln();
    let cv2 = (n * s2 / (s1 * s1) - 1.0).max(0.0);
    let (m1, m2, m3, m4) = (s1 / n, s2 / n, s3 / n, s4 / n);
    let var_w = (m2 - m1 * m1).max(0.0);
    let var_w2 = (m4 - m2 * m2).max(0.0);
    let cov = m3 - m1 * m2;
    let ga = -2.0 * m2 / (m1 * m1 * m1);
    let gb = 1.0 / (m1 * m1);
    let l2_var = (gb * gb * var_w2 + ga * ga * var_w + 2.0 * ga * gb * cov).max(0.0) / n;
    EstimateReport {
        log_p_hat: log_p_ism + log_mean_w,
        log_p_ism,
        mean_log_w: p.sum_log / n,
        log_mean_w,
        cv2,
        ess: n / (1.0 + cv2),
        se_rel: (cv2 / n).sqrt(),
        l2_hat: 1.0 + cv2,
        l2_se: l2_var.sqrt(),
        mean_m: p.sum_m / n,
        samples: p.count,
        seed: cfg.seed,
        workers: cfg.workers,
        wall_time: None,
        batches: None,
    }
}

fn share(samples: usize, workers: usize, w: usize) -> usize {
    samples / workers + usize::from(w < samples % workers)
}

fn run(model: &DsmModel, pair: &SequencePair, horizon: f64, cfg: &RunConfig, keep: bool) -> Result<(EstimateReport, Vec<WeightSample>)> {
    cfg.validate()?;
    let started = Instant::now();
    let log_p_ism = ism_marginal_likelihood(model.ism(), pair, horizon)?;
    let sampler = JointSampler::new(model.ism(), pair, horizon)?;
    let evaluator = WeightEvaluator::new(model, pair, horizon)?;
    let parts: Vec<(Partial, Vec<WeightSample>)> = (0..cfg.workers)
        .into_par_iter()
        .map(|w| {
            let mut rng = worker_stream(cfg.seed, w as u64);
            let mut eval = evaluator.clone();
            let ws: Vec<WeightSample> =
                (0..share(cfg.samples, cfg.workers, w)).map(|_| eval.log_weight(&sampler.sample(&mut rng))).collect();
            (Partial::from_samples(&ws), if keep { ws } else { Vec::new() })
        })
        .collect();
    let mut total = Partial { count: 0, max: f64::NEG_INFINITY, s: [0.0; 4], sum_log: 0.0, sum_m: 0.0 };
    let mut all = Vec::new();
    for (p, ws) in parts {
        total = total.merge(p);
        all.extend(ws);
    }
    let mut report = summarize(&total, log_p_ism, cfg);
    if cfg.timed {
        report.wall_time = Some(started.elapsed().as_secs_f64());
    }
    Ok((report, all))
}

/// Importance-sampling estimate of the DSM transition probability.
///
/// Worker `w` draws its share of the `N` paths from stream `(seed, w)`;
/// partial sums are combined in worker order, so the report is a pure
/// function of the inputs and the worker count.
pub fn estimate(model: &DsmModel, pair: &SequencePair, horizon: f64, cfg: &RunConfig) -> Result<EstimateReport> {
    Ok(run(model, pair, horizon, cfg, false)?.0)
}

/// As [`estimate`], also returning every weight in worker order.
pub fn estimate_detailed(
    model: &DsmModel,
    pair: &SequencePair,
    horizon: f64,
    cfg: &RunConfig,
) -> Result<(EstimateReport, Vec<WeightSample>)> {
    run(model, pair, horizon, cfg, true)
}

/// `mean(w^2) / mean(w)^2`, evaluated in log space.
pub fn empirical_l2(weights: &[WeightSample]) -> Result<f64> {
    if weights.len() < 2 {
        return Err(Error::InvalidArgument("need at least two weights".into()));
    }
    let lw: Vec<f64> = weights.iter().map(|w| w.log_w).collect();
    let lw2: Vec<f64> = lw.iter().map(|v| 2.0 * v).collect();
    let log_l2 = (weights.len() as f64).ln() + log_sum_exp(&lw2) - 2.0 * log_sum_exp(&lw);
    Ok(log_l2.exp().max(1.0))
}

/// How the Chebychev sample size is read off a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NStarConvention {
    /// `ceil(L2 / eps^2)`.
    #[default]
    Figure,
    /// `max(1, ceil(chi2 / (eps^2 delta)))`.
    Chi2Delta,
}

fn snapped_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Sample size guaranteeing relative error `epsilon` by Chebychev's
/// inequality. Saturates at `u64::MAX` for infinite bounds.
pub fn chebychev_sample_size(epsilon: f64, bound: f64, convention: NStarConvention, delta: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(bound >= 0.0) {
        return Err(Error::InvalidArgument(format!("bound must be >= 0, got {bound}")));
    }
    let n = match convention {
        NStarConvention::Figure => snapped_ceil(bound / (epsilon * epsilon)),
        NStarConvention::Chi2Delta => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
            }
            snapped_ceil(bound / (epsilon * epsilon * delta)).max(1.0)
        }
    };
    Ok(n as u64)
}

/// Number of batches for a median-of-estimates run: the smallest odd
/// integer at least `8 ln(1/delta)`.
pub fn median_batch_count(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 0.75) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 3/4), got {delta}")));
    }
    let k = ((8.0 * (1.0 / delta).ln()).ceil() as usize).max(1);
    Ok(if k % 2 == 0 { k + 1 } else { k })
}

/// Median of independent estimates; batch `b` uses seed `derive_seed(seed, b)`.
/// Returns the median batch's report with every batch listed.
pub fn median_of_estimates(
    model: &DsmModel,
    pair: &SequencePair,
    horizon: f64,
    cfg: &RunConfig,
    delta: f64,
) -> Result<EstimateReport> {
    let k = median_batch_count(delta)?;
    let started = Instant::now();
    let mut reports = Vec::with_capacity(k);
    for b in 0..k {
        let batch_cfg = RunConfig { seed: derive_seed(cfg.seed, b as u64), timed: false, ..*cfg };
        reports.push(estimate(model, pair, horizon, &batch_cfg)?);
    }
    let batches: Vec<BatchSummary> = reports
        .iter()
        .map(|r| BatchSummary { seed: r.seed, log_p_hat: r.log_p_hat, cv2: r.cv2, ess: r.ess })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| reports[a].log_p_hat.total_cmp(&reports[b].log_p_hat));
    let mut out = reports.swap_remove(order[k / 2]);
    out.batches = Some(batches);
    if cfg.timed {
        out.wall_time = Some(started.elapsed().as_secs_f64());
    }
    Ok(out)
}
