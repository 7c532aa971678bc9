//! Sample-size bounds for the importance sampler.
//!
//! Every bound is assembled in log space. A bound whose logarithm exceeds
//! [`LOG_OVERFLOW`] is reported as `+inf` with the log value kept.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dsm::DsmModel;
use crate::error::{Error, Result};
use crate::ism::{IsmModel, SiteKernel};
use crate::seq::{Alphabet, SequencePair};
use crate::series::{log_add_exp, poisson_cutoff, SERIES_TAIL};

pub const LOG_OVERFLOW: f64 = 700.0;

/// Rate extremes of a dependent-site model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateExtremes {
    pub gamma_max: f64,
    pub gamma_min: f64,
    pub gamma_star: f64,
    pub phi_max: f64,
    pub phi_min: f64,
    pub phi_star: f64,
    pub gtilde_max: f64,
    pub gtilde_min: f64,
    pub q: f64,
    pub k: usize,
    pub delta: f64,
    pub delta_tilde: f64,
}

impl RateExtremes {
    pub fn new(ism: &IsmModel, phi_bounds: (f64, f64), k: usize) -> Self {
        let (gamma_min, gamma_max) = ism
            .generators()
            .iter()
            .map(|g| g.rate_range())
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), (l, h)| (lo.min(l), hi.max(h)));
        let (phi_min, phi_max) = phi_bounds;
        let q = (ism.alphabet_size() - 1) as f64;
        let gtilde_max = gamma_max * phi_max;
        let gtilde_min = gamma_min * phi_min;
        RateExtremes {
            gamma_max,
            gamma_min,
            gamma_star: gamma_max / gamma_min,
            phi_max,
            phi_min,
            phi_star: phi_max / phi_min,
            gtilde_max,
            gtilde_min,
            q,
            k,
            delta: q * (gamma_max - gamma_min),
            delta_tilde: q * (k + 1) as f64 * (gtilde_max - gtilde_min),
        }
    }
}

pub fn rate_extremes(model: &DsmModel) -> RateExtremes {
    RateExtremes::new(model.ism(), model.context().bounds(), model.width())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Theorem3,
    Theorem1,
    Prop3,
    Prop4,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Theorem3 => "theorem3",
            BoundKind::Theorem1 => "theorem1",
            BoundKind::Prop3 => "prop3",
            BoundKind::Prop4 => "prop4",
        }
    }
}

/// A bound on `L^2` (or on chi-square for [`BoundKind::Theorem1`]) with the
/// constants that went into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    /// Log of the `L^2` bound. For the chi-square bound this is `ln(chi2 + 1)`.
    pub log_l2: f64,
    /// The bound itself: `L^2`, or `chi2` for the chi-square bound.
    pub value: f64,
    pub overflow: bool,
    pub log_theta: Option<f64>,
    pub c: Option<f64>,
    pub c_prime: Option<f64>,
    pub log_p_r: Option<f64>,
    /// `ln E_mu[theta^(m - r)]`.
    pub log_mgf: Option<f64>,
    pub l2_phi: f64,
}

impl BoundReport {
    fn new(kind: BoundKind, log_l2: f64, l2_phi: f64) -> Self {
        let overflow = log_l2 > LOG_OVERFLOW;
        let value = if overflow {
            f64::INFINITY
        } else if kind == BoundKind::Theorem1 {
            log_l2.exp_m1()
        } else {
            log_l2.exp()
        };
        BoundReport { kind, log_l2, value, overflow, log_theta: None, c: None, c_prime: None, log_p_r: None, log_mgf: None, l2_phi }
    }

    /// `L^2` implied by the report (`chi2 + 1` for the chi-square bound).
    pub fn l2(&self) -> f64 {
        if self.overflow {
            f64::INFINITY
        } else {
            self.log_l2.exp()
        }
    }
}

fn check_instance(r: usize, n: usize, horizon: f64) -> Result<()> {
    if r > n {
        return Err(Error::InvalidArgument(format!("r = {r} exceeds n = {n}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("time horizon must be > 0, got {horizon}")));
    }
    Ok(())
}

fn exp_capped(log: f64) -> f64 {
    if log > LOG_OVERFLOW {
        f64::INFINITY
    } else {
        log.exp()
    }
}

/// `L^2(pi, mu) <= exp(rTc + (n-r)T^2 c') * l2_phi` with
///
/// ```text
/// theta = g*^3 phi*^(2(k+1)) phi_max^2 exp(2T(dt + 2d))
/// c  = (g_max^2/g_min) q^2 e^{Tq(g_max-g_min)} [theta e^{Tq theta} + 2 e^{Tq g_max}] + 2(2dt + 5d)
/// c' =  g_max^2        q^2 e^{Tq(g_max-g_min)} [theta^2 e^{Tq theta} + 2 e^{Tq g_max}]
/// ```
pub fn theorem3_l2_bound(ex: &RateExtremes, r: usize, n: usize, horizon: f64, l2_phi: f64) -> Result<BoundReport> {
    check_instance(r, n, horizon)?;
    if !(l2_phi >= 1.0) {
        return Err(Error::InvalidArgument(format!("L2 of the ordering measure must be >= 1, got {l2_phi}")));
    }
    let t = horizon;
    let q = ex.q;
    let log_theta = 3.0 * ex.gamma_star.ln()
        + 2.0 * (ex.k + 1) as f64 * ex.phi_star.ln()
        + 2.0 * ex.phi_max.ln()
        + 2.0 * t * (ex.delta_tilde + 2.0 * ex.delta);
    let theta = log_theta.exp();
    let log_pre = 2.0 * ex.gamma_max.ln() + 2.0 * q.ln() + t * q * (ex.gamma_max - ex.gamma_min);
    let log_escape = 2f64.ln() + t * q * ex.gamma_max;
    let log_c_main = log_pre - ex.gamma_min.ln() + log_add_exp(log_theta + t * q * theta, log_escape);
    let log_c_prime = log_pre + log_add_exp(2.0 * log_theta + t * q * theta, log_escape);
    let c = exp_capped(log_c_main) + 2.0 * (2.0 * ex.delta_tilde + 5.0 * ex.delta);
    let c_prime = exp_capped(log_c_prime);
    let rf = r as f64;
    let rest = (n - r) as f64;
    let exponent = rf * t * c + if rest > 0.0 { rest * t * t * c_prime } else { 0.0 };
    let mut report = BoundReport::new(BoundKind::Theorem3, exponent + l2_phi.ln(), l2_phi);
    report.log_theta = Some(log_theta);
    report.c = Some(c);
    report.c_prime = Some(c_prime);
    Ok(report)
}

/// `chi2(pi, mu) <= phi*^(2r) exp(rTc + (n-r)T^2 c') - 1`.
pub fn theorem1_chi2_bound(ex: &RateExtremes, r: usize, n: usize, horizon: f64) -> Result<BoundReport> {
    let l2_phi_log = 2.0 * r as f64 * ex.phi_star.ln();
    let mut report = theorem3_l2_bound(ex, r, n, horizon, 1.0)?;
    let log_l2 = report.log_l2 + l2_phi_log;
    let fresh = BoundReport::new(BoundKind::Theorem1, log_l2, exp_capped(l2_phi_log));
    report.kind = fresh.kind;
    report.log_l2 = fresh.log_l2;
    report.value = fresh.value;
    report.overflow = fresh.overflow;
    report.l2_phi = fresh.l2_phi;
    Ok(report)
}

fn lemma7_c(ex: &RateExtremes, horizon: f64) -> f64 {
    ex.gamma_max * ex.gamma_max / ex.gamma_min * ex.q * ex.q * (horizon * ex.q * (ex.gamma_max - ex.gamma_min)).exp()
}

/// Log of the upper bound on `E_mu[theta^m]`:
/// `r ln(theta) + rT theta c e^{Tq theta} + (n-r)T^2 theta^2 c g_min e^{Tq theta}`.
pub fn lemma7_log_mgf_bound(theta: f64, ex: &RateExtremes, r: usize, n: usize, horizon: f64) -> Result<f64> {
    check_instance(r, n, horizon)?;
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument(format!("theta must be > 0, got {theta}")));
    }
    let c = lemma7_c(ex, horizon);
    let t = horizon;
    let grow = (t * ex.q * theta).exp();
    Ok(r as f64 * theta.ln()
        + r as f64 * t * theta * c * grow
        + (n - r) as f64 * t * t * theta * theta * c * ex.gamma_min * grow)
}

pub fn lemma7_mgf_bound(theta: f64, ex: &RateExtremes, r: usize, n: usize, horizon: f64) -> Result<f64> {
    Ok(exp_capped(lemma7_log_mgf_bound(theta, ex, r, n, horizon)?))
}

/// `p_r >= exp(-rTc e^{Tq g_max} - (n-r)T^2 c e^{Tq g_max} g_min)`.
pub fn lemma7_pr_lower(ex: &RateExtremes, r: usize, n: usize, horizon: f64) -> Result<f64> {
    check_instance(r, n, horizon)?;
    let c = lemma7_c(ex, horizon);
    let t = horizon;
    let grow = (t * ex.q * ex.gamma_max).exp();
    Ok((-(r as f64) * t * c * grow - (n - r) as f64 * t * t * c * grow * ex.gamma_min).exp())
}

/// Exact ISM quantities: `ln E_mu[theta^(m-r)]` and `ln p_r`, where `m`
/// counts dominated-chain steps and `p_r = P(m = r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMgf {
    pub log_mgf: f64,
    pub log_p_r: f64,
}

impl ExactMgf {
    pub fn mgf(&self) -> f64 {
        self.log_mgf.exp()
    }

    pub fn p_r(&self) -> f64 {
        self.log_p_r.exp()
    }
}

/// `ln E[theta^m_i]` and `ln P(m_i = [x != y])` at one site. The series
/// `sum_j theta^j P(m_i = j)` is a Poisson(theta * gT) series in disguise, so
/// it is truncated at that distribution's tail.
fn site_mgf(kernel: &SiteKernel, x: u8, y: u8, theta: f64) -> (f64, f64) {
    let rate = kernel.chain().rate * kernel.horizon();
    let cutoff = poisson_cutoff(rate * theta.max(1.0), SERIES_TAIL).max(kernel.cutoff());
    let r = &kernel.chain().matrix;
    let a = r.dim();
    let p_xy = kernel.transition().get(x as usize, y as usize);
    let log_theta = theta.ln();
    let mut row = vec![0.0; a];
    row[x as usize] = 1.0;
    let mut log_pois = -rate;
    let mut terms = Vec::with_capacity(cutoff + 1);
    let mut p_exact = 0.0;
    for j in 0..=cutoff {
        if j > 0 {
            let mut next = vec![0.0; a];
            for (i, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    for (z, out) in next.iter_mut().enumerate() {
                        *out += v * r.get(i, z);
                    }
                }
            }
            row = next;
            log_pois += rate.ln() - (j as f64).ln();
        }
        let ry = row[y as usize];
        if ry > 0.0 {
            let log_term = log_pois + ry.ln() - p_xy.ln();
            terms.push(log_term + j as f64 * log_theta);
            if j == usize::from(x != y) {
                p_exact = log_term;
            }
        }
    }
    (crate::series::log_sum_exp(&terms), p_exact)
}

/// Exact `E_mu[theta^(m-r)]` and `p_r` for any independent-site model, by
/// site independence.
pub fn exact_mgf_and_pr(ism: &IsmModel, theta: f64, pair: &SequencePair, horizon: f64) -> Result<ExactMgf> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!("theta must be positive, got {theta}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("time horizon must be > 0, got {horizon}")));
    }
    ism.check_length(pair.len())?;
    let mut kernels: HashMap<u64, SiteKernel> = HashMap::new();
    let mut cache: HashMap<(u64, u8, u8), (f64, f64)> = HashMap::new();
    let mut log_mgf = 0.0;
    let mut log_p_r = 0.0;
    for i in 0..pair.len() {
        let g = ism.generator(i);
        let h = g.content_hash();
        let (x, y) = (pair.start().get(i), pair.end().get(i));
        if !kernels.contains_key(&h) {
            kernels.insert(h, SiteKernel::new(g, horizon)?);
        }
        let kernel = &kernels[&h];
        if kernel.transition().get(x as usize, y as usize) <= 0.0 {
            return Err(Error::Unreachable);
        }
        let (e, p) = *cache.entry((h, x, y)).or_insert_with(|| site_mgf(kernel, x, y, theta));
        log_mgf += e;
        log_p_r += p;
    }
    log_mgf -= pair.hamming() as f64 * theta.ln();
    Ok(ExactMgf { log_mgf, log_p_r })
}

/// [`exact_mgf_and_pr`] for JC69 with unit exit rate.
pub fn exact_mgf_and_pr_jc69(theta: f64, pair: &SequencePair, horizon: f64) -> Result<ExactMgf> {
    exact_mgf_and_pr(&IsmModel::jc69(), theta, pair, horizon)
}

/// Model-specific bound for JC69+CpG:
/// `L^2 <= e^{8rT|lambda-1|} E_mu[theta_CG^(m-r)] / p_r^2 * l2_phi` with
/// `theta_CG = max(lambda^-2, lambda^2) e^{4T|lambda-1|}`, using the exact
/// expectation and `p_r`.
pub fn prop3_l2_bound(lambda: f64, pair: &SequencePair, horizon: f64, l2_phi: f64) -> Result<BoundReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(l2_phi >= 1.0) {
        return Err(Error::InvalidArgument(format!("L2 of the ordering measure must be >= 1, got {l2_phi}")));
    }
    let dev = (lambda - 1.0).abs();
    let log_theta = 2.0 * lambda.ln().abs() + 4.0 * horizon * dev;
    let exact = exact_mgf_and_pr_jc69(log_theta.exp(), pair, horizon)?;
    let r = pair.hamming() as f64;
    let log_l2 = 8.0 * r * horizon * dev + exact.log_mgf - 2.0 * exact.log_p_r + l2_phi.ln();
    let mut report = BoundReport::new(BoundKind::Prop3, log_l2, l2_phi);
    report.log_theta = Some(log_theta);
    report.log_p_r = Some(exact.log_p_r);
    report.log_mgf = Some(exact.log_mgf);
    Ok(report)
}

/// `ln L^2(Phi, U_S)` for the island problem:
/// `r_I (ln 2 + ln(1 + lambda^2) - 2 ln(1 + lambda))`.
pub fn prop4_island_log_l2(r_islands: usize, lambda: f64) -> f64 {
    r_islands as f64 * (2f64.ln() + (lambda * lambda).ln_1p() - 2.0 * lambda.ln_1p())
}

pub fn prop4_island_l2(r_islands: usize, lambda: f64) -> f64 {
    prop4_island_log_l2(r_islands, lambda).exp()
}

pub fn prop4_report(r_islands: usize, lambda: f64) -> BoundReport {
    let log = prop4_island_log_l2(r_islands, lambda);
    BoundReport::new(BoundKind::Prop4, log, log.exp())
}

/// `x = T (TCAT)^r T`, `y = T (TTGT)^r T`.
pub fn island_sequences(r_islands: usize) -> Result<SequencePair> {
    if r_islands == 0 {
        return Err(Error::InvalidArgument("need at least one island".into()));
    }
    island_sequences_padded(r_islands, 4 * r_islands + 2)
}

/// Island pair extended with trailing `T`s to length `n`. The padding is
/// context-inert, so orderings and weights are those of the unpadded pair.
pub fn island_sequences_padded(r_islands: usize, n: usize) -> Result<SequencePair> {
    let core = 4 * r_islands + 2;
    if n < core {
        return Err(Error::InvalidArgument(format!("{r_islands} islands need n >= {core}, got {n}")));
    }
    let pad = "T".repeat(n - core + 1);
    let x = format!("T{}{pad}", "TCAT".repeat(r_islands));
    let y = format!("T{}{pad}", "TTGT".repeat(r_islands));
    SequencePair::parse(&x, &y, &Alphabet::dna())
}

/// `D_KL(Phi || U_S)` for the island problem. Each island independently
/// picks the CpG-forming order with probability `p = lambda / (1 + lambda)`
/// under `Phi` and 1/2 under the uniform measure.
pub fn island_kl(r_islands: usize, lambda: f64) -> f64 {
    let p = lambda / (1.0 + lambda);
    let term = |v: f64| if v > 0.0 { v * (2.0 * v).ln() } else { 0.0 };
    r_islands as f64 * (term(p) + term(1.0 - p))
}

/// Advisory check of the growth regime `r = O(sqrt n)`, `T = O(r / n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub r: usize,
    pub n: usize,
    pub horizon: f64,
    pub sqrt_n: f64,
    pub r_exceeds_sqrt_n: bool,
    /// `T / (r / n)`; infinite when `r = 0` and `T > 0`.
    pub t_ratio: f64,
    pub t_exceeds_p_distance: bool,
    pub degenerate_horizon: bool,
    pub flags: Vec<String>,
}

pub fn assumption_check(r: usize, n: usize, horizon: f64) -> AssumptionReport {
    let sqrt_n = (n as f64).sqrt();
    let p_distance = if n > 0 { r as f64 / n as f64 } else { 0.0 };
    let r_exceeds_sqrt_n = r as f64 > sqrt_n * (1.0 + 1e-12);
    let t_ratio = if p_distance > 0.0 {
        horizon / p_distance
    } else if horizon > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let t_exceeds_p_distance = t_ratio > 1.0 + 1e-9;
    let degenerate_horizon = !(horizon > 0.0);
    let mut flags = Vec::new();
    if r_exceeds_sqrt_n {
        flags.push(format!("r = {r} exceeds sqrt(n) = {sqrt_n:.4}"));
    }
    if t_exceeds_p_distance {
        flags.push(format!("T exceeds r/n by a factor of {t_ratio:.4}"));
    }
    if degenerate_horizon {
        flags.push("degenerate time horizon".to_string());
    }
    AssumptionReport { r, n, horizon, sqrt_n, r_exceeds_sqrt_n, t_ratio, t_exceeds_p_distance, degenerate_horizon, flags }
}
