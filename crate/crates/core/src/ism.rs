//! Independent-site proposal process.
//!
//! Each site evolves under its own a x a rate generator. Everything here is
//! computed by uniformization: with dominating rate `g = max_x exit(x)` and
//! jump chain `R = I + Q/g`,
//!
//! ```text
//! exp(TQ) = sum_m Pois(m; gT) R^m
//! ```
//!
//! The same series gives the endpoint-conditioned distribution of the number
//! of dominated-chain steps, which drives the path sampler. For JC69 the
//! chain has no self transitions, so steps and substitutions coincide.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::{merge_jumps, require_valid, Jump, Path, Sequence, SequencePair};
use crate::series::{poisson_cutoff, poisson_log_pmf, Square, SERIES_TAIL};

const ROW_SUM_TOL: f64 = 1e-12;

/// Rate matrix of a single-site CTMC.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteGenerator {
    matrix: Square,
    exit: Vec<f64>,
}

impl SiteGenerator {
    /// Validates a full rate matrix: square, a >= 2, strictly positive
    /// off-diagonal entries and rows summing to zero.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let a = rows.len();
        if a < 2 {
            return Err(Error::Generator("need at least a 2x2 matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != a {
                return Err(Error::Generator(format!("row {} has {} entries, expected {}", i + 1, row.len(), a)));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Generator(format!("entry ({}, {}) is not finite", i + 1, j + 1)));
                }
                if i != j && v <= 0.0 {
                    return Err(Error::Generator(format!("off-diagonal entry ({}, {}) must be > 0", i + 1, j + 1)));
                }
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > ROW_SUM_TOL {
                return Err(Error::Generator(format!("row {} sums to {sum:e}, not 0", i + 1)));
            }
        }
        let matrix = Square::from_rows(&rows);
        let exit = (0..a).map(|i| (0..a).filter(|&j| j != i).map(|j| matrix.get(i, j)).sum()).collect();
        Ok(SiteGenerator { matrix, exit })
    }

    /// Builds the generator from off-diagonal rates, setting the diagonal to
    /// minus the row sum.
    pub fn from_off_diagonal(a: usize, rate: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut rows = vec![vec![0.0; a]; a];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    *v = rate(i, j);
                }
            }
            let s: f64 = row.iter().sum();
            row[i] = -s;
        }
        SiteGenerator::new(rows)
    }

    /// Jukes-Cantor on `a` symbols with exit rate `rate` from every state.
    pub fn jc69(a: usize, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Generator("JC69 rate must be positive".into()));
        }
        let off = rate / (a - 1) as f64;
        SiteGenerator::from_off_diagonal(a, |_, _| off)
    }

    pub fn size(&self) -> usize {
        self.matrix.dim()
    }

    #[inline]
    pub fn rate(&self, from: u8, to: u8) -> f64 {
        self.matrix.get(from as usize, to as usize)
    }

    /// Total exit rate gamma(.; x).
    #[inline]
    pub fn exit_rate(&self, x: u8) -> f64 {
        self.exit[x as usize]
    }

    pub fn matrix(&self) -> &Square {
        &self.matrix
    }

    /// Smallest and largest off-diagonal rate.
    pub fn rate_range(&self) -> (f64, f64) {
        let a = self.size();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..a {
            for j in 0..a {
                if i != j {
                    lo = lo.min(self.matrix.get(i, j));
                    hi = hi.max(self.matrix.get(i, j));
                }
            }
        }
        (lo, hi)
    }

    pub(crate) fn content_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.size().hash(&mut h);
        for i in 0..self.size() {
            for v in self.matrix.row(i) {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Generator specification as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GeneratorSpec {
    Jc69 {
        #[serde(default = "unit")]
        rate: f64,
    },
    Custom {
        matrix: Vec<Vec<f64>>,
    },
}

fn unit() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn build(&self, alphabet_size: usize) -> Result<SiteGenerator> {
        match self {
            GeneratorSpec::Jc69 { rate } => SiteGenerator::jc69(alphabet_size, *rate),
            GeneratorSpec::Custom { matrix } => {
                let g = SiteGenerator::new(matrix.clone())?;
                if g.size() != alphabet_size {
                    return Err(Error::Generator(format!(
                        "matrix is {0}x{0} but the alphabet has {1} symbols",
                        g.size(),
                        alphabet_size
                    )));
                }
                Ok(g)
            }
        }
    }
}

/// Independent-site model: one generator shared by all sites, or one per site.
#[derive(Debug, Clone, PartialEq)]
pub enum IsmModel {
    Shared(SiteGenerator),
    PerSite(Vec<SiteGenerator>),
}

impl IsmModel {
    pub fn shared(g: SiteGenerator) -> Self {
        IsmModel::Shared(g)
    }

    pub fn per_site(gs: Vec<SiteGenerator>) -> Result<Self> {
        let Some(first) = gs.first() else {
            return Err(Error::Generator("per-site model needs at least one generator".into()));
        };
        if gs.iter().any(|g| g.size() != first.size()) {
            return Err(Error::Generator("per-site generators use different alphabets".into()));
        }
        Ok(IsmModel::PerSite(gs))
    }

    /// JC69 with unit exit rate on DNA.
    pub fn jc69() -> Self {
        IsmModel::Shared(SiteGenerator::jc69(4, 1.0).expect("valid"))
    }

    #[inline]
    pub fn generator(&self, site: usize) -> &SiteGenerator {
        match self {
            IsmModel::Shared(g) => g,
            IsmModel::PerSite(gs) => &gs[site],
        }
    }

    pub fn alphabet_size(&self) -> usize {
        match self {
            IsmModel::Shared(g) => g.size(),
            IsmModel::PerSite(gs) => gs[0].size(),
        }
    }

    pub fn generators(&self) -> &[SiteGenerator] {
        match self {
            IsmModel::Shared(g) => std::slice::from_ref(g),
            IsmModel::PerSite(gs) => gs,
        }
    }

    pub(crate) fn check_length(&self, n: usize) -> Result<()> {
        match self {
            IsmModel::PerSite(gs) if gs.len() != n => Err(Error::InvalidArgument(format!(
                "model has {} site generators but sequences have length {}",
                gs.len(),
                n
            ))),
            _ => Ok(()),
        }
    }

    /// gamma(.; x): total exit rate of the whole sequence.
    pub fn total_exit(&self, seq: &Sequence) -> f64 {
        seq.bases().iter().enumerate().map(|(i, &b)| self.generator(i).exit_rate(b)).sum()
    }
}

/// Uniformized jump chain `R = I + Q / rate` of a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpChain {
    pub matrix: Square,
    pub rate: f64,
}

impl JumpChain {
    /// Uses the tightest dominating rate, `max_x exit(x)`.
    pub fn from_generator(g: &SiteGenerator) -> Self {
        let a = g.size();
        let rate = (0..a as u8).map(|x| g.exit_rate(x)).fold(0.0, f64::max);
        let mut matrix = Square::zeros(a);
        for i in 0..a {
            for j in 0..a {
                let v = if i == j {
                    (1.0 - g.exit_rate(i as u8) / rate).max(0.0)
                } else {
                    g.matrix().get(i, j) / rate
                };
                matrix.set(i, j, v);
            }
        }
        JumpChain { matrix, rate }
    }
}

/// Everything needed to evaluate and sample one generator over a fixed
/// horizon: Poisson weights, chain powers up to the series cutoff, the
/// transition matrix and per-endpoint step distributions.
#[derive(Debug, Clone)]
pub struct SiteKernel {
    chain: JumpChain,
    horizon: f64,
    log_pois: Vec<f64>,
    powers: Vec<Square>,
    transition: Square,
    // Cumulative step distribution for each (x, y), normalised to end at 1.
    cdf: Vec<Vec<f64>>,
    // For x = y: cumulative distribution of steps given at least one step.
    cdf_nonzero: Vec<Vec<f64>>,
    // For x = y: P(steps >= 1 | x, x).
    hit: Vec<f64>,
}

impl SiteKernel {
    pub fn new(g: &SiteGenerator, horizon: f64) -> Result<Self> {
        SiteKernel::with_tolerance(g, horizon, SERIES_TAIL)
    }

    pub fn with_tolerance(g: &SiteGenerator, horizon: f64, tol: f64) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("time horizon must be finite and >= 0, got {horizon}")));
        }
        let chain = JumpChain::from_generator(g);
        let a = g.size();
        let lambda = chain.rate * horizon;
        let cutoff = poisson_cutoff(lambda, tol);
        let log_pois = poisson_log_pmf(lambda, cutoff);
        let mut powers = Vec::with_capacity(cutoff + 1);
        powers.push(Square::identity(a));
        for m in 1..=cutoff {
            let next = powers[m - 1].mul(&chain.matrix);
            powers.push(next);
        }
        let mut transition = Square::zeros(a);
        for (lp, pw) in log_pois.iter().zip(&powers) {
            transition.add_scaled(pw, lp.exp());
        }

        let mut cdf = Vec::with_capacity(a * a);
        let mut cdf_nonzero = Vec::with_capacity(a);
        let mut hit = Vec::with_capacity(a);
        for x in 0..a {
            for y in 0..a {
                let mut acc = 0.0;
                let mut c: Vec<f64> = log_pois
                    .iter()
                    .zip(&powers)
                    .map(|(lp, pw)| {
                        acc += lp.exp() * pw.get(x, y);
                        acc
                    })
                    .collect();
                if acc > 0.0 {
                    c.iter_mut().for_each(|v| *v /= acc);
                }
                cdf.push(c);
                if x == y {
                    let mut tail = 0.0;
                    let mut cn: Vec<f64> = log_pois
                        .iter()
                        .zip(&powers)
                        .enumerate()
                        .map(|(m, (lp, pw))| {
                            if m > 0 {
                                tail += lp.exp() * pw.get(x, x);
                            }
                            tail
                        })
                        .collect();
                    if tail > 0.0 {
                        cn.iter_mut().for_each(|v| *v /= tail);
                    }
                    hit.push(if acc > 0.0 { tail / acc } else { 0.0 });
                    cdf_nonzero.push(cn);
                }
            }
        }
        Ok(SiteKernel { chain, horizon, log_pois, powers, transition, cdf, cdf_nonzero, hit })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn chain(&self) -> &JumpChain {
        &self.chain
    }

    /// Last retained term of the uniformization series.
    pub fn cutoff(&self) -> usize {
        self.log_pois.len() - 1
    }

    /// `exp(TQ)`.
    pub fn transition(&self) -> &Square {
        &self.transition
    }

    fn size(&self) -> usize {
        self.transition.dim()
    }

    /// P(m dominated-chain steps | x at 0, y at T). Zero past the cutoff.
    pub fn step_pmf(&self, x: u8, y: u8, m: usize) -> f64 {
        if m > self.cutoff() {
            return 0.0;
        }
        let p = self.transition.get(x as usize, y as usize);
        if p <= 0.0 {
            return 0.0;
        }
        self.log_pois[m].exp() * self.powers[m].get(x as usize, y as usize) / p
    }

    /// P(at least one step | x at both ends).
    pub fn hit_probability(&self, x: u8) -> f64 {
        self.hit[x as usize]
    }

    fn check_reachable(&self, x: u8, y: u8) -> Result<()> {
        if self.transition.get(x as usize, y as usize) > 0.0 {
            Ok(())
        } else {
            Err(Error::Unreachable)
        }
    }

    pub fn sample_steps<R: Rng + ?Sized>(&self, x: u8, y: u8, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let cdf = &self.cdf[x as usize * self.size() + y as usize];
        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
    }

    fn sample_steps_nonzero<R: Rng + ?Sized>(&self, x: u8, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let cdf = &self.cdf_nonzero[x as usize];
        cdf.partition_point(|&c| c <= u).clamp(1, cdf.len() - 1)
    }

    /// Appends the true jumps of a path with exactly `steps` chain steps.
    fn fill_path<R: Rng + ?Sized>(&self, x: u8, y: u8, steps: usize, site: usize, rng: &mut R, out: &mut Vec<Jump>) {
        if steps == 0 {
            return;
        }
        let mut times: Vec<f64> = Vec::with_capacity(steps);
        loop {
            times.clear();
            times.extend((0..steps).map(|_| rng.sample::<f64, _>(Open01) * self.horizon));
            times.sort_by(f64::total_cmp);
            let strictly_inside = times[0] > 0.0 && times[steps - 1] < self.horizon;
            if strictly_inside && times.windows(2).all(|w| w[0] < w[1]) {
                break;
            }
        }
        let a = self.size();
        let r = &self.chain.matrix;
        let mut prev = x as usize;
        let mut weights = vec![0.0; a];
        for (j, &t) in times.iter().enumerate() {
            let remaining = &self.powers[steps - 1 - j];
            let mut total = 0.0;
            for (z, w) in weights.iter_mut().enumerate() {
                *w = r.get(prev, z) * remaining.get(z, y as usize);
                total += *w;
            }
            let mut u = rng.gen::<f64>() * total;
            let mut next = a - 1;
            for (z, &w) in weights.iter().enumerate() {
                if w > 0.0 && u < w {
                    next = z;
                    break;
                }
                u -= w;
            }
            // Guard against rounding pushing u past the last positive weight.
            while weights[next] == 0.0 {
                next -= 1;
            }
            if next != prev {
                out.push(Jump { time: t, site, base: next as u8 });
            }
            prev = next;
        }
        debug_assert_eq!(prev, y as usize);
    }

    /// Endpoint-conditioned path at one site (recorded as site 0).
    pub fn sample_path<R: Rng + ?Sized>(&self, x: u8, y: u8, rng: &mut R) -> Result<Path> {
        if self.horizon == 0.0 {
            return if x == y { Ok(Path::empty(0.0)) } else { Err(Error::Unreachable) };
        }
        self.check_reachable(x, y)?;
        let steps = self.sample_steps(x, y, rng);
        let mut jumps = Vec::new();
        self.fill_path(x, y, steps, 0, rng, &mut jumps);
        Ok(Path { horizon: self.horizon, jumps })
    }
}

/// `exp(TQ)` by uniformization, truncated where the Poisson tail drops below 1e-14.
pub fn transition_matrix(g: &SiteGenerator, horizon: f64) -> Result<Square> {
    Ok(SiteKernel::new(g, horizon)?.transition().clone())
}

/// Log-likelihood of `pair` under the independent-site model:
/// `sum_i ln exp(TQ_i)[x_i, y_i]`.
pub fn ism_marginal_likelihood(model: &IsmModel, pair: &SequencePair, horizon: f64) -> Result<f64> {
    model.check_length(pair.len())?;
    let kernels = KernelSet::new(model, pair.len(), horizon)?;
    let mut total = 0.0;
    for i in 0..pair.len() {
        let p = kernels.kernel(i).transition().get(pair.start().get(i) as usize, pair.end().get(i) as usize);
        if p <= 0.0 {
            return Err(Error::Unreachable);
        }
        total += p.ln();
    }
    Ok(total)
}

/// P(m dominated-chain steps | x, y, T).
pub fn jump_count_pmf(g: &SiteGenerator, x: u8, y: u8, horizon: f64, m: usize) -> Result<f64> {
    if horizon <= 0.0 {
        return Err(Error::InvalidArgument("jump-count pmf needs T > 0".into()));
    }
    Ok(SiteKernel::new(g, horizon)?.step_pmf(x, y, m))
}

/// Samples one endpoint-conditioned single-site path.
pub fn sample_endpoint_path<R: Rng + ?Sized>(g: &SiteGenerator, x: u8, y: u8, horizon: f64, rng: &mut R) -> Result<Path> {
    SiteKernel::new(g, horizon)?.sample_path(x, y, rng)
}

/// Kernels for the distinct generators of a model, deduplicated by content.
#[derive(Debug, Clone)]
pub(crate) struct KernelSet {
    kernels: Vec<SiteKernel>,
    site_kernel: Option<Vec<usize>>,
}

impl KernelSet {
    pub(crate) fn new(model: &IsmModel, n: usize, horizon: f64) -> Result<Self> {
        match model {
            IsmModel::Shared(g) => Ok(KernelSet { kernels: vec![SiteKernel::new(g, horizon)?], site_kernel: None }),
            IsmModel::PerSite(gs) => {
                let mut by_hash: HashMap<u64, usize> = HashMap::new();
                let mut kernels = Vec::new();
                let mut site_kernel = Vec::with_capacity(n);
                for g in gs.iter().take(n) {
                    let id = match by_hash.get(&g.content_hash()) {
                        Some(&id) => id,
                        None => {
                            kernels.push(SiteKernel::new(g, horizon)?);
                            by_hash.insert(g.content_hash(), kernels.len() - 1);
                            kernels.len() - 1
                        }
                    };
                    site_kernel.push(id);
                }
                Ok(KernelSet { kernels, site_kernel: Some(site_kernel) })
            }
        }
    }

    #[inline]
    pub(crate) fn kernel_id(&self, site: usize) -> usize {
        match &self.site_kernel {
            None => 0,
            Some(ids) => ids[site],
        }
    }

    #[inline]
    pub(crate) fn kernel(&self, site: usize) -> &SiteKernel {
        &self.kernels[self.kernel_id(site)]
    }
}

#[derive(Debug, Clone)]
struct QuietClass {
    kernel: usize,
    base: u8,
    sites: Vec<usize>,
    log_miss: f64,
    hit: f64,
}

/// Draws whole-sequence paths from the endpoint-conditioned ISM, site by
/// site.
///
/// Sites with `x_i != y_i` are always sampled. Sites with `x_i = y_i` and a
/// shared generator are Bernoulli(P(m_i > 0)) for being touched at all, so
/// the touched ones are found by geometric skipping and then sampled given
/// at least one step.
#[derive(Debug, Clone)]
pub struct JointSampler {
    horizon: f64,
    kernels: KernelSet,
    mismatched: Vec<(usize, u8, u8)>,
    quiet: Vec<QuietClass>,
}

impl JointSampler {
    pub fn new(model: &IsmModel, pair: &SequencePair, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(if pair.hamming() > 0 && horizon == 0.0 {
                Error::Unreachable
            } else {
                Error::InvalidArgument(format!("time horizon must be > 0, got {horizon}"))
            });
        }
        model.check_length(pair.len())?;
        let kernels = KernelSet::new(model, pair.len(), horizon)?;
        let mut mismatched = Vec::new();
        let mut groups: HashMap<(usize, u8), Vec<usize>> = HashMap::new();
        for i in 0..pair.len() {
            let (x, y) = (pair.start().get(i), pair.end().get(i));
            kernels.kernel(i).check_reachable(x, y)?;
            if x != y {
                mismatched.push((i, x, y));
            } else {
                groups.entry((kernels.kernel_id(i), x)).or_default().push(i);
            }
        }
        let mut quiet: Vec<QuietClass> = groups
            .into_iter()
            .map(|((kernel, base), sites)| {
                let hit = kernels.kernels[kernel].hit_probability(base);
                QuietClass { kernel, base, sites, log_miss: (-hit).ln_1p(), hit }
            })
            .collect();
        quiet.sort_by_key(|c| (c.kernel, c.base));
        Ok(JointSampler { horizon, kernels, mismatched, quiet })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Path {
        let mut jumps = Vec::new();
        for &(site, x, y) in &self.mismatched {
            let k = self.kernels.kernel(site);
            let steps = k.sample_steps(x, y, rng);
            k.fill_path(x, y, steps, site, rng, &mut jumps);
        }
        for class in &self.quiet {
            if class.hit <= 0.0 {
                continue;
            }
            let k = &self.kernels.kernels[class.kernel];
            let mut next = 0usize;
            loop {
                let skip = if class.hit >= 1.0 {
                    0
                } else {
                    let u: f64 = rng.sample(Open01);
                    let s = (u.ln() / class.log_miss).floor();
                    if s >= class.sites.len() as f64 {
                        break;
                    }
                    s as usize
                };
                next += skip;
                if next >= class.sites.len() {
                    break;
                }
                let site = class.sites[next];
                let steps = k.sample_steps_nonzero(class.base, rng);
                k.fill_path(class.base, class.base, steps, site, rng, &mut jumps);
                next += 1;
            }
        }
        merge_jumps(self.horizon, jumps)
    }
}

/// Samples a whole-sequence endpoint-conditioned path under the ISM.
pub fn sample_joint_path<R: Rng + ?Sized>(model: &IsmModel, pair: &SequencePair, horizon: f64, rng: &mut R) -> Result<Path> {
    Ok(JointSampler::new(model, pair, horizon)?.sample(rng))
}

fn check_horizon(path: &Path, horizon: f64) -> Result<()> {
    if path.horizon != horizon || !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "path horizon {} does not match T = {}",
            path.horizon, horizon
        )));
    }
    Ok(())
}

/// Joint log-density of a valid path under the ISM. The sequence exit rate
/// is updated incrementally: only the mutated site's exit rate changes.
pub fn ism_path_log_density(model: &IsmModel, path: &Path, pair: &SequencePair, horizon: f64) -> Result<f64> {
    check_horizon(path, horizon)?;
    model.check_length(pair.len())?;
    require_valid(path, pair)?;
    let mut seq = pair.start().clone();
    let mut total = model.total_exit(&seq);
    let mut log_density = 0.0;
    let mut last = 0.0;
    for jump in &path.jumps {
        let g = model.generator(jump.site);
        let from = seq.get(jump.site);
        log_density += g.rate(from, jump.base).ln() - (jump.time - last) * total;
        total += g.exit_rate(jump.base) - g.exit_rate(from);
        seq.set(jump.site, jump.base);
        last = jump.time;
    }
    Ok(log_density - (horizon - last) * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::worker_stream;
    use crate::seq::{validate_path, Alphabet};

    fn jc() -> SiteGenerator {
        SiteGenerator::jc69(4, 1.0).unwrap()
    }

    fn gtr_like() -> SiteGenerator {
        SiteGenerator::from_off_diagonal(4, |i, j| 0.1 + 0.07 * i as f64 + 0.13 * j as f64).unwrap()
    }

    #[test]
    fn generator_validation() {
        assert!(SiteGenerator::new(vec![vec![-1.0, 1.0], vec![0.5, -0.4]]).is_err());
        assert!(SiteGenerator::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(SiteGenerator::new(vec![vec![-1.0, 1.0]]).is_err());
        let g = SiteGenerator::new(vec![vec![-1.0, 1.0], vec![2.0, -2.0]]).unwrap();
        assert_eq!(g.exit_rate(1), 2.0);
    }

    #[test]
    fn spec_parsing() {
        let s: GeneratorSpec = serde_json::from_str(r#"{"type":"jc69","rate":1.0}"#).unwrap();
        assert_eq!(s.build(4).unwrap(), jc());
        let s: GeneratorSpec = serde_json::from_str(r#"{"type":"custom","matrix":[[-1,1],[1,-1]]}"#).unwrap();
        assert!(s.build(4).is_err());
        assert!(s.build(2).is_ok());
    }

    #[test]
    fn identity_at_zero() {
        let p = transition_matrix(&gtr_like(), 0.0).unwrap();
        assert_eq!(p, Square::identity(4));
        assert!(transition_matrix(&jc(), -1.0).is_err());
    }

    #[test]
    fn jc69_closed_form() {
        let p = transition_matrix(&jc(), 1.0).unwrap();
        let e = (-4.0f64 / 3.0).exp();
        let same = 0.25 + 0.75 * e;
        let diff = 0.25 - 0.25 * e;
        assert!((same - 0.44769).abs() < 1e-5);
        assert!((diff - 0.18410).abs() < 1e-5);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { same } else { diff };
                assert!((p.get(i, j) - want).abs() < 1e-13);
            }
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    /// Stationary vector from the null space of Q^T by Gaussian elimination.
    fn stationary(g: &SiteGenerator) -> Vec<f64> {
        let a = g.size();
        let mut m: Vec<Vec<f64>> = (0..a).map(|i| (0..a).map(|j| g.matrix().get(j, i)).collect()).collect();
        // Replace last equation with normalisation.
        m[a - 1] = vec![1.0; a];
        let mut rhs = vec![0.0; a];
        rhs[a - 1] = 1.0;
        for col in 0..a {
            let piv = (col..a).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, piv);
            rhs.swap(col, piv);
            for row in 0..a {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for k in 0..a {
                        m[row][k] -= f * m[col][k];
                    }
                    rhs[row] -= f * rhs[col];
                }
            }
        }
        (0..a).map(|i| rhs[i] / m[i][i]).collect()
    }

    #[test]
    fn long_horizon_reaches_stationarity() {
        let g = gtr_like();
        let pi = stationary(&g);
        let p = transition_matrix(&g, 500.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((p.get(i, j) - pi[j]).abs() < 1e-8, "({i},{j}) {} vs {}", p.get(i, j), pi[j]);
            }
        }
    }

    #[test]
    fn truncation_is_stable() {
        for &t in &[0.05, 0.7, 3.0] {
            let a = SiteKernel::with_tolerance(&gtr_like(), t, 1e-14).unwrap();
            let b = SiteKernel::with_tolerance(&gtr_like(), t, 1e-20).unwrap();
            assert!(b.cutoff() > a.cutoff());
            assert!(a.transition().max_abs_diff(b.transition()) <= 1e-12);
        }
    }

    #[test]
    fn marginal_likelihood_per_site_product() {
        let ab = Alphabet::dna();
        let pair = SequencePair::parse("ACGTACGTAA", "ACGAACCTAA", &ab).unwrap();
        let t = 0.3;
        let p = transition_matrix(&jc(), t).unwrap();
        let want = 2.0 * p.get(0, 1).ln() + 8.0 * p.get(0, 0).ln();
        let got = ism_marginal_likelihood(&IsmModel::jc69(), &pair, t).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn marginal_likelihood_small_t_identity() {
        let ab = Alphabet::dna();
        let pair = SequencePair::parse("ACGT", "ACGT", &ab).unwrap();
        let v = ism_marginal_likelihood(&IsmModel::jc69(), &pair, 1e-9).unwrap();
        assert!(v.abs() < 1e-8);
        let moved = SequencePair::parse("ACGT", "ACGA", &ab).unwrap();
        assert!(matches!(ism_marginal_likelihood(&IsmModel::jc69(), &moved, 0.0), Err(Error::Unreachable)));
    }

    #[test]
    fn pmf_jc69_values() {
        let p_same = 0.25 + 0.75 * (-4.0f64 / 3.0).exp();
        let v = jump_count_pmf(&jc(), 0, 0, 1.0, 0).unwrap();
        assert!((v - (-1.0f64).exp() / p_same).abs() < 1e-12);
        assert!((v - 0.8218).abs() < 1e-4);
        assert_eq!(jump_count_pmf(&jc(), 0, 2, 1.0, 0).unwrap(), 0.0);
    }

    #[test]
    fn pmf_normalises() {
        let mut rng = worker_stream(11, 0);
        for _ in 0..20 {
            let x = rng.gen_range(0..4u8);
            let y = rng.gen_range(0..4u8);
            let t = rng.gen_range(0.01..3.0);
            let g = gtr_like();
            let k = SiteKernel::new(&g, t).unwrap();
            let total: f64 = (0..=k.cutoff()).map(|m| k.step_pmf(x, y, m)).sum();
            assert!((total - 1.0).abs() < 1e-10, "x={x} y={y} t={t}: {total}");
        }
    }

    #[test]
    fn sampled_paths_hit_endpoint() {
        let mut rng = worker_stream(5, 0);
        let g = gtr_like();
        for &(x, y) in &[(0u8, 3u8), (2, 2), (1, 0)] {
            let k = SiteKernel::new(&g, 0.8).unwrap();
            for _ in 0..2000 {
                let p = k.sample_path(x, y, &mut rng).unwrap();
                let mut state = x;
                let mut last = 0.0;
                for j in &p.jumps {
                    assert!(j.time > last && j.time < 0.8);
                    assert_ne!(j.base, state);
                    state = j.base;
                    last = j.time;
                }
                assert_eq!(state, y);
                if x != y {
                    assert!(!p.is_empty());
                }
            }
        }
    }

    #[test]
    fn tiny_horizon_gives_empty_paths() {
        let mut rng = worker_stream(1, 0);
        let empties = (0..1000)
            .filter(|_| sample_endpoint_path(&jc(), 1, 1, 1e-9, &mut rng).unwrap().is_empty())
            .count();
        assert_eq!(empties, 1000);
        assert!(matches!(sample_endpoint_path(&jc(), 1, 2, 0.0, &mut rng), Err(Error::Unreachable)));
    }

    #[test]
    fn empty_path_density_is_pure_waiting() {
        let ab = Alphabet::dna();
        let pair = SequencePair::parse("ACGT", "ACGT", &ab).unwrap();
        let model = IsmModel::shared(gtr_like());
        let d = ism_path_log_density(&model, &Path::empty(0.4), &pair, 0.4).unwrap();
        let want = -0.4 * model.total_exit(pair.start());
        assert!((d - want).abs() < 1e-14);
    }

    #[test]
    fn single_jump_density() {
        let ab = Alphabet::dna();
        let g = gtr_like();
        let model = IsmModel::shared(g.clone());
        let pair = SequencePair::parse("AC", "GC", &ab).unwrap();
        let t = 0.13;
        let horizon = 0.5;
        let path = Path { horizon, jumps: vec![Jump { time: t, site: 0, base: 2 }] };
        let got = ism_path_log_density(&model, &path, &pair, horizon).unwrap();
        let before = model.total_exit(pair.start());
        let after = model.total_exit(pair.end());
        let want = g.rate(0, 2).ln() - t * before - (horizon - t) * after;
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn invalid_path_density_is_an_error() {
        let ab = Alphabet::dna();
        let pair = SequencePair::parse("AC", "GC", &ab).unwrap();
        assert!(matches!(
            ism_path_log_density(&IsmModel::jc69(), &Path::empty(1.0), &pair, 1.0),
            Err(Error::InvalidPath(_))
        ));
    }

    #[test]
    fn joint_sampler_respects_endpoints() {
        let ab = Alphabet::dna();
        let pair = SequencePair::parse("TTCATTGGACTTACCA", "TTTGTTGCACTTACCA", &ab).unwrap();
        let sampler = JointSampler::new(&IsmModel::jc69(), &pair, 0.3).unwrap();
        let mut rng = worker_stream(3, 0);
        for _ in 0..2000 {
            let p = sampler.sample(&mut rng);
            assert!(validate_path(&p, &pair).is_valid());
            for &s in pair.mutated_sites() {
                assert!(p.jumps.iter().any(|j| j.site == s));
            }
        }
    }

    #[test]
    fn per_site_generators_are_deduplicated() {
        let gs = vec![jc(), gtr_like(), jc(), gtr_like(), jc()];
        let model = IsmModel::per_site(gs).unwrap();
        let ks = KernelSet::new(&model, 5, 0.2).unwrap();
        assert_eq!(ks.kernels.len(), 2);
        assert_eq!(ks.kernel_id(2), ks.kernel_id(0));
        assert_eq!(ks.kernel_id(3), ks.kernel_id(1));
        let ab = Alphabet::dna();
        let short = SequencePair::parse("ACG", "ACG", &ab).unwrap();
        assert!(ism_marginal_likelihood(&model, &short, 0.1).is_err());
    }
}
