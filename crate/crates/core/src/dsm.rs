//! Dependent-site target process.
//!
//! Rates are the independent-site rates scaled by a context multiplier:
//! `gt_i(b; window) = g_i(b; x_i) * phi(b; window)`, where the window holds
//! the `k/2` neighbours on each side of site `i`. Neighbours past either end
//! of the sequence are passed as `None`.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ism::IsmModel;
use crate::seq::{require_valid, Alphabet, Jump, Path, Sequence, SequencePair};

/// Widest context window supported (neighbours per side times two).
pub const MAX_WIDTH: usize = 16;
const EXHAUSTIVE_LIMIT: u64 = 1_000_000;
const PROBES: usize = 20_000;

/// A context multiplier `phi(b; window)`.
///
/// `window` has length `width() + 1` with the mutating site in the middle.
pub trait ContextModel: Send + Sync + fmt::Debug {
    fn width(&self) -> usize;
    fn multiplier(&self, b: u8, window: &[Option<u8>]) -> f64;
    /// Declared `(phi_min, phi_max)`.
    fn bounds(&self) -> (f64, f64);
}

/// The CpG multiplier: `lambda` raised to the number of CG dinucleotides the
/// mutating site currently takes part in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpgContext {
    pub lambda: f64,
    c: u8,
    g: u8,
}

impl CpgContext {
    pub fn new(lambda: f64, alphabet: &Alphabet) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Context(format!("lambda must be positive and finite, got {lambda}")));
        }
        let (Some(c), Some(g)) = (alphabet.index_of('C'), alphabet.index_of('G')) else {
            return Err(Error::Context("CpG context needs C and G in the alphabet".into()));
        };
        Ok(CpgContext { lambda, c, g })
    }

    /// Number of CG pairs touching the centre of a 3-base window.
    #[inline]
    pub fn cg_count(&self, window: &[Option<u8>]) -> i32 {
        let cg = |l: Option<u8>, r: Option<u8>| (l == Some(self.c) && r == Some(self.g)) as i32;
        cg(window[0], window[1]) + cg(window[1], window[2])
    }
}

impl ContextModel for CpgContext {
    fn width(&self) -> usize {
        2
    }

    #[inline]
    fn multiplier(&self, _b: u8, window: &[Option<u8>]) -> f64 {
        match self.cg_count(window) {
            0 => 1.0,
            1 => self.lambda,
            _ => self.lambda * self.lambda,
        }
    }

    fn bounds(&self) -> (f64, f64) {
        let sq = self.lambda * self.lambda;
        (sq.min(1.0), sq.max(1.0))
    }
}

/// Dense lookup table over `(window, b)` for small `k`.
///
/// Window digits use `a` for an absent neighbour, so the table has
/// `(a+1)^k * a * a` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TableContext {
    k: usize,
    a: usize,
    values: Vec<f64>,
    bounds: (f64, f64),
}

impl TableContext {
    /// Builds the table from keys `"<window>:<b>"`, e.g. `"ACG:T"`, with `-`
    /// marking an absent neighbour. Every interior window must be listed for
    /// every `b` different from the centre; windows touching a sequence end
    /// default to 1 when omitted.
    pub fn from_keys(k: usize, alphabet: &Alphabet, phi: &HashMap<String, f64>, declared: Option<(f64, f64)>) -> Result<Self> {
        if k % 2 != 0 || k > 4 {
            return Err(Error::Context(format!("table contexts need an even k <= 4, got {k}")));
        }
        let a = alphabet.size();
        let half = k / 2;
        let mut values = vec![f64::NAN; (a + 1).pow(k as u32) * a * a];
        for (key, &v) in phi {
            let (win, b) = key
                .split_once(':')
                .ok_or_else(|| Error::Context(format!("key {key:?} is not of the form WINDOW:BASE")))?;
            let win: Vec<char> = win.chars().collect();
            if win.len() != k + 1 {
                return Err(Error::Context(format!("key {key:?}: window must have {} symbols", k + 1)));
            }
            let mut digits = Vec::with_capacity(k + 1);
            for (pos, &ch) in win.iter().enumerate() {
                if ch == '-' && pos != half {
                    digits.push(None);
                } else {
                    let d = alphabet
                        .index_of(ch)
                        .ok_or_else(|| Error::Context(format!("key {key:?}: unknown symbol {ch:?}")))?;
                    digits.push(Some(d));
                }
            }
            let mut bchars = b.chars();
            let (Some(bc), None) = (bchars.next(), bchars.next()) else {
                return Err(Error::Context(format!("key {key:?}: proposed base must be one symbol")));
            };
            let bi = alphabet
                .index_of(bc)
                .ok_or_else(|| Error::Context(format!("key {key:?}: unknown symbol {bc:?}")))?;
            if Some(bi) == digits[half] {
                return Err(Error::Context(format!("key {key:?}: proposed base equals the centre")));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Context(format!("key {key:?}: multiplier must be positive, got {v}")));
            }
            values[table_index(a, k, bi, &digits)] = v;
        }
        for idx in 0..values.len() {
            if values[idx].is_nan() {
                let (b, digits) = table_decode(a, k, idx);
                if digits[half].is_none() || Some(b) == digits[half] {
                    values[idx] = 1.0;
                    continue;
                }
                if digits.iter().any(Option::is_none) {
                    values[idx] = 1.0;
                } else {
                    let win: String = digits.iter().map(|d| alphabet.symbol(d.unwrap())).collect();
                    return Err(Error::Context(format!("missing table key {win}:{}", alphabet.symbol(b))));
                }
            }
        }
        let observed = (0..values.len())
            .filter(|&idx| {
                let (b, digits) = table_decode(a, k, idx);
                Some(b) != digits[half]
            })
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), idx| (lo.min(values[idx]), hi.max(values[idx])));
        let bounds = declared.unwrap_or(observed);
        Ok(TableContext { k, a, values, bounds })
    }
}

fn table_index(a: usize, k: usize, b: u8, window: &[Option<u8>]) -> usize {
    let half = k / 2;
    let mut idx = 0usize;
    for (pos, d) in window.iter().enumerate() {
        if pos == half {
            idx = idx * a + d.map_or(0, |v| v as usize);
        } else {
            idx = idx * (a + 1) + d.map_or(a, |v| v as usize);
        }
    }
    idx * a + b as usize
}

fn table_decode(a: usize, k: usize, mut idx: usize) -> (u8, Vec<Option<u8>>) {
    let half = k / 2;
    let b = (idx % a) as u8;
    idx /= a;
    let mut window = vec![None; k + 1];
    for pos in (0..=k).rev() {
        if pos == half {
            window[pos] = Some((idx % a) as u8);
            idx /= a;
        } else {
            let d = idx % (a + 1);
            window[pos] = (d < a).then_some(d as u8);
            idx /= a + 1;
        }
    }
    (b, window)
}

impl ContextModel for TableContext {
    fn width(&self) -> usize {
        self.k
    }

    fn multiplier(&self, b: u8, window: &[Option<u8>]) -> f64 {
        self.values[table_index(self.a, self.k, b, window)]
    }

    fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

type PhiFn = dyn Fn(u8, &[Option<u8>]) -> f64 + Send + Sync;

/// Arbitrary multiplier supplied as a closure (library use only).
#[derive(Clone)]
pub struct FnContext {
    k: usize,
    f: Arc<PhiFn>,
    bounds: (f64, f64),
}

impl FnContext {
    pub fn new(k: usize, bounds: (f64, f64), f: impl Fn(u8, &[Option<u8>]) -> f64 + Send + Sync + 'static) -> Self {
        FnContext { k, f: Arc::new(f), bounds }
    }
}

impl fmt::Debug for FnContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnContext").field("k", &self.k).field("bounds", &self.bounds).finish()
    }
}

impl ContextModel for FnContext {
    fn width(&self) -> usize {
        self.k
    }

    fn multiplier(&self, b: u8, window: &[Option<u8>]) -> f64 {
        (self.f)(b, window)
    }

    fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

/// Parameters of the JC69+CpG model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpgParams {
    pub lambda: f64,
    /// Per-site exit rate of the underlying JC69 process.
    #[serde(default = "unit_rate")]
    pub base_rate: f64,
}

fn unit_rate() -> f64 {
    1.0
}

impl CpgParams {
    pub fn new(lambda: f64) -> Self {
        CpgParams { lambda, base_rate: 1.0 }
    }
}

/// Independent-site rates modulated by a context multiplier.
#[derive(Debug, Clone)]
pub struct DsmModel {
    ism: IsmModel,
    context: Arc<dyn ContextModel>,
    cpg: Option<CpgContext>,
}

impl DsmModel {
    pub fn new(ism: IsmModel, context: Arc<dyn ContextModel>) -> Result<Self> {
        validate_context(context.as_ref(), ism.alphabet_size())?;
        Ok(DsmModel { ism, context, cpg: None })
    }

    pub fn ism(&self) -> &IsmModel {
        &self.ism
    }

    pub fn context(&self) -> &dyn ContextModel {
        self.context.as_ref()
    }

    pub fn width(&self) -> usize {
        self.context.width()
    }

    /// `lambda` when this is a CpG model.
    pub fn cpg_lambda(&self) -> Option<f64> {
        self.cpg.map(|c| c.lambda)
    }

    pub(crate) fn check_length(&self, n: usize) -> Result<()> {
        self.ism.check_length(n)?;
        if self.width() + 1 > n {
            return Err(Error::Context(format!(
                "context window of {} sites is longer than the sequence ({n})",
                self.width() + 1
            )));
        }
        Ok(())
    }

    /// `phi(b; window around site i)`.
    #[inline]
    pub(crate) fn phi(&self, seq: &[u8], i: usize, b: u8) -> f64 {
        let k = self.context.width();
        let half = k / 2;
        let mut window = [None; MAX_WIDTH + 1];
        for (slot, w) in window[..=k].iter_mut().enumerate() {
            let pos = i as isize + slot as isize - half as isize;
            if pos >= 0 && (pos as usize) < seq.len() {
                *w = Some(seq[pos as usize]);
            }
        }
        self.context.multiplier(b, &window[..=k])
    }

    /// Total DSM exit rate of site `i`.
    #[inline]
    pub(crate) fn site_exit(&self, seq: &[u8], i: usize) -> f64 {
        let g = self.ism.generator(i);
        let x = seq[i];
        (0..g.size() as u8).filter(|&b| b != x).map(|b| g.rate(x, b) * self.phi(seq, i, b)).sum()
    }

    /// DSM exit rate of site `i` minus its ISM exit rate, computed as
    /// `sum_b g(b) (phi - 1)` so that it is exactly zero when `phi = 1`.
    #[inline]
    pub(crate) fn site_excess(&self, seq: &[u8], i: usize) -> f64 {
        let g = self.ism.generator(i);
        let x = seq[i];
        (0..g.size() as u8).filter(|&b| b != x).map(|b| g.rate(x, b) * (self.phi(seq, i, b) - 1.0)).sum()
    }

    /// Sites whose exit rate can change when site `s` mutates.
    #[inline]
    pub(crate) fn affected(&self, n: usize, s: usize) -> std::ops::Range<usize> {
        let half = self.width() / 2;
        s.saturating_sub(half)..(s + half + 1).min(n)
    }
}

fn validate_context(ctx: &dyn ContextModel, a: usize) -> Result<()> {
    let k = ctx.width();
    if k % 2 != 0 || k > MAX_WIDTH {
        return Err(Error::Context(format!("context width must be even and <= {MAX_WIDTH}, got {k}")));
    }
    let (lo, hi) = ctx.bounds();
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Context(format!("invalid multiplier bounds ({lo}, {hi})")));
    }
    let check = |b: u8, window: &[Option<u8>]| -> Result<()> {
        let v = ctx.multiplier(b, window);
        if !(v >= lo && v <= hi) {
            return Err(Error::Context(format!(
                "multiplier {v} for base {b} and window {window:?} is outside the declared bounds [{lo}, {hi}]"
            )));
        }
        Ok(())
    };
    let half = k / 2;
    let total = ((a + 1) as u64).saturating_pow(k as u32).saturating_mul((a * a) as u64);
    let mut window = vec![None; k + 1];
    if total <= EXHAUSTIVE_LIMIT {
        for idx in 0..total as usize {
            let (b, w) = table_decode(a, k, idx);
            if Some(b) != w[half] {
                check(b, &w)?;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..PROBES {
            for (pos, w) in window.iter_mut().enumerate() {
                let d = rng.gen_range(0..=a);
                *w = if d == a && pos != half { None } else { Some((d % a) as u8) };
            }
            let centre = window[half].unwrap();
            let b = (centre as usize + rng.gen_range(1..a)) % a;
            check(b as u8, &window)?;
        }
    }
    Ok(())
}

/// JC69 on DNA with the CpG multiplier.
pub fn make_cpg_model(p: CpgParams) -> Result<DsmModel> {
    let ism = IsmModel::Shared(crate::ism::SiteGenerator::jc69(4, p.base_rate)?);
    let cpg = CpgContext::new(p.lambda, &Alphabet::dna())?;
    let mut model = DsmModel::new(ism, Arc::new(cpg))?;
    model.cpg = Some(cpg);
    Ok(model)
}

/// `phi(b; window of site i)` for a proposed change at site `i`.
pub fn context_multiplier(model: &DsmModel, seq: &Sequence, i: usize, b: u8) -> Result<f64> {
    if i >= seq.len() {
        return Err(Error::InvalidArgument(format!("site {} is past the end of the sequence", i + 1)));
    }
    if b as usize >= model.ism().alphabet_size() || b == seq.get(i) {
        return Err(Error::InvalidArgument(format!("base {b} is not a substitution at site {}", i + 1)));
    }
    Ok(model.phi(seq.bases(), i, b))
}

/// Total rate `gt(.; x)` of leaving `seq`, by a full scan.
pub fn total_rate(model: &DsmModel, seq: &Sequence) -> f64 {
    let bases = seq.bases();
    (0..bases.len()).map(|i| model.site_exit(bases, i)).sum()
}

/// Applies `jump` to `seq` and returns the resulting change in total rate,
/// recomputing only the sites whose windows contain the jump site.
pub fn total_rate_delta(model: &DsmModel, seq: &mut Sequence, jump: &Jump) -> Result<f64> {
    if jump.site >= seq.len() || jump.base == seq.get(jump.site) || jump.base as usize >= model.ism().alphabet_size() {
        return Err(Error::InvalidArgument(format!("jump at site {} does not change the sequence", jump.site + 1)));
    }
    let sites = model.affected(seq.len(), jump.site);
    let before: f64 = sites.clone().map(|i| model.site_exit(seq.bases(), i)).sum();
    seq.set(jump.site, jump.base);
    let after: f64 = sites.map(|i| model.site_exit(seq.bases(), i)).sum();
    Ok(after - before)
}

/// Joint log-density of a valid path under the DSM.
pub fn dsm_path_log_density(model: &DsmModel, path: &Path, pair: &SequencePair, horizon: f64) -> Result<f64> {
    if path.horizon != horizon || !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("path horizon {} does not match T = {horizon}", path.horizon)));
    }
    model.check_length(pair.len())?;
    require_valid(path, pair)?;
    let mut seq = pair.start().clone();
    let mut total = total_rate(model, &seq);
    let mut log_density = 0.0;
    let mut last = 0.0;
    for jump in &path.jumps {
        let from = seq.get(jump.site);
        let rate = model.ism().generator(jump.site).rate(from, jump.base) * model.phi(seq.bases(), jump.site, jump.base);
        log_density += rate.ln() - (jump.time - last) * total;
        total += total_rate_delta(model, &mut seq, jump)?;
        last = jump.time;
    }
    Ok(log_density - (horizon - last) * total)
}
