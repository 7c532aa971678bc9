//! Brute-force references for small instances.
//!
//! States of the full process are sequences encoded as little-endian base-a
//! integers, so the neighbour reached by setting site `i` to `b` is found by
//! replacing one digit.

use itertools::Itertools;
use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsm::{total_rate, total_rate_delta, DsmModel};
use crate::error::{Error, Result};
use crate::seq::{Jump, Path, Sequence, SequencePair};
use crate::series::{poisson_cutoff, poisson_log_pmf};

/// Default cap on the number of states (4^7).
pub const DEFAULT_STATE_LIMIT: u128 = 16_384;
pub const ORACLE_TAIL: f64 = 1e-13;
pub const MAX_ENUMERATED_SITES: usize = 8;

/// Sparse rate matrix of the dependent-site process on all `a^n` sequences.
#[derive(Debug, Clone)]
pub struct FullGenerator {
    a: usize,
    n: usize,
    // CSR layout: neighbours of state s are targets[offsets[s]..offsets[s + 1]].
    offsets: Vec<usize>,
    targets: Vec<u32>,
    rates: Vec<f64>,
    exit: Vec<f64>,
    uniform_rate: f64,
}

impl FullGenerator {
    pub fn new(model: &DsmModel, n: usize, limit: u128) -> Result<Self> {
        let a = model.ism().alphabet_size();
        let states = (a as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
        if states > limit {
            return Err(Error::StateSpaceTooLarge { states, limit });
        }
        model.check_length(n)?;
        let states = states as usize;
        let degree = n * (a - 1);
        let mut offsets = Vec::with_capacity(states + 1);
        let mut targets = Vec::with_capacity(states * degree);
        let mut rates = Vec::with_capacity(states * degree);
        let mut exit = Vec::with_capacity(states);
        let mut bases = vec![0u8; n];
        offsets.push(0);
        for s in 0..states {
            decode_into(s, a, &mut bases);
            let mut total = 0.0;
            let mut place = 1usize;
            for i in 0..n {
                let x = bases[i];
                let g = model.ism().generator(i);
                for b in 0..a as u8 {
                    if b == x {
                        continue;
                    }
                    let rate = g.rate(x, b) * model.phi(&bases, i, b);
                    let t = s - x as usize * place + b as usize * place;
                    targets.push(t as u32);
                    rates.push(rate);
                    total += rate;
                }
                place *= a;
            }
            exit.push(total);
            offsets.push(targets.len());
        }
        let uniform_rate = exit.iter().copied().fold(0.0, f64::max);
        Ok(FullGenerator { a, n, offsets, targets, rates, exit, uniform_rate })
    }

    pub fn states(&self) -> usize {
        self.exit.len()
    }

    pub fn uniform_rate(&self) -> f64 {
        self.uniform_rate
    }

    pub fn encode(&self, seq: &Sequence) -> usize {
        seq.bases().iter().rev().fold(0, |acc, &b| acc * self.a + b as usize)
    }

    pub fn decode(&self, state: usize) -> Vec<u8> {
        let mut out = vec![0; self.n];
        decode_into(state, self.a, &mut out);
        out
    }

    /// Off-diagonal entries of row `state` as `(target, rate)`.
    pub fn row(&self, state: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[state]..self.offsets[state + 1];
        self.targets[span.clone()].iter().map(|&t| t as usize).zip(self.rates[span].iter().copied())
    }

    pub fn exit_rate(&self, state: usize) -> f64 {
        self.exit[state]
    }

    /// `u <- Pbar u` with `Pbar = I + Q / uniform_rate`.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let g = self.uniform_rate;
        for (s, o) in out.iter_mut().enumerate() {
            let mut acc = (1.0 - self.exit[s] / g) * u[s];
            for (t, rate) in self.row(s) {
                acc += rate / g * u[t];
            }
            *o = acc;
        }
    }
}

fn decode_into(mut state: usize, a: usize, out: &mut [u8]) {
    for v in out.iter_mut() {
        *v = (state % a) as u8;
        state /= a;
    }
}

/// `exp(T Q)[x, y]` of the dependent-site process, by uniformization on the
/// full state space.
pub fn exact_transition_prob(model: &DsmModel, pair: &SequencePair, horizon: f64) -> Result<f64> {
    exact_transition_prob_with(model, pair, horizon, ORACLE_TAIL, DEFAULT_STATE_LIMIT)
}

pub fn exact_transition_prob_with(model: &DsmModel, pair: &SequencePair, horizon: f64, tol: f64, limit: u128) -> Result<f64> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("time horizon must be finite and >= 0, got {horizon}")));
    }
    let full = FullGenerator::new(model, pair.len(), limit)?;
    let x = full.encode(pair.start());
    let y = full.encode(pair.end());
    if horizon == 0.0 {
        return Ok(if x == y { 1.0 } else { 0.0 });
    }
    let rate = full.uniform_rate() * horizon;
    let cutoff = poisson_cutoff(rate, tol);
    let weights = poisson_log_pmf(rate, cutoff);
    let mut u = vec![0.0; full.states()];
    u[y] = 1.0;
    let mut next = vec![0.0; full.states()];
    let mut p = 0.0;
    for (m, lw) in weights.iter().enumerate() {
        if m > 0 {
            full.apply(&u, &mut next);
            std::mem::swap(&mut u, &mut next);
        }
        p += lw.exp() * u[x];
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Forward simulation of the dependent-site process from `start` for time
/// `horizon`. Returns the path and the final sequence.
pub fn gillespie_forward<R: Rng + ?Sized>(model: &DsmModel, start: &Sequence, horizon: f64, rng: &mut R) -> Result<(Path, Sequence)> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("time horizon must be finite and >= 0, got {horizon}")));
    }
    model.check_length(start.len())?;
    let a = model.ism().alphabet_size() as u8;
    let mut seq = start.clone();
    let mut total = total_rate(model, &seq);
    let mut jumps = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = rng.sample(Open01);
        t += -u.ln() / total;
        if t >= horizon {
            break;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = None;
        'pick: for i in 0..seq.len() {
            let x = seq.get(i);
            for b in (0..a).filter(|&b| b != x) {
                let rate = model.ism().generator(i).rate(x, b) * model.phi(seq.bases(), i, b);
                chosen = Some((i, b));
                if target < rate {
                    break 'pick;
                }
                target -= rate;
            }
        }
        let (site, base) = chosen.expect("sequence has at least one site");
        let jump = Jump { time: t, site, base };
        total += total_rate_delta(model, &mut seq, &jump)?;
        jumps.push(jump);
    }
    Ok((Path { horizon, jumps }, seq))
}

/// Ordering weights over all permutations of the mutated sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingTable {
    /// Mutated sites, ascending.
    pub sites: Vec<usize>,
    /// Each ordering lists the sites in mutation order.
    pub orders: Vec<Vec<usize>>,
    pub phi: Vec<f64>,
    /// Sum of `phi` over all orderings.
    pub z: f64,
    pub phi_tilde: Vec<f64>,
    /// `r! * sum(phi_tilde^2)`.
    pub l2: f64,
    /// `sum phi_tilde ln(r! phi_tilde)`.
    pub kl: f64,
}

/// Multiplier product of the path that mutates each site of `order` once,
/// in that order.
pub fn ordering_weight(model: &DsmModel, pair: &SequencePair, order: &[usize]) -> f64 {
    let mut seq = pair.start().bases().to_vec();
    let mut phi = 1.0;
    for &s in order {
        let b = pair.end().get(s);
        phi *= model.phi(&seq, s, b);
        seq[s] = b;
    }
    phi
}

/// Enumerates `Sym(S)` for `r <= 8`.
pub fn enumerate_orderings(model: &DsmModel, pair: &SequencePair) -> Result<OrderingTable> {
    let sites = pair.mutated_sites().to_vec();
    let r = sites.len();
    if r > MAX_ENUMERATED_SITES {
        return Err(Error::TooManySites { r, limit: MAX_ENUMERATED_SITES });
    }
    model.check_length(pair.len())?;
    let orders: Vec<Vec<usize>> = sites.iter().copied().permutations(r).collect();
    let phi: Vec<f64> = orders.iter().map(|o| ordering_weight(model, pair, o)).collect();
    let z: f64 = phi.iter().sum();
    let phi_tilde: Vec<f64> = phi.iter().map(|p| p / z).collect();
    let count = orders.len() as f64;
    let l2 = count * phi_tilde.iter().map(|p| p * p).sum::<f64>();
    let kl = phi_tilde.iter().filter(|&&p| p > 0.0).map(|&p| p * (count * p).ln()).sum::<f64>().max(0.0);
    Ok(OrderingTable { sites, orders, phi, z, phi_tilde, l2, kl })
}
