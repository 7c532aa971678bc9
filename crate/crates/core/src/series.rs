//! Poisson weights and small dense matrices for uniformization series.

/// Tail tolerance used for every uniformization series unless stated otherwise.
pub const SERIES_TAIL: f64 = 1e-14;

/// Smallest `m` such that the Chernoff bound on `P(Poisson(rate) > m)` is
/// below `tol`.
///
/// For `k > rate`, `P(X >= k) <= exp(-rate) (e rate / k)^k`.
pub fn poisson_cutoff(rate: f64, tol: f64) -> usize {
    assert!(rate >= 0.0 && rate.is_finite(), "Poisson rate must be finite and >= 0");
    assert!(tol > 0.0 && tol < 1.0);
    if rate == 0.0 {
        return 0;
    }
    let log_tol = tol.ln();
    let mut k = rate.floor() as usize + 1;
    loop {
        let kf = k as f64;
        let log_bound = -rate + kf * (1.0 + rate.ln() - kf.ln());
        if log_bound < log_tol {
            return k - 1;
        }
        k += 1;
    }
}

/// `ln P(Poisson(rate) = m)` for `m = 0..=cutoff`.
pub fn poisson_log_pmf(rate: f64, cutoff: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(cutoff + 1);
    out.push(-rate);
    if rate == 0.0 {
        out.resize(cutoff + 1, f64::NEG_INFINITY);
        return out;
    }
    let log_rate = rate.ln();
    for m in 1..=cutoff {
        let prev = out[m - 1];
        out.push(prev + log_rate - (m as f64).ln());
    }
    out
}

/// Row-major square matrix; only ever a x a for a small alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Square {
    dim: usize,
    data: Vec<f64>,
}

impl Square {
    pub fn zeros(dim: usize) -> Self {
        Square { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Square::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut m = Square::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "matrix must be square");
            m.data[i * dim..(i + 1) * dim].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn mul(&self, other: &Square) -> Square {
        let n = self.dim;
        let mut out = Square::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Square, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Square) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Numerically careful `ln(sum(exp(x)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    log_sum_exp(&[a, b])
}
