//! Diagonal-covariance Gaussian mixtures fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MixtureComponent<T> {
    pub weight: T,
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit<T> {
    pub components: Vec<MixtureComponent<T>>,
    pub log_likelihood: T,
    /// Log-likelihood after every EM iteration.
    pub trace: Vec<T>,
    /// A component collapsed onto fewer than two effective points.
    pub degenerate: bool,
}

impl<T: Real> GmmFit<T> {
    /// Maximum-responsibility component of every row (0-based, ties to the lower index).
    pub fn assign(&self, data: &[Vec<T>]) -> Vec<usize> {
        data.iter()
            .map(|x| {
                let logs = component_logs(&self.components, x);
                let mut best = 0;
                for (k, &l) in logs.iter().enumerate() {
                    if l > logs[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn log_normal_diag<T: Real>(x: &[T], mean: &[T], var: &[T]) -> T {
    let ln2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let half = T::lit(0.5);
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((&xi, &m), &v)| -half * (ln2pi + v.ln() + (xi - m) * (xi - m) / v))
        .sum()
}

fn component_logs<T: Real>(comps: &[MixtureComponent<T>], x: &[T]) -> Vec<T> {
    comps
        .iter()
        .map(|c| c.weight.ln() + log_normal_diag(x, &c.mean, &c.variance))
        .collect()
}

fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// k-means++ style seeding: first centre uniform, then proportional to squared distance.
fn seed_centres<T: Real>(data: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = data.len();
    let mut centres = vec![data[rng.random_range(0..n)].clone()];
    while centres.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|x| {
                centres
                    .iter()
                    .map(|c| x.iter().zip(c).map(|(&a, &b)| ((a - b) * (a - b)).as_f64()).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centres.push(data[pick].clone());
    }
    centres
}

/// One EM run from a seeded initialization.
pub fn fit_gmm<T: Real>(data: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> GmmFit<T> {
    let n = data.len();
    let d = data.first().map_or(0, |r| r.len());
    let nt = T::from_usize_lossy(n);
    let floor = T::lit(VARIANCE_FLOOR);
    let grand: Vec<T> = (0..d).map(|j| data.iter().map(|x| x[j]).sum::<T>() / nt).collect();
    let spread: Vec<T> = (0..d)
        .map(|j| (data.iter().map(|x| (x[j] - grand[j]) * (x[j] - grand[j])).sum::<T>() / nt).max(floor))
        .collect();
    let mut comps: Vec<MixtureComponent<T>> = seed_centres(data, k, rng)
        .into_iter()
        .map(|mean| MixtureComponent {
            weight: T::one() / T::from_usize_lossy(k),
            mean,
            variance: spread.clone(),
        })
        .collect();

    let mut trace = Vec::new();
    let mut resp = vec![vec![T::zero(); k]; n];
    let mut ll_prev = T::neg_infinity();
    for _ in 0..max_iter {
        // E step.
        let mut ll = T::zero();
        for (i, x) in data.iter().enumerate() {
            let logs = component_logs(&comps, x);
            let lse = log_sum_exp(&logs);
            ll += lse;
            for c in 0..k {
                resp[i][c] = (logs[c] - lse).exp();
            }
        }
        trace.push(ll);
        if !ll.is_finite() {
            break;
        }
        let tol = T::lit(1e-10) * ll.abs().max(T::one());
        if ll - ll_prev <= tol && trace.len() > 1 {
            break;
        }
        ll_prev = ll;
        // M step.
        for (c, comp) in comps.iter_mut().enumerate() {
            let nk: T = resp.iter().map(|r| r[c]).sum();
            if nk <= T::zero() {
                comp.weight = T::zero();
                continue;
            }
            comp.weight = nk / nt;
            for j in 0..d {
                comp.mean[j] = resp.iter().zip(data).map(|(r, x)| r[c] * x[j]).sum::<T>() / nk;
            }
            for j in 0..d {
                let m = comp.mean[j];
                comp.variance[j] = (resp
                    .iter()
                    .zip(data)
                    .map(|(r, x)| r[c] * (x[j] - m) * (x[j] - m))
                    .sum::<T>()
                    / nk)
                    .max(floor);
            }
        }
    }

    let log_likelihood = *trace.last().unwrap_or(&T::neg_infinity());
    let two = T::lit(2.0);
    let degenerate = !log_likelihood.is_finite()
        || (0..k).any(|c| resp.iter().map(|r| r[c]).sum::<T>() < two);
    GmmFit {
        components: comps,
        log_likelihood,
        trace,
        degenerate,
    }
}

/// Free parameters of a `k`-component diagonal mixture in `d` dimensions.
pub fn parameter_count(k: usize, d: usize) -> usize {
    k * (2 * d + 1) - 1
}

pub fn bic<T: Real>(log_likelihood: T, k: usize, d: usize, n: usize) -> T {
    T::from_usize_lossy(parameter_count(k, d)) * T::from_usize_lossy(n).ln() - T::lit(2.0) * log_likelihood
}

/// Independent stream for restart `r` of the `k`-component fit.
pub fn restart_rng(seed: u64, k: usize, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((k as u64) << 32) | r as u64);
    rng
}
