//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_rational::BigRational;
use thermhand::fusion::{Polarity, ScoreMatrix};
use thermhand::harness::{generate_dataset, Dataset, SyntheticConfig};

/// Direct quadruple-loop 2D DCT-II, orthonormal. Returns `c[v][u]` flattened.
pub fn naive_dct(f: &[f64], w: usize, h: usize) -> Vec<f64> {
    let alpha = |k: usize, n: usize| {
        if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += f[y * w + x]
                        * (PI * (2 * x + 1) as f64 * u as f64 / (2 * w) as f64).cos()
                        * (PI * (2 * y + 1) as f64 * v as f64 / (2 * h) as f64).cos();
                }
            }
            out[v * w + u] = alpha(u, w) * alpha(v, h) * acc;
        }
    }
    out
}

/// Exhaustive Otsu over all splits using exact rational arithmetic on bin
/// centers. Returns the lowest maximizing split (last bin of the lower class).
pub fn exhaustive_otsu(hist: &[u64]) -> Option<usize> {
    let bins = hist.len() as i64;
    let center =
        |b: usize| BigRational::new(BigInt::from(2 * b as i64 + 1), BigInt::from(2 * bins));
    let total: u64 = hist.iter().sum();
    let mut best: Option<(usize, BigRational)> = None;
    for t in 0..hist.len() - 1 {
        let n0: u64 = hist[..=t].iter().sum();
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let sum = |range: std::ops::Range<usize>| {
            range.fold(BigRational::from_integer(BigInt::from(0)), |acc, b| {
                acc + center(b) * BigRational::from_integer(BigInt::from(hist[b]))
            })
        };
        let mu0 = sum(0..t + 1) / BigRational::from_integer(BigInt::from(n0));
        let mu1 = sum(t + 1..hist.len()) / BigRational::from_integer(BigInt::from(n1));
        let w0 = BigRational::new(BigInt::from(n0), BigInt::from(total));
        let w1 = BigRational::new(BigInt::from(n1), BigInt::from(total));
        let d = &mu0 - &mu1;
        let var = w0 * w1 * &d * &d;
        if var == BigRational::from_integer(BigInt::from(0)) {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| var > *b) {
            best = Some((t, var));
        }
    }
    best.map(|(t, _)| t)
}

fn log_gauss(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - x * x / (2.0 * var)
}

/// `ln p(x|U) - ln p(x|E)` summed over `selected`, plus the prior term.
pub fn closed_form_g(diff: &[f64], si: &[f64], sp: &[f64], selected: &[usize], prior: f64) -> f64 {
    prior
        + selected
            .iter()
            .map(|&k| log_gauss(diff[k], 2.0 * (si[k] + sp[k])) - log_gauss(diff[k], 2.0 * si[k]))
            .sum::<f64>()
}

pub fn small_config(users: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_users: users,
        rng_seed: seed,
        ..SyntheticConfig::default()
    }
}

pub fn small_dataset(users: usize, seed: u64) -> Dataset {
    generate_dataset(&small_config(users, seed)).expect("valid config")
}

/// VIS and TH lower-is-better matrices with disjoint failures: VIS misses
/// probes 0..3, TH misses probes 5..8, each by a margin that an even blend
/// repairs. Returns `(vis, th, truth)`.
pub fn complementary_errors() -> (ScoreMatrix, ScoreMatrix, Vec<u32>) {
    let probes = 10;
    let classes = [1u32, 2, 3];
    let truth: Vec<u32> = (0..probes).map(|p| classes[p % 3]).collect();
    let build = |fails: std::ops::Range<usize>| {
        let mut scores = Vec::new();
        for (p, &t) in truth.iter().enumerate() {
            let wrong = if t == 1 { 2 } else { 1 };
            for &c in &classes {
                let s = if fails.contains(&p) {
                    if c == t {
                        0.3
                    } else if c == wrong {
                        0.0
                    } else {
                        1.0
                    }
                } else if c == t {
                    0.0
                } else {
                    1.0
                };
                scores.push(s);
            }
        }
        let ids = (0..probes).map(|p| format!("probe{p}")).collect();
        ScoreMatrix::new(ids, classes.to_vec(), scores, Polarity::LowerIsBetter).unwrap()
    };
    (build(0..3), build(5..8), truth)
}
