//! Aggregates used by the studies: means, censored medians and Spearman rank
//! correlation with a permutation test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Median of event times where `None` means "never happened within the
/// budget" and sorts as +∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoredMedian {
    /// `None` when the median itself falls on a censored value.
    pub value: Option<f64>,
    pub n: usize,
    pub censored: usize,
}

impl CensoredMedian {
    pub fn is_censored(&self) -> bool {
        self.value.is_none()
    }
}

pub fn censored_median(times: &[Option<u64>]) -> CensoredMedian {
    let mut finite: Vec<f64> = times.iter().flatten().map(|&t| t as f64).collect();
    finite.sort_by(f64::total_cmp);
    let n = times.len();
    let censored = n - finite.len();
    let at = |i: usize| finite.get(i).copied();
    let value = match n {
        0 => None,
        _ if n % 2 == 1 => at(n / 2),
        _ => at(n / 2 - 1).zip(at(n / 2)).map(|(a, b)| (a + b) / 2.0),
    };
    CensoredMedian { value, n, censored }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho; `None` if either input is constant or the lengths differ
/// or are below two.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanTest {
    pub rho: f64,
    /// Two-sided permutation p-value, `(hits + 1) / (permutations + 1)`.
    pub p_value: f64,
    pub permutations: usize,
}

pub const MIN_PERMUTATIONS: usize = 10_000;

pub fn spearman_test(xs: &[f64], ys: &[f64], permutations: usize, seed: u64) -> Result<Option<SpearmanTest>> {
    if permutations < MIN_PERMUTATIONS {
        return Err(Error::Config(format!(
            "a permutation test needs at least {MIN_PERMUTATIONS} permutations"
        )));
    }
    let Some(rho) = spearman(xs, ys) else {
        return Ok(None);
    };
    let rx = average_ranks(xs);
    let mut ry = average_ranks(ys);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..permutations {
        ry.shuffle(&mut rng);
        let r = pearson(&rx, &ry).unwrap_or(0.0);
        // tolerance guards against rounding on exact ties with the observed value
        if r.abs() >= rho.abs() - 1e-12 {
            hits += 1;
        }
    }
    Ok(Some(SpearmanTest {
        rho,
        p_value: (hits + 1) as f64 / (permutations + 1) as f64,
        permutations,
    }))
}
