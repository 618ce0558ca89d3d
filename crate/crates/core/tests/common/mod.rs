//! Independent brute-force reimplementations used as test oracles. Nothing
//! here calls into the aggregation module.

#![allow(dead_code)]

use byzsgd::{GradientVector, Vector};
use rand::Rng;

pub fn vector(c: &[f64]) -> Vector {
    GradientVector::new(c.to_vec()).unwrap()
}

pub fn random_vector<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vector {
    vector(&(0..d).map(|_| rng.random_range(-scale..scale)).collect::<Vec<_>>())
}

/// Element-wise squared distance, plain loop.
pub fn brute_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s
}

/// Krum score by repeated minimum extraction over `(id, vector)` entries:
/// the closest remaining neighbor (smaller id on ties) is added first.
pub fn brute_scores(entries: &[(usize, Vec<f64>)], f: usize) -> Vec<(usize, f64, Vec<usize>)> {
    let k = entries.len() - f - 2;
    let mut out = Vec::new();
    for (i, (id_i, vi)) in entries.iter().enumerate() {
        let mut used = vec![false; entries.len()];
        used[i] = true;
        let mut score = 0.0;
        let mut neighbors = Vec::new();
        for _ in 0..k {
            let mut best: Option<(f64, usize, usize)> = None;
            for (j, (id_j, vj)) in entries.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let d = brute_sq_dist(vi, vj);
                let better = match best {
                    None => true,
                    Some((bd, bid, _)) => d < bd || (d == bd && *id_j < bid),
                };
                if better {
                    best = Some((d, *id_j, j));
                }
            }
            let (d, id, j) = best.unwrap();
            used[j] = true;
            score += d;
            neighbors.push(id);
        }
        out.push((*id_i, score, neighbors));
    }
    out
}

/// Winner id of Krum over `entries` (smallest score, then smallest id).
pub fn brute_krum(entries: &[(usize, Vec<f64>)], f: usize) -> usize {
    let scores = brute_scores(entries, f);
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.1 < best.1 || (s.1 == best.1 && s.0 < best.0) {
            best = s;
        }
    }
    best.0
}

/// m-Krum by literally re-running Krum and deleting the winner.
pub fn brute_multi_krum(entries: &[(usize, Vec<f64>)], f: usize, m: usize) -> (Vec<usize>, Vec<f64>) {
    let mut remaining = entries.to_vec();
    let mut winners = Vec::new();
    let mut sum: Option<Vec<f64>> = None;
    for _ in 0..m {
        let w = brute_krum(&remaining, f);
        let pos = remaining.iter().position(|(id, _)| *id == w).unwrap();
        let (_, v) = remaining.remove(pos);
        sum = Some(match sum {
            None => v,
            Some(mut s) => {
                for k in 0..s.len() {
                    s[k] += v[k];
                }
                s
            }
        });
        winners.push(w);
    }
    let mut mean = sum.unwrap();
    if m > 1 {
        for x in &mut mean {
            *x /= m as f64;
        }
    }
    (winners, mean)
}

pub fn eta_direct(n: usize, f: usize) -> f64 {
    let (n, f) = (n as f64, f as f64);
    (2.0 * (n - f + (f * (n - f - 2.0) + f * f * (n - f - 1.0)) / (n - 2.0 * f - 2.0))).sqrt()
}
