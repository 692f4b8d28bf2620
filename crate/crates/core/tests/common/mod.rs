//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use multishot::{Matrix, TokenLayout};

/// Brute-force attention over explicit per-query key lists, using plain
/// `Vec<Vec<f64>>` arithmetic: weights `exp(s - max) / sum`.
pub fn brute_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    keys_for: impl Fn(usize) -> Vec<usize>,
    scale: f64,
) -> Vec<Vec<f64>> {
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let keys = keys_for(i);
            assert!(!keys.is_empty());
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| scale * qi.iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = w.iter().sum();
            let mut out = vec![0.0; v[0].len()];
            for (wj, &j) in w.iter().zip(&keys) {
                for (o, x) in out.iter_mut().zip(&v[j]) {
                    *o += wj / z * x;
                }
            }
            out
        })
        .collect()
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn max_diff(a: &Matrix, b: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (x, y) in a.row(i).iter().zip(row) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Shot index of each token by linear scan over shot lengths.
pub fn shot_ids(layout: &TokenLayout) -> Vec<usize> {
    layout
        .shots()
        .iter()
        .enumerate()
        .flat_map(|(i, s)| std::iter::repeat_n(i, s.frames * s.tokens_per_frame))
        .collect()
}

/// First-frame or first-and-last-frame summary membership, enumerated from
/// shot specs alone.
pub fn summary_flags(layout: &TokenLayout, first_and_last: bool) -> Vec<bool> {
    let mut flags = Vec::new();
    for s in layout.shots() {
        for f in 0..s.frames {
            let selected = f == 0 || (first_and_last && f == s.frames - 1);
            flags.extend(std::iter::repeat_n(selected, s.tokens_per_frame));
        }
    }
    flags
}

/// Keys visible to token `t` under sparse inter-shot attention, by definition.
pub fn sparse_keys(shot: &[usize], summary: &[bool], t: usize) -> Vec<usize> {
    (0..shot.len())
        .filter(|&k| shot[k] == shot[t] || summary[k])
        .collect()
}

/// All order-preserving one-to-one matchings between `p` and `g`; returns the
/// minimal `(sum of deviations) + penalty * unmatched` cost.
pub fn exhaustive_matching_cost(p: &[usize], g: &[usize], penalty: f64) -> f64 {
    fn go(p: &[usize], g: &[usize], penalty: f64) -> f64 {
        match (p.split_first(), g.split_first()) {
            (None, _) => g.len() as f64 * penalty,
            (_, None) => p.len() as f64 * penalty,
            (Some((&p0, pr)), Some((&g0, gr))) => {
                let a = p0.abs_diff(g0) as f64 + go(pr, gr, penalty);
                let b = penalty + go(pr, g, penalty);
                let c = penalty + go(p, gr, penalty);
                a.min(b).min(c)
            }
        }
    }
    go(p, g, penalty)
}

/// Enumerate explicitly: every pair of equal-size index subsets, paired in order.
pub fn enumerate_matchings(p: &[usize], g: &[usize], penalty: f64) -> f64 {
    let mut best = f64::INFINITY;
    for pm in 0u32..(1 << p.len()) {
        for gm in 0u32..(1 << g.len()) {
            if pm.count_ones() != gm.count_ones() {
                continue;
            }
            let ps: Vec<usize> = (0..p.len()).filter(|i| pm & (1 << i) != 0).map(|i| p[i]).collect();
            let gs: Vec<usize> = (0..g.len()).filter(|i| gm & (1 << i) != 0).map(|i| g[i]).collect();
            let dev: usize = ps.iter().zip(&gs).map(|(a, b)| a.abs_diff(*b)).sum();
            let unmatched = p.len() + g.len() - 2 * ps.len();
            best = best.min(dev as f64 + penalty * unmatched as f64);
        }
    }
    best
}
