#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use vcsoup_core::data::{generate_universe, PreferenceDataset, PreferencePair, Universe};
use vcsoup_core::policy::TabularPolicy;
use vcsoup_core::rng::{seeded, DetRng};

pub fn rng(seed: u64) -> DetRng {
    seeded(seed)
}

pub fn small_universe(rng: &mut DetRng) -> Universe {
    let p = rng.random_range(1..6);
    let r = rng.random_range(2..6);
    let d = rng.random_range(1..5);
    generate_universe(p, r, d, rng.random()).unwrap()
}

pub fn random_pairs(u: &Universe, n: usize, rng: &mut DetRng) -> PreferenceDataset {
    let pairs = (0..n)
        .map(|_| {
            let x = rng.random_range(0..u.num_prompts);
            let a = rng.random_range(0..u.responses_per_prompt);
            let mut b = rng.random_range(0..u.responses_per_prompt - 1);
            if b >= a {
                b += 1;
            }
            PreferencePair::new(x, a, b)
        })
        .collect();
    PreferenceDataset::new("v", pairs)
}

pub fn random_policy(u: &Universe, scale: f64, rng: &mut DetRng) -> TabularPolicy {
    let n = u.num_prompts * u.responses_per_prompt;
    let logits = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    TabularPolicy::from_logits(u.num_prompts, u.responses_per_prompt, logits).unwrap()
}

pub fn normal_vec(n: usize, rng: &mut DetRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Plain cosine with the all-ones vector.
pub fn generic_cosine_with_ones(g: &[f64]) -> f64 {
    let ones = vec![1.0; g.len()];
    let dot: f64 = g.iter().zip(&ones).map(|(a, b)| a * b).sum();
    let na = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = ones.iter().map(|b| b * b).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|k| {
            let o = x[k];
            x[k] = o + h;
            let up = f(&x);
            x[k] = o - h;
            let down = f(&x);
            x[k] = o;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Random PSD matrix `BᵀB / dim` with `B` standard normal.
pub fn random_psd(dim: usize, rng: &mut DetRng) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..dim).map(|_| normal_vec(dim, rng)).collect();
    (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| (0..dim).map(|k| b[k][i] * b[k][j]).sum::<f64>() / dim as f64)
                .collect()
        })
        .collect()
}

/// Brute-force Pareto member indices.
pub fn brute_force_front(scores: &[Vec<f64>]) -> Vec<usize> {
    (0..scores.len())
        .filter(|&i| {
            !(0..scores.len()).any(|j| {
                j != i
                    && scores[j].iter().zip(&scores[i]).all(|(a, b)| a >= b)
                    && scores[j].iter().zip(&scores[i]).any(|(a, b)| a > b)
            })
        })
        .collect()
}
