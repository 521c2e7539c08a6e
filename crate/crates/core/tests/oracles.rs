mod common;

use approx::assert_relative_eq;
use common::*;
use nalgebra::DMatrix;
use rand::Rng;
use vcsoup_core::consistency::{vc_score, ConsistencyRecord, FilterConfig};
use vcsoup_core::data::PreferencePair;
use vcsoup_core::pareto::{hypervolume, non_dominated_mask, pareto_filter};
use vcsoup_core::policy::{dpo_gradient, dpo_loss, expected_reward_from_table, sample_response_with, TabularPolicy};
use vcsoup_core::reward::{bt_gradient, bt_loss};
use vcsoup_core::soup::{merge, simplex_grid, CandidateModel, WeightVector};
use vcsoup_core::theory::{estimate_lh, merging_gap_scan, quadratic_gap_closed_form, LhConfig, Objective, Quadratic};
use vcsoup_core::{ValueVectorF64, WeightVectorF64};

#[test]
fn vc_matches_generic_cosine() {
    let mut r = rng(11);
    for &n in &[2usize, 3, 5] {
        for _ in 0..20_000 {
            let g = normal_vec(n, &mut r);
            let vc = vc_score(&g).unwrap();
            assert!((vc - generic_cosine_with_ones(&g)).abs() < 1e-12, "{g:?}");
        }
    }
}

#[test]
fn vc_quadrant_geometry_n2() {
    let mut r = rng(12);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..50_000 {
        let g = normal_vec(2, &mut r);
        let vc = vc_score(&g).unwrap();
        let angle = g[1].atan2(g[0]);
        let in_open_quadrant = angle > 0.0 && angle < std::f64::consts::FRAC_PI_2;
        assert_eq!(vc > half, in_open_quadrant, "{g:?}");
    }
    // boundary rays land exactly on the threshold
    for c in [1e-9, 0.3, 7.0, 1e9] {
        assert_eq!(vc_score(&[c, 0.0]).unwrap(), half);
        assert_eq!(vc_score(&[0.0, c]).unwrap(), half);
    }
}

fn record(g: [f64; 2]) -> ConsistencyRecord {
    ConsistencyRecord {
        pair: PreferencePair::new(0, 0, 1),
        raw_gaps: g.to_vec(),
        norm_gaps: g.to_vec(),
        vc: vc_score(&g).unwrap(),
        degenerate: g == [0.0, 0.0],
    }
}

#[test]
fn threshold_geometry() {
    let mut r = rng(13);
    let strict = FilterConfig::new(std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let zero = FilterConfig::new(0.0).unwrap();
    let loose = FilterConfig::new(-std::f64::consts::FRAC_1_SQRT_2).unwrap();
    for _ in 0..50_000 {
        let g = normal_vec(2, &mut r);
        let rec = record([g[0], g[1]]);
        if strict.retains(&rec) {
            assert!(g[0] >= 0.0 && g[1] >= 0.0, "{g:?}");
        }
        if zero.retains(&rec) {
            assert!(g[0] + g[1] >= -1e-15, "{g:?}");
        }
        if g[0] < 0.0 && g[1] < 0.0 {
            assert!(!loose.retains(&rec), "{g:?}");
        }
    }
}

#[test]
fn dpo_gradient_matches_finite_differences() {
    let mut r = rng(14);
    for trial in 0..30 {
        let u = small_universe(&mut r);
        let n = r.random_range(1..25);
        let ds = random_pairs(&u, n, &mut r);
        let reference = random_policy(&u, 1.0, &mut r);
        let policy = random_policy(&u, 1.0, &mut r);
        let beta = [0.05, 0.1, 1.0][trial % 3];
        let [p, k] = policy.shape();
        let f = |z: &[f64]| {
            let pi = TabularPolicy::from_logits(p, k, z.to_vec()).unwrap();
            dpo_loss(&pi, &reference, &ds, beta).unwrap()
        };
        let fd = central_diff(f, policy.logits(), 1e-5);
        let g = dpo_gradient(&policy, &reference, &ds, beta).unwrap();
        assert!(rel_err(&g, &fd) < 1e-6, "trial {trial}: {}", rel_err(&g, &fd));
    }
}

#[test]
fn bt_gradient_matches_finite_differences() {
    let mut r = rng(15);
    for _ in 0..30 {
        let d = r.random_range(1..6);
        let diffs: Vec<Vec<f64>> = (0..r.random_range(1..30)).map(|_| normal_vec(d, &mut r)).collect();
        let w = normal_vec(d, &mut r);
        let l2 = r.random_range(0.0..0.1);
        let fd = central_diff(|w| bt_loss(w, &diffs, l2), &w, 1e-5);
        let g = bt_gradient(&w, &diffs, l2);
        assert!(rel_err(&g, &fd) < 1e-6);
    }
}

#[test]
fn expected_reward_matches_monte_carlo() {
    let mut r = rng(16);
    for _ in 0..5 {
        let u = small_universe(&mut r);
        let policy = random_policy(&u, 1.5, &mut r);
        let table: Vec<Vec<f64>> = (0..u.num_prompts)
            .map(|_| normal_vec(u.responses_per_prompt, &mut r))
            .collect();
        let exact = expected_reward_from_table(&policy, &table, &u.prompt_weights);
        let samples = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut draw = rng(r.random());
        for _ in 0..samples {
            // uniform prompt weights
            let x = draw.random_range(0..u.num_prompts);
            let y = sample_response_with(&policy, x, &mut draw).unwrap();
            let v = table[x][y];
            sum += v;
            sq += v * v;
        }
        let mean = sum / samples as f64;
        let se = ((sq / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
    }
}

#[test]
fn merge_at_vertex_reproduces_vector() {
    let mut r = rng(17);
    let u = small_universe(&mut r);
    let reference = random_policy(&u, 1.0, &mut r);
    let shape = reference.shape();
    let thetas: Vec<ValueVectorF64> = (0..3)
        .map(|_| ValueVectorF64::new(shape, normal_vec(shape[0] * shape[1], &mut r)).unwrap())
        .collect();
    for i in 0..3 {
        let m = merge(&reference, &thetas, &WeightVector::vertex(3, i).unwrap()).unwrap();
        for (k, z) in m.logits().iter().enumerate() {
            assert!((z - (reference.logits()[k] + thetas[i].delta[k])).abs() <= 1e-12);
        }
    }
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn simplex_grid_counts() {
    for (n, m) in [(2usize, 4usize), (3, 2), (3, 5), (4, 3), (1, 7)] {
        let g: Vec<WeightVectorF64> = simplex_grid(n, 1.0 / m as f64).unwrap();
        assert_eq!(g.len(), binom(m + n - 1, n - 1), "n={n} m={m}");
    }
}

#[test]
fn pareto_matches_brute_force() {
    let mut r = rng(18);
    for trial in 0..100 {
        let n = 2 + trial % 2;
        let m = r.random_range(1..=200);
        // coarse values produce ties and duplicates
        let scores: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| r.random_range(0..12) as f64).collect())
            .collect();
        let cands: Vec<CandidateModel> = scores
            .iter()
            .map(|s| CandidateModel {
                weights: WeightVector::vertex(n, 0).unwrap(),
                scores: s.clone(),
            })
            .collect();
        let f = pareto_filter(&cands).unwrap();
        assert_eq!(f.member_indices, brute_force_front(&scores));
        let mask = non_dominated_mask(&scores).unwrap();
        assert_eq!(f.mask(m), mask);
    }
}

#[test]
fn hypervolume_matches_box_counting() {
    assert_eq!(
        hypervolume(&[vec![2.0, 1.0], vec![1.0, 2.0]], &[0.0, 0.0]).unwrap(),
        3.0
    );
    let mut r = rng(19);
    for n in [2usize, 3] {
        for _ in 0..5 {
            let pts: Vec<Vec<f64>> = (0..r.random_range(1..8))
                .map(|_| (0..n).map(|_| r.random_range(0.0..1.0)).collect())
                .collect();
            let reference = vec![0.0; n];
            let hv = hypervolume(&pts, &reference).unwrap();
            let samples = 200_000;
            let mut hits = 0usize;
            for _ in 0..samples {
                let z: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
                if pts.iter().any(|p| p.iter().zip(&z).all(|(a, b)| b <= a)) {
                    hits += 1;
                }
            }
            let p = hits as f64 / samples as f64;
            let se = (p * (1.0 - p) / samples as f64).sqrt().max(1e-6);
            assert!((p - hv).abs() < 5.0 * se, "n={n} hv={hv} mc={p}");
        }
    }
}

#[test]
fn quadratic_gap_scan_matches_closed_form() {
    let mut r = rng(20);
    for _ in 0..50 {
        let dim = r.random_range(1..=20);
        let h = random_psd(dim, &mut r);
        let q = Quadratic::new(h.clone(), normal_vec(dim, &mut r), r.random()).unwrap();
        let (a, b) = (normal_vec(dim, &mut r), normal_vec(dim, &mut r));
        let lh = estimate_lh(&q, &a, &b, 3, &LhConfig::default()).unwrap();
        let rep = merging_gap_scan(&q, &a, &b, 21, Some(lh)).unwrap();
        for (k, &lam) in rep.lambdas.iter().enumerate() {
            let exact = quadratic_gap_closed_form(&h, &a, &b, lam).unwrap();
            assert!((rep.gaps[k] - exact).abs() < 1e-10);
            assert!(rep.gaps[k] <= 1e-12);
        }
        assert_eq!(rep.bound_holds(1e-8), Some(true));
    }
}

#[test]
fn lh_matches_spectral_norm() {
    let mut r = rng(21);
    for _ in 0..20 {
        let dim = r.random_range(2..=12);
        let h = random_psd(dim, &mut r);
        let q: Quadratic = Quadratic::pure(h.clone()).unwrap();
        let m = DMatrix::from_fn(dim, dim, |i, j| h[i][j]);
        let top = m
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let (a, b) = (normal_vec(dim, &mut r), normal_vec(dim, &mut r));
        let quick = estimate_lh(&q, &a, &b, 2, &LhConfig::default()).unwrap();
        assert!(quick <= top * (1.0 + 1e-6));
        let cfg = LhConfig {
            power_iterations: 2000,
            ..LhConfig::default()
        };
        let long = estimate_lh(&q, &a, &b, 2, &cfg).unwrap();
        assert_relative_eq!(long, top, max_relative = 1e-3);
        assert!(long >= quick * (1.0 - 1e-9));
    }
}

#[test]
fn objective_default_gradient_is_central_difference() {
    struct Cubic;
    impl Objective<f64> for Cubic {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, w: &[f64]) -> vcsoup_core::Result<f64> {
            Ok(w[0].powi(3) + 2.0 * w[0] * w[1])
        }
    }
    let g = Cubic.gradient(&[1.0, 2.0]).unwrap();
    assert_relative_eq!(g[0], 7.0, max_relative = 1e-8);
    assert_relative_eq!(g[1], 2.0, max_relative = 1e-8);
}
