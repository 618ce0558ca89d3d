mod common;

use byzsgd::aggregation::*;
use byzsgd::{GradientVector, Vector};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labeled(vs: &[Vector]) -> Vec<(usize, Vec<f64>)> {
    vs.iter().enumerate().map(|(k, v)| (k + 1, v.as_slice().to_vec())).collect()
}

#[test]
fn pairwise_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vs: Vec<Vector> = (0..5).map(|_| random_vector(&mut rng, 3, 4.0)).collect();
    let input = AggregationInput::from_vectors(vs.clone(), 0).unwrap();
    let m = pairwise_sq_distances(&input);
    for i in 0..5 {
        assert_eq!(m.get(i, i), 0.0);
        for j in 0..5 {
            let oracle = brute_sq_dist(vs[i].as_slice(), vs[j].as_slice());
            assert!((m.get(i, j) - oracle).abs() <= 1e-12 * oracle.max(1e-300));
            assert_eq!(m.get(i, j).to_bits(), m.get(j, i).to_bits());
        }
    }
}

#[test]
fn average_and_linear_match_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let vs: Vec<Vector> = (0..4).map(|_| random_vector(&mut rng, 7, 3.0)).collect();
    let input = AggregationInput::from_vectors(vs.clone(), 0).unwrap();
    let avg = average(&input);
    let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..2.0) * if rng.random() { 1.0 } else { -1.0 }).collect();
    let lin = linear_combination(&input, &weights).unwrap();
    for k in 0..7 {
        let mut mean = 0.0;
        let mut comb = 0.0;
        for (v, w) in vs.iter().zip(&weights) {
            mean += v[k];
            comb += w * v[k];
        }
        mean /= 4.0;
        assert!((avg[k] - mean).abs() <= 1e-15 * mean.abs().max(1.0));
        assert!((lin[k] - comb).abs() <= 1e-12 * comb.abs().max(1.0));
    }
}

#[test]
fn multi_krum_matches_iterated_deletion() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vs: Vec<Vector> = (0..9).map(|_| random_vector(&mut rng, 4, 1.0)).collect();
    let input = AggregationInput::from_vectors(vs.clone(), 1).unwrap();
    let got = multi_krum_select(&input, 3).unwrap();
    let (ids, mean) = brute_multi_krum(&labeled(&vs), 1, 3);
    assert_eq!(got.selected_ids, ids);
    assert_eq!(got.output.as_slice(), mean.as_slice());
}

#[test]
fn eta_asymptotics() {
    for n in 3..500 {
        assert!((eta::<f64>(n, 0).unwrap() / (n as f64).sqrt() - 2f64.sqrt()).abs() < 1e-14);
    }
    for n in 8..3000 {
        let e: f64 = eta(n, n / 4).unwrap();
        assert!(e / n as f64 <= 1.0, "n={n}: eta/n = {}", e / n as f64);
    }
    // eta^2 / 2 = n - f + f(1 + f) + (f^3 + 2f^2) / (n - 2f - 2), so eta grows
    // with n once (n - 2f - 2)^2 >= f^2 (f + 2). For f <= 4 that is implied by
    // n >= 4f + 4; for larger f it is not (eta(25, 5) < eta(24, 5)).
    for f in 0..=4 {
        for n in (4 * f + 4)..(4 * f + 400) {
            let (a, b): (f64, f64) = (eta(n, f).unwrap(), eta(n + 1, f).unwrap());
            assert!(b >= a, "eta not increasing at n={n}, f={f}");
        }
    }
    for f in 0..40usize {
        let start = 2 * f + 2 + (f as f64 * ((f + 2) as f64).sqrt()).ceil() as usize;
        for n in start.max(2 * f + 3)..start + 400 {
            let (a, b): (f64, f64) = (eta(n, f).unwrap(), eta(n + 1, f).unwrap());
            assert!(b >= a, "eta not increasing at n={n}, f={f}");
        }
    }
    let (a, b): (f64, f64) = (eta(24, 5).unwrap(), eta(25, 5).unwrap());
    assert!(b < a);
}

#[test]
fn single_precision_agrees_on_separated_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vs: Vec<Vector> = (0..9).map(|k| random_vector(&mut rng, 3, 1.0).scale(if k == 8 { 1e3 } else { 1.0 })).collect();
    let vs32: Vec<GradientVector<f32>> = vs
        .iter()
        .map(|v| GradientVector::new(v.as_slice().iter().map(|&c| c as f32).collect()).unwrap())
        .collect();
    let a = krum_select(&AggregationInput::from_vectors(vs, 2).unwrap()).unwrap();
    let b = krum_select(&AggregationInput::from_vectors(vs32, 2).unwrap()).unwrap();
    assert_eq!(a.selected_ids, b.selected_ids);
}

/// Small integer coordinates keep every sum, difference and square exact.
fn integer_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (5usize..12, 1usize..5).prop_flat_map(|(n, d)| {
        let max_f = (n - 3) / 2;
        (
            prop::collection::vec(prop::collection::vec((-50i32..50).prop_map(f64::from), d), n),
            0..=max_f,
        )
    })
}

fn to_input(rows: &[Vec<f64>], f: usize) -> Input {
    AggregationInput::from_vectors(rows.iter().map(|r| vector(r)).collect(), f).unwrap()
}

type Input = AggregationInput<f64>;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn krum_scores_match_brute_force((rows, f) in integer_instance()) {
        let input = to_input(&rows, f);
        let got = krum_scores(&input).unwrap();
        let entries: Vec<(usize, Vec<f64>)> = rows.iter().cloned().enumerate().map(|(k, r)| (k + 1, r)).collect();
        for (g, (id, score, neigh)) in got.iter().zip(brute_scores(&entries, f)) {
            prop_assert_eq!(g.worker_id, id);
            prop_assert_eq!(g.score.to_bits(), score.to_bits());
            prop_assert_eq!(&g.neighbor_ids, &neigh);
            prop_assert!(!g.neighbor_ids.contains(&g.worker_id));
        }
    }

    #[test]
    fn selection_returns_an_input_vector((rows, f) in integer_instance()) {
        let input = to_input(&rows, f);
        for sel in [krum_select(&input).unwrap(), sq_dist_medoid_select(&input)] {
            let id = sel.selected_ids[0];
            prop_assert_eq!(sel.output.as_slice(), rows[id - 1].as_slice());
        }
        let m = 1 + (rows.len() - 2 * f - 3).min(3).saturating_sub(1);
        if rows.len() > m + 2 * f + 2 {
            let sel = multi_krum_select(&input, m).unwrap();
            let mut ids = sel.selected_ids.clone();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), m);
        }
    }

    #[test]
    fn translation_equivariance((rows, f) in integer_instance(), shift in prop::collection::vec(-20i32..20, 4)) {
        let d = rows[0].len();
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().zip(&shift).map(|(x, c)| x + f64::from(*c)).collect())
            .collect();
        let a = krum_select(&to_input(&rows, f)).unwrap();
        let b = krum_select(&to_input(&shifted, f)).unwrap();
        prop_assert_eq!(&a.selected_ids, &b.selected_ids);
        let expected: Vec<f64> = a.output.as_slice().iter().zip(&shift[..d]).map(|(x, c)| x + f64::from(*c)).collect();
        prop_assert_eq!(b.output.as_slice(), expected.as_slice());
    }

    #[test]
    fn positive_scaling_keeps_the_index((rows, f) in integer_instance(), s in 1u32..9) {
        let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * f64::from(s)).collect()).collect();
        let a = krum_select(&to_input(&rows, f)).unwrap();
        let b = krum_select(&to_input(&scaled, f)).unwrap();
        prop_assert_eq!(a.selected_ids, b.selected_ids);
    }

    #[test]
    fn permutation_keeps_the_vector_when_unique((rows, f) in integer_instance(), seed in any::<u64>()) {
        let input = to_input(&rows, f);
        let scores = krum_scores(&input).unwrap();
        let min = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
        prop_assume!(scores.iter().filter(|s| s.score == min).count() == 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rows.len();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut labels: Vec<usize> = (1..=n).collect();
        for i in (1..n).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let entries = order.iter().zip(&labels).map(|(&pos, &id)| (id, vector(&rows[pos]))).collect();
        let permuted = AggregationInput::new(entries, f).unwrap();
        let a = krum_select(&input).unwrap();
        let b = krum_select(&permuted).unwrap();
        prop_assert_eq!(a.output, b.output);
    }
}
