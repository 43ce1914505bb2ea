use kernelnet::active::{covering_radius, margin, select_kcenter, select_margin, select_random, PoolState};
use kernelnet::matrix::{norm, Matrix};
use kernelnet::rng::{bounded, seeded, shuffle, standard_normal, Rng};
use proptest::prelude::*;

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| standard_normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_pool(seed: u64, n: usize, classes: usize, labeled: usize, budget: usize) -> PoolState {
    let mut rng = seeded(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut rng, &mut idx);
    PoolState {
        embeddings: random_matrix(&mut rng, n, 3),
        prediction_scores: random_matrix(&mut rng, n, classes),
        labeled_indices: idx[..labeled].to_vec(),
        budget,
    }
}

fn chordal(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    a.iter().zip(b).map(|(x, y)| (x / na - y / nb).powi(2)).sum::<f64>().sqrt()
}

/// Smallest covering radius over all center sets of size `k` containing `fixed`.
fn optimal_radius(points: &Matrix, fixed: &[usize], k: usize) -> f64 {
    let n = points.rows();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k || fixed.iter().any(|&f| mask & (1 << f) == 0) {
            continue;
        }
        let centers: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        best = best.min(covering_radius(points, &centers, chordal));
    }
    best
}

fn assert_valid_selection(state: &PoolState, picked: &[usize]) {
    assert_eq!(picked.len(), state.budget);
    let mut seen = vec![false; state.len()];
    for &i in picked {
        assert!(!seen[i] && !state.labeled_indices.contains(&i));
        seen[i] = true;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn margin_matches_full_sort(seed in any::<u64>(), n in 2usize..40, classes in 2usize..6) {
        let mut rng = seeded(seed);
        let labeled = bounded(&mut rng, n / 2);
        let budget = bounded(&mut rng, n - labeled + 1);
        let state = random_pool(seed, n, classes, labeled, budget);
        let mut rows: Vec<(f64, usize)> = (0..n)
            .filter(|i| !state.labeled_indices.contains(i))
            .map(|i| {
                let mut s = state.prediction_scores.row(i).to_vec();
                s.sort_by(|a, b| b.total_cmp(a));
                (s[0] - s[1], i)
            })
            .collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<usize> = rows.iter().take(budget).map(|r| r.1).collect();
        prop_assert_eq!(select_margin(&state).unwrap(), expected);
    }

    #[test]
    fn margin_invariant_to_row_shift_and_common_scale(seed in any::<u64>(), n in 2usize..30, scale in 0.01f64..50.0) {
        let state = random_pool(seed, n, 4, 0, n / 2);
        let mut rng = seeded(seed ^ 1);
        let mut moved = state.clone();
        for r in 0..n {
            let shift = 10.0 * standard_normal(&mut rng);
            moved.prediction_scores.row_mut(r).iter_mut().for_each(|v| *v = scale * *v + shift);
        }
        prop_assert_eq!(select_margin(&state).unwrap(), select_margin(&moved).unwrap());
    }

    #[test]
    fn samplers_return_distinct_unlabeled_indices(seed in any::<u64>(), n in 3usize..30) {
        let mut rng = seeded(seed);
        let labeled = 1 + bounded(&mut rng, n / 2);
        let budget = bounded(&mut rng, n - labeled + 1);
        let state = random_pool(seed, n, 3, labeled, budget);
        assert_valid_selection(&state, &select_random(&state, seed).unwrap());
        assert_valid_selection(&state, &select_margin(&state).unwrap());
        assert_valid_selection(&state, &select_kcenter(&state).unwrap());
    }

    #[test]
    fn kcenter_radius_never_grows(seed in any::<u64>(), n in 3usize..30) {
        let state = random_pool(seed, n, 2, 1, n - 1);
        let picked = select_kcenter(&state).unwrap();
        let mut centers = state.labeled_indices.clone();
        let mut last = covering_radius(&state.embeddings, &centers, chordal);
        for p in picked {
            centers.push(p);
            let r = covering_radius(&state.embeddings, &centers, chordal);
            prop_assert!(r <= last + 1e-12);
            last = r;
        }
    }
}

#[test]
fn kcenter_is_within_twice_the_optimal_radius() {
    // chordal distance is a metric and orders pairs exactly as 1 - cos does
    for seed in 0..200u64 {
        let mut rng = seeded(seed);
        let n = 4 + bounded(&mut rng, 9);
        let labeled = 1 + bounded(&mut rng, 3.min(n - 2));
        let budget = 1 + bounded(&mut rng, n - labeled - 1);
        let state = random_pool(seed, n, 2, labeled, budget);
        let mut centers = state.labeled_indices.clone();
        centers.extend(select_kcenter(&state).unwrap());
        let greedy = covering_radius(&state.embeddings, &centers, chordal);
        let opt = optimal_radius(&state.embeddings, &state.labeled_indices, labeled + budget);
        assert!(greedy <= 2.0 * opt + 1e-12, "seed {seed}: {greedy} vs {opt}");
        if labeled == 1 {
            let free = optimal_radius(&state.embeddings, &[], 1 + budget);
            assert!(greedy <= 2.0 * free + 1e-12, "seed {seed}: {greedy} vs {free}");
        }
    }
}

#[test]
fn margin_of_a_row() {
    assert!((margin(&[0.1, 0.7, 0.4]) - 0.3).abs() < 1e-15);
    assert_eq!(margin(&[2.0, 2.0]), 0.0);
}
