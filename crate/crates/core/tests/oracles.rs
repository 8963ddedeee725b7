//! Independent reference computations checked against the library.

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xal_core::bench::{horizontal_gap, mcc, Confusion};
use xal_core::corpus::{bin_tertiles, ItemVector, Level};
use xal_core::kmedoids::fit;
use xal_core::labelspread::spread;
use xal_core::prefmodel::{loss, loss_and_gradient, rank, train, Origin, PreferenceModel, TrainParams, TrainingSet};
use xal_core::sampler::{least_confidence, margin_score, normalized_entropy};
use xal_core::similarity::{affinity, jaccard_distance, Dissimilarity};

fn random_items(rng: &mut ChaCha8Rng, n: usize, dim: usize, max_bits: usize) -> Vec<ItemVector> {
    (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=max_bits);
            let bits: Vec<usize> = (0..k).map(|_| rng.gen_range(0..dim)).collect();
            ItemVector::new(format!("i{i}"), bits, dim).unwrap()
        })
        .collect()
}

fn brute_mcc(truth: &[u8], pred: &[u8]) -> f64 {
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t, p) {
            (1, 1) => tp += 1.0,
            (0, 0) => tn += 1.0,
            (0, 1) => fp += 1.0,
            _ => fn_ += 1.0,
        }
    }
    let den: f64 = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

#[test]
fn uncertainty_formulas_by_hand() {
    // (0.7, 0.3): 2 * 0.3, 1 - 0.4, -(0.7 ln 0.7 + 0.3 ln 0.3) / ln 2
    let p = [0.7, 0.3];
    assert_abs_diff_eq!(least_confidence(&p).unwrap(), 0.6, epsilon = 1e-12);
    assert_abs_diff_eq!(margin_score(&p).unwrap(), 0.6, epsilon = 1e-12);
    let h = -(0.7f64 * 0.7f64.ln() + 0.3 * 0.3f64.ln()) / 2f64.ln();
    assert_abs_diff_eq!(normalized_entropy(&p).unwrap(), h, epsilon = 1e-12);
    assert_abs_diff_eq!(normalized_entropy(&p).unwrap(), 0.881_290_899_230_407_8, epsilon = 1e-12);

    let q = [0.5, 0.3, 0.2];
    assert_abs_diff_eq!(least_confidence(&q).unwrap(), 1.5 * 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(margin_score(&q).unwrap(), 0.8, epsilon = 1e-12);
    let h3 = -q.iter().map(|x: &f64| x * x.ln()).sum::<f64>() / 3f64.ln();
    assert_abs_diff_eq!(normalized_entropy(&q).unwrap(), h3, epsilon = 1e-12);
}

#[test]
fn mcc_matches_confusion_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let bias = rng.gen::<f64>();
        let truth: Vec<u8> = (0..n).map(|_| rng.gen_bool(bias) as u8).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.5) as u8).collect();
        let got = mcc(&truth, &pred).unwrap();
        assert_eq!(got, brute_mcc(&truth, &pred), "{truth:?} {pred:?}");
        let c = Confusion::from_labels(&truth, &pred).unwrap();
        assert_eq!(c.tp + c.tn + c.fp + c.fn_, n as u64);
    }
}

#[test]
fn kmedoids_beats_random_medoid_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items = random_items(&mut rng, 30, 40, 6);
    let refs: Vec<&ItemVector> = items.iter().collect();
    let a = affinity(&refs).unwrap();
    let c = fit(&a, 5, 1).unwrap();
    for _ in 0..100 {
        let mut medoids: Vec<usize> = rand::seq::index::sample(&mut rng, 30, 5).into_vec();
        medoids.sort_unstable();
        let cost: f64 = (0..30)
            .map(|j| medoids.iter().map(|&m| a.distance(m, j)).fold(f64::INFINITY, f64::min))
            .sum();
        assert!(c.objective() <= cost + 1e-12, "{} > {cost}", c.objective());
    }
    // within-distances agree with an independent Jaccard computation
    for (j, &d) in c.within_distances.iter().enumerate() {
        let m = c.medoids[c.assignment[j]];
        assert_abs_diff_eq!(d, jaccard_distance(&items[m], &items[j]).unwrap(), epsilon = 1e-12);
    }
}

fn random_training_set(rng: &mut ChaCha8Rng, dim: usize, rows: usize) -> TrainingSet {
    let mut set = TrainingSet::new(dim);
    for (i, x) in random_items(rng, rows, dim, 4).iter().enumerate() {
        let w = if rng.gen_bool(0.3) { rng.gen_range(1.0..20.0) } else { 1.0 };
        set.push_item(x, (i % 2) as u8, w, Origin::User);
    }
    set
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let dim = 8;
        let mut data = random_training_set(&mut rng, dim, 12);
        if trial % 2 == 1 {
            data.mask.insert(rng.gen_range(0..dim));
        }
        let params = TrainParams {
            c: rng.gen_range(0.1..5.0),
            ..TrainParams::default()
        };
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let (_, g, gb) = loss_and_gradient(&data, &params, &w, b);
        let h = 1e-6;
        for d in 0..dim {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[d] += h;
            down[d] -= h;
            let fd = (loss(&data, &params, &up, b) - loss(&data, &params, &down, b)) / (2.0 * h);
            let rel = (fd - g[d]).abs() / fd.abs().max(g[d].abs()).max(1.0);
            assert!(rel <= 1e-5, "dim {d}: analytic {} vs fd {fd}", g[d]);
            if data.mask.contains(&d) {
                assert_eq!(g[d], 0.0);
            }
        }
        let fd = (loss(&data, &params, &w, b + h) - loss(&data, &params, &w, b - h)) / (2.0 * h);
        assert!((fd - gb).abs() / fd.abs().max(1.0) <= 1e-5);
    }
}

#[test]
fn weighted_row_equals_replicated_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dim = 12;
    let base = {
        let mut s = TrainingSet::new(dim);
        for (i, x) in random_items(&mut rng, 16, dim, 4).iter().enumerate() {
            s.push_item(x, (i % 2) as u8, 1.0, Origin::User);
        }
        s
    };
    let mut weighted = base.clone();
    weighted.push_one_hot(3, 1, 20.0, Origin::Synthetic);
    weighted.push_one_hot(7, 0, 20.0, Origin::Synthetic);
    let mut replicated = base;
    for _ in 0..20 {
        replicated.push_one_hot(3, 1, 1.0, Origin::Synthetic);
        replicated.push_one_hot(7, 0, 1.0, Origin::Synthetic);
    }
    let params = TrainParams::default();
    let a = train(&weighted, &params).unwrap();
    let b = train(&replicated, &params).unwrap();
    for d in 0..dim {
        assert_abs_diff_eq!(a.coefficients[d], b.coefficients[d], epsilon = 1e-6);
    }
    assert_abs_diff_eq!(a.intercept, b.intercept, epsilon = 1e-6);
}

#[test]
fn tertiles_match_quantile_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let values: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0f64..6.0).exp()).collect();
    let levels = bin_tertiles(&values).unwrap();
    let count = |l: Level| levels.iter().filter(|&&x| x == l).count() as i64;
    for l in [Level::Low, Level::Normal, Level::High] {
        assert!((count(l) - 100).abs() <= 1, "{l:?}: {}", count(l));
    }
    // rank-based oracle: the 100 smallest are Low, the 100 largest High
    let mut order: Vec<usize> = (0..300).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    for (r, &i) in order.iter().enumerate() {
        let want = match r {
            0..=99 => Level::Low,
            100..=199 => Level::Normal,
            _ => Level::High,
        };
        assert_eq!(levels[i], want, "rank {r}");
    }
}

#[test]
fn rank_matches_sorted_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 10;
    let mut model = PreferenceModel::zero(dim);
    model.coefficients = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let items = random_items(&mut rng, 10, dim, 3);
    let refs: Vec<&ItemVector> = items.iter().collect();
    let got = rank(&model, &refs).unwrap();
    let p: Vec<f64> = items.iter().map(|x| model.predict_proba(x).unwrap()[1]).collect();
    let mut want: Vec<usize> = (0..10).collect();
    want.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    assert_eq!(got, want);
}

/// Solves `(I - alpha S) F = (1 - alpha) Y` by Gaussian elimination.
fn spread_closed_form(w: &[Vec<f64>], labels: &[(usize, u8)], alpha: f64) -> Vec<[f64; 2]> {
    let n = w.len();
    let deg: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
    let mut a = vec![vec![0.0; n + 2]; n];
    for i in 0..n {
        for j in 0..n {
            let s = if deg[i] > 0.0 && deg[j] > 0.0 { w[i][j] / (deg[i] * deg[j]).sqrt() } else { 0.0 };
            a[i][j] = if i == j { 1.0 } else { 0.0 } - alpha * s;
        }
    }
    for &(i, l) in labels {
        a[i][n + l as usize] = 1.0 - alpha;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..n + 2 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..n)
        .map(|i| {
            let (x, y) = (a[i][n] / a[i][i], a[i][n + 1] / a[i][i]);
            if x + y > 0.0 {
                [x / (x + y), y / (x + y)]
            } else {
                [0.5, 0.5]
            }
        })
        .collect()
}

#[test]
fn spreading_matches_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let items = random_items(&mut rng, 15, 20, 5);
        let refs: Vec<&ItemVector> = items.iter().collect();
        let a = affinity(&refs).unwrap();
        let w: Vec<Vec<f64>> = (0..15)
            .map(|i| (0..15).map(|j| if i == j || a.get(i, j) < 0.01 { 0.0 } else { a.get(i, j) }).collect())
            .collect();
        let labels = vec![(0, 1), (1, 0), (2, 1)];
        let params = xal_core::labelspread::SpreadParams {
            tol: 1e-13,
            ..Default::default()
        };
        let got = spread(&a, &labels, &params).unwrap();
        let want = spread_closed_form(&w, &labels, params.alpha);
        for i in 0..15 {
            assert_abs_diff_eq!(got.probs[i][1], want[i][1], epsilon = 1e-9);
        }
    }
}

#[test]
fn path_midpoint_is_symmetric() {
    let w = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
    let want = spread_closed_form(&w, &[(0, 1), (2, 0)], 0.2);
    assert_abs_diff_eq!(want[1][0], 0.5, epsilon = 1e-12);
}

#[test]
fn gap_against_linear_ramp() {
    // reference constant 0.5; candidate rises 0 -> 0.5 over 50 epochs,
    // reaching 0.5 only at epoch 50
    let reference: Vec<(f64, f64)> = (1..=50).map(|t| (t as f64, 0.5)).collect();
    let candidate: Vec<(f64, f64)> = (1..=50).map(|t| (t as f64, 0.5 * t as f64 / 50.0)).collect();
    let g = horizontal_gap(&candidate, &reference, 50.0).unwrap();
    assert!(g.reached);
    assert_abs_diff_eq!(g.gap, 49.0, epsilon = 1e-9);
    let g = horizontal_gap(&reference, &candidate, 10.0).unwrap();
    assert!(g.reached);
    assert_abs_diff_eq!(g.gap, -40.0, epsilon = 1e-9);
    let lower: Vec<(f64, f64)> = candidate.iter().map(|&(t, v)| (t, v * 0.5)).collect();
    let g = horizontal_gap(&reference, &lower, 10.0).unwrap();
    assert!(!g.reached);
    assert_abs_diff_eq!(g.gap, -40.0, epsilon = 1e-9);
}
