//! Evaluation metrics against brute-force oracles on random small instances.

use kasgcn::eval::{auc, class_scores, edge_features, logreg_fit};
use kasgcn::graphstore::{Sign, SignedEdge};
use kasgcn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

const INSTANCES: usize = 150;

#[test]
fn quality_matches_pair_enumeration() {
    common::check_quality(INSTANCES, 1).unwrap();
}

#[test]
fn auc_matches_pair_counting() {
    common::check_auc(INSTANCES, 2).unwrap();
}

#[test]
fn eight_sample_auc_with_ties() {
    let scores = [0.9, 0.8, 0.8, 0.6, 0.6, 0.6, 0.3, 0.1];
    let labels = [true, true, false, true, false, false, true, false];
    // 16 pairs; wins per positive: 4, 3.5, 2, 1.
    assert_eq!(auc(&scores, &labels).unwrap(), 10.5 / 16.0);
}

#[test]
fn f1_matches_confusion_counts() {
    common::check_f1(INSTANCES, 3).unwrap();
}

#[test]
fn f1_hand_arithmetic() {
    use Sign::{Negative as N, Positive as P};
    // TP = 3, FP = 1, FN = 2.
    let pred = [P, P, P, P, N, N, N];
    let truth = [P, P, P, N, P, P, N];
    let s = class_scores(&pred, &truth, P).unwrap();
    assert_eq!((s.precision, s.recall), (0.75, 0.6));
    assert!((s.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);
}

#[test]
fn cosine_matches_per_row_arithmetic() {
    common::check_cosine(INSTANCES, 4).unwrap();
}

#[test]
fn edge_features_concatenate_endpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = Tensor::random_uniform(5, 3, -1.0, 1.0, &mut rng);
    let edges = [SignedEdge { u: 4, v: 1, sign: Sign::Negative }];
    let f = edge_features(&z, &edges).unwrap();
    assert_eq!(f.shape(), (1, 6));
    assert_eq!(&f.row(0)[..3], z.row(4));
    assert_eq!(&f.row(0)[3..], z.row(1));
    let zeros = edge_features(&Tensor::zeros(5, 3), &edges).unwrap();
    assert!(zeros.data().iter().all(|&v| v == 0.0));
}

/// Straight-line duplicate of the regularized softmax regression fit.
fn duplicate_fit(x: &[Vec<f64>], y: &[usize]) -> (Vec<[f64; 2]>, [f64; 2], f64) {
    let (n, d) = (x.len(), x[0].len());
    let lambda = 1e-4;
    let frob: f64 = x.iter().flatten().map(|v| v * v).sum::<f64>() + n as f64;
    let step = 1.0 / (0.5 * frob / n as f64 + lambda);
    let mut w = vec![[0.0f64; 2]; d];
    let mut b = [0.0f64; 2];
    let probs = |w: &Vec<[f64; 2]>, b: &[f64; 2], row: &[f64]| {
        let z: Vec<f64> = (0..2).map(|c| b[c] + (0..d).map(|k| w[k][c] * row[k]).sum::<f64>()).collect();
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
    };
    for _ in 0..1000 {
        let mut gw = vec![[0.0f64; 2]; d];
        let mut gb = [0.0f64; 2];
        for (row, &t) in x.iter().zip(y) {
            let p = probs(&w, &b, row);
            for c in 0..2 {
                let r = (p[c] - if c == t { 1.0 } else { 0.0 }) / n as f64;
                gb[c] += r;
                for k in 0..d {
                    gw[k][c] += r * row[k];
                }
            }
        }
        for k in 0..d {
            for c in 0..2 {
                gw[k][c] += lambda * w[k][c];
            }
        }
        let norm = gw.iter().flatten().chain(&gb).map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-6 {
            break;
        }
        for k in 0..d {
            for c in 0..2 {
                w[k][c] -= step * gw[k][c];
            }
        }
        for c in 0..2 {
            b[c] -= step * gb[c];
        }
    }
    let mut loss = 0.0;
    for (row, &t) in x.iter().zip(y) {
        loss -= probs(&w, &b, row)[t].ln();
    }
    let w2: f64 = w.iter().flatten().map(|v| v * v).sum();
    (w, b, loss / n as f64 + 0.5 * lambda * w2)
}

#[test]
fn logistic_regression_matches_duplicate_implementation() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (n, d) = (100, 6);
        let truth: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<usize> = x
            .iter()
            .map(|row| {
                let s: f64 = row.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(-0.8..0.8);
                usize::from(s < 0.0)
            })
            .collect();
        let signs: Vec<Sign> = y.iter().map(|&c| if c == 0 { Sign::Positive } else { Sign::Negative }).collect();
        let xt = Tensor::from_rows(&x).unwrap();
        let model = logreg_fit(&xt, &signs).unwrap();
        let (w, b, loss) = duplicate_fit(&x, &y);
        let got = model.loss(&xt, &signs).unwrap();
        assert!((got - loss).abs() < 1e-6, "seed {seed}: {got} vs {loss}");
        for k in 0..d {
            for c in 0..2 {
                assert!((model.weight.get(c, k) - w[k][c]).abs() < 1e-6);
            }
        }
        assert!((model.bias.get(0, 0) - b[0]).abs() < 1e-6);
    }
}
