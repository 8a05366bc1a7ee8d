//! Oracles shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use kasgcn::eval::{auc, avg_cosine_similarity, class_scores, cluster_quality};
use kasgcn::graphstore::{Sign, SignedEdge, SignedGraph};
use kasgcn::kan::KanLayer;
use kasgcn::sgcn::{init_features, LayerTransforms, ModelConfig, ModelState, Neighborhoods, Transform, Variant};
use kasgcn::tensor::Tensor;
use kasgcn::train::{draw_samples, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Six nodes, eight edges, both signs, with non-adjacent pairs left over.
pub fn fixture() -> SignedGraph {
    let e = |u, v, sign| SignedEdge { u, v, sign };
    use Sign::{Negative as N, Positive as P};
    SignedGraph::from_edges(
        6,
        [e(0, 1, P), e(0, 2, P), e(1, 2, P), e(3, 4, P), e(4, 5, P), e(0, 3, N), e(2, 5, N), e(1, 4, N)],
    )
    .unwrap()
}

/// Largest relative error between analytic and central-difference
/// gradients of the training loss over every parameter entry.
pub fn gradient_error(variant: Variant, seed: u64) -> f64 {
    let g = fixture();
    let config = ModelConfig {
        variant,
        layer_dims: vec![3, 2],
        feature_dim: 3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::init(&config, &mut rng).unwrap();
    let h0 = init_features(&g, 3, 10, true, seed).unwrap();
    let samples = draw_samples(&g, &mut rng);
    let nb = Neighborhoods::new(&g);
    let (_, grads) = net.loss_and_gradients(&nb, &h0, &samples, 1.0).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (p, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let mut plus = net.clone();
            plus.parameters_mut()[p].data_mut()[k] += h;
            let mut minus = net.clone();
            minus.parameters_mut()[p].data_mut()[k] -= h;
            let lp = plus.loss_value(&nb, &h0, &samples, 1.0).unwrap();
            let lm = minus.loss_value(&nb, &h0, &samples, 1.0).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grad.data()[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Max abs difference between a B-spline KASGCN with zeroed spline
/// scalers and the SiLU-linear SGCN built from its base weights.
pub fn reduction_diff(seed: u64) -> f64 {
    let g = fixture();
    let config = ModelConfig {
        variant: Variant::KasgcnBspline,
        layer_dims: vec![4, 3, 3],
        feature_dim: 3,
        ..Default::default()
    };
    let mut model = ModelState::init(&config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut layers = Vec::new();
    for t in &mut model.layers {
        let mut pair = Vec::new();
        for tr in [&mut t.balanced, &mut t.unbalanced] {
            let Transform::Kan(KanLayer::Bspline(l)) = tr else { unreachable!() };
            l.spline_scaler = Tensor::zeros(l.spline_scaler.rows(), l.spline_scaler.cols());
            pair.push(Transform::SiluLinear(l.base_weight.clone()));
        }
        let unbalanced = pair.pop().unwrap();
        let balanced = pair.pop().unwrap();
        layers.push(LayerTransforms { balanced, unbalanced });
    }
    let reference = ModelState::from_layers(&ModelConfig { variant: Variant::Sgcn, ..config }, layers).unwrap();
    let h0 = init_features(&g, 3, 10, true, seed).unwrap();
    model.embed(&g, &h0).unwrap().max_abs_diff(&reference.embed(&g, &h0).unwrap())
}

fn random_graph(rng: &mut ChaCha8Rng) -> SignedGraph {
    let n = rng.gen_range(2..=30);
    let p = rng.gen_range(0.05..0.6);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                let sign = if rng.gen::<f64>() < 0.7 { Sign::Positive } else { Sign::Negative };
                edges.push(SignedEdge { u, v, sign });
            }
        }
    }
    SignedGraph::from_edges(n, edges).unwrap()
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Cluster quality against a walk over every unordered node pair.
pub fn check_quality(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..instances {
        let g = random_graph(&mut rng);
        let n = g.node_count();
        let k = rng.gen_range(1..=n.min(6));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let (mut pw, mut pb, mut nw, mut nbt) = (0usize, 0usize, 0usize, 0usize);
        for u in 0..n {
            for v in u + 1..n {
                let sign = g
                    .edges()
                    .iter()
                    .find(|e| (e.u, e.v) == (u, v) || (e.u, e.v) == (v, u))
                    .map(|e| e.sign);
                let same = labels[u] == labels[v];
                match (sign, same) {
                    (Some(Sign::Positive), true) => pw += 1,
                    (Some(Sign::Positive), false) => pb += 1,
                    (Some(Sign::Negative), true) => nw += 1,
                    (Some(Sign::Negative), false) => nbt += 1,
                    (None, _) => {}
                }
            }
        }
        let pos_in = if pw + pb == 0 { 1.0 } else { pw as f64 / (pb + pw) as f64 };
        let neg_out = if nw + nbt == 0 { 1.0 } else { nbt as f64 / (nw + nbt) as f64 };
        let q = cluster_quality(&g, &labels).map_err(|e| e.to_string())?;
        ensure!(
            (q.pos_in, q.neg_out, q.q) == (pos_in, neg_out, pos_in + neg_out),
            "instance {t}: got ({}, {}, {}), oracle ({pos_in}, {neg_out})",
            q.pos_in,
            q.neg_out,
            q.q
        );
        ensure!(
            q.pos_in_vacuous == (pw + pb == 0) && q.neg_out_vacuous == (nw + nbt == 0),
            "instance {t}: vacuous flags"
        );
    }
    Ok(())
}

/// AUC against counting every positive/negative pair, ties worth one half.
/// Scores are coarse so ties are common.
pub fn check_auc(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    while done < instances {
        let n = rng.gen_range(2..=100);
        let levels = rng.gen_range(2..12);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            ensure!(auc(&scores, &labels).is_err(), "single-class input accepted");
            continue;
        }
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure!(got == wins / pairs, "instance {done}: {got} vs {}", wins / pairs);
        done += 1;
    }
    Ok(())
}

/// Precision, recall and F1 against confusion counts, for both classes.
pub fn check_f1(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = |b: bool| if b { Sign::Positive } else { Sign::Negative };
    for t in 0..instances {
        let n = rng.gen_range(1..=100);
        let truth: Vec<Sign> = (0..n).map(|_| sign(rng.gen())).collect();
        let pred: Vec<Sign> = (0..n).map(|_| sign(rng.gen())).collect();
        for positive in [Sign::Positive, Sign::Negative] {
            let count = |p: bool, t: bool| {
                (0..n).filter(|&i| (pred[i] == positive) == p && (truth[i] == positive) == t).count() as f64
            };
            let (tp, fp, fnn) = (count(true, true), count(true, false), count(false, true));
            let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let recall = if tp + fnn == 0.0 { 0.0 } else { tp / (tp + fnn) };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            let s = class_scores(&pred, &truth, positive).map_err(|e| e.to_string())?;
            ensure!(
                (s.precision, s.recall, s.f1) == (precision, recall, f1),
                "instance {t}: got ({}, {}, {}), oracle ({precision}, {recall}, {f1})",
                s.precision,
                s.recall,
                s.f1
            );
        }
    }
    Ok(())
}

/// Mean cosine similarity against per-row scalar arithmetic; some
/// instances carry a zero row, which must be skipped.
pub fn check_cosine(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..instances {
        let rows = rng.gen_range(1..=30);
        let cols = rng.gen_range(1..=8);
        let mut a = Tensor::random_uniform(rows, cols, -1.0, 1.0, &mut rng);
        let b = Tensor::random_uniform(rows, cols, -1.0, 1.0, &mut rng);
        if rng.gen::<bool>() {
            let r = rng.gen_range(0..rows);
            a.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
        }
        let (mut sum, mut used) = (0.0, 0);
        for r in 0..rows {
            let dot: f64 = (0..cols).map(|c| a.get(r, c) * b.get(r, c)).sum();
            let na = (0..cols).map(|c| a.get(r, c).powi(2)).sum::<f64>().sqrt();
            let nb = (0..cols).map(|c| b.get(r, c).powi(2)).sum::<f64>().sqrt();
            if na > 0.0 && nb > 0.0 {
                sum += dot / (na * nb);
                used += 1;
            }
        }
        match avg_cosine_similarity(&a, &b) {
            Ok(c) => {
                let want = sum / used as f64;
                ensure!((c.mean - want).abs() <= 1e-12, "instance {t}: {} vs {want}", c.mean);
                ensure!(c.skipped == rows - used, "instance {t}: skipped {} rows", c.skipped);
            }
            Err(e) => ensure!(used == 0, "instance {t}: {e}"),
        }
    }
    Ok(())
}
