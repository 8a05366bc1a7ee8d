//! Link sign prediction: pair features, a softmax logistic regression, and
//! the AUC / F1 scores it is judged by.

use super::{EvalError, Result};
use crate::graphstore::{EdgeSplit, Sign, SignedEdge};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// L2 penalty on the weights (the bias is not penalised).
pub const PENALTY: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 1000;

/// Row `r` is `[z_u ‖ z_v]` for the `r`-th edge.
pub fn edge_features(emb: &Tensor, edges: &[SignedEdge]) -> Result<Tensor> {
    let (n, d) = emb.shape();
    let mut out = Tensor::zeros(edges.len(), 2 * d);
    for (r, e) in edges.iter().enumerate() {
        for idx in [e.u, e.v] {
            if idx >= n {
                return Err(EvalError::Index { index: idx, len: n });
            }
        }
        let row = out.row_mut(r);
        row[..d].copy_from_slice(emb.row(e.u));
        row[d..].copy_from_slice(emb.row(e.v));
    }
    Ok(out)
}

/// Column index of each sign class in the model's outputs.
fn class_index(s: Sign) -> usize {
    match s {
        Sign::Positive => 0,
        Sign::Negative => 1,
    }
}

/// Two-class softmax regression; class 0 is the positive sign.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    /// `2 × d`.
    pub weight: Tensor,
    /// `1 × 2`.
    pub bias: Tensor,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticRegression {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut z = x.matmul_t(&self.weight).map_err(|_| EvalError::Length {
            what: "feature width",
            expected: self.weight.cols(),
            got: x.cols(),
        })?;
        for r in 0..z.rows() {
            z.row_mut(r).iter_mut().zip(self.bias.data()).for_each(|(v, b)| *v += b);
        }
        Ok(z)
    }

    /// `n × 2` class probabilities.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let mut p = self.logits(x)?;
        for r in 0..p.rows() {
            softmax_in_place(p.row_mut(r));
        }
        Ok(p)
    }

    /// Probability of the positive sign for every row.
    pub fn positive_scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows()).map(|r| p.get(r, 0)).collect())
    }

    /// Most probable sign; an exact tie goes to positive.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Sign>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows())
            .map(|r| if p.get(r, 0) >= p.get(r, 1) { Sign::Positive } else { Sign::Negative })
            .collect())
    }

    /// Mean cross-entropy plus `(PENALTY/2)·‖W‖²`.
    pub fn loss(&self, x: &Tensor, y: &[Sign]) -> Result<f64> {
        let z = self.logits(x)?;
        let mut ce = 0.0;
        for (r, &s) in y.iter().enumerate() {
            let row = z.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            ce += lse - row[class_index(s)];
        }
        let w2: f64 = self.weight.data().iter().map(|v| v * v).sum();
        Ok(ce / y.len() as f64 + 0.5 * PENALTY * w2)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter_mut().for_each(|v| *v = (*v - m).exp());
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
}

/// Full-batch gradient descent from zero with fixed step `1/L`, where
/// `L = ½‖[X 1]‖²_F / n + PENALTY` bounds the loss curvature. Stops when the
/// gradient norm drops below [`GRAD_TOLERANCE`] or after
/// [`MAX_ITERATIONS`] steps.
pub fn logreg_fit(x: &Tensor, y: &[Sign]) -> Result<LogisticRegression> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(EvalError::Length {
            what: "labels",
            expected: n,
            got: y.len(),
        });
    }
    if !y.contains(&Sign::Positive) || !y.contains(&Sign::Negative) {
        return Err(EvalError::SingleClass("logistic regression training labels"));
    }
    if !x.is_finite() {
        return Err(EvalError::NonFinite("logistic regression features"));
    }
    let nf = n as f64;
    let frob2: f64 = x.data().iter().map(|v| v * v).sum::<f64>() + nf;
    let step = 1.0 / (0.5 * frob2 / nf + PENALTY);
    let mut model = LogisticRegression {
        weight: Tensor::zeros(2, d),
        bias: Tensor::zeros(1, 2),
        iterations: 0,
        converged: false,
    };
    while model.iterations < MAX_ITERATIONS {
        let mut g = model.predict_proba(x)?;
        for (r, &s) in y.iter().enumerate() {
            let row = g.row_mut(r);
            row[class_index(s)] -= 1.0;
            row.iter_mut().for_each(|v| *v /= nf);
        }
        let mut gw = g.transpose().matmul(x).expect("shapes agree");
        gw.data_mut()
            .iter_mut()
            .zip(model.weight.data())
            .for_each(|(gv, w)| *gv += PENALTY * w);
        let gb: Vec<f64> = (0..2).map(|c| (0..n).map(|r| g.get(r, c)).sum()).collect();
        let norm = (gw.data().iter().chain(&gb).map(|v| v * v).sum::<f64>()).sqrt();
        if norm < GRAD_TOLERANCE {
            model.converged = true;
            break;
        }
        model.weight.data_mut().iter_mut().zip(gw.data()).for_each(|(w, gv)| *w -= step * gv);
        model.bias.data_mut().iter_mut().zip(&gb).for_each(|(b, gv)| *b -= step * gv);
        model.iterations += 1;
    }
    Ok(model)
}

/// Area under the ROC curve via the Mann–Whitney statistic with average
/// ranks, so tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::Length {
            what: "labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NonFinite("AUC scores"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass("AUC labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 with `positive` as the class of interest. Each
/// ratio with a zero denominator is 0, as is F1 when precision + recall = 0.
pub fn class_scores(predictions: &[Sign], truth: &[Sign], positive: Sign) -> Result<ClassScores> {
    if predictions.len() != truth.len() {
        return Err(EvalError::Length {
            what: "predictions",
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fnn);
    Ok(ClassScores {
        precision,
        recall,
        f1: f1_from(precision, recall),
    })
}

pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn f1(predictions: &[Sign], truth: &[Sign], positive: Sign) -> Result<f64> {
    Ok(class_scores(predictions, truth, positive)?.f1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSignReport {
    pub auc: f64,
    /// F1 of the positive sign.
    pub f1: f64,
    pub positive: ClassScores,
    pub negative: ClassScores,
}

/// Fits on the split's training edges and scores its test edges.
pub fn evaluate_link_sign(emb: &Tensor, split: &EdgeSplit) -> Result<LinkSignReport> {
    let signs = |edges: &[SignedEdge]| edges.iter().map(|e| e.sign).collect::<Vec<_>>();
    let x_train = edge_features(emb, &split.train_edges)?;
    let x_test = edge_features(emb, &split.test_edges)?;
    let (y_train, y_test) = (signs(&split.train_edges), signs(&split.test_edges));
    let model = logreg_fit(&x_train, &y_train)?;
    let scores = model.positive_scores(&x_test)?;
    let truth: Vec<bool> = y_test.iter().map(|&s| s == Sign::Positive).collect();
    let pred = model.predict(&x_test)?;
    let positive = class_scores(&pred, &y_test, Sign::Positive)?;
    Ok(LinkSignReport {
        auc: auc(&scores, &truth)?,
        f1: positive.f1,
        positive,
        negative: class_scores(&pred, &y_test, Sign::Negative)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(u: usize, v: usize) -> SignedEdge {
        SignedEdge {
            u,
            v,
            sign: Sign::Positive,
        }
    }

    #[test]
    fn features_concatenate_endpoints() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let f = edge_features(&z, &[e(0, 1), e(2, 2)]).unwrap();
        assert_eq!(f.shape(), (2, 4));
        assert_eq!(f.row(0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&f.row(0)[..2], z.row(0));
        assert!(f.row(1).iter().all(|&v| v == 0.0));
        assert!(matches!(edge_features(&z, &[e(0, 3)]), Err(EvalError::Index { index: 3, len: 3 })));
    }

    #[test]
    fn separable_toy_set_is_fit() {
        let x = Tensor::from_rows(&[vec![2.0, 1.0], vec![3.0, 2.0], vec![-2.0, -1.0], vec![-3.0, 0.5]]).unwrap();
        let y = [Sign::Positive, Sign::Positive, Sign::Negative, Sign::Negative];
        let m = logreg_fit(&x, &y).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
    }

    #[test]
    fn constant_features_give_class_priors() {
        let x = Tensor::full(8, 3, 0.7);
        let y: Vec<Sign> = (0..8).map(|i| if i < 6 { Sign::Positive } else { Sign::Negative }).collect();
        let m = logreg_fit(&x, &y).unwrap();
        for p in m.positive_scores(&x).unwrap() {
            assert!((p - 0.75).abs() < 1e-3, "{p}");
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = Tensor::zeros(3, 2);
        assert!(matches!(logreg_fit(&x, &[Sign::Positive; 3]), Err(EvalError::SingleClass(_))));
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn auc_perfect_and_tied() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
    }

    #[test]
    fn auc_null_distribution_centres_on_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut total = 0.0;
        for _ in 0..200 {
            let s: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
            let mut l: Vec<bool> = (0..50).map(|_| rng.gen()).collect();
            l[0] = true;
            l[1] = false;
            total += auc(&s, &l).unwrap();
        }
        assert!((total / 200.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn f1_hand_values() {
        use Sign::{Negative as N, Positive as P};
        // TP=3, FP=1, FN=2.
        let pred = [P, P, P, P, N, N, N];
        let truth = [P, P, P, N, P, P, N];
        let s = class_scores(&pred, &truth, P).unwrap();
        assert_eq!((s.precision, s.recall), (0.75, 0.6));
        assert!((s.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);
        assert_eq!(f1(&truth, &truth, P).unwrap(), 1.0);
        assert_eq!(f1(&[N, N], &[P, P], P).unwrap(), 0.0);
        assert_eq!(f1_from(0.5, 0.5), 0.5);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_maps(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..60);
            let s: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..10) as f64) / 10.0).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            l[0] = true;
            l[1] = false;
            let mapped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&mapped, &l).unwrap());
        }

        #[test]
        fn f1_matches_stored_precision_recall(pred in proptest::collection::vec(any::<bool>(), 1..50), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let to_sign = |b: bool| if b { Sign::Positive } else { Sign::Negative };
            let truth: Vec<Sign> = pred.iter().map(|_| to_sign(rng.gen())).collect();
            let pred: Vec<Sign> = pred.into_iter().map(to_sign).collect();
            let s = class_scores(&pred, &truth, Sign::Positive).unwrap();
            prop_assert_eq!(s.f1, f1_from(s.precision, s.recall));
            prop_assert!((0.0..=1.0).contains(&s.f1));
        }
    }
}
