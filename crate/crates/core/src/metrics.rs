//! Evaluation metrics.
//!
//! F1 scores use the zero-division convention: a class with no predicted and
//! no true positives scores 0 rather than NaN. Macro-F1 averages over every
//! declared class, including classes absent from both vectors.

use crate::error::{Error, Result};
use crate::graph::Task;
use crate::model::GraphModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    F1,
    MacroF1,
    R2,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Binary => MetricKind::F1,
            Task::MultiClass(_) => MetricKind::MacroF1,
            Task::Regression => MetricKind::R2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::F1 => "f1",
            MetricKind::MacroF1 => "macro_f1",
            MetricKind::R2 => "r2",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub kind: MetricKind,
    pub value: f64,
    /// One-vs-rest F1 per class, for macro-F1.
    pub per_class: Option<Vec<f64>>,
}

fn check_lengths(pred: usize, truth: usize) -> Result<()> {
    if pred != truth {
        return Err(Error::Contract(format!("{pred} predictions for {truth} targets")));
    }
    if pred == 0 {
        return Err(Error::Contract("metrics need at least one prediction".into()));
    }
    Ok(())
}

/// F1 of class `positive` against the rest.
fn f1_of(pred: &[usize], truth: &[usize], positive: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    // 2PR/(P+R) simplifies to 2tp/(2tp+fp+fn)
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// F1 of the positive class `1`.
pub fn f1_binary(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    if let Some(l) = pred.iter().chain(truth).find(|&&l| l > 1) {
        return Err(Error::Contract(format!("binary F1 got label {l}")));
    }
    Ok(f1_of(pred, truth, 1))
}

/// One-vs-rest F1 for every class in `0..num_classes`.
pub fn f1_per_class(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    check_lengths(pred.len(), truth.len())?;
    if let Some(l) = pred.iter().chain(truth).find(|&&l| l >= num_classes) {
        return Err(Error::Contract(format!("label {l} outside 0..{num_classes}")));
    }
    Ok((0..num_classes).map(|c| f1_of(pred, truth, c)).collect())
}

pub fn f1_macro(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    let per = f1_per_class(pred, truth, num_classes)?;
    Ok(per.iter().sum::<f64>() / num_classes as f64)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    if truth.len() < 2 {
        return Err(Error::UndefinedMetric("R² needs at least two targets".into()));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R² is undefined for constant targets".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Row-wise argmax, first index on ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Scores model outputs for `task`.
pub fn evaluate(task: Task, outputs: &Tensor, labels: Option<&[usize]>, values: Option<&[f64]>) -> Result<MetricReport> {
    let kind = MetricKind::for_task(task);
    let missing = || Error::Contract(format!("{} needs matching targets", kind.name()));
    match task {
        Task::Binary => Ok(MetricReport {
            kind,
            value: f1_binary(&argmax_rows(outputs), labels.ok_or_else(missing)?)?,
            per_class: None,
        }),
        Task::MultiClass(c) => {
            let per = f1_per_class(&argmax_rows(outputs), labels.ok_or_else(missing)?, c)?;
            Ok(MetricReport {
                kind,
                value: per.iter().sum::<f64>() / c as f64,
                per_class: Some(per),
            })
        }
        Task::Regression => Ok(MetricReport {
            kind,
            value: r_squared(outputs.data(), values.ok_or_else(missing)?)?,
            per_class: None,
        }),
    }
}

/// Trainable scalars in `model`; fixed tensors are excluded.
pub fn count_parameters(model: &GraphModel) -> usize {
    model.count_parameters()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn f1_examples() {
        assert_eq!(f1_binary(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert!((f1_binary(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_binary(&[0, 0, 0], &[1, 0, 1]).unwrap(), 0.0);
        assert!(matches!(f1_binary(&[1], &[1, 0]), Err(Error::Contract(_))));
        assert!(f1_binary(&[2], &[1]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(f1_macro(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert!((f1_macro(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap() - 0.5).abs() < 1e-15);
        assert!((f1_macro(&[3, 3], &[3, 3], 6).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(matches!(f1_macro(&[0], &[6], 6), Err(Error::Contract(_))));
    }

    #[test]
    fn binary_f1_differs_from_macro_on_binary_data() {
        let (pred, truth) = ([1, 1, 0, 0], [1, 0, 0, 0]);
        let binary = f1_binary(&pred, &truth).unwrap();
        let per = f1_per_class(&pred, &truth, 2).unwrap();
        assert_eq!(binary, per[1]);
        // class 0 scores 4/5, so macro-F1 is (2/3 + 4/5) / 2
        assert!((f1_macro(&pred, &truth, 2).unwrap() - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn r_squared_examples() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(r_squared(&[1.0, 2.0], &[5.0, 5.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn argmax_takes_first_on_ties() {
        let t = Tensor::from_rows(&[[0.0, 1.0, 1.0], [2.0, 2.0, -1.0]]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }

    fn naive_f1(pred: &[usize], truth: &[usize], c: usize) -> f64 {
        let tp = pred.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count() as f64;
        let pp = pred.iter().filter(|p| **p == c).count() as f64;
        let ap = truth.iter().filter(|t| **t == c).count() as f64;
        let p = if pp > 0.0 { tp / pp } else { 0.0 };
        let r = if ap > 0.0 { tp / ap } else { 0.0 };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_direct_formulas(
            pairs in prop::collection::vec((0usize..4, 0usize..4, -5.0f64..5.0, -5.0f64..5.0), 2..40),
        ) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let per = f1_per_class(&pred, &truth, 4).unwrap();
            for (c, f) in per.iter().enumerate() {
                prop_assert!((f - naive_f1(&pred, &truth, c)).abs() < 1e-12);
            }
            let bp: Vec<usize> = pred.iter().map(|p| p % 2).collect();
            let bt: Vec<usize> = truth.iter().map(|t| t % 2).collect();
            prop_assert!((f1_binary(&bp, &bt).unwrap() - naive_f1(&bp, &bt, 1)).abs() < 1e-12);

            let yp: Vec<f64> = pairs.iter().map(|p| p.2).collect();
            let yt: Vec<f64> = pairs.iter().map(|p| p.3).collect();
            let mean = yt.iter().sum::<f64>() / yt.len() as f64;
            let naive = 1.0
                - yp.iter().zip(&yt).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
                    / yt.iter().map(|t| (t - mean).powi(2)).sum::<f64>();
            let r2 = r_squared(&yp, &yt).unwrap();
            prop_assert!((r2 - naive).abs() < 1e-12 * naive.abs().max(1.0));
            prop_assert!(r2 <= 1.0);

            let c = pairs[0].2;
            let shifted = r_squared(
                &yp.iter().map(|v| v + c).collect::<Vec<_>>(),
                &yt.iter().map(|v| v + c).collect::<Vec<_>>(),
            ).unwrap();
            prop_assert!((shifted - r2).abs() < 1e-10 * r2.abs().max(1.0));
        }

        #[test]
        fn invariant_to_joint_permutation(
            pairs in prop::collection::vec((0usize..3, 0usize..3, -5.0f64..5.0, -5.0f64..5.0), 2..30),
            rot in 0usize..30,
        ) {
            let mut shuffled = pairs.clone();
            let k = rot % pairs.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let split = |v: &[(usize, usize, f64, f64)]| {
                (
                    v.iter().map(|p| p.0).collect::<Vec<_>>(),
                    v.iter().map(|p| p.1).collect::<Vec<_>>(),
                    v.iter().map(|p| p.2).collect::<Vec<_>>(),
                    v.iter().map(|p| p.3).collect::<Vec<_>>(),
                )
            };
            let (p1, t1, a1, b1) = split(&pairs);
            let (p2, t2, a2, b2) = split(&shuffled);
            prop_assert_eq!(f1_macro(&p1, &t1, 3).unwrap(), f1_macro(&p2, &t2, 3).unwrap());
            if let (Ok(x), Ok(y)) = (r_squared(&a1, &b1), r_squared(&a2, &b2)) {
                prop_assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
