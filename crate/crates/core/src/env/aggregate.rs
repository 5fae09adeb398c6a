//! Server-side model fusion.

use std::borrow::Borrow;

use crate::error::{Error, Result};
use crate::nn::ModelParams;

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Sample-count weights `S_i / sum(S)`.
pub fn proportional_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::Empty("sample counts"));
    }
    if let Some(pos) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("client {pos} has zero samples")));
    }
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    Ok(counts.iter().map(|&c| c as f64 / total).collect())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Empty("weight vector"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::OffSimplex(format!("entry {w}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::OffSimplex(format!("sum {sum}")));
    }
    Ok(())
}

/// Coordinatewise convex combination `sum_i w_i * theta_i`, evaluated as
/// `theta_a + sum_{i != a} w_i * (theta_i - theta_a)` around the heaviest
/// model `a`. One-hot weights and identical models come back bit-exact.
pub fn weighted_aggregate<M: Borrow<ModelParams>>(models: &[M], weights: &[f64]) -> Result<ModelParams> {
    let first = models.first().ok_or(Error::Empty("model list"))?.borrow();
    if weights.len() != models.len() {
        return Err(Error::DimensionMismatch {
            context: "fusion weights",
            expected: models.len(),
            actual: weights.len(),
        });
    }
    check_simplex(weights)?;
    if models.iter().any(|m| !m.borrow().same_layout(first)) {
        return Err(Error::LayoutMismatch);
    }
    let anchor = weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, &w)| if w > weights[best] { i } else { best });
    let base = &models[anchor].borrow().values;
    let mut values = base.clone();
    for (i, (m, &w)) in models.iter().zip(weights).enumerate() {
        if i == anchor || w == 0.0 {
            continue;
        }
        values
            .iter_mut()
            .zip(m.borrow().values.iter().zip(base))
            .for_each(|(acc, (v, b))| *acc += w * (v - b));
    }
    Ok(ModelParams {
        values,
        spec: first.spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{NetSpec, OutputHead};
    use proptest::prelude::*;

    fn model(values: Vec<f64>) -> ModelParams {
        let spec = NetSpec::new(vec![1, values.len() / 2], OutputHead::Linear).unwrap();
        ModelParams::from_values(spec, values).unwrap()
    }

    #[test]
    fn proportional_examples() {
        let w = proportional_weights(&[4222, 4938]).unwrap();
        assert!((w[0] - 0.46092).abs() < 1e-5);
        assert!((w[1] - 0.53908).abs() < 1e-5);
        assert!(proportional_weights(&[7; 5]).unwrap().iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert_eq!(proportional_weights(&[3]).unwrap(), vec![1.0]);
        assert!(proportional_weights(&[3, 0]).is_err());
        assert!(proportional_weights(&[]).is_err());
    }

    #[test]
    fn midpoint_of_two_models() {
        let fused = weighted_aggregate(&[model(vec![1.0, 1.0]), model(vec![3.0, 3.0])], &[0.5, 0.5]).unwrap();
        assert_eq!(fused.values, vec![2.0, 2.0]);
    }

    #[test]
    fn one_hot_and_identical_identities() {
        let a = model(vec![0.1, -2.0, 3.5, 7.25]);
        let b = model(vec![9.0, 8.0, 7.0, 6.0]);
        assert_eq!(weighted_aggregate(&[&a, &b], &[0.0, 1.0]).unwrap(), b);
        assert_eq!(weighted_aggregate(&[&a, &a, &a], &[0.2, 0.3, 0.5]).unwrap(), a);
        assert_eq!(weighted_aggregate(&[&a, &a, &a], &[1.0 / 3.0; 3]).unwrap(), a);
    }

    #[test]
    fn aggregate_errors() {
        let a = model(vec![1.0, 1.0]);
        let b = model(vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(weighted_aggregate(&[&a, &b], &[0.5, 0.5]).unwrap_err(), Error::LayoutMismatch);
        assert!(matches!(
            weighted_aggregate(&[&a, &a], &[0.5, 0.6]),
            Err(Error::OffSimplex(_))
        ));
        assert!(matches!(
            weighted_aggregate(&[&a, &a], &[1.5, -0.5]),
            Err(Error::OffSimplex(_))
        ));
        let empty: [&ModelParams; 0] = [];
        assert!(weighted_aggregate(&empty, &[]).is_err());
    }

    proptest! {
        #[test]
        fn proportional_sums_to_one_and_is_equivariant(counts in prop::collection::vec(1usize..100_000, 1..20)) {
            let w = proportional_weights(&counts).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut rev = counts.clone();
            rev.reverse();
            let mut wr = proportional_weights(&rev).unwrap();
            wr.reverse();
            for (a, b) in w.iter().zip(&wr) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn fusion_stays_in_the_hull_and_ignores_order(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..6),
            raw in prop::collection::vec(0.01f64..1.0, 6),
        ) {
            let models: Vec<ModelParams> = rows.into_iter().map(model).collect();
            let total: f64 = raw[..models.len()].iter().sum();
            let w: Vec<f64> = raw[..models.len()].iter().map(|x| x / total).collect();
            let fused = weighted_aggregate(&models, &w).unwrap();
            for j in 0..4 {
                let lo = models.iter().map(|m| m.values[j]).fold(f64::INFINITY, f64::min);
                let hi = models.iter().map(|m| m.values[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(fused.values[j] >= lo - 1e-12 && fused.values[j] <= hi + 1e-12);
            }
            let rev_models: Vec<&ModelParams> = models.iter().rev().collect();
            let rev_w: Vec<f64> = w.iter().rev().copied().collect();
            let rev = weighted_aggregate(&rev_models, &rev_w).unwrap();
            for (a, b) in fused.values.iter().zip(&rev.values) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
