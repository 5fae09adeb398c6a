//! Non-IID client partitioning and server holdout splitting.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::seed;

fn class_indices(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Draws a Dirichlet(alpha, ..., alpha) vector via normalized Gamma draws.
fn dirichlet(n: usize, alpha: f64, rng: &mut seed::SimRng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(draws.into_iter().map(|d| d / total).collect())
    } else {
        // all draws underflowed (tiny alpha): put the mass on one client
        let mut v = vec![0.0; n];
        v[rand::Rng::random_range(rng, 0..n)] = 1.0;
        Ok(v)
    }
}

/// Splits each class across clients with Dirichlet(alpha) proportions.
///
/// Returned index lists are sorted, disjoint and together cover every
/// index. A client that would end up empty takes one index from the
/// currently largest client.
pub fn dirichlet_partition(
    labels: &[usize],
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("label vector"));
    }
    if n_clients > labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_clients} clients but only {} samples",
            labels.len()
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let mut rng = seed::rng(seed);
    let mut parts = vec![Vec::new(); n_clients];
    for mut idx in class_indices(labels) {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let props = dirichlet(n_clients, alpha, &mut rng)?;
        let n = idx.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end = if client + 1 == n_clients {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            parts[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    while let Some(empty) = parts.iter().position(|p| p.is_empty()) {
        let largest = (0..n_clients)
            .max_by_key(|&c| (parts[c].len(), std::cmp::Reverse(c)))
            .expect("at least one client");
        let moved = parts[largest].pop().expect("largest partition is nonempty");
        parts[empty].push(moved);
    }
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok(parts)
}

/// Stratified split: `fraction` of each class goes to the second list.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must be in [0, 1), got {fraction}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for mut idx in class_indices(labels) {
        idx.shuffle(&mut rng);
        let n_held = (idx.len() as f64 * fraction).round() as usize;
        held.extend_from_slice(&idx[..n_held]);
        keep.extend_from_slice(&idx[n_held..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    Ok((keep, held))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(n_classes: usize, per: usize) -> Vec<usize> {
        (0..n_classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
    }

    fn assert_partition_law(parts: &[Vec<usize>], n: usize) {
        let mut seen = vec![false; n];
        for p in parts {
            assert!(!p.is_empty());
            for &i in p {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn alpha_one_ten_clients() {
        let labels = balanced(10, 100);
        let parts = dirichlet_partition(&labels, 10, 1.0, 5).unwrap();
        assert_eq!(parts.len(), 10);
        assert_partition_law(&parts, labels.len());
        let sizes: Vec<usize> = parts.iter().map(|p| p.len()).collect();
        // alpha = 1 is skewed: client sizes are not all equal
        assert!(sizes.iter().max() != sizes.iter().min());
    }

    #[test]
    fn huge_alpha_is_nearly_iid() {
        let labels = balanced(4, 250);
        let parts = dirichlet_partition(&labels, 5, 1e6, 3).unwrap();
        for p in &parts {
            let mut counts = [0usize; 4];
            p.iter().for_each(|&i| counts[labels[i]] += 1);
            for c in counts {
                let share = c as f64 / p.len() as f64;
                assert!((share - 0.25).abs() <= 0.05, "share {share}");
            }
        }
    }

    #[test]
    fn tiny_alpha_still_fills_every_client() {
        let labels = balanced(2, 5);
        let parts = dirichlet_partition(&labels, 8, 1e-3, 1).unwrap();
        assert_partition_law(&parts, labels.len());
    }

    #[test]
    fn partition_errors() {
        assert!(dirichlet_partition(&[0, 1], 3, 1.0, 0).is_err());
        assert!(dirichlet_partition(&[], 1, 1.0, 0).is_err());
        assert!(dirichlet_partition(&[0, 1], 0, 1.0, 0).is_err());
        assert!(dirichlet_partition(&[0, 1], 1, 0.0, 0).is_err());
    }

    #[test]
    fn stratified_split_is_exhaustive() {
        let labels = balanced(4, 50);
        let (keep, held) = stratified_split(&labels, 0.2, 9).unwrap();
        assert_eq!(held.len(), 40);
        assert_eq!(keep.len() + held.len(), 200);
        let mut all: Vec<usize> = keep.iter().chain(&held).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn partition_law_holds(
            n_classes in 1usize..6,
            per in 1usize..40,
            n_clients in 1usize..12,
            alpha in 0.01f64..100.0,
            seed in any::<u64>(),
        ) {
            let labels = balanced(n_classes, per);
            prop_assume!(n_clients <= labels.len());
            let parts = dirichlet_partition(&labels, n_clients, alpha, seed).unwrap();
            prop_assert_eq!(parts.len(), n_clients);
            assert_partition_law(&parts, labels.len());
        }
    }
}
