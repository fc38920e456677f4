//! Splitting a dataset across clients: balanced IID dealing and
//! Dirichlet-skewed label distributions for Non-IID experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Per-client sample index lists. Lists are disjoint and every client is
/// non-empty.
#[derive(Debug, Clone)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }
}

fn indices_by_class(data: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); data.n_classes];
    for (i, &label) in data.labels.iter().enumerate() {
        by_class[label as usize].push(i);
    }
    by_class
}

/// Deal each class round-robin so per-client class histograms differ by at
/// most one; leftover samples rotate across clients via a rolling cursor.
pub fn iid_partition(data: &Dataset, n_clients: usize, rng: RngStream) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if n_clients > data.n_samples() {
        return Err(Error::invalid(format!(
            "{} clients but only {} samples",
            n_clients,
            data.n_samples()
        )));
    }
    let mut r = rng.rng();
    let mut assignments = vec![Vec::new(); n_clients];
    let mut cursor = 0usize;
    for mut class_indices in indices_by_class(data) {
        class_indices.shuffle(&mut r);
        let base = class_indices.len() / n_clients;
        let extra = class_indices.len() % n_clients;
        let mut it = class_indices.into_iter();
        for assignment in assignments.iter_mut() {
            assignment.extend(it.by_ref().take(base));
        }
        for _ in 0..extra {
            assignments[cursor % n_clients].push(it.next().unwrap());
            cursor += 1;
        }
    }
    Ok(Partition { assignments })
}

/// Per class, draw client proportions from `Dirichlet(alpha * 1)` and slice
/// the shuffled class indices accordingly. Allocations leaving a client
/// empty are redrawn up to 100 times; after that, samples migrate from the
/// largest client.
pub fn dirichlet_partition(
    data: &Dataset,
    n_clients: usize,
    alpha: f64,
    rng: RngStream,
) -> Result<Partition> {
    if alpha <= 0.0 {
        return Err(Error::invalid("dirichlet alpha must be positive"));
    }
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if n_clients > data.n_samples() {
        return Err(Error::invalid(format!(
            "{} clients but only {} samples",
            n_clients,
            data.n_samples()
        )));
    }
    let mut r = rng.rng();
    let by_class = indices_by_class(data);

    const MAX_RETRIES: usize = 100;
    let mut last = None;
    for _ in 0..=MAX_RETRIES {
        let mut assignments = vec![Vec::new(); n_clients];
        for class_indices in &by_class {
            let mut class_indices = class_indices.clone();
            class_indices.shuffle(&mut r);
            let proportions = dirichlet_draw(n_clients, alpha, &mut r);
            let counts = largest_remainder_counts(&proportions, class_indices.len());
            let mut offset = 0;
            for (client, &count) in counts.iter().enumerate() {
                assignments[client].extend_from_slice(&class_indices[offset..offset + count]);
                offset += count;
            }
        }
        if assignments.iter().all(|a| !a.is_empty()) {
            return Ok(Partition { assignments });
        }
        last = Some(assignments);
    }

    // Rebalance: hand one sample from the currently largest client to each
    // empty one.
    let mut assignments = last.unwrap();
    for i in 0..n_clients {
        if assignments[i].is_empty() {
            let largest = (0..n_clients)
                .max_by_key(|&j| assignments[j].len())
                .unwrap();
            if assignments[largest].len() <= 1 {
                return Err(Error::config(
                    "cannot make every client non-empty: too few samples",
                ));
            }
            let moved = assignments[largest].pop().unwrap();
            assignments[i].push(moved);
        }
    }
    Ok(Partition { assignments })
}

fn dirichlet_draw(n: usize, alpha: f64, r: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(r)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.iter().map(|d| d / total).collect();
        }
    }
}

/// Integer apportionment of `total` by `proportions` (largest remainder,
/// ties by lowest index).
fn largest_remainder_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|&x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use std::collections::HashSet;

    fn histogram(data: &Dataset, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0usize; data.n_classes];
        for &i in indices {
            h[data.labels[i] as usize] += 1;
        }
        h
    }

    fn assert_valid_partition(p: &Partition, n_samples: usize) {
        let mut seen = HashSet::new();
        for a in &p.assignments {
            assert!(!a.is_empty(), "empty client shard");
            for &i in a {
                assert!(i < n_samples);
                assert!(seen.insert(i), "index {i} assigned twice");
            }
        }
    }

    #[test]
    fn iid_exact_split() {
        // 100 samples, 10 classes x 10 each, 10 clients: one per class per client.
        let data = gen_synthetic(10, 3, 100, 1.0, RngStream::new(3, 0)).unwrap();
        let p = iid_partition(&data, 10, RngStream::new(3, 1)).unwrap();
        assert_valid_partition(&p, 100);
        for a in &p.assignments {
            assert_eq!(histogram(&data, a), vec![1; 10]);
        }
    }

    #[test]
    fn iid_histogram_within_one() {
        let data = gen_synthetic(4, 3, 103, 1.0, RngStream::new(5, 0)).unwrap();
        let p = iid_partition(&data, 7, RngStream::new(5, 1)).unwrap();
        assert_valid_partition(&p, 103);
        for class in 0..4 {
            let counts: Vec<usize> = p
                .assignments
                .iter()
                .map(|a| histogram(&data, a)[class])
                .collect();
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "class {class} counts {counts:?}");
        }
        let total: usize = p.assignments.iter().map(Vec::len).sum();
        assert_eq!(total, 103);
    }

    #[test]
    fn iid_too_many_clients_rejected() {
        let data = gen_synthetic(2, 2, 5, 1.0, RngStream::new(1, 0)).unwrap();
        assert!(iid_partition(&data, 6, RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn dirichlet_huge_alpha_is_nearly_uniform() {
        let data = gen_synthetic(5, 3, 5000, 1.0, RngStream::new(7, 0)).unwrap();
        let p = dirichlet_partition(&data, 10, 1e6, RngStream::new(7, 1)).unwrap();
        assert_valid_partition(&p, 5000);
        let per_class = 1000.0 / 10.0;
        for a in &p.assignments {
            for &count in &histogram(&data, a) {
                assert!(
                    (count as f64 - per_class).abs() / per_class < 0.05,
                    "count {count} vs expected {per_class}"
                );
            }
        }
    }

    fn mean_label_entropy(data: &Dataset, p: &Partition) -> f64 {
        let mut total = 0.0;
        for a in &p.assignments {
            let h = histogram(data, a);
            let n: usize = h.iter().sum();
            let mut ent = 0.0;
            for &c in &h {
                if c > 0 {
                    let q = c as f64 / n as f64;
                    ent -= q * q.ln();
                }
            }
            total += ent / (data.n_classes as f64).ln();
        }
        total / p.n_clients() as f64
    }

    #[test]
    fn dirichlet_smaller_alpha_is_more_skewed() {
        let data = gen_synthetic(10, 3, 5000, 1.0, RngStream::new(11, 0)).unwrap();
        let mut low = 0.0;
        let mut high = 0.0;
        for seed in 0..20 {
            let p_low = dirichlet_partition(&data, 50, 0.1, RngStream::new(seed, 1)).unwrap();
            let p_high = dirichlet_partition(&data, 50, 0.9, RngStream::new(seed, 2)).unwrap();
            low += mean_label_entropy(&data, &p_low);
            high += mean_label_entropy(&data, &p_high);
        }
        assert!(
            low / 20.0 < high / 20.0,
            "entropy at alpha=0.1 ({low}) should be below alpha=0.9 ({high})"
        );
    }

    #[test]
    fn dirichlet_partition_is_valid() {
        let data = gen_synthetic(3, 2, 200, 1.0, RngStream::new(13, 0)).unwrap();
        for seed in 0..5 {
            let p = dirichlet_partition(&data, 8, 0.3, RngStream::new(seed, 3)).unwrap();
            assert_valid_partition(&p, 200);
        }
    }
}
