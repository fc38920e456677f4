//! The server-side aggregation rules. All nine operate in model space: the
//! rules that are defined over updates (norm-bounding, trust-score
//! weighting, centered clipping) subtract the current global model
//! internally and re-add it afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{self, ParamVec};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    FedAvg,
    Median,
    TrimmedMean,
    NormBounding,
    Mkrum,
    Bulyan,
    Fltrust,
    CenteredClipping,
    Dnc,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 9] = [
        AggregatorKind::FedAvg,
        AggregatorKind::Median,
        AggregatorKind::TrimmedMean,
        AggregatorKind::NormBounding,
        AggregatorKind::Mkrum,
        AggregatorKind::Bulyan,
        AggregatorKind::Fltrust,
        AggregatorKind::CenteredClipping,
        AggregatorKind::Dnc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorKind::FedAvg => "fed_avg",
            AggregatorKind::Median => "median",
            AggregatorKind::TrimmedMean => "trimmed_mean",
            AggregatorKind::NormBounding => "norm_bounding",
            AggregatorKind::Mkrum => "mkrum",
            AggregatorKind::Bulyan => "bulyan",
            AggregatorKind::Fltrust => "fltrust",
            AggregatorKind::CenteredClipping => "centered_clipping",
            AggregatorKind::Dnc => "dnc",
        }
    }

    /// Whether the rule reports a survivor list.
    pub fn exposes_selection(&self) -> bool {
        matches!(
            self,
            AggregatorKind::Mkrum | AggregatorKind::Bulyan | AggregatorKind::Dnc
        )
    }
}

/// Everything a rule may need for one aggregation call.
#[derive(Debug, Clone)]
pub struct AggregationInput<'a> {
    pub client_models: &'a [ParamVec],
    /// Current global model; reference point for update-space rules and the
    /// starting center for centered clipping.
    pub prev_global: &'a [f64],
    /// Server-side robustness budget `m`.
    pub assumed_malicious: usize,
    pub norm_bound_tau: f64,
    pub cc_radius_tau: f64,
    pub cc_iters: usize,
    /// Honest update computed by the server on its own root data
    /// (trust-score rule only).
    pub server_root_update: Option<&'a [f64]>,
    pub dnc_subsample_dim: usize,
    pub dnc_filter_frac: f64,
    pub dnc_iters: usize,
    /// Multi-krum selection count; `None` means `N - m`.
    pub mkrum_select: Option<usize>,
    /// Enforce the classical `N >= 4m + 3` feasibility bound instead of
    /// clamping at desk scale.
    pub strict_bulyan: bool,
    /// Stream for aggregator-internal randomness (coordinate subsampling,
    /// power-iteration start).
    pub rng: RngStream,
}

impl<'a> AggregationInput<'a> {
    pub fn new(client_models: &'a [ParamVec], prev_global: &'a [f64], assumed_malicious: usize) -> Self {
        Self {
            client_models,
            prev_global,
            assumed_malicious,
            norm_bound_tau: 5.0,
            cc_radius_tau: 10.0,
            cc_iters: 3,
            server_root_update: None,
            dnc_subsample_dim: 1000,
            dnc_filter_frac: 1.0,
            dnc_iters: 1,
            mkrum_select: None,
            strict_bulyan: false,
            rng: RngStream::new(0, 0),
        }
    }

    fn n(&self) -> usize {
        self.client_models.len()
    }

    fn r(&self) -> usize {
        self.prev_global.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(Error::invalid("no client models to aggregate"));
        }
        let r = self.r();
        if self.client_models.iter().any(|m| m.len() != r) {
            return Err(Error::invalid("client model length mismatch"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AggregationOutcome {
    pub aggregate: ParamVec,
    /// Survivors, for rules that select a subset of clients.
    pub selected_indices: Option<Vec<usize>>,
    /// Per-client trust scores, for rules that weight clients.
    pub weights: Option<Vec<f64>>,
}

impl AggregationOutcome {
    fn plain(aggregate: ParamVec) -> Self {
        Self {
            aggregate,
            selected_indices: None,
            weights: None,
        }
    }
}

/// Dispatch one aggregation call.
pub fn aggregate(kind: AggregatorKind, input: &AggregationInput) -> Result<AggregationOutcome> {
    match kind {
        AggregatorKind::FedAvg => fed_avg(input),
        AggregatorKind::Median => coord_median(input),
        AggregatorKind::TrimmedMean => trimmed_mean(input),
        AggregatorKind::NormBounding => norm_bounding(input),
        AggregatorKind::Mkrum => {
            let c = input.mkrum_select.unwrap_or_else(|| input.n().saturating_sub(input.assumed_malicious));
            multi_krum(input, c)
        }
        AggregatorKind::Bulyan => bulyan(input),
        AggregatorKind::Fltrust => fltrust(input),
        AggregatorKind::CenteredClipping => centered_clipping(input),
        AggregatorKind::Dnc => dnc(input),
    }
}

fn mean_of(models: &[ParamVec], indices: &[usize], r: usize) -> ParamVec {
    let mut out = vec![0.0; r];
    for &i in indices {
        params::axpy(&mut out, 1.0, &models[i]);
    }
    let inv = 1.0 / indices.len() as f64;
    for v in out.iter_mut() {
        *v *= inv;
    }
    out
}

pub fn fed_avg(input: &AggregationInput) -> Result<AggregationOutcome> {
    input.validate()?;
    let all: Vec<usize> = (0..input.n()).collect();
    Ok(AggregationOutcome::plain(mean_of(input.client_models, &all, input.r())))
}

pub fn coord_median(input: &AggregationInput) -> Result<AggregationOutcome> {
    input.validate()?;
    let n = input.n();
    let mut out = vec![0.0; input.r()];
    let mut column = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        for (i, m) in input.client_models.iter().enumerate() {
            column[i] = m[j];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        *o = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
    }
    Ok(AggregationOutcome::plain(out))
}

pub fn trimmed_mean(input: &AggregationInput) -> Result<AggregationOutcome> {
    input.validate()?;
    trimmed_mean_with(input, input.assumed_malicious)
}

fn trimmed_mean_with(input: &AggregationInput, trim: usize) -> Result<AggregationOutcome> {
    let n = input.n();
    if n <= 2 * trim {
        return Err(Error::invalid(format!(
            "trimmed mean needs more than {} clients, got {n}",
            2 * trim
        )));
    }
    let mut out = vec![0.0; input.r()];
    let mut column = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate() {
        for (i, m) in input.client_models.iter().enumerate() {
            column[i] = m[j];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kept = &column[trim..n - trim];
        *o = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(AggregationOutcome::plain(out))
}

pub fn norm_bounding(input: &AggregationInput) -> Result<AggregationOutcome> {
    input.validate()?;
    if input.norm_bound_tau <= 0.0 {
        return Err(Error::invalid("norm bound tau must be positive"));
    }
    let r = input.r();
    let mut sum = vec![0.0; r];
    for m in input.client_models {
        let update = params::sub(m, input.prev_global);
        let norm = params::norm2(&update);
        let factor = if norm > input.norm_bound_tau {
            input.norm_bound_tau / norm
        } else {
            1.0
        };
        params::axpy(&mut sum, factor / input.n() as f64, &update);
    }
    Ok(AggregationOutcome::plain(params::add(input.prev_global, &sum)))
}

/// Krum scores over an index subset: sum of squared distances to the
/// `live - m - 2` nearest peers. When the subset is too small for that
/// neighbor count the scores degenerate to zero and ties resolve to the
/// lowest index, which is what lets iterated selection run to completion.
fn krum_scores_subset(
    dist2: &[Vec<f64>],
    subset: &[usize],
    assumed_malicious: usize,
) -> Vec<f64> {
    let live = subset.len();
    let neighbors = live.saturating_sub(assumed_malicious + 2);
    subset
        .iter()
        .map(|&i| {
            if neighbors == 0 {
                return 0.0;
            }
            let mut dists: Vec<f64> = subset
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| dist2[i][j])
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists[..neighbors].iter().sum()
        })
        .collect()
}

fn pairwise_dist2(models: &[ParamVec]) -> Vec<Vec<f64>> {
    let n = models.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = params::dist2(&models[i], &models[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// The single-winner selection: index of the client closest to its
/// `N - m - 2` nearest peers (ties to the lowest index).
pub fn krum_select(input: &AggregationInput) -> Result<usize> {
    input.validate()?;
    let n = input.n();
    let m = input.assumed_malicious;
    if n < m + 3 {
        return Err(Error::invalid(format!(
            "krum needs at least m + 3 = {} clients, got {n}",
            m + 3
        )));
    }
    let d = pairwise_dist2(input.client_models);
    let subset: Vec<usize> = (0..n).collect();
    let scores = krum_scores_subset(&d, &subset, m);
    Ok(argmin(&scores))
}

fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

/// Iterated krum: select, remove, repeat `c` times; aggregate is the mean of
/// the selected clients.
pub fn multi_krum(input: &AggregationInput, c: usize) -> Result<AggregationOutcome> {
    input.validate()?;
    let n = input.n();
    if c < 1 || c > n {
        return Err(Error::invalid(format!(
            "multi-krum selection count {c} out of range 1..={n}"
        )));
    }
    let d = pairwise_dist2(input.client_models);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(c);
    for _ in 0..c {
        let scores = krum_scores_subset(&d, &remaining, input.assumed_malicious);
        let pick = argmin(&scores);
        selected.push(remaining.remove(pick));
    }
    selected.sort_unstable();
    let aggregate = mean_of(input.client_models, &selected, input.r());
    Ok(AggregationOutcome {
        aggregate,
        selected_indices: Some(selected),
        weights: None,
    })
}

/// Two-stage rule: iterated krum picks `N - 2m` candidates, then per
/// coordinate the `beta = theta - 2m` values nearest the candidate median
/// are averaged. Desk-scale inputs may clamp `beta` to one instead of
/// enforcing `N >= 4m + 3`.
pub fn bulyan(input: &AggregationInput) -> Result<AggregationOutcome> {
    input.validate()?;
    let n = input.n();
    let m = input.assumed_malicious;
    if input.strict_bulyan && n < 4 * m + 3 {
        return Err(Error::invalid(format!(
            "bulyan needs at least 4m + 3 = {} clients, got {n}",
            4 * m + 3
        )));
    }
    let theta = (n.saturating_sub(2 * m)).max(1);
    let beta = (theta.saturating_sub(2 * m)).max(1);
    let selection = multi_krum(input, theta)?;
    let selected = selection.selected_indices.unwrap();

    let mut out = vec![0.0; input.r()];
    let mut column: Vec<f64> = vec![0.0; selected.len()];
    for (j, o) in out.iter_mut().enumerate() {
        for (slot, &i) in selected.iter().enumerate() {
            column[slot] = input.client_models[i][j];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if column.len() % 2 == 1 {
            column[column.len() / 2]
        } else {
            0.5 * (column[column.len() / 2 - 1] + column[column.len() / 2])
        };
        // Take the beta values closest to the median; ties by sort order.
        let mut by_closeness: Vec<f64> = column.clone();
        by_closeness.sort_by(|a, b| {
            (a - median)
                .abs()
                .partial_cmp(&(b - median).abs())
                .unwrap()
                .then(a.partial_cmp(b).unwrap())
        });
        *o = by_closeness[..beta].iter().sum::<f64>() / beta as f64;
    }
    Ok(AggregationOutcome {
        aggregate: out,
        selected_indices: Some(selected),
        weights: None,
    })
}

/// Trust-score weighting against the server's own root update: clients are
/// scored by clipped cosine similarity, rescaled to the root update's norm,
/// and averaged by score.
pub fn fltrust(input: &AggregationInput) -> Result<AggregationOutcome> {
    input.validate()?;
    let root = input
        .server_root_update
        .ok_or_else(|| Error::invalid("fltrust requires a server root update"))?;
    if root.len() != input.r() {
        return Err(Error::invalid("server root update length mismatch"));
    }
    let root_norm = params::norm2(root);
    if root_norm == 0.0 {
        return Err(Error::invalid("server root update must be nonzero"));
    }
    let mut weights = Vec::with_capacity(input.n());
    let mut sum = vec![0.0; input.r()];
    let mut total = 0.0;
    for m in input.client_models {
        let update = params::sub(m, input.prev_global);
        let norm = params::norm2(&update);
        let score = if norm == 0.0 {
            0.0
        } else {
            (params::dot(&update, root) / (norm * root_norm)).max(0.0)
        };
        weights.push(score);
        if score > 0.0 {
            params::axpy(&mut sum, score * root_norm / norm, &update);
            total += score;
        }
    }
    let aggregate_update = if total > 0.0 {
        params::scale(&sum, 1.0 / total)
    } else {
        vec![0.0; input.r()]
    };
    Ok(AggregationOutcome {
        aggregate: params::add(input.prev_global, &aggregate_update),
        selected_indices: None,
        weights: Some(weights),
    })
}

/// Iterative robust center: starting from the current global model, move
/// toward the mean of the inputs with per-client steps clipped to radius
/// tau.
pub fn centered_clipping(input: &AggregationInput) -> Result<AggregationOutcome> {
    input.validate()?;
    if input.cc_radius_tau <= 0.0 || input.cc_iters < 1 {
        return Err(Error::invalid("centered clipping needs tau > 0 and iters >= 1"));
    }
    let mut center = input.prev_global.to_vec();
    let inv_n = 1.0 / input.n() as f64;
    for _ in 0..input.cc_iters {
        let mut step = vec![0.0; input.r()];
        for m in input.client_models {
            let diff = params::sub(m, &center);
            let norm = params::norm2(&diff);
            let factor = if norm > input.cc_radius_tau {
                input.cc_radius_tau / norm
            } else {
                1.0
            };
            params::axpy(&mut step, factor * inv_n, &diff);
        }
        params::axpy(&mut center, 1.0, &step);
    }
    Ok(AggregationOutcome::plain(center))
}

/// Spectral outlier filtering: project centered (subsampled) models onto
/// their top singular direction, drop the highest scorers, average the
/// survivors. Passes chain on the surviving set.
pub fn dnc(input: &AggregationInput) -> Result<AggregationOutcome> {
    input.validate()?;
    let n = input.n();
    if n < 2 {
        return Err(Error::invalid("dnc needs at least two clients"));
    }
    if input.dnc_iters < 1 || input.dnc_filter_frac <= 0.0 {
        return Err(Error::invalid("dnc needs iters >= 1 and a positive filter fraction"));
    }
    let r = input.r();
    let sub_dim = input.dnc_subsample_dim.clamp(1, r);
    let drop_per_pass = ((input.dnc_filter_frac * input.assumed_malicious as f64).ceil() as usize).min(n - 1);
    let mut rng = input.rng.rng();
    let mut survivors: Vec<usize> = (0..n).collect();

    for _ in 0..input.dnc_iters {
        if survivors.len() <= 1 || drop_per_pass == 0 {
            break;
        }
        let coords = sample_coords(r, sub_dim, &mut rng);
        // Centered subsampled matrix, one row per surviving client.
        let mut rows: Vec<Vec<f64>> = survivors
            .iter()
            .map(|&i| coords.iter().map(|&c| input.client_models[i][c]).collect())
            .collect();
        let mut mean = vec![0.0; sub_dim];
        for row in &rows {
            params::axpy(&mut mean, 1.0, row);
        }
        for v in mean.iter_mut() {
            *v /= rows.len() as f64;
        }
        for row in rows.iter_mut() {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let direction = top_right_singular_direction(&rows, &mut rng);
        let mut scored: Vec<(usize, f64)> = survivors
            .iter()
            .zip(&rows)
            .map(|(&i, row)| {
                let p = params::dot(row, &direction);
                (i, p * p)
            })
            .collect();
        // Highest scores are outliers; keep the rest. Ties resolve toward
        // keeping the lowest client index. A zero-variance pass (all scores
        // exactly zero) removes no one.
        scored.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap()
                .then(a.0.cmp(&b.0))
        });
        if scored.last().map(|&(_, s)| s) == Some(0.0) {
            continue;
        }
        let keep = scored.len().saturating_sub(drop_per_pass).max(1);
        survivors = scored[..keep].iter().map(|&(i, _)| i).collect();
        survivors.sort_unstable();
    }

    let aggregate = mean_of(input.client_models, &survivors, r);
    Ok(AggregationOutcome {
        aggregate,
        selected_indices: Some(survivors),
        weights: None,
    })
}

fn sample_coords(r: usize, sub_dim: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    if sub_dim >= r {
        return (0..r).collect();
    }
    // Partial Fisher-Yates over a scratch index vector.
    let mut idx: Vec<usize> = (0..r).collect();
    for i in 0..sub_dim {
        let j = rng.random_range(i..r);
        idx.swap(i, j);
    }
    idx.truncate(sub_dim);
    idx
}

/// Power iteration for the top right-singular direction of a centered
/// row matrix (50 steps, seeded start vector).
fn top_right_singular_direction(rows: &[Vec<f64>], rng: &mut impl rand::Rng) -> Vec<f64> {
    let dim = rows[0].len();
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = params::norm2(&v);
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    for _ in 0..50 {
        // v <- normalize(A^T (A v))
        let projected: Vec<f64> = rows.iter().map(|row| params::dot(row, &v)).collect();
        let mut next = vec![0.0; dim];
        for (row, &p) in rows.iter().zip(&projected) {
            params::axpy(&mut next, p, row);
        }
        let norm = params::norm2(&next);
        if norm < 1e-300 {
            // Zero-variance inputs: any direction gives all-zero scores.
            return v;
        }
        for x in next.iter_mut() {
            *x /= norm;
        }
        v = next;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input<'a>(models: &'a [ParamVec], global: &'a [f64], m: usize) -> AggregationInput<'a> {
        AggregationInput::new(models, global, m)
    }

    #[test]
    fn fed_avg_means() {
        let models = vec![vec![1.0], vec![2.0], vec![3.0]];
        let g = vec![0.0];
        let out = fed_avg(&input(&models, &g, 0)).unwrap();
        assert_eq!(out.aggregate, vec![2.0]);
    }

    #[test]
    fn fed_avg_identical_clients_fixed_point() {
        let models = vec![vec![0.5, -1.0]; 4];
        let g = vec![0.0, 0.0];
        let out = fed_avg(&input(&models, &g, 0)).unwrap();
        assert_eq!(out.aggregate, vec![0.5, -1.0]);
    }

    #[test]
    fn median_example() {
        let models = vec![vec![1.0, 5.0], vec![2.0, 3.0], vec![9.0, 4.0]];
        let g = vec![0.0, 0.0];
        let out = coord_median(&input(&models, &g, 0)).unwrap();
        assert_eq!(out.aggregate, vec![2.0, 4.0]);
    }

    #[test]
    fn median_even_count_averages_central_pair() {
        let models = vec![vec![1.0], vec![2.0], vec![5.0], vec![10.0]];
        let g = vec![0.0];
        let out = coord_median(&input(&models, &g, 0)).unwrap();
        assert_eq!(out.aggregate, vec![3.5]);
    }

    #[test]
    fn median_bounded_by_benign_range() {
        let mut rng = RngStream::new(21, 0).rng();
        use rand::Rng;
        for _ in 0..50 {
            let mut models: Vec<ParamVec> = (0..5)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let benign: Vec<ParamVec> = models[..4].to_vec();
            models[4] = vec![1e9; 3];
            let g = vec![0.0; 3];
            let out = coord_median(&input(&models, &g, 1)).unwrap();
            for j in 0..3 {
                let lo = benign.iter().map(|m| m[j]).fold(f64::INFINITY, f64::min);
                let hi = benign.iter().map(|m| m[j]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out.aggregate[j] >= lo && out.aggregate[j] <= hi);
            }
        }
    }

    #[test]
    fn trimmed_mean_example() {
        let models = vec![vec![0.0], vec![10.0], vec![2.0], vec![4.0]];
        let g = vec![0.0];
        let out = trimmed_mean(&input(&models, &g, 1)).unwrap();
        assert_eq!(out.aggregate, vec![3.0]);
    }

    #[test]
    fn trimmed_mean_zero_budget_is_fed_avg() {
        let models = vec![vec![1.0, 2.0], vec![3.0, -2.0], vec![5.0, 0.0]];
        let g = vec![0.0, 0.0];
        let a = trimmed_mean(&input(&models, &g, 0)).unwrap();
        let b = fed_avg(&input(&models, &g, 0)).unwrap();
        for (x, y) in a.aggregate.iter().zip(&b.aggregate) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn trimmed_mean_infeasible_rejected() {
        let models = vec![vec![1.0], vec![2.0]];
        let g = vec![0.0];
        assert!(trimmed_mean(&input(&models, &g, 1)).is_err());
    }

    #[test]
    fn norm_bounding_scales_long_updates() {
        let models = vec![vec![3.0, 4.0]];
        let g = vec![0.0, 0.0];
        let mut inp = input(&models, &g, 0);
        inp.norm_bound_tau = 1.0;
        let out = norm_bounding(&inp).unwrap();
        assert!((out.aggregate[0] - 0.6).abs() < 1e-12);
        assert!((out.aggregate[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn norm_bounding_within_tau_is_fed_avg() {
        let models = vec![vec![0.1, 0.2], vec![-0.3, 0.0]];
        let g = vec![0.0, 0.0];
        let mut inp = input(&models, &g, 0);
        inp.norm_bound_tau = 10.0;
        let nb = norm_bounding(&inp).unwrap();
        let fa = fed_avg(&inp).unwrap();
        for (x, y) in nb.aggregate.iter().zip(&fa.aggregate) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn krum_example_scores() {
        let models = vec![vec![0.0], vec![0.1], vec![0.2], vec![10.0]];
        let g = vec![0.0];
        let picked = krum_select(&input(&models, &g, 1)).unwrap();
        assert_eq!(picked, 0); // scores 0.01, 0.01, 0.01, 96.04; tie -> lowest
    }

    #[test]
    fn krum_identical_clients_tie_break() {
        let models = vec![vec![1.0, 1.0]; 5];
        let g = vec![0.0, 0.0];
        assert_eq!(krum_select(&input(&models, &g, 1)).unwrap(), 0);
    }

    #[test]
    fn krum_too_few_clients_rejected() {
        let models = vec![vec![1.0], vec![2.0], vec![3.0]];
        let g = vec![0.0];
        assert!(krum_select(&input(&models, &g, 1)).is_err());
    }

    #[test]
    fn multi_krum_example() {
        let models = vec![vec![0.0], vec![0.1], vec![0.2], vec![10.0]];
        let g = vec![0.0];
        let out = multi_krum(&input(&models, &g, 1), 2).unwrap();
        assert_eq!(out.selected_indices.as_deref(), Some(&[0, 1][..]));
        assert!((out.aggregate[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn multi_krum_select_all_is_fed_avg() {
        let models = vec![vec![1.0, 0.0], vec![5.0, 2.0], vec![-1.0, 4.0]];
        let g = vec![0.0, 0.0];
        let out = multi_krum(&input(&models, &g, 1), 3).unwrap();
        let fa = fed_avg(&input(&models, &g, 1)).unwrap();
        for (x, y) in out.aggregate.iter().zip(&fa.aggregate) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bulyan_zero_budget_is_fed_avg() {
        let models = vec![vec![1.0, 2.0], vec![0.0, -1.0], vec![4.0, 4.0]];
        let g = vec![0.0, 0.0];
        let out = bulyan(&input(&models, &g, 0)).unwrap();
        let fa = fed_avg(&input(&models, &g, 0)).unwrap();
        for (x, y) in out.aggregate.iter().zip(&fa.aggregate) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bulyan_strict_feasibility() {
        let models = vec![vec![1.0]; 6];
        let g = vec![0.0];
        let mut inp = input(&models, &g, 1);
        inp.strict_bulyan = true;
        assert!(bulyan(&inp).is_err()); // needs 4m+3 = 7
        inp.strict_bulyan = false;
        assert!(bulyan(&inp).is_ok());
    }

    #[test]
    fn bulyan_output_within_selected_range() {
        let mut rng = RngStream::new(22, 0).rng();
        use rand::Rng;
        for _ in 0..20 {
            let models: Vec<ParamVec> = (0..7)
                .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let g = vec![0.0; 3];
            let out = bulyan(&input(&models, &g, 1)).unwrap();
            let sel = out.selected_indices.unwrap();
            for j in 0..3 {
                let lo = sel.iter().map(|&i| models[i][j]).fold(f64::INFINITY, f64::min);
                let hi = sel.iter().map(|&i| models[i][j]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out.aggregate[j] >= lo - 1e-12 && out.aggregate[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn fltrust_example() {
        let models = vec![vec![2.0, 0.0], vec![-1.0, 0.0], vec![0.0, 3.0]];
        let g = vec![0.0, 0.0];
        let root = vec![1.0, 0.0];
        let mut inp = input(&models, &g, 0);
        inp.server_root_update = Some(&root);
        let out = fltrust(&inp).unwrap();
        assert_eq!(out.weights.as_deref(), Some(&[1.0, 0.0, 0.0][..]));
        assert!((out.aggregate[0] - 1.0).abs() < 1e-12);
        assert!(out.aggregate[1].abs() < 1e-12);
    }

    #[test]
    fn fltrust_parallel_client_matches_root_direction() {
        let models = vec![vec![0.0, 5.0]];
        let g = vec![0.0, 0.0];
        let root = vec![0.0, 2.0];
        let mut inp = input(&models, &g, 0);
        inp.server_root_update = Some(&root);
        let out = fltrust(&inp).unwrap();
        assert!((out.aggregate[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fltrust_scale_invariance_per_client() {
        let models_a = vec![vec![2.0, 1.0], vec![1.0, -1.0]];
        let models_b = vec![vec![20.0, 10.0], vec![1.0, -1.0]];
        let g = vec![0.0, 0.0];
        let root = vec![1.0, 0.5];
        let mut ia = input(&models_a, &g, 0);
        ia.server_root_update = Some(&root);
        let mut ib = input(&models_b, &g, 0);
        ib.server_root_update = Some(&root);
        let a = fltrust(&ia).unwrap();
        let b = fltrust(&ib).unwrap();
        for (x, y) in a.aggregate.iter().zip(&b.aggregate) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fltrust_all_rejected_returns_global() {
        let models = vec![vec![-1.0, 0.0]];
        let g = vec![0.0, 0.0];
        let root = vec![1.0, 0.0];
        let mut inp = input(&models, &g, 0);
        inp.server_root_update = Some(&root);
        let out = fltrust(&inp).unwrap();
        assert_eq!(out.aggregate, g);
    }

    #[test]
    fn centered_clipping_example() {
        let models = vec![vec![2.0, 0.0], vec![0.0, 0.0]];
        let g = vec![0.0, 0.0];
        let mut inp = input(&models, &g, 0);
        inp.cc_radius_tau = 1.0;
        inp.cc_iters = 1;
        let out = centered_clipping(&inp).unwrap();
        assert!((out.aggregate[0] - 0.5).abs() < 1e-12);
        assert!(out.aggregate[1].abs() < 1e-12);
    }

    #[test]
    fn centered_clipping_no_clip_is_mean_after_one_iter() {
        let models = vec![vec![0.5, 0.1], vec![-0.2, 0.3]];
        let g = vec![0.0, 0.0];
        let mut inp = input(&models, &g, 0);
        inp.cc_radius_tau = 100.0;
        inp.cc_iters = 1;
        let out = centered_clipping(&inp).unwrap();
        let fa = fed_avg(&inp).unwrap();
        for (x, y) in out.aggregate.iter().zip(&fa.aggregate) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_clipping_steps_contract() {
        let mut rng = RngStream::new(23, 0).rng();
        use rand::Rng;
        for _ in 0..20 {
            let models: Vec<ParamVec> = (0..6)
                .map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Track ||v_{j+1} - v_j|| over successive iteration counts.
            let mut prev_center = g.clone();
            let mut prev_step = f64::INFINITY;
            for iters in 1..=6 {
                let mut inp = input(&models, &g, 0);
                inp.cc_radius_tau = 1.0;
                inp.cc_iters = iters;
                let out = centered_clipping(&inp).unwrap();
                let step = params::norm2(&params::sub(&out.aggregate, &prev_center));
                assert!(step <= prev_step + 1e-9, "step grew: {step} > {prev_step}");
                prev_step = step;
                prev_center = out.aggregate;
            }
        }
    }

    #[test]
    fn dnc_identical_clients_keep_everyone_scored_zero() {
        let models = vec![vec![1.0, 2.0, 3.0]; 6];
        let g = vec![0.0; 3];
        let mut inp = input(&models, &g, 2);
        inp.dnc_subsample_dim = 3;
        let out = dnc(&inp).unwrap();
        assert_eq!(out.selected_indices.unwrap(), vec![0, 1, 2, 3, 4, 5]);
        for (x, y) in out.aggregate.iter().zip(&models[0]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dnc_removes_planted_outlier() {
        let mut removed = 0;
        for seed in 0..40 {
            let mut rng = RngStream::new(seed, 7).rng();
            use rand::Rng;
            let mut models: Vec<ParamVec> = (0..10)
                .map(|_| (0..6).map(|_| rng.random_range(-0.1..0.1)).collect())
                .collect();
            models.push((0..6).map(|i| if i == 0 { 25.0 } else { 0.0 }).collect());
            let g = vec![0.0; 6];
            let mut inp = input(&models, &g, 1);
            inp.dnc_subsample_dim = 6;
            inp.rng = RngStream::new(seed, 8);
            let out = dnc(&inp).unwrap();
            if !out.selected_indices.unwrap().contains(&10) {
                removed += 1;
            }
        }
        assert!(removed >= 38, "outlier removed in only {removed}/40 runs");
    }

    #[test]
    fn dnc_survivor_mean_matches_fed_avg_of_survivors() {
        let mut rng = RngStream::new(24, 0).rng();
        use rand::Rng;
        let models: Vec<ParamVec> = (0..8)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let g = vec![0.0; 5];
        let mut inp = input(&models, &g, 2);
        inp.dnc_subsample_dim = 5;
        inp.rng = RngStream::new(24, 1);
        let out = dnc(&inp).unwrap();
        let survivors = out.selected_indices.unwrap();
        let mean = mean_of(&models, &survivors, 5);
        for (x, y) in out.aggregate.iter().zip(&mean) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dnc_subsample_dim_clamped_to_r() {
        let models = vec![vec![1.0, 2.0], vec![1.1, 2.1], vec![0.9, 1.9]];
        let g = vec![0.0, 0.0];
        let mut inp = input(&models, &g, 1);
        inp.dnc_subsample_dim = 1000;
        assert!(dnc(&inp).is_ok());
    }

    #[test]
    fn robust_rules_resist_single_huge_outlier_fed_avg_does_not() {
        let mut rng = RngStream::new(25, 0).rng();
        use rand::Rng;
        let mut models: Vec<ParamVec> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        models[4] = vec![1e6; 3];
        let g = vec![0.0; 3];
        let inp = input(&models, &g, 1);
        let benign_hi = 1.0;
        for kind in [AggregatorKind::Median, AggregatorKind::TrimmedMean, AggregatorKind::Mkrum, AggregatorKind::Bulyan] {
            let out = aggregate(kind, &inp).unwrap();
            for &v in &out.aggregate {
                assert!(v.abs() <= 10.0 * benign_hi, "{} leaked outlier: {v}", kind.name());
            }
        }
        let fa = fed_avg(&inp).unwrap();
        assert!(fa.aggregate.iter().any(|&v| v.abs() >= 1e4));
    }

    #[test]
    fn fed_avg_is_linear() {
        let mut rng = RngStream::new(26, 0).rng();
        use rand::Rng;
        let xs: Vec<ParamVec> = (0..4).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<ParamVec> = (0..4).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<ParamVec> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| x.iter().zip(y).map(|(xv, yv)| a * xv + b * yv).collect())
            .collect();
        let g = vec![0.0; 3];
        let fx = fed_avg(&input(&xs, &g, 0)).unwrap().aggregate;
        let fy = fed_avg(&input(&ys, &g, 0)).unwrap().aggregate;
        let fc = fed_avg(&input(&combo, &g, 0)).unwrap().aggregate;
        for j in 0..3 {
            assert!((fc[j] - (a * fx[j] + b * fy[j])).abs() < 1e-12);
        }
    }
}
