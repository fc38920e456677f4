//! Independent brute-force reference implementations and the check suites
//! built on them. Everything here recomputes results from first principles,
//! separately from the production code paths it validates.

use rand::Rng;

use crate::agr::{self, AggregationInput};
use crate::attack::simulate_scalar_plant;
use crate::params::ParamVec;
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

// ---- reference implementations ----------------------------------------

pub fn mean_oracle(models: &[ParamVec]) -> ParamVec {
    let r = models[0].len();
    let mut out = vec![0.0; r];
    // Summed in reverse client order on purpose, so ordering bugs in the
    // implementation cannot cancel out here.
    for j in 0..r {
        let mut acc = 0.0;
        for m in models.iter().rev() {
            acc += m[j];
        }
        out[j] = acc / models.len() as f64;
    }
    out
}

pub fn median_oracle(models: &[ParamVec]) -> ParamVec {
    let n = models.len();
    let r = models[0].len();
    let mut out = vec![0.0; r];
    for j in 0..r {
        // Insertion sort, written out.
        let mut column: Vec<f64> = models.iter().map(|m| m[j]).collect();
        for i in 1..n {
            let v = column[i];
            let mut k = i;
            while k > 0 && column[k - 1] > v {
                column[k] = column[k - 1];
                k -= 1;
            }
            column[k] = v;
        }
        out[j] = if n % 2 == 1 {
            column[n / 2]
        } else {
            (column[n / 2 - 1] + column[n / 2]) / 2.0
        };
    }
    out
}

/// Trimmed mean by repeatedly deleting the extremes instead of sorting.
pub fn trimmed_mean_oracle(models: &[ParamVec], trim: usize) -> ParamVec {
    let r = models[0].len();
    let mut out = vec![0.0; r];
    for j in 0..r {
        let mut column: Vec<f64> = models.iter().map(|m| m[j]).collect();
        for _ in 0..trim {
            let max_at = column
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            column.remove(max_at);
            let min_at = column
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            column.remove(min_at);
        }
        out[j] = column.iter().sum::<f64>() / column.len() as f64;
    }
    out
}

pub fn norm_bounding_oracle(models: &[ParamVec], global: &[f64], tau: f64) -> ParamVec {
    let r = global.len();
    let mut sum = vec![0.0; r];
    for m in models {
        let mut norm2 = 0.0;
        for j in 0..r {
            let u = m[j] - global[j];
            norm2 += u * u;
        }
        let norm = norm2.sqrt();
        let factor = if norm > tau { tau / norm } else { 1.0 };
        for j in 0..r {
            sum[j] += factor * (m[j] - global[j]);
        }
    }
    let mut out = vec![0.0; r];
    for j in 0..r {
        out[j] = global[j] + sum[j] / models.len() as f64;
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exhaustive krum over an index subset, mirroring the definition directly.
pub fn krum_oracle_subset(models: &[ParamVec], subset: &[usize], m: usize) -> usize {
    let live = subset.len();
    let neighbors = live.saturating_sub(m + 2);
    let mut best = subset[0];
    let mut best_score = f64::INFINITY;
    for &i in subset {
        let score = if neighbors == 0 {
            0.0
        } else {
            let mut dists: Vec<f64> = subset
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| sq_dist(&models[i], &models[j]))
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists[..neighbors].iter().sum()
        };
        if score < best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

pub fn krum_oracle(models: &[ParamVec], m: usize) -> usize {
    let all: Vec<usize> = (0..models.len()).collect();
    krum_oracle_subset(models, &all, m)
}

pub fn multi_krum_oracle(models: &[ParamVec], m: usize, c: usize) -> (Vec<usize>, ParamVec) {
    let mut remaining: Vec<usize> = (0..models.len()).collect();
    let mut selected = Vec::new();
    for _ in 0..c {
        let pick = krum_oracle_subset(models, &remaining, m);
        remaining.retain(|&i| i != pick);
        selected.push(pick);
    }
    selected.sort_unstable();
    (selected.clone(), mean_oracle(&selected.iter().map(|&i| models[i].clone()).collect::<Vec<_>>()))
}

pub fn bulyan_oracle(models: &[ParamVec], m: usize) -> ParamVec {
    let n = models.len();
    let theta = n.saturating_sub(2 * m).max(1);
    let beta = theta.saturating_sub(2 * m).max(1);
    let (selected, _) = multi_krum_oracle(models, m, theta);
    let chosen: Vec<ParamVec> = selected.iter().map(|&i| models[i].clone()).collect();
    let med = median_oracle(&chosen);
    let r = models[0].len();
    let mut out = vec![0.0; r];
    for j in 0..r {
        let mut vals: Vec<f64> = chosen.iter().map(|c| c[j]).collect();
        vals.sort_by(|a, b| {
            (a - med[j])
                .abs()
                .partial_cmp(&(b - med[j]).abs())
                .unwrap()
                .then(a.partial_cmp(b).unwrap())
        });
        out[j] = vals[..beta].iter().sum::<f64>() / beta as f64;
    }
    out
}

pub fn fltrust_oracle(models: &[ParamVec], global: &[f64], root: &[f64]) -> ParamVec {
    let r = global.len();
    let root_norm = root.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut total = 0.0;
    let mut acc = vec![0.0; r];
    for m in models {
        let update: Vec<f64> = (0..r).map(|j| m[j] - global[j]).collect();
        let norm = update.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let cos = update.iter().zip(root).map(|(u, g)| u * g).sum::<f64>() / (norm * root_norm);
        let score = cos.max(0.0);
        total += score;
        for j in 0..r {
            acc[j] += score * update[j] * root_norm / norm;
        }
    }
    let mut out = vec![0.0; r];
    for j in 0..r {
        out[j] = global[j] + if total > 0.0 { acc[j] / total } else { 0.0 };
    }
    out
}

pub fn centered_clipping_oracle(
    models: &[ParamVec],
    start: &[f64],
    tau: f64,
    iters: usize,
) -> ParamVec {
    let r = start.len();
    let mut center = start.to_vec();
    for _ in 0..iters {
        let mut delta = vec![0.0; r];
        for m in models {
            let diff: Vec<f64> = (0..r).map(|j| m[j] - center[j]).collect();
            let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let factor = if norm > tau { tau / norm } else { 1.0 };
            for j in 0..r {
                delta[j] += factor * diff[j] / models.len() as f64;
            }
        }
        for j in 0..r {
            center[j] += delta[j];
        }
    }
    center
}

/// Exact top eigenvector of a small symmetric matrix (cyclic Jacobi).
pub fn top_eigenvector(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let top = (0..n).max_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap()).unwrap();
    (0..n).map(|k| v[k][top]).collect()
}

/// Outlier scores from the exact spectral direction: squared projections of
/// the centered rows.
pub fn dnc_scores_oracle(models: &[ParamVec]) -> Vec<f64> {
    let n = models.len();
    let r = models[0].len();
    let mut mean = vec![0.0; r];
    for m in models {
        for j in 0..r {
            mean[j] += m[j] / n as f64;
        }
    }
    let rows: Vec<Vec<f64>> = models
        .iter()
        .map(|m| (0..r).map(|j| m[j] - mean[j]).collect())
        .collect();
    // Gram matrix A^T A.
    let mut gram = vec![vec![0.0; r]; r];
    for row in &rows {
        for (j, gj) in gram.iter_mut().enumerate() {
            for (k, g) in gj.iter_mut().enumerate() {
                *g += row[j] * row[k];
            }
        }
    }
    let dir = top_eigenvector(gram);
    rows.iter()
        .map(|row| {
            let p: f64 = row.iter().zip(&dir).map(|(a, b)| a * b).sum();
            p * p
        })
        .collect()
}

/// Closed-form solution of the sliding-phase error dynamics.
pub fn closed_form_error(k: f64, c: f64, e0: f64, t: f64) -> f64 {
    (e0 + c / k) * (-k * t).exp() - c / k
}

// ---- check suites ------------------------------------------------------

fn random_models(rng: &mut impl Rng, n: usize, r: usize, scale: f64) -> Vec<ParamVec> {
    (0..n)
        .map(|_| (0..r).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compare every aggregation rule against its oracle on random small
/// instances. `instances` counts per rule (the spec floor is 200).
pub fn aggregator_oracle_suite(seed: u64, instances: usize) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let tol = 1e-9;

    let mut check_rule = |name: &str, f: &mut dyn FnMut(&mut rand::rngs::StdRng, usize) -> f64| {
        let mut rng = RngStream::new(seed, name.len() as u64).rng();
        let mut worst = 0.0f64;
        for i in 0..instances {
            worst = worst.max(f(&mut rng, i));
        }
        out.push(CheckOutcome::new(
            format!("agr-oracle/{name}"),
            worst <= tol,
            format!("max deviation {worst:.3e} over {instances} instances (tol {tol:.0e})"),
        ));
    };

    check_rule("fed_avg", &mut |rng, _| {
        let n = rng.random_range(1..=10);
        let r = rng.random_range(1..=6);
        let models = random_models(rng, n, r, 1.0);
        let global = vec![0.0; r];
        let got = agr::fed_avg(&AggregationInput::new(&models, &global, 0)).unwrap();
        max_abs_diff(&got.aggregate, &mean_oracle(&models))
    });

    check_rule("median", &mut |rng, _| {
        let n = rng.random_range(1..=10);
        let r = rng.random_range(1..=6);
        let models = random_models(rng, n, r, 1.0);
        let global = vec![0.0; r];
        let got = agr::coord_median(&AggregationInput::new(&models, &global, 0)).unwrap();
        max_abs_diff(&got.aggregate, &median_oracle(&models))
    });

    check_rule("trimmed_mean", &mut |rng, _| {
        let n = rng.random_range(3..=10);
        let r = rng.random_range(1..=6);
        let trim = rng.random_range(0..=(n - 1) / 2);
        let models = random_models(rng, n, r, 1.0);
        let global = vec![0.0; r];
        let got = agr::trimmed_mean(&AggregationInput::new(&models, &global, trim)).unwrap();
        max_abs_diff(&got.aggregate, &trimmed_mean_oracle(&models, trim))
    });

    check_rule("norm_bounding", &mut |rng, _| {
        let n = rng.random_range(1..=10);
        let r = rng.random_range(1..=6);
        let models = random_models(rng, n, r, 2.0);
        let global: ParamVec = (0..r).map(|_| rng.random_range(-0.5..0.5)).collect();
        let tau = rng.random_range(0.1..2.0);
        let mut input = AggregationInput::new(&models, &global, 0);
        input.norm_bound_tau = tau;
        let got = agr::norm_bounding(&input).unwrap();
        max_abs_diff(&got.aggregate, &norm_bounding_oracle(&models, &global, tau))
    });

    check_rule("krum", &mut |rng, _| {
        let m = rng.random_range(0..=2);
        let n = rng.random_range(m + 3..=10);
        let r = rng.random_range(1..=6);
        let models = random_models(rng, n, r, 1.0);
        let global = vec![0.0; r];
        let got = agr::krum_select(&AggregationInput::new(&models, &global, m)).unwrap();
        if got == krum_oracle(&models, m) {
            0.0
        } else {
            1.0
        }
    });

    check_rule("mkrum", &mut |rng, _| {
        let m = rng.random_range(0..=2);
        let n = rng.random_range((m + 3).max(2)..=10);
        let r = rng.random_range(1..=6);
        let c = rng.random_range(1..=n);
        let models = random_models(rng, n, r, 1.0);
        let global = vec![0.0; r];
        let got = agr::multi_krum(&AggregationInput::new(&models, &global, m), c).unwrap();
        let (sel, mean) = multi_krum_oracle(&models, m, c);
        if got.selected_indices.as_deref() != Some(&sel[..]) {
            return 1.0;
        }
        max_abs_diff(&got.aggregate, &mean)
    });

    check_rule("bulyan", &mut |rng, _| {
        let m = rng.random_range(0..=1);
        let n = rng.random_range((4 * m + 3).max(3)..=10);
        let r = rng.random_range(1..=6);
        let models = random_models(rng, n, r, 1.0);
        let global = vec![0.0; r];
        let got = agr::bulyan(&AggregationInput::new(&models, &global, m)).unwrap();
        max_abs_diff(&got.aggregate, &bulyan_oracle(&models, m))
    });

    check_rule("fltrust", &mut |rng, _| {
        let n = rng.random_range(1..=10);
        let r = rng.random_range(1..=6);
        let models = random_models(rng, n, r, 1.0);
        let global: ParamVec = (0..r).map(|_| rng.random_range(-0.5..0.5)).collect();
        let root: ParamVec = loop {
            let cand: ParamVec = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
            if cand.iter().map(|v| v * v).sum::<f64>() > 1e-6 {
                break cand;
            }
        };
        let mut input = AggregationInput::new(&models, &global, 0);
        input.server_root_update = Some(&root);
        let got = agr::fltrust(&input).unwrap();
        max_abs_diff(&got.aggregate, &fltrust_oracle(&models, &global, &root))
    });

    check_rule("centered_clipping", &mut |rng, _| {
        let n = rng.random_range(1..=10);
        let r = rng.random_range(1..=6);
        let models = random_models(rng, n, r, 2.0);
        let global: ParamVec = (0..r).map(|_| rng.random_range(-0.5..0.5)).collect();
        let tau = rng.random_range(0.2..2.0);
        let iters = rng.random_range(1..=4);
        let mut input = AggregationInput::new(&models, &global, 0);
        input.cc_radius_tau = tau;
        input.cc_iters = iters;
        let got = agr::centered_clipping(&input).unwrap();
        max_abs_diff(
            &got.aggregate,
            &centered_clipping_oracle(&models, &global, tau, iters),
        )
    });

    check_rule("dnc", &mut |rng, i| {
        // Planted-outlier instances: the exact spectral oracle must agree on
        // which client scores highest, and the rule must drop it.
        let n = rng.random_range(6..=10);
        let r = rng.random_range(2..=6);
        let mut models = random_models(rng, n, r, 0.05);
        let outlier = rng.random_range(0..n);
        let axis = rng.random_range(0..r);
        models[outlier][axis] += 10.0;
        let global = vec![0.0; r];
        let mut input = AggregationInput::new(&models, &global, 1);
        input.dnc_subsample_dim = r;
        input.rng = RngStream::new(seed ^ 0x5eed, i as u64);
        let got = agr::dnc(&input).unwrap();
        let survivors = got.selected_indices.unwrap();
        let scores = dnc_scores_oracle(&models);
        let oracle_worst = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let ok = oracle_worst == outlier && !survivors.contains(&outlier);
        if ok {
            0.0
        } else {
            1.0
        }
    });

    out
}

/// Discrete sliding-mode control on the scalar plant against the
/// closed-form error trajectory: 12-point grid, RMS tolerance 1e-3.
pub fn ode_oracle_suite() -> Vec<CheckOutcome> {
    let dt = 0.01;
    let steps = 1000;
    let gain = crate::attack::sliding::SCALAR_PLANT_GAIN;
    let mut out = Vec::new();
    for &k in &[0.5, 1.0, 2.0] {
        for &c in &[0.0, 0.2] {
            for &e0 in &[1.0, -1.0] {
                let name = format!("ode-oracle/k={k},C={c},e0={e0}");
                match simulate_scalar_plant(k, c, e0, gain, dt, steps) {
                    Err(e) => out.push(CheckOutcome::new(name, false, e.to_string())),
                    Ok(traj) => {
                        let mut sq = 0.0;
                        for (n, &e) in traj.iter().enumerate() {
                            let exact = closed_form_error(k, c, e0, n as f64 * dt);
                            sq += (e - exact) * (e - exact);
                        }
                        let rms = (sq / traj.len() as f64).sqrt();
                        out.push(CheckOutcome::new(
                            name,
                            rms <= 1e-3,
                            format!("rms {rms:.3e} (tol 1e-3)"),
                        ));
                    }
                }
            }
        }
    }
    out
}
