//! Baseline model-poisoning attacks the controller is compared against.
//! Each one crafts a single malicious submission from the malicious
//! clients' honest proxy models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{self, ParamVec};

/// Direction used by the distance-constrained attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Opposite of the proxy mean, unit length.
    UnitMean,
    /// Negative per-coordinate standard deviation.
    Std,
}

fn mean_and_std(proxies: &[ParamVec]) -> (ParamVec, ParamVec) {
    let n = proxies.len() as f64;
    let r = proxies[0].len();
    let mut mean = vec![0.0; r];
    for p in proxies {
        params::axpy(&mut mean, 1.0 / n, p);
    }
    let mut var = vec![0.0; r];
    for p in proxies {
        for j in 0..r {
            let d = p[j] - mean[j];
            var[j] += d * d / n;
        }
    }
    let std = var.into_iter().map(f64::sqrt).collect();
    (mean, std)
}

fn check_proxies(proxies: &[ParamVec]) -> Result<()> {
    if proxies.len() < 2 {
        return Err(Error::invalid("need at least two proxy models"));
    }
    let r = proxies[0].len();
    if proxies.iter().any(|p| p.len() != r) {
        return Err(Error::invalid("proxy model length mismatch"));
    }
    Ok(())
}

/// Per-coordinate `mean - z * std` over the proxies. When `z` is not given
/// it comes from the supremum-quantile rule with `s = floor(N/2) + 1 - m`.
pub fn lie_attack(proxies: &[ParamVec], n_clients: usize, n_malicious: usize, z: Option<f64>) -> Result<ParamVec> {
    check_proxies(proxies)?;
    if 2 * n_malicious >= n_clients {
        return Err(Error::invalid("malicious clients must be a minority"));
    }
    let z = match z {
        Some(z) => z,
        None => lie_z(n_clients, n_malicious),
    };
    let (mean, std) = mean_and_std(proxies);
    Ok(mean.iter().zip(&std).map(|(m, s)| m - z * s).collect())
}

/// Quantile used by the noise-scaling rule.
pub fn lie_z(n_clients: usize, n_malicious: usize) -> f64 {
    let n = n_clients as f64;
    let m = n_malicious as f64;
    let s = (n / 2.0).floor() + 1.0 - m;
    inverse_normal_cdf((n - m - s) / (n - m))
}

/// Largest deviation along the perturbation direction keeping the crafted
/// model no farther from any proxy than the proxies' own diameter.
pub fn min_max_attack(proxies: &[ParamVec], mode: PerturbMode) -> Result<ParamVec> {
    craft_bounded(proxies, mode, |cand, proxies, max_pair| {
        let worst = proxies
            .iter()
            .map(|p| params::dist2(cand, p))
            .fold(0.0f64, f64::max);
        worst <= max_pair
    })
}

/// Largest deviation keeping the sum of squared distances to the proxies
/// below the worst same-sum among the proxies themselves.
pub fn min_sum_attack(proxies: &[ParamVec], mode: PerturbMode) -> Result<ParamVec> {
    check_proxies(proxies)?;
    let bound = proxies
        .iter()
        .map(|a| proxies.iter().map(|b| params::dist2(a, b)).sum::<f64>())
        .fold(0.0f64, f64::max);
    craft_bounded(proxies, mode, move |cand, proxies, _| {
        let total: f64 = proxies.iter().map(|p| params::dist2(cand, p)).sum();
        total <= bound
    })
}

fn craft_bounded(
    proxies: &[ParamVec],
    mode: PerturbMode,
    feasible: impl Fn(&[f64], &[ParamVec], f64) -> bool,
) -> Result<ParamVec> {
    check_proxies(proxies)?;
    let (mean, std) = mean_and_std(proxies);
    let max_pair = proxies
        .iter()
        .enumerate()
        .flat_map(|(i, a)| proxies[i + 1..].iter().map(move |b| params::dist2(a, b)))
        .fold(0.0f64, f64::max);
    if max_pair == 0.0 {
        // Degenerate proxies: nowhere to hide, submit the mean.
        return Ok(mean);
    }
    let direction: ParamVec = match mode {
        PerturbMode::UnitMean => {
            let norm = params::norm2(&mean);
            if norm == 0.0 {
                return Ok(mean);
            }
            mean.iter().map(|v| -v / norm).collect()
        }
        PerturbMode::Std => std.iter().map(|v| -v).collect(),
    };
    let candidate = |gamma: f64| -> ParamVec {
        let mut c = mean.clone();
        params::axpy(&mut c, gamma, &direction);
        c
    };
    // Bisect for the largest feasible gamma; gamma = 0 (the mean) is always
    // feasible because the mean sits inside the proxy cloud.
    let mut lo = 0.0;
    let mut hi = 10.0 * max_pair.sqrt();
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if feasible(&candidate(mid), proxies, max_pair) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(candidate(lo))
}

/// Inverse standard-normal CDF (Acklam's rational approximation,
/// |relative error| < 1.15e-9 over the open unit interval).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must be in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
