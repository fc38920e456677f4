//! The sliding-mode poisoning controller. The global model is treated as
//! the output of a nonlinear plant driven by the malicious submissions;
//! the controller steers it onto the surface where the tracking error
//! settles at `-C/k`, i.e. the global model settles at `reference + C/k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{self, ParamVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    /// Constant `1/N` per coordinate (exact for the plain mean).
    #[serde(rename = "analytic-fedavg")]
    AnalyticFedAvg,
    /// Per-coordinate quotient of observed aggregate movement over own
    /// submission movement, with guards and a `1/N` fallback.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    /// Uses the true benign per-round velocities (evaluation-only mode).
    Omniscient,
    /// Malicious clients train honestly on their own shards and scale the
    /// mean proxy velocity by the benign population size.
    Proxy,
    /// Drops the benign-drift term and pairs with the reduced control law.
    Simplified,
}

/// Adaptive trust-region radius around the observed global model, in units
/// of the benign update scale.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeState {
    pub rho: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for EnvelopeState {
    fn default() -> Self {
        Self {
            rho: 4.0,
            rho_min: 0.5,
            rho_max: 200.0,
        }
    }
}

/// Benign-motion information the simulator grants the controller,
/// matching the configured theta mode.
#[derive(Debug, Clone)]
pub enum BenignInfo {
    /// Sum over benign clients of `(w_{t,i} - w_{t-1,i}) / dt`, plus the
    /// center and per-coordinate spread of their current submissions.
    Omniscient {
        velocity_sum: ParamVec,
        cloud_center: ParamVec,
        coordinate_spread: ParamVec,
    },
    /// Mean honest-training velocity of the malicious clients' proxies,
    /// plus the center and per-coordinate spread across the proxies. The
    /// proxy cloud stands in for the benign cloud the attacker cannot see.
    Proxy {
        proxy_velocity_mean: ParamVec,
        cloud_center: ParamVec,
        coordinate_spread: ParamVec,
    },
    Simplified,
}

/// Controller memory carried between rounds.
#[derive(Debug, Clone)]
pub struct SlidingState {
    /// Convergence-speed gain; the error contracts like `exp(-k t)`.
    pub k: f64,
    /// Objective offset: the closed loop settles at `reference + C/k`.
    pub c_offset: ParamVec,
    /// Surface initial value.
    pub c1: ParamVec,
    /// Current surface value.
    pub s: ParamVec,
    /// Reaching gain of the switching term.
    pub control_gain: f64,
    /// Discretization step; one round is one Euler step.
    pub dt: f64,
    pub jacobian_mode: JacobianMode,
    pub theta_mode: ThetaMode,
    /// Denominator guard and clamp bound for the Jacobian estimate.
    pub eps_jac: f64,
    /// Optional boundary-layer half-width: replaces `sign(s)` with
    /// `clamp(s/phi, -1, 1)` to suppress chattering.
    pub boundary_layer: Option<f64>,
    /// Trust region: cap `||dt u||` at this multiple of the exact-mean
    /// command magnitude, so noisy sensitivity estimates cannot launch the
    /// malicious model. `None` disables saturation.
    pub saturation: Option<f64>,
    /// Blend weight for the round-to-round sensitivity average; 1.0 uses
    /// each raw finite-difference estimate as-is.
    pub jac_blend: f64,
    /// Stealth envelope: submissions stay within `rho * benign-update-scale`
    /// of the observed global. `rho` adapts to the measured traction so the
    /// malicious models ride the edge of whatever region the aggregation
    /// rule accepts: filtering rules pull them in, averaging rules let them
    /// range. `None` disables the envelope.
    pub envelope: Option<EnvelopeState>,
    /// Dither magnitude in units of the benign per-coordinate spread; a
    /// deterministic probing component added to every submission so the
    /// sensitivity and traction estimates keep a clean excitation signal.
    pub probe_scale: f64,
    pub n_clients: usize,
    pub n_malicious: usize,
    jac_ema: Option<ParamVec>,
    traction_ema: f64,
    probe_counter: u64,
    prev_probe: Option<ParamVec>,
    prev_e: Option<ParamVec>,
    /// Submission that produced the currently observed aggregate.
    prev_malicious: Option<ParamVec>,
    /// Submission before that one.
    prev_prev_malicious: Option<ParamVec>,
    /// Previously observed aggregate.
    prev_aggregate: Option<ParamVec>,
}

impl SlidingState {
    pub fn new(r: usize, k: f64, control_gain: f64, n_clients: usize, n_malicious: usize) -> Result<Self> {
        if k <= 0.0 || control_gain <= 0.0 {
            return Err(Error::config("k and control_gain must be positive"));
        }
        // The scalar plant drives a single client that is itself malicious,
        // so only demand 1 <= malicious <= clients here; the simulator
        // enforces the stricter m < N.
        if n_clients == 0 || n_malicious == 0 || n_malicious > n_clients {
            return Err(Error::config("need 1 <= malicious <= clients"));
        }
        Ok(Self {
            k,
            c_offset: vec![0.0; r],
            c1: vec![0.0; r],
            s: vec![0.0; r],
            control_gain,
            dt: 1.0,
            jacobian_mode: JacobianMode::FiniteDifference,
            theta_mode: ThetaMode::Proxy,
            eps_jac: 1e-3,
            boundary_layer: None,
            saturation: Some(10.0),
            jac_blend: 0.25,
            envelope: Some(EnvelopeState::default()),
            probe_scale: 0.4,
            n_clients,
            n_malicious,
            jac_ema: None,
            traction_ema: 1.0,
            probe_counter: 0,
            prev_probe: None,
            prev_e: None,
            prev_malicious: None,
            prev_prev_malicious: None,
            prev_aggregate: None,
        })
    }

    pub fn r(&self) -> usize {
        self.s.len()
    }

    /// Broadcast a scalar objective offset across all coordinates.
    pub fn set_scalar_offset(&mut self, c: f64) {
        self.c_offset.fill(c);
    }

    pub fn set_offset(&mut self, c: ParamVec) -> Result<()> {
        if c.len() != self.r() {
            return Err(Error::invalid("offset length mismatch"));
        }
        self.c_offset = c;
        Ok(())
    }

    pub fn last_submission(&self) -> Option<&ParamVec> {
        self.prev_malicious.as_ref()
    }

    /// Restart the surface integral and error history, keeping the plant
    /// estimates. Used when the tracking reference is re-anchored: the
    /// integral's memory refers to the old reference and would otherwise
    /// jolt the control.
    pub fn reset_surface(&mut self) {
        self.s = self.c1.clone();
        self.prev_e = None;
        self.traction_ema = self.traction_ema.max(0.5);
    }

    /// Advance the sliding surface with the newly observed error. The first
    /// observation only seeds the error history: the surface starts at its
    /// initial value `C1` and integration begins on the next call.
    pub fn update_surface(&mut self, e: &ParamVec) -> Result<ParamVec> {
        if e.len() != self.r() {
            return Err(Error::invalid("error vector length mismatch"));
        }
        match self.prev_e.take() {
            None => {
                self.s = self.c1.clone();
            }
            Some(prev) => {
                let dt = self.dt;
                for j in 0..e.len() {
                    let e_dot = (e[j] - prev[j]) / dt;
                    self.s[j] += dt * (e_dot + self.k * e[j] + self.c_offset[j]);
                }
            }
        }
        self.prev_e = Some(e.clone());
        Ok(self.s.clone())
    }

    /// Per-coordinate estimate of the aggregation rule's sensitivity to the
    /// malicious submission. The analytic mode reports the plain mean's
    /// per-client derivative 1/N; the finite-difference mode measures the
    /// joint movement of all m identical submissions, so its guard fallback
    /// is the matching joint prior m/N (which reduces to 1/N for a single
    /// malicious client).
    pub fn estimate_jacobian(&self, observed_global: &ParamVec) -> ParamVec {
        let fallback = match self.jacobian_mode {
            JacobianMode::AnalyticFedAvg => 1.0 / self.n_clients as f64,
            JacobianMode::FiniteDifference => self.n_malicious as f64 / self.n_clients as f64,
        };
        match self.jacobian_mode {
            JacobianMode::AnalyticFedAvg => vec![fallback; self.r()],
            JacobianMode::FiniteDifference => {
                let (Some(prev_agg), Some(sub1), Some(sub2)) = (
                    self.prev_aggregate.as_ref(),
                    self.prev_malicious.as_ref(),
                    self.prev_prev_malicious.as_ref(),
                ) else {
                    return vec![fallback; self.r()];
                };
                let mut jac = Vec::with_capacity(self.r());
                for j in 0..self.r() {
                    let den = sub1[j] - sub2[j];
                    let num = observed_global[j] - prev_agg[j];
                    let q = num / den;
                    // All nine rules respond monotonically per coordinate,
                    // so the sensitivity is taken as a positive magnitude; a
                    // negative raw quotient is benign drift polluting the
                    // numerator, and feeding it back would flip the loop
                    // sign.
                    let v = if den.abs() < self.eps_jac || !q.is_finite() {
                        fallback
                    } else {
                        q.abs().clamp(self.eps_jac, 1.0 / self.eps_jac)
                    };
                    jac.push(v);
                }
                jac
            }
        }
    }

    /// Condition the raw finite-difference estimate for closed-loop use:
    /// coordinates whose own movement is small against the benign noise
    /// scale carry no signal and fall back to the joint prior m/N; the rest
    /// blend into a running average kept inside a plausibility band.
    /// Divergence self-corrects: large malicious deltas dominate the next
    /// quotients and pull the average back to the true sensitivity.
    fn conditioned_jacobian(&mut self, raw: &ParamVec, spread: Option<&ParamVec>) -> ParamVec {
        if self.jacobian_mode == JacobianMode::AnalyticFedAvg {
            return raw.clone();
        }
        let prior = self.n_malicious as f64 / self.n_clients as f64;
        let band_lo = 1.0 / (4.0 * self.n_clients as f64);
        let band_hi = 4.0;
        let beta = self.jac_blend;
        let guarded: ParamVec = match (spread, &self.prev_malicious, &self.prev_prev_malicious) {
            (Some(spread), Some(sub1), Some(sub2)) => (0..raw.len())
                .map(|j| {
                    let den = (sub1[j] - sub2[j]).abs();
                    if den >= self.eps_jac.max(4.0 * spread[j]) {
                        raw[j]
                    } else {
                        prior
                    }
                })
                .collect(),
            _ => raw.clone(),
        };
        let blended: ParamVec = match self.jac_ema.take() {
            None => guarded,
            Some(prev) => prev
                .iter()
                .zip(&guarded)
                .map(|(p, r)| (1.0 - beta) * p + beta * r)
                .collect(),
        };
        let clamped: ParamVec = blended.iter().map(|v| v.clamp(band_lo, band_hi)).collect();
        self.jac_ema = Some(clamped.clone());
        clamped
    }

    /// Project the commanded step so the next submission stays within the
    /// adaptive stealth envelope around the benign cloud center, adapt the
    /// envelope radius from the measured traction, and ride a small dither
    /// probe on the result. The envelope is per coordinate, in units of the
    /// benign per-coordinate spread, mirroring the geometry of
    /// order-statistic filtering. Doubles as anti-windup: the stored
    /// trajectory is the projected one, so a round of rejected submissions
    /// cannot run the malicious model away.
    fn apply_envelope(
        &mut self,
        u: ParamVec,
        observed_global: &ParamVec,
        info: &BenignInfo,
    ) -> ParamVec {
        if self.jacobian_mode != JacobianMode::FiniteDifference {
            return u;
        }
        if self.envelope.is_none() {
            return u;
        }
        let (center, spread) = match info {
            BenignInfo::Omniscient { cloud_center, coordinate_spread, .. } => {
                (cloud_center, coordinate_spread)
            }
            BenignInfo::Proxy { cloud_center, coordinate_spread, .. } => {
                (cloud_center, coordinate_spread)
            }
            BenignInfo::Simplified => return u,
        };
        let scale_floor = 1e-3 * params::norm_inf(spread).max(1e-12);
        if !(params::norm2(spread) > 0.0) {
            return u;
        }

        // Traction: regress the observed aggregate change onto the probe
        // component of the previous submission, normalized by the joint
        // prior m/N. The probe is independent of training dynamics, so the
        // benign drift averages out of this projection. Near one: the rule
        // passes the submissions through; near zero: filtered out.
        let expected = self.n_malicious as f64 / self.n_clients as f64;
        if let (Some(prev_agg), Some(probe)) = (&self.prev_aggregate, &self.prev_probe) {
            let norm2: f64 = probe.iter().map(|p| p * p).sum();
            if norm2 > 0.0 {
                let mut dot = 0.0;
                for j in 0..u.len() {
                    dot += (observed_global[j] - prev_agg[j]) * probe[j];
                }
                let raw_traction = (dot / norm2) / expected;
                self.traction_ema = 0.75 * self.traction_ema + 0.25 * raw_traction;
            }
        }
        let traction = self.traction_ema;
        let env = self.envelope.as_mut().expect("checked above");
        if traction < 0.3 {
            env.rho = (env.rho * 0.85).max(env.rho_min);
        } else if traction > 0.7 {
            env.rho = (env.rho * 1.1).min(env.rho_max);
        }
        let rho = env.rho;

        let dt = self.dt;
        let base = self.prev_malicious.as_ref().expect("checked by caller");
        let probe_scale = self.probe_scale;
        let counter = self.probe_counter;
        self.probe_counter += 1;
        let mut u_eff = Vec::with_capacity(u.len());
        let mut probe = Vec::with_capacity(u.len());
        let mut clamped_coords = 0usize;
        for j in 0..u.len() {
            let next = base[j] + dt * u[j];
            let cap = rho * spread[j].max(scale_floor);
            let clamped = next.clamp(center[j] - cap, center[j] + cap);
            if clamped != next {
                clamped_coords += 1;
            }
            let p = probe_scale * spread[j].max(scale_floor) * rademacher(counter, j as u64);
            probe.push(p);
            u_eff.push((clamped + p - base[j]) / dt);
        }
        self.prev_probe = Some(probe);
        if std::env::var_os("FEDSA_DEBUG_CONTROLLER").is_some() {
            eprintln!(
                "envelope: rho {rho:8.3} traction {traction:8.4} |spread| {:9.3e} |u| {:9.3e} |u_eff| {:9.3e} clamped {clamped_coords}/{}",
                params::norm2(spread),
                params::norm2(&u),
                params::norm2(&u_eff),
                u.len(),
            );
        }
        u_eff
    }

    /// Aggregated influence of the benign clients' motion. The benign-drift
    /// term wants the rule's sensitivity to ONE client; the
    /// finite-difference estimate measures all `m` malicious submissions
    /// moving together, so it is scaled back by `m` here.
    pub fn estimate_theta(&self, jac: &ParamVec, info: &BenignInfo) -> Result<ParamVec> {
        let per_client = |j: f64| match self.jacobian_mode {
            JacobianMode::AnalyticFedAvg => j,
            JacobianMode::FiniteDifference => j / self.n_malicious as f64,
        };
        match (self.theta_mode, info) {
            (ThetaMode::Omniscient, BenignInfo::Omniscient { velocity_sum, .. }) => {
                if velocity_sum.len() != self.r() {
                    return Err(Error::invalid("velocity sum length mismatch"));
                }
                Ok(jac
                    .iter()
                    .zip(velocity_sum)
                    .map(|(&j, v)| per_client(j) * v)
                    .collect())
            }
            (ThetaMode::Proxy, BenignInfo::Proxy { proxy_velocity_mean, .. }) => {
                if proxy_velocity_mean.len() != self.r() {
                    return Err(Error::invalid("proxy velocity length mismatch"));
                }
                let benign = (self.n_clients - self.n_malicious) as f64;
                Ok(jac
                    .iter()
                    .zip(proxy_velocity_mean)
                    .map(|(&j, v)| benign * per_client(j) * v)
                    .collect())
            }
            (ThetaMode::Simplified, _) => Ok(vec![0.0; self.r()]),
            (mode, _) => Err(Error::config(format!(
                "theta mode {mode:?} was not granted matching benign info"
            ))),
        }
    }

    fn switching(&self, s: f64) -> f64 {
        match self.boundary_layer {
            Some(phi) => (s / phi).clamp(-1.0, 1.0),
            None => {
                if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Full control law: `u = jac^-1 (k e + gain * sign(s) - theta + C)`,
    /// coordinate-wise.
    pub fn control_law(
        &self,
        e: &ParamVec,
        s: &ParamVec,
        jac: &ParamVec,
        theta: &ParamVec,
    ) -> Result<ParamVec> {
        let mut u = Vec::with_capacity(self.r());
        for j in 0..self.r() {
            let v = (self.k * e[j] + self.control_gain * self.switching(s[j]) - theta[j]
                + self.c_offset[j])
                / jac[j];
            u.push(v);
        }
        if !params::all_finite(&u) {
            return Err(Error::ControllerFault {
                round: 0,
                what: "non-finite control output".into(),
            });
        }
        Ok(u)
    }

    /// Reduced law keeping only the switching term: `u = jac^-1 gain sign(s)`.
    pub fn simplified_control_law(&self, s: &ParamVec, jac: &ParamVec) -> Result<ParamVec> {
        let mut u = Vec::with_capacity(self.r());
        for j in 0..self.r() {
            u.push(self.control_gain * self.switching(s[j]) / jac[j]);
        }
        if !params::all_finite(&u) {
            return Err(Error::ControllerFault {
                round: 0,
                what: "non-finite control output".into(),
            });
        }
        Ok(u)
    }

    /// Explicit Euler step of the malicious model and history bookkeeping.
    /// Returns the common submission all malicious clients upload.
    pub fn apply_control(&mut self, u: &ParamVec, observed_global: &ParamVec) -> Result<ParamVec> {
        if u.len() != self.r() {
            return Err(Error::invalid("control vector length mismatch"));
        }
        // The malicious trajectory starts from the first observed global.
        let base = self
            .prev_malicious
            .clone()
            .unwrap_or_else(|| observed_global.clone());
        let mut next = base;
        params::axpy(&mut next, self.dt, u);
        if !params::all_finite(&next) {
            return Err(Error::ControllerFault {
                round: 0,
                what: "non-finite malicious model".into(),
            });
        }
        self.prev_prev_malicious = self.prev_malicious.take();
        self.prev_malicious = Some(next.clone());
        self.prev_aggregate = Some(observed_global.clone());
        Ok(next)
    }

    /// One full controller round: observe the global model, update the
    /// surface, estimate the plant, emit the next submission.
    ///
    /// The very first observation is an initialization round: it seeds the
    /// error history and the submission trajectory at the observed global
    /// model and uploads that model unchanged (the algorithm's t = 0
    /// branch). Control starts on the next observation.
    pub fn step(
        &mut self,
        observed_global: &ParamVec,
        reference: &ParamVec,
        info: &BenignInfo,
    ) -> Result<ParamVec> {
        let e = compute_error(reference, observed_global)?;
        let s = self.update_surface(&e)?;
        if self.prev_malicious.is_none() {
            return self.apply_control(&vec![0.0; self.r()], observed_global);
        }
        let spread_ref = match info {
            BenignInfo::Omniscient { coordinate_spread, .. } => Some(coordinate_spread),
            BenignInfo::Proxy { coordinate_spread, .. } => Some(coordinate_spread),
            BenignInfo::Simplified => None,
        };
        let raw_jac = self.estimate_jacobian(observed_global);
        let jac = self.conditioned_jacobian(&raw_jac, spread_ref);
        let (u, nominal) = if self.theta_mode == ThetaMode::Simplified {
            let u = self.simplified_control_law(&s, &jac)?;
            let nominal: f64 = s
                .iter()
                .map(|&sv| {
                    let v = self.control_gain * self.switching(sv);
                    v * v
                })
                .sum();
            (u, nominal.sqrt())
        } else {
            let theta = self.estimate_theta(&jac, info)?;
            let u = self.control_law(&e, &s, &jac, &theta)?;
            let nominal: f64 = (0..self.r())
                .map(|j| {
                    let v = self.k * e[j] + self.control_gain * self.switching(s[j]) - theta[j]
                        + self.c_offset[j];
                    v * v
                })
                .sum();
            (u, nominal.sqrt())
        };
        // Trust region: the exact plain-mean controller would command
        // (N/m) times the nominal magnitude; cap the actual command at
        // `saturation` times that, so one noisy sensitivity estimate cannot
        // launch the malicious model.
        let u = match self.saturation {
            Some(mult) => {
                let cap = mult * (self.n_clients as f64 / self.n_malicious as f64) * nominal;
                let norm = params::norm2(&u);
                if norm > cap && norm > 0.0 {
                    params::scale(&u, cap / norm)
                } else {
                    u
                }
            }
            None => u,
        };
        let u = self.apply_envelope(u, observed_global, info);
        self.apply_control(&u, observed_global)
    }

    pub fn surface_norm(&self) -> f64 {
        params::norm2(&self.s)
    }

    pub fn error_norm(&self) -> f64 {
        self.prev_e.as_ref().map_or(0.0, |e| params::norm2(e))
    }
}

/// Deterministic +-1 stream for the dither probe.
fn rademacher(counter: u64, j: u64) -> f64 {
    let z = crate::rng::splitmix64(counter.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(j));
    if z & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Tracking error: reference minus observed global, coordinate-wise.
pub fn compute_error(reference: &ParamVec, global: &ParamVec) -> Result<ParamVec> {
    if reference.len() != global.len() {
        return Err(Error::invalid("error operands differ in length"));
    }
    Ok(params::sub(reference, global))
}

/// Scalar single-integrator plant driven by the full controller; returns the
/// error trajectory `e_0 .. e_steps`. This is the system the reaching and
/// tracking analyses are verified on.
///
/// The surface and control law are the production controller ops. The plant
/// itself integrates with a predictor-corrector step (switching term held
/// across the substep) so the measured deviation reflects the controller,
/// not first-order plant-integration error.
pub fn simulate_scalar_plant(
    k: f64,
    c: f64,
    e0: f64,
    control_gain: f64,
    dt: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let reference = vec![0.0];
    let mut state = SlidingState::new(1, k, control_gain, 1, 1)?;
    // Single client, identity plant: the aggregate IS the submission, so the
    // analytic per-client sensitivity 1/N = 1 is exact.
    state.jacobian_mode = JacobianMode::AnalyticFedAvg;
    state.theta_mode = ThetaMode::Omniscient;
    state.dt = dt;
    state.set_scalar_offset(c);
    let info = BenignInfo::Omniscient {
        velocity_sum: vec![0.0],
        cloud_center: vec![0.0],
        coordinate_spread: vec![0.0],
    };
    let mut w = reference[0] - e0;
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(e0);
    for _ in 0..steps {
        let e = compute_error(&reference, &vec![w])?;
        let s = state.update_surface(&e)?;
        let jac = state.estimate_jacobian(&vec![w]);
        let theta = state.estimate_theta(&jac, &info)?;
        let u = state.control_law(&e, &s, &jac, &theta)?;
        let w_pred = w + dt * u[0];
        let e_pred = compute_error(&reference, &vec![w_pred])?;
        let u_pred = state.control_law(&e_pred, &s, &jac, &theta)?;
        w += 0.5 * dt * (u[0] + u_pred[0]);
        trajectory.push(reference[0] - w);
    }
    Ok(trajectory)
}

/// Toy-plant reaching gain used by the tracking-fidelity checks: small
/// against the toy's order-one error scale, so the chattering band stays
/// well inside the tracking tolerance.
pub const SCALAR_PLANT_GAIN: f64 = 5e-4;

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_state(r: usize) -> SlidingState {
        SlidingState::new(r, 1.0, 0.1, 5, 1).unwrap()
    }

    #[test]
    fn error_is_reference_minus_global() {
        let e = compute_error(&vec![1.0, 1.0], &vec![0.5, 2.0]).unwrap();
        assert_eq!(e, vec![0.5, -1.0]);
        let zero = compute_error(&vec![2.0], &vec![2.0]).unwrap();
        assert_eq!(zero, vec![0.0]);
        assert!(compute_error(&vec![1.0], &vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn error_plus_global_recovers_reference() {
        let reference = vec![0.3, -0.7, 2.0];
        let global = vec![1.0, 0.25, -4.0];
        let e = compute_error(&reference, &global).unwrap();
        for j in 0..3 {
            assert!((e[j] + global[j] - reference[j]).abs() <= 1e-15 * reference[j].abs().max(1.0));
        }
    }

    #[test]
    fn surface_first_call_returns_initial_value() {
        let mut st = plain_state(2);
        st.c1 = vec![0.7, -0.2];
        st.s = st.c1.clone();
        let s = st.update_surface(&vec![5.0, 5.0]).unwrap();
        assert_eq!(s, vec![0.7, -0.2]);
    }

    #[test]
    fn surface_recurrence_example() {
        // k = 1, C = 0, dt = 1, s0 = 0, e0 = 1, e1 = 0.5 -> s1 = 0.
        let mut st = plain_state(1);
        st.update_surface(&vec![1.0]).unwrap();
        let s1 = st.update_surface(&vec![0.5]).unwrap();
        assert!((s1[0]).abs() < 1e-15);
    }

    #[test]
    fn surface_fixed_point_at_equilibrium_error() {
        // e = -C/k held constant keeps s where it is.
        let mut st = plain_state(1);
        st.k = 2.0;
        st.set_scalar_offset(0.5);
        let eq = vec![-0.25];
        st.update_surface(&eq).unwrap();
        let s1 = st.update_surface(&eq).unwrap();
        assert!((s1[0]).abs() < 1e-15);
        let s2 = st.update_surface(&eq).unwrap();
        assert!((s2[0]).abs() < 1e-15);
    }

    #[test]
    fn surface_integrates_constant_error() {
        let mut st = plain_state(1);
        st.k = 0.5;
        let e = vec![2.0];
        st.update_surface(&e).unwrap();
        let mut prev = 0.0;
        for _ in 0..4 {
            let s = st.update_surface(&e).unwrap();
            assert!(((s[0] - prev) - 0.5 * 2.0).abs() < 1e-15);
            prev = s[0];
        }
    }

    #[test]
    fn analytic_jacobian_is_inverse_client_count() {
        let st = plain_state(3);
        let jac = st.estimate_jacobian(&vec![0.0; 3]);
        assert_eq!(jac, vec![0.2; 3]);
    }

    #[test]
    fn finite_difference_recovers_mean_sensitivity() {
        let mut st = plain_state(1);
        st.jacobian_mode = JacobianMode::FiniteDifference;
        // Seed history by hand: submission moved 0.01, aggregate moved 0.002.
        st.prev_prev_malicious = Some(vec![1.0]);
        st.prev_malicious = Some(vec![1.01]);
        st.prev_aggregate = Some(vec![0.5]);
        let jac = st.estimate_jacobian(&vec![0.502]);
        assert!((jac[0] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn finite_difference_guards_zero_denominator() {
        let mut st = plain_state(1);
        st.jacobian_mode = JacobianMode::FiniteDifference;
        st.prev_prev_malicious = Some(vec![1.0]);
        st.prev_malicious = Some(vec![1.0]); // no movement
        st.prev_aggregate = Some(vec![0.5]);
        let jac = st.estimate_jacobian(&vec![0.6]);
        assert_eq!(jac, vec![0.2]); // fallback 1/N
    }

    #[test]
    fn finite_difference_without_history_falls_back() {
        let mut st = plain_state(4);
        st.jacobian_mode = JacobianMode::FiniteDifference;
        assert_eq!(st.estimate_jacobian(&vec![0.0; 4]), vec![0.2; 4]);
    }

    #[test]
    fn theta_zero_for_static_benign() {
        let mut st = plain_state(2);
        st.theta_mode = ThetaMode::Omniscient;
        let jac = vec![0.2, 0.2];
        let theta = st
            .estimate_theta(&jac, &BenignInfo::Omniscient { velocity_sum: vec![0.0, 0.0], cloud_center: vec![0.0, 0.0], coordinate_spread: vec![0.0, 0.0] })
            .unwrap();
        assert_eq!(theta, vec![0.0, 0.0]);
    }

    #[test]
    fn theta_single_moving_benign_under_mean() {
        // N = 2 overall, mean sensitivity 1/2, one benign moving delta_b.
        let mut st = SlidingState::new(1, 1.0, 0.1, 2, 1).unwrap();
        st.theta_mode = ThetaMode::Omniscient;
        let delta_b = 0.3;
        let theta = st
            .estimate_theta(&vec![0.5], &BenignInfo::Omniscient { velocity_sum: vec![delta_b], cloud_center: vec![0.0], coordinate_spread: vec![0.0] })
            .unwrap();
        assert!((theta[0] - delta_b / 2.0).abs() < 1e-15);
    }

    #[test]
    fn theta_simplified_is_zero() {
        let mut st = plain_state(3);
        st.theta_mode = ThetaMode::Simplified;
        let theta = st.estimate_theta(&vec![0.2; 3], &BenignInfo::Simplified).unwrap();
        assert_eq!(theta, vec![0.0; 3]);
    }

    #[test]
    fn theta_mode_mismatch_is_config_error() {
        let mut st = plain_state(1);
        st.theta_mode = ThetaMode::Omniscient;
        assert!(st.estimate_theta(&vec![0.2], &BenignInfo::Simplified).is_err());
    }

    #[test]
    fn control_law_example() {
        // jac = 0.5, k = 1, e = 1, s > 0, gain = 0.1, theta = 0, C = 0: u = 2.2.
        let mut st = plain_state(1);
        st.k = 1.0;
        st.control_gain = 0.1;
        let u = st
            .control_law(&vec![1.0], &vec![0.5], &vec![0.5], &vec![0.0])
            .unwrap();
        assert!((u[0] - 2.2).abs() < 1e-12);
    }

    #[test]
    fn control_law_zero_at_equilibrium() {
        let st = plain_state(2);
        let u = st
            .control_law(&vec![0.0; 2], &vec![0.0; 2], &vec![0.2; 2], &vec![0.0; 2])
            .unwrap();
        assert_eq!(u, vec![0.0; 2]);
    }

    #[test]
    fn switching_term_is_odd_in_s() {
        let mut st = plain_state(1);
        st.k = 0.7;
        st.control_gain = 0.3;
        let jac = vec![0.25];
        let up = st.control_law(&vec![0.4], &vec![1.0], &jac, &vec![0.1]).unwrap();
        let down = st.control_law(&vec![0.4], &vec![-1.0], &jac, &vec![0.1]).unwrap();
        let expected = 2.0 * st.control_gain / jac[0];
        assert!((up[0] - down[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn simplified_law_examples() {
        let mut st = plain_state(1);
        st.control_gain = 1.0;
        let u = st.simplified_control_law(&vec![-3.0], &vec![0.25]).unwrap();
        assert!((u[0] + 4.0).abs() < 1e-12);
        let zero = st.simplified_control_law(&vec![0.0], &vec![0.25]).unwrap();
        assert_eq!(zero, vec![0.0]);
    }

    #[test]
    fn simplified_law_bounded_by_gain_over_eps() {
        let mut st = plain_state(1);
        st.control_gain = 2.0;
        let jac = vec![st.eps_jac];
        let u = st.simplified_control_law(&vec![5.0], &jac).unwrap();
        assert!(u[0].abs() <= st.control_gain / st.eps_jac + 1e-9);
    }

    #[test]
    fn apply_control_euler_step() {
        let mut st = plain_state(1);
        st.prev_malicious = Some(vec![1.0]);
        let next = st.apply_control(&vec![0.5], &vec![0.9]).unwrap();
        assert_eq!(next, vec![1.5]);
        // Zero control leaves the malicious model in place.
        let again = st.apply_control(&vec![0.0], &vec![0.9]).unwrap();
        assert_eq!(again, vec![1.5]);
    }

    #[test]
    fn apply_control_starts_from_observed_global() {
        let mut st = plain_state(2);
        let next = st.apply_control(&vec![0.0, 0.0], &vec![0.3, -0.3]).unwrap();
        assert_eq!(next, vec![0.3, -0.3]);
    }

    #[test]
    fn controller_leaves_reached_objective_alone() {
        // Two consecutive rounds at e = -C/k with s = 0 and static benign
        // clients produce zero control.
        let mut st = SlidingState::new(1, 2.0, 0.05, 4, 1).unwrap();
        st.jacobian_mode = JacobianMode::AnalyticFedAvg;
        st.theta_mode = ThetaMode::Omniscient;
        st.set_scalar_offset(0.6);
        let reference = vec![0.0];
        let global = vec![0.3]; // e = -0.3 = -C/k
        let info = BenignInfo::Omniscient { velocity_sum: vec![0.0], cloud_center: vec![0.3], coordinate_spread: vec![0.0] };
        let sub1 = st.step(&global, &reference, &info).unwrap();
        assert_eq!(sub1, global); // first step: u = k e + C = 0
        let sub2 = st.step(&global, &reference, &info).unwrap();
        assert_eq!(sub2, sub1);
    }

    #[test]
    fn scalar_plant_tracks_closed_form() {
        // Closed loop against (e0 + C/k) exp(-k t) - C/k.
        let (k, c, e0) = (1.0, 0.2, 1.0);
        let dt = 0.01;
        let steps = 1000;
        let traj = simulate_scalar_plant(k, c, e0, SCALAR_PLANT_GAIN, dt, steps).unwrap();
        let mut sq = 0.0;
        for (n, &e) in traj.iter().enumerate() {
            let t = n as f64 * dt;
            let exact = (e0 + c / k) * (-k * t).exp() - c / k;
            sq += (e - exact) * (e - exact);
        }
        let rms = (sq / traj.len() as f64).sqrt();
        assert!(rms <= 1e-3, "rms {rms}");
    }

    #[test]
    fn scalar_plant_refining_dt_shrinks_error() {
        let (k, c, e0) = (0.5, 0.2, -1.0);
        let err = |dt: f64| {
            let steps = (10.0 / dt) as usize;
            let traj = simulate_scalar_plant(k, c, e0, SCALAR_PLANT_GAIN, dt, steps).unwrap();
            let mut worst: f64 = 0.0;
            for (n, &e) in traj.iter().enumerate() {
                let t = n as f64 * dt;
                let exact = (e0 + c / k) * (-k * t).exp() - c / k;
                worst = worst.max((e - exact).abs());
            }
            worst
        };
        let coarse = err(0.02);
        let fine = err(0.01);
        assert!(fine <= 0.75 * coarse, "coarse {coarse} fine {fine}");
    }
}
