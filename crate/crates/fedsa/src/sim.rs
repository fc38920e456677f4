//! Round-by-round federated training with a configurable server rule and
//! attacker, plus the evaluation metrics recorded per round.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agr::{self, AggregationInput, AggregatorKind};
use crate::attack::{
    calibrate_offset, lie_attack, min_max_attack, min_sum_attack, BenignInfo, JacobianMode,
    PerturbMode, ReferenceLibrary, SlidingState, ThetaMode,
};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::model::MlpModel;
use crate::params::{self, ParamVec};
use crate::partition::{dirichlet_partition, iid_partition, Partition};
use crate::rng::{streams, RngStream};

pub const DATA_DIR_ENV: &str = "FEDSA_DATA_DIR";

fn d_sampling_rate() -> f64 {
    1.0
}
fn d_hidden() -> Vec<usize> {
    vec![32]
}
fn d_train_subset() -> usize {
    10_000
}
fn d_classes() -> usize {
    10
}
fn d_features() -> usize {
    20
}
fn d_samples() -> usize {
    2_000
}
fn d_separation() -> f64 {
    3.0
}
fn d_norm_tau() -> f64 {
    5.0
}
fn d_cc_tau() -> f64 {
    10.0
}
fn d_cc_iters() -> usize {
    3
}
fn d_dnc_dim() -> usize {
    1000
}
fn d_dnc_frac() -> f64 {
    1.0
}
fn d_dnc_iters() -> usize {
    1
}
fn d_root_samples() -> usize {
    100
}
fn d_k() -> f64 {
    0.3
}
fn d_dt() -> f64 {
    1.0
}
fn d_eps_jac() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Synthetic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// IDX file directory for `mnist`; falls back to `FEDSA_DATA_DIR`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "d_train_subset")]
    pub train_subset: usize,
    /// Cap on evaluation rows; full test set when absent.
    #[serde(default)]
    pub test_subset: Option<usize>,
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_features")]
    pub features: usize,
    #[serde(default = "d_samples")]
    pub samples: usize,
    #[serde(default = "d_separation")]
    pub separation: f64,
    #[serde(default)]
    pub test_samples: Option<usize>,
}

/// Partition law, written as `"iid"` or `"dirichlet(alpha)"` in configs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionSpec {
    Iid,
    Dirichlet(f64),
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec::Iid
    }
}

impl FromStr for PartitionSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "iid" {
            return Ok(PartitionSpec::Iid);
        }
        if let Some(alpha) = s.strip_prefix("dirichlet(").and_then(|r| r.strip_suffix(')')) {
            let alpha: f64 = alpha
                .trim()
                .parse()
                .map_err(|_| format!("bad dirichlet alpha {alpha:?}"))?;
            return Ok(PartitionSpec::Dirichlet(alpha));
        }
        Err(format!("unknown partition {s:?}; use \"iid\" or \"dirichlet(alpha)\""))
    }
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionSpec::Iid => write!(f, "iid"),
            PartitionSpec::Dirichlet(a) => write!(f, "dirichlet({a})"),
        }
    }
}

impl Serialize for PartitionSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartitionSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgrSpec {
    pub kind: AggregatorKind,
    /// Server robustness budget; defaults to the true malicious count.
    #[serde(default)]
    pub assumed_malicious: Option<usize>,
    #[serde(default = "d_norm_tau")]
    pub norm_bound_tau: f64,
    #[serde(default = "d_cc_tau")]
    pub cc_radius_tau: f64,
    #[serde(default = "d_cc_iters")]
    pub cc_iters: usize,
    #[serde(default)]
    pub mkrum_select: Option<usize>,
    #[serde(default = "d_dnc_dim")]
    pub dnc_subsample_dim: usize,
    #[serde(default = "d_dnc_frac")]
    pub dnc_filter_frac: f64,
    #[serde(default = "d_dnc_iters")]
    pub dnc_iters: usize,
    #[serde(default)]
    pub strict_bulyan: bool,
    #[serde(default = "d_root_samples")]
    pub fltrust_root_samples: usize,
}

impl AgrSpec {
    pub fn plain(kind: AggregatorKind) -> Self {
        Self {
            kind,
            assumed_malicious: None,
            norm_bound_tau: d_norm_tau(),
            cc_radius_tau: d_cc_tau(),
            cc_iters: d_cc_iters(),
            mkrum_select: None,
            dnc_subsample_dim: d_dnc_dim(),
            dnc_filter_frac: d_dnc_frac(),
            dnc_iters: d_dnc_iters(),
            strict_bulyan: false,
            fltrust_root_samples: d_root_samples(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackName {
    #[default]
    None,
    Fedsa,
    Lie,
    MinMax,
    MinSum,
}

impl AttackName {
    pub fn name(&self) -> &'static str {
        match self {
            AttackName::None => "none",
            AttackName::Fedsa => "fedsa",
            AttackName::Lie => "lie",
            AttackName::MinMax => "min_max",
            AttackName::MinSum => "min_sum",
        }
    }
}

fn default_jacobian() -> JacobianMode {
    JacobianMode::FiniteDifference
}
fn default_theta() -> ThetaMode {
    ThetaMode::Proxy
}
fn default_perturb() -> PerturbMode {
    PerturbMode::UnitMean
}

/// Where the controller's reference checkpoints come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Checkpoints captured from a separate shadow honest run sharing the
    /// partitions, seeded with seed + 1.
    #[default]
    Shadow,
    /// The attacker rides along passively (submitting honest models) and
    /// harvests checkpoints from the live trajectory itself, engaging the
    /// controller the first time the observed accuracy crosses the target.
    /// Live checkpoints sit on the attacked run's own training manifold,
    /// which is what makes tight tracking possible under low-authority
    /// aggregation rules.
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default)]
    pub kind: AttackName,
    #[serde(default = "d_k")]
    pub k: f64,
    /// Reaching gain; when absent it is scaled off the reference model.
    #[serde(default)]
    pub control_gain: Option<f64>,
    /// Scalar objective offset broadcast across coordinates; when absent the
    /// offset is calibrated from the reference library and the target.
    #[serde(default)]
    pub c_offset: Option<f64>,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "default_jacobian")]
    pub jacobian_mode: JacobianMode,
    #[serde(default = "default_theta")]
    pub theta_mode: ThetaMode,
    #[serde(default = "d_eps_jac")]
    pub eps_jac: f64,
    #[serde(default)]
    pub boundary_layer: Option<f64>,
    #[serde(default)]
    pub jitter_sigma: Option<f64>,
    /// Accuracy (percent) of the checkpoint used as the base reference;
    /// defaults to the target accuracy.
    #[serde(default)]
    pub reference_accuracy: Option<f64>,
    /// Directory holding (or receiving) the reference checkpoint library
    /// (shadow mode only).
    #[serde(default)]
    pub reference_dir: Option<PathBuf>,
    #[serde(default)]
    pub reference_mode: ReferenceMode,
    /// Mid-run objective switch: at `switch_round`, retarget to
    /// `switch_target` percent.
    #[serde(default)]
    pub switch_round: Option<u32>,
    #[serde(default)]
    pub switch_target: Option<f64>,
    #[serde(default)]
    pub lie_z: Option<f64>,
    #[serde(default = "default_perturb")]
    pub perturb_mode: PerturbMode,
    /// Adaptive stealth envelope and dither probe around the benign cloud;
    /// disable for clean reaching-law analyses.
    #[serde(default = "d_true")]
    pub stealth_envelope: bool,
    /// Scalar initial surface value, broadcast across coordinates.
    #[serde(default)]
    pub c1_offset: Option<f64>,
}

fn d_true() -> bool {
    true
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackName::None,
            k: d_k(),
            control_gain: None,
            c_offset: None,
            dt: d_dt(),
            jacobian_mode: default_jacobian(),
            theta_mode: default_theta(),
            eps_jac: d_eps_jac(),
            boundary_layer: None,
            jitter_sigma: None,
            reference_accuracy: None,
            reference_dir: None,
            reference_mode: ReferenceMode::default(),
            switch_round: None,
            switch_target: None,
            lie_z: None,
            perturb_mode: default_perturb(),
            stealth_envelope: true,
            c1_offset: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub rounds: u32,
    pub clients: usize,
    pub malicious: usize,
    #[serde(default = "d_sampling_rate")]
    pub sampling_rate: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    /// Attack objective, percent.
    pub target_accuracy: f64,
    #[serde(default = "d_hidden")]
    pub hidden_dims: Vec<usize>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    pub agr: AgrSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    /// Hold every benign client at its model from this round onward
    /// (controlled-evaluation mode for the reaching analyses).
    #[serde(default)]
    pub freeze_benign_after_round: Option<u32>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.malicious >= self.clients {
            return Err(Error::config("malicious count must be below client count"));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::config("sampling_rate must lie in (0, 1]"));
        }
        if self.sampling_rate * (self.clients as f64) < 1.0 {
            return Err(Error::config("sampling_rate * clients must be at least 1"));
        }
        if self.rounds < 1 {
            return Err(Error::config("rounds must be at least 1"));
        }
        if self.target_accuracy <= 0.0 {
            return Err(Error::config("target_accuracy must be positive (percent)"));
        }
        if self.attack.switch_round.is_some() != self.attack.switch_target.is_some() {
            return Err(Error::config("switch_round and switch_target come together"));
        }
        Ok(())
    }
}

/// Per-round telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// In [0, 1].
    pub global_accuracy: f64,
    /// Percent deviation from the current objective.
    pub delta: f64,
    pub err_norm: f64,
    pub surface_norm: f64,
    pub selected_malicious: u32,
    pub selected_total: u32,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub final_accuracy: f64,
    pub final_delta: f64,
    /// Filled by cross-experiment summaries: baseline attack name -> theta.
    #[serde(default)]
    pub theta_vs: std::collections::BTreeMap<String, f64>,
    pub config: SimConfig,
    pub seed: u64,
}

/// Signed percentage deviation of the achieved accuracy from the objective.
/// Both arguments are percentages.
pub fn metric_delta(a_t: f64, a_0: f64) -> Result<f64> {
    if a_0 <= 0.0 {
        return Err(Error::invalid("objective accuracy must be positive"));
    }
    Ok((a_t - a_0) / a_0 * 100.0)
}

/// `|delta_other| / |delta_fedsa|`; +inf sentinel when the controller's
/// deviation is exactly zero.
pub fn metric_theta(delta_other: f64, delta_fedsa: f64) -> f64 {
    if delta_fedsa == 0.0 {
        f64::INFINITY
    } else {
        (delta_other / delta_fedsa).abs()
    }
}

/// Fraction of rounds in which at least one malicious model survived
/// selection; `None` when the rule exposes no selection.
pub fn detection_rate(records: &[RoundRecord]) -> Option<f64> {
    if records.is_empty() || records.iter().all(|r| r.selected_total == 0) {
        return None;
    }
    let hits = records.iter().filter(|r| r.selected_malicious >= 1).count();
    Some(hits as f64 / records.len() as f64)
}

/// Per-coordinate standard deviation across a set of models.
fn coordinate_std(models: &[ParamVec], r: usize) -> ParamVec {
    if models.is_empty() {
        return vec![0.0; r];
    }
    let n = models.len() as f64;
    let mut mean = vec![0.0; r];
    for m in models {
        for j in 0..r {
            mean[j] += m[j] / n;
        }
    }
    let mut var = vec![0.0; r];
    for m in models {
        for j in 0..r {
            let d = m[j] - mean[j];
            var[j] += d * d / n;
        }
    }
    var.into_iter().map(f64::sqrt).collect()
}

/// Uniform sample of `ceil(rate * n)` distinct clients, ascending ids.
pub fn sample_clients(n: usize, rate: f64, rng: RngStream) -> Result<Vec<usize>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid("sampling rate must lie in (0, 1]"));
    }
    let k = ((rate * n as f64).ceil() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng.rng();
    use rand::Rng;
    for i in 0..k {
        let j = r.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Prepared data surroundings shared by a run and its shadow.
#[derive(Clone)]
pub struct ExperimentEnv {
    pub train: Arc<Dataset>,
    pub test: Arc<Dataset>,
    pub partition: Arc<Partition>,
    /// Held-out server shard for the trust-score rule.
    pub server_data: Option<Arc<Dataset>>,
}

impl ExperimentEnv {
    pub fn prepare(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let needs_root = config.agr.kind == AggregatorKind::Fltrust;
        let root_n = if needs_root { config.agr.fltrust_root_samples } else { 0 };

        let (mut train_full, test) = match config.dataset.kind {
            DatasetKind::Mnist => {
                let dir = config
                    .dataset
                    .data_dir
                    .clone()
                    .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
                    .ok_or_else(|| {
                        Error::config(format!(
                            "mnist dataset needs data_dir or the {DATA_DIR_ENV} environment variable"
                        ))
                    })?;
                let train = data::load_mnist_idx(
                    &dir.join("train-images-idx3-ubyte"),
                    &dir.join("train-labels-idx1-ubyte"),
                )?;
                let mut test = data::load_mnist_idx(
                    &dir.join("t10k-images-idx3-ubyte"),
                    &dir.join("t10k-labels-idx1-ubyte"),
                )?;
                if let Some(cap) = config.dataset.test_subset {
                    test.truncate(cap);
                }
                (train, test)
            }
            DatasetKind::Synthetic => {
                let s = &config.dataset;
                let train = data::gen_synthetic(
                    s.classes,
                    s.features,
                    s.samples + root_n,
                    s.separation,
                    RngStream::new(config.seed, streams::DATASET),
                )?;
                let test = data::gen_synthetic(
                    s.classes,
                    s.features,
                    s.test_samples.unwrap_or(s.samples / 4 + 1),
                    s.separation,
                    RngStream::new(config.seed, streams::DATASET + 1),
                )?;
                (train, test)
            }
        };

        let pool_n = match config.dataset.kind {
            DatasetKind::Mnist => config.dataset.train_subset.min(train_full.n_samples()),
            DatasetKind::Synthetic => config.dataset.samples,
        };
        if pool_n + root_n > train_full.n_samples() {
            return Err(Error::config(format!(
                "training set holds {} samples but {} are needed",
                train_full.n_samples(),
                pool_n + root_n
            )));
        }
        let server_data = if needs_root {
            let idx: Vec<usize> = (pool_n..pool_n + root_n).collect();
            Some(Arc::new(train_full.select(&idx)))
        } else {
            None
        };
        train_full.truncate(pool_n);
        let train = train_full;

        let partition = match config.partition {
            PartitionSpec::Iid => iid_partition(
                &train,
                config.clients,
                RngStream::new(config.seed, streams::PARTITION),
            )?,
            PartitionSpec::Dirichlet(alpha) => dirichlet_partition(
                &train,
                config.clients,
                alpha,
                RngStream::new(config.seed, streams::PARTITION),
            )?,
        };

        Ok(Self {
            train: Arc::new(train),
            test: Arc::new(test),
            partition: Arc::new(partition),
            server_data,
        })
    }
}

enum AttackerRuntime {
    None,
    FedSa(Box<FedSaAttacker>),
    /// Live reference mode before engagement: malicious clients behave
    /// honestly while the attacker harvests checkpoints from the observed
    /// trajectory.
    FedSaPassive(LiveHarvest),
    Crafted(AttackName),
}

struct FedSaAttacker {
    state: SlidingState,
    reference: ParamVec,
    library: ReferenceLibrary,
}

#[derive(Default)]
struct LiveHarvest {
    library: ReferenceLibrary,
    grids: BTreeSet<i64>,
}

/// A live experiment. Drives one round at a time so callers can interleave
/// checkpoint capture or objective switches.
pub struct Experiment {
    pub config: SimConfig,
    env: ExperimentEnv,
    seed: u64,
    global: MlpModel,
    attacker: AttackerRuntime,
    /// Most recent submission per client, for benign-velocity accounting.
    last_submission: Vec<Option<ParamVec>>,
    /// Previous round's honest proxy per malicious client; proxy velocities
    /// difference consecutive proxies just as benign velocities difference
    /// consecutive submissions.
    prev_proxies: Vec<Option<ParamVec>>,
    /// Smoothed proxy velocity: five proxies make a noisy estimator, and
    /// near steep recovery regions that noise turns into control torque.
    proxy_velocity_ema: Option<ParamVec>,
    frozen: Vec<Option<ParamVec>>,
    /// Current objective, percent; moves on a mid-run switch.
    target_pct: f64,
    records: Vec<RoundRecord>,
    /// Capture grid for reference-library building (honest runs only).
    capture: Option<(ReferenceLibrary, BTreeSet<i64>)>,
}

impl Experiment {
    /// Build a run. `library` must be provided when the attack is the
    /// sliding-mode controller.
    pub fn init(
        config: &SimConfig,
        env: ExperimentEnv,
        library: Option<ReferenceLibrary>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut dims = Vec::with_capacity(config.hidden_dims.len() + 2);
        dims.push(env.train.n_features);
        dims.extend_from_slice(&config.hidden_dims);
        dims.push(env.train.n_classes);
        let global = MlpModel::init_uniform(&dims, 0.05, RngStream::new(seed, streams::INIT))?;

        let attacker = match config.attack.kind {
            AttackName::None => AttackerRuntime::None,
            AttackName::Lie | AttackName::MinMax | AttackName::MinSum => {
                AttackerRuntime::Crafted(config.attack.kind)
            }
            AttackName::Fedsa => {
                if config.malicious == 0 {
                    AttackerRuntime::None
                } else if config.attack.reference_mode == ReferenceMode::Live {
                    AttackerRuntime::FedSaPassive(LiveHarvest::default())
                } else {
                    let library = library.ok_or_else(|| {
                        Error::config("sliding-mode attack needs a reference library")
                    })?;
                    let ref_pct = config
                        .attack
                        .reference_accuracy
                        .unwrap_or(config.target_accuracy);
                    let (reference, _ref_acc) = library.nearest(ref_pct / 100.0)?.clone();
                    let attacker = build_controller(config, reference, library)?;
                    AttackerRuntime::FedSa(Box::new(attacker))
                }
            }
        };

        Ok(Self {
            config: config.clone(),
            seed,
            last_submission: vec![None; config.clients],
            prev_proxies: vec![None; config.malicious],
            proxy_velocity_ema: None,
            frozen: vec![None; config.clients],
            target_pct: config.target_accuracy,
            records: Vec::with_capacity(config.rounds as usize),
            capture: None,
            env,
            global,
            attacker,
        })
    }

    pub fn enable_checkpoint_capture(&mut self) {
        self.capture = Some((ReferenceLibrary::new(), BTreeSet::new()));
    }

    pub fn take_library(&mut self) -> Option<ReferenceLibrary> {
        self.capture.take().map(|(lib, _)| lib)
    }

    pub fn global_params(&self) -> &ParamVec {
        &self.global.params
    }

    /// Max-norm of the controller's sliding surface, when one is engaged.
    pub fn controller_surface_inf(&self) -> Option<f64> {
        match &self.attacker {
            AttackerRuntime::FedSa(att) => Some(params::norm_inf(&att.state.s)),
            _ => None,
        }
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    fn train_client(&self, client: usize, round: u32) -> Result<ParamVec> {
        let shard = &self.env.partition.assignments[client];
        let model = self.global.local_train(
            &self.env.train,
            shard,
            self.config.local_epochs,
            self.config.batch_size,
            self.config.lr,
            RngStream::new(self.seed, streams::train(round, client)),
        )?;
        Ok(model.params)
    }

    /// Honest proxy models the malicious clients train on their own shards.
    fn train_proxies(&self, malicious: &[usize], round: u32) -> Result<Vec<ParamVec>> {
        malicious
            .par_iter()
            .map(|&client| {
                let shard = &self.env.partition.assignments[client];
                let model = self.global.local_train(
                    &self.env.train,
                    shard,
                    self.config.local_epochs,
                    self.config.batch_size,
                    self.config.lr,
                    RngStream::new(self.seed, streams::proxy(round, client)),
                )?;
                Ok(model.params)
            })
            .collect()
    }

    /// Execute one round. Steps: sample clients, train benign clients,
    /// let the attacker observe and submit, aggregate, evaluate.
    pub fn run_round(&mut self, round: u32) -> Result<RoundRecord> {
        let start = Instant::now();
        let n = self.config.clients;
        let sampled = sample_clients(n, self.config.sampling_rate, RngStream::new(self.seed, streams::sampler(round)))?;
        let malicious_active = matches!(
            self.attacker,
            AttackerRuntime::FedSa(_) | AttackerRuntime::FedSaPassive(_) | AttackerRuntime::Crafted(_)
        ) && self.config.malicious > 0;
        let (malicious_sampled, benign_sampled): (Vec<usize>, Vec<usize>) = if malicious_active {
            sampled.iter().copied().partition(|&c| c < self.config.malicious)
        } else {
            (Vec::new(), sampled.clone())
        };

        let freeze = self.config.freeze_benign_after_round;
        let benign_models: Vec<ParamVec> = benign_sampled
            .par_iter()
            .map(|&client| {
                if let (Some(freeze_round), Some(frozen)) = (freeze, self.frozen[client].as_ref()) {
                    if round > freeze_round {
                        return Ok(frozen.clone());
                    }
                }
                self.train_client(client, round)
            })
            .collect::<Result<Vec<_>>>()?;

        if let Some(freeze_round) = freeze {
            if round <= freeze_round {
                for (&client, model) in benign_sampled.iter().zip(&benign_models) {
                    self.frozen[client] = Some(model.clone());
                }
            }
        }

        // Attacker phase: observe the current global model, emit submissions.
        let malicious_models: Vec<ParamVec> = if malicious_sampled.is_empty() {
            Vec::new()
        } else if matches!(self.attacker, AttackerRuntime::FedSaPassive(_)) {
            // Pre-engagement: behave exactly like honest clients.
            self.train_proxies(&malicious_sampled, round)?
        } else if let AttackerRuntime::Crafted(kind) = &self.attacker {
            let kind = *kind;
            let proxies = self.train_proxies(&malicious_sampled, round)?;
            let crafted = match kind {
                AttackName::Lie => {
                    lie_attack(&proxies, n, self.config.malicious, self.config.attack.lie_z)?
                }
                AttackName::MinMax => min_max_attack(&proxies, self.config.attack.perturb_mode)?,
                AttackName::MinSum => min_sum_attack(&proxies, self.config.attack.perturb_mode)?,
                _ => unreachable!(),
            };
            vec![crafted; malicious_sampled.len()]
        } else if matches!(self.attacker, AttackerRuntime::FedSa(_)) {
            // Mid-run objective switch.
            if self.config.attack.switch_round == Some(round) {
                let new_target = self.config.attack.switch_target.unwrap();
                self.target_pct = new_target;
                let AttackerRuntime::FedSa(att) = &mut self.attacker else { unreachable!() };
                let cal = calibrate_offset(
                    &att.library,
                    &att.reference,
                    new_target / 100.0,
                    att.state.k,
                )?;
                att.state.set_offset(cal.c_offset)?;
            }
            let info = self.benign_info(&benign_sampled, &benign_models, round)?;
            let AttackerRuntime::FedSa(att) = &mut self.attacker else { unreachable!() };
            let submission = att
                .state
                .step(&self.global.params, &att.reference, &info)
                .map_err(|e| match e {
                    Error::ControllerFault { what, .. } => Error::ControllerFault { round, what },
                    other => other,
                })?;
            let jitter = self.config.attack.jitter_sigma;
            malicious_sampled
                .iter()
                .map(|&client| match jitter {
                    None => submission.clone(),
                    Some(sigma) => {
                        use rand_distr::{Distribution, StandardNormal};
                        let mut r = RngStream::new(self.seed, streams::jitter(round, client)).rng();
                        submission
                            .iter()
                            .map(|v| {
                                let noise: f64 = StandardNormal.sample(&mut r);
                                v + sigma * noise
                            })
                            .collect()
                    }
                })
                .collect()
        } else {
            Vec::new()
        };

        // Assemble submissions in ascending client order.
        let mut submissions: Vec<ParamVec> = Vec::with_capacity(sampled.len());
        let mut malicious_slots: Vec<usize> = Vec::new();
        {
            let mut b = 0;
            let mut m = 0;
            for (slot, &client) in sampled.iter().enumerate() {
                if malicious_active && client < self.config.malicious {
                    submissions.push(malicious_models.get(m).cloned().unwrap_or_else(|| self.global.params.clone()));
                    malicious_slots.push(slot);
                    m += 1;
                } else {
                    submissions.push(benign_models[b].clone());
                    b += 1;
                }
            }
        }

        // Velocity bookkeeping for the omniscient grant.
        for (&client, model) in benign_sampled.iter().zip(&benign_models) {
            self.last_submission[client] = Some(model.clone());
        }

        let root_update = match (&self.env.server_data, self.config.agr.kind) {
            (Some(server_data), AggregatorKind::Fltrust) => {
                let idx: Vec<usize> = (0..server_data.n_samples()).collect();
                let trained = self.global.local_train(
                    server_data,
                    &idx,
                    self.config.local_epochs,
                    self.config.batch_size,
                    self.config.lr,
                    RngStream::new(self.seed, streams::server_root(round)),
                )?;
                Some(params::sub(&trained.params, &self.global.params))
            }
            _ => None,
        };

        let assumed_total = self
            .config
            .agr
            .assumed_malicious
            .unwrap_or(self.config.malicious);
        let assumed_round = if sampled.len() == n {
            assumed_total
        } else {
            ((assumed_total as f64 * sampled.len() as f64 / n as f64).ceil() as usize)
                .min(sampled.len().saturating_sub(1))
        };

        let spec = &self.config.agr;
        let input = AggregationInput {
            client_models: &submissions,
            prev_global: &self.global.params,
            assumed_malicious: assumed_round,
            norm_bound_tau: spec.norm_bound_tau,
            cc_radius_tau: spec.cc_radius_tau,
            cc_iters: spec.cc_iters,
            server_root_update: root_update.as_deref(),
            dnc_subsample_dim: spec.dnc_subsample_dim,
            dnc_filter_frac: spec.dnc_filter_frac,
            dnc_iters: spec.dnc_iters,
            mkrum_select: spec.mkrum_select,
            strict_bulyan: spec.strict_bulyan,
            rng: RngStream::new(self.seed, streams::aggregator(round)),
        };
        let outcome = agr::aggregate(spec.kind, &input)?;
        if !params::all_finite(&outcome.aggregate) {
            return Err(Error::ControllerFault {
                round,
                what: "aggregation produced non-finite global model".into(),
            });
        }
        let (selected_malicious, selected_total) = match &outcome.selected_indices {
            None => (0, 0),
            Some(sel) => {
                let mal = sel
                    .iter()
                    .filter(|&&slot| malicious_slots.contains(&slot))
                    .count() as u32;
                (mal, sel.len() as u32)
            }
        };
        self.global = self.global.with_params(outcome.aggregate)?;

        let accuracy = self.global.evaluate_accuracy(&self.env.test)?;
        if let Some((lib, grids)) = &mut self.capture {
            let grid = (accuracy * 100.0).floor() as i64;
            if grids.insert(grid) {
                lib.push(self.global.params.clone(), accuracy);
            }
        }

        // Live reference maintenance: while the held accuracy sits inside
        // the anchor band around the objective, refresh the reference to
        // the current global. Tracking a stale snapshot drags the model
        // across basin boundaries (weights drift under consolidation even
        // at constant accuracy), which costs accuracy without reducing the
        // tracking error.
        if self.config.attack.reference_mode == ReferenceMode::Live {
            if let AttackerRuntime::FedSa(att) = &mut self.attacker {
                if (accuracy * 100.0 - self.target_pct).abs() <= 0.75 {
                    att.reference = self.global.params.clone();
                    att.state.set_scalar_offset(0.0);
                    att.state.reset_surface();
                }
            }
        }

        // Live reference harvesting and engagement: snapshot grid crossings
        // from the observed trajectory; once the target is crossed, freeze
        // the reference there and switch the controller on.
        if let AttackerRuntime::FedSaPassive(harvest) = &mut self.attacker {
            let grid = (accuracy * 100.0).floor() as i64;
            if harvest.grids.insert(grid) {
                harvest.library.push(self.global.params.clone(), accuracy);
            }
            let engage_pct = self
                .config
                .attack
                .reference_accuracy
                .unwrap_or(self.config.target_accuracy);
            if accuracy * 100.0 >= engage_pct {
                let AttackerRuntime::FedSaPassive(harvest) =
                    std::mem::replace(&mut self.attacker, AttackerRuntime::None)
                else {
                    unreachable!()
                };
                let mut library = harvest.library;
                library.push(self.global.params.clone(), accuracy);
                let reference = self.global.params.clone();
                let attacker = build_controller(&self.config, reference, library)?;
                self.attacker = AttackerRuntime::FedSa(Box::new(attacker));
            }
        }

        let (err_norm, surface_norm) = match &self.attacker {
            AttackerRuntime::FedSa(att) => (att.state.error_norm(), att.state.surface_norm()),
            _ => (0.0, 0.0),
        };

        let record = RoundRecord {
            round,
            global_accuracy: accuracy,
            delta: metric_delta(accuracy * 100.0, self.target_pct)?,
            err_norm,
            surface_norm,
            selected_malicious,
            selected_total,
            wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.records.push(record.clone());
        Ok(record)
    }

    fn benign_info(
        &mut self,
        benign_sampled: &[usize],
        benign_models: &[ParamVec],
        round: u32,
    ) -> Result<BenignInfo> {
        let AttackerRuntime::FedSa(att) = &self.attacker else {
            return Err(Error::config("benign info requested without a controller"));
        };
        let dt = att.state.dt;
        let theta_mode = att.state.theta_mode;
        match theta_mode {
            ThetaMode::Simplified => Ok(BenignInfo::Simplified),
            ThetaMode::Omniscient => {
                let r = self.global.r();
                let mut sum = vec![0.0; r];
                for (&client, model) in benign_sampled.iter().zip(benign_models) {
                    if let Some(prev) = &self.last_submission[client] {
                        for j in 0..r {
                            sum[j] += (model[j] - prev[j]) / dt;
                        }
                    }
                }
                let coordinate_spread = coordinate_std(benign_models, r);
                let mut cloud_center = vec![0.0; r];
                let nb = benign_models.len().max(1) as f64;
                for m in benign_models {
                    for j in 0..r {
                        cloud_center[j] += m[j] / nb;
                    }
                }
                Ok(BenignInfo::Omniscient { velocity_sum: sum, cloud_center, coordinate_spread })
            }
            ThetaMode::Proxy => {
                let malicious: Vec<usize> = (0..self.config.malicious).collect();
                let proxies = self.train_proxies(&malicious, round)?;
                let r = self.global.r();
                let m = proxies.len() as f64;
                let mut mean = vec![0.0; r];
                for (i, proxy) in proxies.iter().enumerate() {
                    if let Some(prev) = &self.prev_proxies[i] {
                        for j in 0..r {
                            mean[j] += (proxy[j] - prev[j]) / dt / m;
                        }
                    }
                }
                let coordinate_spread = coordinate_std(&proxies, r);
                let mut cloud_center = vec![0.0; r];
                for proxy in &proxies {
                    for j in 0..r {
                        cloud_center[j] += proxy[j] / m;
                    }
                }
                for (slot, proxy) in self.prev_proxies.iter_mut().zip(proxies) {
                    *slot = Some(proxy);
                }
                let smoothed = match self.proxy_velocity_ema.take() {
                    None => mean,
                    Some(prev) => prev
                        .iter()
                        .zip(&mean)
                        .map(|(p, v)| 0.7 * p + 0.3 * v)
                        .collect(),
                };
                self.proxy_velocity_ema = Some(smoothed.clone());
                Ok(BenignInfo::Proxy { proxy_velocity_mean: smoothed, cloud_center, coordinate_spread })
            }
        }
    }

    /// Drive all configured rounds.
    pub fn run(&mut self) -> Result<ExperimentResult> {
        for round in 0..self.config.rounds {
            self.run_round(round)?;
        }
        let last = self.records.last().expect("rounds >= 1");
        Ok(ExperimentResult {
            final_accuracy: last.global_accuracy,
            final_delta: last.delta,
            theta_vs: Default::default(),
            records: self.records.clone(),
            config: self.config.clone(),
            seed: self.seed,
        })
    }
}

/// Configure the sliding controller around a chosen reference checkpoint.
fn build_controller(
    config: &SimConfig,
    reference: ParamVec,
    library: ReferenceLibrary,
) -> Result<FedSaAttacker> {
    let spec = &config.attack;
    let gain = spec
        .control_gain
        .unwrap_or_else(|| 0.01 * params::norm_inf(&reference).max(0.1));
    let mut state = SlidingState::new(
        reference.len(),
        spec.k,
        gain,
        config.clients,
        config.malicious,
    )?;
    state.dt = spec.dt;
    state.jacobian_mode = spec.jacobian_mode;
    state.theta_mode = spec.theta_mode;
    state.eps_jac = spec.eps_jac;
    state.boundary_layer = spec.boundary_layer;
    if !spec.stealth_envelope {
        state.envelope = None;
        state.probe_scale = 0.0;
    }
    if let Some(c1) = spec.c1_offset {
        state.c1 = vec![c1; state.r()];
        state.s = state.c1.clone();
    }
    match spec.c_offset {
        Some(c) => state.set_scalar_offset(c),
        None => {
            let cal = calibrate_offset(&library, &reference, config.target_accuracy / 100.0, spec.k)?;
            if cal.warned {
                eprintln!(
                    "note: nearest checkpoint sits at {:.2}%, over two points from the {:.2}% objective",
                    cal.achieved_accuracy * 100.0,
                    config.target_accuracy
                );
            }
            state.set_offset(cal.c_offset)?;
        }
    }
    Ok(FedSaAttacker {
        state,
        reference,
        library,
    })
}

/// Obtain the reference library for a controller run: load it from the
/// configured directory when present, otherwise capture it from a shadow
/// honest run (shared partitions, seed + 1) and persist it if a directory
/// was named.
pub fn obtain_reference_library(config: &SimConfig, env: &ExperimentEnv) -> Result<ReferenceLibrary> {
    if let Some(dir) = &config.attack.reference_dir {
        if dir.join("manifest.txt").exists() {
            return ReferenceLibrary::load_dir(dir);
        }
    }
    let mut shadow_cfg = config.clone();
    shadow_cfg.attack = AttackSpec::default();
    shadow_cfg.freeze_benign_after_round = None;
    let mut shadow = Experiment::init(&shadow_cfg, env.clone(), None, config.seed + 1)?;
    shadow.enable_checkpoint_capture();
    shadow.run()?;
    let library = shadow
        .take_library()
        .filter(|lib| !lib.is_empty())
        .ok_or_else(|| Error::config("shadow run captured no checkpoints"))?;
    if let Some(dir) = &config.attack.reference_dir {
        library.save_dir(dir)?;
    }
    Ok(library)
}

/// End-to-end experiment: prepare data, build the reference library when the
/// controller is configured, run every round.
pub fn run_experiment(config: &SimConfig) -> Result<ExperimentResult> {
    let env = ExperimentEnv::prepare(config)?;
    let library = if config.attack.kind == AttackName::Fedsa
        && config.malicious > 0
        && config.attack.reference_mode == ReferenceMode::Shadow
    {
        Some(obtain_reference_library(config, &env)?)
    } else {
        None
    };
    let mut experiment = Experiment::init(config, env, library, config.seed)?;
    experiment.run()
}
