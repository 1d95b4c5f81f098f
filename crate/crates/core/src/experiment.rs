//! Experiment runner: configuration, orchestration, metrics and reports.
//!
//! Config files are TOML with these sections (every key optional):
//!
//! ```toml
//! [protocol]
//! mode = "byzsfl_toy"        # duoagg_plain | byzsfl_toy | byzsfl_large
//! clients = 4
//! paillier_bits = 48         # defaults per mode: 48 toy, 2048 otherwise
//! backend = "transparent"
//! seed = 1
//!
//! [model]
//! kind = "linear"            # or "mlp" with `hidden = 8`
//!
//! [data]
//! source = "synthetic"       # or "idx" with `images` and `labels` paths
//! params = 16                # synthetic feature count
//! examples_per_client = 16
//! reference_examples = 16
//! noise = 0.1
//!
//! [training]
//! rounds = 3
//! eta = 0.1
//! alpha = 1.0
//!
//! [fixed_point]
//! frac_bits = 16
//! word_bits = 40
//!
//! [attack]
//! specs = ["sign_flip:0,1"]  # KIND:IDS[:ARG]
//!
//! [output]
//! dir = "out"
//! ```

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::AttackSpec;
use crate::fixedpoint::{FixedPointConfig, FixedPointError};
use crate::fltrust::{
    idx, make_synthetic_regression, Dataset, FlError, ModelKind, ModelParams, Optimizer,
    TrainingConfig,
};
use crate::paillier::{keygen, FixedBaseNonces, PaillierError};
use crate::proofsys::Backend;
use crate::protocol::{
    run_training, AggregateMessage, ClientSubmission, ComputingServer, MessageSizes, PhaseTimings,
    ProtocolConfig, ProtocolError, ProtocolMode, RoundReport, Simulation, VerifierSetup,
};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Learning(#[from] FlError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(String),
}

impl From<PaillierError> for ExperimentError {
    fn from(e: PaillierError) -> Self {
        ExperimentError::Protocol(e.into())
    }
}

impl From<FixedPointError> for ExperimentError {
    fn from(e: FixedPointError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub mode: ProtocolMode,
    pub clients: usize,
    pub paillier_bits: Option<u32>,
    pub backend: String,
    pub seed: u64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            mode: ProtocolMode::ByzsflToy,
            clients: 4,
            paillier_bits: None,
            backend: "transparent".into(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub params: usize,
    pub examples_per_client: usize,
    pub reference_examples: usize,
    pub noise: f64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            params: 16,
            examples_per_client: 16,
            reference_examples: 16,
            noise: 0.1,
            images: None,
            labels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub rounds: usize,
    pub eta: f64,
    pub alpha: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            rounds: 3,
            eta: 0.1,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointSection {
    pub frac_bits: u32,
    pub word_bits: u32,
}

impl Default for FixedPointSection {
    fn default() -> Self {
        let d = FixedPointConfig::default();
        Self {
            frac_bits: d.frac_bits(),
            word_bits: d.word_bits(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub specs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

fn default_model() -> ModelKind {
    ModelKind::Linear
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: ProtocolSection,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    pub data: DataSection,
    pub training: TrainingSection,
    pub fixed_point: FixedPointSection,
    pub attack: AttackSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            protocol: ProtocolSection::default(),
            model: default_model(),
            data: DataSection::default(),
            training: TrainingSection::default(),
            fixed_point: FixedPointSection::default(),
            attack: AttackSection::default(),
            output: OutputSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<ProtocolMode>,
    pub clients: Option<usize>,
    pub params: Option<usize>,
    pub rounds: Option<usize>,
    /// Replaces the file's attack list when non-empty.
    pub attacks: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Serialize(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            if m != self.protocol.mode {
                // a modulus chosen for another mode rarely fits
                self.protocol.paillier_bits = None;
            }
            self.protocol.mode = m;
        }
        if let Some(c) = o.clients {
            self.protocol.clients = c;
        }
        if let Some(p) = o.params {
            self.data.params = p;
        }
        if let Some(r) = o.rounds {
            self.training.rounds = r;
        }
        if !o.attacks.is_empty() {
            self.attack.specs = o.attacks.clone();
        }
        if let Some(s) = o.seed {
            self.protocol.seed = s;
        }
        if let Some(d) = &o.out {
            self.output.dir = Some(d.clone());
        }
    }

    pub fn modulus_bits(&self) -> u32 {
        self.protocol
            .paillier_bits
            .unwrap_or_else(|| self.protocol.mode.default_modulus_bits())
    }

    pub fn fixed(&self) -> Result<FixedPointConfig, ExperimentError> {
        Ok(FixedPointConfig::new(
            self.fixed_point.frac_bits,
            self.fixed_point.word_bits,
        )?)
    }

    pub fn attack_specs(&self) -> Result<Vec<AttackSpec>, ExperimentError> {
        self.attack
            .specs
            .iter()
            .map(|s| {
                s.parse::<AttackSpec>()
                    .map_err(|e| ExperimentError::Config(e.to_string()))
            })
            .collect()
    }

    pub fn protocol_config(&self) -> Result<ProtocolConfig, ExperimentError> {
        let backend: Backend = self
            .protocol
            .backend
            .parse()
            .map_err(|e: crate::proofsys::ProofError| ExperimentError::Config(e.to_string()))?;
        Ok(ProtocolConfig {
            mode: self.protocol.mode,
            model: self.model,
            training: TrainingConfig {
                eta: self.training.eta,
                alpha: self.training.alpha,
                epochs: self.training.rounds.max(1),
                optimizer: Optimizer::Sgd,
            },
            fixed: self.fixed()?,
            modulus_bits: self.modulus_bits(),
            backend,
        })
    }

    /// Parameter count implied by the data section; IDX inputs need the file.
    fn expected_len(&self) -> Option<usize> {
        match self.data.source {
            DataSource::Synthetic => Some(self.model.param_len(self.data.params)),
            DataSource::Idx => None,
        }
    }

    /// Checks every cross-field constraint that is knowable before loading data.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let m = self.protocol.clients;
        if m == 0 {
            return Err(ExperimentError::Config("at least one client is required".into()));
        }
        if self.training.rounds == 0 {
            return Err(ExperimentError::Config("rounds must be at least 1".into()));
        }
        let d = &self.data;
        if d.examples_per_client == 0 || d.reference_examples == 0 {
            return Err(ExperimentError::Config("datasets must be non-empty".into()));
        }
        match d.source {
            DataSource::Synthetic => {
                if d.params == 0 {
                    return Err(ExperimentError::Config("params must be positive".into()));
                }
                if !(d.noise >= 0.0 && d.noise.is_finite()) {
                    return Err(ExperimentError::Config("noise must be non-negative".into()));
                }
            }
            DataSource::Idx => {
                if d.images.is_none() || d.labels.is_none() {
                    return Err(ExperimentError::Config(
                        "idx data needs both `images` and `labels`".into(),
                    ));
                }
            }
        }
        for spec in self.attack_specs()? {
            if let Some(&bad) = spec.targets.iter().find(|&&t| t as usize >= m) {
                return Err(ExperimentError::Config(format!(
                    "attack targets client {bad} but only {m} clients exist"
                )));
            }
        }
        let pc = self.protocol_config()?;
        pc.validate(m, self.expected_len().unwrap_or(1))?;
        Ok(())
    }
}

/// Reads an optional config file, applies overrides and validates.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_toml_str(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

/// Client datasets, trusted dataset and initial model for a config.
pub fn build_data(
    cfg: &ExperimentConfig,
) -> Result<(Vec<Dataset>, Dataset, ModelParams), ExperimentError> {
    let m = cfg.protocol.clients;
    let d = &cfg.data;
    let (clients, d_star) = match d.source {
        DataSource::Synthetic => {
            let (mut all, _, _) = make_synthetic_regression(
                d.params,
                m + 1,
                d.examples_per_client.max(d.reference_examples),
                d.noise,
                cfg.protocol.seed,
            );
            let mut d_star = all.pop().expect("m + 1 datasets");
            if d.reference_examples < d.examples_per_client {
                d_star = truncate(&d_star, d.reference_examples)?;
            }
            let clients = all
                .iter()
                .map(|c| truncate(c, d.examples_per_client))
                .collect::<Result<Vec<_>, _>>()?;
            (clients, d_star)
        }
        DataSource::Idx => {
            let need = m * d.examples_per_client + d.reference_examples;
            let all = idx::load(
                d.images.as_deref().expect("validated"),
                d.labels.as_deref().expect("validated"),
                need,
            )?;
            if all.len() < need {
                return Err(ExperimentError::Config(format!(
                    "idx files hold {} examples, {need} needed",
                    all.len()
                )));
            }
            let slice = |start: usize, n: usize, name: String| {
                let f = all.n_features();
                let features = (start..start + n).flat_map(|i| all.row(i).to_vec()).collect();
                let labels = all.labels()[start..start + n].to_vec();
                Dataset::new(features, f, labels, name)
            };
            let clients = (0..m)
                .map(|i| slice(i * d.examples_per_client, d.examples_per_client, format!("client-{i}")))
                .collect::<Result<Vec<_>, _>>()?;
            let d_star = slice(m * d.examples_per_client, d.reference_examples, "d-star".into())?;
            (clients, d_star)
        }
    };
    let len = cfg.model.param_len(d_star.n_features());
    let beta0 = match cfg.model {
        ModelKind::Linear => ModelParams::zeros(len),
        // hidden units need distinct starting weights to learn anything
        ModelKind::Mlp { .. } => {
            let mut rng = seeded_rng(&derive_seed(&cfg.protocol.seed.to_be_bytes(), "init"));
            let normal = Normal::new(0.0, 0.1).expect("valid sigma");
            ModelParams {
                beta: (0..len).map(|_| normal.sample(&mut rng)).collect(),
            }
        }
    };
    Ok((clients, d_star, beta0))
}

fn truncate(d: &Dataset, n: usize) -> Result<Dataset, FlError> {
    let n = n.min(d.len());
    let features = (0..n).flat_map(|i| d.row(i).to_vec()).collect();
    Dataset::new(features, d.n_features(), d.labels()[..n].to_vec(), d.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientScore {
    pub client: u32,
    /// Decoded TS̃, or `None` when the client's update was zero.
    pub ts_norm: Option<f64>,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: u64,
    pub loss: f64,
    pub scores: Vec<ClientScore>,
    pub accepted: Vec<u32>,
    pub rejected: Vec<u32>,
    pub ts_sum_raw: Option<String>,
    pub degenerate: bool,
    pub decryptions: u64,
    pub bytes: MessageSizes,
    pub timings: PhaseTimings,
}

impl MetricsRecord {
    pub fn from_report(r: &RoundReport, fixed: FixedPointConfig) -> Self {
        let s = fixed.scale() as f64;
        Self {
            round: r.round,
            loss: r.loss,
            scores: r
                .ts_norm
                .iter()
                .map(|&(client, v)| ClientScore {
                    client,
                    ts_norm: v.map(|x| x as f64 / s),
                })
                .collect(),
            accepted: r.accepted.clone(),
            rejected: r.rejected.clone(),
            ts_sum_raw: r.ts_sum.map(|t| t.to_string()),
            degenerate: r.degenerate,
            decryptions: r.decryptions,
            bytes: r.sizes.clone(),
            timings: r.timings,
        }
    }

    /// The record with every timing zeroed; equal across same-seed runs.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: PhaseTimings::default(),
            ..self.clone()
        }
    }
}

/// Per-leg byte counts of one client's traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub params: usize,
    pub modulus_bits: u32,
    pub backend: String,
    /// Encrypted vector, client to S_C.
    pub client_to_sc_vector: usize,
    /// Proof, client to S_C; unknown in closed form for the transparent backend.
    pub client_to_sc_proof: Option<usize>,
    /// Aggregated encrypted vector, S_C to S_E.
    pub sc_to_se_vector: usize,
    /// Plain model vector, S_E to client.
    pub se_to_client_vector: usize,
    /// True when taken from serialized frames.
    pub measured: bool,
}

fn mb(bytes: usize) -> f64 {
    bytes as f64 / 1e6
}

impl fmt::Display for BandwidthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let source = if self.measured { "measured" } else { "estimate" };
        writeln!(
            f,
            "L = {}, {}-bit modulus, {} backend ({source})",
            self.params, self.modulus_bits, self.backend
        )?;
        writeln!(f, "{:<34} {:>14} {:>10}", "Leg", "Bytes", "MB")?;
        let proof_label = match self.backend.as_str() {
            "transparent" => "Client to S_C (proof, grows with L)",
            _ => "Client to S_C (proof)",
        };
        let rows = [
            ("Client to S_C (encrypted vector)", Some(self.client_to_sc_vector)),
            (proof_label, self.client_to_sc_proof),
            ("S_C to S_E (encrypted vector)", Some(self.sc_to_se_vector)),
            ("S_E to client (model vector)", Some(self.se_to_client_vector)),
        ];
        for (label, v) in rows {
            match v {
                Some(b) => writeln!(f, "{label:<34} {b:>14} {:>10.3}", mb(b))?,
                None => writeln!(f, "{label:<34} {:>14} {:>10}", "n/a", "n/a")?,
            }
        }
        Ok(())
    }
}

/// Closed-form sizes: each ciphertext occupies `2 * ceil(bits / 8)` bytes.
pub fn bandwidth_estimate(params: usize, modulus_bits: u32, backend: Backend) -> BandwidthReport {
    let vector = params * 2 * (modulus_bits as usize).div_ceil(8);
    BandwidthReport {
        params,
        modulus_bits,
        backend: backend.name().into(),
        client_to_sc_vector: vector,
        client_to_sc_proof: None,
        sc_to_se_vector: vector,
        se_to_client_vector: 8 * params,
        measured: false,
    }
}

/// Bandwidth from the frames of a finished round.
pub fn bandwidth_from_sizes(
    params: usize,
    modulus_bits: u32,
    backend: Backend,
    sizes: &MessageSizes,
) -> BandwidthReport {
    BandwidthReport {
        params,
        modulus_bits,
        backend: backend.name().into(),
        client_to_sc_vector: sizes.client_ciphertext_vector,
        client_to_sc_proof: (sizes.proof > 0).then_some(sizes.proof),
        sc_to_se_vector: sizes.aggregate_ciphertext_vector,
        se_to_client_vector: sizes.broadcast_model_vector,
        measured: true,
    }
}

/// Encrypts `clients` random fixed-point vectors of length `params`,
/// aggregates them through S_C and measures the serialized frames. No
/// training and no decryption happens, so large `params` stay cheap.
pub fn measure_bandwidth(
    params: usize,
    modulus_bits: u32,
    clients: usize,
    seed: u64,
) -> Result<BandwidthReport, ExperimentError> {
    let seed = seed.to_be_bytes();
    let (ek, _dk) = keygen(modulus_bits, &derive_seed(&seed, "paillier"))?;
    let fixed = FixedPointConfig::default();
    let verifier = VerifierSetup {
        mode: ProtocolMode::DuoaggPlain,
        fixed,
        len: params as u32,
        ek: ek.clone(),
        vk: None,
        round: 0,
        g_star: Vec::new(),
    };
    let sc = ComputingServer::new(&VerifierSetup::from_frame(&verifier.to_frame())?, None)?;
    let mut rng = seeded_rng(&derive_seed(&seed, "bandwidth"));
    let nonces = FixedBaseNonces::new(&ek, FixedBaseNonces::DEFAULT_EXPONENT_BITS, &mut rng);
    let bound = fixed.scale();
    let mut subs = Vec::with_capacity(clients);
    let mut frame_vector = 0;
    for id in 0..clients as u32 {
        let c_h = (0..params)
            .map(|_| {
                let m = ek.encode_i64(rng.gen_range(-bound..bound))?;
                ek.encrypt_with_factor(&m, &nonces.sample(&mut rng))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let sub = ClientSubmission {
            client_id: id,
            round: 0,
            c_ts: None,
            c_h,
            proof: None,
        };
        let frame = sub.to_frame(&ek);
        // type, length, id, round, flags, vector count
        frame_vector = frame.len() - (1 + 4 + 4 + 8 + 1 + 4);
        subs.push(ClientSubmission::from_frame(&frame, &ek)?);
    }
    let (agg, _, _) = sc.aggregate(&subs);
    let frame = agg.to_frame(&ek);
    let agg = AggregateMessage::from_frame(&frame, &ek)?;
    // type, length, round, flags, vector count, id count, ids
    let agg_vector = frame.len() - (1 + 4 + 8 + 1 + 4 + 4 + 4 * agg.accepted.len());
    Ok(BandwidthReport {
        params,
        modulus_bits,
        backend: Backend::Transparent.name().into(),
        client_to_sc_vector: frame_vector,
        client_to_sc_proof: None,
        sc_to_se_vector: agg_vector,
        se_to_client_vector: 8 * params,
        measured: true,
    })
}

/// Row labels of the timing table, in order.
pub const TIMING_ROWS: [&str; 7] = [
    "Client Compute",
    "Client Encrypt",
    "Client Prove",
    "Server S_C Compute",
    "Server S_C Verify",
    "Server S_E Decrypt",
    "Total",
];

/// Seconds per phase; one column per experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingTable {
    pub columns: Vec<String>,
    /// `rows[i][j]` is row `TIMING_ROWS[i]` of column `j`.
    pub rows: Vec<Vec<f64>>,
}

impl TimingTable {
    pub fn labels(&self) -> &'static [&'static str] {
        &TIMING_ROWS
    }

    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| ExperimentError::Serialize(e.to_string());
        let mut header = vec!["step".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (label, row) in TIMING_ROWS.iter().zip(&self.rows) {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::Serialize(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

impl fmt::Display for TimingTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<20}", "Step")?;
        for c in &self.columns {
            write!(f, " {c:>10}")?;
        }
        writeln!(f)?;
        for (label, row) in TIMING_ROWS.iter().zip(&self.rows) {
            write!(f, "{label:<20}")?;
            for v in row {
                write!(f, " {v:>10.3}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Builds the table from `(column label, records)` pairs. Each cell is the
/// mean over rounds of the per-round value, which already uses the slowest
/// client. `Total` is the column sum.
pub fn timing_table(columns: &[(String, Vec<MetricsRecord>)]) -> TimingTable {
    let mut rows = vec![vec![0.0; columns.len()]; TIMING_ROWS.len()];
    for (j, (_, records)) in columns.iter().enumerate() {
        let n = records.len().max(1) as f64;
        for r in records {
            let t = &r.timings;
            let phases = [
                t.client_compute,
                t.client_encrypt,
                t.client_prove,
                t.sc_compute,
                t.sc_verify,
                t.se_decrypt,
            ];
            for (i, v) in phases.iter().enumerate() {
                rows[i][j] += v / n;
            }
        }
        rows[6][j] = (0..6).map(|i| rows[i][j]).sum();
    }
    TimingTable {
        columns: columns.iter().map(|(c, _)| c.clone()).collect(),
        rows,
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Aggregate and broadcast frames of every round.
    pub transcript: Vec<Vec<u8>>,
    pub records: Vec<MetricsRecord>,
    pub bandwidth: BandwidthReport,
    pub final_beta: ModelParams,
}

/// Runs the configured training end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    cfg.validate()?;
    let (clients, d_star, beta0) = build_data(cfg)?;
    let pc = cfg.protocol_config()?;
    let len = beta0.len();
    let attacks = cfg.attack_specs()?;
    let clients = clients
        .into_iter()
        .enumerate()
        .map(|(i, d)| (i as u32, d))
        .collect();
    let mut sim = Simulation::new(&pc, clients, d_star, beta0, &attacks, cfg.protocol.seed)?;
    let reports = run_training(&mut sim, cfg.training.rounds)?;
    let records: Vec<MetricsRecord> = reports
        .iter()
        .map(|r| MetricsRecord::from_report(r, pc.fixed))
        .collect();
    let bandwidth = match reports.iter().rev().find(|r| r.sizes.client_ciphertext_vector > 0) {
        Some(r) => bandwidth_from_sizes(len, pc.modulus_bits, pc.backend, &r.sizes),
        None => bandwidth_estimate(len, pc.modulus_bits, pc.backend),
    };
    Ok(ExperimentOutcome {
        transcript: sim.transcript().to_vec(),
        records,
        bandwidth,
        final_beta: sim.beta().clone(),
    })
}

#[derive(Serialize)]
struct SummaryRow {
    round: u64,
    loss: f64,
    accepted: usize,
    rejected: String,
    ts_sum_raw: String,
    degenerate: bool,
    decryptions: u64,
    client_vector_bytes: usize,
    proof_bytes: usize,
    aggregate_vector_bytes: usize,
}

/// Per-round summary as CSV.
pub fn summary_csv(records: &[MetricsRecord]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(SummaryRow {
            round: r.round,
            loss: r.loss,
            accepted: r.accepted.len(),
            rejected: r
                .rejected
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            ts_sum_raw: r.ts_sum_raw.clone().unwrap_or_default(),
            degenerate: r.degenerate,
            decryptions: r.decryptions,
            client_vector_bytes: r.bytes.client_ciphertext_vector,
            proof_bytes: r.bytes.proof,
            aggregate_vector_bytes: r.bytes.aggregate_ciphertext_vector,
        })
        .map_err(|e| ExperimentError::Serialize(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Serialize(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `metrics.jsonl`, `summary.csv`, `bandwidth.json` and `config.toml` into `dir`.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &ExperimentOutcome,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    let ser = |e: serde_json::Error| ExperimentError::Serialize(e.to_string());
    let mut metrics = fs::File::create(dir.join("metrics.jsonl"))?;
    for r in &outcome.records {
        writeln!(metrics, "{}", serde_json::to_string(r).map_err(ser)?)?;
    }
    fs::write(dir.join("summary.csv"), summary_csv(&outcome.records)?)?;
    fs::write(
        dir.join("bandwidth.json"),
        serde_json::to_string_pretty(&outcome.bandwidth).map_err(ser)?,
    )?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

/// Reads records back from a `metrics.jsonl` file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, ExperimentError> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| ExperimentError::Serialize(e.to_string())))
        .collect()
}
