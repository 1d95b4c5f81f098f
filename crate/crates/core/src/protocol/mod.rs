//! Dual-server aggregation protocol.
//!
//! Three kinds of party run as explicit state machines: clients, the
//! computing server S_C (verifies proofs, multiplies ciphertexts, never holds
//! the decryption key) and the encryption server S_E (holds the keys and the
//! trusted dataset, decrypts only aggregates, updates the model). Every
//! message crosses the byte-exact wire format in [`wire`] even though all
//! parties live in one process.

pub mod wire;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use num_bigint::{BigUint, RandBigInt};
use num_traits::ToPrimitive;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{AttackKind, AttackSpec};
use crate::fixedpoint::{encode_vec, FixedPointConfig, FixedPointError};
use crate::fltrust::fixed::{fixed_scores, FixedScores};
use crate::fltrust::{
    local_update, mse_loss, reference_update, Dataset, FlError, ModelKind, ModelParams, Optimizer,
    TrainingConfig,
};
use crate::gadgets::{
    circuit_shape, fltrust_assignment, CircuitSpec, FLTrustPublicInputs, FLTrustWitness, GadgetError,
    Stage, MAX_CIRCUIT_MODULUS_BITS,
};
use crate::paillier::{
    keygen, FixedBaseNonces, PaillierCiphertext, PaillierError, PaillierPrivateKey,
    PaillierPublicKey,
};
use crate::proofsys::{self, Backend, Key, Proof, ProofError, ProvingKey, VerifyingKey};
use crate::r1cs::{modulus as field_modulus, ConstraintSystem, FieldElement};
use crate::rng::{derive_seed, seeded_rng};

use wire::{Reader, Writer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("circuit digest mismatch between setup message and local build")]
    DigestMismatch,
    #[error("party used before setup")]
    NotReady,
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Proof(#[from] ProofError),
    #[error(transparent)]
    Gadget(#[from] GadgetError),
    #[error(transparent)]
    Learning(#[from] FlError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
}

/// Which protocol runs and how much of it is proven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    /// Encrypted plain averaging; no trust scores, no proofs.
    DuoaggPlain,
    /// Trust scores, weighting and in-circuit encryption all proven; toy moduli.
    ByzsflToy,
    /// Trust scores and weighting proven; encryption at production size is
    /// not proven (ciphertexts are not bound to the proof).
    ByzsflLarge,
}

impl ProtocolMode {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolMode::DuoaggPlain => "duoagg_plain",
            ProtocolMode::ByzsflToy => "byzsfl_toy",
            ProtocolMode::ByzsflLarge => "byzsfl_large",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            ProtocolMode::DuoaggPlain => 0,
            ProtocolMode::ByzsflToy => 1,
            ProtocolMode::ByzsflLarge => 2,
        }
    }

    pub fn from_tag(t: u8) -> Result<Self, ProtocolError> {
        match t {
            0 => Ok(ProtocolMode::DuoaggPlain),
            1 => Ok(ProtocolMode::ByzsflToy),
            2 => Ok(ProtocolMode::ByzsflLarge),
            _ => Err(ProtocolError::Malformed(format!("unknown mode tag {t}"))),
        }
    }

    /// Highest proven circuit stage, if proofs are used at all.
    pub fn stage(self) -> Option<Stage> {
        match self {
            ProtocolMode::DuoaggPlain => None,
            ProtocolMode::ByzsflToy => Some(Stage::Encryption),
            ProtocolMode::ByzsflLarge => Some(Stage::WeightedVector),
        }
    }

    pub fn default_modulus_bits(self) -> u32 {
        match self {
            ProtocolMode::ByzsflToy => 48,
            _ => 2048,
        }
    }

    pub fn check_modulus(self, bits: u32) -> Result<(), ProtocolError> {
        let ok = match self {
            ProtocolMode::ByzsflToy => (32..=MAX_CIRCUIT_MODULUS_BITS).contains(&bits),
            _ => (1024..=3072).contains(&bits),
        };
        if ok {
            Ok(())
        } else {
            let range = match self {
                ProtocolMode::ByzsflToy => format!("32..={MAX_CIRCUIT_MODULUS_BITS}"),
                _ => "1024..=3072".to_string(),
            };
            Err(ProtocolError::Config(format!(
                "{} needs a Paillier modulus of {range} bits, got {bits}",
                self.name()
            )))
        }
    }
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolMode {
    type Err = ProtocolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duoagg_plain" => Ok(ProtocolMode::DuoaggPlain),
            "byzsfl_toy" => Ok(ProtocolMode::ByzsflToy),
            "byzsfl_large" => Ok(ProtocolMode::ByzsflLarge),
            other => Err(ProtocolError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub mode: ProtocolMode,
    pub model: ModelKind,
    pub training: TrainingConfig,
    pub fixed: FixedPointConfig,
    pub modulus_bits: u32,
    pub backend: Backend,
}

impl ProtocolConfig {
    pub fn new(mode: ProtocolMode, training: TrainingConfig) -> Self {
        Self {
            mode,
            model: ModelKind::Linear,
            training,
            fixed: FixedPointConfig::default(),
            modulus_bits: mode.default_modulus_bits(),
            backend: Backend::Transparent,
        }
    }

    /// Checks mode limits and the signed headroom `m * 2^(w-1) < n/4`.
    pub fn validate(&self, num_clients: usize, len: usize) -> Result<(), ProtocolError> {
        self.mode.check_modulus(self.modulus_bits)?;
        self.training.validate()?;
        self.model.validate()?;
        if self.backend != Backend::Transparent && self.mode.stage().is_some() {
            return Err(ProofError::BackendUnsupported(self.backend.tag()).into());
        }
        self.fixed.validate_for_len(len)?;
        // n >= 2^(bits-1), so m 2^(w-1) < 2^(bits-3) is sufficient
        let need = crate::fixedpoint::ceil_log2(num_clients.max(1)) + self.fixed.word_bits() - 1;
        if need >= self.modulus_bits - 3 {
            return Err(ProtocolError::Config(format!(
                "{num_clients} clients with {}-bit words can wrap a {}-bit modulus",
                self.fixed.word_bits(),
                self.modulus_bits
            )));
        }
        Ok(())
    }

    fn circuit_spec(&self, len: usize, ek: &PaillierPublicKey) -> Option<CircuitSpec> {
        self.mode.stage().map(|stage| CircuitSpec {
            len,
            fixed: self.fixed,
            stage,
            modulus: (stage == Stage::Encryption).then(|| ek.n().clone()),
        })
    }
}

/// S_E to clients: everything needed to take part in training.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupMessage {
    pub mode: ProtocolMode,
    pub model: ModelKind,
    pub training: TrainingConfig,
    pub fixed: FixedPointConfig,
    pub ek: PaillierPublicKey,
    /// Proving key; carries the circuit digest. Absent without proofs.
    pub pk: Option<ProvingKey>,
    pub round: u64,
    pub beta: Vec<f64>,
    /// Reference update for the first round, raw fixed point.
    pub g_star: Vec<i64>,
}

/// S_E to S_C: verification material. The decryption key is not part of it.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierSetup {
    pub mode: ProtocolMode,
    pub fixed: FixedPointConfig,
    pub len: u32,
    pub ek: PaillierPublicKey,
    pub vk: Option<VerifyingKey>,
    pub round: u64,
    pub g_star: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSubmission {
    pub client_id: u32,
    pub round: u64,
    pub c_ts: Option<PaillierCiphertext>,
    pub c_h: Vec<PaillierCiphertext>,
    pub proof: Option<Proof>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMessage {
    pub round: u64,
    pub c_h: Vec<PaillierCiphertext>,
    pub c_ts: Option<PaillierCiphertext>,
    pub accepted: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBroadcast {
    pub round: u64,
    pub beta: Vec<f64>,
    pub g_star: Vec<i64>,
}

fn encode_model(w: &mut Writer, m: &ModelKind) {
    match *m {
        ModelKind::Linear => w.u8(0).u32(0),
        ModelKind::Mlp { hidden } => w.u8(1).u32(hidden as u32),
    };
}

fn decode_model(r: &mut Reader) -> Result<ModelKind, ProtocolError> {
    let tag = r.u8()?;
    let hidden = r.u32()? as usize;
    match tag {
        0 => Ok(ModelKind::Linear),
        1 => Ok(ModelKind::Mlp { hidden }),
        t => Err(ProtocolError::Malformed(format!("unknown model tag {t}"))),
    }
}

fn decode_fixed(r: &mut Reader) -> Result<FixedPointConfig, ProtocolError> {
    let f = r.u8()? as u32;
    let w = r.u8()? as u32;
    FixedPointConfig::new(f, w).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

fn decode_key(r: &mut Reader) -> Result<Option<Key>, ProtocolError> {
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let (k, used) = Key::from_bytes(r.rest())?;
            r.advance(used);
            Ok(Some(k))
        }
        t => Err(ProtocolError::Malformed(format!("bad key flag {t}"))),
    }
}

fn encode_key(w: &mut Writer, k: &Option<Key>) {
    match k {
        None => w.u8(0),
        Some(k) => w.u8(1).bytes(&k.to_bytes()),
    };
}

fn decode_ek(r: &mut Reader) -> Result<PaillierPublicKey, ProtocolError> {
    let (ek, used) = PaillierPublicKey::from_bytes(r.rest())?;
    r.advance(used);
    Ok(ek)
}

const LOSS_MSE: u8 = 0;
const OPT_SGD: u8 = 0;

impl SetupMessage {
    pub fn to_frame(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.mode.tag()).u8(LOSS_MSE);
        encode_model(&mut w, &self.model);
        w.f64(self.training.eta)
            .f64(self.training.alpha)
            .u32(self.training.epochs as u32)
            .u8(OPT_SGD)
            .u8(self.fixed.frac_bits() as u8)
            .u8(self.fixed.word_bits() as u8)
            .bytes(&self.ek.to_bytes());
        encode_key(&mut w, &self.pk);
        w.u64(self.round).real_vec(&self.beta).fixed_vec(&self.g_star);
        wire::frame(wire::SETUP, &w.into_inner())
    }

    pub fn from_frame(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(wire::unframe(bytes, wire::SETUP)?);
        let mode = ProtocolMode::from_tag(r.u8()?)?;
        if r.u8()? != LOSS_MSE {
            return Err(ProtocolError::Malformed("unknown loss function".into()));
        }
        let model = decode_model(&mut r)?;
        let eta = r.f64()?;
        let alpha = r.f64()?;
        let epochs = r.u32()? as usize;
        if r.u8()? != OPT_SGD {
            return Err(ProtocolError::Malformed("unknown optimizer".into()));
        }
        let fixed = decode_fixed(&mut r)?;
        let ek = decode_ek(&mut r)?;
        let pk = decode_key(&mut r)?;
        let round = r.u64()?;
        let beta = r.real_vec()?;
        let g_star = r.fixed_vec()?;
        r.finish()?;
        Ok(Self {
            mode,
            model,
            training: TrainingConfig {
                eta,
                alpha,
                epochs,
                optimizer: Optimizer::Sgd,
            },
            fixed,
            ek,
            pk,
            round,
            beta,
            g_star,
        })
    }
}

impl VerifierSetup {
    pub fn to_frame(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.mode.tag())
            .u8(self.fixed.frac_bits() as u8)
            .u8(self.fixed.word_bits() as u8)
            .u32(self.len)
            .bytes(&self.ek.to_bytes());
        encode_key(&mut w, &self.vk);
        w.u64(self.round).fixed_vec(&self.g_star);
        wire::frame(wire::VERIFIER_SETUP, &w.into_inner())
    }

    pub fn from_frame(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(wire::unframe(bytes, wire::VERIFIER_SETUP)?);
        let mode = ProtocolMode::from_tag(r.u8()?)?;
        let fixed = decode_fixed(&mut r)?;
        let len = r.u32()?;
        let ek = decode_ek(&mut r)?;
        let vk = decode_key(&mut r)?;
        let round = r.u64()?;
        let g_star = r.fixed_vec()?;
        r.finish()?;
        Ok(Self {
            mode,
            fixed,
            len,
            ek,
            vk,
            round,
            g_star,
        })
    }
}

const HAS_TS: u8 = 1;
const HAS_PROOF: u8 = 2;

impl ClientSubmission {
    pub fn to_frame(&self, ek: &PaillierPublicKey) -> Vec<u8> {
        let width = ek.ciphertext_width();
        let mut flags = 0;
        if self.c_ts.is_some() {
            flags |= HAS_TS;
        }
        if self.proof.is_some() {
            flags |= HAS_PROOF;
        }
        let mut w = Writer::new();
        w.u32(self.client_id).u64(self.round).u8(flags);
        if let Some(c) = &self.c_ts {
            w.ciphertext(c, width);
        }
        w.ciphertexts(&self.c_h, width);
        if let Some(p) = &self.proof {
            w.bytes(&p.to_bytes());
        }
        wire::frame(wire::SUBMISSION, &w.into_inner())
    }

    pub fn from_frame(bytes: &[u8], ek: &PaillierPublicKey) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(wire::unframe(bytes, wire::SUBMISSION)?);
        let client_id = r.u32()?;
        let round = r.u64()?;
        let flags = r.u8()?;
        if flags & !(HAS_TS | HAS_PROOF) != 0 {
            return Err(ProtocolError::Malformed(format!("unknown flags {flags:#x}")));
        }
        let c_ts = if flags & HAS_TS != 0 {
            Some(r.ciphertext(ek)?)
        } else {
            None
        };
        let c_h = r.ciphertexts(ek)?;
        let proof = if flags & HAS_PROOF != 0 {
            let (p, used) = Proof::from_bytes(r.rest())?;
            r.advance(used);
            Some(p)
        } else {
            None
        };
        r.finish()?;
        Ok(Self {
            client_id,
            round,
            c_ts,
            c_h,
            proof,
        })
    }
}

impl AggregateMessage {
    pub fn to_frame(&self, ek: &PaillierPublicKey) -> Vec<u8> {
        let width = ek.ciphertext_width();
        let mut w = Writer::new();
        w.u64(self.round).u8(if self.c_ts.is_some() { HAS_TS } else { 0 });
        if let Some(c) = &self.c_ts {
            w.ciphertext(c, width);
        }
        w.ciphertexts(&self.c_h, width);
        w.u32(self.accepted.len() as u32);
        for &id in &self.accepted {
            w.u32(id);
        }
        wire::frame(wire::AGGREGATE, &w.into_inner())
    }

    pub fn from_frame(bytes: &[u8], ek: &PaillierPublicKey) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(wire::unframe(bytes, wire::AGGREGATE)?);
        let round = r.u64()?;
        let c_ts = match r.u8()? {
            0 => None,
            HAS_TS => Some(r.ciphertext(ek)?),
            f => return Err(ProtocolError::Malformed(format!("unknown flags {f:#x}"))),
        };
        let c_h = r.ciphertexts(ek)?;
        let n = r.u32()? as usize;
        if n * 4 > r.rest().len() {
            return Err(ProtocolError::Malformed("accepted count exceeds body".into()));
        }
        let accepted = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(Self {
            round,
            c_h,
            c_ts,
            accepted,
        })
    }
}

impl ModelBroadcast {
    pub fn to_frame(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.round).real_vec(&self.beta).fixed_vec(&self.g_star);
        wire::frame(wire::BROADCAST, &w.into_inner())
    }

    pub fn from_frame(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(wire::unframe(bytes, wire::BROADCAST)?);
        let round = r.u64()?;
        let beta = r.real_vec()?;
        let g_star = r.fixed_vec()?;
        r.finish()?;
        Ok(Self { round, beta, g_star })
    }
}

/// Builds the circuit for a mode and checks it against a key digest.
fn circuit_for(
    spec: &Option<CircuitSpec>,
    key: &Option<Key>,
    shared: Option<Arc<ConstraintSystem>>,
) -> Result<Option<Arc<ConstraintSystem>>, ProtocolError> {
    match (spec, key) {
        (None, None) => Ok(None),
        (Some(spec), Some(key)) => {
            let cs = match shared {
                Some(cs) => cs,
                None => Arc::new(circuit_shape(spec)?),
            };
            if &cs.digest() != key.digest() {
                return Err(ProtocolError::DigestMismatch);
            }
            Ok(Some(cs))
        }
        _ => Err(ProtocolError::Config("proof key and mode disagree".into())),
    }
}

/// The encryption server. Sole holder of the decryption key.
pub struct EncryptionServer {
    cfg: ProtocolConfig,
    ek: PaillierPublicKey,
    dk: PaillierPrivateKey,
    d_star: Dataset,
    beta: ModelParams,
    g_star: Vec<i64>,
    round: u64,
    decryptions: u64,
    circuit: Option<Arc<ConstraintSystem>>,
}

impl fmt::Debug for EncryptionServer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptionServer")
            .field("mode", &self.cfg.mode)
            .field("round", &self.round)
            .field("decryptions", &self.decryptions)
            .finish_non_exhaustive()
    }
}

/// What S_E learned when finishing a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Finalized {
    pub h_sum: Vec<i128>,
    pub ts_sum: Option<i128>,
    pub degenerate: bool,
    pub decryptions: u64,
}

/// Generates keys, builds the circuit, runs proof setup and computes the
/// first reference update.
pub fn se_setup(
    cfg: &ProtocolConfig,
    num_clients: usize,
    d_star: Dataset,
    beta0: ModelParams,
    seed: &[u8],
) -> Result<(EncryptionServer, SetupMessage, VerifierSetup), ProtocolError> {
    let len = beta0.len();
    if cfg.model.param_len(d_star.n_features()) != len {
        return Err(FlError::DimensionMismatch {
            expected: cfg.model.param_len(d_star.n_features()),
            got: len,
        }
        .into());
    }
    cfg.validate(num_clients, len)?;
    let (ek, dk) = keygen(cfg.modulus_bits, &derive_seed(seed, "paillier"))?;
    let spec = cfg.circuit_spec(len, &ek);
    let (circuit, keys) = match &spec {
        Some(spec) => {
            let cs = circuit_shape(spec)?;
            let keys = proofsys::setup(&cs, cfg.backend)?;
            (Some(Arc::new(cs)), Some(keys))
        }
        None => (None, None),
    };
    let mut se = EncryptionServer {
        cfg: cfg.clone(),
        ek: ek.clone(),
        dk,
        d_star,
        beta: beta0,
        g_star: Vec::new(),
        round: 0,
        decryptions: 0,
        circuit,
    };
    se.g_star = se.reference()?;
    let (pk, vk) = match keys {
        Some((pk, vk)) => (Some(pk), Some(vk)),
        None => (None, None),
    };
    let setup = SetupMessage {
        mode: cfg.mode,
        model: cfg.model,
        training: cfg.training,
        fixed: cfg.fixed,
        ek: ek.clone(),
        pk,
        round: 0,
        beta: se.beta.beta.clone(),
        g_star: se.g_star.clone(),
    };
    let verifier = VerifierSetup {
        mode: cfg.mode,
        fixed: cfg.fixed,
        len: len as u32,
        ek,
        vk,
        round: 0,
        g_star: se.g_star.clone(),
    };
    Ok((se, setup, verifier))
}

impl EncryptionServer {
    fn reference(&self) -> Result<Vec<i64>, ProtocolError> {
        if self.cfg.mode == ProtocolMode::DuoaggPlain {
            return Ok(Vec::new());
        }
        let g = reference_update(&self.cfg.model, &self.beta, &self.d_star, &self.cfg.training)?;
        Ok(encode_vec(&g, self.cfg.fixed)?)
    }

    pub fn beta(&self) -> &ModelParams {
        &self.beta
    }

    pub fn g_star(&self) -> &[i64] {
        &self.g_star
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn ek(&self) -> &PaillierPublicKey {
        &self.ek
    }

    /// Total decryptions performed so far.
    pub fn decryptions(&self) -> u64 {
        self.decryptions
    }

    /// The circuit clients and S_C should build; shared to save rebuilding in simulation.
    pub fn circuit(&self) -> Option<Arc<ConstraintSystem>> {
        self.circuit.clone()
    }

    pub fn loss(&self) -> Result<f64, ProtocolError> {
        Ok(mse_loss(&self.cfg.model, &self.beta, &self.d_star)?)
    }

    /// True when the reference update is zero and a weighted round cannot run.
    pub fn reference_is_zero(&self) -> bool {
        self.cfg.mode != ProtocolMode::DuoaggPlain && self.g_star.iter().all(|&g| g == 0)
    }

    fn decrypt_signed(&mut self, c: &PaillierCiphertext) -> Result<i128, ProtocolError> {
        self.decryptions += 1;
        let m = self.dk.decrypt(c, &self.ek)?;
        self.ek
            .decode_signed(&m)
            .to_i128()
            .ok_or_else(|| ProtocolError::Malformed("decrypted sum exceeds i128".into()))
    }

    fn broadcast(&mut self) -> Result<ModelBroadcast, ProtocolError> {
        self.round += 1;
        self.g_star = self.reference()?;
        Ok(ModelBroadcast {
            round: self.round,
            beta: self.beta.beta.clone(),
            g_star: self.g_star.clone(),
        })
    }

    /// Decrypts the aggregate, applies the update unless the round is
    /// degenerate, and recomputes the reference update at the new model.
    pub fn finalize(
        &mut self,
        agg: &AggregateMessage,
    ) -> Result<(ModelBroadcast, Finalized), ProtocolError> {
        if agg.round != self.round {
            return Err(ProtocolError::Malformed(format!(
                "aggregate for round {} during round {}",
                agg.round, self.round
            )));
        }
        let len = self.beta.len();
        if agg.c_h.len() != len {
            return Err(ProtocolError::Malformed("aggregate length".into()));
        }
        let before = self.decryptions;
        let h_sum = agg
            .c_h
            .iter()
            .map(|c| self.decrypt_signed(c))
            .collect::<Result<Vec<_>, _>>()?;
        let alpha = self.cfg.training.alpha;
        let scale = self.cfg.fixed.scale() as f64;
        let (ts_sum, degenerate) = match self.cfg.mode {
            ProtocolMode::DuoaggPlain => {
                let m = agg.accepted.len();
                if m > 0 {
                    for (b, &h) in self.beta.beta.iter_mut().zip(&h_sum) {
                        *b += alpha * (h as f64 / scale) / m as f64;
                    }
                }
                (None, m == 0)
            }
            _ => {
                let c_ts = agg
                    .c_ts
                    .as_ref()
                    .ok_or_else(|| ProtocolError::Malformed("aggregate lacks C(TS)".into()))?;
                let ts = self.decrypt_signed(c_ts)?;
                let applied = crate::fltrust::fixed::apply_raw_update(
                    &mut self.beta.beta,
                    &h_sum,
                    ts,
                    alpha,
                );
                (Some(ts), !applied)
            }
        };
        let out = Finalized {
            h_sum,
            ts_sum,
            degenerate,
            decryptions: self.decryptions - before,
        };
        Ok((self.broadcast()?, out))
    }

    /// Advances without an aggregate (reference update is zero).
    pub fn skip_round(&mut self) -> Result<ModelBroadcast, ProtocolError> {
        self.broadcast()
    }
}

/// Verdict on one submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub client_id: u32,
    pub accepted: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ServerTimings {
    pub compute: f64,
    pub verify: f64,
}

/// The computing server. Holds the public key and the verifying key only.
#[derive(Debug)]
pub struct ComputingServer {
    mode: ProtocolMode,
    fixed: FixedPointConfig,
    len: usize,
    ek: PaillierPublicKey,
    vk: Option<VerifyingKey>,
    circuit: Option<Arc<ConstraintSystem>>,
    round: u64,
    g_star: Vec<i64>,
}

impl ComputingServer {
    /// Installs verification material, building the circuit locally unless a
    /// shared copy is supplied; either way it must match the key's digest.
    pub fn new(
        msg: &VerifierSetup,
        shared: Option<Arc<ConstraintSystem>>,
    ) -> Result<Self, ProtocolError> {
        let spec = msg.mode.stage().map(|stage| CircuitSpec {
            len: msg.len as usize,
            fixed: msg.fixed,
            stage,
            modulus: (stage == Stage::Encryption).then(|| msg.ek.n().clone()),
        });
        let circuit = circuit_for(&spec, &msg.vk, shared)?;
        Ok(Self {
            mode: msg.mode,
            fixed: msg.fixed,
            len: msg.len as usize,
            ek: msg.ek.clone(),
            vk: msg.vk.clone(),
            circuit,
            round: msg.round,
            g_star: msg.g_star.clone(),
        })
    }

    pub fn receive_broadcast(&mut self, b: &ModelBroadcast) {
        self.round = b.round;
        self.g_star = b.g_star.clone();
    }

    pub fn ek(&self) -> &PaillierPublicKey {
        &self.ek
    }

    pub fn fixed(&self) -> FixedPointConfig {
        self.fixed
    }

    fn check(&self, s: &ClientSubmission) -> Result<(), String> {
        if s.round != self.round {
            return Err(format!("submission for round {} during round {}", s.round, self.round));
        }
        if s.c_h.len() != self.len {
            return Err(format!("{} ciphertexts, expected {}", s.c_h.len(), self.len));
        }
        let Some(vk) = &self.vk else {
            return Ok(());
        };
        let (Some(proof), Some(c_ts)) = (&s.proof, &s.c_ts) else {
            return Err("missing proof or C(TS)".into());
        };
        let publics = FLTrustPublicInputs {
            g_star: self.g_star.clone(),
            c_h: if self.mode == ProtocolMode::ByzsflToy {
                s.c_h.iter().map(|c| c.value().clone()).collect()
            } else {
                Vec::new()
            },
            c_ts: (self.mode == ProtocolMode::ByzsflToy).then(|| c_ts.value().clone()),
        };
        let cs = self.circuit.as_ref().expect("circuit installed with vk");
        match proofsys::verify(vk, cs, proof, &publics.to_field()) {
            Ok(true) => Ok(()),
            Ok(false) => Err("proof does not verify".into()),
            Err(e) => Err(e.to_string()),
        }
    }

    /// Verifies every submission and multiplies the accepted ciphertexts.
    pub fn aggregate(
        &self,
        submissions: &[ClientSubmission],
    ) -> (AggregateMessage, Vec<Verdict>, ServerTimings) {
        let mut timings = ServerTimings::default();
        let mut verdicts = Vec::with_capacity(submissions.len());
        let mut accepted: Vec<&ClientSubmission> = Vec::new();
        let start = Instant::now();
        for s in submissions {
            let result = if accepted.iter().any(|a| a.client_id == s.client_id) {
                Err("duplicate client id".to_string())
            } else {
                self.check(s)
            };
            verdicts.push(Verdict {
                client_id: s.client_id,
                accepted: result.is_ok(),
                reason: result.err(),
            });
            if verdicts.last().unwrap().accepted {
                accepted.push(s);
            }
        }
        timings.verify = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let mut c_h = vec![self.ek.zero_ciphertext(); self.len];
        let mut c_ts = self.vk.as_ref().map(|_| self.ek.zero_ciphertext());
        for s in &accepted {
            for (acc, c) in c_h.iter_mut().zip(&s.c_h) {
                *acc = self.ek.add(acc, c).expect("ciphertexts decoded under this key");
            }
            if let (Some(acc), Some(c)) = (c_ts.as_mut(), s.c_ts.as_ref()) {
                *acc = self.ek.add(acc, c).expect("ciphertexts decoded under this key");
            }
        }
        let mut ids: Vec<u32> = accepted.iter().map(|s| s.client_id).collect();
        ids.sort_unstable();
        timings.compute = start.elapsed().as_secs_f64();
        (
            AggregateMessage {
                round: self.round,
                c_h,
                c_ts,
                accepted: ids,
            },
            verdicts,
            timings,
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClientTimings {
    pub compute: f64,
    pub encrypt: f64,
    pub prove: f64,
}

/// Client-side view of one round, for analysis only (never sent).
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRound {
    pub submission: ClientSubmission,
    pub scores: Option<FixedScores>,
    pub timings: ClientTimings,
}

struct ClientSetup {
    mode: ProtocolMode,
    model: ModelKind,
    training: TrainingConfig,
    fixed: FixedPointConfig,
    ek: PaillierPublicKey,
    pk: Option<ProvingKey>,
    spec: Option<CircuitSpec>,
    circuit: Option<Arc<ConstraintSystem>>,
    nonces: Option<FixedBaseNonces>,
}

/// A client. Holds its dataset, the public key and the proving key only.
pub struct Client {
    id: u32,
    data: Dataset,
    rng: ChaCha20Rng,
    attack: Option<AttackKind>,
    setup: Option<ClientSetup>,
    beta: Vec<f64>,
    g_star: Vec<i64>,
    round: u64,
    last_proof: Option<Proof>,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("id", &self.id)
            .field("examples", &self.data.len())
            .field("attack", &self.attack)
            .field("round", &self.round)
            .field("ek", &self.setup.as_ref().map(|s| s.ek.id()))
            .finish_non_exhaustive()
    }
}

impl Client {
    /// A client with its own deterministic randomness. Data-poisoning
    /// attacks are applied here, once.
    pub fn new(
        id: u32,
        mut data: Dataset,
        seed: &[u8],
        attack: Option<AttackKind>,
    ) -> Result<Self, ProtocolError> {
        let mut rng = seeded_rng(&derive_seed(seed, &format!("client/{id}")));
        if let Some(a) = &attack {
            a.validate()
                .map_err(|e| ProtocolError::Config(e.to_string()))?;
            a.poison_dataset(&mut data, &mut rng);
        }
        Ok(Self {
            id,
            data,
            rng,
            attack,
            setup: None,
            beta: Vec::new(),
            g_star: Vec::new(),
            round: 0,
            last_proof: None,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn attack(&self) -> Option<AttackKind> {
        self.attack
    }

    /// Installs setup; the locally built circuit must match the proving key.
    pub fn receive_setup(
        &mut self,
        msg: &SetupMessage,
        shared: Option<Arc<ConstraintSystem>>,
    ) -> Result<(), ProtocolError> {
        let len = msg.beta.len();
        if msg.model.param_len(self.data.n_features()) != len {
            return Err(FlError::DimensionMismatch {
                expected: msg.model.param_len(self.data.n_features()),
                got: len,
            }
            .into());
        }
        let spec = msg.mode.stage().map(|stage| CircuitSpec {
            len,
            fixed: msg.fixed,
            stage,
            modulus: (stage == Stage::Encryption).then(|| msg.ek.n().clone()),
        });
        let circuit = circuit_for(&spec, &msg.pk, shared)?;
        // randomness that never enters a circuit can come from a fixed-base table
        let nonces = (msg.mode != ProtocolMode::ByzsflToy && msg.ek.modulus_bits() >= 1024).then(|| {
            FixedBaseNonces::new(&msg.ek, FixedBaseNonces::DEFAULT_EXPONENT_BITS, &mut self.rng)
        });
        self.setup = Some(ClientSetup {
            mode: msg.mode,
            model: msg.model,
            training: msg.training,
            fixed: msg.fixed,
            ek: msg.ek.clone(),
            pk: msg.pk.clone(),
            spec,
            circuit,
            nonces,
        });
        self.beta = msg.beta.clone();
        self.g_star = msg.g_star.clone();
        self.round = msg.round;
        Ok(())
    }

    pub fn receive_broadcast(&mut self, b: &ModelBroadcast) {
        self.beta = b.beta.clone();
        self.g_star = b.g_star.clone();
        self.round = b.round;
    }

    fn encrypt_signed(
        setup: &ClientSetup,
        rng: &mut ChaCha20Rng,
        v: i64,
    ) -> Result<(PaillierCiphertext, BigUint), ProtocolError> {
        let m = setup.ek.encode_i64(v)?;
        match &setup.nonces {
            Some(table) => {
                let rn = table.sample(rng);
                Ok((setup.ek.encrypt_with_factor(&m, &rn)?, BigUint::default()))
            }
            None => {
                let r = setup.ek.sample_randomness(rng);
                Ok((setup.ek.encrypt(&m, &r)?, r))
            }
        }
    }

    /// Computes the local update, scores, ciphertexts and proof for this round.
    pub fn submit(&mut self) -> Result<ClientRound, ProtocolError> {
        let setup = self.setup.as_ref().ok_or(ProtocolError::NotReady)?;
        let t0 = Instant::now();
        let beta = ModelParams {
            beta: self.beta.clone(),
        };
        let mut g = local_update(&setup.model, &beta, &self.data, &setup.training)?;
        if let Some(a) = &self.attack {
            a.transform_update(&mut g);
        }
        let g_raw = encode_vec(&g, setup.fixed)?;
        let mut timings = ClientTimings::default();

        if setup.mode == ProtocolMode::DuoaggPlain {
            timings.compute = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let c_h = g_raw
                .iter()
                .map(|&v| Self::encrypt_signed(setup, &mut self.rng, v).map(|x| x.0))
                .collect::<Result<Vec<_>, _>>()?;
            timings.encrypt = t1.elapsed().as_secs_f64();
            return Ok(ClientRound {
                submission: ClientSubmission {
                    client_id: self.id,
                    round: self.round,
                    c_ts: None,
                    c_h,
                    proof: None,
                },
                scores: None,
                timings,
            });
        }

        let s = setup.fixed.scale();
        let (scores, honest) = match fixed_scores(&self.g_star, &g_raw, setup.fixed) {
            Ok(sc) => (Some(sc), true),
            // a zero update cannot satisfy the circuit; it is sent unproven and rejected
            Err(FlError::ZeroVector) => (None, false),
            Err(e) => return Err(e.into()),
        };
        let (mut ts, mut ts_norm, mut h) = match &scores {
            Some(sc) => (sc.ts, sc.ts_norm, sc.h.clone()),
            None => (0, 0, vec![0; g_raw.len()]),
        };
        let mut tampered = !honest;
        if self.attack == Some(AttackKind::InflatedWeight) {
            ts_norm = s;
            h = g_raw.clone();
            tampered = true;
        }
        ts = ts.max(0);
        timings.compute = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut c_h = Vec::with_capacity(h.len());
        let mut r_h = Vec::with_capacity(h.len());
        for &v in &h {
            let (c, r) = Self::encrypt_signed(setup, &mut self.rng, v)?;
            c_h.push(c);
            r_h.push(r);
        }
        let (c_ts, r_ts) = Self::encrypt_signed(setup, &mut self.rng, ts)?;
        timings.encrypt = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let spec = setup.spec.as_ref().expect("proof modes carry a spec");
        let cs = setup.circuit.as_ref().expect("proof modes carry a circuit");
        let pk = setup.pk.as_ref().expect("proof modes carry a proving key");
        let toy = setup.mode == ProtocolMode::ByzsflToy;
        let publics = FLTrustPublicInputs {
            g_star: self.g_star.clone(),
            c_h: if toy {
                c_h.iter().map(|c| c.value().clone()).collect()
            } else {
                Vec::new()
            },
            c_ts: toy.then(|| c_ts.value().clone()),
        };
        let witness = FLTrustWitness {
            g_i: g_raw,
            ts,
            ts_norm,
            h,
            r_h: if toy { r_h } else { Vec::new() },
            r_ts,
        };
        let asg = fltrust_assignment(spec, &publics, &witness, !tampered)?;
        let honest_proof = if tampered {
            proofsys::prove_unchecked(pk, &asg)
        } else {
            proofsys::prove(pk, cs, &asg)?
        };
        let mut c_ts = c_ts;
        let proof = match self.attack {
            Some(AttackKind::ForgedProof) => {
                let r = field_modulus();
                let payload = (0..honest_proof.payload().len())
                    .map(|_| FieldElement::from_biguint(&self.rng.gen_biguint_below(r)))
                    .collect();
                Proof::from_parts(pk.backend(), payload)
            }
            Some(AttackKind::ReplayedProof) => {
                match self.last_proof.replace(honest_proof.clone()) {
                    Some(old) => old,
                    None => {
                        // nothing to replay yet: reuse this proof on re-randomized ciphertexts
                        let setup = self.setup.as_ref().unwrap();
                        for (c, &v) in c_h.iter_mut().zip(&witness.h) {
                            *c = Self::encrypt_signed(setup, &mut self.rng, v)?.0;
                        }
                        c_ts = Self::encrypt_signed(setup, &mut self.rng, ts)?.0;
                        honest_proof
                    }
                }
            }
            _ => honest_proof,
        };
        timings.prove = t2.elapsed().as_secs_f64();
        Ok(ClientRound {
            submission: ClientSubmission {
                client_id: self.id,
                round: self.round,
                c_ts: Some(c_ts),
                c_h,
                proof: Some(proof),
            },
            scores,
            timings,
        })
    }
}

/// Serialized sizes of one round's messages, in bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSizes {
    /// Whole submission frame per client, in submission order.
    pub submissions: Vec<usize>,
    /// Residue bytes of one client's C(H) vector.
    pub client_ciphertext_vector: usize,
    /// Proof bytes of one client (0 without proofs).
    pub proof: usize,
    pub aggregate: usize,
    /// Residue bytes of the aggregated C(H) vector.
    pub aggregate_ciphertext_vector: usize,
    pub broadcast: usize,
    /// Model vector bytes in the broadcast (8 per coordinate).
    pub broadcast_model_vector: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub client_compute: f64,
    pub client_encrypt: f64,
    pub client_prove: f64,
    pub sc_compute: f64,
    pub sc_verify: f64,
    pub se_decrypt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub beta: Vec<f64>,
    pub loss: f64,
    pub accepted: Vec<u32>,
    pub rejected: Vec<u32>,
    pub h_sum: Vec<i128>,
    pub ts_sum: Option<i128>,
    pub degenerate: bool,
    pub decryptions: u64,
    /// Oracle-side TS̃ per client id (raw), for analysis.
    pub ts_norm: Vec<(u32, Option<i64>)>,
    pub sizes: MessageSizes,
    pub timings: PhaseTimings,
}

/// All parties wired over the in-process bus.
pub struct Simulation {
    se: EncryptionServer,
    sc: ComputingServer,
    clients: Vec<Client>,
    transcript: Vec<Vec<u8>>,
}

impl fmt::Debug for Simulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulation")
            .field("se", &self.se)
            .field("clients", &self.clients.len())
            .finish_non_exhaustive()
    }
}

impl Simulation {
    /// `clients` pairs each id with its dataset.
    pub fn new(
        cfg: &ProtocolConfig,
        clients: Vec<(u32, Dataset)>,
        d_star: Dataset,
        beta0: ModelParams,
        attacks: &[AttackSpec],
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        let seed = seed.to_be_bytes();
        let (se, setup, verifier) = se_setup(cfg, clients.len(), d_star, beta0, &seed)?;
        let setup = SetupMessage::from_frame(&setup.to_frame())?;
        let verifier = VerifierSetup::from_frame(&verifier.to_frame())?;
        let shared = se.circuit();
        let sc = ComputingServer::new(&verifier, shared.clone())?;
        let clients = clients
            .into_iter()
            .map(|(id, data)| {
                let mut c = Client::new(id, data, &seed, AttackSpec::kind_for(attacks, id))?;
                c.receive_setup(&setup, shared.clone())?;
                Ok(c)
            })
            .collect::<Result<Vec<_>, ProtocolError>>()?;
        Ok(Self {
            se,
            sc,
            clients,
            transcript: Vec::new(),
        })
    }

    pub fn encryption_server(&self) -> &EncryptionServer {
        &self.se
    }

    pub fn computing_server(&self) -> &ComputingServer {
        &self.sc
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    /// Aggregate and broadcast frames of every round so far, in order.
    pub fn transcript(&self) -> &[Vec<u8>] {
        &self.transcript
    }

    pub fn beta(&self) -> &ModelParams {
        self.se.beta()
    }

    fn deliver(&mut self, frame: &[u8]) -> Result<ModelBroadcast, ProtocolError> {
        let b = ModelBroadcast::from_frame(frame)?;
        self.sc.receive_broadcast(&b);
        for c in &mut self.clients {
            c.receive_broadcast(&b);
        }
        Ok(b)
    }

    /// Runs one round end to end.
    pub fn round(&mut self) -> Result<RoundReport, ProtocolError> {
        let round = self.se.round();
        if self.se.reference_is_zero() {
            let frame = self.se.skip_round()?.to_frame();
            self.transcript.push(frame.clone());
            self.deliver(&frame)?;
            return Ok(RoundReport {
                round,
                beta: self.se.beta().beta.clone(),
                loss: self.se.loss()?,
                accepted: vec![],
                rejected: vec![],
                h_sum: vec![],
                ts_sum: None,
                degenerate: true,
                decryptions: 0,
                ts_norm: vec![],
                sizes: MessageSizes {
                    broadcast: frame.len(),
                    ..Default::default()
                },
                timings: PhaseTimings::default(),
            });
        }
        let ek = self.sc.ek().clone();
        let mut timings = PhaseTimings::default();
        let mut sizes = MessageSizes::default();
        let mut submissions = Vec::with_capacity(self.clients.len());
        let mut ts_norm = Vec::with_capacity(self.clients.len());
        for c in &mut self.clients {
            let out = c.submit()?;
            timings.client_compute = timings.client_compute.max(out.timings.compute);
            timings.client_encrypt = timings.client_encrypt.max(out.timings.encrypt);
            timings.client_prove = timings.client_prove.max(out.timings.prove);
            ts_norm.push((c.id(), out.scores.as_ref().map(|s| s.ts_norm)));
            let frame = out.submission.to_frame(&ek);
            sizes.submissions.push(frame.len());
            sizes.client_ciphertext_vector = out.submission.c_h.len() * ek.ciphertext_width();
            sizes.proof = out.submission.proof.as_ref().map_or(0, |p| p.encoded_len());
            submissions.push(ClientSubmission::from_frame(&frame, &ek)?);
        }
        let (agg, verdicts, sc_t) = self.sc.aggregate(&submissions);
        timings.sc_compute = sc_t.compute;
        timings.sc_verify = sc_t.verify;
        let agg_frame = agg.to_frame(&ek);
        sizes.aggregate = agg_frame.len();
        sizes.aggregate_ciphertext_vector = agg.c_h.len() * ek.ciphertext_width();
        self.transcript.push(agg_frame.clone());
        let agg = AggregateMessage::from_frame(&agg_frame, self.se.ek())?;
        let t = Instant::now();
        let (broadcast, fin) = self.se.finalize(&agg)?;
        timings.se_decrypt = t.elapsed().as_secs_f64();
        let frame = broadcast.to_frame();
        sizes.broadcast = frame.len();
        sizes.broadcast_model_vector = 8 * broadcast.beta.len();
        self.transcript.push(frame.clone());
        self.deliver(&frame)?;
        Ok(RoundReport {
            round,
            beta: self.se.beta().beta.clone(),
            loss: self.se.loss()?,
            accepted: agg.accepted.clone(),
            rejected: verdicts
                .iter()
                .filter(|v| !v.accepted)
                .map(|v| v.client_id)
                .collect(),
            h_sum: fin.h_sum,
            ts_sum: fin.ts_sum,
            degenerate: fin.degenerate,
            decryptions: fin.decryptions,
            ts_norm,
            sizes,
            timings,
        })
    }
}

/// Runs `rounds` rounds and returns one report per round.
pub fn run_training(sim: &mut Simulation, rounds: usize) -> Result<Vec<RoundReport>, ProtocolError> {
    (0..rounds).map(|_| sim.round()).collect()
}
