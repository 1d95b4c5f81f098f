//! R1CS gadgets and the three-stage trust-score circuit.
//!
//! Every gadget both emits constraints and fills in its witness values. A
//! [`Builder`] either records constraints (to fix the circuit shape) or only
//! computes values (to produce an assignment for an already known shape).
//! No gadget branches on witness values, so the shape depends only on the
//! [`CircuitSpec`] and the public key.
//!
//! In strict mode a gadget refuses inputs that cannot satisfy it. In lenient
//! mode it fills in whatever the claimed values imply and lets the
//! constraints fail; this is how tampered witnesses are produced.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::fixedpoint::{ceil_log2, FixedPointConfig, FixedPointError};
use crate::r1cs::{Assignment, ConstraintSystem, FieldElement, LinearCombination, Variable};

type Lc = LinearCombination;

/// Largest modulus a single modmul quotient can handle without wrapping the field.
pub const MAX_MODMUL_BITS: u32 = 120;
/// Largest Paillier modulus the encryption stage supports.
pub const MAX_CIRCUIT_MODULUS_BITS: u32 = 60;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GadgetError {
    #[error("value does not fit in {bits} bits")]
    OutOfRange { bits: u32 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("claimed value disagrees with the computation: {0}")]
    Mismatch(&'static str),
    #[error("modulus of {0} bits is too large for one field element")]
    ModulusTooLarge(u32),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid circuit spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
}

/// Constraint and witness builder.
pub struct Builder {
    cs: Option<ConstraintSystem>,
    publics: Vec<FieldElement>,
    witnesses: Vec<FieldElement>,
    strict: bool,
}

impl Builder {
    /// Records constraints and values.
    pub fn recording(strict: bool) -> Self {
        Self {
            cs: Some(ConstraintSystem::new()),
            publics: Vec::new(),
            witnesses: Vec::new(),
            strict,
        }
    }

    /// Computes values only.
    pub fn witness_only(strict: bool) -> Self {
        Self {
            cs: None,
            publics: Vec::new(),
            witnesses: Vec::new(),
            strict,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.cs.is_some()
    }

    pub fn alloc_public(&mut self, v: FieldElement) -> Variable {
        assert!(self.witnesses.is_empty(), "publics must be allocated first");
        if let Some(cs) = &mut self.cs {
            cs.alloc_public();
        }
        self.publics.push(v);
        Variable::Public(self.publics.len() - 1)
    }

    pub fn alloc_witness(&mut self, v: FieldElement) -> Variable {
        if let Some(cs) = &mut self.cs {
            cs.alloc_witness();
        }
        self.witnesses.push(v);
        Variable::Witness(self.witnesses.len() - 1)
    }

    pub fn enforce(&mut self, a: Lc, b: Lc, c: Lc) {
        if let Some(cs) = &mut self.cs {
            cs.enforce(a, b, c).expect("gadget referenced an unallocated variable");
        }
    }

    pub fn value(&self, v: Variable) -> FieldElement {
        match v {
            Variable::One => FieldElement::ONE,
            Variable::Public(i) => self.publics[i],
            Variable::Witness(j) => self.witnesses[j],
        }
    }

    pub fn eval(&self, lc: &Lc) -> FieldElement {
        lc.terms()
            .iter()
            .fold(FieldElement::ZERO, |acc, &(v, c)| acc + c * self.value(v))
    }

    fn eval_int(&self, lc: &Lc) -> BigInt {
        self.eval(lc).to_bigint_centered()
    }

    fn eval_nat(&self, lc: &Lc) -> BigUint {
        self.eval(lc).to_biguint()
    }

    fn fail(&self, e: GadgetError) -> Result<(), GadgetError> {
        if self.strict {
            Err(e)
        } else {
            Ok(())
        }
    }

    pub fn num_constraints(&self) -> usize {
        self.cs.as_ref().map_or(0, |cs| cs.num_constraints())
    }

    pub fn finish(self) -> (Option<ConstraintSystem>, Assignment) {
        (self.cs, Assignment::new(self.publics, self.witnesses))
    }

    /// `k` boolean bits recomposing to `x`: `k + 1` constraints.
    pub fn range_check(&mut self, x: &Lc, k: u32) -> Result<Vec<Variable>, GadgetError> {
        assert!(k <= 250, "range check wider than the field");
        let v = self.eval_nat(x);
        if v.bits() > k as u64 {
            self.fail(GadgetError::OutOfRange { bits: k })?;
        }
        let mut bits = Vec::with_capacity(k as usize);
        for i in 0..k {
            let b = if v.bit(i as u64) {
                FieldElement::ONE
            } else {
                FieldElement::ZERO
            };
            bits.push(self.alloc_witness(b));
        }
        if self.is_recording() {
            let mut sum = Lc::zero();
            let mut pow = FieldElement::ONE;
            for &b in &bits {
                self.enforce(b.into(), Lc::from(b) - Variable::One, Lc::zero());
                sum.push(b, pow);
                pow = pow + pow;
            }
            self.enforce(sum, Lc::one(), x.clone());
        }
        Ok(bits)
    }

    /// Checks `-2^(k-1) <= x < 2^(k-1)`; returns the bit that is 1 iff `x >= 0`.
    pub fn signed_range_check(&mut self, x: &Lc, k: u32) -> Result<Variable, GadgetError> {
        let shifted = x.clone() + Lc::constant(pow2(k - 1));
        let bits = self.range_check(&shifted, k)?;
        Ok(bits[k as usize - 1])
    }

    /// `max(0, x)` for a signed `k`-bit `x`.
    pub fn relu(&mut self, x: &Lc, k: u32) -> Result<Variable, GadgetError> {
        let nonneg = self.signed_range_check(x, k)?;
        let out = self.alloc_witness(self.value(nonneg) * self.eval(x));
        self.enforce(nonneg.into(), x.clone(), out.into());
        Ok(out)
    }

    /// `q = floor(a b / S)` with `a b = S q + rem`, `0 <= rem < S`, and `q`
    /// a signed `q_bits` value. Returns `(q, q >= 0)`.
    pub fn fp_mul(
        &mut self,
        a: &Lc,
        b: &Lc,
        cfg: FixedPointConfig,
        q_bits: u32,
        claim: Option<i64>,
    ) -> Result<(Variable, Variable), GadgetError> {
        let s = BigInt::from(cfg.scale());
        let prod = self.eval_int(a) * self.eval_int(b);
        let honest = Integer::div_floor(&prod, &s);
        let q = match claim {
            Some(c) if BigInt::from(c) != honest => {
                self.fail(GadgetError::Mismatch("fp_mul quotient"))?;
                BigInt::from(c)
            }
            _ => honest,
        };
        let rem = &prod - &q * &s;
        let qv = self.alloc_witness(FieldElement::from_bigint(&q));
        let rv = self.alloc_witness(FieldElement::from_bigint(&rem));
        let sf = FieldElement::from_i64(cfg.scale());
        self.enforce(a.clone(), b.clone(), Lc::term(qv, sf) + rv);
        self.range_check(&rv.into(), cfg.frac_bits())?;
        let nonneg = self.signed_range_check(&qv.into(), q_bits)?;
        Ok((qv, nonneg))
    }

    /// `q = floor(S num / den)` with `S num = q den + rem`, `0 <= rem < den`.
    /// `den` must fit in `den_bits` bits; `den = 0` is unsatisfiable.
    /// Returns `(q, q >= 0)`.
    pub fn fp_div(
        &mut self,
        num: &Lc,
        den: &Lc,
        cfg: FixedPointConfig,
        den_bits: u32,
        q_bits: u32,
        claim: Option<i64>,
    ) -> Result<(Variable, Variable), GadgetError> {
        let s = BigInt::from(cfg.scale());
        let scaled = self.eval_int(num) * &s;
        let d = self.eval_int(den);
        let honest = if d.is_positive() {
            Some(Integer::div_floor(&scaled, &d))
        } else {
            self.fail(GadgetError::DivisionByZero)?;
            None
        };
        let q = match (claim, honest) {
            (Some(c), Some(h)) if BigInt::from(c) != h => {
                self.fail(GadgetError::Mismatch("fp_div quotient"))?;
                BigInt::from(c)
            }
            (Some(c), None) => BigInt::from(c),
            (_, Some(h)) => h,
            (None, None) => BigInt::zero(),
        };
        let rem = &scaled - &q * &d;
        let qv = self.alloc_witness(FieldElement::from_bigint(&q));
        let rv = self.alloc_witness(FieldElement::from_bigint(&rem));
        let sf = FieldElement::from_i64(cfg.scale());
        self.enforce(qv.into(), den.clone(), num.clone().scale(sf) - rv);
        self.range_check(&rv.into(), den_bits)?;
        self.range_check(&(den.clone() - Variable::One - rv), den_bits)?;
        let nonneg = self.signed_range_check(&qv.into(), q_bits)?;
        Ok((qv, nonneg))
    }

    /// `sum u_j v_j`: one product constraint per entry plus one accumulation.
    pub fn dot(&mut self, u: &[Lc], v: &[Lc]) -> Result<Variable, GadgetError> {
        if u.len() != v.len() {
            return Err(GadgetError::LengthMismatch {
                expected: u.len(),
                got: v.len(),
            });
        }
        let mut sum = Lc::zero();
        let mut total = FieldElement::ZERO;
        for (a, b) in u.iter().zip(v) {
            let p = self.eval(a) * self.eval(b);
            total += p;
            let pv = self.alloc_witness(p);
            self.enforce(a.clone(), b.clone(), pv.into());
            sum.push(pv, FieldElement::ONE);
        }
        let out = self.alloc_witness(total);
        self.enforce(sum, Lc::one(), out.into());
        Ok(out)
    }

    pub fn norm_sq(&mut self, v: &[Lc]) -> Result<Variable, GadgetError> {
        self.dot(v, v)
    }

    /// `s = floor(sqrt(x))` for `0 <= x < 2^(2k)`, via `s^2 <= x < (s + 1)^2`.
    pub fn isqrt(&mut self, x: &Lc, k: u32) -> Result<Variable, GadgetError> {
        let xv = self.eval_nat(x);
        if xv.bits() > 2 * k as u64 {
            self.fail(GadgetError::OutOfRange { bits: 2 * k })?;
        }
        let mut root = xv.sqrt();
        if root.bits() > k as u64 {
            root = BigUint::zero();
        }
        let s = self.alloc_witness(FieldElement::from_biguint(&root));
        self.range_check(&s.into(), k)?;
        let t = self.alloc_witness(FieldElement::from_biguint(&(&root * &root)));
        self.enforce(s.into(), s.into(), t.into());
        // x - s^2 >= 0
        self.range_check(&(x.clone() - t), 2 * k + 1)?;
        // (s + 1)^2 - 1 - x = t + 2s - x >= 0
        let upper = Lc::from(t) + Lc::term(s, FieldElement::from_u64(2)) - x.clone();
        self.range_check(&upper, 2 * k + 1)?;
        Ok(s)
    }

    /// `a b mod n` for `a, b < n`, `n < 2^120`. When `out` is given, the
    /// remainder is that variable (e.g. a public ciphertext).
    pub fn modmul(
        &mut self,
        a: &Lc,
        b: &Lc,
        n: &BigUint,
        out: Option<Variable>,
    ) -> Result<Variable, GadgetError> {
        let nb = n.bits() as u32;
        if nb > MAX_MODMUL_BITS {
            return Err(GadgetError::ModulusTooLarge(nb));
        }
        let prod = self.eval_nat(a) * self.eval_nat(b);
        let (mut q, rem) = prod.div_rem(n);
        let rv = match out {
            Some(o) => {
                let claimed = self.value(o).to_biguint();
                if claimed != rem {
                    self.fail(GadgetError::Mismatch("modmul result"))?;
                } else {
                    q = (&prod - &claimed) / n;
                }
                o
            }
            None => self.alloc_witness(FieldElement::from_biguint(&rem)),
        };
        if q.bits() > nb as u64 {
            q = BigUint::zero();
        }
        let qv = self.alloc_witness(FieldElement::from_biguint(&q));
        let nf = FieldElement::from_biguint(n);
        self.enforce(a.clone(), b.clone(), Lc::term(qv, nf) + rv);
        self.range_check(&rv.into(), nb)?;
        let top = Lc::constant(FieldElement::from_biguint(&(n - 1u32)));
        self.range_check(&(top - rv), nb)?;
        self.range_check(&qv.into(), nb)?;
        Ok(rv)
    }

    /// Enforces `c = (1 + m n) r^n mod n^2` for `m < n`, with `r` proven to
    /// be a unit mod `n`. The caller guarantees `m < n` (signed encodings
    /// with headroom satisfy this by construction).
    pub fn paillier_enc(
        &mut self,
        m: &Lc,
        r: Variable,
        n: &BigUint,
        c: Variable,
    ) -> Result<(), GadgetError> {
        let nb = n.bits() as u32;
        if nb > MAX_CIRCUIT_MODULUS_BITS {
            return Err(GadgetError::ModulusTooLarge(nb));
        }
        let n_sq = n * n;
        let top = Lc::constant(FieldElement::from_biguint(&(n - 1u32)));
        let rl: Lc = r.into();
        self.range_check(&rl, nb)?;
        self.range_check(&(top.clone() - r), nb)?;
        // gcd(r, n) = 1: r r' = 1 mod n for a range-checked r'
        let rv = self.eval_nat(&rl);
        let inv = crate::paillier::mod_inverse(&rv, n).unwrap_or_default();
        let inv_v = self.alloc_witness(FieldElement::from_biguint(&inv));
        self.range_check(&(top - inv_v), nb)?;
        self.range_check(&inv_v.into(), nb)?;
        self.modmul(&rl, &inv_v.into(), n, Some(Variable::One))?;
        // r^n by square-and-multiply over the public bits of n
        let mut acc = rl.clone();
        for i in (0..n.bits() - 1).rev() {
            acc = self.modmul(&acc, &acc, &n_sq, None)?.into();
            if n.bit(i) {
                acc = self.modmul(&acc, &rl, &n_sq, None)?.into();
            }
        }
        let t1 = Lc::one() + m.clone().scale(FieldElement::from_biguint(n));
        self.modmul(&t1, &acc, &n_sq, Some(c))?;
        Ok(())
    }

    /// `floor(sum v / len)` as a fixed-point division by `encode(len)`.
    pub fn mean(
        &mut self,
        v: &[Lc],
        cfg: FixedPointConfig,
        q_bits: u32,
    ) -> Result<Variable, GadgetError> {
        let len = v.len() as i64;
        let sum = v.iter().cloned().fold(Lc::zero(), |a, b| a + b);
        let den = Lc::constant(FieldElement::from_i64(len * cfg.scale()));
        let den_bits = 64 - ((len * cfg.scale()) as u64).leading_zeros();
        Ok(self.fp_div(&sum, &den, cfg, den_bits, q_bits, None)?.0)
    }
}

fn pow2(k: u32) -> FieldElement {
    FieldElement::from_biguint(&(BigUint::one() << k))
}

/// Circuit stages; each stage includes the ones before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    TrustScore,
    WeightedVector,
    Encryption,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircuitSpec {
    pub len: usize,
    pub fixed: FixedPointConfig,
    /// Highest enabled stage.
    pub stage: Stage,
    /// Paillier modulus, required by the encryption stage.
    pub modulus: Option<BigUint>,
}

impl CircuitSpec {
    pub fn validate(&self) -> Result<(), GadgetError> {
        if self.len == 0 {
            return Err(GadgetError::InvalidSpec("vector length must be positive".into()));
        }
        self.fixed.validate_for_len(self.len)?;
        // P = |g*|^2 |g_i|^2 and its range checks must stay inside the field
        if 2 * self.nsq_bits() + 1 > 250 {
            return Err(GadgetError::InvalidSpec(format!(
                "word_bits {} too wide for length {}",
                self.fixed.word_bits(),
                self.len
            )));
        }
        if self.stage == Stage::Encryption {
            let n = self
                .modulus
                .as_ref()
                .ok_or_else(|| GadgetError::InvalidSpec("encryption stage needs a modulus".into()))?;
            let nb = n.bits() as u32;
            if nb > MAX_CIRCUIT_MODULUS_BITS || 2 * (2 * nb) + 2 >= 252 {
                return Err(GadgetError::ModulusTooLarge(nb));
            }
        }
        Ok(())
    }

    /// Bits of `|v|^2` for a `word_bits` vector of this length.
    pub fn nsq_bits(&self) -> u32 {
        2 * self.fixed.word_bits() - 2 + ceil_log2(self.len)
    }

    /// Signed width of `g* . g_i`.
    pub fn dot_bits(&self) -> u32 {
        self.nsq_bits() + 1
    }

    pub fn num_public(&self) -> usize {
        if self.stage == Stage::Encryption {
            2 * self.len + 1
        } else {
            self.len
        }
    }
}

/// Public inputs: the reference update and, with the encryption stage,
/// the submitted ciphertext residues.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FLTrustPublicInputs {
    pub g_star: Vec<i64>,
    pub c_h: Vec<BigUint>,
    pub c_ts: Option<BigUint>,
}

impl FLTrustPublicInputs {
    pub fn to_field(&self) -> Vec<FieldElement> {
        let mut out: Vec<FieldElement> =
            self.g_star.iter().map(|&g| FieldElement::from_i64(g)).collect();
        out.extend(self.c_h.iter().map(FieldElement::from_biguint));
        out.extend(self.c_ts.iter().map(FieldElement::from_biguint));
        out
    }

    fn zero(spec: &CircuitSpec) -> Self {
        let enc = spec.stage == Stage::Encryption;
        Self {
            g_star: vec![0; spec.len],
            c_h: if enc { vec![BigUint::zero(); spec.len] } else { vec![] },
            c_ts: enc.then(BigUint::zero),
        }
    }
}

/// Prover-side values. `ts`, `ts_norm` and `h` are the claimed outputs;
/// intermediate witnesses are derived by the gadgets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FLTrustWitness {
    pub g_i: Vec<i64>,
    pub ts: i64,
    pub ts_norm: i64,
    pub h: Vec<i64>,
    pub r_h: Vec<BigUint>,
    pub r_ts: BigUint,
}

impl FLTrustWitness {
    fn zero(spec: &CircuitSpec) -> Self {
        Self {
            g_i: vec![0; spec.len],
            ts: 0,
            ts_norm: 0,
            h: vec![0; spec.len],
            r_h: vec![BigUint::zero(); spec.len],
            r_ts: BigUint::zero(),
        }
    }
}

fn synthesize(
    b: &mut Builder,
    spec: &CircuitSpec,
    publics: &FLTrustPublicInputs,
    w: &FLTrustWitness,
) -> Result<(), GadgetError> {
    spec.validate()?;
    let len = spec.len;
    let enc = spec.stage == Stage::Encryption;
    let check_len = |got: usize| {
        if got == len {
            Ok(())
        } else {
            Err(GadgetError::LengthMismatch { expected: len, got })
        }
    };
    check_len(publics.g_star.len())?;
    check_len(w.g_i.len())?;
    if spec.stage >= Stage::WeightedVector {
        check_len(w.h.len())?;
    }
    if enc {
        check_len(publics.c_h.len())?;
        check_len(w.r_h.len())?;
        if publics.c_ts.is_none() {
            return Err(GadgetError::InvalidSpec("missing C(TS)".into()));
        }
    }
    let cfg = spec.fixed;
    let wbits = cfg.word_bits();

    let g_star: Vec<Lc> = publics
        .g_star
        .iter()
        .map(|&g| b.alloc_public(FieldElement::from_i64(g)).into())
        .collect();
    let (c_h, c_ts) = if enc {
        let c_h: Vec<Variable> = publics
            .c_h
            .iter()
            .map(|c| b.alloc_public(FieldElement::from_biguint(c)))
            .collect();
        let c_ts = b.alloc_public(FieldElement::from_biguint(publics.c_ts.as_ref().unwrap()));
        (c_h, Some(c_ts))
    } else {
        (vec![], None)
    };

    // stage 1: trust scores
    let g_i: Vec<Lc> = w
        .g_i
        .iter()
        .map(|&g| b.alloc_witness(FieldElement::from_i64(g)).into())
        .collect();
    for g in &g_i {
        b.signed_range_check(g, wbits)?;
    }
    let nsq_bits = spec.nsq_bits();
    let d = b.dot(&g_star, &g_i)?;
    let nsq_i = b.norm_sq(&g_i)?;
    let nsq_star = b.norm_sq(&g_star)?;
    let d_pos: Lc = b.relu(&d.into(), spec.dot_bits())?.into();
    let p = b.alloc_witness(b.value(nsq_star) * b.value(nsq_i));
    b.enforce(nsq_star.into(), nsq_i.into(), p.into());
    let root = b.isqrt(&p.into(), nsq_bits)?;
    let (ts, _) = b.fp_div(&d_pos, &root.into(), cfg, nsq_bits, wbits, Some(w.ts))?;
    let (ts_norm, _) = b.fp_div(&d_pos, &nsq_i.into(), cfg, nsq_bits, wbits, Some(w.ts_norm))?;
    if spec.stage == Stage::TrustScore {
        return Ok(());
    }

    // stage 2: H_i = ts_norm * g_i
    let mut h = Vec::with_capacity(len);
    for (g, &claim) in g_i.iter().zip(&w.h) {
        h.push(b.fp_mul(&ts_norm.into(), g, cfg, wbits, Some(claim))?);
    }
    if !enc {
        return Ok(());
    }

    // stage 3: ciphertexts of H_i (signed residues) and TS_i
    let n = spec.modulus.as_ref().unwrap();
    let nf = FieldElement::from_biguint(n);
    for ((&(hj, nonneg), r), &c) in h.iter().zip(&w.r_h).zip(&c_h) {
        // m = h + n (1 - nonneg): h for h >= 0, n + h otherwise
        let m = Lc::from(hj) + Lc::constant(nf) + Lc::term(nonneg, -nf);
        let rv = b.alloc_witness(FieldElement::from_biguint(r));
        b.paillier_enc(&m, rv, n, c)?;
    }
    let rv = b.alloc_witness(FieldElement::from_biguint(&w.r_ts));
    b.paillier_enc(&ts.into(), rv, n, c_ts.unwrap())?;
    Ok(())
}

/// Builds the full system and its assignment; errors if the inputs are not
/// honest.
pub fn build_fltrust_circuit(
    spec: &CircuitSpec,
    publics: &FLTrustPublicInputs,
    witness: &FLTrustWitness,
) -> Result<(ConstraintSystem, Assignment), GadgetError> {
    let mut b = Builder::recording(true);
    synthesize(&mut b, spec, publics, witness)?;
    let (cs, asg) = b.finish();
    Ok((cs.unwrap(), asg))
}

/// The circuit for `spec`, independent of any particular inputs.
pub fn circuit_shape(spec: &CircuitSpec) -> Result<ConstraintSystem, GadgetError> {
    let mut b = Builder::recording(false);
    synthesize(&mut b, spec, &FLTrustPublicInputs::zero(spec), &FLTrustWitness::zero(spec))?;
    Ok(b.finish().0.unwrap())
}

/// Assignment for [`circuit_shape`]. With `strict = false`, dishonest claims
/// yield an assignment that does not satisfy the circuit instead of an error.
pub fn fltrust_assignment(
    spec: &CircuitSpec,
    publics: &FLTrustPublicInputs,
    witness: &FLTrustWitness,
    strict: bool,
) -> Result<Assignment, GadgetError> {
    let mut b = Builder::witness_only(strict);
    synthesize(&mut b, spec, publics, witness)?;
    Ok(b.finish().1)
}

/// Centered integer value of a field element, if it fits in `i64`.
pub fn field_to_i64(v: FieldElement) -> Option<i64> {
    v.to_bigint_centered().to_i64()
}
