//! Rank-1 constraint systems over the BLS12-381 scalar field.
//!
//! A constraint is `(A·X) * (B·X) = (C·X)` where `X = [1, publics.., witnesses..]`.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::OnceLock;

use bls12_381::Scalar;
use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum R1csError {
    #[error("inverse of zero")]
    InverseOfZero,
    #[error("constraint references unallocated variable {0:?}")]
    UnknownVariable(Variable),
    #[error("assignment has {got} values, circuit needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("assignment must start with the constant 1")]
    MissingOne,
}

const MODULUS_DEC: &str =
    "52435875175126190479447740508185965837690552500527637822603658699938581184513";

/// Field order `r`.
pub fn modulus() -> &'static BigUint {
    static R: OnceLock<BigUint> = OnceLock::new();
    R.get_or_init(|| MODULUS_DEC.parse().unwrap())
}

#[derive(Clone, Copy, Default)]
pub struct FieldElement(Scalar);

impl FieldElement {
    pub const ZERO: Self = Self(Scalar::zero());
    pub const ONE: Self = Self(Scalar::one());

    pub fn from_u64(v: u64) -> Self {
        Self(Scalar::from(v))
    }

    /// Negative values map to `r + v`.
    pub fn from_i64(v: i64) -> Self {
        Self::from_i128(v as i128)
    }

    pub fn from_i128(v: i128) -> Self {
        let m = v.unsigned_abs();
        let s = Scalar::from_raw([m as u64, (m >> 64) as u64, 0, 0]);
        if v < 0 {
            Self(-s)
        } else {
            Self(s)
        }
    }

    pub fn from_biguint(v: &BigUint) -> Self {
        let reduced = v % modulus();
        let mut le = reduced.to_bytes_le();
        le.resize(32, 0);
        Self(Scalar::from_bytes(&le.try_into().unwrap()).unwrap())
    }

    pub fn from_bigint(v: &BigInt) -> Self {
        let r = BigInt::from_biguint(Sign::Plus, modulus().clone());
        Self::from_biguint(&v.mod_floor(&r).to_biguint().unwrap())
    }

    pub fn to_biguint(&self) -> BigUint {
        BigUint::from_bytes_le(&self.0.to_bytes())
    }

    /// Representative in `(-r/2, r/2]`.
    pub fn to_bigint_centered(&self) -> BigInt {
        let v = self.to_biguint();
        let r = modulus();
        if v > (r >> 1u32) {
            BigInt::from_biguint(Sign::Plus, v) - BigInt::from_biguint(Sign::Plus, r.clone())
        } else {
            BigInt::from_biguint(Sign::Plus, v)
        }
    }

    /// Small signed value, if the centered representative fits in `i128`.
    pub fn to_i128(&self) -> Option<i128> {
        i128::try_from(self.to_bigint_centered()).ok()
    }

    pub fn is_zero(&self) -> bool {
        self.0 == Scalar::zero()
    }

    pub fn inverse(&self) -> Result<Self, R1csError> {
        Option::<Scalar>::from(self.0.invert())
            .map(Self)
            .ok_or(R1csError::InverseOfZero)
    }

    pub fn square(&self) -> Self {
        Self(self.0.square())
    }

    pub fn to_bytes_be(&self) -> [u8; 32] {
        let mut b = self.0.to_bytes();
        b.reverse();
        b
    }

    /// Canonical big-endian encoding only (value < r).
    pub fn from_bytes_be(bytes: &[u8; 32]) -> Option<Self> {
        let mut le = *bytes;
        le.reverse();
        Option::from(Scalar::from_bytes(&le)).map(Self)
    }
}

impl PartialEq for FieldElement {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl Eq for FieldElement {}

impl std::hash::Hash for FieldElement {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bytes().hash(state)
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fe({})", self.to_bigint_centered())
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_biguint())
    }
}

impl From<u64> for FieldElement {
    fn from(v: u64) -> Self {
        Self::from_u64(v)
    }
}

impl From<i64> for FieldElement {
    fn from(v: i64) -> Self {
        Self::from_i64(v)
    }
}

impl Add for FieldElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl Sub for FieldElement {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self(self.0 - rhs.0)
    }
}

impl Mul for FieldElement {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

impl Neg for FieldElement {
    type Output = Self;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

impl AddAssign for FieldElement {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl SubAssign for FieldElement {
    fn sub_assign(&mut self, rhs: Self) {
        self.0 -= rhs.0;
    }
}

/// A variable of the system. `One` is the constant at index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    One,
    Public(usize),
    Witness(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinearCombination {
    terms: Vec<(Variable, FieldElement)>,
}

impl LinearCombination {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: FieldElement) -> Self {
        Self::term(Variable::One, c)
    }

    pub fn one() -> Self {
        Self::constant(FieldElement::ONE)
    }

    pub fn term(v: Variable, c: FieldElement) -> Self {
        Self { terms: vec![(v, c)] }
    }

    pub fn terms(&self) -> &[(Variable, FieldElement)] {
        &self.terms
    }

    pub fn push(&mut self, v: Variable, c: FieldElement) {
        self.terms.push((v, c));
    }

    pub fn with(mut self, v: Variable, c: FieldElement) -> Self {
        self.push(v, c);
        self
    }

    pub fn scale(mut self, k: FieldElement) -> Self {
        for t in &mut self.terms {
            t.1 = t.1 * k;
        }
        self
    }

    /// Merges duplicate variables, drops zero coefficients, sorts by variable.
    pub fn normalize(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(Variable, FieldElement)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| !t.1.is_zero());
        self.terms = out;
    }

    /// Evaluates against an assignment.
    pub fn evaluate(&self, asg: &Assignment) -> FieldElement {
        self.terms.iter().fold(FieldElement::ZERO, |acc, &(v, c)| {
            acc + c * asg.value(v)
        })
    }
}

impl From<Variable> for LinearCombination {
    fn from(v: Variable) -> Self {
        Self::term(v, FieldElement::ONE)
    }
}

impl Add for LinearCombination {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for LinearCombination {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.terms.extend(rhs.terms.into_iter().map(|(v, c)| (v, -c)));
        self
    }
}

impl Add<Variable> for LinearCombination {
    type Output = Self;
    fn add(self, rhs: Variable) -> Self {
        self.with(rhs, FieldElement::ONE)
    }
}

impl Sub<Variable> for LinearCombination {
    type Output = Self;
    fn sub(self, rhs: Variable) -> Self {
        self.with(rhs, -FieldElement::ONE)
    }
}

impl Mul<FieldElement> for LinearCombination {
    type Output = Self;
    fn mul(self, rhs: FieldElement) -> Self {
        self.scale(rhs)
    }
}

/// Result of a satisfaction check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Satisfaction {
    Satisfied,
    Unsatisfied { constraint: usize },
}

impl Satisfaction {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Satisfaction::Satisfied)
    }

    pub fn first_failure(&self) -> Option<usize> {
        match self {
            Satisfaction::Satisfied => None,
            Satisfaction::Unsatisfied { constraint } => Some(*constraint),
        }
    }
}

const WITNESS_TAG: u32 = 1 << 31;

/// Constraints are stored as a flat term pool with interned coefficients;
/// typical gadgets reuse a handful of constants (1, -1, powers of two).
#[derive(Default)]
pub struct ConstraintSystem {
    num_public: usize,
    num_witness: usize,
    // (encoded variable, coefficient id)
    terms: Vec<(u32, u32)>,
    // 3 * num_constraints + 1 offsets into `terms`
    bounds: Vec<u32>,
    coeffs: Vec<FieldElement>,
    coeff_ids: HashMap<FieldElement, u32>,
    digest: OnceLock<[u8; 32]>,
}

impl fmt::Debug for ConstraintSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSystem")
            .field("num_public", &self.num_public)
            .field("num_witness", &self.num_witness)
            .field("num_constraints", &self.num_constraints())
            .finish()
    }
}

impl Clone for ConstraintSystem {
    fn clone(&self) -> Self {
        Self {
            num_public: self.num_public,
            num_witness: self.num_witness,
            terms: self.terms.clone(),
            bounds: self.bounds.clone(),
            coeffs: self.coeffs.clone(),
            coeff_ids: self.coeff_ids.clone(),
            digest: self.digest.clone(),
        }
    }
}

impl ConstraintSystem {
    pub fn new() -> Self {
        Self {
            bounds: vec![0],
            ..Default::default()
        }
    }

    pub fn num_public(&self) -> usize {
        self.num_public
    }

    pub fn num_witness(&self) -> usize {
        self.num_witness
    }

    pub fn num_constraints(&self) -> usize {
        self.bounds.len().saturating_sub(1) / 3
    }

    /// Number of entries in a full assignment.
    pub fn num_variables(&self) -> usize {
        1 + self.num_public + self.num_witness
    }

    pub fn alloc_public(&mut self) -> Variable {
        self.digest = OnceLock::new();
        self.num_public += 1;
        Variable::Public(self.num_public - 1)
    }

    pub fn alloc_witness(&mut self) -> Variable {
        self.digest = OnceLock::new();
        self.num_witness += 1;
        Variable::Witness(self.num_witness - 1)
    }

    /// Position of `v` in `[one, publics.., witnesses..]`.
    pub fn index_of(&self, v: Variable) -> usize {
        match v {
            Variable::One => 0,
            Variable::Public(i) => 1 + i,
            Variable::Witness(j) => 1 + self.num_public + j,
        }
    }

    fn check(&self, v: Variable) -> Result<u32, R1csError> {
        match v {
            Variable::One => Ok(0),
            Variable::Public(i) if i < self.num_public => Ok(1 + i as u32),
            Variable::Witness(j) if j < self.num_witness => Ok(WITNESS_TAG | j as u32),
            _ => Err(R1csError::UnknownVariable(v)),
        }
    }

    fn intern(&mut self, c: FieldElement) -> u32 {
        if let Some(&id) = self.coeff_ids.get(&c) {
            return id;
        }
        let id = self.coeffs.len() as u32;
        self.coeffs.push(c);
        self.coeff_ids.insert(c, id);
        id
    }

    /// Appends `a * b = c`.
    pub fn enforce(
        &mut self,
        a: LinearCombination,
        b: LinearCombination,
        c: LinearCombination,
    ) -> Result<(), R1csError> {
        let mut lcs = [a, b, c];
        for lc in &mut lcs {
            lc.normalize();
            for &(v, _) in lc.terms() {
                self.check(v)?;
            }
        }
        self.digest = OnceLock::new();
        for lc in &lcs {
            for &(v, c) in lc.terms() {
                let var = self.check(v)?;
                let id = self.intern(c);
                self.terms.push((var, id));
            }
            self.bounds.push(self.terms.len() as u32);
        }
        Ok(())
    }

    fn decode_var(&self, var: u32) -> Variable {
        if var & WITNESS_TAG != 0 {
            Variable::Witness((var & !WITNESS_TAG) as usize)
        } else if var == 0 {
            Variable::One
        } else {
            Variable::Public(var as usize - 1)
        }
    }

    /// The `i`-th constraint as `(a, b, c)`.
    pub fn constraint(&self, i: usize) -> (LinearCombination, LinearCombination, LinearCombination) {
        let lc = |k: usize| {
            let (s, e) = (self.bounds[k] as usize, self.bounds[k + 1] as usize);
            LinearCombination {
                terms: self.terms[s..e]
                    .iter()
                    .map(|&(v, c)| (self.decode_var(v), self.coeffs[c as usize]))
                    .collect(),
            }
        };
        (lc(3 * i), lc(3 * i + 1), lc(3 * i + 2))
    }

    /// Checks every constraint, reporting the first failing index.
    pub fn is_satisfied(&self, asg: &Assignment) -> Result<Satisfaction, R1csError> {
        let expected = self.num_variables();
        if asg.values.len() != expected || asg.num_public != self.num_public {
            return Err(R1csError::LengthMismatch {
                expected,
                got: asg.values.len(),
            });
        }
        if asg.values[0] != FieldElement::ONE {
            return Err(R1csError::MissingOne);
        }
        let witness_base = 1 + self.num_public;
        let values = &asg.values;
        let eval = |k: usize| {
            let (s, e) = (self.bounds[k] as usize, self.bounds[k + 1] as usize);
            let mut acc = FieldElement::ZERO;
            for &(v, c) in &self.terms[s..e] {
                let idx = if v & WITNESS_TAG != 0 {
                    witness_base + (v & !WITNESS_TAG) as usize
                } else {
                    v as usize
                };
                let coeff = self.coeffs[c as usize];
                acc += if coeff == FieldElement::ONE {
                    values[idx]
                } else {
                    coeff * values[idx]
                };
            }
            acc
        };
        for i in 0..self.num_constraints() {
            let a = eval(3 * i);
            let b = eval(3 * i + 1);
            let c = eval(3 * i + 2);
            if a * b != c {
                return Ok(Satisfaction::Unsatisfied { constraint: i });
            }
        }
        Ok(Satisfaction::Satisfied)
    }

    /// SHA-256 over the canonical serialization: counts, then each
    /// constraint's `a`, `b`, `c` as (term count, (index, coefficient BE)*).
    pub fn digest(&self) -> [u8; 32] {
        *self.digest.get_or_init(|| {
            let mut h = Sha256::new();
            h.update((self.num_public as u64).to_be_bytes());
            h.update((self.num_witness as u64).to_be_bytes());
            h.update((self.num_constraints() as u64).to_be_bytes());
            let coeff_bytes: Vec<[u8; 32]> = self.coeffs.iter().map(|c| c.to_bytes_be()).collect();
            let witness_base = 1 + self.num_public as u64;
            for w in self.bounds.windows(2) {
                let (s, e) = (w[0] as usize, w[1] as usize);
                h.update(((e - s) as u32).to_be_bytes());
                for &(v, c) in &self.terms[s..e] {
                    let idx = if v & WITNESS_TAG != 0 {
                        witness_base + (v & !WITNESS_TAG) as u64
                    } else {
                        v as u64
                    };
                    h.update(idx.to_be_bytes());
                    h.update(coeff_bytes[c as usize]);
                }
            }
            h.finalize().into()
        })
    }
}

/// Dense values `[1, publics.., witnesses..]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    values: Vec<FieldElement>,
    num_public: usize,
}

impl Assignment {
    pub fn new(publics: Vec<FieldElement>, witnesses: Vec<FieldElement>) -> Self {
        let num_public = publics.len();
        let mut values = Vec::with_capacity(1 + publics.len() + witnesses.len());
        values.push(FieldElement::ONE);
        values.extend(publics);
        values.extend(witnesses);
        Self { values, num_public }
    }

    pub fn values(&self) -> &[FieldElement] {
        &self.values
    }

    pub fn num_public(&self) -> usize {
        self.num_public
    }

    pub fn publics(&self) -> &[FieldElement] {
        &self.values[1..1 + self.num_public]
    }

    pub fn witnesses(&self) -> &[FieldElement] {
        &self.values[1 + self.num_public..]
    }

    pub fn witnesses_mut(&mut self) -> &mut [FieldElement] {
        &mut self.values[1 + self.num_public..]
    }

    pub fn publics_mut(&mut self) -> &mut [FieldElement] {
        &mut self.values[1..1 + self.num_public]
    }

    pub fn value(&self, v: Variable) -> FieldElement {
        match v {
            Variable::One => self.values[0],
            Variable::Public(i) => self.values[1 + i],
            Variable::Witness(j) => self.values[1 + self.num_public + j],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn fe(v: i64) -> FieldElement {
        FieldElement::from_i64(v)
    }

    #[test]
    fn modulus_matches_backend() {
        let r = modulus();
        assert_eq!(FieldElement::from_biguint(r), FieldElement::ZERO);
        let r_minus_1 = FieldElement::from_biguint(&(r - 1u32));
        assert_eq!(r_minus_1 + FieldElement::ONE, FieldElement::ZERO);
        assert_eq!(fe(-1), r_minus_1);
        assert_eq!(fe(-1).to_biguint(), r - 1u32);
        assert_eq!(fe(-7).to_bigint_centered(), BigInt::from(-7));
    }

    #[test]
    fn inverse() {
        let mut rng = crate::rng::seeded_rng(b"inv");
        for _ in 0..50 {
            let x = FieldElement::from_u64(rng.gen_range(1..u64::MAX));
            assert_eq!(x * x.inverse().unwrap(), FieldElement::ONE);
        }
        assert_eq!(FieldElement::ZERO.inverse(), Err(R1csError::InverseOfZero));
    }

    #[test]
    fn bytes_round_trip() {
        let x = fe(-12345);
        assert_eq!(FieldElement::from_bytes_be(&x.to_bytes_be()), Some(x));
        assert_eq!(FieldElement::ONE.to_bytes_be()[31], 1);
        assert_eq!(FieldElement::from_bytes_be(&[0xff; 32]), None);
        let big = BigInt::from(-1) << 200;
        assert_eq!(FieldElement::from_bigint(&big).to_bigint_centered(), big);
        assert_eq!(FieldElement::from_i128(-(1i128 << 100)).to_i128(), Some(-(1i128 << 100)));
    }

    #[test]
    fn allocation() {
        let mut cs = ConstraintSystem::new();
        let p = cs.alloc_public();
        assert_eq!(p, Variable::Public(0));
        assert_eq!(cs.index_of(p), 1);
        let w1 = cs.alloc_witness();
        let w2 = cs.alloc_witness();
        assert_ne!(w1, w2);
        assert_eq!((cs.num_public(), cs.num_witness()), (1, 2));
        assert_eq!(cs.index_of(w2), 3);
    }

    fn product_system() -> (ConstraintSystem, [Variable; 3]) {
        let mut cs = ConstraintSystem::new();
        let x = cs.alloc_witness();
        let y = cs.alloc_witness();
        let z = cs.alloc_witness();
        cs.enforce(x.into(), y.into(), z.into()).unwrap();
        (cs, [x, y, z])
    }

    #[test]
    fn enforce_product() {
        let (cs, _) = product_system();
        let ok = Assignment::new(vec![], vec![fe(3), fe(4), fe(12)]);
        assert_eq!(cs.is_satisfied(&ok).unwrap(), Satisfaction::Satisfied);
        let bad = Assignment::new(vec![], vec![fe(3), fe(4), fe(13)]);
        assert_eq!(
            cs.is_satisfied(&bad).unwrap(),
            Satisfaction::Unsatisfied { constraint: 0 }
        );
        assert!(matches!(
            cs.is_satisfied(&Assignment::new(vec![], vec![fe(1)])),
            Err(R1csError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn linear_constraint_via_one() {
        let mut cs = ConstraintSystem::new();
        let x = cs.alloc_public();
        let y = cs.alloc_witness();
        let z = cs.alloc_witness();
        cs.enforce(LinearCombination::from(x) + y, LinearCombination::one(), z.into())
            .unwrap();
        assert!(cs
            .is_satisfied(&Assignment::new(vec![fe(2)], vec![fe(5), fe(7)]))
            .unwrap()
            .is_satisfied());
        assert!(!cs
            .is_satisfied(&Assignment::new(vec![fe(2)], vec![fe(5), fe(8)]))
            .unwrap()
            .is_satisfied());
    }

    #[test]
    fn unknown_variable() {
        let mut cs = ConstraintSystem::new();
        let err = cs
            .enforce(Variable::Witness(0).into(), LinearCombination::one(), LinearCombination::zero())
            .unwrap_err();
        assert_eq!(err, R1csError::UnknownVariable(Variable::Witness(0)));
        assert_eq!(cs.num_constraints(), 0);
    }

    #[test]
    fn empty_system_is_satisfied() {
        let cs = ConstraintSystem::new();
        assert!(cs.is_satisfied(&Assignment::new(vec![], vec![])).unwrap().is_satisfied());
    }

    #[test]
    fn many_random_products() {
        let mut rng = crate::rng::seeded_rng(b"products");
        let mut cs = ConstraintSystem::new();
        let mut w = Vec::new();
        for _ in 0..1000 {
            let (a, b) = (rng.gen::<u64>(), rng.gen::<u64>());
            let va = cs.alloc_witness();
            let vb = cs.alloc_witness();
            let vc = cs.alloc_witness();
            cs.enforce(va.into(), vb.into(), vc.into()).unwrap();
            w.extend([FieldElement::from_u64(a), FieldElement::from_u64(b)]);
            w.push(FieldElement::from_biguint(&(BigUint::from(a) * b)));
        }
        let mut asg = Assignment::new(vec![], w);
        assert!(cs.is_satisfied(&asg).unwrap().is_satisfied());
        asg.witnesses_mut()[3 * 417 + 2] += FieldElement::ONE;
        assert_eq!(cs.is_satisfied(&asg).unwrap().first_failure(), Some(417));
    }

    #[test]
    fn normalization_merges_and_drops() {
        let x = Variable::Witness(0);
        let mut lc = LinearCombination::from(x) + x - Variable::One + Variable::One;
        lc.normalize();
        assert_eq!(lc.terms(), &[(x, fe(2))]);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let (a, _) = product_system();
        let (b, _) = product_system();
        assert_eq!(a.digest(), b.digest());
        let (mut c, [x, _, _]) = product_system();
        c.enforce(x.into(), x.into(), x.into()).unwrap();
        assert_ne!(a.digest(), c.digest());
        let (mut d, [x, y, z]) = product_system();
        d.enforce(x.into(), y.into(), LinearCombination::from(z) * fe(2)).unwrap();
        assert_ne!(c.digest(), d.digest());
    }

    proptest! {
        #[test]
        fn evaluation_is_linear(
            coeffs in proptest::collection::vec(any::<i64>(), 4),
            u in proptest::collection::vec(any::<i64>(), 4),
            v in proptest::collection::vec(any::<i64>(), 4),
        ) {
            let mut lc = LinearCombination::zero();
            for (j, c) in coeffs.iter().enumerate() {
                lc.push(Variable::Witness(j), fe(*c));
            }
            let au = Assignment::new(vec![], u.iter().map(|&x| fe(x)).collect());
            let av = Assignment::new(vec![], v.iter().map(|&x| fe(x)).collect());
            let sum = Assignment::new(vec![], u.iter().zip(&v).map(|(&a, &b)| fe(a) + fe(b)).collect());
            prop_assert_eq!(lc.evaluate(&sum), lc.evaluate(&au) + lc.evaluate(&av));
        }

        #[test]
        fn signed_conversion_round_trip(v in any::<i128>()) {
            prop_assert_eq!(FieldElement::from_i128(v).to_i128(), Some(v));
        }
    }
}
