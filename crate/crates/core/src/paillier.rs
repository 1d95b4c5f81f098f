//! Paillier encryption with `g = n + 1`.
//!
//! With that generator `g^m mod n^2 = 1 + m·n`, so encryption is a single
//! exponentiation `r^n mod n^2`; the same closed form is what the encryption
//! gadget re-derives inside the circuit. Randomness `r` is always explicit so
//! a prover can keep it as part of its witness.

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::seeded_rng;

pub const MIN_MODULUS_BITS: u32 = 32;
pub const MAX_MODULUS_BITS: u32 = 3072;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaillierError {
    #[error("unsupported modulus size {0} bits (supported: {MIN_MODULUS_BITS}..={MAX_MODULUS_BITS})")]
    UnsupportedModulus(u32),
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("plaintext out of range [0, n)")]
    PlaintextRange,
    #[error("randomness must be in Z_n^*")]
    RandomnessRange,
    #[error("ciphertext does not belong to this key")]
    KeyMismatch,
    #[error("ciphertext residue out of range [0, n^2)")]
    CiphertextRange,
    #[error("signed value {0} exceeds the n/4 headroom")]
    Headroom(String),
    #[error("malformed encoding: {0}")]
    Malformed(String),
}

/// Short fingerprint of a public modulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub u64);

impl KeyId {
    fn of(n: &BigUint) -> Self {
        let d = Sha256::digest(n.to_bytes_be());
        KeyId(u64::from_be_bytes(d[..8].try_into().unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    g: BigUint,
    n_sq: BigUint,
    id: KeyId,
}

/// Decryption key. Holds `lambda = lcm(p-1, q-1)` and `mu = lambda^-1 mod n`.
#[derive(Clone, PartialEq, Eq)]
pub struct PaillierPrivateKey {
    lambda: BigUint,
    mu: BigUint,
    id: KeyId,
}

impl std::fmt::Debug for PaillierPrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PaillierPrivateKey")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PaillierCiphertext {
    value: BigUint,
    key_id: KeyId,
}

impl PaillierCiphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    /// Big-endian residue, left-padded to `width` bytes.
    pub fn to_bytes(&self, width: usize) -> Vec<u8> {
        let raw = self.value.to_bytes_be();
        debug_assert!(raw.len() <= width);
        let mut out = vec![0u8; width - raw.len()];
        out.extend_from_slice(&raw);
        out
    }
}

/// Generates a keypair whose modulus has exactly `modulus_bits` bits.
///
/// The seed keys a ChaCha20 stream, so the same seed always yields the same keys.
pub fn keygen(
    modulus_bits: u32,
    seed: &[u8],
) -> Result<(PaillierPublicKey, PaillierPrivateKey), PaillierError> {
    if !(MIN_MODULUS_BITS..=MAX_MODULUS_BITS).contains(&modulus_bits) {
        return Err(PaillierError::UnsupportedModulus(modulus_bits));
    }
    let mut rng = seeded_rng(seed);
    let p_bits = modulus_bits.div_ceil(2);
    let q_bits = modulus_bits / 2;
    loop {
        let p = random_prime(p_bits, &mut rng);
        let q = random_prime(q_bits, &mut rng);
        if p == q {
            continue;
        }
        let n = &p * &q;
        debug_assert_eq!(n.bits(), modulus_bits as u64);
        let phi = (&p - 1u32) * (&q - 1u32);
        if !n.gcd(&phi).is_one() {
            continue;
        }
        return from_primes(&p, &q);
    }
}

/// Builds a keypair from explicit primes `p != q`. Used for schoolbook
/// examples such as `p = 5, q = 7`.
pub fn from_primes(
    p: &BigUint,
    q: &BigUint,
) -> Result<(PaillierPublicKey, PaillierPrivateKey), PaillierError> {
    if p == q {
        return Err(PaillierError::InvalidKey("p and q must differ".into()));
    }
    let mut rng = seeded_rng(b"primality");
    if !is_probable_prime(p, 32, &mut rng) || !is_probable_prime(q, 32, &mut rng) {
        return Err(PaillierError::InvalidKey("p and q must be prime".into()));
    }
    let n = p * q;
    let lambda = (p - 1u32).lcm(&(q - 1u32));
    let mu = mod_inverse(&(&lambda % &n), &n)
        .ok_or_else(|| PaillierError::InvalidKey("gcd(lambda, n) != 1".into()))?;
    let pk = PaillierPublicKey::from_modulus(n)?;
    let sk = PaillierPrivateKey {
        lambda,
        mu,
        id: pk.id,
    };
    Ok((pk, sk))
}

impl PaillierPublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self, PaillierError> {
        if n.bits() < 6 || n.is_even() {
            return Err(PaillierError::InvalidKey("modulus must be odd".into()));
        }
        let id = KeyId::of(&n);
        Ok(Self {
            g: &n + 1u32,
            n_sq: &n * &n,
            n,
            id,
        })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_sq
    }

    pub fn id(&self) -> KeyId {
        self.id
    }

    pub fn modulus_bits(&self) -> u32 {
        self.n.bits() as u32
    }

    /// Wire width of one ciphertext: `2 * ceil(bits(n) / 8)`.
    pub fn ciphertext_width(&self) -> usize {
        ciphertext_width(self.modulus_bits())
    }

    /// `c = (1 + m·n) · r^n mod n^2`.
    pub fn encrypt(&self, m: &BigUint, r: &BigUint) -> Result<PaillierCiphertext, PaillierError> {
        if r.is_zero() || r >= &self.n || !r.gcd(&self.n).is_one() {
            return Err(PaillierError::RandomnessRange);
        }
        let rn = r.modpow(&self.n, &self.n_sq);
        self.encrypt_with_factor(m, &rn)
    }

    /// Encryption with a precomputed `r^n mod n^2` factor.
    pub fn encrypt_with_factor(
        &self,
        m: &BigUint,
        rn: &BigUint,
    ) -> Result<PaillierCiphertext, PaillierError> {
        if m >= &self.n {
            return Err(PaillierError::PlaintextRange);
        }
        let gm = (m * &self.n + 1u32) % &self.n_sq;
        Ok(PaillierCiphertext {
            value: (gm * rn) % &self.n_sq,
            key_id: self.id,
        })
    }

    /// Samples `r` uniformly from `Z_n^*`.
    pub fn sample_randomness<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// The trivial encryption of zero (`r = 1`), the identity for [`Self::add`].
    pub fn zero_ciphertext(&self) -> PaillierCiphertext {
        PaillierCiphertext {
            value: BigUint::one(),
            key_id: self.id,
        }
    }

    /// Homomorphic addition: `c1 · c2 mod n^2`.
    pub fn add(
        &self,
        c1: &PaillierCiphertext,
        c2: &PaillierCiphertext,
    ) -> Result<PaillierCiphertext, PaillierError> {
        if c1.key_id != self.id || c2.key_id != self.id {
            return Err(PaillierError::KeyMismatch);
        }
        Ok(PaillierCiphertext {
            value: (&c1.value * &c2.value) % &self.n_sq,
            key_id: self.id,
        })
    }

    pub fn sum<'a, I>(&self, cts: I) -> Result<PaillierCiphertext, PaillierError>
    where
        I: IntoIterator<Item = &'a PaillierCiphertext>,
    {
        cts.into_iter()
            .try_fold(self.zero_ciphertext(), |acc, c| self.add(&acc, c))
    }

    /// `v >= 0 -> v`, `v < 0 -> n + v`. Requires `|v| < n/4`.
    pub fn encode_signed(&self, v: &BigInt) -> Result<BigUint, PaillierError> {
        let quarter = BigInt::from_biguint(Sign::Plus, &self.n >> 2u32);
        if v.magnitude() >= quarter.magnitude() {
            return Err(PaillierError::Headroom(v.to_string()));
        }
        let n = BigInt::from_biguint(Sign::Plus, self.n.clone());
        Ok(v.mod_floor(&n).to_biguint().expect("non-negative"))
    }

    pub fn encode_i64(&self, v: i64) -> Result<BigUint, PaillierError> {
        self.encode_signed(&BigInt::from(v))
    }

    /// Inverse of [`Self::encode_signed`]: residues above `n/2` are negative.
    pub fn decode_signed(&self, m: &BigUint) -> BigInt {
        let m = BigInt::from_biguint(Sign::Plus, m % &self.n);
        if m.magnitude() > &(&self.n >> 1u32) {
            m - BigInt::from_biguint(Sign::Plus, self.n.clone())
        } else {
            m
        }
    }

    /// Rebuilds a ciphertext from its wire bytes.
    pub fn ciphertext_from_bytes(&self, bytes: &[u8]) -> Result<PaillierCiphertext, PaillierError> {
        if bytes.len() != self.ciphertext_width() {
            return Err(PaillierError::Malformed(format!(
                "ciphertext needs {} bytes, got {}",
                self.ciphertext_width(),
                bytes.len()
            )));
        }
        let value = BigUint::from_bytes_be(bytes);
        if value >= self.n_sq {
            return Err(PaillierError::CiphertextRange);
        }
        Ok(PaillierCiphertext {
            value,
            key_id: self.id,
        })
    }

    /// `u32` length ‖ big-endian `n`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_magnitude(&mut out, &self.n);
        out
    }

    /// Parses [`Self::to_bytes`]; returns the key and the bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), PaillierError> {
        let (n, used) = get_magnitude(bytes)?;
        Ok((Self::from_modulus(n)?, used))
    }
}

impl PaillierPrivateKey {
    pub fn id(&self) -> KeyId {
        self.id
    }

    /// `m = L(c^lambda mod n^2) · mu mod n` with `L(u) = (u - 1) / n`.
    pub fn decrypt(
        &self,
        c: &PaillierCiphertext,
        ek: &PaillierPublicKey,
    ) -> Result<BigUint, PaillierError> {
        if c.key_id != self.id || ek.id != self.id {
            return Err(PaillierError::KeyMismatch);
        }
        if c.value >= ek.n_sq {
            return Err(PaillierError::CiphertextRange);
        }
        let u = c.value.modpow(&self.lambda, &ek.n_sq);
        let l = (u - 1u32) / &ek.n;
        Ok((l * &self.mu) % &ek.n)
    }

    /// `u32` length ‖ `lambda`, then `u32` length ‖ `mu`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_magnitude(&mut out, &self.lambda);
        put_magnitude(&mut out, &self.mu);
        out
    }

    pub fn from_bytes(bytes: &[u8], ek: &PaillierPublicKey) -> Result<Self, PaillierError> {
        let (lambda, used) = get_magnitude(bytes)?;
        let (mu, used2) = get_magnitude(&bytes[used..])?;
        if used + used2 != bytes.len() {
            return Err(PaillierError::Malformed("trailing bytes".into()));
        }
        if !((&mu * &lambda) % &ek.n).is_one() {
            return Err(PaillierError::InvalidKey("mu * lambda != 1 mod n".into()));
        }
        Ok(Self {
            lambda,
            mu,
            id: ek.id,
        })
    }
}

pub fn ciphertext_width(modulus_bits: u32) -> usize {
    2 * (modulus_bits as usize).div_ceil(8)
}

/// Fixed-base table for fast `r^n` factors.
///
/// Picks `h` in `Z_n^*` once, stores powers of `h^n mod n^2`, and answers
/// each request with `(h^n)^a` for a fresh `exponent_bits`-bit `a`. The
/// result equals `r^n` for `r = h^a mod n`, so ciphertexts are ordinary
/// Paillier ciphertexts; randomness is drawn from the subgroup generated by
/// `h` instead of all of `Z_n^*`. Used only where `r` is not needed as a
/// circuit witness.
#[derive(Debug, Clone)]
pub struct FixedBaseNonces {
    window: u32,
    exponent_bits: u32,
    n_sq: BigUint,
    // table[i][j] = (h^n)^(j * 2^(window * i))
    table: Vec<Vec<BigUint>>,
}

impl FixedBaseNonces {
    pub const DEFAULT_EXPONENT_BITS: u32 = 384;
    const WINDOW: u32 = 6;

    pub fn new<R: RngCore + CryptoRng>(ek: &PaillierPublicKey, exponent_bits: u32, rng: &mut R) -> Self {
        let h = ek.sample_randomness(rng);
        let mut base = h.modpow(&ek.n, &ek.n_sq);
        let window = Self::WINDOW;
        let windows = exponent_bits.div_ceil(window);
        let mut table = Vec::with_capacity(windows as usize);
        for _ in 0..windows {
            let mut row = Vec::with_capacity(1 << window);
            row.push(BigUint::one());
            for j in 1..(1usize << window) {
                let next = (&row[j - 1] * &base) % &ek.n_sq;
                row.push(next);
            }
            base = (&row[(1 << window) - 1] * &base) % &ek.n_sq;
            table.push(row);
        }
        Self {
            window,
            exponent_bits,
            n_sq: ek.n_sq.clone(),
            table,
        }
    }

    pub fn sample<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        let a = rng.gen_biguint(self.exponent_bits as u64);
        let mask = (1u64 << self.window) - 1;
        let digits = a.to_u64_digits();
        let mut acc = BigUint::one();
        for (i, row) in self.table.iter().enumerate() {
            let bit = i as u64 * self.window as u64;
            let limb = (bit / 64) as usize;
            let off = bit % 64;
            let mut d = digits.get(limb).copied().unwrap_or(0) >> off;
            if off + self.window as u64 > 64 {
                d |= digits.get(limb + 1).copied().unwrap_or(0) << (64 - off);
            }
            let d = (d & mask) as usize;
            if d != 0 {
                acc = (acc * &row[d]) % &self.n_sq;
            }
        }
        acc
    }
}

fn put_magnitude(out: &mut Vec<u8>, v: &BigUint) {
    let bytes = v.to_bytes_be();
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
}

fn get_magnitude(bytes: &[u8]) -> Result<(BigUint, usize), PaillierError> {
    if bytes.len() < 4 {
        return Err(PaillierError::Malformed("truncated length prefix".into()));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = bytes
        .get(4..4 + len)
        .ok_or_else(|| PaillierError::Malformed("truncated magnitude".into()))?;
    Ok((BigUint::from_bytes_be(body), 4 + len))
}

pub(crate) fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    let a = BigInt::from_biguint(Sign::Plus, a.clone());
    let m_int = BigInt::from_biguint(Sign::Plus, m.clone());
    let e = a.extended_gcd(&m_int);
    if !e.gcd.is_one() {
        return None;
    }
    e.x.mod_floor(&m_int).to_biguint()
}

const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

/// Miller-Rabin with `rounds` random bases, after trial division.
pub fn is_probable_prime<R: RngCore>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    if n < &BigUint::from(2u32) {
        return false;
    }
    for &p in SMALL_PRIMES.iter() {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let two = BigUint::from(2u32);
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits and its top two bits set, so a
/// product of two such primes has exactly the summed bit length.
fn random_prime<R: RngCore>(bits: u32, rng: &mut R) -> BigUint {
    assert!(bits >= 4);
    loop {
        let mut c = rng.gen_biguint(bits as u64);
        c.set_bit(bits as u64 - 1, true);
        c.set_bit(bits as u64 - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, 24, rng) {
            return c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use proptest::prelude::*;

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    fn toy() -> (PaillierPublicKey, PaillierPrivateKey) {
        from_primes(&big(5), &big(7)).unwrap()
    }

    /// Schoolbook modular exponentiation used as an independent oracle.
    fn naive_modpow(base: u64, exp: u64, m: u64) -> u64 {
        let mut acc = 1u128;
        for _ in 0..exp {
            acc = acc * base as u128 % m as u128;
        }
        acc as u64
    }

    #[test]
    fn closed_form_generator_power() {
        // (1 + n)^m mod n^2 = 1 + m n, n = 35, m = 3
        assert_eq!(naive_modpow(36, 3, 1225), 106);
        assert_eq!(1 + 3 * 35, 106);
    }

    #[test]
    fn tiny_prime_round_trip() {
        let (pk, sk) = toy();
        let c = pk.encrypt(&big(3), &big(2)).unwrap();
        // oracle: g^m r^n mod n^2 with g = 36
        let expect = naive_modpow(36, 3, 1225) * naive_modpow(2, 35, 1225) % 1225;
        assert_eq!(c.value(), &big(expect));
        assert_eq!(sk.decrypt(&c, &pk).unwrap(), big(3));
    }

    #[test]
    fn encryption_of_zero_with_unit_randomness() {
        let (pk, sk) = toy();
        let c = pk.encrypt(&big(0), &big(1)).unwrap();
        assert_eq!(c.value(), &big(1));
        assert_eq!(c, pk.zero_ciphertext());
        assert_eq!(sk.decrypt(&c, &pk).unwrap(), big(0));
    }

    #[test]
    fn tiny_prime_addition() {
        let (pk, sk) = toy();
        let a = pk.encrypt(&big(2), &big(3)).unwrap();
        let b = pk.encrypt(&big(5), &big(4)).unwrap();
        assert_eq!(sk.decrypt(&pk.add(&a, &b).unwrap(), &pk).unwrap(), big(7));
        let z = pk.encrypt(&big(0), &big(1)).unwrap();
        assert_eq!(pk.add(&a, &z).unwrap(), a);
    }

    #[test]
    fn range_errors() {
        let (pk, _) = toy();
        assert_eq!(pk.encrypt(&big(35), &big(2)), Err(PaillierError::PlaintextRange));
        assert_eq!(pk.encrypt(&big(1), &big(0)), Err(PaillierError::RandomnessRange));
        assert_eq!(pk.encrypt(&big(1), &big(7)), Err(PaillierError::RandomnessRange));
        assert_eq!(pk.encrypt(&big(1), &big(35)), Err(PaillierError::RandomnessRange));
    }

    #[test]
    fn keygen_is_deterministic_and_sized() {
        let (a, sa) = keygen(128, b"seed A").unwrap();
        let (b, sb) = keygen(128, b"seed A").unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(a.modulus_bits(), 128);
        let (c, _) = keygen(128, b"seed C").unwrap();
        assert_ne!(a, c);
        for bits in [32, 33, 48, 61, 255] {
            assert_eq!(keygen(bits, b"s").unwrap().0.modulus_bits(), bits);
        }
        assert_eq!(keygen(7, b"x"), Err(PaillierError::UnsupportedModulus(7)));
        assert!(keygen(4096, b"x").is_err());
    }

    #[test]
    fn keygen_2048_bits() {
        let (pk, sk) = keygen(2048, b"seed B").unwrap();
        assert_eq!(pk.modulus_bits(), 2048);
        assert_eq!(pk.ciphertext_width(), 512);
        let mut rng = seeded_rng(b"r");
        let r = pk.sample_randomness(&mut rng);
        let m = pk.n() - 1u32;
        let c = pk.encrypt(&m, &r).unwrap();
        assert_eq!(sk.decrypt(&c, &pk).unwrap(), m);
    }

    #[test]
    fn random_round_trips_and_boundary() {
        let (pk, sk) = keygen(128, b"rt").unwrap();
        let mut rng = seeded_rng(b"rt-msgs");
        for _ in 0..100 {
            let m = rng.gen_biguint_below(pk.n());
            let r = pk.sample_randomness(&mut rng);
            assert_eq!(sk.decrypt(&pk.encrypt(&m, &r).unwrap(), &pk).unwrap(), m);
        }
        let top = pk.n() - 1u32;
        let r = pk.sample_randomness(&mut rng);
        assert_eq!(sk.decrypt(&pk.encrypt(&top, &r).unwrap(), &pk).unwrap(), top);
    }

    #[test]
    fn fold_of_eight() {
        let (pk, sk) = keygen(128, b"fold").unwrap();
        let mut rng = seeded_rng(b"fold-msgs");
        let ms: Vec<BigUint> = (0..8).map(|_| rng.gen_biguint(100)).collect();
        let cts: Vec<_> = ms
            .iter()
            .map(|m| pk.encrypt(m, &pk.sample_randomness(&mut rng)).unwrap())
            .collect();
        let sum = pk.sum(&cts).unwrap();
        let expect = ms.iter().fold(BigUint::zero(), |a, m| a + m) % pk.n();
        assert_eq!(sk.decrypt(&sum, &pk).unwrap(), expect);
    }

    #[test]
    fn key_mismatch() {
        let (pk1, sk1) = keygen(64, b"k1").unwrap();
        let (pk2, _) = keygen(64, b"k2").unwrap();
        let c2 = pk2.encrypt(&big(1), &big(1)).unwrap();
        let c1 = pk1.encrypt(&big(1), &big(1)).unwrap();
        assert_eq!(pk1.add(&c1, &c2), Err(PaillierError::KeyMismatch));
        assert_eq!(sk1.decrypt(&c2, &pk2), Err(PaillierError::KeyMismatch));
    }

    #[test]
    fn signed_encoding() {
        let (pk, sk) = keygen(64, b"signed").unwrap();
        assert_eq!(pk.encode_i64(-1).unwrap(), pk.n() - 1u32);
        assert_eq!(pk.decode_signed(&(pk.n() - 1u32)), BigInt::from(-1));
        let mut rng = seeded_rng(b"signed-r");
        let a = pk.encrypt(&pk.encode_i64(5).unwrap(), &pk.sample_randomness(&mut rng)).unwrap();
        let b = pk.encrypt(&pk.encode_i64(-3).unwrap(), &pk.sample_randomness(&mut rng)).unwrap();
        let s = sk.decrypt(&pk.add(&a, &b).unwrap(), &pk).unwrap();
        assert_eq!(pk.decode_signed(&s), BigInt::from(2));
        let quarter = BigInt::from_biguint(Sign::Plus, pk.n() >> 2u32);
        assert!(matches!(pk.encode_signed(&quarter), Err(PaillierError::Headroom(_))));
        assert!(matches!(pk.encode_signed(&-quarter), Err(PaillierError::Headroom(_))));
    }

    #[test]
    fn key_serialization() {
        let (pk, sk) = keygen(96, b"ser").unwrap();
        let bytes = pk.to_bytes();
        let (back, used) = PaillierPublicKey::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, pk);
        assert_eq!(PaillierPrivateKey::from_bytes(&sk.to_bytes(), &pk).unwrap(), sk);
        assert!(PaillierPublicKey::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn fixed_base_nonces_give_valid_ciphertexts() {
        let (pk, sk) = keygen(256, b"fb").unwrap();
        let mut rng = seeded_rng(b"fb-r");
        let table = FixedBaseNonces::new(&pk, 128, &mut rng);
        for v in [0i64, 17, -42] {
            let rn = table.sample(&mut rng);
            let c = pk.encrypt_with_factor(&pk.encode_i64(v).unwrap(), &rn).unwrap();
            assert_eq!(pk.decode_signed(&sk.decrypt(&c, &pk).unwrap()), BigInt::from(v));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn encrypt_is_pure_and_serializes_exactly(m in any::<u64>(), r in 1u64..u64::MAX) {
            let (pk, _) = keygen(128, b"pure").unwrap();
            let r = BigUint::from(r);
            prop_assume!(r.gcd(pk.n()).is_one());
            let m = BigUint::from(m) % pk.n();
            let a = pk.encrypt(&m, &r).unwrap();
            let b = pk.encrypt(&m, &r).unwrap();
            prop_assert_eq!(&a, &b);
            let bytes = a.to_bytes(pk.ciphertext_width());
            prop_assert_eq!(bytes.len(), 32);
            prop_assert_eq!(pk.ciphertext_from_bytes(&bytes).unwrap(), a);
        }

        #[test]
        fn signed_round_trip(v in -(1i64 << 60)..(1i64 << 60)) {
            let (pk, _) = keygen(128, b"signed-rt").unwrap();
            prop_assert_eq!(pk.decode_signed(&pk.encode_i64(v).unwrap()), BigInt::from(v));
        }
    }
}
