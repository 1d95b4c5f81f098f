//! Setup / prove / verify over R1CS circuits.
//!
//! The transparent backend's proof is the witness segment of the assignment;
//! verification rebuilds the assignment from the public inputs and checks
//! every constraint. It gives integrity, not zero knowledge: the verifier
//! sees the witness. The succinct backend tag is reserved but not built.

use thiserror::Error;

use crate::r1cs::{Assignment, ConstraintSystem, FieldElement, R1csError, Satisfaction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("backend {0} is not supported")]
    BackendUnsupported(u8),
    #[error("circuit digest does not match the key")]
    DigestMismatch,
    #[error("witness does not satisfy constraint {0}")]
    Unsatisfied(usize),
    #[error("malformed proof: {0}")]
    Malformed(String),
    #[error(transparent)]
    R1cs(#[from] R1csError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Transparent,
    Succinct,
}

impl Backend {
    pub fn tag(self) -> u8 {
        match self {
            Backend::Transparent => 0,
            Backend::Succinct => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, ProofError> {
        match tag {
            0 => Ok(Backend::Transparent),
            1 => Ok(Backend::Succinct),
            t => Err(ProofError::BackendUnsupported(t)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Transparent => "transparent",
            Backend::Succinct => "succinct",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = ProofError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transparent" => Ok(Backend::Transparent),
            "succinct" => Ok(Backend::Succinct),
            _ => Err(ProofError::BackendUnsupported(u8::MAX)),
        }
    }
}

/// Key material bound to one circuit. Empty `material` for the transparent backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Key {
    digest: [u8; 32],
    backend: Backend,
    material: Vec<u8>,
}

pub type ProvingKey = Key;
pub type VerifyingKey = Key;

impl Key {
    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// `tag ‖ digest ‖ u32 length ‖ material`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(37 + self.material.len());
        out.push(self.backend.tag());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&(self.material.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.material);
        out
    }

    /// Parses [`Self::to_bytes`], returning the key and bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), ProofError> {
        if bytes.len() < 37 {
            return Err(ProofError::Malformed("truncated key".into()));
        }
        let backend = Backend::from_tag(bytes[0])?;
        let digest: [u8; 32] = bytes[1..33].try_into().unwrap();
        let len = u32::from_be_bytes(bytes[33..37].try_into().unwrap()) as usize;
        let material = bytes
            .get(37..37 + len)
            .ok_or_else(|| ProofError::Malformed("truncated key material".into()))?
            .to_vec();
        Ok((
            Self {
                digest,
                backend,
                material,
            },
            37 + len,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proof {
    backend: Backend,
    payload: Vec<FieldElement>,
}

impl Proof {
    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn payload(&self) -> &[FieldElement] {
        &self.payload
    }

    /// Builds a proof object from arbitrary payload values (used to model forgeries).
    pub fn from_parts(backend: Backend, payload: Vec<FieldElement>) -> Self {
        Self { backend, payload }
    }

    pub fn encoded_len(&self) -> usize {
        5 + 32 * self.payload.len()
    }

    /// `tag ‖ u32 payload byte length ‖ 32-byte big-endian elements`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.backend.tag());
        out.extend_from_slice(&((32 * self.payload.len()) as u32).to_be_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_bytes_be());
        }
        out
    }

    /// Parses [`Self::to_bytes`], returning the proof and bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), ProofError> {
        if bytes.len() < 5 {
            return Err(ProofError::Malformed("truncated header".into()));
        }
        let backend = Backend::from_tag(bytes[0])?;
        let len = u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize;
        if !len.is_multiple_of(32) {
            return Err(ProofError::Malformed("payload is not a whole number of elements".into()));
        }
        let body = bytes
            .get(5..5 + len)
            .ok_or_else(|| ProofError::Malformed("truncated payload".into()))?;
        let payload = body
            .chunks_exact(32)
            .map(|c| {
                FieldElement::from_bytes_be(c.try_into().unwrap())
                    .ok_or_else(|| ProofError::Malformed("non-canonical field element".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((Self { backend, payload }, 5 + len))
    }
}

/// Transparent setup is digest-only, so repeated setups give identical keys.
pub fn setup(cs: &ConstraintSystem, backend: Backend) -> Result<(ProvingKey, VerifyingKey), ProofError> {
    match backend {
        Backend::Transparent => {
            let key = Key {
                digest: cs.digest(),
                backend,
                material: Vec::new(),
            };
            Ok((key.clone(), key))
        }
        Backend::Succinct => Err(ProofError::BackendUnsupported(backend.tag())),
    }
}

/// Proves after checking that `asg` satisfies `cs`.
pub fn prove(pk: &ProvingKey, cs: &ConstraintSystem, asg: &Assignment) -> Result<Proof, ProofError> {
    if pk.backend != Backend::Transparent {
        return Err(ProofError::BackendUnsupported(pk.backend.tag()));
    }
    if &cs.digest() != pk.digest() {
        return Err(ProofError::DigestMismatch);
    }
    if let Satisfaction::Unsatisfied { constraint } = cs.is_satisfied(asg)? {
        return Err(ProofError::Unsatisfied(constraint));
    }
    Ok(prove_unchecked(pk, asg))
}

/// Packages the witness without the self-check. A cheating prover does this.
pub fn prove_unchecked(pk: &ProvingKey, asg: &Assignment) -> Proof {
    Proof {
        backend: pk.backend,
        payload: asg.witnesses().to_vec(),
    }
}

/// Accepts iff the assignment `[1, publics, payload]` satisfies `cs`.
pub fn verify(
    vk: &VerifyingKey,
    cs: &ConstraintSystem,
    proof: &Proof,
    publics: &[FieldElement],
) -> Result<bool, ProofError> {
    if proof.backend != vk.backend {
        return Err(ProofError::Malformed("backend tag differs from the key".into()));
    }
    if vk.backend != Backend::Transparent {
        return Err(ProofError::BackendUnsupported(vk.backend.tag()));
    }
    if &cs.digest() != vk.digest() {
        return Err(ProofError::DigestMismatch);
    }
    if publics.len() != cs.num_public() {
        return Err(ProofError::Malformed(format!(
            "{} public inputs for a circuit with {}",
            publics.len(),
            cs.num_public()
        )));
    }
    if proof.payload.len() != cs.num_witness() {
        return Err(ProofError::Malformed(format!(
            "payload has {} elements, circuit has {} witnesses",
            proof.payload.len(),
            cs.num_witness()
        )));
    }
    let asg = Assignment::new(publics.to_vec(), proof.payload.clone());
    Ok(cs.is_satisfied(&asg)?.is_satisfied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::r1cs::LinearCombination;

    fn fe(v: i64) -> FieldElement {
        FieldElement::from_i64(v)
    }

    /// x (public) = y * z (witnesses)
    fn circuit() -> ConstraintSystem {
        let mut cs = ConstraintSystem::new();
        let x = cs.alloc_public();
        let y = cs.alloc_witness();
        let z = cs.alloc_witness();
        cs.enforce(y.into(), z.into(), x.into()).unwrap();
        cs
    }

    #[test]
    fn setup_is_deterministic() {
        let cs = circuit();
        assert_eq!(setup(&cs, Backend::Transparent).unwrap(), setup(&cs, Backend::Transparent).unwrap());
        let mut other = circuit();
        let w = other.alloc_witness();
        other.enforce(w.into(), w.into(), w.into()).unwrap();
        assert_ne!(
            setup(&cs, Backend::Transparent).unwrap().0.digest(),
            setup(&other, Backend::Transparent).unwrap().0.digest()
        );
        assert_eq!(setup(&cs, Backend::Succinct), Err(ProofError::BackendUnsupported(1)));
        assert!(Backend::from_tag(7).is_err());
    }

    #[test]
    fn prove_and_verify() {
        let cs = circuit();
        let (pk, vk) = setup(&cs, Backend::Transparent).unwrap();
        let asg = Assignment::new(vec![fe(12)], vec![fe(3), fe(4)]);
        let proof = prove(&pk, &cs, &asg).unwrap();
        assert!(verify(&vk, &cs, &proof, &[fe(12)]).unwrap());
        assert!(!verify(&vk, &cs, &proof, &[fe(13)]).unwrap());
        let bad = Assignment::new(vec![fe(12)], vec![fe(3), fe(5)]);
        assert_eq!(prove(&pk, &cs, &bad), Err(ProofError::Unsatisfied(0)));
        let forged = prove_unchecked(&pk, &bad);
        assert!(!verify(&vk, &cs, &forged, &[fe(12)]).unwrap());
    }

    #[test]
    fn digest_mismatch() {
        let cs = circuit();
        let (pk, vk) = setup(&cs, Backend::Transparent).unwrap();
        let mut other = circuit();
        other
            .enforce(LinearCombination::one(), LinearCombination::one(), LinearCombination::one())
            .unwrap();
        let asg = Assignment::new(vec![fe(12)], vec![fe(3), fe(4)]);
        assert_eq!(prove(&pk, &other, &asg), Err(ProofError::DigestMismatch));
        let proof = prove(&pk, &cs, &asg).unwrap();
        assert_eq!(verify(&vk, &other, &proof, &[fe(12)]), Err(ProofError::DigestMismatch));
    }

    #[test]
    fn empty_circuit() {
        let cs = ConstraintSystem::new();
        let (pk, vk) = setup(&cs, Backend::Transparent).unwrap();
        let proof = prove(&pk, &cs, &Assignment::new(vec![], vec![])).unwrap();
        assert!(proof.payload().is_empty());
        assert_eq!(proof.to_bytes(), vec![0, 0, 0, 0, 0]);
        assert!(verify(&vk, &cs, &proof, &[]).unwrap());
    }

    #[test]
    fn wire_format() {
        let cs = circuit();
        let (pk, vk) = setup(&cs, Backend::Transparent).unwrap();
        let proof = prove(&pk, &cs, &Assignment::new(vec![fe(-6)], vec![fe(-2), fe(3)])).unwrap();
        let bytes = proof.to_bytes();
        assert_eq!(bytes.len(), 5 + 64);
        assert_eq!(&bytes[..5], &[0, 0, 0, 0, 64]);
        let (back, used) = Proof::from_bytes(&bytes).unwrap();
        assert_eq!((back, used), (proof, bytes.len()));
        assert!(matches!(Proof::from_bytes(&bytes[..40]), Err(ProofError::Malformed(_))));
        let short = Proof::from_parts(Backend::Transparent, vec![fe(1)]);
        assert!(matches!(verify(&vk, &cs, &short, &[fe(-6)]), Err(ProofError::Malformed(_))));
        let (k, n) = Key::from_bytes(&vk.to_bytes()).unwrap();
        assert_eq!((k, n), (vk.clone(), 37));
        let mut bad = bytes.clone();
        bad[5..37].copy_from_slice(&[0xff; 32]);
        assert!(Proof::from_bytes(&bad).is_err());
    }
}
