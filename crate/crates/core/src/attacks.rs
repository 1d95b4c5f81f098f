//! Byzantine client behaviors.
//!
//! Each attack decorates an honest client: data poisoning changes the local
//! dataset once, update attacks rewrite `g_i` before the honest scoring and
//! proving pipeline runs, and protocol attacks tamper with what is sent.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fltrust::Dataset;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("unknown attack kind '{0}'")]
    UnknownKind(String),
    #[error("invalid attack argument: {0}")]
    InvalidArgument(String),
    #[error("attack spec must look like KIND:IDS[:ARG], got '{0}'")]
    Syntax(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "snake_case")]
pub enum AttackKind {
    /// Negates `g_i`; the proof still verifies and TS clamps to 0.
    SignFlip,
    /// Multiplies `g_i` by `lambda > 0`; TS̃ shrinks by `1/lambda`.
    Scale(f64),
    /// Adds `N(0, sigma^2)` noise to every feature.
    GaussianNoise(f64),
    /// Negates a random `fraction` of the labels.
    LabelFlip(f64),
    /// Claims TS̃ = 1 in H and the ciphertexts while keeping the true `g_i`.
    InflatedWeight,
    /// Sends a random payload in place of a proof.
    ForgedProof,
    /// Resends the previous round's proof with fresh ciphertexts.
    ReplayedProof,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::SignFlip => "sign_flip",
            AttackKind::Scale(_) => "scale",
            AttackKind::GaussianNoise(_) => "gaussian_noise",
            AttackKind::LabelFlip(_) => "label_flip",
            AttackKind::InflatedWeight => "inflated_weight",
            AttackKind::ForgedProof => "forged_proof",
            AttackKind::ReplayedProof => "replayed_proof",
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        match *self {
            AttackKind::Scale(l) if !(l > 0.0 && l.is_finite()) => {
                Err(AttackError::InvalidArgument(format!("scale factor {l} must be positive")))
            }
            AttackKind::GaussianNoise(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(AttackError::InvalidArgument(format!("sigma {s} must be non-negative")))
            }
            AttackKind::LabelFlip(f) if !(f > 0.0 && f <= 1.0) => {
                Err(AttackError::InvalidArgument(format!("fraction {f} must be in (0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the attack breaks the proven relation (and is therefore rejected).
    pub fn falsifies_proof(&self) -> bool {
        matches!(
            self,
            AttackKind::InflatedWeight | AttackKind::ForgedProof | AttackKind::ReplayedProof
        )
    }

    /// Applies data poisoning to the client's dataset. No-op for other kinds.
    pub fn poison_dataset<R: Rng>(&self, data: &mut Dataset, rng: &mut R) {
        match *self {
            AttackKind::GaussianNoise(sigma) if sigma > 0.0 => {
                let noise = Normal::new(0.0, sigma).expect("validated sigma");
                for x in data.features_mut() {
                    *x += noise.sample(rng);
                }
            }
            AttackKind::LabelFlip(fraction) => {
                let n = data.len();
                let k = ((fraction * n as f64).ceil() as usize).min(n);
                for i in rand::seq::index::sample(rng, n, k) {
                    data.labels_mut()[i] = -data.labels()[i];
                }
            }
            _ => {}
        }
    }

    /// Rewrites a real-valued update. No-op for other kinds.
    pub fn transform_update(&self, g: &mut [f64]) {
        match *self {
            AttackKind::SignFlip => g.iter_mut().for_each(|x| *x = -*x),
            AttackKind::Scale(l) => g.iter_mut().for_each(|x| *x *= l),
            _ => {}
        }
    }

    fn arg(&self) -> Option<f64> {
        match *self {
            AttackKind::Scale(v) | AttackKind::GaussianNoise(v) | AttackKind::LabelFlip(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.arg() {
            Some(a) => write!(f, "{}({a})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// An attack and the client ids running it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub targets: Vec<u32>,
}

impl AttackSpec {
    pub fn kind_for(specs: &[AttackSpec], id: u32) -> Option<AttackKind> {
        specs
            .iter()
            .find(|s| s.targets.contains(&id))
            .map(|s| s.kind)
    }

    fn parse_kind(name: &str, arg: Option<&str>) -> Result<AttackKind, AttackError> {
        let num = |a: Option<&str>| -> Result<f64, AttackError> {
            a.ok_or_else(|| AttackError::InvalidArgument(format!("{name} needs an argument")))?
                .parse::<f64>()
                .map_err(|e| AttackError::InvalidArgument(e.to_string()))
        };
        let kind = match name {
            "sign_flip" => AttackKind::SignFlip,
            "scale" => AttackKind::Scale(num(arg)?),
            "gaussian_noise" => AttackKind::GaussianNoise(num(arg)?),
            "label_flip" => AttackKind::LabelFlip(num(arg)?),
            "inflated_weight" => AttackKind::InflatedWeight,
            "forged_proof" => AttackKind::ForgedProof,
            "replayed_proof" => AttackKind::ReplayedProof,
            other => return Err(AttackError::UnknownKind(other.to_string())),
        };
        if kind.arg().is_none() && arg.is_some() {
            return Err(AttackError::InvalidArgument(format!("{name} takes no argument")));
        }
        kind.validate()?;
        Ok(kind)
    }
}

/// `KIND:IDS[:ARG]`, e.g. `sign_flip:0,3` or `scale:2:10`.
impl FromStr for AttackSpec {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&parts.len()) || parts[1].is_empty() {
            return Err(AttackError::Syntax(s.to_string()));
        }
        let targets = parts[1]
            .split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|_| AttackError::Syntax(s.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let kind = Self::parse_kind(parts[0], parts.get(2).copied())?;
        Ok(Self { kind, targets })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn parse_specs() {
        let s: AttackSpec = "sign_flip:0,3".parse().unwrap();
        assert_eq!(s, AttackSpec { kind: AttackKind::SignFlip, targets: vec![0, 3] });
        let s: AttackSpec = "scale:2:10".parse().unwrap();
        assert_eq!(s.kind, AttackKind::Scale(10.0));
        assert!("scale:2".parse::<AttackSpec>().is_err());
        assert!("scale:2:-1".parse::<AttackSpec>().is_err());
        assert!("label_flip:1:1.5".parse::<AttackSpec>().is_err());
        assert!("sign_flip:1:3".parse::<AttackSpec>().is_err());
        assert!(matches!("nope:1".parse::<AttackSpec>(), Err(AttackError::UnknownKind(_))));
        assert!("sign_flip".parse::<AttackSpec>().is_err());
        assert_eq!(AttackSpec::kind_for(&[s], 2), Some(AttackKind::Scale(10.0)));
    }

    #[test]
    fn update_transforms() {
        let mut g = vec![1.0, -2.0];
        AttackKind::SignFlip.transform_update(&mut g);
        assert_eq!(g, vec![-1.0, 2.0]);
        AttackKind::Scale(10.0).transform_update(&mut g);
        assert_eq!(g, vec![-10.0, 20.0]);
        AttackKind::ForgedProof.transform_update(&mut g);
        assert_eq!(g, vec![-10.0, 20.0]);
    }

    #[test]
    fn data_poisoning() {
        let d = Dataset::new(vec![1.0; 8], 2, vec![1.0, 2.0, 3.0, 4.0], "d").unwrap();
        let mut flipped = d.clone();
        AttackKind::LabelFlip(0.5).poison_dataset(&mut flipped, &mut seeded_rng(b"lf"));
        assert_eq!(flipped.labels().iter().filter(|&&y| y < 0.0).count(), 2);
        let mut noisy = d.clone();
        AttackKind::GaussianNoise(1.0).poison_dataset(&mut noisy, &mut seeded_rng(b"gn"));
        assert_ne!(noisy, d);
        assert_eq!(noisy.labels(), d.labels());
    }
}
