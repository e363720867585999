//! Canonical byte encoding of ledger values.
//!
//! Integers are big-endian fixed width, floats are their IEEE-754 bit
//! patterns (big-endian), lists and strings carry a `u32` length prefix, enum
//! variants a `u8` tag. Non-finite floats are refused.

use crate::consensus::Proof;
use crate::hash::Digest;
use crate::model::ParamVector;
use crate::validation::{RejectReason, ValidationVerdict};
use crate::{NodeId, UpdateForm};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("cannot encode non-finite float {0}")]
    NonFinite(f64),
    #[error("list of {0} items is too long to encode")]
    TooLong(usize),
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Encoder::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    pub fn f64(&mut self, v: f64) -> Result<(), EncodeError> {
        if !v.is_finite() {
            return Err(EncodeError::NonFinite(v));
        }
        self.u64(v.to_bits());
        Ok(())
    }

    pub fn len(&mut self, n: usize) -> Result<(), EncodeError> {
        let n32 = u32::try_from(n).map_err(|_| EncodeError::TooLong(n))?;
        self.u32(n32);
        Ok(())
    }

    pub fn digest(&mut self, d: &Digest) {
        self.buf.extend_from_slice(&d.0);
    }

    pub fn str(&mut self, s: &str) -> Result<(), EncodeError> {
        self.len(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub fn list<T: CanonicalEncode>(&mut self, items: &[T]) -> Result<(), EncodeError> {
        self.len(items.len())?;
        for it in items {
            it.encode(self)?;
        }
        Ok(())
    }
}

pub trait CanonicalEncode {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError>;
}

pub fn canonical_bytes<T: CanonicalEncode + ?Sized>(value: &T) -> Result<Vec<u8>, EncodeError> {
    let mut e = Encoder::new();
    value.encode(&mut e)?;
    Ok(e.into_bytes())
}

pub fn canonical_digest<T: CanonicalEncode + ?Sized>(value: &T) -> Result<Digest, EncodeError> {
    Ok(Digest::of(&canonical_bytes(value)?))
}

/// Parameter vectors are finite by construction, so this cannot fail.
pub fn param_vector_digest(p: &ParamVector) -> Digest {
    canonical_digest(p).expect("parameter vectors hold finite values")
}

impl CanonicalEncode for f64 {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.f64(*self)
    }
}

impl CanonicalEncode for Digest {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.digest(self);
        Ok(())
    }
}

impl CanonicalEncode for NodeId {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.u32(self.0);
        Ok(())
    }
}

impl CanonicalEncode for UpdateForm {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.u8(match self {
            UpdateForm::Weights => 0,
            UpdateForm::Gradients => 1,
        });
        Ok(())
    }
}

impl CanonicalEncode for ParamVector {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.len(self.shapes().len())?;
        for s in self.shapes() {
            enc.u64(s.input_dim as u64);
            enc.u64(s.output_dim as u64);
        }
        enc.list(self.values())
    }
}

impl CanonicalEncode for RejectReason {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.u8(match self {
            RejectReason::Form => 0,
            RejectReason::Threshold => 1,
            RejectReason::Numeric => 2,
            RejectReason::Krum => 3,
        });
        Ok(())
    }
}

impl CanonicalEncode for ValidationVerdict {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.digest(&self.update_id);
        enc.bool(self.accepted);
        enc.f64(self.score)?;
        enc.list(&self.voter_ids)?;
        match &self.reason {
            None => enc.u8(0),
            Some(r) => {
                enc.u8(1);
                r.encode(enc)?;
            }
        }
        Ok(())
    }
}

impl CanonicalEncode for Proof {
    fn encode(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        match self {
            Proof::Genesis => enc.u8(0),
            Proof::Pow {
                nonce,
                attempts,
                difficulty_bits,
            } => {
                enc.u8(1);
                enc.u64(*nonce);
                enc.u64(*attempts);
                enc.u32(*difficulty_bits);
            }
            Proof::Pos { u, stakes } => {
                enc.u8(2);
                enc.f64(*u)?;
                enc.list(stakes)?;
            }
            Proof::Committee {
                draws,
                weights,
                members,
            } => {
                enc.u8(3);
                enc.list(draws)?;
                enc.list(weights)?;
                enc.list(members)?;
            }
        }
        Ok(())
    }
}
