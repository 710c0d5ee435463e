//! Modeled authentication.
//!
//! A [`SignedMessage`] carries a tag bound to its signer, scheme and payload,
//! plus a validity flag standing in for the cryptographic check. Only a
//! [`Keypair`] can mint a valid message, and the [`KeyRegistry`] hands out
//! exactly one keypair per identity, so a component can never produce a valid
//! message under someone else's name.

use std::collections::BTreeSet;

use super::digest::{Digest, StreamDigest};
use super::encode::Encode;
use super::ident::Identity;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Ds,
    Mac,
}

impl Encode for Scheme {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(match self {
            Scheme::Ds => 0,
            Scheme::Mac => 1,
        });
    }
}

#[derive(Clone, Debug)]
pub struct SignedMessage<T> {
    payload: T,
    signer: Identity,
    scheme: Scheme,
    tag: Digest,
    valid: bool,
}

fn compute_tag<T: Encode>(payload: &T, signer: Identity, scheme: Scheme) -> Digest {
    let mut bytes = Vec::with_capacity(96);
    b"sig".encode(&mut bytes);
    signer.encode(&mut bytes);
    scheme.encode(&mut bytes);
    payload.encode(&mut bytes);
    let mut h = StreamDigest::new();
    h.update(&bytes);
    h.finish()
}

impl<T: Encode> SignedMessage<T> {
    pub fn payload(&self) -> &T {
        &self.payload
    }

    pub fn into_payload(self) -> T {
        self.payload
    }

    pub fn signer(&self) -> Identity {
        self.signer
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn tag(&self) -> Digest {
        self.tag
    }

    /// The flag a receiver's cryptographic check would report.
    pub fn claims_valid(&self) -> bool {
        self.valid
    }

    /// A message claiming `claimed` as signer without its key.
    pub fn forged(payload: T, claimed: Identity, scheme: Scheme) -> Self {
        let tag = compute_tag(&payload, claimed, scheme);
        Self { payload, signer: claimed, scheme, tag, valid: false }
    }

    /// Same signer and tag over a different payload.
    pub fn tampered(&self, payload: T) -> Self {
        Self { payload, signer: self.signer, scheme: self.scheme, tag: self.tag, valid: self.valid }
    }
}

impl<T: Encode> Encode for SignedMessage<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        self.signer.encode(out);
        self.scheme.encode(out);
        self.tag.encode(out);
        self.payload.encode(out);
    }
}

/// Signing capability for one identity. Not cloneable.
#[derive(Debug)]
pub struct Keypair {
    owner: Identity,
}

impl Keypair {
    pub fn identity(&self) -> Identity {
        self.owner
    }

    pub fn sign<T: Encode>(&self, payload: T, scheme: Scheme) -> SignedMessage<T> {
        let tag = compute_tag(&payload, self.owner, scheme);
        SignedMessage { payload, signer: self.owner, scheme, tag, valid: true }
    }
}

#[derive(Debug, Default)]
pub struct KeyRegistry {
    issued: BTreeSet<Identity>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Issues the keypair for `id`, or `None` if it was already issued.
    pub fn issue(&mut self, id: Identity) -> Option<Keypair> {
        self.issued.insert(id).then_some(Keypair { owner: id })
    }
}

pub fn verify_signed<T: Encode>(msg: &SignedMessage<T>, expected: Option<Identity>) -> bool {
    if !msg.valid {
        return false;
    }
    if let Some(e) = expected {
        if e != msg.signer {
            return false;
        }
    }
    compute_tag(&msg.payload, msg.signer, msg.scheme) == msg.tag
}
