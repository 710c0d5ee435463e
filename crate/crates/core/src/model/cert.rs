use std::collections::BTreeSet;

use super::digest::Digest;
use super::encode::Encode;
use super::ident::Role;
use super::message::{Envelope, Message};
use super::signed::{verify_signed, Scheme};

/// Commit attestations from distinct shim nodes over one (digest, seq, view).
#[derive(Clone, Debug)]
pub struct CommitCertificate {
    pub view: u64,
    pub seq: u64,
    pub digest: Digest,
    pub attestations: Vec<Envelope>,
}

impl Encode for CommitCertificate {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.view, self.seq, self.digest).encode(out);
        self.attestations.encode(out);
    }
}

impl CommitCertificate {
    pub fn signers(&self) -> BTreeSet<u32> {
        self.attestations.iter().map(|a| a.signer().id).collect()
    }
}

/// True iff the certificate holds at least `2f+1` valid DS commit attestations
/// from distinct shim nodes, all over the certificate's (digest, seq, view).
pub fn validate_certificate(cert: &CommitCertificate, n_r: usize, f_r: usize) -> bool {
    let mut signers = BTreeSet::new();
    for a in &cert.attestations {
        let signer = a.signer();
        if signer.role != Role::ShimNode || signer.id as usize >= n_r {
            return false;
        }
        if a.scheme() != Scheme::Ds || !verify_signed(a, None) {
            return false;
        }
        match a.payload() {
            Message::Commit { view, seq, digest }
                if *view == cert.view && *seq == cert.seq && *digest == cert.digest => {}
            _ => return false,
        }
        if !signers.insert(signer.id) {
            return false;
        }
    }
    signers.len() > 2 * f_r
}
