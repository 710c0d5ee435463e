use thiserror::Error;

use crate::model::{validate_certificate, CheckpointBundle};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("range ({from}, {to}] does not match the checkpoint interval")]
    Range { from: u64, to: u64 },
    #[error("certificate for seq {0} missing or out of order")]
    Gap(u64),
    #[error("certificate for seq {0} is invalid")]
    InvalidCertificate(u64),
}

/// A bundle must cover exactly one checkpoint interval with one valid
/// certificate per sequence number, in order.
pub fn validate_bundle(
    bundle: &CheckpointBundle,
    interval: u64,
    n_r: usize,
    f_r: usize,
) -> Result<(), BundleError> {
    let (from, to) = (bundle.from_seq, bundle.to_seq);
    if to == 0 || to % interval != 0 || from + interval != to {
        return Err(BundleError::Range { from, to });
    }
    if bundle.certificates.len() as u64 != interval {
        return Err(BundleError::Gap(from + 1 + bundle.certificates.len() as u64));
    }
    for (i, c) in bundle.certificates.iter().enumerate() {
        let seq = from + 1 + i as u64;
        if c.seq != seq {
            return Err(BundleError::Gap(seq));
        }
        if !validate_certificate(c, n_r, f_r) {
            return Err(BundleError::InvalidCertificate(seq));
        }
    }
    Ok(())
}
