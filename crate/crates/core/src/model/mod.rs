//! Domain types shared by every component.

pub mod cert;
pub mod config;
pub mod digest;
pub mod encode;
pub mod ident;
pub mod message;
pub mod signed;
pub mod txn;

pub use cert::{validate_certificate, CommitCertificate};
pub use config::{ConflictMode, Config, ConfigError, CostModel, Timers};
pub use digest::{digest_of, Digest};
pub use encode::Encode;
pub use ident::{ms, to_ms, Identity, Role, SimTime};
pub use message::{
    BatchOutput, CheckpointBundle, Envelope, ErrorKey, ErrorKind, Message, MessageKind, Outcome,
    PreparedProof, Request, RequestBody,
};
pub use signed::{verify_signed, KeyRegistry, Keypair, Scheme, SignedMessage};
pub use txn::{
    execute_txn, Key, Op, Operand, RwSet, SignedTxn, Transaction, TxnId, TxnOutput, TxnResult,
    Value, Version,
};
