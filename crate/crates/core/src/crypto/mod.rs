//! Hashing, deterministic signatures, record encryption and key wrapping.
//!
//! Hash choices are fixed project-wide: SHA-256 for content ids, transaction
//! ids and block hashes; SHA-512 inside the signature scheme.

mod agreement;
mod edwards;
mod field;
mod hash;
mod keys;
mod keystore;
mod signing;
mod symmetric;
mod verify_cache;

use thiserror::Error;

pub use agreement::{
    unwrap_key, wrap_key, wrap_key_with_rng, x25519, AgreementKeyPair, AgreementPublic, WrappedKey,
};
pub use hash::{hash_digest, hash_parts, Digest};
pub use keys::{rotate_keys, rotate_keys_with_rng, KeyBundle};
pub use keystore::{
    read_key_file, write_key_file, FileKeyStore, KeyFile, KeyStore, MemoryKeyStore,
    DEFAULT_KDF_ITERATIONS,
};
pub use signing::{
    generate_signing_keypair, scalar_in_range, sign, verify, PublicKey, Signature, SigningKeyPair,
};
pub use symmetric::{aes_decrypt, aes_encrypt, aes_encrypt_with_iv, Ciphertext, SymmetricKey};
pub use verify_cache::VerifyCache;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("seed must be 32 bytes, got {0}")]
    SeedLength(usize),
    #[error("malformed encoding: {0}")]
    Encoding(&'static str),
    #[error("ciphertext body length {0} is not a positive multiple of 16")]
    CiphertextLength(usize),
    #[error("padding check failed (wrong key or damaged ciphertext)")]
    Padding,
    #[error("key wrap failed")]
    Wrap,
    #[error("key unwrap failed (wrong recipient key or damaged wrap)")]
    Unwrap,
    #[error("peer agreement key is a low-order point")]
    LowOrderPoint,
    #[error("wrong passphrase for key file")]
    WrongPassphrase,
    #[error("no key stored for {0}")]
    KeyNotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
