//! AES-256 in CBC mode with PKCS#7 padding and a random IV per message.
//!
//! There is no authentication tag. Ciphertexts are stored content-addressed,
//! so integrity comes from re-hashing against the on-chain content id; a
//! padding failure here is only a coarse signal of a wrong key or damage.

use std::fmt;

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes256;
use subtle::ConstantTimeEq;

use super::CryptoError;

pub const BLOCK: usize = 16;

#[derive(Clone)]
pub struct SymmetricKey([u8; 32]);

impl SymmetricKey {
    pub fn generate<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        Self(k)
    }

    pub fn from_bytes(b: [u8; 32]) -> Self {
        Self(b)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl PartialEq for SymmetricKey {
    fn eq(&self, other: &Self) -> bool {
        self.0.ct_eq(&other.0).into()
    }
}

impl Eq for SymmetricKey {}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Ciphertext {
    pub iv: [u8; BLOCK],
    pub body: Vec<u8>,
}

impl Ciphertext {
    /// Wire form: IV followed by the CBC body.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOCK + self.body.len());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CryptoError> {
        if b.len() < 2 * BLOCK || b.len() % BLOCK != 0 {
            return Err(CryptoError::CiphertextLength(b.len().saturating_sub(BLOCK)));
        }
        let mut iv = [0u8; BLOCK];
        iv.copy_from_slice(&b[..BLOCK]);
        Ok(Self {
            iv,
            body: b[BLOCK..].to_vec(),
        })
    }
}

pub fn aes_encrypt_with_iv(key: &SymmetricKey, iv: [u8; BLOCK], plaintext: &[u8]) -> Ciphertext {
    let cipher = Aes256::new(GenericArray::from_slice(&key.0));
    let pad = BLOCK - plaintext.len() % BLOCK;
    let mut body = Vec::with_capacity(plaintext.len() + pad);
    body.extend_from_slice(plaintext);
    body.extend(std::iter::repeat(pad as u8).take(pad));

    let mut prev = iv;
    for chunk in body.chunks_exact_mut(BLOCK) {
        for (b, p) in chunk.iter_mut().zip(prev.iter()) {
            *b ^= p;
        }
        cipher.encrypt_block(GenericArray::from_mut_slice(chunk));
        prev.copy_from_slice(chunk);
    }
    Ciphertext { iv, body }
}

pub fn aes_encrypt(key: &SymmetricKey, plaintext: &[u8]) -> Ciphertext {
    let mut iv = [0u8; BLOCK];
    rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut iv);
    aes_encrypt_with_iv(key, iv, plaintext)
}

pub fn aes_decrypt(key: &SymmetricKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    if ct.body.is_empty() || ct.body.len() % BLOCK != 0 {
        return Err(CryptoError::CiphertextLength(ct.body.len()));
    }
    let cipher = Aes256::new(GenericArray::from_slice(&key.0));
    let mut out = ct.body.clone();
    let mut prev = ct.iv;
    for chunk in out.chunks_exact_mut(BLOCK) {
        let mut saved = [0u8; BLOCK];
        saved.copy_from_slice(chunk);
        cipher.decrypt_block(GenericArray::from_mut_slice(chunk));
        for (b, p) in chunk.iter_mut().zip(prev.iter()) {
            *b ^= p;
        }
        prev = saved;
    }

    let pad = *out.last().expect("non-empty body") as usize;
    if pad == 0 || pad > BLOCK || out[out.len() - pad..].iter().any(|&b| b as usize != pad) {
        return Err(CryptoError::Padding);
    }
    out.truncate(out.len() - pad);
    Ok(out)
}
