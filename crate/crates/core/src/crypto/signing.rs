//! Deterministic Edwards-curve signatures (Ed25519 parameters).
//!
//! Key setup hashes the 32-byte seed with SHA-512; the lower half becomes the
//! clamped secret scalar `a`, the upper half the nonce prefix. Signing derives
//! the ephemeral scalar from the prefix and the message, so a given
//! (seed, message) pair always produces the same signature.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use once_cell::sync::Lazy;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha512};

use super::edwards::EdwardsPoint;
use super::CryptoError;

/// Group order l = 2^252 + 27742317777372353535851937790883648493.
static GROUP_ORDER: Lazy<BigUint> = Lazy::new(|| {
    (BigUint::from(1u8) << 252u32)
        + "27742317777372353535851937790883648493"
            .parse::<BigUint>()
            .unwrap()
});

fn reduce_wide(bytes: &[u8]) -> BigUint {
    BigUint::from_bytes_le(bytes) % &*GROUP_ORDER
}

fn scalar_bytes(v: &BigUint) -> [u8; 32] {
    let mut out = [0u8; 32];
    let le = v.to_bytes_le();
    out[..le.len()].copy_from_slice(&le);
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|_| CryptoError::Encoding("public key hex"))?;
        Ok(PublicKey(
            bytes
                .try_into()
                .map_err(|_| CryptoError::Encoding("public key length"))?,
        ))
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

impl FromStr for PublicKey {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PublicKey::from_hex(s)
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        PublicKey::from_hex(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// (R, S): R is a compressed curve point, S a little-endian scalar.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub r: [u8; 32],
    pub s: [u8; 32],
}

impl Signature {
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.r);
        out[32..].copy_from_slice(&self.s);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CryptoError> {
        if b.len() != 64 {
            return Err(CryptoError::Encoding("signature length"));
        }
        let mut r = [0u8; 32];
        let mut s = [0u8; 32];
        r.copy_from_slice(&b[..32]);
        s.copy_from_slice(&b[32..]);
        Ok(Signature { r, s })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Signature::from_bytes(&hex::decode(s).map_err(|_| CryptoError::Encoding("signature hex"))?)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &hex::encode(self.r)[..12])
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Signature::from_hex(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone)]
pub struct SigningKeyPair {
    seed: [u8; 32],
    scalar: [u8; 32],
    prefix: [u8; 32],
    public: PublicKey,
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl SigningKeyPair {
    pub fn from_seed(seed: &[u8]) -> Result<Self, CryptoError> {
        let seed: [u8; 32] = seed
            .try_into()
            .map_err(|_| CryptoError::SeedLength(seed.len()))?;
        let h = Sha512::digest(seed);
        let mut scalar = [0u8; 32];
        let mut prefix = [0u8; 32];
        scalar.copy_from_slice(&h[..32]);
        prefix.copy_from_slice(&h[32..]);
        scalar[0] &= 248;
        scalar[31] &= 127;
        scalar[31] |= 64;
        let public = PublicKey(EdwardsPoint::mul_base(&scalar).compress());
        Ok(Self {
            seed,
            scalar,
            prefix,
            public,
        })
    }

    pub fn generate<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(&seed).expect("32-byte seed")
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    /// The clamped secret scalar `a`.
    pub fn secret_scalar(&self) -> &[u8; 32] {
        &self.scalar
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        let r = reduce_wide(
            &Sha512::new()
                .chain_update(self.prefix)
                .chain_update(message)
                .finalize(),
        );
        let r_bytes = scalar_bytes(&r);
        let big_r = EdwardsPoint::mul_base(&r_bytes).compress();
        let h = reduce_wide(
            &Sha512::new()
                .chain_update(big_r)
                .chain_update(self.public.0)
                .chain_update(message)
                .finalize(),
        );
        let a = BigUint::from_bytes_le(&self.scalar);
        let s = (r + h * a) % &*GROUP_ORDER;
        Signature {
            r: big_r,
            s: scalar_bytes(&s),
        }
    }
}

pub fn generate_signing_keypair(seed: &[u8]) -> Result<SigningKeyPair, CryptoError> {
    SigningKeyPair::from_seed(seed)
}

pub fn sign(key: &SigningKeyPair, message: &[u8]) -> Signature {
    key.sign(message)
}

/// Checks R == S*B - h*A. Malformed encodings and S >= l yield `false`.
pub fn verify(public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let s = BigUint::from_bytes_le(&sig.s);
    if s >= *GROUP_ORDER {
        return false;
    }
    let Some(a) = EdwardsPoint::decompress(&public.0) else {
        return false;
    };
    if EdwardsPoint::decompress(&sig.r).is_none() {
        return false;
    }
    let h = reduce_wide(
        &Sha512::new()
            .chain_update(sig.r)
            .chain_update(public.0)
            .chain_update(message)
            .finalize(),
    );
    let check = EdwardsPoint::double_mul_base(&sig.s, &a.negate(), &scalar_bytes(&h));
    check.compress() == sig.r
}

/// Whether an emitted S lies in [0, l).
pub fn scalar_in_range(s: &[u8; 32]) -> bool {
    BigUint::from_bytes_le(s) < *GROUP_ORDER
}
