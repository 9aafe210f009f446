//! Key agreement (X25519) and record-key wrapping.
//!
//! A record key is wrapped to a recipient by generating an ephemeral
//! agreement pair, deriving a key-encryption key with HKDF-SHA256 from the
//! shared secret, and wrapping with AES key wrap (RFC 3394), whose integrity
//! check makes unwrapping under the wrong private key fail.

use std::fmt;

use aes_kw::KekAes256;
use hkdf::Hkdf;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::field::FieldElement;
use super::symmetric::SymmetricKey;
use super::CryptoError;

const WRAP_INFO: &[u8] = b"ehrchain/record-key-wrap/v1";

fn clamp(mut k: [u8; 32]) -> [u8; 32] {
    k[0] &= 248;
    k[31] &= 127;
    k[31] |= 64;
    k
}

/// Montgomery-ladder scalar multiplication on Curve25519 (RFC 7748).
pub fn x25519(scalar: &[u8; 32], u: &[u8; 32]) -> [u8; 32] {
    let k = clamp(*scalar);
    let x1 = FieldElement::from_bytes(u);
    let a24 = FieldElement::from_u64(121665);
    let mut x2 = FieldElement::ONE;
    let mut z2 = FieldElement::ZERO;
    let mut x3 = x1;
    let mut z3 = FieldElement::ONE;
    let mut swap = false;

    for t in (0..255).rev() {
        let bit = (k[t / 8] >> (t % 8)) & 1 == 1;
        swap ^= bit;
        FieldElement::conditional_swap(&mut x2, &mut x3, swap);
        FieldElement::conditional_swap(&mut z2, &mut z3, swap);
        swap = bit;

        let a = &x2 + &z2;
        let aa = a.square();
        let b = &x2 - &z2;
        let bb = b.square();
        let e = &aa - &bb;
        let c = &x3 + &z3;
        let d = &x3 - &z3;
        let da = &d * &a;
        let cb = &c * &b;
        x3 = (&da + &cb).square();
        z3 = &x1 * &(&da - &cb).square();
        x2 = &aa * &bb;
        z2 = &e * &(&aa + &(&a24 * &e));
    }
    FieldElement::conditional_swap(&mut x2, &mut x3, swap);
    FieldElement::conditional_swap(&mut z2, &mut z3, swap);
    (&x2 * &z2.invert()).to_bytes()
}

const BASE_U: [u8; 32] = {
    let mut b = [0u8; 32];
    b[0] = 9;
    b
};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct AgreementPublic(pub [u8; 32]);

impl AgreementPublic {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let b = hex::decode(s).map_err(|_| CryptoError::Encoding("agreement key hex"))?;
        Ok(Self(b.try_into().map_err(|_| {
            CryptoError::Encoding("agreement key length")
        })?))
    }
}

impl From<AgreementPublic> for String {
    fn from(k: AgreementPublic) -> String {
        k.to_hex()
    }
}

impl TryFrom<String> for AgreementPublic {
    type Error = CryptoError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        AgreementPublic::from_hex(&s)
    }
}

impl fmt::Debug for AgreementPublic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AgreementPublic({})", &self.to_hex()[..16])
    }
}

/// Agreement pair used only for key wrapping, never for signing.
#[derive(Clone)]
pub struct AgreementKeyPair {
    secret: [u8; 32],
    public: AgreementPublic,
}

impl fmt::Debug for AgreementKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgreementKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl AgreementKeyPair {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        let public = AgreementPublic(x25519(&secret, &BASE_U));
        Self { secret, public }
    }

    pub fn generate<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        Self::from_secret(secret)
    }

    pub fn public(&self) -> AgreementPublic {
        self.public
    }

    pub fn secret(&self) -> &[u8; 32] {
        &self.secret
    }

    fn shared(&self, peer: &AgreementPublic) -> Result<[u8; 32], CryptoError> {
        let s = x25519(&self.secret, &peer.0);
        if s == [0u8; 32] {
            return Err(CryptoError::LowOrderPoint);
        }
        Ok(s)
    }
}

/// A record key wrapped to one recipient's agreement key.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrappedKey {
    #[serde(with = "hex_array32")]
    pub ephemeral: [u8; 32],
    #[serde(with = "hex_vec")]
    pub wrapped: Vec<u8>,
}

impl fmt::Debug for WrappedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "WrappedKey(eph={}..)",
            &hex::encode(self.ephemeral)[..12]
        )
    }
}

fn derive_kek(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> [u8; 32] {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(ephemeral);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut kek = [0u8; 32];
    hk.expand(WRAP_INFO, &mut kek)
        .expect("32 bytes is a valid HKDF length");
    kek
}

pub fn wrap_key_with_rng<R: rand::RngCore + rand::CryptoRng>(
    record_key: &SymmetricKey,
    recipient: &AgreementPublic,
    rng: &mut R,
) -> Result<WrappedKey, CryptoError> {
    let eph = AgreementKeyPair::generate(rng);
    let shared = eph.shared(recipient)?;
    let kek = KekAes256::from(derive_kek(&shared, &eph.public.0, &recipient.0));
    let mut out = vec![0u8; 40];
    kek.wrap(record_key.as_bytes(), &mut out)
        .map_err(|_| CryptoError::Wrap)?;
    Ok(WrappedKey {
        ephemeral: eph.public.0,
        wrapped: out,
    })
}

pub fn wrap_key(
    record_key: &SymmetricKey,
    recipient: &AgreementPublic,
) -> Result<WrappedKey, CryptoError> {
    wrap_key_with_rng(record_key, recipient, &mut rand::rngs::OsRng)
}

pub fn unwrap_key(
    wrapped: &WrappedKey,
    recipient: &AgreementKeyPair,
) -> Result<SymmetricKey, CryptoError> {
    if wrapped.wrapped.len() != 40 {
        return Err(CryptoError::Unwrap);
    }
    let shared = recipient
        .shared(&AgreementPublic(wrapped.ephemeral))
        .map_err(|_| CryptoError::Unwrap)?;
    let kek = KekAes256::from(derive_kek(&shared, &wrapped.ephemeral, &recipient.public.0));
    let mut out = [0u8; 32];
    kek.unwrap(&wrapped.wrapped, &mut out)
        .map_err(|_| CryptoError::Unwrap)?;
    Ok(SymmetricKey::from_bytes(out))
}

pub(crate) mod hex_array32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let b = hex::decode(&s).map_err(serde::de::Error::custom)?;
        b.try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}

pub(crate) mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}
