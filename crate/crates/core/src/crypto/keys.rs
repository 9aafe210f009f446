use std::fmt;

use sha2::{Digest as _, Sha512};

use super::agreement::{AgreementKeyPair, AgreementPublic};
use super::signing::{PublicKey, SigningKeyPair};

/// An account's signing and agreement pairs at one key generation.
#[derive(Clone)]
pub struct KeyBundle {
    pub signing: SigningKeyPair,
    pub agreement: AgreementKeyPair,
    pub generation: u32,
}

impl fmt::Debug for KeyBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyBundle")
            .field("signing", &self.signing.public())
            .field("agreement", &self.agreement.public())
            .field("generation", &self.generation)
            .finish()
    }
}

impl KeyBundle {
    pub fn generate<R: rand::RngCore + rand::CryptoRng>(rng: &mut R) -> Self {
        Self {
            signing: SigningKeyPair::generate(rng),
            agreement: AgreementKeyPair::generate(rng),
            generation: 1,
        }
    }

    /// Derives both pairs from one 32-byte master seed. Identical seeds give
    /// identical bundles, which is what `keygen --seed` relies on.
    pub fn from_master_seed(seed: &[u8; 32]) -> Self {
        let h = Sha512::new()
            .chain_update(b"ehrchain/keybundle/v1")
            .chain_update(seed)
            .finalize();
        let mut signing_seed = [0u8; 32];
        let mut agreement_secret = [0u8; 32];
        signing_seed.copy_from_slice(&h[..32]);
        agreement_secret.copy_from_slice(&h[32..]);
        Self::from_parts(signing_seed, agreement_secret, 1)
    }

    pub fn from_parts(signing_seed: [u8; 32], agreement_secret: [u8; 32], generation: u32) -> Self {
        Self {
            signing: SigningKeyPair::from_seed(&signing_seed).expect("32-byte seed"),
            agreement: AgreementKeyPair::from_secret(agreement_secret),
            generation,
        }
    }

    pub fn signing_public(&self) -> PublicKey {
        self.signing.public()
    }

    pub fn agreement_public(&self) -> AgreementPublic {
        self.agreement.public()
    }
}

/// Fresh pairs at generation + 1. Publishing the new public keys is up to
/// the caller; the old pairs keep verifying historical signatures.
pub fn rotate_keys_with_rng<R: rand::RngCore + rand::CryptoRng>(
    bundle: &KeyBundle,
    rng: &mut R,
) -> KeyBundle {
    KeyBundle {
        signing: SigningKeyPair::generate(rng),
        agreement: AgreementKeyPair::generate(rng),
        generation: bundle.generation + 1,
    }
}

pub fn rotate_keys(bundle: &KeyBundle) -> KeyBundle {
    rotate_keys_with_rng(bundle, &mut rand::rngs::OsRng)
}
