//! Encrypted-at-rest key files.
//!
//! A key file holds the signing seed and agreement secret, encrypted with
//! AES-256-CBC under a key derived from a passphrase with PBKDF2-HMAC-SHA256
//! and authenticated with HMAC-SHA256 so a wrong passphrase is detected
//! reliably. Hardware-backed stores plug in through [`KeyStore`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::agreement::AgreementPublic;
use super::keys::KeyBundle;
use super::signing::PublicKey;
use super::symmetric::{aes_decrypt, aes_encrypt_with_iv, Ciphertext, SymmetricKey};
use super::CryptoError;

pub const DEFAULT_KDF_ITERATIONS: u32 = 100_000;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct KeyFile {
    pub version: u32,
    pub generation: u32,
    pub signing_public: PublicKey,
    pub agreement_public: AgreementPublic,
    pub kdf: String,
    pub iterations: u32,
    pub salt: String,
    pub iv: String,
    pub body: String,
    pub mac: String,
}

fn derive(passphrase: &str, salt: &[u8], iterations: u32) -> ([u8; 32], [u8; 32]) {
    let mut out = [0u8; 64];
    pbkdf2::pbkdf2_hmac::<Sha256>(passphrase.as_bytes(), salt, iterations, &mut out);
    let mut enc = [0u8; 32];
    let mut mac = [0u8; 32];
    enc.copy_from_slice(&out[..32]);
    mac.copy_from_slice(&out[32..]);
    (enc, mac)
}

fn mac_over(mac_key: &[u8; 32], iv: &[u8], body: &[u8], public: &PublicKey) -> Hmac<Sha256> {
    let mut m = <Hmac<Sha256> as Mac>::new_from_slice(mac_key).expect("any key length");
    m.update(iv);
    m.update(body);
    m.update(&public.0);
    m
}

impl KeyFile {
    pub fn seal(bundle: &KeyBundle, passphrase: &str, iterations: u32) -> Self {
        let mut rng = rand::rngs::OsRng;
        let mut salt = [0u8; 16];
        let mut iv = [0u8; 16];
        rand::RngCore::fill_bytes(&mut rng, &mut salt);
        rand::RngCore::fill_bytes(&mut rng, &mut iv);
        let (enc, mac_key) = derive(passphrase, &salt, iterations);

        let mut secret = Vec::with_capacity(64);
        secret.extend_from_slice(bundle.signing.seed());
        secret.extend_from_slice(bundle.agreement.secret());
        let ct = aes_encrypt_with_iv(&SymmetricKey::from_bytes(enc), iv, &secret);
        let tag = mac_over(&mac_key, &ct.iv, &ct.body, &bundle.signing_public())
            .finalize()
            .into_bytes();

        KeyFile {
            version: 1,
            generation: bundle.generation,
            signing_public: bundle.signing_public(),
            agreement_public: bundle.agreement_public(),
            kdf: "pbkdf2-hmac-sha256".into(),
            iterations,
            salt: hex::encode(salt),
            iv: hex::encode(ct.iv),
            body: hex::encode(&ct.body),
            mac: hex::encode(tag),
        }
    }

    pub fn open(&self, passphrase: &str) -> Result<KeyBundle, CryptoError> {
        let dec = |s: &str| hex::decode(s).map_err(|_| CryptoError::Encoding("key file hex"));
        let salt = dec(&self.salt)?;
        let iv: [u8; 16] = dec(&self.iv)?
            .try_into()
            .map_err(|_| CryptoError::Encoding("key file iv"))?;
        let body = dec(&self.body)?;
        let tag = dec(&self.mac)?;
        let (enc, mac_key) = derive(passphrase, &salt, self.iterations);
        mac_over(&mac_key, &iv, &body, &self.signing_public)
            .verify_slice(&tag)
            .map_err(|_| CryptoError::WrongPassphrase)?;

        let secret = aes_decrypt(&SymmetricKey::from_bytes(enc), &Ciphertext { iv, body })?;
        if secret.len() != 64 {
            return Err(CryptoError::Encoding("key file secret length"));
        }
        let mut seed = [0u8; 32];
        let mut agreement = [0u8; 32];
        seed.copy_from_slice(&secret[..32]);
        agreement.copy_from_slice(&secret[32..]);
        let bundle = KeyBundle::from_parts(seed, agreement, self.generation);
        if bundle.signing_public() != self.signing_public
            || bundle.agreement_public() != self.agreement_public
        {
            return Err(CryptoError::Encoding(
                "key file public keys do not match secrets",
            ));
        }
        Ok(bundle)
    }
}

/// Storage hook for account keys. The file-backed default keeps every
/// secret encrypted under the account passphrase.
pub trait KeyStore: Send + Sync {
    fn store(&self, id: &str, bundle: &KeyBundle, passphrase: &str) -> Result<(), CryptoError>;
    fn load(&self, id: &str, passphrase: &str) -> Result<KeyBundle, CryptoError>;
    fn exists(&self, id: &str) -> bool;
}

pub struct FileKeyStore {
    dir: PathBuf,
    iterations: u32,
}

impl FileKeyStore {
    pub fn new(dir: impl Into<PathBuf>, iterations: u32) -> Result<Self, CryptoError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, iterations })
    }

    fn path(&self, id: &str) -> PathBuf {
        // ids are hex public keys or emails; hashing keeps file names safe.
        self.dir.join(format!(
            "{}.key.json",
            super::hash::hash_digest(id.as_bytes()).to_hex()
        ))
    }
}

pub fn write_key_file(path: &Path, file: &KeyFile) -> Result<(), CryptoError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(
            serde_json::to_string_pretty(file)
                .expect("key file serializes")
                .as_bytes(),
        )?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_key_file(path: &Path) -> Result<KeyFile, CryptoError> {
    let raw = fs::read(path)?;
    serde_json::from_slice(&raw).map_err(|_| CryptoError::Encoding("key file json"))
}

impl KeyStore for FileKeyStore {
    fn store(&self, id: &str, bundle: &KeyBundle, passphrase: &str) -> Result<(), CryptoError> {
        write_key_file(
            &self.path(id),
            &KeyFile::seal(bundle, passphrase, self.iterations),
        )
    }

    fn load(&self, id: &str, passphrase: &str) -> Result<KeyBundle, CryptoError> {
        let path = self.path(id);
        if !path.exists() {
            return Err(CryptoError::KeyNotFound(id.to_string()));
        }
        read_key_file(&path)?.open(passphrase)
    }

    fn exists(&self, id: &str) -> bool {
        self.path(id).exists()
    }
}

/// Key files held in memory, still sealed under their passphrases.
#[derive(Default)]
pub struct MemoryKeyStore {
    iterations: u32,
    files: std::sync::RwLock<std::collections::HashMap<String, KeyFile>>,
}

impl MemoryKeyStore {
    pub fn new(iterations: u32) -> Self {
        Self {
            iterations,
            files: Default::default(),
        }
    }

    pub fn key_file(&self, id: &str) -> Option<KeyFile> {
        self.files.read().expect("key store lock").get(id).cloned()
    }
}

impl KeyStore for MemoryKeyStore {
    fn store(&self, id: &str, bundle: &KeyBundle, passphrase: &str) -> Result<(), CryptoError> {
        let file = KeyFile::seal(bundle, passphrase, self.iterations);
        self.files
            .write()
            .expect("key store lock")
            .insert(id.to_string(), file);
        Ok(())
    }

    fn load(&self, id: &str, passphrase: &str) -> Result<KeyBundle, CryptoError> {
        self.key_file(id)
            .ok_or_else(|| CryptoError::KeyNotFound(id.to_string()))?
            .open(passphrase)
    }

    fn exists(&self, id: &str) -> bool {
        self.files.read().expect("key store lock").contains_key(id)
    }
}
