use std::collections::HashMap;
use std::sync::Mutex;

use super::hash::{hash_parts, Digest};
use super::signing::{verify, PublicKey, Signature};

const MAX_ENTRIES: usize = 1 << 18;

/// Memoizes signature checks. Verification is a pure function of
/// (key, message, signature), so simulated nodes in one process can share
/// a single cache.
#[derive(Default)]
pub struct VerifyCache {
    seen: Mutex<HashMap<Digest, bool>>,
}

impl VerifyCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn verify(&self, public: &PublicKey, message: &[u8], sig: &Signature) -> bool {
        let key = hash_parts(&[&public.0, &sig.r, &sig.s, message]);
        if let Some(&ok) = self.seen.lock().expect("cache lock").get(&key) {
            return ok;
        }
        let ok = verify(public, message, sig);
        let mut seen = self.seen.lock().expect("cache lock");
        if seen.len() >= MAX_ENTRIES {
            seen.clear();
        }
        seen.insert(key, ok);
        ok
    }

    pub fn len(&self) -> usize {
        self.seen.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Debug for VerifyCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VerifyCache({} entries)", self.len())
    }
}
