use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use ehrchain_core::ehr::Actor;
use rand::RngCore;

use crate::error::ApiError;

struct Session {
    actor: Arc<Actor>,
    expires: Instant,
}

/// Bearer-token sessions. Unlocked keys live here and nowhere else; a
/// restart drops every session.
pub struct Sessions {
    ttl: Duration,
    map: Mutex<HashMap<String, Session>>,
}

impl Sessions {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// Opens a session and returns its 128-bit token, hex encoded.
    pub fn open(&self, actor: Actor) -> String {
        let mut raw = [0u8; 16];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let mut map = self.map.lock().expect("sessions lock");
        let now = Instant::now();
        map.retain(|_, s| s.expires > now);
        map.insert(
            token.clone(),
            Session {
                actor: Arc::new(actor),
                expires: now + self.ttl,
            },
        );
        token
    }

    pub fn get(&self, token: &str) -> Result<Arc<Actor>, ApiError> {
        let mut map = self.map.lock().expect("sessions lock");
        match map.get(token) {
            None => Err(ApiError::unauthenticated("unknown or closed session")),
            Some(s) if s.expires <= Instant::now() => {
                map.remove(token);
                Err(ApiError::new(
                    axum::http::StatusCode::UNAUTHORIZED,
                    "session_expired",
                    "session expired; log in again",
                ))
            }
            Some(s) => Ok(s.actor.clone()),
        }
    }

    pub fn close(&self, token: &str) -> bool {
        self.map
            .lock()
            .expect("sessions lock")
            .remove(token)
            .is_some()
    }
}
