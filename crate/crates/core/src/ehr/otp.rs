use std::collections::HashMap;
use std::sync::Mutex;

use super::EhrError;

/// Wrong codes accepted before a pending registration locks.
pub const OTP_MAX_ATTEMPTS: u32 = 3;

/// Delivers one-time codes. Production deployments plug in a mail client.
pub trait OtpSender: Send + Sync {
    fn send(&self, email: &str, code: &str) -> Result<(), EhrError>;
}

/// Writes the code to the log instead of mailing it.
pub struct LogOtpSender;

impl OtpSender for LogOtpSender {
    fn send(&self, email: &str, code: &str) -> Result<(), EhrError> {
        log::info!("verification code for {email}: {code}");
        Ok(())
    }
}

/// Remembers the last code per address, for tests and scripted runs.
#[derive(Default)]
pub struct MemoryOtpSender {
    codes: Mutex<HashMap<String, String>>,
}

impl MemoryOtpSender {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_code(&self, email: &str) -> Option<String> {
        self.codes
            .lock()
            .expect("otp lock")
            .get(&email.trim().to_lowercase())
            .cloned()
    }
}

impl OtpSender for MemoryOtpSender {
    fn send(&self, email: &str, code: &str) -> Result<(), EhrError> {
        self.codes
            .lock()
            .expect("otp lock")
            .insert(email.to_string(), code.to_string());
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct OtpState {
    pub code: String,
    pub failures: u32,
}

impl OtpState {
    pub fn new(code: String) -> Self {
        Self { code, failures: 0 }
    }

    pub fn locked(&self) -> bool {
        self.failures >= OTP_MAX_ATTEMPTS
    }

    /// Constant-time comparison; counts a failure on mismatch.
    pub fn check(&mut self, code: &str) -> Result<(), EhrError> {
        use subtle::ConstantTimeEq;
        if self.locked() {
            return Err(EhrError::OtpLocked);
        }
        let code = code.trim();
        let ok = code.len() == self.code.len()
            && bool::from(code.as_bytes().ct_eq(self.code.as_bytes()));
        if ok {
            return Ok(());
        }
        self.failures += 1;
        if self.locked() {
            Err(EhrError::OtpLocked)
        } else {
            Err(EhrError::WrongOtp {
                remaining: OTP_MAX_ATTEMPTS - self.failures,
            })
        }
    }
}
