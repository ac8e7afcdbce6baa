//! Identifier and secret generation, and the clock abstraction.

use std::sync::Mutex;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Duration, SubsecRound, Utc};
use rand::rngs::OsRng;
use rand::{Rng, TryRngCore};
use sha2::{Digest, Sha256};

const RECORD_ID_ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
pub const RECORD_ID_LEN: usize = 10;

/// Share-link tokens carry 192 bits of OS randomness.
pub const LINK_TOKEN_BYTES: usize = 24;
pub const API_SECRET_BYTES: usize = 32;
pub const SALT_BYTES: usize = 32;

pub fn random_bytes<const N: usize>() -> [u8; N] {
    let mut buf = [0u8; N];
    OsRng.try_fill_bytes(&mut buf).expect("operating system RNG unavailable");
    buf
}

pub fn new_record_id() -> String {
    let mut rng = OsRng.unwrap_err();
    (0..RECORD_ID_LEN)
        .map(|_| char::from(RECORD_ID_ALPHABET[rng.random_range(0..RECORD_ID_ALPHABET.len())]))
        .collect()
}

pub fn new_link_token() -> String {
    URL_SAFE_NO_PAD.encode(random_bytes::<LINK_TOKEN_BYTES>())
}

pub fn new_api_secret() -> String {
    URL_SAFE_NO_PAD.encode(random_bytes::<API_SECRET_BYTES>())
}

pub fn new_token_id() -> String {
    hex::encode(random_bytes::<6>())
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub fn is_url_safe(s: &str) -> bool {
    s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now().trunc_subsecs(6)
    }
}

/// A settable clock for tests and simulations.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start.trunc_subsecs(6)))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.0.lock().unwrap() = t.trunc_subsecs(6);
    }

    pub fn advance(&self, d: Duration) {
        let mut t = self.0.lock().unwrap();
        *t += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}
