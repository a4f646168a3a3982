//! Local credential table and bearer sessions.
//!
//! Passwords are stored as an iterated, salted SHA-256 digest. Session tokens
//! are 128 random bits, hex encoded, and carry no information about the user.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use margin_core::clock::Clock;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const HASH_ROUNDS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub username: String,
    /// Opaque id used everywhere else, including telemetry.
    pub user_id: String,
    pub salt: String,
    pub password_hash: String,
    #[serde(default)]
    pub admin: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identity {
    pub user_id: String,
    pub admin: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub user_id: String,
    /// Random id grouping this session's telemetry; unrelated to `token`.
    pub session_id: String,
    pub issued_at: i64,
    pub expires_at: i64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("invalid credentials")]
    BadCredentials,
    #[error("missing bearer token")]
    Missing,
    #[error("unknown session token")]
    Unknown,
    #[error("session token expired")]
    Expired,
}

fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::thread_rng().fill_bytes(&mut buf);
    hex::encode(buf)
}

pub fn hash_password(password: &str, salt: &str) -> String {
    let mut digest = Sha256::new().chain_update(salt.as_bytes()).chain_update(password.as_bytes()).finalize();
    for _ in 1..HASH_ROUNDS {
        digest = Sha256::new().chain_update(salt.as_bytes()).chain_update(digest).finalize();
    }
    hex::encode(digest)
}

/// Compares without an early exit on the first differing byte.
fn same(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl UserRecord {
    /// A fresh user with a random salt and a random opaque id.
    pub fn create(username: &str, password: &str, admin: bool) -> Self {
        let salt = random_hex(16);
        Self {
            username: username.into(),
            user_id: format!("usr_{}", random_hex(8)),
            password_hash: hash_password(password, &salt),
            salt,
            admin,
        }
    }

    pub fn verify(&self, password: &str) -> bool {
        same(&hash_password(password, &self.salt), &self.password_hash)
    }
}

/// Pluggable credential check.
pub trait Authenticator: Send + Sync {
    fn authenticate(&self, username: &str, password: &str) -> Option<Identity>;
}

#[derive(Debug, Default, Clone)]
pub struct LocalUsers {
    users: HashMap<String, UserRecord>,
}

impl LocalUsers {
    pub fn new(users: impl IntoIterator<Item = UserRecord>) -> Self {
        Self { users: users.into_iter().map(|u| (u.username.clone(), u)).collect() }
    }
}

impl Authenticator for LocalUsers {
    fn authenticate(&self, username: &str, password: &str) -> Option<Identity> {
        let u = self.users.get(username)?;
        u.verify(password).then(|| Identity { user_id: u.user_id.clone(), admin: u.admin })
    }
}

/// The caller behind a valid token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user_id: String,
    pub admin: bool,
    pub session_id: String,
}

struct Live {
    token: SessionToken,
    admin: bool,
}

pub struct Sessions {
    ttl: i64,
    clock: Arc<dyn Clock>,
    live: Mutex<HashMap<String, Live>>,
}

impl Sessions {
    pub fn new(ttl: i64, clock: Arc<dyn Clock>) -> Self {
        Self { ttl, clock, live: Mutex::new(HashMap::new()) }
    }

    pub fn issue(&self, who: &Identity) -> SessionToken {
        let now = self.clock.now();
        let token = SessionToken {
            token: random_hex(16),
            user_id: who.user_id.clone(),
            session_id: format!("ses_{}", random_hex(8)),
            issued_at: now,
            expires_at: now + self.ttl,
        };
        let mut live = self.live.lock().unwrap_or_else(|e| e.into_inner());
        live.retain(|_, s| s.token.expires_at > now);
        live.insert(token.token.clone(), Live { token: token.clone(), admin: who.admin });
        token
    }

    /// The session behind `token`; valid while `now < expires_at`.
    pub fn check(&self, token: &str) -> Result<Session, AuthError> {
        let now = self.clock.now();
        let mut live = self.live.lock().unwrap_or_else(|e| e.into_inner());
        let s = live.get(token).ok_or(AuthError::Unknown)?;
        if now >= s.token.expires_at {
            live.remove(token);
            return Err(AuthError::Expired);
        }
        Ok(Session { user_id: s.token.user_id.clone(), admin: s.admin, session_id: s.token.session_id.clone() })
    }
}
