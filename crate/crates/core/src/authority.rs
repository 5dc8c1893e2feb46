//! Optional authorization: one-time TP codes issued at point of care.
//!
//! A token is an ed25519 signature over `(device_anonym, nonce, expiry)`.
//! The gateway verifies it, spends the nonce and strips the token before
//! pairs are buffered.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{Anonym, TimeBucket};

const DOMAIN: &[u8] = b"cluster-notify/tp-token/v1";

/// Length of the fixed-order binary token record.
pub const TOKEN_LEN: usize = 16 + 16 + 8 + 64;

#[derive(Clone, PartialEq, Eq)]
pub struct AuthToken {
    pub device_anonym: Anonym,
    pub nonce: [u8; 16],
    pub expiry_bucket: TimeBucket,
    pub signature: [u8; 64],
}

impl fmt::Debug for AuthToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthToken")
            .field("device_anonym", &self.device_anonym)
            .field("nonce", &hex::encode(self.nonce))
            .field("expiry_bucket", &self.expiry_bucket)
            .finish_non_exhaustive()
    }
}

impl AuthToken {
    fn signed_message(device_anonym: &Anonym, nonce: &[u8; 16], expiry: TimeBucket) -> Vec<u8> {
        let mut msg = Vec::with_capacity(DOMAIN.len() + 40);
        msg.extend_from_slice(DOMAIN);
        msg.extend_from_slice(device_anonym.as_bytes());
        msg.extend_from_slice(nonce);
        msg.extend_from_slice(&expiry.0.to_be_bytes());
        msg
    }

    /// `device_anonym ‖ nonce ‖ expiry (u64 BE) ‖ signature`.
    pub fn to_bytes(&self) -> [u8; TOKEN_LEN] {
        let mut out = [0u8; TOKEN_LEN];
        out[..16].copy_from_slice(self.device_anonym.as_bytes());
        out[16..32].copy_from_slice(&self.nonce);
        out[32..40].copy_from_slice(&self.expiry_bucket.0.to_be_bytes());
        out[40..].copy_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != TOKEN_LEN {
            return Err(Error::Parse(format!("token must be {TOKEN_LEN} bytes, got {}", bytes.len())));
        }
        let mut anonym = [0u8; 16];
        let mut nonce = [0u8; 16];
        let mut expiry = [0u8; 8];
        let mut signature = [0u8; 64];
        anonym.copy_from_slice(&bytes[..16]);
        nonce.copy_from_slice(&bytes[16..32]);
        expiry.copy_from_slice(&bytes[32..40]);
        signature.copy_from_slice(&bytes[40..]);
        Ok(Self { device_anonym: Anonym(anonym), nonce, expiry_bucket: TimeBucket(u64::from_be_bytes(expiry)), signature })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        Self::from_bytes(&hex::decode(s).map_err(|e| Error::Parse(format!("token hex: {e}")))?)
    }
}

/// Authority public key as distributed to the gateway; hex in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthorityKey(pub VerifyingKey);

impl fmt::Display for AuthorityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0.as_bytes()))
    }
}

impl FromStr for AuthorityKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes).map_err(|e| Error::Parse(format!("authority key: {e}")))?;
        VerifyingKey::from_bytes(&bytes).map(AuthorityKey).map_err(|e| Error::Parse(format!("authority key: {e}")))
    }
}

/// The point-of-care signer.
#[derive(Clone)]
pub struct TestAuthority {
    signing_key: SigningKey,
    pub validity_buckets: u64,
}

impl fmt::Debug for TestAuthority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestAuthority({})", self.public_key())
    }
}

impl TestAuthority {
    pub fn from_seed(seed: [u8; 32], validity_buckets: u64) -> Self {
        Self { signing_key: SigningKey::from_bytes(&seed), validity_buckets }
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R, validity_buckets: u64) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed, validity_buckets)
    }

    pub fn public_key(&self) -> AuthorityKey {
        AuthorityKey(self.signing_key.verifying_key())
    }

    pub fn issue_token<R: RngCore + ?Sized>(&self, device_anonym: Anonym, now_bucket: TimeBucket, rng: &mut R) -> AuthToken {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        let expiry_bucket = TimeBucket(now_bucket.0.saturating_add(self.validity_buckets));
        let signature = self.signing_key.sign(&AuthToken::signed_message(&device_anonym, &nonce, expiry_bucket)).to_bytes();
        AuthToken { device_anonym, nonce, expiry_bucket, signature }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AuthReject {
    #[error("bad signature")]
    BadSignature,
    #[error("token expired")]
    Expired,
    #[error("token already spent")]
    Replayed,
}

impl AuthReject {
    pub fn code(&self) -> &'static str {
        match self {
            AuthReject::BadSignature => "bad-signature",
            AuthReject::Expired => "expired",
            AuthReject::Replayed => "replayed",
        }
    }
}

/// Spent nonces. Grows monotonically.
#[derive(Debug, Clone, Default)]
pub struct NonceLedger {
    spent: HashSet<[u8; 16]>,
}

impl NonceLedger {
    pub fn is_spent(&self, nonce: &[u8; 16]) -> bool {
        self.spent.contains(nonce)
    }

    pub fn len(&self) -> usize {
        self.spent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spent.is_empty()
    }
}

/// Signature and expiry only; does not touch the ledger.
pub fn check_token(token: &AuthToken, now_bucket: TimeBucket, key: &AuthorityKey) -> Result<(), AuthReject> {
    let msg = AuthToken::signed_message(&token.device_anonym, &token.nonce, token.expiry_bucket);
    key.0.verify(&msg, &Signature::from_bytes(&token.signature)).map_err(|_| AuthReject::BadSignature)?;
    if now_bucket > token.expiry_bucket {
        return Err(AuthReject::Expired);
    }
    Ok(())
}

/// Accepts iff the signature is valid, `now_bucket <= expiry` and the nonce
/// is unspent; on acceptance the nonce is spent.
pub fn verify_token(
    token: &AuthToken,
    now_bucket: TimeBucket,
    ledger: &mut NonceLedger,
    key: &AuthorityKey,
) -> Result<(), AuthReject> {
    check_token(token, now_bucket, key)?;
    if !ledger.spent.insert(token.nonce) {
        return Err(AuthReject::Replayed);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (TestAuthority, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (TestAuthority::generate(&mut rng, 10), rng)
    }

    #[test]
    fn round_trip_then_replay() {
        let (auth, mut rng) = setup();
        let token = auth.issue_token(Anonym::generate(&mut rng), TimeBucket(100), &mut rng);
        let mut ledger = NonceLedger::default();
        assert_eq!(verify_token(&token, TimeBucket(100), &mut ledger, &auth.public_key()), Ok(()));
        assert!(ledger.is_spent(&token.nonce));
        assert_eq!(verify_token(&token, TimeBucket(100), &mut ledger, &auth.public_key()), Err(AuthReject::Replayed));
    }

    #[test]
    fn fresh_nonces_per_issue() {
        let (auth, mut rng) = setup();
        let device = Anonym::generate(&mut rng);
        let a = auth.issue_token(device, TimeBucket(0), &mut rng);
        let b = auth.issue_token(device, TimeBucket(0), &mut rng);
        assert_ne!(a.nonce, b.nonce);
    }

    #[test]
    fn expiry_is_inclusive() {
        let (auth, mut rng) = setup();
        let token = auth.issue_token(Anonym::generate(&mut rng), TimeBucket(100), &mut rng);
        let key = auth.public_key();
        assert_eq!(check_token(&token, TimeBucket(110), &key), Ok(()));
        let mut ledger = NonceLedger::default();
        assert_eq!(verify_token(&token, TimeBucket(111), &mut ledger, &key), Err(AuthReject::Expired));
        assert!(ledger.is_empty(), "rejected tokens do not spend their nonce");
    }

    #[test]
    fn every_flipped_byte_is_rejected() {
        let (auth, mut rng) = setup();
        let token = auth.issue_token(Anonym::generate(&mut rng), TimeBucket(3), &mut rng);
        let key = auth.public_key();
        let bytes = token.to_bytes();
        for i in 0..TOKEN_LEN {
            let mut m = bytes;
            m[i] ^= 1 << rng.random_range(0..8);
            let forged = AuthToken::from_bytes(&m).unwrap();
            let mut ledger = NonceLedger::default();
            assert_eq!(verify_token(&forged, TimeBucket(3), &mut ledger, &key), Err(AuthReject::BadSignature), "byte {i}");
        }
    }

    #[test]
    fn other_authority_cannot_forge() {
        let (auth, mut rng) = setup();
        let rogue = TestAuthority::generate(&mut rng, 10);
        let token = rogue.issue_token(Anonym::generate(&mut rng), TimeBucket(0), &mut rng);
        assert_eq!(check_token(&token, TimeBucket(0), &auth.public_key()), Err(AuthReject::BadSignature));
    }

    #[test]
    fn encodings_round_trip() {
        let (auth, mut rng) = setup();
        let token = auth.issue_token(Anonym::generate(&mut rng), TimeBucket(9), &mut rng);
        assert_eq!(AuthToken::from_hex(&token.to_hex()).unwrap(), token);
        assert!(AuthToken::from_bytes(&[0u8; 10]).is_err());
        let key = auth.public_key();
        assert_eq!(key.to_string().parse::<AuthorityKey>().unwrap(), key);
    }

    #[test]
    fn randomized_replays_accept_at_most_once() {
        let (auth, mut rng) = setup();
        let key = auth.public_key();
        let tokens: Vec<_> = (0..20).map(|_| auth.issue_token(Anonym::generate(&mut rng), TimeBucket(0), &mut rng)).collect();
        let mut ledger = NonceLedger::default();
        let mut accepted = vec![0u32; tokens.len()];
        for _ in 0..500 {
            let i = rng.random_range(0..tokens.len());
            if verify_token(&tokens[i], TimeBucket(0), &mut ledger, &key).is_ok() {
                accepted[i] += 1;
            }
        }
        assert!(accepted.iter().all(|&n| n <= 1));
    }
}
