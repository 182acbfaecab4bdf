//! Request signatures for endpoints that act on the caller's identity.
//!
//! The caller signs `"{METHOD}\n{path}\n{sha256 hex of body}\n{timestamp}"`
//! and sends the key, timestamp and signature in headers.

use rmsd_core::crypto::{sha256, Keypair, PublicKey, Signature};

pub const KEY_HEADER: &str = "x-rmsd-key";
pub const TIMESTAMP_HEADER: &str = "x-rmsd-timestamp";
pub const SIGNATURE_HEADER: &str = "x-rmsd-signature";

/// Allowed distance between the caller's timestamp and the node clock.
pub const MAX_SKEW_MS: u64 = 60_000;

pub fn signing_message(method: &str, path: &str, body: &[u8], timestamp_ms: u64) -> Vec<u8> {
    format!("{}\n{}\n{}\n{}", method.to_ascii_uppercase(), path, sha256(body).to_hex(), timestamp_ms).into_bytes()
}

/// Header name and value pairs for a signed request.
pub fn sign_request(
    key: &Keypair,
    method: &str,
    path: &str,
    body: &[u8],
    timestamp_ms: u64,
) -> [(&'static str, String); 3] {
    let sig = key.sign(&signing_message(method, path, body, timestamp_ms));
    [
        (KEY_HEADER, key.public().to_hex()),
        (TIMESTAMP_HEADER, timestamp_ms.to_string()),
        (SIGNATURE_HEADER, sig.to_hex()),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthFailure {
    Missing,
    Malformed,
    Skew,
    BadSignature,
}

impl std::fmt::Display for AuthFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AuthFailure::Missing => "missing authentication headers",
            AuthFailure::Malformed => "malformed authentication headers",
            AuthFailure::Skew => "request timestamp outside the allowed clock skew",
            AuthFailure::BadSignature => "request signature does not verify",
        })
    }
}

/// Checks the three header values and returns the authenticated key.
pub fn verify_request(
    key: Option<&str>,
    timestamp: Option<&str>,
    signature: Option<&str>,
    method: &str,
    path: &str,
    body: &[u8],
    now_ms: u64,
) -> Result<PublicKey, AuthFailure> {
    let (Some(key), Some(ts), Some(sig)) = (key, timestamp, signature) else {
        return Err(AuthFailure::Missing);
    };
    let key = PublicKey::from_hex(key).map_err(|_| AuthFailure::Malformed)?;
    let ts: u64 = ts.parse().map_err(|_| AuthFailure::Malformed)?;
    let sig = Signature::from_hex(sig).map_err(|_| AuthFailure::Malformed)?;
    if ts.abs_diff(now_ms) > MAX_SKEW_MS {
        return Err(AuthFailure::Skew);
    }
    if !key.verify(&signing_message(method, path, body, ts), &sig) {
        return Err(AuthFailure::BadSignature);
    }
    Ok(key)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(
        h: &[(&str, String); 3],
        method: &str,
        path: &str,
        body: &[u8],
        now: u64,
    ) -> Result<PublicKey, AuthFailure> {
        verify_request(Some(&h[0].1), Some(&h[1].1), Some(&h[2].1), method, path, body, now)
    }

    #[test]
    fn signed_request_verifies() {
        let key = Keypair::from_seed([3; 32]);
        let h = sign_request(&key, "post", "/v1/admin/peers", b"{}", 1_000_000);
        assert_eq!(check(&h, "POST", "/v1/admin/peers", b"{}", 1_000_000), Ok(key.public()));
    }

    #[test]
    fn any_changed_input_fails() {
        let key = Keypair::from_seed([3; 32]);
        let now = 1_000_000;
        let h = sign_request(&key, "GET", "/v1/status/need/0", b"", now);
        assert_eq!(check(&h, "GET", "/v1/status/need/1", b"", now), Err(AuthFailure::BadSignature));
        assert_eq!(check(&h, "DELETE", "/v1/status/need/0", b"", now), Err(AuthFailure::BadSignature));
        assert_eq!(check(&h, "GET", "/v1/status/need/0", b"x", now), Err(AuthFailure::BadSignature));
    }

    #[test]
    fn skew_window_is_sixty_seconds_each_way() {
        let key = Keypair::from_seed([3; 32]);
        let t = 10_000_000;
        let h = sign_request(&key, "GET", "/", b"", t);
        assert!(check(&h, "GET", "/", b"", t + MAX_SKEW_MS).is_ok());
        assert!(check(&h, "GET", "/", b"", t - MAX_SKEW_MS).is_ok());
        assert_eq!(check(&h, "GET", "/", b"", t + MAX_SKEW_MS + 1), Err(AuthFailure::Skew));
        assert_eq!(check(&h, "GET", "/", b"", t - MAX_SKEW_MS - 1), Err(AuthFailure::Skew));
    }

    #[test]
    fn missing_header_is_reported() {
        assert_eq!(verify_request(None, Some("1"), Some("00"), "GET", "/", b"", 1), Err(AuthFailure::Missing));
    }
}
