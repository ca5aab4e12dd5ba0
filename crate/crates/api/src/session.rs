//! Anonymous web sessions: an opaque token kept in a cookie (or sent as a header).

use axum::http::header::{COOKIE, SET_COOKIE};
use axum::http::{HeaderMap, HeaderName, HeaderValue};

pub const COOKIE_NAME: &str = "ideaforge_token";
pub const TOKEN_HEADER: HeaderName = HeaderName::from_static("x-voter-token");

/// The caller's session token, and whether it was issued by this request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub token: String,
    pub issued: bool,
}

fn plausible(token: &str) -> bool {
    (16..=128).contains(&token.len()) && token.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn from_cookie(headers: &HeaderMap) -> Option<String> {
    headers
        .get_all(COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(name, _)| *name == COOKIE_NAME)
        .map(|(_, value)| value.to_string())
}

impl Session {
    /// Reads the token from `X-Voter-Token` or the session cookie, issuing a fresh one if neither is usable.
    pub fn from_headers(headers: &HeaderMap) -> Self {
        let presented = headers.get(&TOKEN_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string).or_else(|| from_cookie(headers));
        match presented.filter(|t| plausible(t)) {
            Some(token) => Session { token, issued: false },
            None => Session { token: ideaforge_core::campaign::random_token(&mut rand::rng()), issued: true },
        }
    }

    /// Headers that hand a newly issued token to the client.
    pub fn response_headers(&self) -> HeaderMap {
        let mut h = HeaderMap::new();
        if self.issued {
            let cookie = format!("{COOKIE_NAME}={}; Path=/; HttpOnly; SameSite=Lax; Max-Age=31536000", self.token);
            h.insert(SET_COOKIE, HeaderValue::from_str(&cookie).expect("token is header-safe"));
            h.insert(TOKEN_HEADER, HeaderValue::from_str(&self.token).expect("token is header-safe"));
        }
        h
    }
}
