//! The change notification a sensor sends to the robot: a GET request
//! whose query string carries the changed URL and its new fingerprint.
//!
//! ```text
//! <endpoint>?url=<pct-encoded>&digest=<32 hex>&status=<int>&size=<int>&seq=<int>
//! ```
//!
//! Only unreserved URI characters (`A-Z a-z 0-9 - . _ ~`) are left literal;
//! every other byte is written as `%HH` with uppercase hex.

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;

use crate::fingerprint::Digest;

pub const NOTIFY_PATH: &str = "/sensor-notify";

const PARAMS: [&str; 5] = ["url", "digest", "status", "size", "seq"];

const UNRESERVED: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub url: String,
    pub digest: Digest,
    pub status: u16,
    pub size: u64,
    /// Increases with every notification a sensor sends.
    pub seq: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("missing parameter `{0}`")]
    Missing(&'static str),
    #[error("duplicate parameter `{0}`")]
    Duplicate(&'static str),
    #[error("invalid parameter `{param}`: {reason}")]
    Invalid { param: &'static str, reason: String },
}

impl WireError {
    /// The parameter the error is about.
    pub fn param(&self) -> &'static str {
        match self {
            WireError::Missing(p) | WireError::Duplicate(p) => p,
            WireError::Invalid { param, .. } => param,
        }
    }
}

pub fn percent_encode(s: &str) -> String {
    utf8_percent_encode(s, UNRESERVED).to_string()
}

/// Builds the request target for `n` under `endpoint_path`.
pub fn encode_notification(n: &Notification, endpoint_path: &str) -> String {
    format!(
        "{endpoint_path}?url={}&digest={}&status={}&size={}&seq={}",
        percent_encode(&n.url),
        n.digest,
        n.status,
        n.size,
        n.seq
    )
}

/// Parses the query string of a notification request (without the `?`).
/// Parameters outside the five known names are ignored.
pub fn decode_notification(query: &str) -> Result<Notification, WireError> {
    let mut values: [Option<String>; 5] = Default::default();
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (raw_key, raw_value) = pair.split_once('=').unwrap_or((pair, ""));
        let key = percent_decode_str(raw_key).decode_utf8_lossy();
        let Some(slot) = PARAMS.iter().position(|p| *p == key) else {
            continue;
        };
        let param = PARAMS[slot];
        if values[slot].is_some() {
            return Err(WireError::Duplicate(param));
        }
        let value = percent_decode_str(raw_value)
            .decode_utf8()
            .map_err(|_| WireError::Invalid {
                param,
                reason: "not valid UTF-8 after percent-decoding".into(),
            })?;
        values[slot] = Some(value.into_owned());
    }

    let mut take = |i: usize| values[i].take().ok_or(WireError::Missing(PARAMS[i]));
    let url = take(0)?;
    let digest = take(1)?;
    let status = take(2)?;
    let size = take(3)?;
    let seq = take(4)?;

    let invalid = |param: &'static str, reason: &str| WireError::Invalid {
        param,
        reason: reason.to_owned(),
    };
    let integer = |param: &'static str, v: &str| -> Result<u64, WireError> {
        if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid(param, "expected a non-negative integer"));
        }
        v.parse().map_err(|_| invalid(param, "integer out of range"))
    };

    let digest: Digest = digest
        .parse()
        .map_err(|_| invalid("digest", "expected 32 lowercase hex characters"))?;
    let status = u16::try_from(integer("status", &status)?)
        .map_err(|_| invalid("status", "integer out of range"))?;
    Ok(Notification {
        url,
        digest,
        status,
        size: integer("size", &size)?,
        seq: integer("seq", &seq)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Notification {
        Notification {
            url: "/a b".into(),
            digest: Digest::of(b""),
            status: 200,
            size: 0,
            seq: 1,
        }
    }

    #[test]
    fn encode_example() {
        assert_eq!(
            encode_notification(&example(), NOTIFY_PATH),
            "/sensor-notify?url=%2Fa%20b&digest=d41d8cd98f00b204e9800998ecf8427e&status=200&size=0&seq=1"
        );
    }

    #[test]
    fn unreserved_stay_literal() {
        assert_eq!(percent_encode("AZaz09-._~"), "AZaz09-._~");
        assert_eq!(percent_encode("http://h:8/p?q=1&r"), "http%3A%2F%2Fh%3A8%2Fp%3Fq%3D1%26r");
        assert_eq!(percent_encode("ü+"), "%C3%BC%2B");
    }

    #[test]
    fn decode_example_round_trips() {
        let target = encode_notification(&example(), NOTIFY_PATH);
        let (_, query) = target.split_once('?').unwrap();
        assert_eq!(decode_notification(query).unwrap(), example());
    }

    #[test]
    fn parameter_order_is_fixed() {
        let target = encode_notification(&example(), "/x");
        let (_, query) = target.split_once('?').unwrap();
        let keys: Vec<&str> = query.split('&').map(|p| p.split('=').next().unwrap()).collect();
        assert_eq!(keys, PARAMS);
    }

    #[test]
    fn missing_digest_is_named() {
        let err = decode_notification("url=%2F&status=200&size=0&seq=1").unwrap_err();
        assert_eq!(err, WireError::Missing("digest"));
        assert!(err.to_string().contains("digest"));
    }

    #[test]
    fn duplicates_are_rejected() {
        let q = "url=a&url=b&digest=d41d8cd98f00b204e9800998ecf8427e&status=200&size=0&seq=1";
        assert_eq!(decode_notification(q).unwrap_err(), WireError::Duplicate("url"));
    }

    #[test]
    fn bad_values_are_named() {
        let base = |status: &str, size: &str, seq: &str, digest: &str| {
            format!("url=a&digest={digest}&status={status}&size={size}&seq={seq}")
        };
        let good = "d41d8cd98f00b204e9800998ecf8427e";
        let cases = [
            (base("2x0", "0", "1", good), "status"),
            (base("70000", "0", "1", good), "status"),
            (base("200", "-1", "1", good), "size"),
            (base("200", "0", "", good), "seq"),
            (base("200", "0", "1.5", good), "seq"),
            (base("200", "0", "1", "D41D8CD98F00B204E9800998ECF8427E"), "digest"),
            (base("200", "0", "1", "abc"), "digest"),
        ];
        for (query, param) in cases {
            assert_eq!(decode_notification(&query).unwrap_err().param(), param, "{query}");
        }
    }

    #[test]
    fn unknown_parameters_are_ignored() {
        let target = encode_notification(&example(), NOTIFY_PATH);
        let (_, query) = target.split_once('?').unwrap();
        let extended = format!("{query}&via=proxy");
        assert_eq!(decode_notification(&extended).unwrap(), example());
    }

    #[test]
    fn plus_is_not_a_space() {
        let q = "url=a+b&digest=d41d8cd98f00b204e9800998ecf8427e&status=200&size=0&seq=1";
        assert_eq!(decode_notification(q).unwrap().url, "a+b");
    }
}
