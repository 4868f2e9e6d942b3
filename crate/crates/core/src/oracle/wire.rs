//! Line-delimited JSON framing shared by the process and HTTP backends.
//!
//! Request: `{"id": <int>, "png_b64": <string>}`. Response:
//! `{"id": <int>, "label": <int>}`. UTF-8, one object per LF-terminated line.

use base64::Engine;
use base64::engine::general_purpose::STANDARD;
use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};
use crate::imaging::{decode_png, encode_png, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub label: i64,
}

impl Request {
    pub fn new(id: u64, img: &Image) -> Result<Self> {
        Ok(Self { id, png_b64: STANDARD.encode(encode_png(img)?) })
    }

    pub fn image(&self) -> Result<Image> {
        let bytes = STANDARD.decode(&self.png_b64).map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
        decode_png(&bytes)
    }
}

/// Serializes `value` as one LF-terminated line.
pub fn to_line<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string(value)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_request(line: &str) -> Result<Request> {
    serde_json::from_str(line.trim_end_matches(['\r', '\n'])).map_err(|e| Error::Protocol(format!("bad request {line:?}: {e}")))
}

/// Parses a reply and checks that it answers `expected_id`.
pub fn parse_response(line: &str, expected_id: u64) -> Result<Label> {
    let r: Response = serde_json::from_str(line.trim_end_matches(['\r', '\n']))
        .map_err(|e| Error::Protocol(format!("bad reply {line:?}: {e}")))?;
    if r.id != expected_id {
        return Err(Error::Protocol(format!("reply id {} does not match request id {expected_id}", r.id)));
    }
    Ok(Label(r.label))
}
