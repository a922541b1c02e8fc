//! `pap-wire/1` request and response bodies.
//!
//! All images travel as base64-encoded PNG. Requests reject unknown fields so
//! that servers can answer schema violations with 422.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GridExt, ViewExt};
use crate::error::{Error, Result};
use crate::raster::Image;

pub const WIRE_VERSION: &str = "pap-wire/1";

pub const VLM_PATH: &str = "/v1/vlm/complete";
pub const OVD_PATH: &str = "/v1/ovd/detect";
pub const SAM_PATH: &str = "/v1/sam/segment";
pub const HEALTH_PATH: &str = "/healthz";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlmCompleteRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub prompt: String,
    pub image_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridExt>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VlmCompleteResponse {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OvdDetectRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub image_b64: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewport: Option<ViewExt>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OvdDetectResponse {
    pub boxes: Vec<[f64; 4]>,
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamSegmentRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub image_b64: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewport: Option<ViewExt>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamSegmentResponse {
    pub mask_b64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub fn encode_image(img: &Image) -> Result<String> {
    Ok(STANDARD.encode(img.encode_png()?))
}

pub fn decode_image(b64: &str) -> Result<Image> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| Error::InvalidImage(format!("bad base64: {e}")))?;
    Image::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip() {
        let mut img = Image::new(7, 5, 3);
        for (i, b) in img.data.iter_mut().enumerate() {
            *b = (i * 13 % 256) as u8;
        }
        assert_eq!(decode_image(&encode_image(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn sam_box_field_is_named_box() {
        let req = SamSegmentRequest {
            model: None,
            image_b64: "x".into(),
            bbox: [1.0, 2.0, 3.0, 4.0],
            points: vec![],
            sample_id: None,
            viewport: None,
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["box"], serde_json::json!([1.0, 2.0, 3.0, 4.0]));
        assert!(v.get("sample_id").is_none());
    }

    #[test]
    fn unknown_request_fields_rejected() {
        let r: std::result::Result<VlmCompleteRequest, _> =
            serde_json::from_str(r#"{"prompt":"p","image_b64":"","temperature":0.1}"#);
        assert!(r.is_err());
    }
}
