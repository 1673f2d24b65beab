//! Canonical JSON envelope for inter-site messages.
//!
//! Fields are written in a fixed order with every float rendered to 17
//! significant digits, so serialization is deterministic and round-trips
//! exactly. The trailing `checksum` is the first 8 bytes of SHA-256 over
//! everything before `,"checksum"`, in hex.

use std::fmt::Write as _;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::glm::Link;
use crate::linalg::Matrix;

pub const PROTOCOL_VERSION: &str = "fedsurv/1";
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
/// Per-site byte budget is `PRIVACY_CONSTANT * (p^2 + G)`.
pub const PRIVACY_CONSTANT: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct KmPayload {
    pub survival: Vec<f64>,
    pub cum_hazard_integrand: Vec<f64>,
    pub at_risk_fraction: Vec<f64>,
    pub event_fraction: Vec<f64>,
    pub clamp_adjustments: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeePayload {
    pub link: Link,
    pub sites_processed: usize,
    pub beta: Vec<f64>,
    pub info: Matrix<f64>,
    pub meat: Matrix<f64>,
    pub schema: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Km(KmPayload),
    Gee(GeePayload),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteMessage {
    pub protocol_version: String,
    pub sender: String,
    pub grid: Vec<f64>,
    pub landmarks: Vec<f64>,
    pub n_cum: usize,
    pub payload: Payload,
}

impl SiteMessage {
    pub fn stage(&self) -> &'static str {
        match self.payload {
            Payload::Km(_) => "km",
            Payload::Gee(_) => "gee",
        }
    }
}

fn push_str(out: &mut String, s: &str) {
    out.push_str(&Value::String(s.to_string()).to_string());
}

fn push_f64(out: &mut String, field: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::NonFinite(field.to_string()));
    }
    write!(out, "{x:.16e}").expect("write to string");
    Ok(())
}

fn push_vec(out: &mut String, field: &str, v: &[f64]) -> Result<()> {
    out.push('[');
    for (i, &x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_f64(out, field, x)?;
    }
    out.push(']');
    Ok(())
}

fn push_key(out: &mut String, key: &str) {
    out.push(',');
    push_str(out, key);
    out.push(':');
}

fn checksum_of(body: &[u8]) -> String {
    let digest = Sha256::digest(body);
    digest[..8].iter().fold(String::with_capacity(16), |mut s, b| {
        write!(s, "{b:02x}").expect("write to string");
        s
    })
}

/// Canonical bytes of a message.
pub fn serialize_message(msg: &SiteMessage) -> Result<Vec<u8>> {
    let mut out = String::new();
    out.push_str("{\"protocol_version\":");
    push_str(&mut out, &msg.protocol_version);
    push_key(&mut out, "stage");
    push_str(&mut out, msg.stage());
    push_key(&mut out, "sender");
    push_str(&mut out, &msg.sender);
    push_key(&mut out, "grid");
    push_vec(&mut out, "grid", &msg.grid)?;
    push_key(&mut out, "landmarks");
    push_vec(&mut out, "landmarks", &msg.landmarks)?;
    push_key(&mut out, "n_cum");
    write!(out, "{}", msg.n_cum).expect("write to string");
    match &msg.payload {
        Payload::Km(km) => {
            push_key(&mut out, "km_state");
            out.push_str("{\"survival\":");
            push_vec(&mut out, "survival", &km.survival)?;
            push_key(&mut out, "cum_hazard_integrand");
            push_vec(&mut out, "cum_hazard_integrand", &km.cum_hazard_integrand)?;
            push_key(&mut out, "at_risk_fraction");
            push_vec(&mut out, "at_risk_fraction", &km.at_risk_fraction)?;
            push_key(&mut out, "event_fraction");
            push_vec(&mut out, "event_fraction", &km.event_fraction)?;
            push_key(&mut out, "clamp_adjustments");
            write!(out, "{}", km.clamp_adjustments).expect("write to string");
            out.push('}');
        }
        Payload::Gee(gee) => {
            for (name, m) in [("info", &gee.info), ("meat", &gee.meat)] {
                if m.rows() != gee.beta.len() || !m.is_square() {
                    return Err(Error::Dimension(format!("{name} is {}x{}", m.rows(), m.cols())));
                }
            }
            push_key(&mut out, "link");
            push_str(&mut out, gee.link.name());
            push_key(&mut out, "sites_processed");
            write!(out, "{}", gee.sites_processed).expect("write to string");
            push_key(&mut out, "beta");
            push_vec(&mut out, "beta", &gee.beta)?;
            push_key(&mut out, "info");
            push_vec(&mut out, "info", gee.info.as_slice())?;
            push_key(&mut out, "meat");
            push_vec(&mut out, "meat", gee.meat.as_slice())?;
            push_key(&mut out, "schema");
            out.push('[');
            for (i, s) in gee.schema.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                push_str(&mut out, s);
            }
            out.push(']');
        }
    }
    let sum = checksum_of(out.as_bytes());
    out.push_str(",\"checksum\":\"");
    out.push_str(&sum);
    out.push_str("\"}");
    Ok(out.into_bytes())
}

fn offset_of(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    bytes.len()
}

/// Locates a key in the raw bytes for error reporting.
fn key_offset(bytes: &[u8], key: &str) -> usize {
    let needle = format!("\"{key}\"");
    bytes
        .windows(needle.len())
        .position(|w| w == needle.as_bytes())
        .unwrap_or(0)
}

struct Fields<'a> {
    bytes: &'a [u8],
    obj: &'a serde_json::Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Parse { offset: key_offset(self.bytes, key), message: message.into() }
    }

    fn get(&self, key: &str) -> Result<&'a Value> {
        self.obj.get(key).ok_or_else(|| Error::Parse {
            offset: self.bytes.len(),
            message: format!("missing field `{key}`"),
        })
    }

    fn string(&self, key: &str) -> Result<String> {
        self.get(key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.err(key, format!("`{key}` must be a string")))
    }

    fn count(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| self.err(key, format!("`{key}` must be a nonnegative integer")))
    }

    fn floats(&self, key: &str) -> Result<Vec<f64>> {
        floats_of(self.get(key)?).ok_or_else(|| self.err(key, format!("`{key}` must be an array of finite numbers")))
    }
}

fn floats_of(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?
        .iter()
        .map(|x| x.as_f64().filter(|f| f.is_finite()))
        .collect()
}

/// Parses and verifies a message.
pub fn parse_message(bytes: &[u8]) -> Result<SiteMessage> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: offset_of(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or(Error::Parse { offset: 0, message: "message must be an object".into() })?;
    let f = Fields { bytes, obj };

    let marker = b",\"checksum\":";
    let cut = bytes
        .windows(marker.len())
        .rposition(|w| w == marker)
        .ok_or_else(|| f.err("checksum", "missing checksum"))?;
    let expected = f.string("checksum")?;
    let computed = checksum_of(&bytes[..cut]);
    if expected != computed {
        return Err(Error::Checksum { expected, computed });
    }

    let protocol_version = f.string("protocol_version")?;
    if protocol_version != PROTOCOL_VERSION {
        return Err(f.err("protocol_version", format!("unsupported protocol `{protocol_version}`")));
    }
    let stage = f.string("stage")?;
    let sender = f.string("sender")?;
    let grid = f.floats("grid")?;
    let landmarks = f.floats("landmarks")?;
    let n_cum = f.count("n_cum")?;

    let payload = match stage.as_str() {
        "km" => {
            let km = f.get("km_state")?.as_object().ok_or_else(|| f.err("km_state", "`km_state` must be an object"))?;
            let inner = Fields { bytes, obj: km };
            let p = KmPayload {
                survival: inner.floats("survival")?,
                cum_hazard_integrand: inner.floats("cum_hazard_integrand")?,
                at_risk_fraction: inner.floats("at_risk_fraction")?,
                event_fraction: inner.floats("event_fraction")?,
                clamp_adjustments: inner.count("clamp_adjustments")?,
            };
            for (name, v) in [
                ("survival", &p.survival),
                ("cum_hazard_integrand", &p.cum_hazard_integrand),
                ("at_risk_fraction", &p.at_risk_fraction),
                ("event_fraction", &p.event_fraction),
            ] {
                if v.len() != grid.len() {
                    return Err(f.err(name, format!("`{name}` has {} entries, grid has {}", v.len(), grid.len())));
                }
            }
            Payload::Km(p)
        }
        "gee" => {
            let link: Link = f.string("link")?.parse().map_err(|_| f.err("link", "unknown link"))?;
            let beta = f.floats("beta")?;
            let schema: Vec<String> = f
                .get("schema")?
                .as_array()
                .and_then(|a| a.iter().map(|s| s.as_str().map(str::to_string)).collect())
                .ok_or_else(|| f.err("schema", "`schema` must be an array of strings"))?;
            let p = beta.len();
            if schema.len() != p {
                return Err(f.err("schema", format!("schema has {} names for {p} coefficients", schema.len())));
            }
            let mut mats = Vec::with_capacity(2);
            for name in ["info", "meat"] {
                let v = f.floats(name)?;
                if v.len() != p * p {
                    return Err(f.err(name, format!("`{name}` has {} entries, expected {}", v.len(), p * p)));
                }
                let m = Matrix::from_row_major(p, p, v)?;
                let asym = m.max_asymmetry();
                if asym > SYMMETRY_TOLERANCE {
                    return Err(Error::AsymmetricMatrix { field: name.into(), asymmetry: asym });
                }
                mats.push(m);
            }
            let meat = mats.pop().expect("two matrices");
            let info = mats.pop().expect("two matrices");
            Payload::Gee(GeePayload {
                link,
                sites_processed: f.count("sites_processed")?,
                beta,
                info,
                meat,
                schema,
            })
        }
        other => return Err(f.err("stage", format!("unknown stage `{other}`"))),
    };
    Ok(SiteMessage { protocol_version, sender, grid, landmarks, n_cum, payload })
}

/// Byte budget for one site's outgoing traffic.
pub fn privacy_budget(p: usize, grid_len: usize) -> usize {
    PRIVACY_CONSTANT * (p * p + grid_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gee(p: usize) -> SiteMessage {
        let mut info = Matrix::identity(p);
        if p > 1 {
            info[(0, 1)] = 0.25;
            info[(1, 0)] = 0.25;
        }
        SiteMessage {
            protocol_version: PROTOCOL_VERSION.into(),
            sender: "site_01".into(),
            grid: vec![0.5, 1.0, 2.0],
            landmarks: vec![1.0],
            n_cum: 42,
            payload: Payload::Gee(GeePayload {
                link: Link::Cloglog,
                sites_processed: 1,
                beta: (0..p).map(|i| 0.1 * i as f64 - 1.0 / 3.0).collect(),
                meat: info.scale(2.0),
                info,
                schema: (0..p).map(|i| format!("c{i}")).collect(),
            }),
        }
    }

    fn km() -> SiteMessage {
        SiteMessage {
            protocol_version: PROTOCOL_VERSION.into(),
            sender: "site \"2\"".into(),
            grid: vec![0.1, 0.2],
            landmarks: vec![0.2],
            n_cum: 7,
            payload: Payload::Km(KmPayload {
                survival: vec![1.0, std::f64::consts::FRAC_1_SQRT_2],
                cum_hazard_integrand: vec![0.0, 1e-300],
                at_risk_fraction: vec![0.9, 5e-324],
                event_fraction: vec![0.0, 0.1],
                clamp_adjustments: 3,
            }),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for m in [gee(3), km()] {
            let bytes = serialize_message(&m).unwrap();
            assert_eq!(parse_message(&bytes).unwrap(), m);
            assert_eq!(serialize_message(&parse_message(&bytes).unwrap()).unwrap(), bytes);
        }
    }

    #[test]
    fn tampering_is_detected() {
        let mut bytes = serialize_message(&gee(2)).unwrap();
        let pos = bytes.windows(4).position(|w| w == b"n_cu").unwrap() + 7;
        bytes[pos] = b'9';
        assert!(matches!(parse_message(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn asymmetry_is_rejected() {
        let mut m = gee(2);
        if let Payload::Gee(g) = &mut m.payload {
            g.info[(0, 1)] += 1e-6;
        }
        let bytes = serialize_message(&m).unwrap();
        let err = parse_message(&bytes).unwrap_err();
        assert!(matches!(err, Error::AsymmetricMatrix { .. }));
        assert!(err.to_string().contains("asymmetric matrix"));
    }

    #[test]
    fn nonfinite_values_are_rejected() {
        let mut m = km();
        if let Payload::Km(k) = &mut m.payload {
            k.survival[0] = f64::NAN;
        }
        assert!(matches!(serialize_message(&m), Err(Error::NonFinite(_))));
        let bytes = serialize_message(&km()).unwrap();
        let text = String::from_utf8(bytes).unwrap().replacen("1.0000000000000000e0", "NaN", 1);
        match parse_message(text.as_bytes()) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0 && offset < text.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_payload_reports_offset() {
        match parse_message(b"{\"protocol_version\": 3,") {
            Err(Error::Parse { offset, .. }) => assert!((20..=23).contains(&offset), "{offset}"),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn floats_round_trip(v in proptest::collection::vec(-1e300f64..1e300, 1..20), p in 1usize..6) {
            let mut m = gee(p);
            m.grid = v.clone();
            let bytes = serialize_message(&m).unwrap();
            prop_assert_eq!(parse_message(&bytes).unwrap(), m);
        }

        #[test]
        fn size_is_independent_of_subjects(p in 1usize..8, n in 0usize..1_000_000) {
            let mut m = gee(p);
            m.n_cum = n;
            m.grid = (1..=200).map(|g| g as f64 / 7.0).collect();
            let bytes = serialize_message(&m).unwrap();
            prop_assert!(bytes.len() <= privacy_budget(p, m.grid.len()));
        }
    }
}
