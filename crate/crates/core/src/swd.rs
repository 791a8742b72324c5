//! SWD1 container format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SWD1" | u32 header_len | header_len bytes of UTF-8 JSON | f32 payload ... | u32 CRC32(payload)
//! ```
//!
//! The JSON header carries `version`, `kind`, `payload_len` (number of f32
//! values) and the kind-specific record descriptions. Field arrays are
//! written in `[depth][lateral][time]` order, one after another in record
//! order.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::field::{DisplacementSequence, ElasticityMap};
use crate::geom::{GridGeom, PushDescriptor};

pub const MAGIC: &[u8; 4] = b"SWD1";
pub const VERSION: u32 = 1;

pub const KIND_DATASET: &str = "dataset";
pub const KIND_MAPS: &str = "maps";
pub const KIND_MODEL: &str = "model";

/// Serializes a header and a list of f32 blobs into SWD1 bytes.
pub fn encode(header: &Value, blobs: &[&[f32]]) -> Result<Vec<u8>> {
    let payload_len: usize = blobs.iter().map(|b| b.len()).sum();
    let mut header = header.clone();
    let obj = header
        .as_object_mut()
        .ok_or_else(|| Error::Format("header must be a JSON object".into()))?;
    obj.insert("version".into(), json!(VERSION));
    obj.insert("payload_len".into(), json!(payload_len));
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;

    let mut out = Vec::with_capacity(12 + header_bytes.len() + payload_len * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    let payload_start = out.len();
    for blob in blobs {
        for v in *blob {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parses SWD1 bytes into the JSON header and the flat f32 payload.
pub fn decode(bytes: &[u8]) -> Result<(Value, Vec<f32>)> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing SWD1 magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
    let header: Value =
        serde_json::from_slice(&bytes[8..header_end]).map_err(|e| Error::Format(format!("bad header JSON: {e}")))?;
    let version = header
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Format("header has no version".into()))? as u32;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let payload_len = header
        .get("payload_len")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Format("header has no payload_len".into()))? as usize;
    let expected_total = header_end + payload_len * 4 + 4;
    if bytes.len() != expected_total {
        return Err(Error::Checksum(format!(
            "file is {} bytes, header implies {}",
            bytes.len(),
            expected_total
        )));
    }
    let payload = &bytes[header_end..header_end + payload_len * 4];
    let stored = u32::from_le_bytes(bytes[expected_total - 4..].try_into().unwrap());
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::Checksum(format!(
            "payload CRC32 {actual:08x} does not match stored {stored:08x}"
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

pub fn write_container(path: &Path, header: &Value, blobs: &[&[f32]]) -> Result<()> {
    fs::write(path, encode(header, blobs)?)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(Value, Vec<f32>)> {
    decode(&fs::read(path)?)
}

fn header_kind(header: &Value) -> Result<&str> {
    header
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Format("header has no kind".into()))
}

pub(crate) fn expect_kind(header: &Value, kind: &str) -> Result<()> {
    let found = header_kind(header)?;
    if found != kind {
        return Err(Error::Format(format!("expected a `{kind}` container, found `{found}`")));
    }
    Ok(())
}

/// Splits a flat payload into consecutive chunks.
pub(crate) struct PayloadCursor<'a> {
    data: &'a [f32],
    pos: usize,
}

impl<'a> PayloadCursor<'a> {
    pub(crate) fn new(data: &'a [f32]) -> Self {
        Self { data, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [f32]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Format("payload shorter than header describes".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "{} trailing payload values",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Provenance of a record: which phantom, probe position and push produced it.
///
/// Pushes are numbered from 1; push 0 marks records not tied to a single
/// push (phantom maps, fused maps).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub phantom_id: String,
    /// Stiffness rank of the phantom material (0 = softest).
    pub concentration: u32,
    pub position: u32,
    pub push: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    /// Homogeneous phantom with a single Young's modulus (Pa).
    Homogeneous(f64),
    /// Per-pixel ground truth (Pa).
    Map(ElasticityMap),
}

impl Label {
    /// Ground truth at a pixel.
    pub fn at(&self, px: crate::geom::Pixel) -> Option<f64> {
        match self {
            Label::Homogeneous(e) => Some(*e),
            Label::Map(m) => m.get(px).map(|v| v as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub sequence: DisplacementSequence,
    pub label: Label,
    pub meta: RecordMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LabelHeader {
    Homogeneous { young_modulus: f64 },
    Map,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    geom: GridGeom,
    frames: usize,
    frame_rate: f64,
    push: PushDescriptor,
    label: LabelHeader,
    meta: RecordMeta,
}

fn validate_records(records: &[DatasetRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        match &r.label {
            Label::Homogeneous(e) => {
                if !(e.is_finite() && *e > 0.0) {
                    return Err(Error::invalid("label", format!("{e} must be finite and > 0")));
                }
            }
            Label::Map(m) => {
                r.sequence.geom.ensure_same(&m.geom)?;
                if m.data().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::invalid("label", "label maps must be finite and > 0"));
                }
            }
        }
        if !seen.insert(&r.meta) {
            return Err(Error::invalid("meta", format!("duplicate record id {:?}", r.meta)));
        }
    }
    Ok(())
}

pub fn encode_dataset(records: &[DatasetRecord]) -> Result<Vec<u8>> {
    validate_records(records)?;
    let mut headers = Vec::with_capacity(records.len());
    let mut blobs: Vec<&[f32]> = Vec::new();
    for r in records {
        let s = &r.sequence;
        blobs.push(s.data());
        let label = match &r.label {
            Label::Homogeneous(e) => LabelHeader::Homogeneous { young_modulus: *e },
            Label::Map(m) => {
                blobs.push(m.data());
                LabelHeader::Map
            }
        };
        headers.push(RecordHeader {
            geom: s.geom,
            frames: s.frames,
            frame_rate: s.frame_rate,
            push: s.push,
            label,
            meta: r.meta.clone(),
        });
    }
    encode(&json!({ "kind": KIND_DATASET, "records": headers }), &blobs)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<DatasetRecord>> {
    let (header, payload) = decode(bytes)?;
    expect_kind(&header, KIND_DATASET)?;
    let headers: Vec<RecordHeader> = serde_json::from_value(
        header
            .get("records")
            .cloned()
            .ok_or_else(|| Error::Format("dataset header has no records".into()))?,
    )
    .map_err(|e| Error::Format(format!("bad record header: {e}")))?;
    let mut cur = PayloadCursor::new(&payload);
    let mut out = Vec::with_capacity(headers.len());
    for h in headers {
        let n = h.geom.pixels() * h.frames;
        let seq = DisplacementSequence::new(h.geom, h.frames, h.frame_rate, h.push, cur.take(n)?.to_vec())?;
        let label = match h.label {
            LabelHeader::Homogeneous { young_modulus } => Label::Homogeneous(young_modulus),
            LabelHeader::Map => Label::Map(ElasticityMap::new(h.geom, cur.take(h.geom.pixels())?.to_vec())?),
        };
        out.push(DatasetRecord {
            sequence: seq,
            label,
            meta: h.meta,
        });
    }
    cur.finish()?;
    Ok(out)
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(records)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    decode_dataset(&fs::read(path)?)
}

/// A named single-frame field (elasticity map) with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRecord {
    pub name: String,
    pub meta: RecordMeta,
    pub map: ElasticityMap,
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    name: String,
    geom: GridGeom,
    frames: usize,
    meta: RecordMeta,
}

pub fn encode_maps(maps: &[MapRecord]) -> Result<Vec<u8>> {
    let headers: Vec<MapHeader> = maps
        .iter()
        .map(|m| MapHeader {
            name: m.name.clone(),
            geom: m.map.geom,
            frames: 1,
            meta: m.meta.clone(),
        })
        .collect();
    let blobs: Vec<&[f32]> = maps.iter().map(|m| m.map.data()).collect();
    encode(&json!({ "kind": KIND_MAPS, "maps": headers }), &blobs)
}

pub fn decode_maps(bytes: &[u8]) -> Result<Vec<MapRecord>> {
    let (header, payload) = decode(bytes)?;
    expect_kind(&header, KIND_MAPS)?;
    let headers: Vec<MapHeader> = serde_json::from_value(
        header
            .get("maps")
            .cloned()
            .ok_or_else(|| Error::Format("maps header has no maps".into()))?,
    )
    .map_err(|e| Error::Format(format!("bad map header: {e}")))?;
    let mut cur = PayloadCursor::new(&payload);
    let mut out = Vec::with_capacity(headers.len());
    for h in headers {
        if h.frames != 1 {
            return Err(Error::Format(format!("map `{}` has {} frames", h.name, h.frames)));
        }
        out.push(MapRecord {
            name: h.name,
            meta: h.meta,
            map: ElasticityMap::new(h.geom, cur.take(h.geom.pixels())?.to_vec())?,
        });
    }
    cur.finish()?;
    Ok(out)
}

pub fn write_maps(maps: &[MapRecord], path: &Path) -> Result<()> {
    fs::write(path, encode_maps(maps)?)?;
    Ok(())
}

pub fn read_maps(path: &Path) -> Result<Vec<MapRecord>> {
    decode_maps(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pixel;

    fn record(depth: usize, lateral: usize, frames: usize, push: u32) -> DatasetRecord {
        let g = GridGeom::with_default_pitch(depth, lateral).unwrap();
        let seq = DisplacementSequence::from_fn(g, frames, 7000.0, PushDescriptor::centered(&g), |d, l, t| {
            ((d * 31 + l * 7 + t) as f32).sin() * 1e-6
        })
        .unwrap();
        DatasetRecord {
            sequence: seq,
            label: Label::Homogeneous(37_550.0),
            meta: RecordMeta {
                phantom_id: "p".into(),
                concentration: 1,
                position: 0,
                push,
            },
        }
    }

    #[test]
    fn full_size_record_roundtrips_bit_exact() {
        let r = record(250, 600, 35, 1);
        let bytes = encode_dataset(std::slice::from_ref(&r)).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.len(), 1);
        let a: Vec<u32> = r.sequence.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back[0].sequence.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back[0], r);
        // re-encoding yields identical bytes
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn map_labels_and_missing_values_roundtrip() {
        let mut r = record(6, 8, 3, 2);
        let mut m = ElasticityMap::constant(r.sequence.geom, 20_000.0);
        m.set(Pixel::new(2, 3), Some(50_000.0));
        r.label = Label::Map(m);
        let r2 = record(6, 8, 3, 3);
        let bytes = encode_dataset(&[r.clone(), r2.clone()]).unwrap();
        assert_eq!(decode_dataset(&bytes).unwrap(), vec![r, r2]);

        let g = GridGeom::with_default_pitch(3, 3).unwrap();
        let mut map = ElasticityMap::constant(g, 1.5);
        map.set(Pixel::new(1, 1), None);
        let rec = MapRecord {
            name: "m".into(),
            meta: RecordMeta {
                phantom_id: "x".into(),
                concentration: 0,
                position: 0,
                push: 0,
            },
            map,
        };
        let back = decode_maps(&encode_maps(std::slice::from_ref(&rec)).unwrap()).unwrap();
        assert_eq!(back[0].name, "m");
        assert!(back[0].map.get(Pixel::new(1, 1)).is_none());
        assert_eq!(back[0].map.get(Pixel::new(0, 1)), Some(1.5));
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = encode_dataset(&[record(4, 4, 2, 1)]).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_checksum_error() {
        let bytes = encode_dataset(&[record(4, 4, 2, 1)]).unwrap();
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(decode_dataset(cut), Err(Error::Checksum(_))));
    }

    #[test]
    fn flipped_payload_bit_is_checksum_error() {
        let mut bytes = encode_dataset(&[record(4, 4, 2, 1)]).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 0x01;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Checksum(_))));
    }

    #[test]
    fn version_mismatch_detected() {
        let bytes = encode(&json!({"kind": "maps", "maps": []}), &[]).unwrap();
        let text = String::from_utf8_lossy(&bytes[8..bytes.len() - 4]).to_string();
        let patched = text.replace("\"version\":1", "\"version\":7");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(patched.len() as u32).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&crc32fast::hash(&[]).to_le_bytes());
        assert!(matches!(
            decode_maps(&out),
            Err(Error::VersionMismatch { found: 7, .. })
        ));
    }

    #[test]
    fn duplicate_ids_and_bad_labels_rejected() {
        let r = record(4, 4, 2, 1);
        assert!(encode_dataset(&[r.clone(), r.clone()]).is_err());
        let mut bad = r;
        bad.label = Label::Homogeneous(-1.0);
        assert!(encode_dataset(&[bad]).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.swd");
        let recs = vec![record(5, 7, 3, 1), record(5, 7, 3, 2)];
        write_dataset(&recs, &p).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), recs);
        assert!(read_maps(&p).is_err());
    }
}
