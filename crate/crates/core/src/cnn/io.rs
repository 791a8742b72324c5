//! Model files and training history.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::net::{Adam, Model};
use super::train::EpochStats;
use super::ArchSpec;
use crate::error::{Error, Result};
use crate::swd::{decode, encode, expect_kind, PayloadCursor, KIND_MODEL};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    arch: ArchSpec,
    params: usize,
    running: usize,
    label_offset: f64,
    label_scale: f64,
    adam_step: u64,
    #[serde(default)]
    window: Option<usize>,
}

/// Payload order: parameters, running statistics, Adam first moments,
/// Adam second moments.
pub fn encode_model(model: &Model<f32>) -> Result<Vec<u8>> {
    let header = ModelHeader {
        arch: model.arch.clone(),
        params: model.params.len(),
        running: model.running.len(),
        label_offset: model.label_offset,
        label_scale: model.label_scale,
        adam_step: model.adam.step,
        window: model.window,
    };
    let mut value = serde_json::to_value(&header).map_err(|e| Error::Format(e.to_string()))?;
    value["kind"] = json!(KIND_MODEL);
    encode(&value, &[&model.params, &model.running, &model.adam.m, &model.adam.v])
}

pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>> {
    let (mut header, payload) = decode(bytes)?;
    expect_kind(&header, KIND_MODEL)?;
    if let Some(obj) = header.as_object_mut() {
        for k in ["kind", "version", "payload_len"] {
            obj.remove(k);
        }
    }
    let h: ModelHeader = serde_json::from_value(header).map_err(|e| Error::Format(format!("bad model header: {e}")))?;
    let mut cur = PayloadCursor::new(&payload);
    let params = cur.take(h.params)?.to_vec();
    let running = cur.take(h.running)?.to_vec();
    let m = cur.take(h.params)?.to_vec();
    let v = cur.take(h.params)?.to_vec();
    cur.finish()?;
    let mut model = Model::from_parts(
        h.arch,
        params,
        running,
        h.label_offset,
        h.label_scale,
        Adam {
            m,
            v,
            step: h.adam_step,
        },
    )?;
    model.window = h.window;
    Ok(model)
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    decode_model(&fs::read(path)?)
}

/// CSV with columns `epoch,lr,train_loss,val_loss`; a missing validation
/// loss is left empty.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_loss\n");
    for e in history {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{}", e.epoch, e.lr, e.train_loss, val).expect("write to string");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_roundtrip_is_exact() {
        let mut m = Model::<f32>::new(ArchSpec::reduced(), 4).unwrap();
        m.label_offset = 61.7;
        m.label_scale = 0.1 + 0.2;
        m.adam.step = 12;
        m.window = Some(17);
        m.adam.m[3] = 0.5;
        m.running[1] = 0.25;
        let back = decode_model(&encode_model(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_other_kinds_and_corruption() {
        let m = Model::<f32>::new(ArchSpec::reduced(), 0).unwrap();
        let mut bytes = encode_model(&m).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 1;
        assert!(matches!(decode_model(&bytes), Err(Error::Checksum(_))));
        let maps = crate::swd::encode_maps(&[]).unwrap();
        assert!(matches!(decode_model(&maps), Err(Error::Format(_))));
    }

    #[test]
    fn history_format() {
        let h = [
            EpochStats {
                epoch: 1,
                lr: 1e-4,
                train_loss: 2.5,
                val_loss: Some(3.0),
            },
            EpochStats {
                epoch: 2,
                lr: 1e-4,
                train_loss: 2.0,
                val_loss: None,
            },
        ];
        assert_eq!(
            history_csv(&h),
            "epoch,lr,train_loss,val_loss\n1,0.0001,2.5,3\n2,0.0001,2,\n"
        );
    }
}
