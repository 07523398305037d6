//! The `vp/1` segmenter wire protocol.
//!
//! Newline-delimited JSON over a child process's stdin/stdout. Each request
//! carries an `id` that the response echoes:
//!
//! ```text
//! → {"id":1,"op":"hello"}
//! ← {"id":1,"ok":true,"protocol":"vp/1","backend":"<name>"}
//! → {"id":2,"op":"open","volume_path":"...","params":{...}}
//! ← {"id":2,"ok":true,"dims":[d,h,w]}
//! → {"id":3,"op":"step","z":12,"guidance":{"kind":"box","x_min":..,"y_min":..,"x_max":..,"y_max":..}}
//! → {"id":3,"op":"step","z":12,"guidance":{"kind":"mask","rle":{...},"step_index":n}}
//! ← {"id":3,"ok":true,"z":12,"rle":{...}}
//! → {"id":4,"op":"close"}
//! ← {"id":4,"ok":true}
//! ```
//!
//! Failures are `{"id":n,"ok":false,"error":"<message>"}`. A mask guidance
//! with `step_index` 0 is an initial mask prompt; higher values carry the
//! previous slice's prediction.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use slicetrack_core::volume::RleMask;
use slicetrack_core::{BoundingBox2D, Prompt};

use super::{BackendError, Guidance, SessionHandle, StepRequest};

pub const PROTOCOL: &str = "vp/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Op {
    Hello,
    Open {
        volume_path: String,
        #[serde(default)]
        params: Map<String, Value>,
    },
    Step {
        z: usize,
        guidance: WireGuidance,
    },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WireGuidance {
    Box {
        x_min: usize,
        y_min: usize,
        x_max: usize,
        y_max: usize,
    },
    Mask {
        rle: RleMask,
        step_index: usize,
    },
}

impl WireGuidance {
    pub fn from_guidance(g: &Guidance) -> Self {
        match g {
            Guidance::Prompt(Prompt::Box(b)) => WireGuidance::Box {
                x_min: b.x_min,
                y_min: b.y_min,
                x_max: b.x_max,
                y_max: b.y_max,
            },
            Guidance::Prompt(Prompt::Mask { mask, .. }) => WireGuidance::Mask {
                rle: RleMask::from(mask),
                step_index: 0,
            },
            Guidance::PreviousMask { mask, step_index } => WireGuidance::Mask {
                rle: RleMask::from(mask),
                step_index: *step_index,
            },
        }
    }

    pub fn into_guidance(self, z: usize) -> Result<Guidance, String> {
        Ok(match self {
            WireGuidance::Box {
                x_min,
                y_min,
                x_max,
                y_max,
            } => Guidance::Prompt(Prompt::Box(BoundingBox2D {
                z,
                x_min,
                y_min,
                x_max,
                y_max,
            })),
            WireGuidance::Mask { rle, step_index } => {
                let mask = rle.decode().map_err(|e| e.to_string())?;
                if step_index == 0 {
                    Guidance::Prompt(Prompt::Mask { z, mask })
                } else {
                    Guidance::PreviousMask { mask, step_index }
                }
            }
        })
    }
}

pub fn ok_response(id: u64, fields: Value) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), id.into());
    obj.insert("ok".into(), true.into());
    if let Value::Object(extra) = fields {
        obj.extend(extra);
    }
    Value::Object(obj)
}

pub fn error_response(id: Option<u64>, message: &str) -> Value {
    json!({"id": id, "ok": false, "error": message})
}

/// Opens a session for an `open` request.
pub type OpenFn<'a> =
    dyn FnMut(&str, &Map<String, Value>) -> Result<SessionHandle, BackendError> + 'a;

/// Adapter side of the protocol: answers requests until `close` or end of
/// input. Only I/O failures are returned; request errors become error
/// responses.
pub fn serve<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    backend: &str,
    open: &mut OpenFn<'_>,
) -> std::io::Result<()> {
    let mut session: Option<SessionHandle> = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, done) = match serde_json::from_str::<Request>(&line) {
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64));
                (error_response(id, &format!("malformed request: {e}")), false)
            }
            Ok(Request { id, op }) => match op {
                Op::Hello => (
                    ok_response(id, json!({"protocol": PROTOCOL, "backend": backend})),
                    false,
                ),
                Op::Open {
                    volume_path,
                    params,
                } => match open(&volume_path, &params) {
                    Ok(s) => {
                        let d = s.dims();
                        session = Some(s);
                        (ok_response(id, json!({"dims": [d.d, d.h, d.w]})), false)
                    }
                    Err(e) => (error_response(Some(id), &e.to_string()), false),
                },
                Op::Step { z, guidance } => match session.as_mut() {
                    None => (error_response(Some(id), "no open session"), false),
                    Some(s) => match guidance.into_guidance(z) {
                        Err(e) => (error_response(Some(id), &e), false),
                        Ok(guidance) => match s.segment_step(&StepRequest { z, guidance }) {
                            Ok(r) => (
                                ok_response(id, json!({"z": z, "rle": RleMask::from(&r.mask)})),
                                false,
                            ),
                            Err(e) => (error_response(Some(id), &e.to_string()), false),
                        },
                    },
                },
                Op::Close => {
                    if let Some(mut s) = session.take() {
                        let _ = s.close();
                    }
                    (ok_response(id, json!({})), true)
                }
            },
        };
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if done {
            break;
        }
    }
    Ok(())
}
