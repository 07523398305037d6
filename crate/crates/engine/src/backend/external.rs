use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{Map, Value};
use slicetrack_core::io::read_nifti;
use slicetrack_core::volume::RleMask;
use slicetrack_core::{Dims3, SliceMask2D, Spacing};

use super::protocol::{Op, Request, WireGuidance, PROTOCOL};
use super::{BackendError, MaskRef, Segmenter, SessionConfig, StepRequest, VolumeRef};

/// How to launch an out-of-process adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSpec {
    pub program: PathBuf,
    pub args: Vec<String>,
    /// Limit for each response and for the child's exit after `close`.
    pub timeout: Duration,
}

impl ExternalSpec {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn arg(mut self, a: impl Into<String>) -> Self {
        self.args.push(a.into());
        self
    }

    pub fn timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }
}

/// Client for an adapter speaking `vp/1` on its stdin/stdout.
#[derive(Debug)]
pub struct ExternalSegmenter {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    dims: Dims3,
    spacing: Spacing,
    backend: String,
}

impl ExternalSegmenter {
    pub fn spawn(spec: &ExternalSpec, cfg: &SessionConfig) -> Result<Self, BackendError> {
        let volume_path = match &cfg.volume {
            VolumeRef::Path(p) => p.clone(),
            VolumeRef::Loaded(_) => {
                return Err(BackendError::Config(
                    "external backends need a volume file".into(),
                ))
            }
        };
        let (meta, _) = read_nifti(&volume_path).map_err(BackendError::Volume)?;

        let mut child = Command::new(&spec.program)
            .args(&spec.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Handshake(format!("{}: {e}", spec.program.display())))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut s = Self {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            timeout: spec.timeout,
            dims: meta.dims,
            spacing: meta.spacing,
            backend: String::new(),
        };

        let hello = s
            .call(Op::Hello)
            .map_err(|e| BackendError::Handshake(e.to_string()))?;
        if hello.get("protocol").and_then(Value::as_str) != Some(PROTOCOL) {
            s.kill();
            return Err(BackendError::Handshake(format!(
                "expected protocol {PROTOCOL}, got {}",
                hello.get("protocol").unwrap_or(&Value::Null)
            )));
        }
        s.backend = hello
            .get("backend")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();

        let mut params: Map<String, Value> = cfg
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Value::from(*v)))
            .collect();
        match &cfg.ground_truth {
            Some(MaskRef::Path(p)) => {
                params.insert("gt_path".into(), p.display().to_string().into());
            }
            Some(MaskRef::Loaded(_)) => {
                s.kill();
                return Err(BackendError::Config(
                    "external backends need a ground-truth file".into(),
                ));
            }
            None => {}
        }
        let opened = s.call(Op::Open {
            volume_path: volume_path.display().to_string(),
            params,
        });
        let opened = match opened {
            Ok(v) => v,
            Err(e) => {
                s.kill();
                return Err(e);
            }
        };
        let dims: Option<Vec<usize>> = opened
            .get("dims")
            .and_then(|d| serde_json::from_value(d.clone()).ok());
        if dims.as_deref() != Some(&s.dims.as_array()[..]) {
            s.kill();
            return Err(BackendError::Protocol(format!(
                "adapter reports dims {:?}, volume has {:?}",
                opened.get("dims"),
                s.dims.as_array()
            )));
        }
        Ok(s)
    }

    /// Name the adapter gave in its handshake.
    pub fn adapter_backend(&self) -> &str {
        &self.backend
    }

    fn call(&mut self, op: Op) -> Result<Value, BackendError> {
        let id = self.next_id;
        self.next_id += 1;
        let stdin = self.stdin.as_mut().ok_or(BackendError::Closed)?;
        let mut line = serde_json::to_vec(&Request { id, op }).expect("requests serialize");
        line.push(b'\n');
        stdin.write_all(&line)?;
        stdin.flush()?;

        let text = match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => {
                return Err(BackendError::Protocol(format!(
                    "no response to request {id} within {:?}",
                    self.timeout
                )))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(BackendError::Protocol("adapter closed its output".into()))
            }
        };
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("malformed response: {e}")))?;
        if v.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(BackendError::Protocol(format!(
                "response id {} does not match request {id}",
                v.get("id").unwrap_or(&Value::Null)
            )));
        }
        match v.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok(v),
            Some(false) => Err(BackendError::Remote(
                v.get("error")
                    .and_then(Value::as_str)
                    .unwrap_or("unspecified error")
                    .to_string(),
            )),
            None => Err(BackendError::Protocol("response lacks \"ok\"".into())),
        }
    }

    fn kill(&mut self) {
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn wait_exit(&mut self, deadline: Instant) -> bool {
        loop {
            match self.child.try_wait() {
                Ok(Some(_)) => return true,
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => return false,
            }
        }
    }
}

impl Segmenter for ExternalSegmenter {
    fn dims(&self) -> Dims3 {
        self.dims
    }

    fn spacing(&self) -> Spacing {
        self.spacing
    }

    fn step(&mut self, req: &StepRequest) -> Result<SliceMask2D, BackendError> {
        let v = self.call(Op::Step {
            z: req.z,
            guidance: WireGuidance::from_guidance(&req.guidance),
        })?;
        if v.get("z").and_then(Value::as_u64) != Some(req.z as u64) {
            return Err(BackendError::Protocol(format!(
                "response is for slice {}, requested {}",
                v.get("z").unwrap_or(&Value::Null),
                req.z
            )));
        }
        let rle: RleMask = v
            .get("rle")
            .cloned()
            .ok_or_else(|| BackendError::Protocol("response lacks \"rle\"".into()))
            .and_then(|r| {
                serde_json::from_value(r)
                    .map_err(|e| BackendError::Protocol(format!("bad rle: {e}")))
            })?;
        rle.decode()
            .map_err(|e| BackendError::Protocol(format!("bad rle: {e}")))
    }

    fn close(&mut self) -> Result<(), BackendError> {
        let deadline = Instant::now() + self.timeout;
        let acked = self.call(Op::Close);
        self.stdin = None;
        if acked.is_ok() && self.wait_exit(deadline) {
            return Ok(());
        }
        self.kill();
        Err(match acked {
            Err(e) => BackendError::Protocol(format!("close not acknowledged ({e}); adapter killed")),
            Ok(_) => BackendError::Protocol("adapter did not exit after close; killed".into()),
        })
    }
}

impl Drop for ExternalSegmenter {
    fn drop(&mut self) {
        if matches!(self.child.try_wait(), Ok(None)) {
            self.kill();
        }
    }
}
