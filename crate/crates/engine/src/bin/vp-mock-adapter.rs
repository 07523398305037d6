//! Stdio `vp/1` adapter serving the in-process oracles.
//!
//! Usage: `vp-mock-adapter [gt-oracle|threshold-oracle]` (default
//! `gt-oracle`). The `open` request's `params` are numeric backend
//! parameters plus, for `gt-oracle`, a `gt_path` string.

use std::collections::BTreeMap;
use std::io::{stdin, stdout, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use serde_json::{Map, Value};
use slicetrack_engine::backend::protocol::serve;
use slicetrack_engine::backend::{
    BackendError, BackendRegistry, MaskRef, SessionConfig, VolumeRef, GT_ORACLE, THRESHOLD_ORACLE,
};

fn main() -> ExitCode {
    let backend = std::env::args().nth(1).unwrap_or_else(|| GT_ORACLE.to_string());
    if backend != GT_ORACLE && backend != THRESHOLD_ORACLE {
        eprintln!("vp-mock-adapter: unknown backend {backend:?}");
        return ExitCode::from(2);
    }
    let registry = BackendRegistry::new();
    let mut open = |volume_path: &str, params: &Map<String, Value>| {
        let mut cfg = SessionConfig::new(backend.clone(), VolumeRef::Path(volume_path.into()));
        let mut numeric = BTreeMap::new();
        for (k, v) in params {
            match (k.as_str(), v) {
                ("gt_path", Value::String(p)) => {
                    cfg.ground_truth = Some(MaskRef::Path(PathBuf::from(p)));
                }
                (_, v) => {
                    let x = v.as_f64().ok_or_else(|| BackendError::Param {
                        name: k.clone(),
                        reason: "not a number".into(),
                    })?;
                    numeric.insert(k.clone(), x);
                }
            }
        }
        cfg.params = numeric;
        registry.open_session(&cfg)
    };
    match serve(stdin().lock(), BufWriter::new(stdout().lock()), &backend, &mut open) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vp-mock-adapter: {e}");
            ExitCode::FAILURE
        }
    }
}
