//! Command-line entry points: `eval`, `segment`, `mesh` and `serve`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use slicetrack_core::io::{load_manifest, load_mask, load_volume, save_mask};
use slicetrack_core::mesh::{bbox_wireframe, extract_surface, obj_string, stl_bytes, VoxelBox};
use slicetrack_core::volume::PromptKind;
use slicetrack_core::{CenterRule, Mask3D, Strategy};
use slicetrack_engine::backend::{BackendRegistry, ExternalSpec, MaskRef, SessionConfig, VolumeRef};
use slicetrack_engine::eval::{csv_path, evaluate_manifest, write_report, EvalConfig};
use slicetrack_engine::propagation::{run_interactive, run_propagation};

use crate::jobs::{job_metrics, plan_from_prompt, JobMode, PromptBody, Service};
use crate::store::VolumeStore;

#[derive(Debug, Parser)]
#[command(name = "slicetrack", version, about = "Prompt-seeded slice propagation for 3D lesion segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate strategies on every patient of a manifest.
    Eval(EvalArgs),
    /// Segment one volume from a prompt file.
    Segment(SegmentArgs),
    /// Export the surface of a NIfTI mask as OBJ or binary STL.
    Mesh(MeshArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Backend parameter, repeatable: `--param drift=0.5`.
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    /// External vp/1 adapter, repeatable: `--adapter sam2="python -m adapter"`.
    #[arg(long = "adapter", value_name = "ID=COMMAND", value_parser = parse_adapter)]
    pub adapters: Vec<(String, Vec<String>)>,
    /// Seconds to wait for each adapter response.
    #[arg(long, default_value_t = 30.0)]
    pub adapter_timeout: f64,
}

impl BackendArgs {
    pub fn registry(&self) -> BackendRegistry {
        let mut r = BackendRegistry::new();
        for (id, cmd) in &self.adapters {
            let mut spec = ExternalSpec::new(&cmd[0]).timeout(Duration::from_secs_f64(self.adapter_timeout));
            for a in &cmd[1..] {
                spec = spec.arg(a);
            }
            r.register_external(id, spec);
        }
        r
    }

    pub fn param_map(&self) -> BTreeMap<String, f64> {
        self.params.iter().cloned().collect()
    }
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected NAME=VALUE")?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{v:?}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_adapter(s: &str) -> Result<(String, Vec<String>), String> {
    let (id, cmd) = s.split_once('=').ok_or("expected ID=COMMAND")?;
    let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
    if id.trim().is_empty() || argv.is_empty() {
        return Err("expected ID=COMMAND".into());
    }
    Ok((id.trim().to_string(), argv))
}

/// Parsed `--strategies` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyList(pub Vec<Strategy>);

fn parse_strategies(s: &str) -> Result<StrategyList, String> {
    if s == "all" {
        return Ok(StrategyList(Strategy::ALL.to_vec()));
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let st: Strategy = part.trim().parse()?;
        if !out.contains(&st) {
            out.push(st);
        }
    }
    Ok(StrategyList(out))
}

fn parse_center(s: &str) -> Result<CenterRule, String> {
    match s {
        "midpoint" => Ok(CenterRule::Midpoint),
        "max-area" => Ok(CenterRule::MaxArea),
        _ => Err(format!("unknown center rule {s:?} (expected midpoint or max-area)")),
    }
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected FIRST:LAST")?;
    let a = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((a, b))
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub backend: String,
    /// `all` or a comma-separated list.
    #[arg(long, default_value = "all", value_parser = parse_strategies)]
    pub strategies: StrategyList,
    #[arg(long, default_value = "box")]
    pub prompt: PromptKind,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON path; the CSV is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Pixels added around derived box prompts.
    #[arg(long, default_value_t = 0)]
    pub pad: usize,
    #[arg(long, default_value = "midpoint", value_parser = parse_center)]
    pub center: CenterRule,
    #[arg(long, default_value_t = 0.1)]
    pub bin_width: f64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[command(flatten)]
    pub backend_args: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub volume: PathBuf,
    /// JSON prompt: `{"kind":"box","z":..,"x_min":..,..}` or `{"kind":"mask","z":..,"rle":{..}}`.
    #[arg(long)]
    pub prompt_file: PathBuf,
    /// A strategy name or `interactive`.
    #[arg(long, default_value = "center-outward")]
    pub strategy: JobMode,
    #[arg(long)]
    pub backend: String,
    /// Ground-truth mask, required by gt-oracle and used for reporting Dice.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out_mask: PathBuf,
    /// `.stl` writes binary STL, anything else OBJ.
    #[arg(long)]
    pub out_mesh: Option<PathBuf>,
    #[arg(long)]
    pub out_trace: Option<PathBuf>,
    /// Restrict chains to `FIRST:LAST` (inclusive).
    #[arg(long, value_parser = parse_range)]
    pub z_range: Option<(usize, usize)>,
    #[arg(long, default_value_t = 2)]
    pub stop_after_empty: usize,
    #[command(flatten)]
    pub backend_args: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MeshArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Add the mask's bounding box as OBJ line elements.
    #[arg(long)]
    pub with_bbox: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[command(flatten)]
    pub backend_args: BackendArgs,
}

/// Exit code 1 marks a partial evaluation; 2 marks a failed command.
pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Eval(a) => eval(&a),
        Command::Segment(a) => segment(&a).map(|()| ExitCode::SUCCESS),
        Command::Mesh(a) => mesh(&a).map(|()| ExitCode::SUCCESS),
        Command::Serve(a) => serve(&a).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

type CmdResult<T> = Result<T, String>;

fn eval(a: &EvalArgs) -> CmdResult<ExitCode> {
    let manifest = load_manifest(&a.manifest).map_err(|e| e.to_string())?;
    let registry = a.backend_args.registry();
    let cfg = EvalConfig {
        backend_id: a.backend.clone(),
        strategies: a.strategies.0.clone(),
        prompt_kind: a.prompt,
        seed: a.seed,
        pad: a.pad,
        params: a.backend_args.param_map(),
        center_rule: a.center,
        bin_width: a.bin_width,
        threads: a.threads,
    };
    let report = evaluate_manifest(&manifest, &registry, &cfg).map_err(|e| e.to_string())?;
    write_report(&report, &a.out).map_err(|e| e.to_string())?;
    for (s, summary) in &report.summaries {
        eprintln!(
            "{s}: mean dice {:.4}, median {:.4}, wins {}",
            summary.stats.mean, summary.stats.median, summary.win_count
        );
    }
    eprintln!("wrote {} and {}", a.out.display(), csv_path(&a.out).display());
    if report.errors.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for e in &report.errors {
            eprintln!("patient {}: {}", e.patient_id, e.error);
        }
        Ok(ExitCode::from(1))
    }
}

fn is_gz(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "gz")
}

fn segment(a: &SegmentArgs) -> CmdResult<()> {
    let volume = Arc::new(load_volume(&a.volume).map_err(|e| format!("{}: {e}", a.volume.display()))?);
    let gt = match &a.gt {
        Some(p) => Some(Arc::new(load_mask(p).map_err(|e| format!("{}: {e}", p.display()))?)),
        None => None,
    };
    let text = std::fs::read_to_string(&a.prompt_file)
        .map_err(|e| format!("{}: {e}", a.prompt_file.display()))?;
    let body: PromptBody = serde_json::from_str(&text).map_err(|e| format!("prompt file: {e}"))?;
    let prompt = body.to_prompt().map_err(|e| e.to_string())?;
    let dims = volume.dims();
    prompt.validate(dims).map_err(|e| format!("prompt: {e}"))?;

    let registry = a.backend_args.registry();
    let external = registry.is_external(&a.backend);
    let cfg = SessionConfig {
        backend_id: a.backend.clone(),
        volume: if external {
            VolumeRef::Path(a.volume.clone())
        } else {
            VolumeRef::Loaded(volume.clone())
        },
        ground_truth: match (&gt, &a.gt) {
            (Some(m), Some(_)) if !external => Some(MaskRef::Loaded(m.clone())),
            (_, Some(p)) => Some(MaskRef::Path(p.clone())),
            _ => None,
        },
        params: a.backend_args.param_map(),
    };
    let mut session = registry.open_session(&cfg).map_err(|e| e.to_string())?;
    let run = match a.strategy.strategy() {
        Some(s) => {
            let plan = plan_from_prompt(s, prompt.z(), dims.d, a.z_range).map_err(|e| e.to_string())?;
            run_propagation(&plan, &mut session, &prompt)
        }
        None => run_interactive(&mut session, &prompt, a.stop_after_empty),
    };
    let closed = session.close();
    let (mask, trace) = run.map_err(|e| e.to_string())?;
    closed.map_err(|e| e.to_string())?;

    save_mask(&mask, &a.out_mask, is_gz(&a.out_mask)).map_err(|e| e.to_string())?;
    if let Some(p) = &a.out_mesh {
        write_mesh(&mask, p, false)?;
    }
    if let Some(p) = &a.out_trace {
        let text = serde_json::to_string_pretty(&trace).expect("trace serializes");
        std::fs::write(p, text + "\n").map_err(|e| format!("{}: {e}", p.display()))?;
    }
    let mut summary = json!({
        "slices_predicted": trace.backend_calls(),
        "foreground_voxels": mask.count(),
        "foreground_slices": mask.foreground_slices(),
    });
    if let Some(g) = &gt {
        let m = job_metrics(&mask, g, prompt.z()).map_err(|e| e.to_string())?;
        summary["dice"] = json!(m.dice);
    }
    println!("{summary}");
    Ok(())
}

fn mask_box(m: &Mask3D) -> Option<VoxelBox> {
    let d = m.dims();
    let mut b: Option<VoxelBox> = None;
    for z in 0..d.d {
        for y in 0..d.h {
            for x in 0..d.w {
                if !m.get(z, y, x) {
                    continue;
                }
                let v = b.get_or_insert(VoxelBox {
                    z: (z, z + 1),
                    y: (y, y + 1),
                    x: (x, x + 1),
                });
                v.z = (v.z.0.min(z), v.z.1.max(z + 1));
                v.y = (v.y.0.min(y), v.y.1.max(y + 1));
                v.x = (v.x.0.min(x), v.x.1.max(x + 1));
            }
        }
    }
    b
}

fn write_mesh(mask: &Mask3D, out: &Path, with_bbox: bool) -> CmdResult<()> {
    let mesh = extract_surface(mask, mask.spacing());
    let is_stl = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("stl"));
    let bytes = if is_stl {
        if with_bbox {
            return Err("--with-bbox needs OBJ output".into());
        }
        stl_bytes(&mesh)
    } else {
        let lines = match (with_bbox, mask_box(mask)) {
            (true, Some(b)) => Some(bbox_wireframe(b, mask.spacing()).map_err(|e| e.to_string())?),
            _ => None,
        };
        obj_string(&mesh, lines.as_ref()).into_bytes()
    };
    std::fs::write(out, bytes).map_err(|e| format!("{}: {e}", out.display()))
}

fn mesh(a: &MeshArgs) -> CmdResult<()> {
    let mask = load_mask(&a.mask).map_err(|e| format!("{}: {e}", a.mask.display()))?;
    if mask.is_empty() {
        eprintln!("warning: mask is empty; writing an empty mesh");
    }
    write_mesh(&mask, &a.out, a.with_bbox)
}

fn serve(a: &ServeArgs) -> CmdResult<()> {
    let store = VolumeStore::open(&a.data_dir).map_err(|e| format!("{}: {e}", a.data_dir.display()))?;
    let svc = Service::new(store, a.backend_args.registry());
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| format!("bad address: {e}"))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(crate::api::serve(svc, addr)).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_params_and_adapters() {
        assert_eq!(parse_param("drift=0.5").unwrap(), ("drift".into(), 0.5));
        assert!(parse_param("drift").is_err());
        assert!(parse_param("drift=x").is_err());
        let (id, argv) = parse_adapter("sam2=python3 -m adapter").unwrap();
        assert_eq!(id, "sam2");
        assert_eq!(argv, ["python3", "-m", "adapter"]);
        assert!(parse_adapter("=x").is_err());
    }

    #[test]
    fn parses_strategy_lists() {
        assert_eq!(parse_strategies("all").unwrap().0, Strategy::ALL.to_vec());
        assert_eq!(
            parse_strategies("center-outward,bottom-to-top,center-outward").unwrap().0,
            vec![Strategy::CenterOutward, Strategy::BottomToTop]
        );
        assert!(parse_strategies("diagonal").is_err());
        assert_eq!(parse_range("3:9").unwrap(), (3, 9));
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from([
            "slicetrack", "eval", "--manifest", "m.json", "--backend", "gt-oracle",
            "--strategies", "all", "--prompt", "mask", "--seed", "3", "--out", "r.json",
            "--param", "drift=0.7",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.strategies.0.len(), 3);
        assert_eq!(a.prompt, PromptKind::Mask);
        assert_eq!(a.backend_args.param_map()["drift"], 0.7);
    }
}
