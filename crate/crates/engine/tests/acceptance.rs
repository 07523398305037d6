//! Acceptance suite: one PASS/FAIL line per criterion, each with its own
//! runtime budget. Run with `cargo test -p slicetrack-engine --test acceptance`.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicetrack_core::io::{load_manifest, load_volume, save_volume, Datatype};
use slicetrack_core::mesh::{extract_surface, Mesh};
use slicetrack_core::metrics::{dice_counts, ols_fit, volumetric_dice, EvalRecord};
use slicetrack_core::volume::{rle_decode, rle_encode, tumor_extent, PromptKind};
use slicetrack_core::{
    Dims3, IntensityVolume, Mask3D, SliceMask2D, Spacing, Strategy, TumorExtent,
};
use slicetrack_engine::backend::{
    BackendRegistry, ExternalSpec, MaskRef, SessionConfig, VolumeRef,
};
use slicetrack_engine::eval::{derive_prompt, evaluate_manifest, EvalConfig};
use slicetrack_engine::phantom::{distractor_disc, ellipsoid, uniform_disc, write_dataset, Phantom};
use slicetrack_engine::{build_plan, run_propagation};

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mask(r: &mut ChaCha8Rng, dims: Dims3, density: f64) -> Mask3D {
    let bits = (0..dims.len()).map(|_| r.gen_bool(density)).collect();
    Mask3D::new(dims, Spacing::unit(), bits).unwrap()
}

fn dice_oracle() -> Outcome {
    let mut r = rng(1);
    let dims = Dims3::new(8, 8, 8).unwrap();
    for i in 0..1000 {
        let (dp, dg) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let p = random_mask(&mut r, dims, dp);
        let g = random_mask(&mut r, dims, dg);
        let (mut both, mut np, mut ng) = (0u64, 0u64, 0u64);
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    let (a, b) = (p.get(z, y, x), g.get(z, y, x));
                    both += (a && b) as u64;
                    np += a as u64;
                    ng += b as u64;
                }
            }
        }
        let c = dice_counts(&p, &g).unwrap();
        ensure!(
            c.numerator() == 2 * both && c.denominator() == np + ng,
            "pair {i}: counts {}/{} vs {}/{}",
            c.numerator(),
            c.denominator(),
            2 * both,
            np + ng
        );
        let expected = if np + ng == 0 {
            1.0
        } else {
            (2 * both) as f64 / (np + ng) as f64
        };
        let d = volumetric_dice(&p, &g).unwrap();
        ensure!(d.to_bits() == expected.to_bits(), "pair {i}: dice {d} vs {expected}");
    }
    Ok(())
}

fn random_ellipsoids(n: usize, seed: u64) -> Vec<Phantom> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let dims = Dims3::new(r.gen_range(10..20), r.gen_range(12..24), r.gen_range(12..24)).unwrap();
            let radii = [r.gen_range(1.5..4.5), r.gen_range(2.0..5.5), r.gen_range(2.0..5.5)];
            let center = [
                r.gen_range(radii[0]..dims.d as f64 - 1.0 - radii[0]),
                r.gen_range(radii[1]..dims.h as f64 - 1.0 - radii[1]),
                r.gen_range(radii[2]..dims.w as f64 - 1.0 - radii[2]),
            ];
            ellipsoid(&format!("ell{i:02}"), dims, center, radii)
        })
        .collect()
}

fn evaluate(dir: &Path, phantoms: &[Phantom], cfg: &EvalConfig) -> Result<Vec<EvalRecord>, String> {
    let manifest = write_dataset(dir, phantoms).map_err(|e| e.to_string())?;
    let m = load_manifest(manifest).map_err(|e| e.to_string())?;
    let report = evaluate_manifest(&m, &BackendRegistry::new(), cfg).map_err(|e| e.to_string())?;
    ensure!(report.errors.is_empty(), "patient errors: {:?}", report.errors);
    Ok(report.records)
}

fn identity_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let phantoms = random_ellipsoids(20, 2);
    for kind in [PromptKind::Box, PromptKind::Mask] {
        let mut cfg = EvalConfig::new("gt-oracle");
        cfg.prompt_kind = kind;
        let records = evaluate(dir.path(), &phantoms, &cfg)?;
        ensure!(records.len() == 60, "{} records", records.len());
        for r in &records {
            ensure!(r.dice == 1.0, "{} {} {:?}: dice {}", r.patient_id, r.strategy, kind, r.dice);
        }
    }
    Ok(())
}

fn per_patient(records: &[EvalRecord]) -> BTreeMap<&str, BTreeMap<Strategy, f64>> {
    let mut out: BTreeMap<&str, BTreeMap<Strategy, f64>> = BTreeMap::new();
    for r in records {
        out.entry(&r.patient_id).or_default().insert(r.strategy, r.dice);
    }
    out
}

fn strategy_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let phantoms: Vec<Phantom> = (9..=16)
        .map(|span| {
            let dims = Dims3::new(span + 4, 24, 24).unwrap();
            uniform_disc(&format!("uni{span:02}"), dims, 2, span + 1, (12, 12), 6 + span % 3)
        })
        .collect();
    for drift in [0.5, 1.0] {
        let mut cfg = EvalConfig::new("gt-oracle");
        cfg.params.insert("drift".into(), drift);
        let records = evaluate(dir.path(), &phantoms, &cfg)?;
        for (id, d) in per_patient(&records) {
            let co = d[&Strategy::CenterOutward];
            for s in [Strategy::BottomToTop, Strategy::TopToBottom] {
                ensure!(co >= d[&s], "{id} drift {drift}: center-outward {co} < {s} {}", d[&s]);
                if drift == 1.0 {
                    ensure!(co > d[&s], "{id} drift 1.0: center-outward {co} not > {s} {}", d[&s]);
                }
            }
        }
    }
    Ok(())
}

fn prompt_kind_refinement() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let phantoms: Vec<Phantom> = (0..8)
        .map(|i| {
            let dims = Dims3::new(12, 28, 28).unwrap();
            distractor_disc(&format!("dis{i}"), dims, 2 + i % 3, 8 + i % 4, (14, 13 + i % 3), 5 + i % 4)
        })
        .collect();
    let mut by_kind = Vec::new();
    for kind in [PromptKind::Box, PromptKind::Mask] {
        let mut cfg = EvalConfig::new("threshold-oracle");
        cfg.params.insert("tau".into(), 100.0);
        cfg.prompt_kind = kind;
        by_kind.push(evaluate(dir.path(), &phantoms, &cfg)?);
    }
    let (boxes, masks) = (per_patient(&by_kind[0]), per_patient(&by_kind[1]));
    for (id, b) in &boxes {
        for (s, bd) in b {
            let md = masks[id][s];
            ensure!(md >= *bd, "{id} {s}: mask {md} < box {bd}");
        }
    }
    Ok(())
}

fn plan_coverage() -> Outcome {
    for span in 1..=500usize {
        for z_first in [0usize, 7] {
            let z_last = z_first + span - 1;
            let e = TumorExtent {
                z_first,
                z_last,
                z_center: (z_first + z_last) / 2,
            };
            for s in Strategy::ALL {
                let p = build_plan(s, &e).map_err(|e| e.to_string())?;
                let mut seen = vec![false; z_last + 2];
                seen[p.seed_z] = true;
                let mut max_step = 0;
                for c in &p.chains {
                    let mut prev = p.seed_z;
                    for (i, &z) in c.iter().enumerate() {
                        ensure!(z.abs_diff(prev) == 1, "{s} span {span}: jump {prev}->{z}");
                        ensure!(z < seen.len() && !seen[z], "{s} span {span}: {z} revisited or out of range");
                        seen[z] = true;
                        prev = z;
                        max_step = max_step.max(i + 1);
                    }
                }
                let covered = seen.iter().filter(|&&b| b).count();
                ensure!(
                    covered == span && seen[z_first..=z_last].iter().all(|&b| b),
                    "{s} span {span}: coverage {covered}"
                );
                let bound = match s {
                    Strategy::CenterOutward => (span - 1).div_ceil(2),
                    _ => span - 1,
                };
                ensure!(max_step == bound, "{s} span {span}: max step {max_step} != {bound}");
            }
        }
    }
    Ok(())
}

fn expand_counts(counts: &[u64]) -> Vec<bool> {
    let mut bits = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        bits.extend(std::iter::repeat(i % 2 == 1).take(c as usize));
    }
    bits
}

fn codec_roundtrips() -> Outcome {
    let mut r = rng(6);
    for i in 0..1000 {
        let (h, w) = (r.gen_range(1..40), r.gen_range(1..40));
        let density = r.gen_range(0.0..1.0);
        let bits: Vec<bool> = (0..h * w).map(|_| r.gen_bool(density)).collect();
        let m = SliceMask2D::new(h, w, bits.clone()).unwrap();
        let counts = rle_encode(&m);
        ensure!(expand_counts(&counts) == bits, "mask {i}: independent decode differs");
        ensure!(counts.iter().skip(1).all(|&c| c > 0), "mask {i}: zero-length interior run");
        let back = rle_decode(&counts, h, w).map_err(|e| e.to_string())?;
        ensure!(back == m, "mask {i}: roundtrip differs");
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for dt in Datatype::ALL {
        for gzip in [false, true] {
            for trial in 0..3 {
                let dims = Dims3::new(r.gen_range(1..6), r.gen_range(1..9), r.gen_range(1..9)).unwrap();
                let spacing = Spacing::new(
                    r.gen_range(1..40) as f64 / 10.0,
                    r.gen_range(1..40) as f64 / 10.0,
                    r.gen_range(1..40) as f64 / 10.0,
                )
                .map_err(|e| e.to_string())?;
                let voxels: Vec<f32> = (0..dims.len())
                    .map(|_| match dt {
                        Datatype::U8 => r.gen_range(0..=255) as f32,
                        Datatype::I16 => r.gen_range(-32768..=32767) as f32,
                        Datatype::U16 => r.gen_range(0..=65535) as f32,
                        Datatype::F32 => r.gen_range(-1e6f32..1e6),
                    })
                    .collect();
                let v = IntensityVolume::new(dims, spacing, voxels).map_err(|e| e.to_string())?;
                let path = dir.path().join(format!("{dt:?}_{gzip}_{trial}.nii{}", if gzip { ".gz" } else { "" }));
                save_volume(&v, &path, dt, gzip).map_err(|e| e.to_string())?;
                let back = load_volume(&path).map_err(|e| e.to_string())?;
                ensure!(back.dims() == v.dims(), "{dt:?} gzip={gzip}: dims differ");
                ensure!(back.spacing() == v.spacing(), "{dt:?} gzip={gzip}: spacing differs");
                ensure!(
                    back.voxels().iter().zip(v.voxels()).all(|(a, b)| a.to_bits() == b.to_bits()),
                    "{dt:?} gzip={gzip}: voxels differ"
                );
            }
        }
    }
    Ok(())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn ols_correctness() -> Outcome {
    let line: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
    let f = ols_fit(&line).map_err(|e| e.to_string())?;
    ensure!(
        (f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12 && (f.r_squared - 1.0).abs() <= 1e-9,
        "exact line: {f:?}"
    );

    let mut r = rng(7);
    for i in 0..100 {
        let n = r.gen_range(3..60);
        let (a, b) = (r.gen_range(-5.0..5.0), r.gen_range(-10.0..10.0));
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x: f64 = r.gen_range(-20.0..20.0);
                (x, a * x + b + r.gen_range(-3.0..3.0))
            })
            .collect();
        let f = ols_fit(&pts).map_err(|e| e.to_string())?;
        // Normal equations [n Σx; Σx Σx²][b a]ᵀ = [Σy Σxy]ᵀ by Cramer's rule.
        let (sx, sy, sxx, sxy) = pts.iter().fold((0.0, 0.0, 0.0, 0.0), |s, &(x, y)| {
            (s.0 + x, s.1 + y, s.2 + x * x, s.3 + x * y)
        });
        let nf = n as f64;
        let det = nf * sxx - sx * sx;
        let slope = (nf * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        ensure!(
            rel_close(f.slope, slope, 1e-6) && rel_close(f.intercept, intercept, 1e-6),
            "dataset {i}: fit {f:?} vs oracle ({slope}, {intercept})"
        );
        let res: Vec<f64> = pts.iter().map(|&(x, y)| y - f.predict(x)).collect();
        let scale = pts.iter().map(|&(x, y)| (x * y).abs()).sum::<f64>().max(1.0);
        let sum_r: f64 = res.iter().sum();
        let sum_xr: f64 = res.iter().zip(&pts).map(|(e, p)| e * p.0).sum();
        ensure!(
            sum_r.abs() <= 1e-9 * scale && sum_xr.abs() <= 1e-9 * scale,
            "dataset {i}: residuals not orthogonal ({sum_r}, {sum_xr})"
        );
    }
    Ok(())
}

fn edge_counts(mesh: &Mesh) -> HashMap<(u32, u32), usize> {
    let mut edges = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    edges
}

fn exposed_faces(m: &Mask3D) -> [usize; 3] {
    let d = m.dims();
    let on = |z: i64, y: i64, x: i64| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d.d
            && (y as usize) < d.h
            && (x as usize) < d.w
            && m.get(z as usize, y as usize, x as usize)
    };
    // Faces normal to z, y and x respectively.
    let mut n = [0; 3];
    for z in 0..d.d as i64 {
        for y in 0..d.h as i64 {
            for x in 0..d.w as i64 {
                if !on(z, y, x) {
                    continue;
                }
                n[0] += !on(z - 1, y, x) as usize + !on(z + 1, y, x) as usize;
                n[1] += !on(z, y - 1, x) as usize + !on(z, y + 1, x) as usize;
                n[2] += !on(z, y, x - 1) as usize + !on(z, y, x + 1) as usize;
            }
        }
    }
    n
}

fn mesh_invariants() -> Outcome {
    let mut one = Mask3D::empty(Dims3::new(1, 1, 1).unwrap(), Spacing::unit());
    one.set(0, 0, 0, true);
    let cube = extract_surface(&one, Spacing::unit());
    let e = edge_counts(&cube).len();
    let (v, f) = (cube.vertices.len(), cube.triangles.len());
    ensure!(v == 8 && f == 12, "cube has {v} vertices, {f} triangles");
    ensure!((cube.surface_area() - 6.0).abs() < 1e-12, "cube area {}", cube.surface_area());
    ensure!(v as i64 - e as i64 + f as i64 == 2, "cube Euler {}", v as i64 - e as i64 + f as i64);

    let mut r = rng(8);
    for i in 0..100 {
        let dims = Dims3::new(r.gen_range(1..7), r.gen_range(1..7), r.gen_range(1..7)).unwrap();
        let density = r.gen_range(0.1..0.9);
        let m = random_mask(&mut r, dims, density);
        let sp = Spacing::new(r.gen_range(0.5..3.0), r.gen_range(0.5..2.0), r.gen_range(0.5..2.0))
            .map_err(|e| e.to_string())?;
        let mesh = extract_surface(&m, sp);
        for (edge, c) in edge_counts(&mesh) {
            ensure!(c == 2, "mask {i}: edge {edge:?} used {c} times");
        }
        let [fz, fy, fx] = exposed_faces(&m);
        let area = fz as f64 * sp.y * sp.x + fy as f64 * sp.z * sp.x + fx as f64 * sp.z * sp.y;
        ensure!(rel_close(mesh.surface_area(), area, 1e-6), "mask {i}: area {} vs {area}", mesh.surface_area());
        let vol = m.count() as f64 * sp.voxel_volume();
        ensure!(rel_close(mesh.signed_volume(), vol, 1e-6), "mask {i}: volume {} vs {vol}", mesh.signed_volume());
    }
    Ok(())
}

fn protocol_conformance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = ellipsoid("pc", Dims3::new(16, 20, 22).unwrap(), [8.0, 10.0, 11.0], [6.0, 6.0, 7.0]);
    write_dataset(dir.path(), std::slice::from_ref(&p)).map_err(|e| e.to_string())?;
    let (img, gt) = (dir.path().join("pc.nii.gz"), dir.path().join("pc_gt.nii.gz"));
    let mut reg = BackendRegistry::new();
    reg.register_external(
        "stdio-gt",
        ExternalSpec::new(env!("CARGO_BIN_EXE_vp-mock-adapter"))
            .arg("gt-oracle")
            .timeout(Duration::from_secs(10)),
    );
    let remote = SessionConfig::new("stdio-gt", VolumeRef::Path(img))
        .with_ground_truth(MaskRef::Path(gt))
        .with_param("drift", 0.4)
        .with_param("flip_prob", 0.03)
        .with_param("seed", 17.0);
    let local = SessionConfig {
        backend_id: "gt-oracle".into(),
        volume: VolumeRef::Loaded(Arc::new(p.volume.clone())),
        ground_truth: Some(MaskRef::Loaded(Arc::new(p.gt.clone()))),
        params: remote.params.clone(),
    };
    let extent = tumor_extent(&p.gt, Default::default()).map_err(|e| e.to_string())?;
    for s in Strategy::ALL {
        for kind in [PromptKind::Box, PromptKind::Mask] {
            let plan = build_plan(s, &extent).map_err(|e| e.to_string())?;
            let prompt = derive_prompt(&p.gt, plan.seed_z, kind, 0).ok_or("empty seed slice")?;
            let mut outs = Vec::new();
            for cfg in [&remote, &local] {
                let mut session = reg.open_session(cfg).map_err(|e| e.to_string())?;
                let (m, _) = run_propagation(&plan, &mut session, &prompt).map_err(|e| e.to_string())?;
                session.close().map_err(|e| e.to_string())?;
                outs.push(m);
            }
            ensure!(outs[0].bits() == outs[1].bits(), "{s} {kind:?}: stdio and in-process masks differ");
        }
    }
    Ok(())
}

fn report_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = write_dataset(dir.path(), &random_ellipsoids(6, 10)).map_err(|e| e.to_string())?;
    let run = |threads| -> Result<String, String> {
        let m = load_manifest(&manifest).map_err(|e| e.to_string())?;
        let mut cfg = EvalConfig::new("gt-oracle");
        cfg.params.insert("drift".into(), 0.3);
        cfg.params.insert("flip_prob".into(), 0.05);
        cfg.seed = Some(42);
        cfg.threads = threads;
        let out = dir.path().join(format!("report{threads}.json"));
        let report = evaluate_manifest(&m, &BackendRegistry::new(), &cfg).map_err(|e| e.to_string())?;
        slicetrack_engine::eval::write_report(&report, &out).map_err(|e| e.to_string())?;
        std::fs::read_to_string(out).map_err(|e| e.to_string())
    };
    let (a, b, c) = (run(1)?, run(1)?, run(4)?);
    ensure!(a == b, "repeated runs differ");
    ensure!(a == c, "thread count changes the report");
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("dice oracle equivalence", Duration::from_secs(5), dice_oracle),
        ("identity pipeline", Duration::from_secs(10), identity_pipeline),
        ("strategy ordering under drift", Duration::from_secs(10), strategy_ordering),
        ("prompt-kind refinement", Duration::from_secs(10), prompt_kind_refinement),
        ("plan coverage", Duration::from_secs(1), plan_coverage),
        ("codec and file roundtrips", Duration::from_secs(10), codec_roundtrips),
        ("OLS correctness", Duration::from_secs(1), ols_correctness),
        ("mesh invariants", Duration::from_secs(10), mesh_invariants),
        ("protocol conformance", Duration::from_secs(5), protocol_conformance),
        ("report determinism", Duration::from_secs(30), report_determinism),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()))
            .and_then(|()| {
                let t = start.elapsed();
                if t > budget {
                    Err(format!("took {t:.2?}, budget {budget:?}"))
                } else {
                    Ok(())
                }
            });
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(()) => println!("PASS  {name} ({ms:.0} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({ms:.0} ms): {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
