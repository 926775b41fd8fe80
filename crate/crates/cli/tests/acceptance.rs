//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use bodyvol_core::composition::fit_linear_named;
use bodyvol_core::phantom::{self, Arms, Level};
use bodyvol_core::pipeline::{analyze, RunConfig};
use bodyvol_core::volumetry::ShapeFeatures;
use bodyvol_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn specs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

fn spec(name: &str) -> PhantomSpec {
    PhantomSpec::load(specs_dir().join(format!("{name}.json"))).unwrap()
}

fn shipped_specs() -> Vec<(String, PhantomSpec)> {
    let mut out: Vec<_> = fs::read_dir(specs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            (
                p.file_stem().unwrap().to_string_lossy().into_owned(),
                PhantomSpec::load(&p).unwrap(),
            )
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// The three reference phantoms, upright and noise-free.
fn reference_phantoms() -> Vec<(&'static str, PhantomSpec)> {
    vec![
        ("elliptic_cylinder", spec("elliptic_cylinder")),
        ("ellipsoid", spec("ellipsoid")),
        ("humanoid", spec("humanoid")),
    ]
}

fn pipeline_volume(spec: &PhantomSpec) -> f64 {
    let (b, s) = render_phantom(spec).unwrap();
    analyze(&b, &s, &RunConfig::default(), None)
        .unwrap()
        .volume
        .total_px3
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn verdict(ok: bool, detail: Vec<String>) -> Outcome {
    let d = detail.join("; ");
    if ok {
        Ok(d)
    } else {
        Err(d)
    }
}

fn phantom_volume_accuracy() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, s) in reference_phantoms() {
        let t = Instant::now();
        let est = pipeline_volume(&s);
        let secs = t.elapsed().as_secs_f64();
        let err = rel(est, analytic_volume(&s));
        ok &= err < 0.02 && secs < 5.0;
        detail.push(format!("{name} err {:.3}% in {secs:.2}s", err * 100.0));
    }
    verdict(ok, detail)
}

fn oracle_agreement() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, s) in shipped_specs() {
        let err = rel(voxel_volume(&s, 2), analytic_volume(&s));
        ok &= err < 0.01;
        detail.push(format!("{name} {:.3}%", err * 100.0));
    }
    verdict(ok, detail)
}

fn rotation_recovery() -> Outcome {
    let base = spec("humanoid");
    let params = RotationSearchParams::default();
    let thr = HueThresholdParams::default();
    let mut ok = true;
    let mut detail = Vec::new();
    for theta in [-12.4, -5.0, 3.3, 5.0, 10.0] {
        let (back, _) = render_phantom(&base.clone().with_rotation(theta)).unwrap();
        let mask = clean_mask(&segment_green_screen(&back, &thr)).unwrap();
        let r = align_upright(&mask, &params).unwrap();
        let err = (r.angle + theta).abs();
        ok &= err <= 0.2 + 1e-9;
        detail.push(format!("{theta:+} -> {:+.1}", r.angle));
    }
    verdict(ok, detail)
}

fn segmentation_exactness() -> Outcome {
    let thr = HueThresholdParams::default();
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, s) in shipped_specs() {
        let clean = PhantomSpec {
            noise: None,
            ..s.clone()
        };
        let noisy = PhantomSpec {
            noise: Some(phantom::Noise {
                amplitude: 10,
                seed: 99,
            }),
            ..s
        };
        let (truth_back, truth_side) = phantom::render_masks(&clean).unwrap();
        let (img_back, img_side) = render_phantom(&clean).unwrap();
        let exact = clean_mask(&segment_green_screen(&img_back, &thr))
            .unwrap()
            .disagreement(&truth_back)
            + clean_mask(&segment_green_screen(&img_side, &thr))
                .unwrap()
                .disagreement(&truth_side);
        let (nb, ns) = render_phantom(&noisy).unwrap();
        let noisy_diff = clean_mask(&segment_green_screen(&nb, &thr))
            .unwrap()
            .disagreement(&truth_back)
            + clean_mask(&segment_green_screen(&ns, &thr))
                .unwrap()
                .disagreement(&truth_side);
        let body = truth_back.count() + truth_side.count();
        let frac = noisy_diff as f64 / body as f64;
        ok &= exact == 0 && frac < 0.005;
        detail.push(format!(
            "{name} clean {exact} px, noisy {:.3}%",
            frac * 100.0
        ));
    }
    verdict(ok, detail)
}

fn scaling_law() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, s) in reference_phantoms() {
        let ratio = pipeline_volume(&s.scaled(2.0)) / pipeline_volume(&s);
        ok &= rel(ratio, 8.0) < 0.03;
        detail.push(format!("{name} x{ratio:.4}"));
    }
    verdict(ok, detail)
}

/// Twelve humanoids with independently drawn level sizes and arms.
fn regression_phantoms() -> Vec<ShapeFeatures> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    (0..12)
        .map(|_| {
            let s = PhantomSpec::humanoid_stack(vec![
                Level::new("head", u(17.0, 26.0), u(19.0, 28.0), u(48.0, 70.0)),
                Level::new("neck", u(7.0, 12.0), u(8.0, 13.0), u(18.0, 32.0)),
                Level::new("trunk", u(58.0, 82.0), u(36.0, 54.0), u(220.0, 280.0)),
                Level::new("legs", u(40.0, 56.0), u(32.0, 46.0), u(210.0, 265.0)),
            ])
            .with_arms(Arms {
                width: u(18.0, 30.0),
                length: u(90.0, 140.0),
                gap: u(9.0, 15.0),
                bridge_rows: 4.0,
            });
            let (b, sd) = render_phantom(&s).unwrap();
            analyze(&b, &sd, &RunConfig::default(), None)
                .unwrap()
                .volume
                .features
        })
        .collect()
}

/// Inverse of a small symmetric matrix by Gauss-Jordan with partial pivoting.
fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            r.extend((0..k).map(|j| f64::from(u8::from(i == j))));
            r
        })
        .collect();
    for c in 0..k {
        let p = (c..k)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        let d = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..k {
            if r != c {
                let f = a[r][c];
                let src = a[c].clone();
                a[r].iter_mut().zip(src).for_each(|(v, s)| *v -= f * s);
            }
        }
    }
    a.into_iter().map(|r| r[k..].to_vec()).collect()
}

/// Standard errors of the slope estimates for unit noise, from the centred
/// design matrix.
fn unit_standard_errors(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len() as f64;
    let k = x[0].len();
    let mean: Vec<f64> = (0..k)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let norm: Vec<f64> = (0..k)
        .map(|j| {
            x.iter()
                .map(|r| (r[j] - mean[j]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..k).map(|j| (r[j] - mean[j]) / norm[j]).collect())
        .collect();
    let gram: Vec<Vec<f64>> = (0..k)
        .map(|p| {
            (0..k)
                .map(|q| z.iter().map(|r| r[p] * r[q]).sum())
                .collect()
        })
        .collect();
    let inv = invert(&gram);
    (0..k).map(|j| inv[j][j].sqrt() / norm[j]).collect()
}

fn regression_recovery() -> Outcome {
    let feats = regression_phantoms();
    let mut detail = Vec::new();

    let all: Vec<Vec<f64>> = feats.iter().map(|f| f.to_vec().to_vec()).collect();
    let names_all: Vec<String> = ShapeFeatures::NAMES.iter().map(|s| s.to_string()).collect();
    let zeros = vec![0.0; all.len()];
    match fit_linear_named(names_all, &all, &zeros) {
        Err(e @ Error::SingularSystem { .. }) => detail.push(format!("7 features: {}", e.code())),
        Err(e) => return Err(format!("7 features: unexpected {e}")),
        Ok(_) => detail.push("7 features: fitted".into()),
    }

    // total_volume is trunk_volume + limb_volume, so the planted model uses
    // the remaining six columns.
    let names: Vec<String> = ShapeFeatures::NAMES[1..]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let x: Vec<Vec<f64>> = feats.iter().map(|f| f.to_vec()[1..].to_vec()).collect();
    let planted = [2.5e-6, -4.0e-5, 0.031, 0.012, -0.027, 0.0045];
    let intercept = 11.0;
    let y: Vec<f64> = x
        .iter()
        .map(|r| intercept + r.iter().zip(planted).map(|(a, b)| a * b).sum::<f64>())
        .collect();

    let mut ok = true;
    match fit_linear_named(names.clone(), &x, &y) {
        Ok((m, rep)) => {
            let worst = m
                .coefficients
                .iter()
                .zip(planted)
                .map(|(c, p)| rel(*c, p))
                .fold(rel(m.intercept, intercept), f64::max);
            ok &= rep.r_squared >= 1.0 - 1e-9 && worst <= 1e-6;
            detail.push(format!(
                "noiseless r2 {:.12} worst rel {worst:.2e}",
                rep.r_squared
            ));
        }
        Err(e) => return Err(format!("6 features: {e}")),
    }

    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sigma = 0.01 * sd;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y_noisy: Vec<f64> = y.iter().map(|v| v + noise.sample(&mut rng)).collect();
    let se = unit_standard_errors(&x);
    match fit_linear_named(names, &x, &y_noisy) {
        Ok((m, _)) => {
            let worst = m
                .coefficients
                .iter()
                .zip(planted)
                .zip(&se)
                .map(|((c, p), s)| (c - p).abs() / (sigma * s))
                .fold(0.0, f64::max);
            ok &= worst <= 3.0;
            detail.push(format!("noisy worst {worst:.2} sigma"));
        }
        Err(e) => return Err(format!("noisy: {e}")),
    }
    verdict(ok, detail)
}

/// Ellipse arc length with semi-axes `x`, `y` by composite Simpson.
fn arc_length(x: f64, y: f64) -> f64 {
    let n = 20_000;
    let h = 2.0 * PI / n as f64;
    let f = |t: f64| (x * x * t.sin().powi(2) + y * y * t.cos().powi(2)).sqrt();
    let mut s = f(0.0) + f(2.0 * PI);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn slice_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_area: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (rng.gen_range(0.01..1000.0), rng.gen_range(0.01..1000.0));
        worst_area = worst_area.max(rel(slice_area(a, b), PI * a * b / 4.0));
    }
    let mut worst_perim: f64 = 0.0;
    let mut worst_ratio = 1.0;
    for i in 0..=80 {
        let ratio = 1.0 + i as f64 * 0.05;
        let (a, b) = (40.0 * ratio, 40.0);
        let e = rel(slice_perimeter(a, b), arc_length(a / 2.0, b / 2.0));
        if e > worst_perim {
            worst_perim = e;
            worst_ratio = ratio;
        }
    }
    verdict(
        worst_area <= 1e-12 && worst_perim < 2e-4,
        vec![
            format!("area worst rel {worst_area:.1e}"),
            format!(
                "perimeter worst {:.4}% at {worst_ratio:.2}:1",
                worst_perim * 100.0
            ),
        ],
    )
}

fn bodyvol(args: &[&str], out: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_bodyvol"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "off")
        .env_remove("BODYVOL_CONFIG")
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "bodyvol {args:?} failed: {status}");
}

fn without_timings(report: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(report).unwrap();
    for s in v["stages"].as_array_mut().unwrap() {
        s["ms"] = serde_json::Value::Null;
    }
    v.to_string()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut manifest = String::from("id,back,side\n");
    for name in ["elliptic_cylinder", "humanoid_rotated", "ellipsoid"] {
        let dir = root.join(name);
        bodyvol(
            &[
                "phantom",
                specs_dir().join(format!("{name}.json")).to_str().unwrap(),
            ],
            &dir,
        );
        manifest.push_str(&format!("{name},{name}/back.png,{name}/side.png\n"));
    }
    fs::write(root.join("manifest.csv"), manifest).unwrap();

    let run = root.join("run");
    let back = root.join("humanoid_rotated/back.png");
    let side = root.join("humanoid_rotated/side.png");
    let files = [
        "report.json",
        "volume.json",
        "profiles.csv",
        "back_aligned.png",
        "side_aligned.png",
    ];
    let mut first = Vec::new();
    for i in 0..2 {
        bodyvol(
            &["pipeline", back.to_str().unwrap(), side.to_str().unwrap()],
            &run,
        );
        let snap: Vec<Vec<u8>> = files
            .iter()
            .map(|f| {
                let bytes = fs::read(run.join(f)).unwrap();
                if *f == "report.json" {
                    without_timings(std::str::from_utf8(&bytes).unwrap()).into_bytes()
                } else {
                    bytes
                }
            })
            .collect();
        if i == 0 {
            first = snap;
        } else if first != snap {
            return Err("pipeline rerun differs".into());
        }
    }

    let m = root.join("manifest.csv");
    let m = m.to_str().unwrap();
    bodyvol(&["batch", m, "--workers", "1"], &root.join("b1"));
    bodyvol(&["batch", m, "--workers", "4"], &root.join("b4"));
    let s1 = fs::read(root.join("b1/summary.csv")).unwrap();
    let s4 = fs::read(root.join("b4/summary.csv")).unwrap();
    verdict(
        s1 == s4,
        vec![format!(
            "pipeline rerun identical; batch summaries {} bytes, equal {}",
            s1.len(),
            s1 == s4
        )],
    )
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("phantom volume accuracy", phantom_volume_accuracy),
        ("voxel oracle agreement", oracle_agreement),
        ("rotation recovery", rotation_recovery),
        ("segmentation exactness", segmentation_exactness),
        ("scaling law", scaling_law),
        ("regression recovery", regression_recovery),
        ("slice formulas", slice_formulas),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({d})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
