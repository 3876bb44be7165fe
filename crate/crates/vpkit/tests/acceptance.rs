//! Acceptance checks. Prints one `[PASS]` or `[FAIL]` line per criterion
//! and exits non-zero if any fails or runs past its time budget.

mod common;
#[path = "../../core/tests/naive/mod.rs"]
mod naive;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{call, fixture, rect_record, run_json, s, temp_files, Server, ServiceFixture};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use vpkit::io::{decode_latent, encode_latent};
use vpkit_core::edge::{sobel, vp_alignment_score, VpLossConfig, WeightingMode};
use vpkit_core::guidance::{
    add_noise, cfg_dual, mock::CornerConstants, predict_x0, DiffusionSchedule, GuidanceWeights, LatentTensor,
    NoisePredictor,
};
use vpkit_core::HomogeneousPoint;

type Check = fn() -> Result<String, String>;

const CRITERIA: [(&str, u64, Check); 9] = [
    ("gradient matches finite differences", 10, gradient_check),
    ("alignment score equals the naive loop", 30, score_oracle),
    ("threshold weighting separates 1° from 10°", 5, weighting_separation),
    ("guidance identities", 5, guidance_identities),
    ("inpainting contract", 5, inpainting_contract),
    ("synthetic angle accuracy", 60, synthetic_aa),
    ("Douglas-Peucker bound and idempotence", 10, douglas_peucker),
    ("mask symmetry, monotonicity and golden bytes", 5, mask_properties),
    ("service round-trip and crash safety", 30, service_round_trip),
];

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, budget, check)) in CRITERIA.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let budget = Duration::from_secs(*budget);
        let (ok, detail) = match result {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {}s budget", budget.as_secs())),
            Err(e) => (false, e),
        };
        failures += usize::from(!ok);
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("[{tag}] {}. {name} ({:.2}s): {detail}", i + 1, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failures, CRITERIA.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_check() -> Result<String, String> {
    let (code, r) = run_json(&["grad-check", "--size", "16", "--trials", "5"]);
    let err = r["max_rel_err"].as_f64().ok_or("no max_rel_err")?;
    ensure(r["config"]["step"] == 1e-4 && r["config"]["probes"] == 50, || format!("unexpected config {}", r["config"]))?;
    ensure(r["loss_config"]["sigmoid_steepness"] == 50.0, || "unexpected loss config".into())?;
    let probed: Vec<u64> = r["trials"].as_array().ok_or("no trials")?.iter().map(|t| t["probed"].as_u64().unwrap_or(0)).collect();
    ensure(code == 0 && r["pass"] == true && err < 1e-3, || format!("exit {code}, max relative error {err:e}"))?;
    ensure(probed.len() == 5 && probed.iter().all(|p| *p > 0), || format!("probed {probed:?}"))?;
    Ok(format!("max relative error {err:.2e} over 5 trials, probes per trial {probed:?}"))
}

fn score_oracle() -> Result<String, String> {
    let sig = naive::max_score_discrepancy(WeightingMode::SigmoidThreshold, 100, 11);
    let dot = naive::max_score_discrepancy(WeightingMode::DotProduct, 100, 12);
    ensure(sig < 1e-9 && dot < 1e-9, || format!("relative difference sigmoid {sig:e}, dot {dot:e}"))?;
    Ok(format!("max relative difference sigmoid {sig:.1e}, dot {dot:.1e} (300 field/VP pairs each)"))
}

/// Alignment scores of a vertical anti-aliased step edge on a 32×32 image
/// against a VP at infinity tilted 0°, 1° and 10° from vertical, generated
/// by the naive oracle.
const WEIGHTING_GOLDEN: [(f64, f64); 3] = [(0.0, 252.78058797718083), (1.0, 248.42772570931223), (10.0, 3.2194120228189695)];

fn tilted_vp(deg: f64) -> HomogeneousPoint {
    let r = deg.to_radians();
    HomogeneousPoint::at_infinity(r.sin(), r.cos()).unwrap()
}

fn weighting_separation() -> Result<String, String> {
    let img = common::step_edge(32, 0.0);
    let ef = sobel(&img).map_err(|e| e.to_string())?;
    let rows = naive::to_rows(32, img.data());
    let cfg = VpLossConfig::default();
    let mut scores = Vec::new();
    for (deg, golden) in WEIGHTING_GOLDEN {
        let vp = tilted_vp(deg);
        let fast = vp_alignment_score(&ef, &vp, &cfg);
        let slow = naive::naive_score(&rows, vp.to_array(), &naive::NaiveParams::default());
        ensure((fast - golden).abs() <= 1e-9 * golden.abs(), || format!("{deg}°: score {fast:.12} vs golden {golden:.12}"))?;
        ensure((slow - golden).abs() <= 1e-9 * golden.abs(), || format!("{deg}°: oracle {slow:.12} vs golden {golden:.12}"))?;
        scores.push(fast);
    }
    let (r1, r10) = (scores[1] / scores[0], scores[2] / scores[0]);
    ensure((r1 - 1.0).abs() <= 0.05, || format!("1° ratio {r1:.4}"))?;
    ensure(r10 < 0.05, || format!("10° ratio {r10:.4}"))?;
    Ok(format!("score ratio to aligned: 1° {r1:.4}, 10° {r10:.4}"))
}

/// Seeded pseudo-random prediction that differs per timestep and corner.
struct Scrambled;

impl NoisePredictor for Scrambled {
    fn predict(&mut self, z: &LatentTensor, t: usize, text_on: bool, cond_on: bool) -> vpkit_core::Result<LatentTensor> {
        let seed = (t as u64) << 2 | u64::from(text_on) << 1 | u64::from(cond_on);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(LatentTensor::gaussian(z.shape().to_vec(), &mut rng))
    }
}

fn guidance_identities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = LatentTensor::gaussian(vec![4, 8, 8], &mut rng);
    let unit = GuidanceWeights::new(1.0, 1.0).map_err(|e| e.to_string())?;
    for t in [1, 250, 999] {
        let guided = cfg_dual(&mut Scrambled, &z, t, unit).map_err(|e| e.to_string())?;
        let full = Scrambled.predict(&z, t, true, true).map_err(|e| e.to_string())?;
        let same = guided.data().iter().zip(full.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("t={t}: unit weights differ from the conditioned prediction"))?;
    }

    let w = GuidanceWeights::new(2.0, 3.0).map_err(|e| e.to_string())?;
    let hand = cfg_dual(&mut CornerConstants([0.0, 1.0, 2.0, 3.0]), &LatentTensor::scalar(0.0), 10, w)
        .map_err(|e| e.to_string())?
        .data()[0];
    ensure(hand == 7.0, || format!("corner case gave {hand}"))?;

    let sched = DiffusionSchedule::latent_diffusion_default();
    let z0 = LatentTensor::gaussian(vec![4, 8, 8], &mut rng);
    let eps = LatentTensor::gaussian(vec![4, 8, 8], &mut rng);
    let mut worst: f64 = 0.0;
    for t in 0..=sched.timesteps() {
        let zt = add_noise(&z0, &eps, &sched, t).map_err(|e| e.to_string())?;
        let back = predict_x0(&zt, &eps, &sched, t).map_err(|e| e.to_string())?;
        worst = worst.max(back.max_abs_diff(&z0).map_err(|e| e.to_string())?);
    }
    ensure(worst < 1e-12, || format!("inversion error {worst:e}"))?;
    Ok(format!("unit weights bitwise, corners give {hand}, inversion error {worst:.1e} over {} steps", sched.timesteps()))
}

fn inpaint(dir: &Path, mask_value: u8, predictor: &str) -> Result<(LatentTensor, LatentTensor), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed(mask_value));
    let z0 = LatentTensor::gaussian(vec![4, 4, 4], &mut rng);
    let z0 = decode_latent(&encode_latent(&z0)).map_err(|e| e.message)?;
    let (zp, mp, sp, op) = (dir.join("z0.vplt"), dir.join("mask.png"), dir.join("sched.json"), dir.join("out.vplt"));
    std::fs::write(&zp, encode_latent(&z0)).map_err(|e| e.to_string())?;
    image::GrayImage::from_pixel(32, 32, image::Luma([mask_value])).save(&mp).map_err(|e| e.to_string())?;
    let sched = DiffusionSchedule::latent_diffusion_default();
    std::fs::write(&sp, serde_json::to_vec(&sched).unwrap()).map_err(|e| e.to_string())?;
    let predictor = predictor.replace("{z0}", s(&zp));
    let args = ["simulate-inpaint", "--z0", s(&zp), "--mask", s(&mp), "--schedule", s(&sp), "--out", s(&op)];
    let mut args = args.to_vec();
    args.extend(["--predictor", &predictor, "--steps", "10", "--omega1", "3", "--omega2", "2"]);
    let (code, v) = run_json(&args);
    ensure(code == 0, || format!("simulate-inpaint exited {code}: {v}"))?;
    let out = vpkit::io::read_latent(&op).map_err(|e| e.message)?;
    Ok((z0, out))
}

fn rng_seed(mask_value: u8) -> u64 {
    100 + u64::from(mask_value)
}

fn inpainting_contract() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (z0, out) = inpaint(dir.path(), 0, "mock:const:0.7")?;
    ensure(encode_latent(&out) == encode_latent(&z0), || "zero mask changed the latent".into())?;
    let (z0, out) = inpaint(dir.path(), 255, "mock:oracle:{z0}")?;
    let err = out.max_abs_diff(&z0).map_err(|e| e.to_string())?;
    ensure(err < 1e-6, || format!("perfect predictor error {err:e}"))?;
    Ok(format!("zero mask bitwise, perfect predictor error {err:.1e} after 10 steps"))
}

fn synthetic_aa() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = s(dir.path());
    let (code, v) = run_json(&["synth-boxes", "--out", d, "--count", "20"]);
    ensure(code == 0, || format!("synth-boxes exited {code}: {v}"))?;
    let report = dir.path().join("aa.json");
    let (code, v) = run_json(&["eval-aa", "--images", d, "--annotations", d, "--out", s(&report)]);
    ensure(code == 0, || format!("eval-aa exited {code}: {v}"))?;
    let r: Value = serde_json::from_slice(&std::fs::read(&report).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let n = r["per_image"].as_array().map_or(0, Vec::len);
    let aa3 = r["aa_at"]["3"].as_f64().unwrap_or(-1.0);
    let mean = r["mean_error_deg"].as_f64().unwrap_or(90.0);
    let worst = r["per_image"].as_array().into_iter().flatten().filter_map(|p| p["error_deg"].as_f64()).fold(0.0, f64::max);
    ensure(n == 20 && aa3 == 1.0 && mean < 1.0, || format!("{n} images, AA@3° {aa3}, mean {mean:.3}°, worst {worst:.3}°"))?;
    Ok(format!("20 scenes, AA@3° {aa3:.2}, mean error {mean:.3}°, worst {worst:.3}°"))
}

fn douglas_peucker() -> Result<String, String> {
    naive::polyline::check_douglas_peucker(1000, 21)?;
    Ok("1000 polylines within ε (exact integer predicate) and idempotent".into())
}

fn mask_properties() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let golden = std::fs::read(fixture("rect.mask.png")).map_err(|e| e.to_string())?;
    let make = |annotation: &Path, out: &Path, extra: &[&str]| -> Result<Vec<u8>, String> {
        let mut args = vec!["make-mask", "--annotation", s(annotation), "--out", s(out)];
        args.extend_from_slice(extra);
        let (code, v) = run_json(&args);
        ensure(code == 0, || format!("make-mask exited {code}: {v}"))?;
        std::fs::read(out).map_err(|e| e.to_string())
    };
    let rect = fixture("rect.annotation.json");
    ensure(make(&rect, &dir.path().join("a.png"), &[])? == golden, || "rectangle mask differs from golden".into())?;

    let mut rec = rect_record();
    let pair = &mut rec["pairs"][0];
    let original = pair["original"].take();
    pair["original"] = pair["desired"].take();
    pair["desired"] = original;
    let swapped = dir.path().join("swapped.json");
    std::fs::write(&swapped, serde_json::to_vec(&rec).unwrap()).map_err(|e| e.to_string())?;
    ensure(make(&swapped, &dir.path().join("b.png"), &[])? == golden, || "swapping outlines changed the mask".into())?;

    let mut previous: Option<image::GrayImage> = None;
    let mut counts = Vec::new();
    for r in 0..=6 {
        let png = make(&rect, &dir.path().join(format!("d{r}.png")), &["--dilate", &r.to_string()])?;
        let img = image::load_from_memory(&png).map_err(|e| e.to_string())?.to_luma8();
        if let Some(prev) = &previous {
            ensure(prev.pixels().zip(img.pixels()).all(|(a, b)| a[0] <= b[0]), || format!("radius {r} lost pixels"))?;
        }
        counts.push(img.pixels().filter(|p| p[0] == 255).count());
        previous = Some(img);
    }
    Ok(format!("golden bytes equal, swap-symmetric, set pixels by radius 0..=6: {counts:?}"))
}

fn service_round_trip() -> Result<String, String> {
    let f = ServiceFixture::new();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    let exports = rt.block_on(async {
        let app = vpkit::service::router(f.store());
        let put = call(&app, "PUT", "/api/images/rect/annotation", &[], serde_json::to_vec(&rect_record()).unwrap()).await;
        ensure(put.status == 200, || format!("PUT returned {}", put.status))?;
        let got = call(&app, "GET", "/api/images/rect/annotation", &[], vec![]).await;
        let parse = |b: &[u8]| vpkit::store::AnnotationRecord::parse(b).map(|r| r.without_timestamps());
        let sent = parse(&serde_json::to_vec(&rect_record()).unwrap()).map_err(|e| e.message)?;
        ensure(parse(&got.body).map_err(|e| e.message)? == sent, || "GET differs from PUT".into())?;

        let req = serde_json::to_vec(&json!({"name": "accept", "image_ids": ["rect"]})).unwrap();
        let mut runs = Vec::new();
        for _ in 0..2 {
            let r = call(&app, "POST", "/api/export", &[], req.clone()).await;
            ensure(r.status == 200, || format!("export returned {}", r.status))?;
            runs.push(read_tree(&f.store_root().join("exports/accept"))?);
        }
        ensure(runs[0] == runs[1], || "exports differ".into())?;
        Ok::<_, String>(runs[0].len())
    })?;
    drop(rt);

    let record_path = f.store_root().join("rect.annotation.json");
    let before = std::fs::read(&record_path).map_err(|e| e.to_string())?;
    let server = Server::spawn(&f.images(), &f.store_root(), &["--inject-fault", "abort-mid-write"]);
    let mut rec = rect_record();
    rec["prompt"] = json!("a replacement prompt long enough to span the cut");
    let reply = server.request("PUT", "/api/images/rect/annotation", &[], &serde_json::to_vec(&rec).unwrap());
    ensure(reply.is_none(), || "server answered despite the injected crash".into())?;
    let mut server = server;
    let status = server.child.wait().map_err(|e| e.to_string())?;
    ensure(!status.success(), || "server exited cleanly".into())?;
    let after = std::fs::read(&record_path).map_err(|e| e.to_string())?;
    ensure(after == before, || "record changed after the crash".into())?;
    vpkit::store::AnnotationRecord::parse(&after).map_err(|e| format!("record unreadable: {}", e.message))?;
    let leftovers = temp_files(&f.store_root()).len();

    let server = Server::spawn(&f.images(), &f.store_root(), &[]);
    ensure(temp_files(&f.store_root()).is_empty(), || "temporary files survived a restart".into())?;
    let (code, _) = server.request("GET", "/api/images/rect/annotation", &[], b"").ok_or("no reply after restart")?;
    ensure(code == 200, || format!("GET after restart returned {code}"))?;
    ensure(server.terminate().success(), || "SIGTERM did not shut down cleanly".into())?;
    Ok(format!(
        "round-trip equal, crash left the old record and {leftovers} temp file (swept on restart), {exports} export files byte-identical"
    ))
}

fn read_tree(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())?.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).map_err(|e| e.to_string())?));
            }
        }
    }
    out.sort();
    Ok(out)
}
