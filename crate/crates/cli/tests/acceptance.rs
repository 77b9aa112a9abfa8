//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ictasnet::analysis::receptive_field;
use ictasnet::checks;
use ictasnet::frontend::FrameSpec;
use ictasnet::init::Init;
use ictasnet::model::{preset, presets, MaskMode};
use ictasnet::tcn::{BlockKind, Tcn};
use ictasnet::tensor::{ops, Tensor};
use ictasnet::train::{adam_step, evaluate, sdr, sdr_loss, synth_dataset, train, OptimizerState, TrainConfig};
use ictasnet::{AudioBuffer, Model, ModelConfig, Variant};
use ictasnet_cli::commands::{self, SummaryReport};
use ictasnet_cli::{ModelArgs, SummaryArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PARAM_TOLERANCE_PERCENT: f64 = 5.0;
const SUMMARY_BUDGET: Duration = Duration::from_secs(1);
const PRIMITIVE_TOL: f64 = 1e-6;
const COMPOSITE_TOL: f64 = 1e-5;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const ROUND_TRIP_TOL: f64 = 1e-12;
const OVERFIT_TARGET_DB: f64 = 15.0;
const OVERFIT_MAX_STEPS: usize = 2000;
const ORDERING_STEPS: usize = 300;
const MASK_INPUTS: usize = 1000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn parameter_counts() -> Outcome {
    let mut worst: (f64, &str) = (0.0, "");
    let mut slowest = Duration::ZERO;
    let mut failures = Vec::new();
    let published: Vec<_> = presets().into_iter().filter(|p| p.reference_millions.is_some()).collect();
    for p in &published {
        let args = SummaryArgs {
            model: ModelArgs {
                config: None,
                preset: Some(p.name.to_string()),
            },
            ..SummaryArgs::default()
        };
        let start = Instant::now();
        let report = commands::summary(&args, &mut std::io::sink()).map_err(|e| format!("{}: {e:#}", p.name))?;
        let elapsed = start.elapsed();
        let SummaryReport::Model(s) = report else {
            return Err(format!("{}: unexpected report kind", p.name));
        };
        let reference = p.reference_millions.expect("filtered");
        let dev = (s.total_parameters as f64 / 1e6 - reference) / reference * 100.0;
        if dev.abs() > worst.0.abs() {
            worst = (dev, p.name);
        }
        slowest = slowest.max(elapsed);
        if dev.abs() > PARAM_TOLERANCE_PERCENT || elapsed >= SUMMARY_BUDGET {
            failures.push(format!("{} {:+.2}% in {elapsed:?}", p.name, dev));
        }
    }
    check(
        failures.is_empty(),
        format!(
            "{} presets, worst {} {:+.2}% (limit ±{PARAM_TOLERANCE_PERCENT}%), slowest {:.2} ms{}",
            published.len(),
            worst.1,
            worst.0,
            slowest.as_secs_f64() * 1e3,
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let (mut prim, mut comp) = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for case in checks::registry() {
        let r = case.run().map_err(|e| format!("{}: {e}", case.name))?;
        let tol = match r.kind {
            checks::CheckKind::Primitive => {
                prim = prim.max(r.max_error);
                PRIMITIVE_TOL
            }
            checks::CheckKind::Composite => {
                comp = comp.max(r.max_error);
                COMPOSITE_TOL
            }
        };
        if r.max_error.is_nan() || r.max_error >= tol {
            failures.push(format!("{} {:.2e}", r.name, r.max_error));
        }
    }
    let elapsed = start.elapsed();
    check(
        failures.is_empty() && elapsed < GRADCHECK_BUDGET,
        format!(
            "{} checks, primitives {prim:.2e} (< {PRIMITIVE_TOL:.0e}), composites {comp:.2e} (< {COMPOSITE_TOL:.0e}), {:.1} s{}",
            checks::registry().len(),
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

fn receptive_field_support() -> Outcome {
    let rf = receptive_field(8, 3, 3);
    let (n, frames, at) = (4, 64, 30);
    let tcn = Tcn::new(&mut Init::new(11), "tcn", BlockKind::OneD, &[n], 8, 3, 2).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x: Vec<f64> = (0..frames * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let run = |data: Vec<f64>| tcn.forward(&Tensor::new(&[frames, n], data).unwrap()).unwrap().to_vec();
    let base = run(x.clone());
    // statistics frozen at the unperturbed input keep the norms local
    tcn.freeze_norms();
    let mut bumped = x;
    for v in &mut bumped[at * n..(at + 1) * n] {
        *v += 1.0;
    }
    let moved = run(bumped);
    tcn.unfreeze_norms();
    let changed: Vec<usize> = (0..frames).filter(|&t| (0..n).any(|j| base[t * n + j] != moved[t * n + j])).collect();
    let contiguous = changed.first().map(|&a| a + changed.len() - 1) == changed.last().copied();
    check(
        rf == 1531 && changed.len() == 29 && contiguous && changed.contains(&at),
        format!(
            "receptive_field(8,3,3) = {rf} (want 1531), impulse changes {} frames {:?}..={:?} (want 29 around {at})",
            changed.len(),
            changed.first(),
            changed.last()
        ),
    )
}

fn round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.gen_range(1..=512);
        let hop = rng.gen_range(1..=k);
        let t = rng.gen_range(k..=4 * k + 1000);
        let x: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = FrameSpec::new(k, hop).map_err(|e| e.to_string())?;
        let audio = AudioBuffer::mono(x.clone(), 16000).map_err(|e| e.to_string())?;
        let seg = ictasnet::frontend::segment(&audio.padded_to(spec.padded_len(t)), spec).map_err(|e| e.to_string())?;
        let l = seg.shape()[0];
        let seg = ops::reshape(&seg, &[l, k]).map_err(|e| e.to_string())?;
        let y = ops::overlap_add(&seg, hop, t).map_err(|e| e.to_string())?.to_vec();
        if y.len() != t {
            return Err(format!("length {} for T = {t}", y.len()));
        }
        worst = x.iter().zip(&y).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    check(worst <= ROUND_TRIP_TOL, format!("100 (T, K, hop) triples, max error {worst:.2e} (≤ {ROUND_TRIP_TOL:.0e})"))
}

fn overfit() -> Outcome {
    let cfg = preset("toy-ic").map_err(|e| e.to_string())?.config;
    let data = synth_dataset(0, 1, 0.5, cfg.mics, 16000).map_err(|e| e.to_string())?;
    let model = Model::new(cfg).map_err(|e| e.to_string())?;
    let tc = TrainConfig::default();
    let mut state = OptimizerState::new(model.parameters());
    let ex = &data[0];
    let mut best = f64::NEG_INFINITY;
    for step in 1..=OVERFIT_MAX_STEPS {
        let est = model.forward(&ex.noisy).map_err(|e| e.to_string())?;
        let now = sdr(&ex.clean, &est.data()).map_err(|e| e.to_string())?;
        best = best.max(now);
        if now >= OVERFIT_TARGET_DB {
            return Ok(format!(
                "toy IC on one 0.5 s pair (input SNR {:.2} dB) reached {now:.2} dB at step {step} (≥ {OVERFIT_TARGET_DB} within {OVERFIT_MAX_STEPS})",
                ex.snr_db
            ));
        }
        let loss = sdr_loss(&ex.clean, &est).map_err(|e| e.to_string())?;
        model.zero_grad();
        loss.backward().map_err(|e| e.to_string())?;
        adam_step(model.parameters(), &mut state, &tc).map_err(|e| e.to_string())?;
    }
    Err(format!("best {best:.2} dB after {OVERFIT_MAX_STEPS} steps (want ≥ {OVERFIT_TARGET_DB})"))
}

fn variant_ordering() -> Outcome {
    let all = synth_dataset(100, 25, 0.25, 2, 16000).map_err(|e| e.to_string())?;
    let (train_set, test_set) = all.split_at(20);
    let tc = TrainConfig {
        steps: ORDERING_STEPS,
        ..TrainConfig::default()
    };
    let score = |name: &str| -> Result<f64, String> {
        let model = Model::new(preset(name).map_err(|e| e.to_string())?.config).map_err(|e| e.to_string())?;
        train(&model, train_set, &tc).map_err(|e| e.to_string())?;
        evaluate(&model, test_set).map_err(|e| e.to_string())
    };
    let ic = score("toy-ic")?;
    let mc = score("toy-mc")?;
    check(
        ic >= mc,
        format!("test SDR after {ORDERING_STEPS} steps on 20 pairs: IC {ic:.2} dB vs MC {mc:.2} dB (want IC ≥ MC)"),
    )
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        fs::create_dir(&dir).map_err(|e| e.to_string())?;
        let ckpt = dir.join("model.bin");
        let status = Command::new(env!("CARGO_BIN_EXE_ictasnet"))
            .args(["train", "--preset", "toy-ic", "--synth", "--seed", "7", "--steps", "50", "--out"])
            .arg(&ckpt)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        let csv = fs::read(ckpt.with_extension("csv")).map_err(|e| e.to_string())?;
        let bytes = fs::read(&ckpt).map_err(|e| e.to_string())?;
        outputs.push((csv, bytes));
    }
    let rows = outputs[0].0.iter().filter(|&&b| b == b'\n').count();
    check(
        outputs[0] == outputs[1] && rows == 51,
        format!(
            "two `train --preset toy-ic --synth --seed 7 --steps 50` runs: CSV ({rows} lines) {}, checkpoint ({} bytes) {}",
            if outputs[0].0 == outputs[1].0 { "identical" } else { "DIFFERENT" },
            outputs[0].1.len(),
            if outputs[0].1 == outputs[1].1 { "identical" } else { "DIFFERENT" }
        ),
    )
}

fn mask_range() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let models: Vec<Model> = Variant::ALL
        .iter()
        .map(|&variant| {
            Model::new(ModelConfig {
                variant,
                depth: 2,
                stacks: 2,
                encoder_features: 16,
                features: 8,
                channels: 4,
                hidden: 16,
                window: 16,
                mics: if variant == Variant::SC { 1 } else { 3 },
                reference_channel: 1,
                seed: 5,
            })
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let (mut lo, mut hi, mut elements) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for i in 0..MASK_INPUTS {
        let model = &models[i % models.len()];
        let mics = model.config().mics;
        let frames = rng.gen_range(16..160);
        let amplitude = 10f64.powf(rng.gen_range(-3.0..3.0));
        let samples = (0..frames * mics).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect();
        let audio = AudioBuffer::new(samples, mics, 16000).map_err(|e| e.to_string())?;
        let out = model.forward_detailed(&audio, MaskMode::Estimated).map_err(|e| e.to_string())?;
        for &v in out.mask.data().iter() {
            lo = lo.min(v);
            hi = hi.max(v);
            elements += 1;
        }
    }
    check(
        lo > 0.0 && hi < 1.0,
        format!("{MASK_INPUTS} inputs over {} variants, {elements} elements in [{lo:.3e}, {hi}]", models.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("parameter counts", parameter_counts),
        ("gradient checks", gradient_checks),
        ("receptive field", receptive_field_support),
        ("segment/overlap-add round trip", round_trip),
        ("overfit one pair", overfit),
        ("variant ordering", variant_ordering),
        ("determinism", determinism),
        ("mask range", mask_range),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
