//! End-to-end acceptance checks, one line per criterion. Lines are written
//! straight to stdout so they show up without `--nocapture`.

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use striprf::gradcheck::random_tensor;
use striprf::model::{build_model, ModelConfig};
use striprf::selftest::{self, OracleCheck};

type Outcome = Result<String, String>;

/// Name, check, and whether a failure fails the suite.
type Criterion = (&'static str, fn() -> Outcome, bool);

fn oracle_outcome(checks: &[OracleCheck]) -> Outcome {
    let summary = checks
        .iter()
        .map(|c| format!("{} worst {:.1e} over {}", c.name, c.worst, c.cases))
        .collect::<Vec<_>>()
        .join(", ");
    if checks.iter().all(OracleCheck::passed) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn within(limit: Duration, start: Instant, detail: Outcome) -> Outcome {
    let elapsed = start.elapsed();
    let detail = detail?;
    if elapsed > limit {
        return Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"));
    }
    Ok(format!("{detail} in {elapsed:.2?}"))
}

fn conv_oracle() -> Outcome {
    let start = Instant::now();
    let check = selftest::conv_oracle(200, 0).map_err(|e| e.to_string())?;
    within(Duration::from_secs(60), start, oracle_outcome(&[check]))
}

fn separability() -> Outcome {
    oracle_outcome(&[selftest::separability(0).map_err(|e| e.to_string())?])
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let reports = selftest::gradcheck_battery(0).map_err(|e| e.to_string())?;
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.op.as_str())
        .collect();
    let worst = reports.iter().map(|r| r.worst()).fold(0.0, f64::max);
    let detail = format!(
        "{}/{} ops, worst {worst:.1e}",
        reports.len() - failed.len(),
        reports.len()
    );
    let detail = if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; failed {failed:?}"))
    };
    within(Duration::from_secs(300), start, detail)
}

fn srfm_transcription() -> Outcome {
    oracle_outcome(&[selftest::srfm_transcription(50, 0).map_err(|e| e.to_string())?])
}

fn identities() -> Outcome {
    oracle_outcome(&selftest::identities(0).map_err(|e| e.to_string())?)
}

fn topology() -> Outcome {
    let x = random_tensor(
        &mut ChaCha8Rng::seed_from_u64(0),
        [1, 3, 64, 64],
        0.0,
        1.0,
        0.0,
    )
    .cast::<f32>();
    let run = |cfg: &ModelConfig| -> Result<Vec<striprf::Tensor<f32>>, String> {
        let m = build_model(cfg).map_err(|e| e.to_string())?;
        let p = m.init_params(0).map_err(|e| e.to_string())?;
        m.run(&p, &x).map_err(|e| e.to_string())
    };
    let base = ModelConfig::default();
    let full = run(&base)?;
    let sizes: Vec<_> = full.iter().map(|t| (t.channels(), t.height())).collect();
    let c = base.num_classes + 4;
    if sizes != vec![(c, 16), (c, 8), (c, 4), (c, 2)] {
        return Err(format!("head maps {sizes:?}"));
    }
    let nearest = run(&ModelConfig {
        use_dysample: false,
        ..base.clone()
    })?;
    let same_shapes = nearest.iter().zip(&full).all(|(a, b)| a.dims() == b.dims());
    let no_p2 = run(&ModelConfig {
        use_p2: false,
        ..base
    })?;
    if !same_shapes || no_p2[0].dims() != full[1].dims() {
        return Err("a toggle changed downstream shapes".into());
    }
    if nearest[0] == full[0] || no_p2[0] == full[1] {
        return Err("a toggle left outputs unchanged".into());
    }
    Ok(format!(
        "heads {sizes:?}; toggles keep shapes and change values"
    ))
}

fn metrics() -> Outcome {
    oracle_outcome(&selftest::metrics(0))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_striprf");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let cli = |args: &[&str]| -> Result<Vec<u8>, String> {
        let o = Command::new(bin)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
        }
        Ok(o.stdout)
    };
    std::fs::write(p("model.json"), ModelConfig::default().to_json()).map_err(|e| e.to_string())?;
    cli(&["init", "--model", &p("model.json"), "--out", &p("w.srfw")])?;
    cli(&["random-input", "--out", &p("x.srft")])?;
    for out in ["a.json", "b.json"] {
        cli(&[
            "forward",
            "--model",
            &p("model.json"),
            "--weights",
            &p("w.srfw"),
            "--input",
            &p("x.srft"),
            "--out",
            &p(out),
        ])?;
    }
    let read = |n: &str| std::fs::read(p(n)).map_err(|e| e.to_string());
    if read("a.json")? != read("b.json")? {
        return Err("detection files differ".into());
    }
    let reference = cli(&["gradcheck"])?;
    for threads in ["1", "2", "4"] {
        if cli(&["--threads", threads, "gradcheck"])? != reference {
            return Err(format!("gradcheck output differs with {threads} threads"));
        }
    }
    Ok("forward files byte-identical; gradcheck identical for 1/2/4 threads".into())
}

fn efficiency() -> Outcome {
    let cfg = ModelConfig {
        base_width: 16,
        input_size: 640,
        ..ModelConfig::default()
    };
    let m = build_model(&cfg).map_err(|e| e.to_string())?;
    let p = m.init_params(0).map_err(|e| e.to_string())?;
    let x = random_tensor(
        &mut ChaCha8Rng::seed_from_u64(0),
        [1, 3, 640, 640],
        0.0,
        1.0,
        0.0,
    )
    .cast::<f32>();
    let start = Instant::now();
    m.run(&p, &x).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let detail = format!(
        "640x640 width-16 forward {t:.2?} on {} thread(s)",
        rayon::current_num_threads()
    );
    if t < Duration::from_secs(10) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("convolution matches direct reference", conv_oracle, true),
        (
            "separable cascade equals outer-product kernel",
            separability,
            true,
        ),
        ("finite-difference gradient battery", gradients, true),
        (
            "srfm matches step-by-step transcription",
            srfm_transcription,
            true,
        ),
        ("identity reductions", identities, true),
        ("four-head topology and toggles", topology, true),
        ("metrics oracles", metrics, true),
        ("determinism", determinism, true),
        ("efficiency (informational)", efficiency, false),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for (i, (name, check, gating)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let line = match &outcome {
            Ok(d) => format!("PASS criterion {n}: {name}: {d}"),
            Err(d) if gating => format!("FAIL criterion {n}: {name}: {d}"),
            Err(d) => format!("WARN criterion {n}: {name}: {d}"),
        };
        writeln!(out, "{line}").unwrap();
        if outcome.is_err() && gating {
            failed.push(n);
        }
    }
    out.flush().unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
