use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use striprf::detect::{decode, map_suite, nms, Interp, MetricsReport};
use striprf::io::{self, AnnotationDoc, DEFAULT_CLASS_NAMES};
use striprf::model::{build_model, ModelConfig};
use striprf::selftest;
use striprf::{Error, Tensor};

#[derive(Parser)]
#[command(
    name = "striprf",
    version,
    about = "Strip receptive field detector: inference, evaluation, self-checks"
)]
struct Cli {
    /// Worker threads for convolution (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write freshly initialized weights for a model config.
    Init {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a random N×3×S×S input tensor.
    RandomInput {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the detector on a tensor file and write a detections document.
    Forward {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
        #[arg(long = "nms-iou", default_value_t = 0.5)]
        nms_iou: f64,
    },
    /// Score a detections document against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
        #[arg(long, default_value = "101pt")]
        interp: Interp,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gradient checks plus the reference-equivalence checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time forward passes (3 warmups, then `runs` timed passes).
    Bench {
        #[arg(long, default_value_t = 640)]
        size: usize,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        /// Defaults to the base-width-16 mini model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// Exit status 1: a check ran and failed. Exit status 2: bad input.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    })
}

fn with_path<T>(path: &Path, r: striprf::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    })
}

fn load_config(path: &Path) -> Result<ModelConfig, Failure> {
    with_path(path, ModelConfig::from_json(&read_text(path)?))
}

fn class_names(n: usize) -> Vec<String> {
    if n == DEFAULT_CLASS_NAMES.len() {
        DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("class{i}")).collect()
    }
}

fn cmd_init(model: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(model)?;
    let graph = build_model(&cfg)?;
    let params = graph.init_params(seed.unwrap_or(cfg.seed))?;
    write_file(out, &io::write_weights(&params)?)?;
    println!(
        "wrote {} tensors ({} values) to {}",
        params.len(),
        params.total_elems(),
        out.display()
    );
    Ok(())
}

fn cmd_random_input(size: usize, batch: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::<f32>::from_fn([batch, 3, size, size], |_| rng.random_range(0.0..1.0));
    write_file(out, &io::write_tensor(&t)?)
}

fn cmd_forward(
    model: &Path,
    weights: &Path,
    input: &Path,
    out: &Path,
    conf: f64,
    nms_iou: f64,
) -> Result<(), Failure> {
    let cfg = load_config(model)?;
    let graph = build_model(&cfg)?;
    let params = with_path(weights, io::load_weights(weights))?;
    with_path(weights, graph.check_weights(&params))?;
    let image = with_path(input, io::load_tensor_f32(input))?;
    let s = cfg.input_size;
    let [n, c, h, w] = image.dims();
    if c != 3 || h != s || w != s {
        return Err(Failure {
            code: 2,
            message: format!(
                "{}: input is {n}x{c}x{h}x{w}, expected Nx3x{s}x{s}",
                input.display()
            ),
        });
    }
    let heads = graph.run(&params, &image)?;
    let dets = decode(&heads, &graph.head_strides(), cfg.num_classes, conf, (s, s))?;
    let kept = nms(&dets, nms_iou);
    let images: Vec<(u64, usize, usize)> = (0..n as u64).map(|i| (i, s, s)).collect();
    let doc = AnnotationDoc::from_detections(&images, &kept, class_names(cfg.num_classes));
    write_file(out, doc.to_json().as_bytes())?;
    println!(
        "{} detections on {n} image(s) written to {}",
        kept.len(),
        out.display()
    );
    Ok(())
}

fn print_table(report: &MetricsReport, names: &[String]) {
    println!(
        "{:<10} {:>6} {:>6} {:>8} {:>10}",
        "class", "gt", "dets", "AP50", "AP50:95"
    );
    for c in &report.classes {
        let name = names.get(c.class_id).map_or("?", String::as_str);
        match &c.ap {
            Some(ap) => println!(
                "{:<10} {:>6} {:>6} {:>8.4} {:>10.4}",
                name,
                c.gt_count,
                c.det_count,
                ap[0],
                ap.iter().sum::<f64>() / ap.len() as f64
            ),
            None => println!(
                "{:<10} {:>6} {:>6} {:>8} {:>10}",
                name, c.gt_count, c.det_count, "-", "-"
            ),
        }
    }
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    println!("mAP50      {}", fmt(report.map50));
    println!("mAP50:95   {}", fmt(report.map50_95));
    println!(
        "conf >= {}: P {:.4}  R {:.4}  F1 {:.4}  (TP {} FP {} FN {})",
        report.conf_threshold,
        report.precision,
        report.recall,
        report.f1,
        report.tp,
        report.fp,
        report.fn_
    );
    println!("AP interpolation: {}", report.interp);
}

fn cmd_eval(gt: &Path, pred: &Path, conf: f64, interp: Interp, json: bool) -> Result<(), Failure> {
    let gt_doc = with_path(gt, AnnotationDoc::from_json(&read_text(gt)?))?;
    let pred_doc = with_path(pred, AnnotationDoc::from_json(&read_text(pred)?))?;
    gt_doc.check_same_classes(&pred_doc)?;
    let dets = with_path(pred, pred_doc.detections())?;
    let report = map_suite(
        &dets,
        &gt_doc.ground_truths(),
        gt_doc.class_names.len(),
        conf,
        interp,
    );
    if json {
        let value = serde_json::json!({ "class_names": gt_doc.class_names, "report": report });
        println!(
            "{}",
            serde_json::to_string_pretty(&value).expect("report serializes")
        );
    } else {
        print_table(&report, &gt_doc.class_names);
    }
    Ok(())
}

fn run_gradcheck(seed: u64) -> Result<Vec<String>, Failure> {
    let mut failed = Vec::new();
    let reports = selftest::gradcheck_battery(seed)?;
    for r in &reports {
        print!("{r}");
        if !r.passed() {
            failed.push(r.op.clone());
        }
    }
    println!(
        "gradcheck: {}/{} passed",
        reports.len() - failed.len(),
        reports.len()
    );
    Ok(failed)
}

fn run_oracles(seed: u64) -> Result<Vec<String>, Failure> {
    let mut failed = Vec::new();
    let checks = selftest::oracle_battery(seed)?;
    for c in &checks {
        println!("{c}");
        if !c.passed() {
            failed.push(c.name.clone());
        }
    }
    println!(
        "oracles: {}/{} passed",
        checks.len() - failed.len(),
        checks.len()
    );
    Ok(failed)
}

fn verdict(failed: Vec<String>) -> Result<(), Failure> {
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("failed: {}", failed.join(", ")),
        })
    }
}

fn cmd_bench(size: usize, runs: usize, model: Option<&Path>) -> Result<(), Failure> {
    let mut cfg = match model {
        Some(p) => load_config(p)?,
        None => ModelConfig {
            base_width: 16,
            ..ModelConfig::default()
        },
    };
    cfg.input_size = size;
    let graph = build_model(&cfg)?;
    let params = graph.init_params(cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let image = Tensor::<f32>::from_fn([1, 3, size, size], |_| rng.random_range(0.0..1.0));
    for _ in 0..3 {
        graph.run(&params, &image)?;
    }
    let runs = runs.max(1);
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        graph.run(&params, &image)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / runs as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / runs as f64;
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let max = times.iter().copied().fold(0.0, f64::max);
    println!(
        "forward {size}x{size} base_width={} params={} threads={}: {mean:.2} ms ± {:.2} ms over {runs} runs (min {min:.2}, max {max:.2})",
        cfg.base_width,
        graph.param_count(),
        rayon::current_num_threads(),
        var.sqrt()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: 2,
                message: format!("thread pool: {e}"),
            })?;
    }
    match cli.command {
        Command::Init { model, out, seed } => cmd_init(&model, &out, seed),
        Command::RandomInput {
            size,
            batch,
            seed,
            out,
        } => cmd_random_input(size, batch, seed, &out),
        Command::Forward {
            model,
            weights,
            input,
            out,
            conf,
            nms_iou,
        } => cmd_forward(&model, &weights, &input, &out, conf, nms_iou),
        Command::Eval {
            gt,
            pred,
            conf,
            interp,
            json,
        } => cmd_eval(&gt, &pred, conf, interp, json),
        Command::Gradcheck { seed } => verdict(run_gradcheck(seed)?),
        Command::Selftest { seed } => {
            let mut failed = run_gradcheck(seed)?;
            failed.extend(run_oracles(seed)?);
            verdict(failed)
        }
        Command::Bench { size, runs, model } => cmd_bench(size, runs, model.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
