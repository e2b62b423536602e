//! Command-line front door for the limited-angle CT workflows: dataset
//! generation, filter-bank construction, solver and network reconstruction,
//! training, evaluation, and the desk-scale verification suite.
//!
//! Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 I/O error.
//! Errors are emitted as one JSON object on stderr.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use lact::config::RunConfig;
use lact::error::{LactError, Result};
use lact::ista::{ista_run, IstaConfig};
use lact::opbank::{build_filter_bank, truncate, WaveletNormalOp};
use lact::psidonet::{
    forward, loss, train, Checkpoint, KTerm, ModelParams, TrainSample, Variant,
};
use lact::store;
use lact::tomo::{backproject, fbp, Geometry, Sinogram};
use lact::wavelet::{dwt2, idwt2, WaveletCoeffs};
use lact::Image;

mod verify;

#[derive(Parser)]
#[command(name = "lact", about = "Limited-angle CT reconstruction workflows", version)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dotted-path overrides, e.g. --set geometry.image_side=32.
    #[arg(long = "set", global = true)]
    sets: Vec<String>,

    /// Cap the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random-ellipse dataset with simulated measurements.
    GenData {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Build the subband filter bank and write it as a PSDO container.
    BuildFilters {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the desk-scale oracle and property suite; exits nonzero on failure.
    Verify,
    /// Solver reconstruction of one sinogram, with a trace CSV sidecar.
    Ista {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ramp-filtered backprojection baseline.
    Fbp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an unrolled network on a generated dataset.
    Train {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Filter bank (required for the filter-based variant).
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Reconstruct one sinogram from a checkpoint.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Evaluate a method over the manifest's test split and write a CSV
    /// report.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            let kind = match &e {
                LactError::InvalidArgument(_) | LactError::Config(_) => "config",
                LactError::NumericalFailure { .. } => "numerical",
                LactError::Storage { .. } | LactError::Format { .. } => "io",
            };
            let payload = serde_json::json!({
                "error": { "kind": kind, "message": e.to_string(), "exit_code": e.exit_code() }
            });
            eprintln!("{payload}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
    if cli.threads.is_none() {
        if let Some(n) = cfg.threads {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match cli.command {
        Command::GenData { out_dir } => cmd_gen_data(&cfg, out_dir),
        Command::BuildFilters { out } => cmd_build_filters(&cfg, out),
        Command::Verify => verify::run(&cfg),
        Command::Ista { input, out } => cmd_ista(&cfg, &input, &out),
        Command::Fbp { input, out } => cmd_fbp(&input, &out),
        Command::Train {
            variant,
            data,
            out,
            bank,
        } => cmd_train(&cfg, &variant, &data, out, bank),
        Command::Reconstruct {
            ckpt,
            input,
            out,
            bank,
        } => cmd_reconstruct(&cfg, &ckpt, &input, &out, bank),
        Command::Eval {
            manifest,
            method,
            ckpt,
            bank,
            out,
        } => cmd_eval(&cfg, &manifest, &method, ckpt, bank, &out),
    }
}

fn require_path(explicit: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    explicit
        .or_else(|| fallback.clone())
        .ok_or_else(|| LactError::Config(format!("no {what} given (flag or paths section)")))
}

fn cmd_gen_data(cfg: &RunConfig, out_dir: Option<PathBuf>) -> Result<()> {
    let out_dir = require_path(out_dir, &cfg.paths.data_dir, "--out-dir")?;
    let geom = cfg.build_geometry()?;
    let dcfg = cfg.dataset_config();
    println!(
        "generating {} train / {} val / {} test phantoms at side {} ...",
        dcfg.train, dcfg.val, dcfg.test, geom.image_side
    );
    let manifest = lact::phantom::generate_dataset(&dcfg, &geom, &out_dir)?;
    println!(
        "wrote {} entries and manifest to {}",
        manifest.entries.len(),
        out_dir.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_build_filters(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out = require_path(out, &cfg.paths.filter_bank, "--out")?;
    let geom = cfg.build_geometry()?;
    let spec = cfg.wavelet_spec()?;
    println!(
        "building {} filters from side-{} impulse objects ...",
        lact::opbank::expected_filter_count(&spec),
        2 * geom.image_side
    );
    let bank = build_filter_bank(&geom, &spec)?;
    store::save_bank(&out, &bank)?;
    println!("wrote {} ({})", out.display(), store::bank_hash(&bank));
    Ok(())
}

fn load_sinogram_checked(path: &Path) -> Result<Sinogram> {
    store::load_sinogram(path)
}

fn cmd_ista(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let sino = load_sinogram_checked(input)?;
    let geom = sino.geom.clone();
    let side = geom.image_side;
    let spec = lact::wavelet::WaveletSpec::new(
        lact::wavelet::Family::from_name(&cfg.wavelet.family)?,
        side.trailing_zeros() as u8,
        cfg.wavelet.j0,
    )?;
    let op = WaveletNormalOp::new(&geom, &spec)?;
    let b = dwt2(&backproject(&sino, &geom)?, &spec)?;
    let mut icfg = cfg.ista_config();
    icfg.record_trace = false;
    let w0 = WaveletCoeffs::zeros(spec);
    let (w, trace) = ista_run(&op, &b, &icfg, &w0)?;
    let img = idwt2(&w)?;
    store::save_image(out, &img)?;
    let trace_path = sidecar(out, ".trace.csv");
    let mut f = std::fs::File::create(&trace_path).map_err(|e| LactError::storage(&trace_path, e))?;
    trace
        .write_csv(&mut f)
        .map_err(|e| LactError::storage(&trace_path, e))?;
    println!(
        "terminated by {} after {} iterations; wrote {} and {}",
        trace.termination.as_str(),
        trace.iterations,
        out.display(),
        trace_path.display()
    );
    Ok(())
}

fn cmd_fbp(input: &Path, out: &Path) -> Result<()> {
    let sino = load_sinogram_checked(input)?;
    let img = fbp(&sino, &sino.geom.clone())?;
    store::save_image(out, &img)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(suffix);
    os.into()
}

struct LoadedSplit {
    samples: Vec<TrainSample>,
}

fn load_split(
    manifest: &store::DatasetManifest,
    dir: &Path,
    split: store::Split,
    spec: &lact::wavelet::WaveletSpec,
    geom: &Geometry,
) -> Result<LoadedSplit> {
    let entries = manifest.split_entries(split);
    let samples: Result<Vec<TrainSample>> = entries
        .iter()
        .map(|e| {
            let sino = store::load_sinogram(&dir.join(&e.noisy_sinogram))?;
            let img = store::load_image(&dir.join(&e.image))?;
            Ok(TrainSample {
                b: dwt2(&backproject(&sino, geom)?, spec)?,
                target: dwt2(&img, spec)?,
            })
        })
        .collect();
    Ok(LoadedSplit { samples: samples? })
}

fn cmd_train(
    cfg: &RunConfig,
    variant: &str,
    data: &Path,
    out: Option<PathBuf>,
    bank_path: Option<PathBuf>,
) -> Result<()> {
    let out = require_path(out, &cfg.paths.checkpoint, "--out")?;
    let variant = Variant::from_str(variant)?;
    let manifest = store::load_manifest(data)?;
    let dir = data
        .parent()
        .ok_or_else(|| LactError::Config("manifest path has no parent directory".into()))?;
    let geom = manifest.geometry.to_geometry();
    let side = geom.image_side;
    let spec = lact::wavelet::WaveletSpec::new(
        lact::wavelet::Family::from_name(&cfg.wavelet.family)?,
        side.trailing_zeros() as u8,
        cfg.wavelet.j0,
    )?;

    println!("loading dataset splits ...");
    let train_split = load_split(&manifest, dir, store::Split::Train, &spec, &geom)?;
    let val_split = load_split(&manifest, dir, store::Split::Val, &spec, &geom)?;
    if train_split.samples.is_empty() || val_split.samples.is_empty() {
        return Err(LactError::invalid("dataset must provide train and val splits"));
    }

    let op;
    let tbank;
    let (kterm, bank_hash, centers) = match variant {
        Variant::OperatorBased => {
            op = WaveletNormalOp::new(&geom, &spec)?;
            (KTerm::Operator(&op), None, None)
        }
        Variant::FilterBased => {
            let bank_path = require_path(bank_path, &cfg.paths.filter_bank, "--bank")?;
            let bank = store::load_bank(&bank_path)?;
            if bank.spec != spec {
                return Err(LactError::invalid("bank spec does not match configuration"));
            }
            if bank.geometry_hash != store::geometry_hash(&geom) {
                return Err(LactError::invalid("bank geometry does not match the dataset"));
            }
            let hash = store::bank_hash(&bank).0;
            tbank = truncate(&bank, cfg.model.tau)?;
            println!(
                "truncated bank at tau {} (rho estimate {:.3e})",
                cfg.model.tau, tbank.rho_estimate
            );
            (KTerm::Truncated(&tbank), Some(hash), Some(tbank.centers.clone()))
        }
    };

    let init = ModelParams::ista_init(
        variant,
        spec,
        cfg.model.n_blocks,
        cfg.model.n_groups,
        cfg.model.tau,
        cfg.model.positivity,
        cfg.ista.lambda,
        cfg.ista.l,
        centers.as_ref(),
    )?;
    let tcfg = cfg.train_config();
    println!(
        "training variant {} for {} epochs (N={}, G={}, tau={}) on {} samples ...",
        variant.as_str(),
        tcfg.epochs,
        cfg.model.n_blocks,
        cfg.model.n_groups,
        cfg.model.tau,
        train_split.samples.len()
    );
    let outcome = train(&init, &kterm, &train_split.samples, &val_split.samples, &tcfg)?;
    for (epoch, vl) in outcome.val_history.iter().enumerate() {
        println!("epoch {epoch}: validation loss {vl:.6e}");
    }

    let geometry_hash = store::geometry_hash(&geom);
    let ckpt = Checkpoint {
        params: outcome.final_params,
        geometry_hash,
        bank_hash,
        history: outcome.history.clone(),
    };
    store::save_checkpoint(&out, &ckpt)?;
    let best = Checkpoint {
        params: outcome.best_params,
        geometry_hash,
        bank_hash,
        history: outcome.history.clone(),
    };
    let best_path = sidecar(&out, ".bestval");
    store::save_checkpoint(&best_path, &best)?;
    let hist_path = sidecar(&out, ".history.csv");
    let mut f = std::fs::File::create(&hist_path).map_err(|e| LactError::storage(&hist_path, e))?;
    use std::io::Write;
    writeln!(f, "step,loss").map_err(|e| LactError::storage(&hist_path, e))?;
    for (step, l) in &outcome.history {
        writeln!(f, "{step},{l}").map_err(|e| LactError::storage(&hist_path, e))?;
    }
    println!(
        "wrote {} (best validation {:.6e} at {})",
        out.display(),
        outcome.best_val,
        best_path.display()
    );
    Ok(())
}

fn cmd_reconstruct(
    cfg: &RunConfig,
    ckpt_path: &Path,
    input: &Path,
    out: &Path,
    bank_path: Option<PathBuf>,
) -> Result<()> {
    let ckpt = store::load_checkpoint(ckpt_path)?;
    let sino = load_sinogram_checked(input)?;
    let geom = sino.geom.clone();
    let op;
    let tbank;
    let kterm = match ckpt.params.variant {
        Variant::OperatorBased => {
            op = WaveletNormalOp::new(&geom, &ckpt.params.spec)?;
            KTerm::Operator(&op)
        }
        Variant::FilterBased => {
            let bank_path = require_path(bank_path, &cfg.paths.filter_bank, "--bank")?;
            let bank = store::load_bank(&bank_path)?;
            tbank = truncate(&bank, ckpt.params.tau)?;
            KTerm::Truncated(&tbank)
        }
    };
    let img = lact::psidonet::reconstruct(&ckpt, &kterm, &sino)?;
    store::save_image(out, &img)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    manifest_path: &Path,
    method: &str,
    ckpt_path: Option<PathBuf>,
    bank_path: Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let manifest = store::load_manifest(manifest_path)?;
    let dir = manifest_path
        .parent()
        .ok_or_else(|| LactError::Config("manifest path has no parent directory".into()))?;
    let geom = manifest.geometry.to_geometry();
    let side = geom.image_side;
    let spec = lact::wavelet::WaveletSpec::new(
        lact::wavelet::Family::from_name(&cfg.wavelet.family)?,
        side.trailing_zeros() as u8,
        cfg.wavelet.j0,
    )?;
    let entries = manifest.split_entries(store::Split::Test);
    if entries.is_empty() {
        return Err(LactError::invalid("manifest has no test split"));
    }

    // Method-specific long-lived state.
    let mut solver_op: Option<WaveletNormalOp> = None;
    let mut net_op: Option<WaveletNormalOp> = None;
    let mut net_bank: Option<lact::opbank::TruncatedBank> = None;
    let mut checkpoint: Option<Checkpoint> = None;
    match method {
        "fbp" => {}
        "ista" => {
            solver_op = Some(WaveletNormalOp::new(&geom, &spec)?);
        }
        "F" | "O" | "f" | "o" => {
            let ckpt_path = require_path(ckpt_path, &cfg.paths.checkpoint, "--ckpt")?;
            let ckpt = store::load_checkpoint(&ckpt_path)?;
            let want = Variant::from_str(method)?;
            if ckpt.params.variant != want {
                return Err(LactError::invalid("checkpoint variant does not match --method"));
            }
            if store::geometry_hash(&geom) != ckpt.geometry_hash {
                return Err(LactError::invalid(
                    "dataset geometry does not match the checkpoint",
                ));
            }
            match ckpt.params.variant {
                Variant::OperatorBased => {
                    net_op = Some(WaveletNormalOp::new(&geom, &ckpt.params.spec)?);
                }
                Variant::FilterBased => {
                    let bank_path = require_path(bank_path, &cfg.paths.filter_bank, "--bank")?;
                    let bank = store::load_bank(&bank_path)?;
                    net_bank = Some(truncate(&bank, ckpt.params.tau)?);
                }
            }
            checkpoint = Some(ckpt);
        }
        other => {
            return Err(LactError::Config(format!(
                "unknown method '{other}' (expected fbp|ista|F|O)"
            )))
        }
    }

    let mut report = lact::metrics::MetricsReport::default();
    for e in &entries {
        let sino = store::load_sinogram(&dir.join(&e.noisy_sinogram))?;
        let truth = store::load_image(&dir.join(&e.image))?;
        let rec: Image = if let Some(op) = &solver_op {
            let b = dwt2(&backproject(&sino, &geom)?, &spec)?;
            let icfg: IstaConfig = cfg.ista_config();
            let w0 = WaveletCoeffs::zeros(spec);
            let (w, _) = ista_run(op, &b, &icfg, &w0)?;
            idwt2(&w)?
        } else if let Some(ckpt) = &checkpoint {
            let kterm = match ckpt.params.variant {
                Variant::OperatorBased => KTerm::Operator(net_op.as_ref().expect("net op")),
                Variant::FilterBased => KTerm::Truncated(net_bank.as_ref().expect("net bank")),
            };
            let b = dwt2(&backproject(&sino, &geom)?, &ckpt.params.spec)?;
            let w0 = WaveletCoeffs::zeros(ckpt.params.spec);
            let (w, _) = forward(&ckpt.params, &kterm, &b, &w0, false)?;
            idwt2(&w)?
        } else {
            fbp(&sino, &geom)?
        };
        report.push(e.id.clone(), &rec, &truth)?;
    }

    let mut f = std::fs::File::create(out).map_err(|e| LactError::storage(out, e))?;
    report
        .write_csv(&mut f)
        .map_err(|e| LactError::storage(out, e))?;
    println!("method      RE      PSNR     SSIM   HaarPSI   (n={})", report.rows.len());
    println!(
        "{:<9} {:.4}  {:>6.2}  {:.4}   {:.4}",
        method,
        report.mean_re(),
        report.mean_psnr(),
        report.mean_ssim(),
        report.mean_haarpsi()
    );
    println!("wrote {}", out.display());
    Ok(())
}
