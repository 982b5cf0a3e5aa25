//! `geovar`: reproducible pipelines over the geovar library.
//!
//! Subcommands: `gen`, `variogram`, `fit`, `train`, `eval`,
//! `weights audit`. Every run prints its fully resolved configuration to
//! stdout and to a `<output>.config` sidecar, so identical flags and seed
//! reproduce identical output bytes.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric failure.

mod svg;

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use geovar::dataset::{generate_synthetic, Dataset, LatLonBounds, SyntheticSpec};
use geovar::encoders::{DualEncoder, EncoderDims};
use geovar::error::{Error, ErrorCategory};
use geovar::evalretrieval::{build_gallery, evaluate};
use geovar::geodesy::GeoCoord;
use geovar::reweighting::{weight_entry, DeltaScale, ReweightConfig, Sample};
use geovar::semivariogram::{
    estimate_empirical, fit_spherical, read_model_file, read_variogram_csv, write_model_file,
    write_variogram_csv, SphericalModel,
};
use geovar::training::{prepare_input, train, EpochReport, TrainConfig};

#[derive(Parser)]
#[command(name = "geovar", version, about = "Semivariogram-guided contrastive geolocalization pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic geo-tagged embedding dataset from a spatial
    /// Gaussian process with spherical covariance.
    Gen(GenArgs),
    /// Estimate the empirical embedding semivariogram of a dataset.
    Variogram(VariogramArgs),
    /// Fit a spherical model to a variogram CSV.
    Fit(FitArgs),
    /// Train the dual encoder, optionally with semivariogram reweighting.
    Train(Box<TrainArgs>),
    /// Score retrieval accuracy of a checkpoint at 25/200/750 km.
    Eval(EvalArgs),
    /// Inspect the reweighting decisions.
    Weights(WeightsCmd),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct GenArgs {
    /// Number of records.
    #[arg(long)]
    n: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Latent Gaussian-process fields.
    #[arg(long, default_value_t = 8)]
    latent_dim: usize,
    /// Covariance range in kilometers.
    #[arg(long, default_value_t = 2000.0)]
    range_km: f64,
    /// Covariance (partial) sill.
    #[arg(long, default_value_t = 1.0)]
    sill: f64,
    /// Covariance nugget.
    #[arg(long, default_value_t = 0.1)]
    nugget: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = -20.0)]
    lat_min: f64,
    #[arg(long, default_value_t = 20.0)]
    lat_max: f64,
    #[arg(long, default_value_t = -20.0)]
    lon_min: f64,
    #[arg(long, default_value_t = 20.0)]
    lon_max: f64,
    /// Output `.gemb` path.
    #[arg(long, default_value = "data.gemb")]
    out: PathBuf,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct VariogramArgs {
    /// Input `.gemb` dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = 5000.0)]
    h_max_km: f64,
    /// Cap on evaluated pairs; beyond it pairs are subsampled.
    #[arg(long, default_value_t = 5_000_000)]
    max_pairs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output variogram CSV.
    #[arg(long, default_value = "variogram.csv")]
    out: PathBuf,
    /// Also render an SVG plot here.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also fit a spherical model and write it here.
    #[arg(long)]
    fit: Option<PathBuf>,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct FitArgs {
    /// Input variogram CSV.
    #[arg(long)]
    variogram: PathBuf,
    /// Output model file.
    #[arg(long, default_value = "model.txt")]
    out: PathBuf,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    /// Input `.gemb` dataset.
    #[arg(long)]
    data: PathBuf,
    /// Fitted model file; enables reweighting unless --no-reweight.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Train the plain InfoNCE baseline even when a model is given.
    #[arg(long, default_value_t = false)]
    no_reweight: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    queue_capacity: usize,
    /// Noisy copies of each anchor averaged in the loss.
    #[arg(long, default_value_t = 2)]
    augmentations: usize,
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    /// Additive feature-noise standard deviation.
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    /// Validation fraction (0 disables validation columns).
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Reweighting scale for hard negatives.
    #[arg(long, default_value_t = 0.5)]
    s1: f64,
    /// Reweighting scale for false negatives.
    #[arg(long, default_value_t = 0.5)]
    s2: f64,
    /// Hard-negative distance threshold; defaults to the fitted range.
    #[arg(long)]
    theta1_km: Option<f64>,
    /// False-negative distance threshold.
    #[arg(long, default_value_t = 25.0)]
    theta2_km: f64,
    /// Deviation curve scale: 1 uses gamma as fitted, 2 doubles it.
    #[arg(long, default_value_t = 2)]
    delta_scale: u8,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    d_emb: usize,
    #[arg(long, default_value_t = 9)]
    scales: usize,
    #[arg(long, default_value_t = 16)]
    f_pairs: usize,
    /// Write an intermediate checkpoint every N epochs (0 = final only).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Output checkpoint path.
    #[arg(long, default_value = "encoder.gckpt")]
    out: PathBuf,
    /// Epoch log CSV path.
    #[arg(long, default_value = "train_log.csv")]
    log: PathBuf,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Query dataset (`.gemb`).
    #[arg(long)]
    data: PathBuf,
    /// Gallery dataset; defaults to the query dataset.
    #[arg(long)]
    gallery_data: Option<PathBuf>,
    /// Use a seeded sample of this many gallery coordinates (0 = all).
    #[arg(long, default_value_t = 0)]
    gallery_sample: usize,
    #[arg(long, default_value_t = 0)]
    gallery_seed: u64,
    /// Report CSV path.
    #[arg(long, default_value = "eval_report.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct WeightsCmd {
    #[command(subcommand)]
    command: WeightsSub,
}

#[derive(Subcommand)]
enum WeightsSub {
    /// Emit a per-pair CSV of distances, deviations, weights, and classes.
    Audit(AuditArgs),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct AuditArgs {
    /// Input `.gemb` dataset.
    #[arg(long)]
    data: PathBuf,
    /// Fitted model file.
    #[arg(long)]
    model: PathBuf,
    /// Number of sampled pairs.
    #[arg(long, default_value_t = 1000)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    s1: f64,
    #[arg(long, default_value_t = 0.5)]
    s2: f64,
    /// Defaults to the fitted range.
    #[arg(long)]
    theta1_km: Option<f64>,
    #[arg(long, default_value_t = 25.0)]
    theta2_km: f64,
    #[arg(long, default_value_t = 2)]
    delta_scale: u8,
    /// Output audit CSV.
    #[arg(long, default_value = "weights_audit.csv")]
    out: PathBuf,
}

/// Sorted key=value record of the fully resolved run configuration,
/// echoed to stdout and to the sidecar next to the primary output.
struct RunConfig {
    entries: Vec<(String, String)>,
}

impl RunConfig {
    fn new(command: &str) -> Self {
        RunConfig {
            entries: vec![("command".into(), command.into())],
        }
    }

    fn set(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    fn emit(&mut self, primary_output: &Path) -> Result<(), Error> {
        self.entries.sort();
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(&format!("{k} = {v}\n"));
        }
        print!("{text}");
        let sidecar = sidecar_path(primary_output);
        std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
    }
}

fn sidecar_path(primary: &Path) -> PathBuf {
    let mut os = primary.as_os_str().to_owned();
    os.push(".config");
    PathBuf::from(os)
}

fn exit_code(cat: ErrorCategory) -> u8 {
    match cat {
        ErrorCategory::Usage => 1,
        ErrorCategory::Io => 2,
        ErrorCategory::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Ok(v) = std::env::var("GEOVAR_THREADS") {
        if v.trim().parse::<usize>().is_err() {
            eprintln!("error: GEOVAR_THREADS must be a nonnegative integer, got '{v}'");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Variogram(a) => cmd_variogram(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Train(a) => cmd_train(*a),
        Command::Eval(a) => cmd_eval(a),
        Command::Weights(WeightsCmd {
            command: WeightsSub::Audit(a),
        }) => cmd_weights_audit(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), Error> {
    let region = LatLonBounds::new(a.lat_min, a.lat_max, a.lon_min, a.lon_max)?;
    let spec = SyntheticSpec {
        n: a.n,
        dim: a.dim,
        latent_dim: a.latent_dim,
        cov_range_km: a.range_km,
        cov_sill: a.sill,
        cov_nugget: a.nugget,
        seed: a.seed,
        region,
    };
    let mut cfg = RunConfig::new("gen");
    cfg.set("n", a.n);
    cfg.set("dim", a.dim);
    cfg.set("latent_dim", a.latent_dim);
    cfg.set("range_km", a.range_km);
    cfg.set("sill", a.sill);
    cfg.set("nugget", a.nugget);
    cfg.set("seed", a.seed);
    cfg.set("lat_min", a.lat_min);
    cfg.set("lat_max", a.lat_max);
    cfg.set("lon_min", a.lon_min);
    cfg.set("lon_max", a.lon_max);
    cfg.set("out", a.out.display());
    cfg.emit(&a.out)?;

    let dataset = generate_synthetic(&spec)?;
    dataset.save_binary(&a.out)?;
    println!("wrote {} records to {}", dataset.len(), a.out.display());
    Ok(())
}

fn cmd_variogram(a: VariogramArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::new("variogram");
    cfg.set("data", a.data.display());
    cfg.set("bins", a.bins);
    cfg.set("h_max_km", a.h_max_km);
    cfg.set("max_pairs", a.max_pairs);
    cfg.set("seed", a.seed);
    cfg.set("out", a.out.display());
    cfg.set("svg", a.svg.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
    cfg.set("fit", a.fit.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
    cfg.emit(&a.out)?;

    let dataset = Dataset::load_binary(&a.data)?;
    let ev = estimate_empirical(&dataset, a.bins, a.h_max_km, a.max_pairs, a.seed)?;
    write_variogram_csv(&ev, &a.out)?;
    let nonempty = ev.bins.iter().filter(|b| b.pair_count > 0).count();
    println!(
        "estimated {} bins ({} nonempty) from {} pairs",
        ev.bins.len(),
        nonempty,
        ev.total_pairs_sampled
    );

    let fit = match &a.fit {
        Some(path) => {
            let outcome = fit_spherical(&ev)?;
            if outcome.degenerate {
                eprintln!("warning: flat zero variogram, returning a degenerate model");
            }
            write_model_file(&outcome, path)?;
            println!(
                "fit: nugget {} partial_sill {} range_km {} objective {}",
                outcome.model.nugget(),
                outcome.model.partial_sill(),
                outcome.model.range_km(),
                outcome.objective
            );
            Some(outcome)
        }
        None => None,
    };
    if let Some(svg_path) = &a.svg {
        let text = svg::variogram_svg(&ev, fit.as_ref().map(|f| &f.model));
        std::fs::write(svg_path, text).map_err(|e| Error::io(svg_path, e))?;
        println!("plot written to {}", svg_path.display());
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::new("fit");
    cfg.set("variogram", a.variogram.display());
    cfg.set("out", a.out.display());
    cfg.emit(&a.out)?;

    let ev = read_variogram_csv(&a.variogram)?;
    let outcome = fit_spherical(&ev)?;
    if outcome.degenerate {
        eprintln!("warning: flat zero variogram, returning a degenerate model");
    }
    write_model_file(&outcome, &a.out)?;
    println!(
        "fit: nugget {} partial_sill {} range_km {} objective {}",
        outcome.model.nugget(),
        outcome.model.partial_sill(),
        outcome.model.range_km(),
        outcome.objective
    );
    Ok(())
}

fn load_reweight(
    model_path: &Path,
    s1: f64,
    s2: f64,
    theta1_km: Option<f64>,
    theta2_km: f64,
    delta_scale: u8,
) -> Result<(ReweightConfig, SphericalModel), Error> {
    let (model, _objective) = read_model_file(model_path)?;
    let theta1 = theta1_km.unwrap_or_else(|| model.range_km());
    let rc = ReweightConfig::new(s1, s2, theta1, theta2_km, model, DeltaScale::from_flag(delta_scale)?)?;
    Ok((rc, model))
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let dataset = Dataset::load_binary(&a.data)?;
    if !(0.0..1.0).contains(&a.val_fraction) || !a.val_fraction.is_finite() {
        return Err(Error::InvalidParameter {
            name: "val_fraction",
            reason: format!("must lie in [0, 1), got {}", a.val_fraction),
        });
    }

    let reweight = match (&a.model, a.no_reweight) {
        (Some(path), false) => Some(load_reweight(path, a.s1, a.s2, a.theta1_km, a.theta2_km, a.delta_scale)?.0),
        _ => None,
    };

    let mut cfg = RunConfig::new("train");
    cfg.set("data", a.data.display());
    cfg.set("model", a.model.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
    cfg.set("no_reweight", a.no_reweight);
    cfg.set("reweight_enabled", reweight.is_some());
    if let Some(rc) = &reweight {
        cfg.set("s1", rc.s1());
        cfg.set("s2", rc.s2());
        cfg.set("theta1_km", rc.theta1_km());
        cfg.set("theta2_km", rc.theta2_km());
        cfg.set("delta_scale", rc.delta_scale().factor());
    }
    cfg.set("epochs", a.epochs);
    cfg.set("batch_size", a.batch_size);
    cfg.set("learning_rate", a.learning_rate);
    cfg.set("seed", a.seed);
    cfg.set("queue_capacity", a.queue_capacity);
    cfg.set("augmentations", a.augmentations);
    cfg.set("tau", a.tau);
    cfg.set("noise_sigma", a.noise_sigma);
    cfg.set("val_fraction", a.val_fraction);
    cfg.set("hidden", a.hidden);
    cfg.set("d_emb", a.d_emb);
    cfg.set("scales", a.scales);
    cfg.set("f_pairs", a.f_pairs);
    cfg.set("checkpoint_every", a.checkpoint_every);
    cfg.set("out", a.out.display());
    cfg.set("log", a.log.display());
    cfg.emit(&a.out)?;

    let (train_set, val_set) = if a.val_fraction > 0.0 {
        let (t, v) = dataset.split(a.val_fraction, a.seed)?;
        (t, Some(v))
    } else {
        (dataset, None)
    };

    let dims = EncoderDims {
        d_in: train_set.dim(),
        hidden: a.hidden,
        d_emb: a.d_emb,
        scales: a.scales,
        f_pairs: a.f_pairs,
    };
    let encoder = DualEncoder::seeded(dims, a.tau, a.seed)?;
    let train_cfg = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.seed,
        queue_capacity: a.queue_capacity,
        augmentations: a.augmentations,
        tau: a.tau,
        reweight,
        augment_noise_sigma: a.noise_sigma,
    };

    let log_file = std::fs::File::create(&a.log).map_err(|e| Error::io(&a.log, e))?;
    let mut log = std::io::BufWriter::new(log_file);
    writeln!(log, "{}", EpochReport::csv_header()).map_err(|e| Error::io(&a.log, e))?;

    let ckpt_every = a.checkpoint_every;
    let out_path = a.out.clone();
    let (encoder, _reports) = train(
        &train_cfg,
        &train_set,
        val_set.as_ref(),
        encoder,
        |report, enc| {
            writeln!(log, "{}", report.csv_row()).map_err(|e| Error::io(&a.log, e))?;
            let val = report
                .val
                .as_ref()
                .map(|v| format!(" val_acc25 {:.4} val_acc200 {:.4} val_acc750 {:.4}", v.acc25, v.acc200, v.acc750))
                .unwrap_or_default();
            println!(
                "epoch {}: loss {:.6} mean_weight {:.4} hard {} false {}{}",
                report.epoch, report.mean_loss, report.mean_weight, report.hard_count,
                report.false_count, val
            );
            if ckpt_every > 0 && (report.epoch + 1) % ckpt_every == 0 {
                let stem = out_path.with_extension("");
                let path = PathBuf::from(format!(
                    "{}-epoch{}.gckpt",
                    stem.display(),
                    report.epoch
                ));
                enc.save_checkpoint(&path)?;
            }
            Ok(())
        },
    )?;
    log.flush().map_err(|e| Error::io(&a.log, e))?;
    encoder.save_checkpoint(&a.out)?;
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::new("eval");
    cfg.set("checkpoint", a.checkpoint.display());
    cfg.set("data", a.data.display());
    cfg.set(
        "gallery_data",
        a.gallery_data.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
    );
    cfg.set("gallery_sample", a.gallery_sample);
    cfg.set("gallery_seed", a.gallery_seed);
    cfg.set("out", a.out.display());
    cfg.emit(&a.out)?;

    let encoder = DualEncoder::load_checkpoint(&a.checkpoint)?;
    let queries_set = Dataset::load_binary(&a.data)?;
    let gallery_set = match &a.gallery_data {
        Some(p) => Dataset::load_binary(p)?,
        None => queries_set.clone(),
    };
    let mut coords: Vec<GeoCoord> = gallery_set.records().iter().map(|r| r.coord).collect();
    if a.gallery_sample > 0 && a.gallery_sample < coords.len() {
        let mut rng = ChaCha20Rng::seed_from_u64(a.gallery_seed);
        coords.shuffle(&mut rng);
        coords.truncate(a.gallery_sample);
    }
    let gallery = build_gallery(&coords, &encoder)?;
    let queries: Vec<(Vec<f64>, GeoCoord)> = queries_set
        .records()
        .iter()
        .map(|r| {
            encoder
                .encode_image(&prepare_input(&r.features))
                .map(|e| (e, r.coord))
        })
        .collect::<Result<_, _>>()?;
    let report = evaluate(&gallery, &queries)?;

    println!(
        "gallery {} coords, {} queries",
        gallery.len(),
        report.n_queries
    );
    println!("acc@25km   {:.4}", report.acc25);
    println!("acc@200km  {:.4}", report.acc200);
    println!("acc@750km  {:.4}", report.acc750);
    println!("median error {:.2} km", report.median_error_km);

    let mut text = String::from(EpochReport::csv_header());
    text.push('\n');
    text.push_str(&format!(
        ",,,,,{},{},{}\n",
        report.acc25, report.acc200, report.acc750
    ));
    std::fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    Ok(())
}

fn cmd_weights_audit(a: AuditArgs) -> Result<(), Error> {
    let mut cfg = RunConfig::new("weights audit");
    cfg.set("data", a.data.display());
    cfg.set("model", a.model.display());
    cfg.set("sample", a.sample);
    cfg.set("seed", a.seed);
    cfg.set("s2", a.s2);
    cfg.set("s1", a.s1);
    cfg.set("theta2_km", a.theta2_km);
    cfg.set("delta_scale", a.delta_scale);
    cfg.set("out", a.out.display());

    let dataset = Dataset::load_binary(&a.data)?;
    if dataset.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "weights audit needs at least 2 records, got {}",
            dataset.len()
        )));
    }
    let (rc, model) = load_reweight(&a.model, a.s1, a.s2, a.theta1_km, a.theta2_km, a.delta_scale)?;
    cfg.set("theta1_km", rc.theta1_km());
    cfg.set("model_range_km", model.range_km());
    cfg.emit(&a.out)?;

    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let records = dataset.records();
    let n = records.len();
    let mut out = String::from("anchor_id,neg_id,d_km,d_cos,gamma_expected,delta,weight,class\n");
    for _ in 0..a.sample {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let e = weight_entry(
            &rc,
            Sample {
                features: &records[i].features,
                coord: records[i].coord,
            },
            Sample {
                features: &records[j].features,
                coord: records[j].coord,
            },
        )?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            records[i].id, records[j].id, e.d_km, e.d_cos, e.expected, e.delta, e.weight, e.class
        ));
    }
    std::fs::write(&a.out, out).map_err(|e| Error::io(&a.out, e))?;
    println!("audit of {} pairs written to {}", a.sample, a.out.display());
    Ok(())
}
