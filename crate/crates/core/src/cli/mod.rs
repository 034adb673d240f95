//! The `geocond` command line.
//!
//! Every subcommand resolves a [`RunConfig`] (file values overridden by
//! flags), validates it before doing any work, stages its outputs and
//! publishes them only on success. Exit codes: 0 success, 1 invalid input,
//! 2 runtime or numerical failure.

mod config;
mod output;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::diffnet::gradcheck;
use crate::domain::{
    encode_dataset, encode_gray_pgm, encode_pgm, read_dataset, read_measurements, read_pgm,
    threshold, BinaryImage,
};
use crate::evalstats::{diversity, StatsReport};
use crate::gan::{self, EndpointSpread, GanModel, Trainer};
use crate::inpaint::{self, Radius};
use crate::obm::{self, ObmParams};
use crate::{par, Error, Result};

pub use config::{Paths, RunConfig};
pub use output::{provenance, sha256_hex, write_atomic, StagedDir};

/// Images synthesized when neither `--count` nor the config sets a count.
pub const DEFAULT_SYNTH_COUNT: usize = 5000;
/// Realizations whose pairwise diversity `condition` reports.
const DIVERSITY_TOP: usize = 5;
const ADJOINT_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "geocond",
    version,
    about = "Fluvial geomodelling with a GAN prior"
)]
struct Cli {
    /// Worker threads; 1 gives the strictest determinism.
    #[arg(long, global = true, env = "GEOCOND_WORKERS", value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset of channel images.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        /// Square image size; picks the default parameters for that size.
        #[arg(long)]
        size: Option<usize>,
        /// Also write every image as a PGM into this directory.
        #[arg(long)]
        dump_pgm: Option<PathBuf>,
    },
    /// Train the GAN on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Draw unconditional samples from a trained model.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Produce realizations that honor point measurements.
    Condition {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        measurements: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Mask radius in pixels, or `auto`.
        #[arg(long, value_parser = parse_radius)]
        radius: Option<Radius>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Decode a straight line between two random latent vectors.
    Traverse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// How the endpoint spread of 2 is read.
        #[arg(long, value_enum, default_value_t = Spread::Variance2)]
        spread: Spread,
    },
    /// Summary statistics of a dataset, optionally against samples.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory of PGM samples to compare with the dataset.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every layer and the composed networks.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Spread {
    Variance2,
    Std2,
}

fn parse_radius(s: &str) -> std::result::Result<Radius, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let workers = cli
        .workers
        .map_or_else(par::available_workers, |w| w as usize);
    match par::with_workers(workers, || dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    let missing_input = matches!(e, Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound);
    if e.is_validation() || missing_input {
        1
    } else {
        2
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth {
            common,
            out,
            seed,
            count,
            size,
            dump_pgm,
        } => synth(&common, out, seed, count, size, dump_pgm),
        Command::Train {
            common,
            data,
            out,
            epochs,
            log,
        } => train(&common, data, out, epochs, log),
        Command::Generate {
            common,
            model,
            count,
            seed,
            out,
        } => generate(&common, model, count, seed, out),
        Command::Condition {
            common,
            model,
            measurements,
            out,
            restarts,
            lambda,
            radius,
            iters,
            seed,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            let ic = &mut cfg.inpaint;
            ic.restarts = restarts.unwrap_or(ic.restarts);
            ic.lambda = lambda.unwrap_or(ic.lambda);
            ic.radius = radius.unwrap_or(ic.radius);
            ic.iterations = iters.unwrap_or(ic.iterations);
            ic.seed = seed.or(cfg.seed).unwrap_or(ic.seed);
            condition(cfg, model, measurements, out)
        }
        Command::Traverse {
            common,
            model,
            steps,
            seed,
            out,
            spread,
        } => {
            let spread = match spread {
                Spread::Variance2 => EndpointSpread::Variance2,
                Spread::Std2 => EndpointSpread::Std2,
            };
            traverse(&common, model, steps, seed, out, spread)
        }
        Command::Stats {
            common,
            data,
            samples,
            out,
        } => stats(&common, data, samples, out),
        Command::Gradcheck { tolerance } => gradcheck_all(tolerance),
    }
}

/// Hash input for the provenance header: the resolved configuration
/// without paths, so reruns into other directories share a header.
fn config_json(cfg: &RunConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.paths = Paths::default();
    serde_json::to_string(&c).map_err(|e| Error::Invalid(e.to_string()))
}

fn model_line(path: &Path) -> Result<String> {
    Ok(format!("# model_sha256={}\n", sha256_hex(&fs::read(path)?)))
}

fn synth(
    common: &Common,
    out: Option<PathBuf>,
    seed: Option<u64>,
    count: Option<usize>,
    size: Option<usize>,
    dump_pgm: Option<PathBuf>,
) -> Result<i32> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let out = config::required(&out, &cfg.paths.out, "out")?;
    let params = match (cfg.obm.take(), size) {
        (Some(p), None) => p,
        (Some(p), Some(n)) => ObmParams {
            height: n,
            width: n,
            ..p
        },
        (None, n) => ObmParams::for_size(n.unwrap_or(128)),
    };
    if params.height == 0 || params.width == 0 {
        return Err(Error::Invalid("image size must be at least 1".into()));
    }
    params.validate()?;
    let count = count.or(cfg.count).unwrap_or(DEFAULT_SYNTH_COUNT);
    if count == 0 {
        return Err(Error::Invalid("count must be at least 1".into()));
    }
    let seed = seed.or(cfg.seed).unwrap_or(0);
    cfg.obm = Some(params.clone());
    cfg.count = Some(count);
    cfg.seed = Some(seed);

    let images = obm::generate_dataset(&params, count, seed)?;
    let staged = match &dump_pgm {
        Some(dir) => {
            let staged = StagedDir::new(dir)?;
            for (i, img) in images.iter().enumerate() {
                staged.write(&format!("img_{i:05}.pgm"), &encode_pgm(img))?;
            }
            Some(staged)
        }
        None => None,
    };
    let bytes = encode_dataset(&images)?;
    if let Some(s) = staged {
        s.commit()?;
    }
    write_atomic(&out, &bytes)?;
    let report = StatsReport::new(&images)?;
    print!("{}", provenance("synth", &config_json(&cfg)?, seed));
    println!(
        "count={count}\nheight={}\nwidth={}\nmean_proportion={:.6}",
        params.height, params.width, report.mean_proportion
    );
    Ok(0)
}

fn train(
    common: &Common,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    log: Option<PathBuf>,
) -> Result<i32> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let data = config::required(&data, &cfg.paths.data, "data")?;
    let out = config::required(&out, &cfg.paths.out, "out")?;
    let log = log.or(cfg.paths.log.clone());
    let images = read_dataset(&data)?;
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("dataset is empty".into()))?;
    if first.height() != first.width() {
        return Err(Error::Invalid(format!(
            "training images must be square, got {}x{}",
            first.height(),
            first.width()
        )));
    }
    cfg.gan.image_size = first.height();
    cfg.gan.epochs = epochs.unwrap_or(cfg.gan.epochs);
    cfg.gan.seed = cfg.seed.unwrap_or(cfg.gan.seed);
    cfg.gan.validate()?;

    let model = gan::build(&cfg.gan)?;
    let tensor = gan::images_to_tensor(&images)?;
    let mut text = provenance("train", &config_json(&cfg)?, cfg.gan.seed);
    let _ = writeln!(
        text,
        "# images={} size={}",
        images.len(),
        cfg.gan.image_size
    );
    let mut trainer = Trainer::new(model);
    for _ in 0..cfg.gan.epochs {
        let summary = trainer.train_epoch(&tensor)?;
        eprintln!("{summary}");
        let _ = writeln!(text, "{summary}");
    }
    let done = trainer.epochs_done();
    let bytes = trainer.into_model().to_checkpoint(done).encode()?;
    write_atomic(&out, &bytes)?;
    if let Some(log) = log {
        write_atomic(&log, text.as_bytes())?;
    }
    Ok(0)
}

fn load_model(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<(GanModel, String)> {
    let path = config::required(&flag, &cfg.paths.model, "model")?;
    Ok((GanModel::load(&path)?, model_line(&path)?))
}

fn generate(
    common: &Common,
    model: Option<PathBuf>,
    count: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<i32> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let out = config::required(&out, &cfg.paths.out, "out")?;
    let count = config::required(&count, &cfg.count, "count")?;
    if count == 0 {
        return Err(Error::Invalid("count must be at least 1".into()));
    }
    let seed = seed.or(cfg.seed).unwrap_or(0);
    cfg.count = Some(count);
    cfg.seed = Some(seed);
    let (model, model_hash) = load_model(model, &cfg)?;

    let images: Vec<BinaryImage> = gan::sample(&model, count, seed)?
        .iter()
        .map(threshold)
        .collect();
    let staged = StagedDir::new(&out)?;
    for (i, img) in images.iter().enumerate() {
        staged.write(&format!("sample_{i:05}.pgm"), &encode_pgm(img))?;
    }
    let mut report = provenance("generate", &config_json(&cfg)?, seed);
    report.push_str(&model_hash);
    report.push_str(&StatsReport::new(&images)?.to_text());
    staged.write("report.txt", report.as_bytes())?;
    staged.commit()?;
    Ok(0)
}

fn condition(
    cfg: RunConfig,
    model: Option<PathBuf>,
    measurements: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<i32> {
    cfg.validate()?;
    let out = config::required(&out, &cfg.paths.out, "out")?;
    let mpath = config::required(&measurements, &cfg.paths.measurements, "measurements")?;
    let (model, model_hash) = load_model(model, &cfg)?;
    let n = model.image_size();
    let ms = read_measurements(&mpath, Some((n, n)))?;
    let ic = &cfg.inpaint;
    let radius = ic.radius.resolve(ms.len());

    let results = inpaint::condition(&model, &ms, ic)?;
    let staged = StagedDir::new(&out)?;
    let mut report = provenance("condition", &config_json(&cfg)?, ic.seed);
    report.push_str(&model_hash);
    let _ = writeln!(report, "measurements={}", ms.len());
    let _ = writeln!(report, "radius={radius}");
    let _ = writeln!(report, "restarts={}", results.len());
    let best_honor = results.iter().map(|r| r.honor_rate).fold(0.0, f64::max);
    let _ = writeln!(report, "best_honor_rate={best_honor:.6}");
    let top: Vec<BinaryImage> = results
        .iter()
        .take(DIVERSITY_TOP)
        .map(|r| threshold(&r.image))
        .collect();
    if let Ok(d) = diversity(&top) {
        let _ = writeln!(report, "top{DIVERSITY_TOP}_diversity={d:.6}");
    }
    let _ = writeln!(
        report,
        "# rank restart total_loss context_loss prior_loss honor_rate"
    );
    for (rank, r) in results.iter().enumerate() {
        let _ = writeln!(
            report,
            "{rank} {} {:.6} {:.6} {:.6} {:.6}",
            r.restart, r.total_loss, r.context_loss, r.prior_loss, r.honor_rate
        );
        staged.write(
            &format!("realization_{rank:02}.pgm"),
            &encode_pgm(&threshold(&r.image)),
        )?;
    }
    staged.write("report.txt", report.as_bytes())?;
    staged.commit()?;
    Ok(0)
}

fn traverse(
    common: &Common,
    model: Option<PathBuf>,
    steps: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
    spread: EndpointSpread,
) -> Result<i32> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let out = config::required(&out, &cfg.paths.out, "out")?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    cfg.seed = Some(seed);
    let (model, model_hash) = load_model(model, &cfg)?;
    let (z1, z2) = gan::traversal_endpoints(seed, model.latent_dim(), spread);
    let images = gan::traverse(&model, &z1, &z2, steps)?;

    let staged = StagedDir::new(&out)?;
    let mut report = provenance("traverse", &config_json(&cfg)?, seed);
    report.push_str(&model_hash);
    let _ = writeln!(report, "steps={steps}\nendpoint_std={}", spread.std());
    for (i, img) in images.iter().enumerate() {
        let bin = threshold(img);
        let _ = writeln!(
            report,
            "step_{i:03}_proportion={:.6}",
            crate::evalstats::proportion(&bin)
        );
        staged.write(&format!("step_{i:03}.pgm"), &encode_pgm(&bin))?;
    }
    staged.write("report.txt", report.as_bytes())?;
    staged.commit()?;
    Ok(0)
}

fn read_pgm_dir(dir: &Path) -> Result<Vec<BinaryImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!(
            "no .pgm files in {}",
            dir.display()
        )));
    }
    paths.iter().map(read_pgm).collect()
}

fn stats(
    common: &Common,
    data: Option<PathBuf>,
    samples: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<i32> {
    let cfg = RunConfig::load(common.config.as_deref())?;
    let data = config::required(&data, &cfg.paths.data, "data")?;
    let out = config::required(&out, &cfg.paths.out, "out")?;
    let samples = samples.or(cfg.paths.samples.clone());
    let images = read_dataset(&data)?;
    let mut report = StatsReport::new(&images)?;
    if let Some(dir) = samples {
        report = report.compare(&read_pgm_dir(&dir)?)?;
    }
    let m = &report.mean_image;
    let pgm = encode_gray_pgm(m.height, m.width, &m.gray_levels());
    let mut text = provenance("stats", &config_json(&cfg)?, cfg.seed.unwrap_or(0));
    text.push_str(&report.to_text());
    write_atomic(&out.with_extension("mean.pgm"), &pgm)?;
    write_atomic(&out, text.as_bytes())?;
    Ok(0)
}

fn gradcheck_all(tolerance: f64) -> Result<i32> {
    if !(tolerance > 0.0) {
        return Err(Error::Invalid(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    let mut results = gradcheck::layer_suite(gradcheck::DEFAULT_STEP, tolerance)?;
    results.extend(gan::composed_gradcheck(
        gradcheck::COMPOSED_STEP,
        tolerance,
    )?);
    let mut ok = true;
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {} checked={} max_rel_error={:.3e}",
            r.name, r.checked, r.max_rel_error
        );
        ok &= r.passed();
    }
    let gap = gradcheck::adjoint_gap(1)?;
    let adjoint_ok = gap < ADJOINT_TOLERANCE;
    println!(
        "{} conv_adjoint rel_gap={gap:.3e}",
        if adjoint_ok { "PASS" } else { "FAIL" }
    );
    Ok(if ok && adjoint_ok { 0 } else { 2 })
}
