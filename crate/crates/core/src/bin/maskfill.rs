use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use maskfill::config::{to_toml, DenoiseOverrides, RunConfig};
use maskfill::eval::{run_eval, NoiseSidecar};
use maskfill::io::{list_images, load_image, save_image_with_maxval, Codec};
use maskfill::manifest::{digest, file_digest, ManifestEntry, RunManifest, MANIFEST_FILE};
use maskfill::masking::MaskSpec;
use maskfill::metrics;
use maskfill::model::{load_weights, HourglassConfig};
use maskfill::noise::NoiseSpec;
use maskfill::pretrain::{run_pretrain, PretrainConfig};
use maskfill::zeroshot::{denoise, direct_ensemble, init_model, DenoiseConfig, EnsembleMode, PlateauStop, Preset};
use maskfill::{stream_rng, Error, FormatError, Image, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_EMPTY: u8 = 5;
const EXIT_MISMATCH: u8 = 6;

#[derive(Parser)]
#[command(name = "maskfill", version, about = "Zero-shot image denoising by masked iterative filling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Masked pre-training on a directory of clean images.
    Pretrain(PretrainArgs),
    /// Denoise images by iterative filling.
    Denoise(DenoiseArgs),
    /// Average a fixed network's masked predictions (no optimization).
    DirectEnsemble(DirectArgs),
    /// Synthesize noisy versions of clean images.
    AddNoise(AddNoiseArgs),
    /// PSNR/SSIM of filename-matched image pairs.
    Eval(EvalArgs),
    /// Re-run a recorded manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Deterministic mode: the manifest leaves out wall-clock timings so
    /// repeated runs are byte-identical.
    #[arg(long)]
    strict: bool,
    /// Images processed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Where to write the run manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of clean training images.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output weight file.
    #[arg(long, short)]
    out: PathBuf,
    /// CSV log of step,lr,loss.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    /// One mask plane for all channels.
    #[arg(long)]
    shared_masks: bool,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
}

#[derive(Args)]
struct DenoiseArgs {
    #[command(flatten)]
    common: Common,
    /// Noisy images or directories of them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output file (single input) or directory.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    preset: Option<Preset>,
    /// Pre-trained weights; without them the network starts from scratch.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    /// One mask plane for all channels.
    #[arg(long, conflicts_with = "independent_masks")]
    shared_masks: bool,
    /// Independent masks per channel.
    #[arg(long)]
    independent_masks: bool,
    /// Pixel-shuffle factor (1 disables).
    #[arg(long)]
    pd: Option<usize>,
    /// ema, average, last or avg-after=K.
    #[arg(long)]
    ensemble: Option<EnsembleMode>,
    /// Supervise every pixel instead of only hidden ones.
    #[arg(long)]
    no_mask_loss: bool,
    /// Stop early on a loss plateau, given as WINDOW:REL_THRESHOLD.
    #[arg(long, value_parser = parse_plateau)]
    plateau: Option<PlateauStop>,
    /// Write a JSON-lines trace next to each output.
    #[arg(long)]
    trace: bool,
    /// Clean image or directory (matched by file stem) for trace PSNR.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Save with 16 bits per sample.
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Args)]
struct DirectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Number of random masks.
    #[arg(long, default_value_t = 64)]
    masks: usize,
    #[arg(long, default_value_t = 0.3)]
    mask_ratio: f64,
    #[arg(long)]
    shared_masks: bool,
}

#[derive(Args)]
struct AddNoiseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// gaussian, poisson, nlf, speckle or salt_pepper.
    #[arg(long, requires = "param")]
    kind: Option<String>,
    /// Strength on the [0, 1] intensity scale (sigma, lambda, sigma_s, v or d).
    #[arg(long)]
    param: Option<f64>,
    /// Draw each image's parameter from the generalization-suite range of
    /// this kind.
    #[arg(long, conflicts_with = "kind")]
    suite: Option<String>,
    #[arg(long)]
    sixteen_bit: bool,
}

#[derive(Args)]
struct EvalArgs {
    clean: PathBuf,
    other: PathBuf,
    /// Write the CSV report here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Round both sides to 8 bits before scoring.
    #[arg(long)]
    quantize: bool,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Directory for the replayed outputs.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_plateau(s: &str) -> std::result::Result<PlateauStop, String> {
    let (w, r) = s.split_once(':').ok_or("expected WINDOW:REL_THRESHOLD")?;
    Ok(PlateauStop {
        window: w.parse().map_err(|e| format!("window: {e}"))?,
        rel_threshold: r.parse().map_err(|e| format!("threshold: {e}"))?,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::DirectEnsemble(a) => cmd_direct(a),
        Command::AddNoise(a) => cmd_add_noise(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Shape(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format(_) => EXIT_IO,
        Error::Numeric(_) => EXIT_NUMERIC,
    }
}

fn print_effective<T: Serialize>(command: &str, value: &T) {
    eprintln!("# effective {command} config");
    eprint!("{}", to_toml(value));
}

/// Expands directories into their image files; keeps argument order.
fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_images(p)?);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no input images".into()));
    }
    Ok(out)
}

/// Output path per input: `out` itself for one input given a file name
/// with an image extension, otherwise `out/<input file name>`.
fn output_paths(inputs: &[PathBuf], out: &Path) -> Result<(Vec<PathBuf>, PathBuf)> {
    let single_file = inputs.len() == 1 && !out.is_dir() && Codec::from_path(out).is_ok();
    let paths: Vec<PathBuf> = if single_file {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        vec![out.to_path_buf()]
    } else {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        inputs
            .iter()
            .map(|p| out.join(p.file_name().unwrap_or_default()))
            .collect()
    };
    for (i, o) in inputs.iter().zip(&paths) {
        if same_file(i, o) {
            return Err(Error::Config(format!("output {} would overwrite its input", o.display())));
        }
    }
    let manifest = if single_file {
        out.with_extension("manifest.json")
    } else {
        out.join(MANIFEST_FILE)
    };
    Ok((paths, manifest))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Runs `job` over `0..n` on up to `jobs` threads; results keep index
/// order.
fn run_pool<T: Send>(n: usize, jobs: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = job(i);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect()
}

fn input_entry(input: &Path, output: &Path) -> Result<ManifestEntry> {
    Ok(ManifestEntry {
        input: input.display().to_string(),
        output: output.display().to_string(),
        input_digest: file_digest(input)?,
        output_digest: file_digest(output)?,
        details: Default::default(),
    })
}

fn maxval(sixteen: bool) -> u16 {
    if sixteen {
        65535
    } else {
        255
    }
}

// ---------------------------------------------------------------- pretrain

fn cmd_pretrain(a: PretrainArgs) -> Result<u8> {
    let run = a.common.run_config()?;
    let mut cfg = PretrainConfig {
        model: run.model,
        ..run.pretrain.clone()
    };
    if let Some(c) = a.corpus {
        cfg.corpus_dir = c;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag {
                cfg.$field = v;
            }
        )*};
    }
    set!(steps => total_steps, crop => crop_size, batch => batch_size, mask_ratio => mask_ratio, lr0 => lr0, lr_min => lr_min);
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if a.shared_masks {
        cfg.shared_channels = true;
    }
    cfg.validate()?;
    print_effective("pretrain", &cfg);
    let start = Instant::now();
    let every = (cfg.total_steps / 20).max(1);
    let total = cfg.total_steps;
    let outcome = run_pretrain(&cfg, &a.out, a.log.as_deref(), |r| {
        if r.step % every == 0 || r.step + 1 == total {
            eprintln!("step {:>6}/{total}  lr {:.3e}  loss {:.6}", r.step + 1, r.lr, r.loss);
        }
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut manifest = RunManifest::new("pretrain", a.common.strict, cfg.seed, &cfg)?;
    let wdigest = file_digest(&a.out)?;
    manifest.weights_digest = Some(wdigest.clone());
    let mut entry = ManifestEntry {
        input: cfg.corpus_dir.display().to_string(),
        output: a.out.display().to_string(),
        input_digest: String::new(),
        output_digest: wdigest,
        details: Default::default(),
    };
    entry.details.insert("corpus_images".into(), outcome.corpus_size.into());
    if let Some(log) = &a.log {
        entry.details.insert("log".into(), log.display().to_string().into());
    }
    manifest.entries.push(entry);
    manifest.set_timings(elapsed, vec![elapsed]);
    manifest.save(a.common.manifest.unwrap_or_else(|| a.out.with_extension("manifest.json")))?;
    eprintln!("wrote {} ({} images in corpus)", a.out.display(), outcome.corpus_size);
    Ok(0)
}

// ----------------------------------------------------------------- denoise

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenoisePlan {
    denoise: DenoiseConfig,
    model: HourglassConfig,
    trace: bool,
    maxval: u16,
}

fn cmd_denoise(a: DenoiseArgs) -> Result<u8> {
    let run = a.common.run_config()?;
    let flags = DenoiseOverrides {
        mask_ratio: a.mask_ratio,
        shared_channels: if a.shared_masks {
            Some(true)
        } else if a.independent_masks {
            Some(false)
        } else {
            None
        },
        beta: a.beta,
        iterations: a.iters,
        lr: a.lr,
        pd_factor: a.pd,
        ensemble: a.ensemble,
        mask_loss: a.no_mask_loss.then_some(false),
        seed: a.common.seed,
        plateau: a.plateau,
        init_weights: a.weights.clone(),
    };
    let cfg = run.denoise_config(a.preset, &flags)?;
    let model = match &cfg.init_weights {
        Some(p) => load_weights(p)?.config,
        None => run.model,
    };
    let plan = DenoisePlan {
        denoise: cfg,
        model,
        trace: a.trace,
        maxval: maxval(a.sixteen_bit),
    };
    print_effective("denoise", &plan);
    let inputs = collect_inputs(&a.inputs)?;
    let (outputs, default_manifest) = output_paths(&inputs, &a.out)?;
    let manifest = execute_denoise(&plan, &inputs, &outputs, a.reference.as_deref(), a.common.jobs, a.common.strict)?;
    manifest.save(a.common.manifest.unwrap_or(default_manifest))?;
    Ok(0)
}

fn find_reference(reference: Option<&Path>, input: &Path) -> Result<Option<Image>> {
    let Some(r) = reference else { return Ok(None) };
    let path = if r.is_dir() {
        let stem = input.file_stem();
        match list_images(r)?.into_iter().find(|p| p.file_stem() == stem) {
            Some(p) => p,
            None => return Ok(None),
        }
    } else {
        r.to_path_buf()
    };
    Ok(Some(load_image(path)?.image))
}

fn execute_denoise(
    plan: &DenoisePlan,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    reference: Option<&Path>,
    jobs: usize,
    strict: bool,
) -> Result<RunManifest> {
    let start = Instant::now();
    let cfg = &plan.denoise;
    let results = run_pool(inputs.len(), jobs, |i| {
        let t0 = Instant::now();
        let x = load_image(&inputs[i])?.image;
        let clean = find_reference(reference, &inputs[i])?
            .map(|c| c.with_channels(x.channels()))
            .transpose()?;
        let mut model = init_model(cfg.init_weights.as_deref(), plan.model, x.channels(), cfg.seed)?;
        let out = denoise(&mut model, &x, cfg, clean.as_ref(), None)?;
        save_image_with_maxval(&out.image, &outputs[i], plan.maxval)?;
        if plan.trace {
            let path = outputs[i].with_extension("trace.jsonl");
            let mut text = String::new();
            for row in &out.trace {
                text.push_str(&serde_json::to_string(row).expect("trace row serializes"));
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        let mut entry = input_entry(&inputs[i], &outputs[i])?;
        entry.details.insert("iterations".into(), out.iterations.into());
        entry.details.insert("never_hit".into(), out.never_hit.into());
        if let Some(c) = &clean {
            entry.details.insert("psnr".into(), metrics::psnr(c, &out.image)?.into());
            entry.details.insert("ssim".into(), metrics::ssim(c, &out.image)?.into());
        }
        eprintln!(
            "{} -> {} ({} iterations)",
            inputs[i].display(),
            outputs[i].display(),
            out.iterations
        );
        Ok((entry, t0.elapsed().as_secs_f64()))
    })?;
    let mut manifest = RunManifest::new("denoise", strict, cfg.seed, plan)?;
    if let Some(w) = &cfg.init_weights {
        manifest.weights_digest = Some(file_digest(w)?);
    }
    let (entries, times): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    manifest.entries = entries;
    manifest.set_timings(start.elapsed().as_secs_f64(), times);
    Ok(manifest)
}

// --------------------------------------------------------- direct-ensemble

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DirectPlan {
    weights: PathBuf,
    masks: usize,
    mask_ratio: f64,
    shared_channels: bool,
    seed: u64,
}

fn cmd_direct(a: DirectArgs) -> Result<u8> {
    let plan = DirectPlan {
        weights: a.weights,
        masks: a.masks,
        mask_ratio: a.mask_ratio,
        shared_channels: a.shared_masks,
        seed: a.common.seed.unwrap_or(0),
    };
    print_effective("direct-ensemble", &plan);
    let inputs = collect_inputs(&a.inputs)?;
    let (outputs, default_manifest) = output_paths(&inputs, &a.out)?;
    let manifest = execute_direct(&plan, &inputs, &outputs, a.common.jobs, a.common.strict)?;
    manifest.save(a.common.manifest.unwrap_or(default_manifest))?;
    Ok(0)
}

fn execute_direct(plan: &DirectPlan, inputs: &[PathBuf], outputs: &[PathBuf], jobs: usize, strict: bool) -> Result<RunManifest> {
    let start = Instant::now();
    let spec = MaskSpec::new(plan.mask_ratio, plan.shared_channels)?;
    let weights = load_weights(&plan.weights)?;
    let results = run_pool(inputs.len(), jobs, |i| {
        let t0 = Instant::now();
        let x = load_image(&inputs[i])?.image;
        let model = init_model(Some(&plan.weights), weights.config, x.channels(), plan.seed)?;
        let out = direct_ensemble(&model, &x, &spec, plan.masks, &mut stream_rng(plan.seed, 3))?;
        save_image_with_maxval(&out.image, &outputs[i], 255)?;
        let mut entry = input_entry(&inputs[i], &outputs[i])?;
        entry.details.insert("never_hit".into(), out.never_hit.into());
        Ok((entry, t0.elapsed().as_secs_f64()))
    })?;
    let mut manifest = RunManifest::new("direct-ensemble", strict, plan.seed, plan)?;
    manifest.weights_digest = Some(file_digest(&plan.weights)?);
    let (entries, times): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    manifest.entries = entries;
    manifest.set_timings(start.elapsed().as_secs_f64(), times);
    Ok(manifest)
}

// --------------------------------------------------------------- add-noise

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NoisePlan {
    noise: Option<NoiseSpec>,
    suite: Option<String>,
    seed: u64,
    maxval: u16,
}

fn cmd_add_noise(a: AddNoiseArgs) -> Result<u8> {
    let run = a.common.run_config()?;
    let noise = match (&a.kind, a.param) {
        (Some(k), Some(p)) => Some(NoiseSpec::from_kind(k, p)?),
        _ => run.noise,
    };
    if noise.is_none() && a.suite.is_none() {
        return Err(Error::Config("give --kind and --param, --suite, or a [noise] table".into()));
    }
    let plan = NoisePlan {
        noise: if a.suite.is_some() { None } else { noise },
        suite: a.suite,
        seed: a.common.seed.unwrap_or(0),
        maxval: maxval(a.sixteen_bit),
    };
    print_effective("add-noise", &plan);
    let inputs = collect_inputs(&a.inputs)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let outputs: Vec<PathBuf> = inputs
        .iter()
        .map(|p| a.out.join(p.file_name().unwrap_or_default()))
        .collect();
    let manifest = execute_add_noise(&plan, &inputs, &outputs, a.common.jobs, a.common.strict)?;
    manifest.save(a.common.manifest.unwrap_or_else(|| a.out.join(MANIFEST_FILE)))?;
    Ok(0)
}

fn execute_add_noise(plan: &NoisePlan, inputs: &[PathBuf], outputs: &[PathBuf], jobs: usize, strict: bool) -> Result<RunManifest> {
    let start = Instant::now();
    // stream 0 is reserved; image i draws from stream 100 + i
    let results = run_pool(inputs.len(), jobs, |i| {
        let t0 = Instant::now();
        let mut rng = stream_rng(plan.seed, 100 + i as u64);
        let spec = match (&plan.suite, plan.noise) {
            (Some(kind), _) => NoiseSpec::sample_suite(kind, &mut rng)?,
            (None, Some(s)) => s,
            (None, None) => return Err(Error::Config("no noise model".into())),
        };
        let buf = load_image(&inputs[i])?;
        let noisy = spec.apply(&buf.image, &mut rng)?;
        save_image_with_maxval(&noisy, &outputs[i], plan.maxval)?;
        let mut entry = input_entry(&inputs[i], &outputs[i])?;
        entry.details.insert("noise_kind".into(), spec.kind().into());
        entry.details.insert("param".into(), spec.param().into());
        Ok(((entry, spec), t0.elapsed().as_secs_f64()))
    })?;
    let mut sidecar = NoiseSidecar::default();
    let mut manifest = RunManifest::new("add-noise", strict, plan.seed, plan)?;
    let mut times = Vec::new();
    for (((entry, spec), t), out) in results.into_iter().zip(outputs) {
        let name = out.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        sidecar.files.insert(name, spec);
        manifest.entries.push(entry);
        times.push(t);
    }
    if let Some(dir) = outputs.first().and_then(|o| o.parent()) {
        sidecar.save(dir)?;
    }
    manifest.set_timings(start.elapsed().as_secs_f64(), times);
    Ok(manifest)
}

// -------------------------------------------------------------------- eval

fn cmd_eval(a: EvalArgs) -> Result<u8> {
    let outcome = run_eval(&a.clean, &a.other, a.quantize)?;
    for p in &outcome.unmatched {
        eprintln!("unmatched: {}", p.display());
    }
    let csv = outcome.report.to_csv();
    match &a.csv {
        Some(p) => std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?,
        None => print!("{csv}"),
    }
    let manifest_path = a
        .manifest
        .clone()
        .or_else(|| a.csv.as_ref().map(|p| p.with_extension("manifest.json")));
    if let Some(mp) = manifest_path {
        let config = serde_json::json!({
            "clean": a.clean.display().to_string(),
            "other": a.other.display().to_string(),
            "quantize": a.quantize,
        });
        let mut m = RunManifest::new("eval", true, 0, &config)?;
        for r in &outcome.report.rows {
            let mut e = ManifestEntry {
                input: r.path.clone(),
                output: a.csv.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                input_digest: String::new(),
                output_digest: digest(csv.as_bytes()),
                details: Default::default(),
            };
            e.details.insert("psnr".into(), r.psnr.into());
            e.details.insert("ssim".into(), r.ssim.into());
            m.entries.push(e);
        }
        m.save(mp)?;
    }
    if outcome.report.rows.is_empty() {
        eprintln!("error: no filename-matched pairs");
        return Ok(EXIT_EMPTY);
    }
    if let (Some(p), Some(s)) = (outcome.report.mean_psnr(), outcome.report.mean_ssim()) {
        eprintln!("{} pairs: mean PSNR {p:.3} dB, mean SSIM {s:.4}", outcome.report.rows.len());
    }
    Ok(0)
}

// ------------------------------------------------------------------ replay

fn cmd_replay(a: ReplayArgs) -> Result<u8> {
    let recorded = RunManifest::load(&a.manifest)?;
    let inputs: Vec<PathBuf> = recorded.entries.iter().map(|e| PathBuf::from(&e.input)).collect();
    for (e, p) in recorded.entries.iter().zip(&inputs) {
        if file_digest(p)? != e.input_digest {
            return Err(Error::Config(format!("input {} changed since the recorded run", p.display())));
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let outputs: Vec<PathBuf> = recorded
        .entries
        .iter()
        .map(|e| a.out.join(Path::new(&e.output).file_name().unwrap_or_default()))
        .collect();
    let plan_err = |e: serde_json::Error| Error::Config(format!("manifest config: {e}"));
    let replayed = match recorded.command.as_str() {
        "denoise" => {
            let plan: DenoisePlan = serde_json::from_value(recorded.config.clone()).map_err(plan_err)?;
            execute_denoise(&plan, &inputs, &outputs, None, a.jobs, recorded.strict)?
        }
        "direct-ensemble" => {
            let plan: DirectPlan = serde_json::from_value(recorded.config.clone()).map_err(plan_err)?;
            execute_direct(&plan, &inputs, &outputs, a.jobs, recorded.strict)?
        }
        "add-noise" => {
            let plan: NoisePlan = serde_json::from_value(recorded.config.clone()).map_err(plan_err)?;
            execute_add_noise(&plan, &inputs, &outputs, a.jobs, recorded.strict)?
        }
        other => {
            return Err(FormatError::Unsupported(Some(format!("replay of {other:?} runs"))).into());
        }
    };
    let mut same = true;
    for (old, new) in recorded.entries.iter().zip(&replayed.entries) {
        let ok = old.output_digest == new.output_digest;
        same &= ok;
        println!("{} {}", if ok { "identical" } else { "DIFFERS  " }, new.output);
    }
    Ok(if same { 0 } else { EXIT_MISMATCH })
}

