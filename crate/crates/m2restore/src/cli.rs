//! Command-line front end: corpus generation, training, evaluation,
//! inference, and routing analysis as reproducible runs.
//!
//! Exit codes: 0 success, 2 usage/validation errors, 3 numeric failures.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{PriorKind, RunConfig};
use crate::data::{load_split, read_ppm, write_ppm, write_split, Image, Sample};
use crate::dder::Mode;
use crate::error::{Error, Result};
use crate::metrics::{psnr, silhouette, ssim};
use crate::model::{Model, Variant};
use crate::optim::Adam;
use crate::prompt::{DegradationPrior, LearnedPrior, OraclePrior, PriorProvider};
use crate::train::{batch_tensor, tensor_to_image, train_step};

/// Keeps the model-init stream separate from the training stream.
const TRAIN_RNG_SALT: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Parser, Debug)]
#[command(name = "m2restore", version, about = "All-in-one image restoration at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a synthetic degradation corpus (train + val splits)
    Gen {
        /// Run configuration file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus output directory
        #[arg(long)]
        out: PathBuf,
        /// Override the corpus base seed
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite an existing non-empty output directory
        #[arg(long)]
        force: bool,
    },
    /// Train a model on a generated corpus
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus root containing train/ and val/
        #[arg(long)]
        data: PathBuf,
        /// Run output directory (checkpoints, metrics, config echo)
        #[arg(long)]
        out: PathBuf,
        /// Override the configured step budget
        #[arg(long)]
        steps: Option<u64>,
        /// Override the model variant: full | no_dgf | no_dder | dder_only
        #[arg(long)]
        variant: Option<String>,
        /// Override the training seed
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a checkpoint file
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overwrite an existing non-empty output directory
        #[arg(long)]
        force: bool,
    },
    /// Report per-type and average PSNR/SSIM on a corpus split
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to evaluate; a fresh identity-initialized model when omitted
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Corpus split directory (e.g. corpus/val)
        #[arg(long)]
        data: PathBuf,
        /// Directory for the CSV report; stdout only when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Restore a single image
    Infer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Input image (PPM or PNG)
        #[arg(long)]
        input: PathBuf,
        /// Output image path (PPM or PNG by extension)
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Routing analysis: per-image routing vectors, centroids, silhouette
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Corpus split directory with labeled samples
        #[arg(long)]
        data: PathBuf,
        /// Directory for the CSV report; stdout only when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
    },
}

/// Map an error to the stable exit-code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

/// Parse argv and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" that exit 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen { config, out, seed, force } => {
            let mut cfg = load_config(config.as_deref(), None, None, None)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            cmd_gen(&cfg, &out, force)
        }
        Cmd::Train { config, data, out, steps, variant, seed, resume, force } => {
            let cfg = load_config(config.as_deref(), steps, variant.as_deref(), seed)?;
            cmd_train(&cfg, &data, &out, resume.as_deref(), force)
        }
        Cmd::Eval { config, ckpt, data, out, seed, variant } => {
            let cfg = load_config(config.as_deref(), None, variant.as_deref(), seed)?;
            cmd_eval(&cfg, ckpt.as_deref(), &data, out.as_deref()).map(|_| ())
        }
        Cmd::Infer { config, ckpt, input, out, seed, variant } => {
            let cfg = load_config(config.as_deref(), None, variant.as_deref(), seed)?;
            cmd_infer(&cfg, ckpt.as_deref(), &input, &out)
        }
        Cmd::Analyze { config, ckpt, data, out, seed, variant } => {
            let cfg = load_config(config.as_deref(), None, variant.as_deref(), seed)?;
            cmd_analyze(&cfg, ckpt.as_deref(), &data, out.as_deref()).map(|_| ())
        }
    }
}

fn load_config(
    path: Option<&Path>,
    steps: Option<u64>,
    variant: Option<&str>,
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(v) = variant {
        cfg.model.variant = Variant::parse(v)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn ensure_run_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("config.txt"), &cfg.text)?;
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    ensure_run_dir(out, force)?;
    let train_dir = out.join("train");
    let val_dir = out.join("val");
    std::fs::create_dir_all(&train_dir)?;
    std::fs::create_dir_all(&val_dir)?;
    write_split(
        &train_dir,
        &cfg.types,
        cfg.train_per_type,
        cfg.size,
        cfg.size,
        &cfg.degrade,
        cfg.base_seed,
    )?;
    // Disjoint seed stream for the validation split.
    write_split(
        &val_dir,
        &cfg.types,
        cfg.val_per_type,
        cfg.size,
        cfg.size,
        &cfg.degrade,
        cfg.base_seed ^ 0x00ff_00ff_00ff_00ff,
    )?;
    echo_config(cfg, out)?;
    for ty in &cfg.types {
        println!("{ty}: {} train + {} val", cfg.train_per_type, cfg.val_per_type);
    }
    Ok(())
}

/// The prior provider selected by the run configuration.
enum Prior {
    Oracle(OraclePrior),
    Learned(LearnedPrior<f32>),
}

impl Prior {
    fn get(&self, img: &Image, label: Option<usize>) -> Result<DegradationPrior<f32>> {
        match self {
            Prior::Oracle(p) => p.prior(img, label),
            Prior::Learned(p) => p.prior(img, label),
        }
    }
}

impl PriorProvider<f32> for Prior {
    fn prior(&self, img: &Image, label: Option<usize>) -> Result<DegradationPrior<f32>> {
        self.get(img, label)
    }

    fn num_classes(&self) -> usize {
        crate::data::NUM_CLASSES
    }

    fn feature_width(&self) -> usize {
        match self {
            Prior::Oracle(p) => <OraclePrior as PriorProvider<f32>>::feature_width(p),
            Prior::Learned(p) => p.feature_width(),
        }
    }
}

/// Build the configured prior; the learned variant fits its classifier on
/// the given labeled samples (deterministic in the run seed).
fn build_prior(cfg: &RunConfig, fit_on: &[Sample]) -> Result<Prior> {
    match cfg.prior {
        PriorKind::Oracle => Ok(Prior::Oracle(OraclePrior::new(cfg.model.f_p, cfg.seed))),
        PriorKind::Learned => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xdead_beef);
            let mut lp = LearnedPrior::<f32>::new(&mut rng, cfg.model.f_p)?;
            lp.fit(fit_on, 1000, 8, 2e-3, &mut rng)?;
            Ok(Prior::Learned(lp))
        }
    }
}

fn build_model(cfg: &RunConfig) -> Result<Model<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Model::new(&mut rng, cfg.model.clone())
}

fn load_model(cfg: &RunConfig, ckpt: Option<&Path>) -> Result<Model<f32>> {
    let mut model = build_model(cfg)?;
    if let Some(path) = ckpt {
        let ck = Checkpoint::<f32>::load(path)?;
        let mut opt = Adam::new(cfg.lr);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ck.restore(&mut model, &mut opt, &mut rng)?;
    }
    Ok(model)
}

pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    force: bool,
) -> Result<()> {
    let train = load_split(&data.join("train"))?;
    if train.is_empty() {
        return Err(Error::Contract(format!("no training samples under {}", data.display())));
    }
    if resume.is_none() {
        ensure_run_dir(out, force)?;
    } else {
        std::fs::create_dir_all(out)?;
    }
    echo_config(cfg, out)?;
    let prior = build_prior(cfg, &train)?;

    let mut model = build_model(cfg)?;
    let mut opt = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_RNG_SALT);
    if let Some(path) = resume {
        Checkpoint::<f32>::load(path)?.restore(&mut model, &mut opt, &mut rng)?;
    }
    let start = opt.step;
    if start >= cfg.steps {
        println!("checkpoint already at step {start}, nothing to do");
        return Ok(());
    }

    let metrics_path = out.join("metrics.csv");
    let mut metrics_file = if start > 0 && metrics_path.exists() {
        std::fs::OpenOptions::new().append(true).open(&metrics_path)?
    } else {
        let mut f = std::fs::File::create(&metrics_path)?;
        let usage_cols: Vec<String> =
            (0..cfg.model.n_experts).map(|i| format!("usage_{i}")).collect();
        writeln!(f, "step,l1,balance,total,lr,{}", usage_cols.join(","))?;
        f
    };

    let t0 = Instant::now();
    for step in start..cfg.steps {
        let batch: Vec<Sample> =
            (0..cfg.batch).map(|_| train[rng.gen_range(0..train.len())].clone()).collect();
        let m = train_step(
            &mut model,
            &batch,
            &prior,
            &mut opt,
            cfg.micro_steps,
            Mode::Train,
            &mut rng,
            step,
        )
        .map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
            other => other,
        })?;
        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            let usage: Vec<String> = m.usage.iter().map(u64::to_string).collect();
            writeln!(
                metrics_file,
                "{done},{:.6},{:.6},{:.6},{},{}",
                m.l1,
                m.balance,
                m.total,
                cfg.lr,
                usage.join(",")
            )?;
            println!(
                "step {done}/{}: l1 {:.4} balance {:.4} total {:.4} ({:.1}s)",
                cfg.steps,
                m.l1,
                m.balance,
                m.total,
                t0.elapsed().as_secs_f64()
            );
        }
        if done % cfg.ckpt_every == 0 || done == cfg.steps {
            let ck = Checkpoint::capture(&mut model, &opt, &rng);
            ck.save(&out.join(format!("ckpt_{done:06}.ckpt")))?;
            ck.save(&out.join("latest.ckpt"))?;
        }
    }
    println!("trained {} steps in {:.1}s", cfg.steps - start, t0.elapsed().as_secs_f64());
    Ok(())
}

/// Restore one sample with routing noise off; returns the restored image.
fn restore_sample(
    model: &Model<f32>,
    prior: &Prior,
    img: &Image,
    label: Option<usize>,
) -> Result<(Image, Vec<Vec<f64>>)> {
    let x = batch_tensor::<f32>(&[img])?;
    let p = prior.get(img, label)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in infer mode
    let (restored, diag) = model.forward(&x, &[p], Mode::Infer, &mut rng)?;
    // Mean routing weight per expert for each level.
    let mut routing = Vec::with_capacity(diag.len());
    for state in &diag {
        let shape = state.se.shape();
        let (rows, n) = (shape[0], shape[1]);
        let data = state.se.data();
        let mut mean = vec![0.0f64; n];
        for r in 0..rows {
            for e in 0..n {
                mean[e] += data[r * n + e] as f64;
            }
        }
        for v in &mut mean {
            *v /= rows as f64;
        }
        routing.push(mean);
    }
    Ok((tensor_to_image(&restored, 0)?, routing))
}

/// Per-type and average quality numbers produced by `cmd_eval`.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// `(type label, mean PSNR dB, mean SSIM)` per degradation type.
    pub per_type: Vec<(usize, f64, f64)>,
    pub avg_psnr: f64,
    pub avg_ssim: f64,
}

pub fn cmd_eval(
    cfg: &RunConfig,
    ckpt: Option<&Path>,
    data: &Path,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let samples = load_split(data)?;
    if samples.is_empty() {
        return Err(Error::Contract(format!("no samples under {}", data.display())));
    }
    let model = load_model(cfg, ckpt)?;
    let prior = build_prior(cfg, &samples)?;

    let mut per_type: std::collections::BTreeMap<usize, (f64, f64, usize)> =
        std::collections::BTreeMap::new();
    for s in &samples {
        let (restored, _) = restore_sample(&model, &prior, &s.degraded, Some(s.label))?;
        let p = psnr(&restored, &s.clean, 1.0)?;
        let q = ssim(&restored, &s.clean)?;
        let e = per_type.entry(s.label).or_insert((0.0, 0.0, 0));
        e.0 += p;
        e.1 += q;
        e.2 += 1;
    }

    let mut csv = String::from("type,psnr,ssim\n");
    let mut table = String::from("type        psnr     ssim\n");
    let (mut sum_p, mut sum_q) = (0.0, 0.0);
    let mut report_rows = Vec::new();
    for (label, (p, q, n)) in &per_type {
        let ty = crate::data::DegType::from_label(*label)
            .map(|t| t.to_string())
            .unwrap_or_else(|| format!("class{label}"));
        let (mp, mq) = (p / *n as f64, q / *n as f64);
        sum_p += mp;
        sum_q += mq;
        report_rows.push((*label, mp, mq));
        csv.push_str(&format!("{ty},{mp:.4},{mq:.4}\n"));
        table.push_str(&format!("{ty:<10} {mp:>7.3} {mq:>8.4}\n"));
    }
    let k = per_type.len() as f64;
    csv.push_str(&format!("average,{:.4},{:.4}\n", sum_p / k, sum_q / k));
    table.push_str(&format!("{:<10} {:>7.3} {:>8.4}\n", "average", sum_p / k, sum_q / k));
    print!("{table}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("eval.csv"), csv)?;
    }
    Ok(EvalReport { per_type: report_rows, avg_psnr: sum_p / k, avg_ssim: sum_q / k })
}

/// Reflect-pad an image so both extents are multiples of `multiple`.
fn pad_reflect(img: &Image, multiple: usize) -> Image {
    let ph = img.h.div_ceil(multiple) * multiple;
    let pw = img.w.div_ceil(multiple) * multiple;
    if ph == img.h && pw == img.w {
        return img.clone();
    }
    let mut out = Image::new(ph, pw);
    for c in 0..3 {
        for y in 0..ph {
            let sy = reflect_index(y, img.h);
            for x in 0..pw {
                let sx = reflect_index(x, img.w);
                out.data[(c * ph + y) * pw + x] = img.at(c, sy, sx);
            }
        }
    }
    out
}

fn reflect_index(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        // Mirror around the last pixel: n, n+1, ... -> n-2, n-3, ...
        let over = i - n + 1;
        n.saturating_sub(1 + over.min(n - 1))
    }
}

fn crop(img: &Image, h: usize, w: usize) -> Image {
    let mut out = Image::new(h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out.data[(c * h + y) * w + x] = img.at(c, y, x);
            }
        }
    }
    out
}

fn read_image(path: &Path) -> Result<Image> {
    if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
        return read_ppm(path);
    }
    let dynimg = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let mut img = Image::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let px = dynimg.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                img.data[(c * h + y) * w + x] = px[c] as f32 / 255.0;
            }
        }
    }
    Ok(img)
}

fn write_image(path: &Path, img: &Image) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
        return write_ppm(path, img);
    }
    let mut buf = image::RgbImage::new(img.w as u32, img.h as u32);
    for y in 0..img.h {
        for x in 0..img.w {
            let px = [0, 1, 2].map(|c| (img.at(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn cmd_infer(cfg: &RunConfig, ckpt: Option<&Path>, input: &Path, out: &Path) -> Result<()> {
    let img = read_image(input)?;
    let model = load_model(cfg, ckpt)?;
    let prior = Prior::Oracle(OraclePrior::new(cfg.model.f_p, cfg.seed));

    let t0 = Instant::now();
    let padded = pad_reflect(&img, cfg.model.size_multiple());
    let (restored_padded, _) = restore_sample(&model, &prior, &padded, None)?;
    let restored = crop(&restored_padded, img.h, img.w);
    let elapsed = t0.elapsed().as_secs_f64();

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_image(out, &restored)?;
    println!("restored {}x{} in {elapsed:.3}s -> {}", img.w, img.h, out.display());
    Ok(())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Clustering summary produced by `cmd_analyze`.
#[derive(Clone, Debug)]
pub struct RoutingReport {
    pub silhouette: f64,
    pub max_centroid_cosine: f64,
    /// Number of images with nonzero mean weight, per expert.
    pub usage: Vec<u64>,
}

pub fn cmd_analyze(
    cfg: &RunConfig,
    ckpt: Option<&Path>,
    data: &Path,
    out: Option<&Path>,
) -> Result<RoutingReport> {
    if cfg.model.variant == Variant::NoDder {
        return Err(Error::Config("the no_dder variant has no routers to analyze".into()));
    }
    let samples = load_split(data)?;
    let labels_present: std::collections::BTreeSet<usize> =
        samples.iter().map(|s| s.label).collect();
    if labels_present.len() < 2 {
        return Err(Error::Contract(format!(
            "routing analysis needs at least 2 degradation types, found {}",
            labels_present.len()
        )));
    }
    let model = load_model(cfg, ckpt)?;
    let prior = build_prior(cfg, &samples)?;

    let n = cfg.model.n_experts;
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    let mut labels: Vec<usize> = Vec::with_capacity(samples.len());
    let mut usage = vec![0u64; n];
    let mut csv = String::new();
    csv.push_str("id,label,");
    csv.push_str(&(0..n).map(|i| format!("mean_se_{i}")).collect::<Vec<_>>().join(","));
    csv.push('\n');
    for (i, s) in samples.iter().enumerate() {
        let (_, routing) = restore_sample(&model, &prior, &s.degraded, Some(s.label))?;
        // The routing signature of an image is the first router level's
        // mean expert weights: that level routes the raw degradation
        // textures, before deeper levels abstract them away.
        let v = routing
            .first()
            .ok_or_else(|| Error::Contract("model produced no routing states".into()))?
            .clone();
        for (e, &val) in v.iter().enumerate() {
            if val > 0.0 {
                usage[e] += 1;
            }
        }
        csv.push_str(&format!(
            "{i},{},{}\n",
            s.label,
            v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
        ));
        vectors.push(v);
        labels.push(s.label);
    }

    // Per-type centroids.
    let mut centroids: std::collections::BTreeMap<usize, Vec<f64>> =
        std::collections::BTreeMap::new();
    for (&label, v) in labels.iter().zip(&vectors) {
        let c = centroids.entry(label).or_insert_with(|| vec![0.0; n + 1]);
        for e in 0..n {
            c[e] += v[e];
        }
        c[n] += 1.0;
    }
    let centroids: Vec<(usize, Vec<f64>)> = centroids
        .into_iter()
        .map(|(l, mut c)| {
            let count = c.pop().unwrap();
            for v in &mut c {
                *v /= count;
            }
            (l, c)
        })
        .collect();

    let sil = silhouette(&vectors, &labels)?;
    println!("routing analysis over {} images, {} experts", samples.len(), n);
    println!("silhouette: {sil:.4}");
    println!("expert usage (images with nonzero mean weight): {usage:?}");
    let mut max_cos: f64 = -1.0;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            let c = cosine(&centroids[i].1, &centroids[j].1);
            max_cos = max_cos.max(c);
            let (a, b) = (centroids[i].0, centroids[j].0);
            let name = |l: usize| {
                crate::data::DegType::from_label(l)
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| format!("class{l}"))
            };
            println!("cosine({}, {}) = {c:.4}", name(a), name(b));
        }
    }
    println!("max pairwise centroid cosine: {max_cos:.4}");

    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("routing.csv"), csv)?;
        let mut summary = String::new();
        summary.push_str(&format!("silhouette,{sil:.6}\n"));
        summary.push_str(&format!("max_centroid_cosine,{max_cos:.6}\n"));
        std::fs::write(dir.join("routing_summary.csv"), summary)?;
    }
    Ok(RoutingReport { silhouette: sil, max_centroid_cosine: max_cos, usage })
}
