//! `pdfnet` command-line tool.
//!
//! Settings come from built-in defaults, then an optional `--config` file of
//! `key = value` lines, then flags. The merged settings are printed before
//! any work starts. Exit status: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdfnet::config::{parse_hw, KvConfig};
use pdfnet::cost::{calibrate, cost_report, CostOptions, REFERENCE};
use pdfnet::dataio::{load_image, normalize, seeded_split, synthetic_samples, write_dataset, Manifest, IMAGENET_MEAN, IMAGENET_STD};
use pdfnet::gradcheck::{gradcheck, GradcheckOptions};
use pdfnet::metrics::{category_iou, class_names, scored_classes, CategoryMap, IouTable};
use pdfnet::network::{Architecture, Hooks, Model, ModelConfig, VariantSpec, MODEL_KEYS, VARIANT_NAMES};
use pdfnet::pnm::Pnm;
use pdfnet::train::{argmax, evaluate, train, TrainConfig, TRAIN_KEYS};
use pdfnet::{fmt6, Error};

#[derive(Parser)]
#[command(name = "pdfnet", version, about = "Dense glance-block segmentation networks")]
struct Cli {
    /// `key = value` settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: PDFNET_NUM_THREADS, else all CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ModelFlags {
    /// pdfnet3..pdfnet12, pdfnet3-2s..pdfnet12-2s, dfnet3..dfnet12
    #[arg(long)]
    variant: Option<String>,
    /// Number of output classes.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Stage channels, parameter count and FLOPs of a variant.
    Summarize {
        #[command(flatten)]
        model: ModelFlags,
        /// Input size HxW.
        #[arg(long)]
        input: Option<String>,
        #[arg(long)]
        batch: Option<usize>,
        /// mac | muladd2
        #[arg(long)]
        convention: Option<String>,
        /// Every variant, one CSV line each.
        #[arg(long)]
        all: bool,
    },
    /// Compare backpropagated gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        model: ModelFlags,
        /// Input size HxW.
        #[arg(long)]
        size: Option<String>,
        /// Floating-point width; only 64 is supported.
        #[arg(long)]
        precision: Option<u32>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Test hook: detach the decoder branch of stage N (1-based).
        #[arg(long)]
        detach_branch: Option<usize>,
    },
    /// Train a network and write its log and best checkpoint.
    Train {
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        /// Validation manifest; without one the training loss drives the schedule.
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        /// Use only the first N samples of a seeded shuffle of the training set.
        #[arg(long)]
        subset: Option<usize>,
        /// Train on N generated samples instead of a manifest.
        #[arg(long)]
        synthetic: Option<usize>,
        /// full | desk
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        eval_every: Option<usize>,
        /// Epoch log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Best checkpoint path.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Class-wise IoU of a checkpoint on a labelled manifest.
    Eval {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        /// `cityscapes` or a file of `class = category` lines.
        #[arg(long)]
        categories: Option<String>,
        /// Class left out of the mean: an index, `none`, or `auto`.
        #[arg(long)]
        background: Option<String>,
        /// Also write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write argmax label maps as PGM files.
    Predict {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search the architecture and FLOP-counting options against the reference table.
    Calibrate {
        /// Write the chosen settings here as a config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic labelled dataset and its manifest.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        /// Image size HxW.
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct DataFlags {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Resize images and labels to HxW.
    #[arg(long)]
    resize: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

type Res<T> = Result<T, Failure>;

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } | Error::Validation(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Layers flag values over the config file.
struct Settings {
    kv: KvConfig,
}

impl Settings {
    fn load(path: Option<&Path>) -> Res<Self> {
        let kv = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                KvConfig::parse(&text)?
            }
            None => KvConfig::new(),
        };
        Ok(Settings { kv })
    }

    fn flag<V: ToString>(&mut self, key: &str, v: Option<V>) {
        if let Some(v) = v {
            self.kv.set(key, v);
        }
    }

    fn path(&mut self, key: &str, v: Option<&PathBuf>) {
        if let Some(v) = v {
            self.kv.set(key, v.display());
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.kv.get(key)
    }

    fn parsed<V: std::str::FromStr>(&self, key: &str) -> Res<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        Ok(self.kv.get_parsed(key)?)
    }

    fn require(&self, key: &str) -> Res<&str> {
        self.get(key).ok_or_else(|| usage(format!("missing required setting `{key}`")))
    }

    fn only(&self, extra: &[&str]) -> Res<()> {
        let known: Vec<&str> = extra.to_vec();
        Ok(self.kv.reject_unknown(&known)?)
    }

    fn model(&self) -> Res<ModelConfig> {
        let mut kv = KvConfig::new();
        for (k, v) in self.kv.entries() {
            match k.as_str() {
                "classes" => kv.set("num_classes", v),
                k if MODEL_KEYS.contains(&k) => kv.set(k, v),
                _ => {}
            }
        }
        if let Some(v) = kv.get("variant") {
            if VariantSpec::parse_name(v).is_err() {
                return Err(usage(format!(
                    "unknown variant `{v}`; valid variants: {}",
                    VARIANT_NAMES.join(", ")
                )));
            }
        }
        Ok(ModelConfig::from_kv(&kv)?)
    }
}

fn print_resolved(kv: &KvConfig) {
    println!("# resolved configuration");
    print!("{kv}");
    println!();
}

fn model_resolved(cfg: &ModelConfig) -> KvConfig {
    let mut kv = cfg.to_kv();
    kv.remove("family");
    kv.remove("depth");
    kv.remove("two_stride");
    kv.set("variant", cfg.spec.name());
    kv
}

fn hw(s: &Settings, key: &str, default: (usize, usize)) -> Res<(usize, usize)> {
    match s.get(key) {
        Some(v) => Ok(parse_hw(v)?),
        None => Ok(default),
    }
}

fn summarize(mut s: Settings, model: ModelFlags, input: Option<String>, batch: Option<usize>, convention: Option<String>, all: bool) -> Res<()> {
    s.flag("variant", model.variant);
    s.flag("classes", model.classes);
    s.flag("input", input);
    s.flag("batch", batch);
    s.flag("flop_convention", convention);
    let mut known: Vec<&str> = MODEL_KEYS.to_vec();
    known.extend(["classes", "input", "batch", "flop_convention", "flop_elementwise"]);
    s.only(&known)?;
    let cfg = s.model()?;
    let (h, w) = hw(&s, "input", (512, 1024))?;
    let n = s.parsed("batch")?.unwrap_or(1);
    let cost = CostOptions::from_kv(&s.kv)?;

    let mut resolved = model_resolved(&cfg);
    resolved.set("input", format!("{h}x{w}"));
    resolved.set("batch", n);
    cost.write_kv(&mut resolved);
    print_resolved(&resolved);

    if all {
        println!("variant,params,gflops");
        for spec in VariantSpec::all() {
            let mut c = cfg;
            c.spec = VariantSpec {
                num_classes: cfg.spec.num_classes,
                in_channels: cfg.spec.in_channels,
                ..spec
            };
            let arch = Architecture::new(c)?;
            println!("{}", cost_report(&arch, n, h, w, cost).csv_line());
        }
        return Ok(());
    }
    let arch = Architecture::new(cfg)?;
    arch.check_input(h, w)?;
    let r = cost_report(&arch, n, h, w, cost);
    print!("{r}");
    println!("fusion width     {:>10}", arch.fusion_width());
    Ok(())
}

fn gradcheck_cmd(mut s: Settings, model: ModelFlags, size: Option<String>, precision: Option<u32>, samples: Option<usize>, seed: Option<u64>, detach: Option<usize>) -> Res<bool> {
    s.flag("variant", model.variant);
    s.flag("classes", model.classes);
    s.flag("size", size);
    s.flag("precision", precision);
    s.flag("samples", samples);
    s.flag("seed", seed);
    s.flag("detach_branch", detach);
    let mut known: Vec<&str> = MODEL_KEYS.to_vec();
    known.extend(["classes", "size", "precision", "samples", "seed", "detach_branch"]);
    s.only(&known)?;
    let cfg = s.model()?;
    let (h, w) = hw(&s, "size", (32, 64))?;
    if h * w > 64 * 128 {
        return Err(usage(format!("gradcheck size {h}x{w} exceeds 64x128")));
    }
    let precision: u32 = s.parsed("precision")?.unwrap_or(64);
    if precision != 64 {
        return Err(usage(format!("gradcheck runs in 64-bit only, got precision {precision}")));
    }
    let defaults = GradcheckOptions::default();
    let opts = GradcheckOptions {
        samples: s.parsed("samples")?.unwrap_or(defaults.samples),
        seed: s.parsed("seed")?.unwrap_or(defaults.seed),
        ..defaults
    };
    let detach: Option<usize> = s.parsed("detach_branch")?;
    let stages = Architecture::new(cfg)?.stages.len();
    let hooks = Hooks {
        detach_projection: match detach {
            Some(d) if d == 0 || d > stages => {
                return Err(usage(format!("detach_branch must lie in 1..={stages}")));
            }
            d => d.map(|d| d - 1),
        },
        ..Hooks::default()
    };

    let mut resolved = model_resolved(&cfg);
    resolved.set("size", format!("{h}x{w}"));
    resolved.set("precision", 64);
    resolved.set("samples", opts.samples);
    resolved.set("seed", opts.seed);
    resolved.set("step", opts.step);
    resolved.set("tolerance", opts.tolerance);
    if let Some(d) = detach {
        resolved.set("detach_branch", d);
    }
    print_resolved(&resolved);

    let r = gradcheck(cfg, h, w, &opts, &hooks)?;
    println!("{r}");
    Ok(r.passed())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    mut s: Settings,
    model: ModelFlags,
    data: DataFlags,
    val_manifest: Option<PathBuf>,
    subset: Option<usize>,
    synthetic: Option<usize>,
    preset: Option<String>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    eval_every: Option<usize>,
    log: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
) -> Res<()> {
    s.flag("variant", model.variant);
    s.flag("classes", model.classes);
    s.path("manifest", data.manifest.as_ref());
    s.flag("resize", data.resize);
    s.flag("seed", data.seed);
    s.path("val_manifest", val_manifest.as_ref());
    s.flag("subset", subset);
    s.flag("synthetic", synthetic);
    s.flag("preset", preset);
    s.flag("epochs", epochs);
    s.flag("batch_size", batch_size);
    s.flag("lr", lr);
    s.flag("momentum", momentum);
    s.flag("eval_every", eval_every);
    s.path("log", log.as_ref());
    s.path("checkpoint", checkpoint.as_ref());
    let mut known: Vec<&str> = MODEL_KEYS.to_vec();
    known.extend(TRAIN_KEYS);
    known.extend(["classes", "manifest", "resize", "val_manifest", "subset", "synthetic", "synthetic_size", "preset"]);
    s.only(&known)?;

    let cfg = s.model()?;
    let k = cfg.spec.num_classes;
    let mut tc = TrainConfig::preset(s.get("preset").unwrap_or("desk"))?;
    tc.apply_kv(&s.kv)?;
    if s.get("background").is_none() && k == 20 {
        tc.background = Some(19);
    }
    let resize = s.get("resize").map(parse_hw).transpose()?;

    let (train_set, val) = if let Some(n) = s.parsed::<usize>("synthetic")? {
        if s.get("manifest").is_some() {
            return Err(usage("give either `manifest` or `synthetic`, not both"));
        }
        let (h, w) = match s.get("synthetic_size") {
            Some(v) => parse_hw(v)?,
            None => resize.unwrap_or((64, 128)),
        };
        (synthetic_samples(n, h, w, k, tc.seed), Vec::new())
    } else {
        let m = Manifest::load(Path::new(s.require("manifest")?))?;
        let mut samples = m.load_samples(resize, k)?;
        if let Some(n) = s.parsed::<usize>("subset")? {
            let plan = seeded_split(samples.len(), &[n], tc.seed)?;
            let mut keep: Vec<_> = plan.parts[0].clone();
            keep.sort_unstable();
            samples = keep.into_iter().map(|i| samples[i].clone()).collect();
        }
        let val = match s.get("val_manifest") {
            Some(p) => Manifest::load(Path::new(p))?.load_samples(resize, k)?,
            None => Vec::new(),
        };
        (samples, val)
    };

    let mut resolved = model_resolved(&cfg);
    for (key, v) in tc.to_kv().entries() {
        resolved.set(key.clone(), v);
    }
    for key in ["manifest", "val_manifest", "resize", "subset", "synthetic", "synthetic_size", "preset"] {
        if let Some(v) = s.get(key) {
            resolved.set(key, v);
        }
    }
    resolved.set("train_samples", train_set.len());
    resolved.set("val_samples", val.len());
    print_resolved(&resolved);

    let mut m = Model::<f32>::new(cfg, tc.seed)?;
    println!("{}", pdfnet::train::LOG_HEADER);
    let report = train(&mut m, &train_set, &val, &tc, |l| println!("{}", l.csv_line()))?;
    if report.ignored_batches > 0 {
        eprintln!("warning: {} batches had every pixel ignored", report.ignored_batches);
    }
    let ev = evaluate(&m, &train_set, tc.batch_size)?;
    println!("train pixel accuracy: {}", ev.cm.pixel_accuracy().map(fmt6).unwrap_or_else(|| "n/a".into()));
    if let Some(e) = report.best_epoch {
        println!("best epoch: {e} ({})", fmt6(report.best_metric));
    }
    Ok(())
}

fn load_checkpoint(s: &Settings) -> Res<(Model<f32>, KvConfig)> {
    let p = s.require("checkpoint")?;
    Ok(Model::<f32>::load(Path::new(p))?)
}

fn eval_cmd(mut s: Settings, data: DataFlags, checkpoint: Option<PathBuf>, classes: Option<usize>, categories: Option<String>, background: Option<String>, csv: Option<PathBuf>) -> Res<()> {
    s.path("manifest", data.manifest.as_ref());
    s.flag("resize", data.resize);
    s.flag("seed", data.seed);
    s.path("checkpoint", checkpoint.as_ref());
    s.flag("classes", classes);
    s.flag("categories", categories);
    s.flag("background", background);
    s.path("csv", csv.as_ref());
    s.only(&["manifest", "resize", "seed", "checkpoint", "classes", "categories", "background", "csv"])?;
    let (m, _) = load_checkpoint(&s)?;
    let k = m.config().spec.num_classes;
    if let Some(c) = s.parsed::<usize>("classes")? {
        if c != k {
            return Err(usage(format!("checkpoint has {k} classes but {c} were requested")));
        }
    }
    let background = match s.get("background").unwrap_or("auto") {
        "auto" => (k == 20).then_some(19),
        "none" => None,
        v => Some(v.parse::<usize>().map_err(|_| usage(format!("bad background `{v}`")))?),
    };
    if background.is_some_and(|b| b >= k) {
        return Err(usage("background class out of range"));
    }
    let resize = s.get("resize").map(parse_hw).transpose()?;

    let mut resolved = model_resolved(&m.config());
    for key in ["checkpoint", "manifest", "resize", "categories", "csv"] {
        if let Some(v) = s.get(key) {
            resolved.set(key, v);
        }
    }
    resolved.set("background", background.map_or("none".to_string(), |b| b.to_string()));
    print_resolved(&resolved);

    let manifest = Manifest::load(Path::new(s.require("manifest")?))?;
    let samples = manifest.load_samples(resize, k)?;
    let ev = evaluate(&m, &samples, 1)?;
    let scored = scored_classes(k, background);
    let names = class_names(k);
    let mut table = IouTable::new(scored.iter().map(|&c| names[c].clone()).collect());
    table.push(&m.config().spec.name(), &ev.cm, &scored);
    print!("{table}");
    println!("loss: {}", fmt6(ev.loss));
    println!("pixel accuracy: {}", ev.cm.pixel_accuracy().map(fmt6).unwrap_or_else(|| "n/a".into()));
    if let Some(c) = s.get("categories") {
        let map = if c == "cityscapes" {
            CategoryMap::cityscapes()
        } else {
            let text = std::fs::read_to_string(c).map_err(|e| usage(format!("{c}: {e}")))?;
            CategoryMap::parse(&text, k)?
        };
        let (per, mean) = category_iou(&ev.cm, &map, &scored)?;
        for (name, v) in map.names.iter().zip(&per) {
            println!("category {name}: {}", v.map(fmt6).unwrap_or_else(|| "-".into()));
        }
        println!("category mean IoU: {}", mean.map(fmt6).unwrap_or_else(|| "-".into()));
    }
    if let Some(p) = s.get("csv") {
        std::fs::write(p, table.to_csv()).map_err(|e| Failure::Runtime(format!("{p}: {e}")))?;
    }
    Ok(())
}

fn predict_cmd(mut s: Settings, data: DataFlags, checkpoint: Option<PathBuf>, out: Option<PathBuf>) -> Res<()> {
    s.path("manifest", data.manifest.as_ref());
    s.flag("resize", data.resize);
    s.flag("seed", data.seed);
    s.path("checkpoint", checkpoint.as_ref());
    s.path("out", out.as_ref());
    s.only(&["manifest", "resize", "seed", "checkpoint", "out"])?;
    let (m, _) = load_checkpoint(&s)?;
    let out = PathBuf::from(s.require("out")?);
    let resize = s.get("resize").map(parse_hw).transpose()?;
    let mut resolved = model_resolved(&m.config());
    for key in ["checkpoint", "manifest", "resize", "out"] {
        if let Some(v) = s.get(key) {
            resolved.set(key, v);
        }
    }
    print_resolved(&resolved);

    let manifest = Manifest::load(Path::new(s.require("manifest")?))?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    for (img_path, _) in &manifest.entries {
        let img = load_image(img_path, resize)?;
        let x = normalize(&img, IMAGENET_MEAN, IMAGENET_STD);
        let shape = x.shape();
        let labels = argmax(&m.predict(&x)?);
        let stem = img_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
        let dest = out.join(format!("{stem}.pgm"));
        std::fs::write(&dest, Pnm::gray(shape.w, shape.h, labels).encode())
            .map_err(|e| Failure::Runtime(format!("{}: {e}", dest.display())))?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn calibrate_cmd(s: Settings, out: Option<PathBuf>) -> Res<bool> {
    s.only(&[])?;
    print_resolved(&KvConfig::new());
    let r = calibrate(REFERENCE)?;
    print!("{r}");
    if let Some(p) = out {
        std::fs::write(&p, r.best.to_kv().to_string()).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(r.succeeded())
}

fn synth_cmd(mut s: Settings, count: Option<usize>, size: Option<String>, classes: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Res<()> {
    s.flag("count", count);
    s.flag("size", size);
    s.flag("classes", classes);
    s.flag("seed", seed);
    s.path("out", out.as_ref());
    s.only(&["count", "size", "classes", "seed", "out"])?;
    let count = s.parsed("count")?.unwrap_or(4);
    let (h, w) = hw(&s, "size", (64, 128))?;
    let k: usize = s.parsed("classes")?.unwrap_or(20);
    if !(1..=255).contains(&k) {
        return Err(usage("classes must lie in 1..=255"));
    }
    let seed = s.parsed("seed")?.unwrap_or(42);
    let out = PathBuf::from(s.require("out")?);
    let mut resolved = KvConfig::new();
    resolved.set("count", count);
    resolved.set("size", format!("{h}x{w}"));
    resolved.set("classes", k);
    resolved.set("seed", seed);
    resolved.set("out", out.display());
    print_resolved(&resolved);
    let path = write_dataset(&out, &synthetic_samples(count, h, w, k, seed))?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Res<bool> {
    pdfnet::init_threads(cli.threads)?;
    let s = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Summarize { model, input, batch, convention, all } => summarize(s, model, input, batch, convention, all).map(|_| true),
        Command::Gradcheck { model, size, precision, samples, seed, detach_branch } => {
            gradcheck_cmd(s, model, size, precision, samples, seed, detach_branch)
        }
        Command::Train {
            model,
            data,
            val_manifest,
            subset,
            synthetic,
            preset,
            epochs,
            batch_size,
            lr,
            momentum,
            eval_every,
            log,
            checkpoint,
        } => train_cmd(s, model, data, val_manifest, subset, synthetic, preset, epochs, batch_size, lr, momentum, eval_every, log, checkpoint)
            .map(|_| true),
        Command::Eval { data, checkpoint, classes, categories, background, csv } => {
            eval_cmd(s, data, checkpoint, classes, categories, background, csv).map(|_| true)
        }
        Command::Predict { data, checkpoint, out } => predict_cmd(s, data, checkpoint, out).map(|_| true),
        Command::Calibrate { out } => calibrate_cmd(s, out),
        Command::Synth { count, size, classes, seed, out } => synth_cmd(s, count, size, classes, seed, out).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

