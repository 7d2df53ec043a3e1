//! Loss, optimizer, learning-rate schedule and the training loop.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::config::KvConfig;
use crate::dataio::{make_batch, SegSample, IGNORE};
use crate::error::{io_at, Error, Result};
use crate::layers::{apply_bn_updates, Ctx, Mode};
use crate::metrics::{scored_classes, ConfusionMatrix};
use crate::network::{Hooks, Model};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Mean pixel-wise cross-entropy and its gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct CrossEntropy<T> {
    pub loss: f64,
    pub grad: Tensor<T>,
    /// Pixels that contributed.
    pub count: usize,
}

impl<T> CrossEntropy<T> {
    /// Every pixel carried the ignore label; loss and gradient are zero.
    pub fn all_ignored(&self) -> bool {
        self.count == 0
    }
}

/// `labels` holds one entry per pixel in `N, H, W` order. Pixels labelled
/// [`IGNORE`] contribute nothing.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<CrossEntropy<T>> {
    let s = logits.shape();
    let plane = s.plane();
    if labels.len() != s.n * plane {
        return Err(Error::Validation(format!(
            "{} labels for logits of shape {s}",
            labels.len()
        )));
    }
    if let Some(i) = labels.iter().position(|&l| l != IGNORE && l as usize >= s.c) {
        return Err(Error::Validation(format!(
            "label {} at pixel {i} with {} classes",
            labels[i], s.c
        )));
    }
    let count = labels.iter().filter(|&&l| l != IGNORE).count();
    let mut grad = Tensor::zeros(s);
    if count == 0 {
        return Ok(CrossEntropy { loss: 0.0, grad, count });
    }
    let x = logits.data();
    let g = grad.data_mut();
    let inv = 1.0 / count as f64;
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; s.c];
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let label = labels[n * plane + p];
            if label == IGNORE {
                continue;
            }
            let at = |c: usize| base + c * plane + p;
            let mut top = 0;
            for c in 1..s.c {
                if x[at(c)] > x[at(top)] {
                    top = c;
                }
            }
            let max = x[at(top)].f64();
            // z = 1 + rest; log1p keeps tiny losses accurate.
            let mut rest = 0.0;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (x[at(c)].f64() - max).exp();
                if c != top {
                    rest += *pr;
                }
            }
            let z = 1.0 + rest;
            total += (max - x[at(label as usize)].f64()) + rest.ln_1p();
            for (c, pr) in probs.iter().enumerate() {
                let onehot = if c == label as usize { 1.0 } else { 0.0 };
                g[at(c)] = T::of((pr / z - onehot) * inv);
            }
        }
    }
    Ok(CrossEntropy {
        loss: total * inv,
        grad,
        count,
    })
}

/// SGD with Nesterov momentum: `v = mu v + g; p -= lr (g + mu v)`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    /// Parameters without a gradient are left alone, velocity included.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, &Tensor<T>)]) -> Result<()> {
        let lr = T::of(self.lr);
        let mu = T::of(self.momentum);
        for &(id, g) in grads {
            let i = id.index();
            if self.velocity.len() <= i {
                self.velocity.resize_with(i + 1, || None);
            }
            let p = store.param_mut(id);
            crate::tensor::ensure_same_shape("sgd", p.shape(), g.shape())?;
            let v = self.velocity[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv;
                *pv = *pv - lr * (gv + mu * *vv);
            }
        }
        Ok(())
    }

    pub fn velocity(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.velocity.get(id.index()).and_then(Option::as_ref)
    }
}

/// Halves the learning rate once the monitored value has failed to improve
/// for more than `patience` consecutive observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    /// Relative improvement required, mode "min".
    pub threshold: f64,
    best: f64,
    bad: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, threshold: f64) -> Self {
        Plateau {
            lr,
            factor,
            patience,
            threshold,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    pub fn step(&mut self, metric: f64) -> f64 {
        if metric < self.best * (1.0 - self.threshold) {
            self.best = metric;
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        if self.bad > self.patience {
            self.lr *= self.factor;
            self.bad = 0;
        }
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Validate every this many epochs (and always on the last).
    pub eval_every: usize,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_threshold: f64,
    /// Class left out of the mean IoU.
    pub background: Option<usize>,
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "seed",
    "eval_every",
    "lr_factor",
    "lr_patience",
    "lr_threshold",
    "background",
    "log",
    "checkpoint",
];

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::full()
    }
}

impl TrainConfig {
    /// The full-scale recipe: 180 epochs, batch 2, lr 1e-6, momentum 0.7.
    pub fn full() -> Self {
        TrainConfig {
            epochs: 180,
            batch_size: 2,
            lr: 1e-6,
            momentum: 0.7,
            seed: 42,
            eval_every: 1,
            lr_factor: 0.5,
            lr_patience: 20,
            lr_threshold: 1e-4,
            background: None,
            log_path: None,
            checkpoint_path: None,
        }
    }

    /// Small-data runs on a CPU; only the learning rate differs.
    /// Small-data settings: larger step and heavier momentum, 300 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 4,
            lr: 1e-3,
            momentum: 0.9,
            ..TrainConfig::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(TrainConfig::full()),
            "desk" => Ok(TrainConfig::desk()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (expected full or desk)"))),
        }
    }

    /// Overrides fields present in `kv`; other keys are ignored.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        if let Some(v) = kv.get_parsed("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = kv.get_parsed("batch_size")? {
            self.batch_size = v;
        }
        if let Some(v) = kv.get_parsed("lr")? {
            self.lr = v;
        }
        if let Some(v) = kv.get_parsed("momentum")? {
            self.momentum = v;
        }
        if let Some(v) = kv.get_parsed("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.get_parsed("eval_every")? {
            self.eval_every = v;
        }
        if let Some(v) = kv.get_parsed("lr_factor")? {
            self.lr_factor = v;
        }
        if let Some(v) = kv.get_parsed("lr_patience")? {
            self.lr_patience = v;
        }
        if let Some(v) = kv.get_parsed("lr_threshold")? {
            self.lr_threshold = v;
        }
        if let Some(v) = kv.get("background") {
            self.background = match v {
                "none" => None,
                _ => Some(kv.get_parsed("background")?.unwrap_or_default()),
            };
        }
        if let Some(v) = kv.get("log") {
            self.log_path = Some(v.into());
        }
        if let Some(v) = kv.get("checkpoint") {
            self.checkpoint_path = Some(v.into());
        }
        self.validate()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("momentum", self.momentum);
        kv.set("seed", self.seed);
        kv.set("eval_every", self.eval_every);
        kv.set("lr_factor", self.lr_factor);
        kv.set("lr_patience", self.lr_patience);
        kv.set("lr_threshold", self.lr_threshold);
        kv.set(
            "background",
            self.background.map_or_else(|| "none".to_string(), |b| b.to_string()),
        );
        if let Some(p) = &self.log_path {
            kv.set("log", p.display());
        }
        if let Some(p) = &self.checkpoint_path {
            kv.set("checkpoint", p.display());
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be positive".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor)));
        }
        Sgd::<f32>::new(self.lr, self.momentum).map(|_| ())
    }
}

/// One line of the epoch log. Validation fields are `None` on epochs that
/// skip validation or when there is no validation set.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_miou: Option<f64>,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_miou,lr";

impl EpochLog {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(crate::fmt6).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.epoch,
            crate::fmt6(self.train_loss),
            opt(self.val_loss),
            opt(self.val_miou),
            crate::fmt6(self.lr)
        )
    }
}

pub fn log_csv(logs: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for l in logs {
        let _ = writeln!(s, "{}", l.csv_line());
    }
    s
}

/// Loss and confusion matrix over a sample set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub cm: ConfusionMatrix,
}

impl Evaluation {
    pub fn miou(&self, background: Option<usize>) -> Option<f64> {
        self.cm.mean_iou(&scored_classes(self.cm.num_classes(), background))
    }
}

/// Per-pixel argmax over classes, `N, H, W` order. Ties go to the lower class.
pub fn argmax<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    let s = logits.shape();
    let plane = s.plane();
    let x = logits.data();
    let mut out = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        let base = n * s.c * plane;
        for p in 0..plane {
            let mut best = 0;
            for c in 1..s.c {
                if x[base + c * plane + p] > x[base + best * plane + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

/// Eval-mode loss (mean over all scored pixels) and confusion matrix.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[SegSample], batch_size: usize) -> Result<Evaluation> {
    let k = model.config().spec.num_classes;
    let mut cm = ConfusionMatrix::new(k);
    let mut weighted = 0.0;
    let mut pixels = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SegSample> = chunk.iter().collect();
        let (x, labels) = make_batch(&refs)?;
        let logits = model.predict(&x.cast())?;
        let ce = cross_entropy(&logits, &labels)?;
        weighted += ce.loss * ce.count as f64;
        pixels += ce.count;
        cm.accumulate(&argmax(&logits), &labels)?;
    }
    let loss = if pixels == 0 { 0.0 } else { weighted / pixels as f64 };
    Ok(Evaluation { loss, cm })
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub loss: f64,
    pub all_ignored: bool,
}

/// Forward, backward and update on one batch in training mode.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut Sgd<T>,
    x: &Tensor<T>,
    labels: &[u8],
) -> Result<StepResult> {
    let (grads_owned, bn, loss, all_ignored) = {
        let mut ctx = Ctx::new(&model.store, Mode::Train);
        let xv = ctx.graph.constant(x.clone());
        let out = model.net.forward(&mut ctx, xv, &Hooks::default())?;
        let ce = cross_entropy(ctx.graph.value(out.logits), labels)?;
        let loss_var: Var = ctx.graph.scalar_fn(out.logits, T::of(ce.loss), ce.grad.clone())?;
        if !ce.loss.is_finite() {
            let layer = ctx.graph.first_non_finite().unwrap_or_else(|| "loss".into());
            return Err(Error::NonFinite { layer });
        }
        let grads = ctx.graph.backward(loss_var)?;
        let owned: Vec<(ParamId, Tensor<T>)> = grads
            .params(&ctx.graph)
            .into_iter()
            .map(|(id, g)| (id, g.clone()))
            .collect();
        if let Some((id, _)) = owned.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite {
                layer: format!("gradient of {}", model.store.param_name(*id)),
            });
        }
        (owned, ctx.bn_updates, ce.loss, ce.all_ignored())
    };
    let refs: Vec<(ParamId, &Tensor<T>)> = grads_owned.iter().map(|(id, g)| (*id, g)).collect();
    opt.step(&mut model.store, &refs)?;
    apply_bn_updates(&mut model.store, &bn);
    Ok(StepResult { loss, all_ignored })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub logs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_metric: f64,
    /// Batches in which every pixel was ignored.
    pub ignored_batches: usize,
}

/// Trains `model` in place. Batch order comes from a ChaCha8 stream seeded
/// with `cfg.seed`, so identical inputs give identical logs. The scheduler
/// and best-checkpoint selection follow validation loss, or training loss
/// when `val` is empty. `on_epoch` sees each log line as it is produced.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &[SegSample],
    val: &[SegSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let k = model.config().spec.num_classes;
    for s in train_set.iter().chain(val) {
        s.validate(k)?;
    }
    let mut opt = Sgd::<T>::new(cfg.lr, cfg.momentum)?;
    let mut sched = Plateau::new(cfg.lr, cfg.lr_factor, cfg.lr_patience, cfg.lr_threshold);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        logs: Vec::new(),
        best_epoch: None,
        best_metric: f64::INFINITY,
        ignored_batches: 0,
    };
    if let Some(p) = &cfg.log_path {
        std::fs::write(p, format!("{LOG_HEADER}\n")).map_err(io_at(p))?;
    }

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&SegSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (x, labels) = make_batch(&refs)?;
            let step = train_step(model, &mut opt, &x.cast(), &labels)?;
            if step.all_ignored {
                report.ignored_batches += 1;
            }
            loss_sum += step.loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;

        let validate = !val.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let (val_loss, val_miou) = if validate {
            let ev = evaluate(model, val, cfg.batch_size)?;
            (Some(ev.loss), ev.miou(cfg.background))
        } else {
            (None, None)
        };
        let monitored = if val.is_empty() { Some(train_loss) } else { val_loss };
        if let Some(m) = monitored {
            if m < report.best_metric {
                report.best_metric = m;
                report.best_epoch = Some(epoch);
                if let Some(path) = &cfg.checkpoint_path {
                    // Paths stay out so identical runs write identical files.
                    let mut extra = cfg.to_kv();
                    extra.remove("log");
                    extra.remove("checkpoint");
                    extra.set("epoch", epoch);
                    model.save(path, &extra)?;
                }
            }
        }
        // Logged lr is the one this epoch trained with.
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_miou,
            lr: opt.lr,
        };
        if let Some(m) = monitored {
            opt.lr = sched.step(m);
        }
        if let Some(p) = &cfg.log_path {
            use std::io::Write;
            let mut f = std::fs::OpenOptions::new().append(true).open(p).map_err(io_at(p))?;
            writeln!(f, "{}", log.csv_line()).map_err(io_at(p))?;
        }
        on_epoch(&log);
        report.logs.push(log);
    }
    Ok(report)
}
