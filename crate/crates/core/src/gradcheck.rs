//! Finite-difference verification of whole-network gradients.
//!
//! Runs in `f64` with training-mode batch norm and the pixel-wise
//! cross-entropy loss. Running statistics are never updated, so every
//! evaluation sees the same function.
//!
//! On realistic input sizes a step of 1e-5 routinely pushes some of the
//! many ReLU inputs across zero, and the central difference then straddles
//! a kink. By default the perturbed evaluations keep each ReLU's on/off
//! pattern from the unperturbed point, so the difference quotient measures
//! the smooth piece that backprop differentiates.

use std::fmt;

use crate::dataio::IGNORE;
use crate::error::Result;
use crate::layers::{Ctx, Mode, RngState};
use crate::network::{Hooks, Model, ModelConfig};
use crate::params::ParamId;
use crate::tensor::{Shape, Tensor};
use crate::train::cross_entropy;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    /// Scalars to compare; at least one per parameter tensor regardless.
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared on an absolute scale. The
    /// difference quotient carries roughly 1e-9 of rounding noise at the
    /// default step, so the floor keeps that noise under the tolerance.
    pub floor: f64,
    pub batch: usize,
    pub seed: u64,
    /// Hold ReLU gates at their unperturbed pattern.
    pub freeze_relus: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            samples: 200,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-4,
            batch: 2,
            seed: 0,
            freeze_relus: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub variant: String,
    pub input: (usize, usize, usize),
    pub checks: Vec<ScalarCheck>,
    pub tolerance: f64,
    /// Parameter tensors whose gradient is missing or entirely zero.
    pub dead: Vec<String>,
    /// Individual scalars with an exactly zero gradient, e.g. dilated taps
    /// that only ever see padding on small maps.
    pub zero_scalars: usize,
    pub total_scalars: usize,
    /// Sampled scalars whose perturbed evaluations crossed a ReLU kink.
    pub kinked: usize,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&ScalarCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |c| c.rel_error)
    }

    pub fn gradients_match(&self) -> bool {
        self.checks.iter().all(|c| c.rel_error < self.tolerance)
    }

    pub fn all_nonzero(&self) -> bool {
        self.dead.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.gradients_match() && self.all_nonzero()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (n, h, w) = self.input;
        writeln!(f, "variant: {}", self.variant)?;
        writeln!(f, "input: {n}x{h}x{w}")?;
        writeln!(f, "sampled scalars: {}", self.checks.len())?;
        writeln!(f, "max relative error: {}", crate::fmt6(self.max_rel_error()))?;
        if let Some(c) = self.worst() {
            writeln!(
                f,
                "worst: {}[{}] analytic {} numeric {}",
                c.param,
                c.index,
                crate::fmt6(c.analytic),
                crate::fmt6(c.numeric)
            )?;
        }
        writeln!(f, "all layers nonzero: {}", self.all_nonzero())?;
        for d in &self.dead {
            writeln!(f, "  no gradient: {d}")?;
        }
        writeln!(f, "zero-gradient scalars: {} of {}", self.zero_scalars, self.total_scalars)?;
        writeln!(f, "samples straddling a relu kink: {}", self.kinked)?;
        write!(f, "result: {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

/// Loss and the number of ReLU elements that changed sign.
fn loss_of(model: &Model<f64>, x: &Tensor<f64>, labels: &[u8], hooks: &Hooks, masks: &[Vec<bool>], freeze: bool) -> Result<(f64, usize)> {
    let mut ctx = Ctx::new(&model.store, Mode::Train);
    ctx.graph.freeze_relus(masks.to_vec());
    let xv = ctx.graph.constant(x.clone());
    let out = model.net.forward(&mut ctx, xv, hooks)?;
    let crossed = ctx.graph.kink_crossings();
    if !freeze {
        // Rerun with live gates.
        let mut ctx = Ctx::new(&model.store, Mode::Train);
        let xv = ctx.graph.constant(x.clone());
        let out = model.net.forward(&mut ctx, xv, hooks)?;
        return Ok((cross_entropy(ctx.graph.value(out.logits), labels)?.loss, crossed));
    }
    Ok((cross_entropy(ctx.graph.value(out.logits), labels)?.loss, crossed))
}

/// Compares backpropagated and central-difference gradients on a random
/// input of size `h x w`.
pub fn gradcheck(config: ModelConfig, h: usize, w: usize, opts: &GradcheckOptions, hooks: &Hooks) -> Result<GradcheckReport> {
    let mut model = Model::<f64>::new(config, opts.seed)?;
    model.net.arch.check_input(h, w)?;
    let mut rng = RngState::new(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let shape = Shape::new(opts.batch, config.spec.in_channels, h, w);
    let x = Tensor::from_fn(shape, |_| rng.uniform(-2.0, 2.0));
    let k = config.spec.num_classes;
    let labels: Vec<u8> = (0..opts.batch * h * w)
        .map(|i| if i % 97 == 0 { IGNORE } else { rng.below(k) as u8 })
        .collect();

    let (analytic, masks): (Vec<(ParamId, Option<Tensor<f64>>)>, Vec<Vec<bool>>) = {
        let mut ctx = Ctx::new(&model.store, Mode::Train);
        let xv = ctx.graph.constant(x.clone());
        let out = model.net.forward(&mut ctx, xv, hooks)?;
        let ce = cross_entropy(ctx.graph.value(out.logits), &labels)?;
        let loss = ctx.graph.scalar_fn(out.logits, ce.loss, ce.grad)?;
        let grads = ctx.graph.backward(loss)?;
        let g = model
            .store
            .params()
            .map(|(id, _)| (id, grads.param(&ctx.graph, id).cloned()))
            .collect();
        (g, ctx.graph.relu_masks())
    };

    let mut dead = Vec::new();
    let mut zero_scalars = 0;
    let mut total_scalars = 0;
    for (id, g) in &analytic {
        let name = model.store.param_name(*id).to_string();
        total_scalars += model.store.param(*id).len();
        match g {
            Some(g) if g.data().iter().any(|&v| v != 0.0) => {
                zero_scalars += g.data().iter().filter(|&&v| v == 0.0).count();
            }
            _ => {
                zero_scalars += model.store.param(*id).len();
                dead.push(name);
            }
        }
    }

    let per_tensor = opts.samples.div_ceil(analytic.len().max(1)).max(1);
    let mut checks = Vec::new();
    let mut kinked = 0;
    for (id, g) in &analytic {
        let len = model.store.param(*id).len();
        let want = per_tensor.min(len);
        let mut picks: Vec<usize> = Vec::with_capacity(want);
        while picks.len() < want {
            let i = rng.below(len);
            if !picks.contains(&i) {
                picks.push(i);
            }
        }
        picks.sort_unstable();
        for i in picks {
            let orig = model.store.param(*id).data()[i];
            model.store.param_mut(*id).data_mut()[i] = orig + opts.step;
            let (up, c1) = loss_of(&model, &x, &labels, hooks, &masks, opts.freeze_relus)?;
            model.store.param_mut(*id).data_mut()[i] = orig - opts.step;
            let (down, c2) = loss_of(&model, &x, &labels, hooks, &masks, opts.freeze_relus)?;
            model.store.param_mut(*id).data_mut()[i] = orig;
            if c1 + c2 > 0 {
                kinked += 1;
            }
            let numeric = (up - down) / (2.0 * opts.step);
            let a = g.as_ref().map_or(0.0, |g| g.data()[i]);
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            checks.push(ScalarCheck {
                param: model.store.param_name(*id).to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }

    Ok(GradcheckReport {
        variant: config.spec.name(),
        input: (opts.batch, h, w),
        checks,
        tolerance: opts.tolerance,
        dead,
        zero_scalars,
        total_scalars,
        kinked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        let mut c = ModelConfig::parse_name("pdfnet3-2s").unwrap();
        c.spec.num_classes = 3;
        c
    }

    #[test]
    fn small_network_passes() {
        let opts = GradcheckOptions {
            samples: 60,
            ..GradcheckOptions::default()
        };
        let r = gradcheck(small(), 16, 16, &opts, &Hooks::default()).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.checks.len() >= 60);
    }

    #[test]
    fn detached_branch_is_named() {
        let opts = GradcheckOptions {
            samples: 1,
            ..GradcheckOptions::default()
        };
        let hooks = Hooks {
            detach_projection: Some(0),
            ..Hooks::default()
        };
        let r = gradcheck(small(), 16, 16, &opts, &hooks).unwrap();
        assert!(!r.passed());
        assert!(r.dead.iter().any(|d| d.starts_with("decoder.proj1")), "{:?}", r.dead);
        assert!(r.to_string().contains("no gradient: decoder.proj1"));
    }
}
