//! Parameterized layers: regular, depthwise and depthwise-separable
//! convolutions with optional batch norm + ReLU.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::kernels::Conv2dParams;
use crate::tensor::{Scalar, Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Seeded parameter stream. The same seed yields the same values on every
/// platform.
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

/// Shape and wiring of one convolution. Kernels are square and padded to
/// preserve resolution at stride 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
    /// Followed by batch norm and ReLU.
    pub bn_relu: bool,
}

impl ConvSpec {
    /// Dense convolution with batch norm + ReLU and no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            dilation: 1,
            groups: 1,
            bias: false,
            bn_relu: true,
        }
    }

    pub fn depthwise(channels: usize, dilation: usize) -> Self {
        ConvSpec {
            groups: channels,
            dilation,
            ..ConvSpec::new(channels, channels, 3)
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    /// Raw affine output: bias, no batch norm, no ReLU.
    pub fn output_head(mut self) -> Self {
        self.bias = true;
        self.bn_relu = false;
        self
    }

    pub fn with_bn_relu(mut self, on: bool) -> Self {
        self.bn_relu = on;
        self
    }

    pub fn geometry(&self) -> Conv2dParams {
        Conv2dParams {
            stride: self.stride,
            dilation: self.dilation,
            padding: self.dilation * (self.kernel - 1) / 2,
            groups: self.groups,
        }
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel,
            self.kernel,
        )
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel * self.kernel
    }

    /// Learnable scalars: weights, bias, and batch-norm scale and shift.
    pub fn param_count(&self) -> usize {
        self.out_channels * self.fan_in()
            + if self.bias { self.out_channels } else { 0 }
            + if self.bn_relu { 2 * self.out_channels } else { 0 }
    }

    /// Multiply-accumulates per output element.
    pub fn macs_per_output(&self) -> usize {
        self.fan_in()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let g = self.geometry();
        let oh = crate::tensor::kernels::conv_output_len(h, self.kernel, g.stride, g.dilation, g.padding)?;
        let ow = crate::tensor::kernels::conv_output_len(w, self.kernel, g.stride, g.dilation, g.padding)?;
        Some((oh, ow))
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return Err(Error::Config(format!("degenerate convolution {self:?}")));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "{} groups do not divide {} -> {} channels",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }
}

/// Running-statistic update produced by one training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub batch_mean: Vec<T>,
    /// Unbiased when more than one element was reduced.
    pub batch_var: Vec<T>,
}

/// Everything a forward pass needs: the tape, the parameters, the mode, and
/// a sink for batch-norm statistics.
pub struct Ctx<'s, T> {
    pub graph: Graph<T>,
    pub store: &'s ParamStore<T>,
    pub mode: Mode,
    pub bn_updates: Vec<BnUpdate<T>>,
}

impl<'s, T: Scalar> Ctx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Ctx {
            graph: Graph::new(),
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.graph.push_scope(name);
        let out = f(self);
        self.graph.pop_scope();
        out
    }
}

/// Folds pending batch statistics into the running estimates.
pub fn apply_bn_updates<T: Scalar>(store: &mut ParamStore<T>, updates: &[BnUpdate<T>]) {
    let m = T::of(BN_MOMENTUM);
    for u in updates {
        for (r, &b) in store.buffer_mut(u.running_mean).data_mut().iter_mut().zip(&u.batch_mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in store.buffer_mut(u.running_var).data_mut().iter_mut().zip(&u.batch_var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(name: &str, channels: usize, store: &mut ParamStore<T>) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        BatchNorm {
            channels,
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(shape, T::one())),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(shape)),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(shape)),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(shape, T::one())),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.graph.batchnorm_train(x, gamma, beta, BN_EPS)?;
                let correction = if stats.count > 1 {
                    T::of(stats.count as f64 / (stats.count - 1) as f64)
                } else {
                    T::one()
                };
                ctx.bn_updates.push(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    batch_mean: stats.mean,
                    batch_var: stats.var.iter().map(|&v| v * correction).collect(),
                });
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.store.buffer(self.running_mean).data().to_vec();
                let var = ctx.store.buffer(self.running_var).data().to_vec();
                ctx.graph.batchnorm_eval(x, gamma, beta, &mean, &var, BN_EPS)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub bn: Option<BatchNorm>,
}

impl ConvLayer {
    /// Allocates parameters: Kaiming-uniform weights with bound
    /// `sqrt(6 / fan_in)`, zero bias, unit-scale zero-shift batch norm.
    pub fn new<T: Scalar>(
        name: impl Into<String>,
        spec: ConvSpec,
        store: &mut ParamStore<T>,
        rng: &mut RngState,
    ) -> Result<Self> {
        spec.validate()?;
        let name = name.into();
        let bound = (6.0 / spec.fan_in() as f64).sqrt();
        let weight = Tensor::from_fn(spec.weight_shape(), |_| T::of(rng.uniform(-bound, bound)));
        let weight = store.add_param(format!("{name}.weight"), weight);
        let bias = spec.bias.then(|| {
            store.add_param(
                format!("{name}.bias"),
                Tensor::zeros(Shape::new(1, spec.out_channels, 1, 1)),
            )
        });
        let bn = spec
            .bn_relu
            .then(|| BatchNorm::new(&format!("{name}.bn"), spec.out_channels, store));
        Ok(ConvLayer {
            name,
            spec,
            weight,
            bias,
            bn,
        })
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn check_input<T: Scalar>(&self, ctx: &Ctx<'_, T>, x: Var) -> Result<()> {
        let c = ctx.graph.shape(x).c;
        if c != self.spec.in_channels {
            return Err(Error::dim(
                "conv layer",
                crate::error::Axis::Channels,
                self.spec.in_channels,
                c,
            ));
        }
        Ok(())
    }

    /// Convolution and batch norm, without the trailing ReLU.
    pub fn forward_pre_activation<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.check_input(ctx, x)?;
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        let y = ctx.graph.conv2d(x, w, b, self.spec.geometry())?;
        match &self.bn {
            Some(bn) => bn.forward(ctx, y),
            None => Ok(y),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let name = self.name.rsplit('.').next().unwrap_or(&self.name).to_string();
        ctx.scoped(&name, |ctx| {
            let y = self.forward_pre_activation(ctx, x)?;
            Ok(if self.spec.bn_relu { ctx.graph.relu(y) } else { y })
        })
    }
}

/// Where batch norm + ReLU sit inside a depthwise-separable convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SepBn {
    /// After the depthwise and after the pointwise convolution.
    Both,
    /// After the pointwise convolution only.
    PointwiseOnly,
}

/// 3x3 depthwise convolution followed by a 1x1 pointwise convolution.
#[derive(Clone, Debug)]
pub struct SepConvLayer {
    pub depthwise: ConvLayer,
    pub pointwise: ConvLayer,
}

impl SepConvLayer {
    pub fn specs(
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        stride: usize,
        bn: SepBn,
    ) -> [ConvSpec; 2] {
        [
            ConvSpec::depthwise(in_channels, dilation)
                .stride(stride)
                .with_bn_relu(bn == SepBn::Both),
            ConvSpec::new(in_channels, out_channels, 1),
        ]
    }

    pub fn new<T: Scalar>(
        name: &str,
        [dw, pw]: [ConvSpec; 2],
        store: &mut ParamStore<T>,
        rng: &mut RngState,
    ) -> Result<Self> {
        Ok(SepConvLayer {
            depthwise: ConvLayer::new(format!("{name}.dw"), dw, store, rng)?,
            pointwise: ConvLayer::new(format!("{name}.pw"), pw, store, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.param_count() + self.pointwise.param_count()
    }

    pub fn forward_pre_activation<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(ctx, x)?;
        ctx.scoped("pw", |ctx| self.pointwise.forward_pre_activation(ctx, y))
    }
}

/// One convolution slot of a block: a single conv or a separable pair.
#[derive(Clone, Debug)]
pub enum ConvBlock {
    Plain(ConvLayer),
    Separable(SepConvLayer),
}

impl ConvBlock {
    pub fn param_count(&self) -> usize {
        match self {
            ConvBlock::Plain(c) => c.param_count(),
            ConvBlock::Separable(s) => s.param_count(),
        }
    }

    pub fn specs(&self) -> Vec<ConvSpec> {
        match self {
            ConvBlock::Plain(c) => vec![c.spec],
            ConvBlock::Separable(s) => vec![s.depthwise.spec, s.pointwise.spec],
        }
    }

    pub fn layers(&self) -> Vec<&ConvLayer> {
        match self {
            ConvBlock::Plain(c) => vec![c],
            ConvBlock::Separable(s) => vec![&s.depthwise, &s.pointwise],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.specs()[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.specs().last().expect("nonempty").out_channels
    }

    /// Output of the final batch norm, before its ReLU.
    pub fn forward_pre_activation<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        match self {
            ConvBlock::Plain(c) => c.forward_pre_activation(ctx, x),
            ConvBlock::Separable(s) => s.forward_pre_activation(ctx, x),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.forward_pre_activation(ctx, x)?;
        Ok(ctx.graph.relu(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(ConvSpec::new(100, 20, 1).output_head().param_count(), 2020);
        let [dw, pw] = SepConvLayer::specs(32, 32, 1, 1, SepBn::Both);
        assert_eq!(dw.param_count() + pw.param_count(), 32 * 9 + 2 * 32 + 32 * 32 + 2 * 32);
        assert_eq!(dw.param_count() + pw.param_count(), 1440);
        let [dw, pw] = SepConvLayer::specs(32, 32, 1, 1, SepBn::PointwiseOnly);
        assert_eq!(dw.param_count() + pw.param_count(), 32 * 9 + 32 * 32 + 2 * 32);
        let dw = ConvSpec::depthwise(64, 1).with_bn_relu(false);
        assert_eq!(dw.param_count(), 576);
        assert_eq!(ConvSpec::depthwise(64, 1).param_count(), 576 + 128);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = ConvSpec::new(3, 32, 3);
        let build = || {
            let mut store = ParamStore::<f32>::new();
            let mut rng = RngState::new(42);
            let l = ConvLayer::new("c", spec, &mut store, &mut rng).unwrap();
            (store, l)
        };
        let (a, la) = build();
        let (b, _) = build();
        assert_eq!(a, b);
        let bound = (6.0f64 / 27.0).sqrt() as f32;
        assert!(a.param(la.weight).data().iter().all(|w| w.abs() <= bound));
        let bn = la.bn.as_ref().unwrap();
        assert!(a.param(bn.gamma).data().iter().all(|&g| g == 1.0));
        assert!(a.param(bn.beta).data().iter().all(|&g| g == 0.0));
        // Reported count equals allocated scalars.
        assert_eq!(a.scalar_count(), la.param_count());
    }

    #[test]
    fn output_head_on_zero_input_gives_zero_logits() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngState::new(1);
        let l = ConvLayer::new("head", ConvSpec::new(8, 5, 1).output_head(), &mut store, &mut rng)
            .unwrap();
        let mut ctx = Ctx::new(&store, Mode::Eval);
        let x = ctx.graph.constant(Tensor::zeros(Shape::new(1, 8, 3, 3)));
        let y = l.forward(&mut ctx, x).unwrap();
        assert!(ctx.graph.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn separable_preserves_resolution_and_eval_is_deterministic() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = RngState::new(3);
        let sep = SepConvLayer::new(
            "s",
            SepConvLayer::specs(4, 6, 2, 1, SepBn::Both),
            &mut store,
            &mut rng,
        )
        .unwrap();
        let block = ConvBlock::Separable(sep);
        let x = Tensor::from_fn(Shape::new(1, 4, 9, 7), |i| (i as f32 * 0.37).sin());
        let run = || {
            let mut ctx = Ctx::new(&store, Mode::Eval);
            let xv = ctx.graph.constant(x.clone());
            let y = block.forward(&mut ctx, xv).unwrap();
            ctx.graph.value(y).clone()
        };
        let a = run();
        assert_eq!(a.shape(), Shape::new(1, 6, 9, 7));
        assert_eq!(a, run());
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = RngState::new(3);
        let l = ConvLayer::new("c", ConvSpec::new(3, 4, 3), &mut store, &mut rng).unwrap();
        let mut ctx = Ctx::new(&store, Mode::Train);
        let x = ctx.graph.constant(Tensor::zeros(Shape::new(1, 5, 4, 4)));
        assert!(matches!(l.forward(&mut ctx, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new("bn", 1, &mut store);
        let updates = {
            let mut ctx = Ctx::new(&store, Mode::Train);
            let x = ctx
                .graph
                .constant(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap());
            bn.forward(&mut ctx, x).unwrap();
            ctx.bn_updates
        };
        apply_bn_updates(&mut store, &updates);
        // mean 2, unbiased var 2
        assert!((store.buffer(bn.running_mean).data()[0] - 0.2).abs() < 1e-12);
        assert!((store.buffer(bn.running_var).data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
