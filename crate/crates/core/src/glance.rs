//! The glance block: three same-dilation 3x3 convolutions with a residual
//! junction, mapping any channel count to a fixed 32 channels.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::{ConvBlock, ConvLayer, ConvSpec, Ctx, RngState, SepBn, SepConvLayer};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Output channels of every glance block.
pub const GLANCE_WIDTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// Separable first convolution (except the network's very first block).
    Pdf,
    /// Regular first convolution in every block.
    Df,
}

/// Form of the second and third convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GlanceTail {
    /// 3x3 depthwise only.
    Depthwise,
    /// 3x3 depthwise followed by a 1x1 pointwise.
    Separable,
}

/// Which convolutions the residual skip jumps over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Residual {
    /// `y1 + conv3(conv2(y1))`.
    AroundTail,
    /// `conv3(y1 + conv2(y1))`.
    AroundConv2,
}

/// Whether the skip is added after or before the ReLU of the convolution it
/// joins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AddPoint {
    PostActivation,
    PreActivation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GlanceConfig {
    pub in_channels: usize,
    pub dilation: usize,
    /// Applied by the first convolution only.
    pub stride: usize,
    pub first_conv_regular: bool,
    pub family: Family,
    pub tail: GlanceTail,
    pub sep_bn: SepBn,
    pub residual: Residual,
    pub add_point: AddPoint,
}

impl GlanceConfig {
    pub fn new(in_channels: usize, dilation: usize, family: Family) -> Self {
        GlanceConfig {
            in_channels,
            dilation,
            stride: 1,
            first_conv_regular: false,
            family,
            tail: GlanceTail::Depthwise,
            sep_bn: SepBn::Both,
            residual: Residual::AroundTail,
            add_point: AddPoint::PostActivation,
        }
    }

    pub fn conv1_is_regular(&self) -> bool {
        self.first_conv_regular || self.family == Family::Df
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation < 1 {
            return Err(Error::Config("glance dilation must be at least 1".into()));
        }
        if self.in_channels < 1 || self.stride < 1 {
            return Err(Error::Config(format!("degenerate glance {self:?}")));
        }
        Ok(())
    }

    pub fn conv1_specs(&self) -> Vec<ConvSpec> {
        if self.conv1_is_regular() {
            vec![ConvSpec::new(self.in_channels, GLANCE_WIDTH, 3)
                .dilation(self.dilation)
                .stride(self.stride)]
        } else {
            SepConvLayer::specs(
                self.in_channels,
                GLANCE_WIDTH,
                self.dilation,
                self.stride,
                self.sep_bn,
            )
            .to_vec()
        }
    }

    pub fn tail_specs(&self) -> Vec<ConvSpec> {
        match self.tail {
            GlanceTail::Depthwise => vec![ConvSpec::depthwise(GLANCE_WIDTH, self.dilation)],
            GlanceTail::Separable => {
                SepConvLayer::specs(GLANCE_WIDTH, GLANCE_WIDTH, self.dilation, 1, self.sep_bn)
                    .to_vec()
            }
        }
    }

    /// Every convolution in execution order: conv1, conv2, conv3.
    pub fn all_specs(&self) -> Vec<ConvSpec> {
        let mut v = self.conv1_specs();
        v.extend(self.tail_specs());
        v.extend(self.tail_specs());
        v
    }

    pub fn param_count(&self) -> usize {
        self.all_specs().iter().map(ConvSpec::param_count).sum()
    }
}

fn build_block<T: Scalar>(
    name: &str,
    specs: Vec<ConvSpec>,
    store: &mut ParamStore<T>,
    rng: &mut RngState,
) -> Result<ConvBlock> {
    Ok(match specs.as_slice() {
        [one] => ConvBlock::Plain(ConvLayer::new(name, *one, store, rng)?),
        [dw, pw] => ConvBlock::Separable(SepConvLayer::new(name, [*dw, *pw], store, rng)?),
        _ => unreachable!("blocks hold one or two convolutions"),
    })
}

#[derive(Clone, Debug)]
pub struct GlanceModule {
    pub cfg: GlanceConfig,
    pub conv1: ConvBlock,
    pub conv2: ConvBlock,
    pub conv3: ConvBlock,
}

impl GlanceModule {
    pub fn new<T: Scalar>(
        name: &str,
        cfg: GlanceConfig,
        store: &mut ParamStore<T>,
        rng: &mut RngState,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(GlanceModule {
            cfg,
            conv1: build_block(&format!("{name}.conv1"), cfg.conv1_specs(), store, rng)?,
            conv2: build_block(&format!("{name}.conv2"), cfg.tail_specs(), store, rng)?,
            conv3: build_block(&format!("{name}.conv3"), cfg.tail_specs(), store, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.conv3.param_count()
    }

    pub fn blocks(&self) -> [&ConvBlock; 3] {
        [&self.conv1, &self.conv2, &self.conv3]
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y1 = ctx.scoped("conv1", |ctx| self.conv1.forward(ctx, x))?;
        match self.cfg.residual {
            Residual::AroundTail => {
                let y2 = ctx.scoped("conv2", |ctx| self.conv2.forward(ctx, y1))?;
                ctx.scoped("conv3", |ctx| self.joined(&self.conv3, ctx, y2, y1))
            }
            Residual::AroundConv2 => {
                let y2 = ctx.scoped("conv2", |ctx| self.joined(&self.conv2, ctx, y1, y1))?;
                ctx.scoped("conv3", |ctx| self.conv3.forward(ctx, y2))
            }
        }
    }

    /// `block(x)` with `skip` added at the configured point.
    fn joined<T: Scalar>(
        &self,
        block: &ConvBlock,
        ctx: &mut Ctx<'_, T>,
        x: Var,
        skip: Var,
    ) -> Result<Var> {
        match self.cfg.add_point {
            AddPoint::PostActivation => {
                let y = block.forward(ctx, x)?;
                ctx.graph.add(y, skip)
            }
            AddPoint::PreActivation => {
                let y = block.forward_pre_activation(ctx, x)?;
                let s = ctx.graph.add(y, skip)?;
                Ok(ctx.graph.relu(s))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::kernels;
    use crate::tensor::{Shape, Tensor};

    fn build(cfg: GlanceConfig) -> (ParamStore<f64>, GlanceModule) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(42);
        let m = GlanceModule::new("g", cfg, &mut store, &mut rng).unwrap();
        (store, m)
    }

    fn run(store: &ParamStore<f64>, m: &GlanceModule, x: &Tensor<f64>) -> Tensor<f64> {
        let mut ctx = Ctx::new(store, Mode::Eval);
        let xv = ctx.graph.constant(x.clone());
        let y = m.forward(&mut ctx, xv).unwrap();
        ctx.graph.value(y).clone()
    }

    fn random(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn pdf_first_conv_is_separable_with_shared_dilation() {
        let (_, m) = build(GlanceConfig::new(64, 2, Family::Pdf));
        let specs = m.conv1.specs();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].groups, 64);
        assert_eq!(specs[0].dilation, 2);
        assert_eq!(specs[1].out_channels, GLANCE_WIDTH);
        for b in m.blocks() {
            assert!(b.specs().iter().filter(|s| s.kernel == 3).all(|s| s.dilation == 2));
        }
    }

    #[test]
    fn df_first_conv_is_regular() {
        let (_, m) = build(GlanceConfig::new(64, 1, Family::Df));
        let specs = m.conv1.specs();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].weight_shape().numel(), 64 * 32 * 9);
        let mut first = GlanceConfig::new(3, 1, Family::Pdf);
        first.first_conv_regular = true;
        assert_eq!(first.conv1_specs(), vec![ConvSpec::new(3, 32, 3)]);
    }

    #[test]
    fn df_adds_regular_minus_separable_scalars() {
        for c in [3usize, 32, 64, 160, 448] {
            let mut pdf = GlanceConfig::new(c, 1, Family::Pdf);
            let mut df = GlanceConfig::new(c, 1, Family::Df);
            pdf.sep_bn = SepBn::PointwiseOnly;
            df.sep_bn = SepBn::PointwiseOnly;
            assert_eq!(df.param_count() - pdf.param_count(), c * 32 * 9 - (c * 9 + c * 32));
            // With batch norm on the depthwise half too, its scale and shift go as well.
            pdf.sep_bn = SepBn::Both;
            df.sep_bn = SepBn::Both;
            assert_eq!(
                df.param_count() - pdf.param_count(),
                c * 32 * 9 - (c * 9 + c * 32) - 2 * c
            );
        }
    }

    #[test]
    fn calibrated_param_formula() {
        // 43c + 768 for the separable-first, depthwise-tail block.
        for c in [32usize, 64, 96, 448] {
            assert_eq!(GlanceConfig::new(c, 1, Family::Pdf).param_count(), 43 * c + 768);
        }
    }

    #[test]
    fn dilation_zero_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = RngState::new(0);
        let r = GlanceModule::new("g", GlanceConfig::new(8, 0, Family::Pdf), &mut store, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn odd_input_keeps_resolution_and_width() {
        for c in [3usize, 32, 64] {
            let (store, m) = build(GlanceConfig::new(c, 3, Family::Pdf));
            let y = run(&store, &m, &random(Shape::new(1, c, 17, 17), 1));
            assert_eq!(y.shape(), Shape::new(1, 32, 17, 17));
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (mut store, m) = build(GlanceConfig::new(8, 1, Family::Pdf));
        for b in m.blocks() {
            for l in b.layers() {
                store.param_mut(l.weight).data_mut().fill(0.0);
            }
        }
        let y = run(&store, &m, &random(Shape::new(1, 8, 6, 6), 2));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    /// Recomposes the block from raw kernels with eval-mode batch norm.
    fn reference(store: &ParamStore<f64>, m: &GlanceModule, x: &Tensor<f64>) -> Tensor<f64> {
        let layer = |l: &ConvLayer, x: &Tensor<f64>| {
            let y = kernels::conv2d(x, store.param(l.weight), None, &l.spec.geometry()).unwrap();
            let bn = l.bn.as_ref().unwrap();
            let (y, _) = kernels::batchnorm_eval(
                &y,
                store.param(bn.gamma).data(),
                store.param(bn.beta).data(),
                store.buffer(bn.running_mean).data(),
                store.buffer(bn.running_var).data(),
                1e-5,
            )
            .unwrap();
            kernels::relu(&y)
        };
        let block = |b: &ConvBlock, x: &Tensor<f64>| {
            b.layers().iter().fold(x.clone(), |acc, l| layer(l, &acc))
        };
        let y1 = block(&m.conv1, x);
        let y3 = block(&m.conv3, &block(&m.conv2, &y1));
        kernels::add(&y3, &y1).unwrap()
    }

    #[test]
    fn matches_op_by_op_composition() {
        let (mut store, m) = build(GlanceConfig::new(64, 2, Family::Pdf));
        // Non-trivial running statistics so batch norm is not the identity.
        let mut rng = RngState::new(9);
        for b in m.blocks() {
            for l in b.layers() {
                let bn = l.bn.as_ref().unwrap();
                for v in store.buffer_mut(bn.running_mean).data_mut() {
                    *v = rng.uniform(-0.2, 0.2);
                }
                for v in store.buffer_mut(bn.running_var).data_mut() {
                    *v = rng.uniform(0.5, 2.0);
                }
            }
        }
        let x = random(Shape::new(1, 64, 8, 8), 3);
        let got = run(&store, &m, &x);
        let want = reference(&store, &m, &x);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_tail_reduces_to_conv1_branch() {
        let (mut store, m) = build(GlanceConfig::new(16, 1, Family::Pdf));
        for b in [&m.conv2, &m.conv3] {
            for l in b.layers() {
                store.param_mut(l.weight).data_mut().fill(0.0);
            }
        }
        let x = random(Shape::new(1, 16, 5, 7), 4);
        let got = run(&store, &m, &x);
        let mut ctx = Ctx::new(&store, Mode::Eval);
        let xv = ctx.graph.constant(x);
        let y1 = m.conv1.forward(&mut ctx, xv).unwrap();
        assert_eq!(&got, ctx.graph.value(y1));
    }

    fn conv1_grad(store: &ParamStore<f64>, m: &GlanceModule, x: &Tensor<f64>, cut: usize) -> Vec<f64> {
        let mut ctx = Ctx::new(store, Mode::Train);
        let xv = ctx.graph.constant(x.clone());
        let y1 = m.conv1.forward(&mut ctx, xv).unwrap();
        let y2 = m.conv2.forward(&mut ctx, y1).unwrap();
        let y3 = m.conv3.forward(&mut ctx, y2).unwrap();
        let out = match cut {
            0 => ctx.graph.add(y3, y1).unwrap(),
            1 => y3,
            _ => y1,
        };
        // Weighted sum so batch norm does not cancel the gradient.
        let w = random(ctx.graph.shape(out), 77);
        let loss_val = ctx.graph.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        let loss = ctx.graph.scalar_fn(out, loss_val, w).unwrap();
        let grads = ctx.graph.backward(loss).unwrap();
        let id = m.conv1.layers()[0].weight;
        grads.param(&ctx.graph, id).unwrap().data().to_vec()
    }

    #[test]
    fn conv1_gradient_flows_through_both_paths() {
        let (store, m) = build(GlanceConfig::new(8, 1, Family::Pdf));
        let x = random(Shape::new(2, 8, 6, 6), 5);
        let full = conv1_grad(&store, &m, &x, 0);
        let tail_only = conv1_grad(&store, &m, &x, 1);
        let skip_only = conv1_grad(&store, &m, &x, 2);
        assert_ne!(full, tail_only);
        assert_ne!(full, skip_only);
        // Through the module forward, the gradient is the sum of the two.
        for ((f, t), s) in full.iter().zip(&tail_only).zip(&skip_only) {
            assert!((f - (t + s)).abs() < 1e-9 * (1.0 + f.abs()));
        }
    }

    #[test]
    fn alternative_wirings_run() {
        for residual in [Residual::AroundTail, Residual::AroundConv2] {
            for add_point in [AddPoint::PostActivation, AddPoint::PreActivation] {
                for tail in [GlanceTail::Depthwise, GlanceTail::Separable] {
                    let mut cfg = GlanceConfig::new(5, 2, Family::Pdf);
                    cfg.residual = residual;
                    cfg.add_point = add_point;
                    cfg.tail = tail;
                    let (store, m) = build(cfg);
                    assert_eq!(m.param_count(), cfg.param_count());
                    assert_eq!(store.scalar_count(), cfg.param_count());
                    let y = run(&store, &m, &random(Shape::new(1, 5, 9, 8), 6));
                    assert_eq!(y.shape(), Shape::new(1, 32, 9, 8));
                }
            }
        }
    }

    #[test]
    fn stride_two_halves_resolution() {
        let mut cfg = GlanceConfig::new(3, 1, Family::Pdf);
        cfg.first_conv_regular = true;
        cfg.stride = 2;
        let (store, m) = build(cfg);
        let y = run(&store, &m, &random(Shape::new(1, 3, 16, 20), 7));
        assert_eq!(y.shape(), Shape::new(1, 32, 8, 10));
    }
}
