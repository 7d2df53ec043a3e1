//! Variant specification, architecture planning and the full
//! encoder/decoder network.
//!
//! Planning ([`Architecture`]) is pure arithmetic and allocates no tensors;
//! the cost model works from it directly. [`Network::build`] then allocates
//! parameters for a plan.

use std::fmt;

use crate::autodiff::Var;
use crate::config::{parse_bool, KvConfig};
use crate::error::{Axis, Error, Result};
use crate::glance::{AddPoint, Family, GlanceConfig, GlanceModule, GlanceTail, Residual, GLANCE_WIDTH};
use crate::layers::{ConvLayer, ConvSpec, Ctx, Mode, RngState, SepBn};
use crate::params::ParamStore;
use crate::tensor::kernels::conv_output_len;
use crate::tensor::{Scalar, Tensor};

pub const DEPTHS: [usize; 4] = [3, 6, 9, 12];
pub const MIN_INPUT: usize = 16;

/// Every shipped variant name.
pub const VARIANT_NAMES: [&str; 12] = [
    "pdfnet3", "pdfnet6", "pdfnet9", "pdfnet12", "pdfnet3-2s", "pdfnet6-2s", "pdfnet9-2s",
    "pdfnet12-2s", "dfnet3", "dfnet6", "dfnet9", "dfnet12",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VariantSpec {
    pub family: Family,
    /// Glance blocks in each of the last three stages.
    pub depth: usize,
    /// First stage removed, first convolution strided.
    pub two_stride: bool,
    pub num_classes: usize,
    pub in_channels: usize,
}

impl VariantSpec {
    pub fn new(family: Family, depth: usize, two_stride: bool) -> Self {
        VariantSpec {
            family,
            depth,
            two_stride,
            num_classes: 20,
            in_channels: 3,
        }
    }

    pub fn parse_name(name: &str) -> Result<Self> {
        let unknown = || {
            Error::Config(format!(
                "unknown variant `{name}`; valid variants: {}",
                VARIANT_NAMES.join(", ")
            ))
        };
        let lower = name.to_ascii_lowercase();
        let (base, two_stride) = match lower.strip_suffix("-2s") {
            Some(b) => (b, true),
            None => (lower.as_str(), false),
        };
        let (family, digits) = if let Some(d) = base.strip_prefix("pdfnet") {
            (Family::Pdf, d)
        } else if let Some(d) = base.strip_prefix("dfnet") {
            (Family::Df, d)
        } else {
            return Err(unknown());
        };
        let depth = digits.parse().map_err(|_| unknown())?;
        let spec = VariantSpec::new(family, depth, two_stride);
        spec.validate().map_err(|_| unknown())?;
        Ok(spec)
    }

    pub fn name(&self) -> String {
        let family = match self.family {
            Family::Pdf => "pdfnet",
            Family::Df => "dfnet",
        };
        let suffix = if self.two_stride { "-2s" } else { "" };
        format!("{family}{}{suffix}", self.depth)
    }

    pub fn all() -> Vec<VariantSpec> {
        VARIANT_NAMES
            .iter()
            .map(|n| VariantSpec::parse_name(n).expect("shipped names parse"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !DEPTHS.contains(&self.depth) {
            return Err(Error::Config(format!(
                "unsupported depth {} (expected 3, 6, 9 or 12)",
                self.depth
            )));
        }
        if self.two_stride && self.family == Family::Df {
            return Err(Error::Config("the DF family has no two-stride variant".into()));
        }
        if self.num_classes < 1 || self.in_channels < 1 {
            return Err(Error::Config("num_classes and in_channels must be positive".into()));
        }
        Ok(())
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// How the two-stride variant replaces the first stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TwoStrideStem {
    /// Stage 1 is dropped; stage 2 takes the image directly with a strided
    /// regular first convolution and no seed input. Four stages at
    /// strides 2, 4, 8, 16.
    DropFirstStage,
    /// Stage 1 is kept but strided; the last stage is dropped to keep four
    /// stages.
    StridedStem,
}

/// Channels of each per-stage decoder projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderWidth {
    Classes,
    Fixed(usize),
}

/// Structural choices not fixed by the variant name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchOptions {
    pub sep_bn: SepBn,
    pub tail: GlanceTail,
    pub stem_2s: TwoStrideStem,
    pub residual: Residual,
    pub add_point: AddPoint,
    pub decoder_width: DecoderWidth,
}

impl Default for ArchOptions {
    fn default() -> Self {
        ArchOptions {
            sep_bn: SepBn::Both,
            tail: GlanceTail::Depthwise,
            stem_2s: TwoStrideStem::DropFirstStage,
            residual: Residual::AroundTail,
            add_point: AddPoint::PostActivation,
            decoder_width: DecoderWidth::Classes,
        }
    }
}

/// Variant plus options; the unit persisted in config files and checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub spec: VariantSpec,
    pub options: ArchOptions,
}

pub const MODEL_KEYS: [&str; 12] = [
    "variant",
    "family",
    "depth",
    "two_stride",
    "num_classes",
    "in_channels",
    "sep_bn",
    "glance_tail",
    "stem_2s",
    "residual",
    "residual_add",
    "decoder_width",
];

impl ModelConfig {
    pub fn new(spec: VariantSpec) -> Self {
        ModelConfig {
            spec,
            options: ArchOptions::default(),
        }
    }

    pub fn parse_name(name: &str) -> Result<Self> {
        Ok(ModelConfig::new(VariantSpec::parse_name(name)?))
    }

    /// Reads model keys, ignoring any others. `variant` sets family, depth
    /// and two_stride at once; the individual keys override it.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut spec = match kv.get("variant") {
            Some(v) => VariantSpec::parse_name(v)?,
            None => VariantSpec::new(Family::Pdf, 3, false),
        };
        if let Some(f) = kv.get("family") {
            spec.family = match f {
                "pdfnet" | "pdf" => Family::Pdf,
                "dfnet" | "df" => Family::Df,
                _ => return Err(Error::Config(format!("unknown family `{f}`"))),
            };
        }
        if let Some(d) = kv.get_parsed("depth")? {
            spec.depth = d;
        }
        if let Some(v) = kv.get("two_stride") {
            spec.two_stride = parse_bool("two_stride", v)?;
        }
        if let Some(k) = kv.get_parsed("num_classes")? {
            spec.num_classes = k;
        }
        if let Some(c) = kv.get_parsed("in_channels")? {
            spec.in_channels = c;
        }
        spec.validate()?;

        let mut o = ArchOptions::default();
        let choice = |key: &str, options: &[&str]| -> Result<Option<usize>> {
            kv.get(key)
                .map(|v| {
                    options.iter().position(|o| *o == v).ok_or_else(|| {
                        Error::Config(format!("`{key}` must be one of {}, got `{v}`", options.join(" | ")))
                    })
                })
                .transpose()
        };
        if let Some(i) = choice("sep_bn", &["both", "pointwise"])? {
            o.sep_bn = [SepBn::Both, SepBn::PointwiseOnly][i];
        }
        if let Some(i) = choice("glance_tail", &["depthwise", "separable"])? {
            o.tail = [GlanceTail::Depthwise, GlanceTail::Separable][i];
        }
        if let Some(i) = choice("stem_2s", &["drop-first-stage", "strided-stem"])? {
            o.stem_2s = [TwoStrideStem::DropFirstStage, TwoStrideStem::StridedStem][i];
        }
        if let Some(i) = choice("residual", &["around-tail", "around-conv2"])? {
            o.residual = [Residual::AroundTail, Residual::AroundConv2][i];
        }
        if let Some(i) = choice("residual_add", &["post", "pre"])? {
            o.add_point = [AddPoint::PostActivation, AddPoint::PreActivation][i];
        }
        if let Some(v) = kv.get("decoder_width") {
            o.decoder_width = match v {
                "classes" => DecoderWidth::Classes,
                n => match n.parse() {
                    Ok(n) if n > 0 => DecoderWidth::Fixed(n),
                    _ => {
                        return Err(Error::Config(format!(
                            "`decoder_width` must be `classes` or a positive integer, got `{v}`"
                        )))
                    }
                },
            };
        }
        Ok(ModelConfig { spec, options: o })
    }

    pub fn to_kv(&self) -> KvConfig {
        let s = &self.spec;
        let o = &self.options;
        let mut kv = KvConfig::new();
        kv.set(
            "family",
            match s.family {
                Family::Pdf => "pdfnet",
                Family::Df => "dfnet",
            },
        );
        kv.set("depth", s.depth);
        kv.set("two_stride", s.two_stride);
        kv.set("num_classes", s.num_classes);
        kv.set("in_channels", s.in_channels);
        kv.set(
            "sep_bn",
            match o.sep_bn {
                SepBn::Both => "both",
                SepBn::PointwiseOnly => "pointwise",
            },
        );
        kv.set(
            "glance_tail",
            match o.tail {
                GlanceTail::Depthwise => "depthwise",
                GlanceTail::Separable => "separable",
            },
        );
        kv.set(
            "stem_2s",
            match o.stem_2s {
                TwoStrideStem::DropFirstStage => "drop-first-stage",
                TwoStrideStem::StridedStem => "strided-stem",
            },
        );
        kv.set(
            "residual",
            match o.residual {
                Residual::AroundTail => "around-tail",
                Residual::AroundConv2 => "around-conv2",
            },
        );
        kv.set(
            "residual_add",
            match o.add_point {
                AddPoint::PostActivation => "post",
                AddPoint::PreActivation => "pre",
            },
        );
        kv.set(
            "decoder_width",
            match o.decoder_width {
                DecoderWidth::Classes => "classes".to_string(),
                DecoderWidth::Fixed(n) => n.to_string(),
            },
        );
        kv
    }
}

/// One encoder stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub name: String,
    /// Channels of the pooled previous stage output fed in as the seed;
    /// zero for a stage that starts from the image.
    pub seed_channels: usize,
    pub glances: Vec<GlanceConfig>,
}

impl StagePlan {
    pub fn out_channels(&self) -> usize {
        self.seed_channels + GLANCE_WIDTH * self.glances.len()
    }

    pub fn param_count(&self) -> usize {
        self.glances.iter().map(GlanceConfig::param_count).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub stages: Vec<StagePlan>,
    /// Per-stage 1x1 projections feeding the fusion concat.
    pub projections: Vec<ConvSpec>,
    /// Final 1x1 convolution producing logits.
    pub fusion: ConvSpec,
}

fn dilation_cycle(i: usize) -> usize {
    i % 3 + 1
}

impl Architecture {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let spec = config.spec;
        let o = config.options;
        spec.validate()?;
        let glance = |in_channels: usize, dilation: usize| GlanceConfig {
            in_channels,
            dilation,
            stride: 1,
            first_conv_regular: false,
            family: spec.family,
            tail: o.tail,
            sep_bn: o.sep_bn,
            residual: o.residual,
            add_point: o.add_point,
        };
        // Stage that starts from the image: glance k sees the concat of the
        // previous k-1 glance outputs, the first sees the image.
        let unseeded = |count: usize, stride: usize, dilations: &dyn Fn(usize) -> usize| {
            let glances = (0..count)
                .map(|i| {
                    if i == 0 {
                        GlanceConfig {
                            first_conv_regular: true,
                            stride,
                            ..glance(spec.in_channels, dilations(0))
                        }
                    } else {
                        glance(GLANCE_WIDTH * i, dilations(i))
                    }
                })
                .collect();
            StagePlan {
                name: "stage1".into(),
                seed_channels: 0,
                glances,
            }
        };
        let seeded = |name: String, seed: usize, count: usize| StagePlan {
            name,
            seed_channels: seed,
            glances: (0..count)
                .map(|i| glance(seed + GLANCE_WIDTH * i, dilation_cycle(i)))
                .collect(),
        };

        let mut stages = Vec::new();
        let late = [3, spec.depth, spec.depth, spec.depth];
        if spec.two_stride && o.stem_2s == TwoStrideStem::DropFirstStage {
            stages.push(unseeded(late[0], 2, &dilation_cycle));
            for (i, &n) in late.iter().enumerate().skip(1) {
                let prev = stages.last().map(StagePlan::out_channels).unwrap_or(0);
                stages.push(seeded(format!("stage{}", i + 1), prev, n));
            }
        } else {
            let stride = if spec.two_stride { 2 } else { 1 };
            stages.push(unseeded(2, stride, &|_| 1));
            let keep = if spec.two_stride { 3 } else { 4 };
            for (i, &n) in late.iter().take(keep).enumerate() {
                let prev = stages.last().map(StagePlan::out_channels).unwrap_or(0);
                stages.push(seeded(format!("stage{}", i + 2), prev, n));
            }
        }

        let width = match o.decoder_width {
            DecoderWidth::Classes => spec.num_classes,
            DecoderWidth::Fixed(n) => n,
        };
        let projections = stages
            .iter()
            .map(|s| ConvSpec::new(s.out_channels(), width, 1))
            .collect::<Vec<_>>();
        let fusion = ConvSpec::new(width * stages.len(), spec.num_classes, 1).output_head();
        Ok(Architecture {
            config,
            stages,
            projections,
            fusion,
        })
    }

    pub fn spec(&self) -> VariantSpec {
        self.config.spec
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        self.stages.iter().map(StagePlan::out_channels).collect()
    }

    pub fn fusion_width(&self) -> usize {
        self.fusion.in_channels
    }

    /// Downsampling factor of the first stage and the fusion tensor.
    pub fn first_stride(&self) -> usize {
        self.stages[0].glances[0].stride
    }

    /// Input-size contract: both sides at least 16, even for strided stems.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        for (axis, len) in [(Axis::Height, h), (Axis::Width, w)] {
            if len < MIN_INPUT {
                return Err(Error::dim("network input", axis, MIN_INPUT, len));
            }
            if self.first_stride() > 1 && len % 2 != 0 {
                return Err(Error::Config(format!(
                    "{} input needs even {axis}, got {len}",
                    self.spec()
                )));
            }
        }
        Ok(())
    }

    /// Spatial size of each stage's output for an `h x w` input.
    pub fn stage_resolutions(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let s = self.first_stride();
        let first = |len: usize| {
            if s == 1 {
                len
            } else {
                conv_output_len(len, 3, s, 1, 1).unwrap_or(0)
            }
        };
        let mut cur = (first(h), first(w));
        let mut out = Vec::with_capacity(self.stages.len());
        for i in 0..self.stages.len() {
            if i > 0 {
                cur = (cur.0 / 2, cur.1 / 2);
            }
            out.push(cur);
        }
        out
    }

    pub fn encoder_params(&self) -> usize {
        self.stages.iter().map(StagePlan::param_count).sum()
    }

    pub fn decoder_params(&self) -> usize {
        self.projections.iter().map(ConvSpec::param_count).sum::<usize>() + self.fusion.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.encoder_params() + self.decoder_params()
    }
}

/// Stage output channels for a variant under the given options.
pub fn stage_channel_table(config: ModelConfig) -> Result<Vec<usize>> {
    Ok(Architecture::new(config)?.stage_channels())
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub plan: StagePlan,
    pub glances: Vec<GlanceModule>,
}

/// Test hooks that alter the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Hooks {
    /// Stage index (0-based) whose projection is detached from the tape.
    pub detach_projection: Option<usize>,
    /// Stage index whose projection is replaced with zeros.
    pub zero_projection: Option<usize>,
}

pub struct ForwardOut {
    pub logits: Var,
    pub stages: Vec<Var>,
    /// Output of the fusion convolution, before any final upsampling.
    pub fusion: Var,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub arch: Architecture,
    pub stages: Vec<Stage>,
    pub projections: Vec<ConvLayer>,
    pub fusion: ConvLayer,
}

impl Network {
    pub fn build<T: Scalar>(
        arch: Architecture,
        store: &mut ParamStore<T>,
        rng: &mut RngState,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(arch.stages.len());
        for plan in &arch.stages {
            let glances = plan
                .glances
                .iter()
                .enumerate()
                .map(|(i, cfg)| GlanceModule::new(&format!("{}.g{}", plan.name, i + 1), *cfg, store, rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage {
                plan: plan.clone(),
                glances,
            });
        }
        let projections = arch
            .projections
            .iter()
            .enumerate()
            .map(|(i, s)| ConvLayer::new(format!("decoder.proj{}", i + 1), *s, store, rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = ConvLayer::new("decoder.fusion", arch.fusion, store, rng)?;
        Ok(Network {
            arch,
            stages,
            projections,
            fusion,
        })
    }

    pub fn spec(&self) -> VariantSpec {
        self.arch.spec()
    }

    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .flat_map(|s| &s.glances)
            .map(GlanceModule::param_count)
            .sum::<usize>()
            + self.projections.iter().map(ConvLayer::param_count).sum::<usize>()
            + self.fusion.param_count()
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var, hooks: &Hooks) -> Result<ForwardOut> {
        let shape = ctx.graph.shape(x);
        if shape.c != self.spec().in_channels {
            return Err(Error::dim("network input", Axis::Channels, self.spec().in_channels, shape.c));
        }
        self.arch.check_input(shape.h, shape.w)?;

        let mut stage_outs: Vec<Var> = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let out = ctx.scoped(&stage.plan.name, |ctx| {
                let mut feats = Vec::with_capacity(stage.glances.len() + 1);
                if let Some(&prev) = stage_outs.last() {
                    feats.push(ctx.scoped("pool", |ctx| ctx.graph.avg_pool2d(prev, 2, 2))?);
                }
                for (i, g) in stage.glances.iter().enumerate() {
                    let input = if feats.is_empty() {
                        x
                    } else {
                        ctx.graph.concat_channels(&feats)?
                    };
                    let y = ctx.scoped(&format!("g{}", i + 1), |ctx| g.forward(ctx, input))?;
                    feats.push(y);
                }
                ctx.graph.concat_channels(&feats)
            })?;
            stage_outs.push(out);
        }

        let (fh, fw) = {
            let s = ctx.graph.shape(stage_outs[0]);
            (s.h, s.w)
        };
        let fusion = ctx.scoped("decoder", |ctx| {
            let mut projected = Vec::with_capacity(stage_outs.len());
            for (i, (layer, &s)) in self.projections.iter().zip(&stage_outs).enumerate() {
                let mut p = ctx.scoped(&format!("proj{}", i + 1), |ctx| {
                    let y = layer.forward_pre_activation(ctx, s)?;
                    Ok(ctx.graph.relu(y))
                })?;
                if hooks.detach_projection == Some(i) {
                    p = ctx.graph.detach(p);
                }
                if hooks.zero_projection == Some(i) {
                    p = ctx.graph.constant(Tensor::zeros(ctx.graph.shape(p)));
                }
                let ps = ctx.graph.shape(p);
                if (ps.h, ps.w) != (fh, fw) {
                    p = ctx.scoped(&format!("resize{}", i + 1), |ctx| ctx.graph.bilinear_resize(p, fh, fw))?;
                }
                projected.push(p);
            }
            let cat = ctx.graph.concat_channels(&projected)?;
            ctx.scoped("fusion", |ctx| self.fusion.forward_pre_activation(ctx, cat))
        })?;
        let logits = if (fh, fw) == (shape.h, shape.w) {
            fusion
        } else {
            ctx.scoped("upsample", |ctx| ctx.graph.bilinear_resize(fusion, shape.h, shape.w))?
        };
        Ok(ForwardOut {
            logits,
            stages: stage_outs,
            fusion,
        })
    }

    /// Eval-mode logits for a batch.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ctx = Ctx::new(store, Mode::Eval);
        let xv = ctx.graph.constant(x.clone());
        let out = self.forward(&mut ctx, xv, &Hooks::default())?;
        Ok(ctx.graph.value(out.logits).clone())
    }
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: Network,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(seed);
        let net = Network::build(Architecture::new(config)?, &mut store, &mut rng)?;
        Ok(Model { net, store })
    }

    pub fn config(&self) -> ModelConfig {
        self.net.arch.config
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.predict(&self.store, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn arch(name: &str) -> Architecture {
        Architecture::new(ModelConfig::parse_name(name).unwrap()).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for n in VARIANT_NAMES {
            assert_eq!(VariantSpec::parse_name(n).unwrap().name(), n);
        }
        assert_eq!(VariantSpec::all().len(), 12);
        for bad in ["pdfnet4", "dfnet3-2s", "unet", "pdfnet", "pdfnet3-3s"] {
            let e = VariantSpec::parse_name(bad).unwrap_err().to_string();
            assert!(e.contains("pdfnet12-2s"), "{e}");
        }
    }

    #[test]
    fn channel_tables() {
        assert_eq!(arch("pdfnet3").stage_channels(), vec![64, 160, 256, 352, 448]);
        assert_eq!(arch("pdfnet6").stage_channels(), vec![64, 160, 352, 544, 736]);
        assert_eq!(arch("pdfnet12").stage_channels(), vec![64, 160, 544, 928, 1312]);
        assert_eq!(arch("pdfnet3").fusion_width(), 100);
        assert_eq!(arch("pdfnet3-2s").fusion_width(), 80);
        assert_eq!(arch("pdfnet3-2s").stage_channels(), vec![96, 192, 288, 384]);
        let mut cfg = ModelConfig::parse_name("pdfnet3-2s").unwrap();
        cfg.options.stem_2s = TwoStrideStem::StridedStem;
        assert_eq!(stage_channel_table(cfg).unwrap(), vec![64, 160, 256, 352]);
        assert_eq!(Architecture::new(cfg).unwrap().fusion_width(), 80);
    }

    #[test]
    fn stage_one_wiring() {
        let a = arch("pdfnet3");
        let s1 = &a.stages[0];
        assert_eq!(s1.seed_channels, 0);
        assert!(s1.glances[0].first_conv_regular);
        assert_eq!(s1.glances[0].in_channels, 3);
        assert_eq!(s1.glances[1].in_channels, 32);
        assert!(!s1.glances[1].first_conv_regular);
        let dil: Vec<_> = a.stages[3].glances.iter().map(|g| g.dilation).collect();
        assert_eq!(dil, vec![1, 2, 3]);
        let a = arch("pdfnet12");
        let dil: Vec<_> = a.stages[4].glances.iter().map(|g| g.dilation).collect();
        assert_eq!(dil, vec![1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3]);
        let ins: Vec<_> = a.stages[1].glances.iter().map(|g| g.in_channels).collect();
        assert_eq!(ins, vec![64, 96, 128]);
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = ModelConfig::parse_name("dfnet9").unwrap();
        cfg.spec.num_classes = 12;
        cfg.options.sep_bn = SepBn::PointwiseOnly;
        cfg.options.decoder_width = DecoderWidth::Fixed(20);
        let back = ModelConfig::from_kv(&KvConfig::parse(&cfg.to_kv().to_string()).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let kv = KvConfig::parse("variant = pdfnet6-2s\nnum_classes = 12\n").unwrap();
        let c = ModelConfig::from_kv(&kv).unwrap();
        assert_eq!(c.spec.name(), "pdfnet6-2s");
        assert_eq!(c.spec.num_classes, 12);
        let kv = KvConfig::parse("depth = 5").unwrap();
        assert!(matches!(ModelConfig::from_kv(&kv), Err(Error::Config(_))));
        let kv = KvConfig::parse("sep_bn = sometimes").unwrap();
        assert!(ModelConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn input_contract() {
        let a = arch("pdfnet3-2s");
        assert!(a.check_input(64, 128).is_ok());
        assert!(matches!(a.check_input(8, 128), Err(Error::Dimension { axis: Axis::Height, .. })));
        assert!(a.check_input(33, 64).is_err());
        assert_eq!(a.stage_resolutions(64, 128), vec![(32, 64), (16, 32), (8, 16), (4, 8)]);
        let a = arch("pdfnet3");
        assert!(a.check_input(17, 19).is_ok());
        assert_eq!(a.stage_resolutions(17, 19)[4], (1, 1));
    }

    #[test]
    fn built_params_match_plan() {
        for name in ["pdfnet3", "pdfnet3-2s", "dfnet3"] {
            let m = Model::<f32>::new(ModelConfig::parse_name(name).unwrap(), 42).unwrap();
            assert_eq!(m.net.param_count(), m.net.arch.param_count());
            assert_eq!(m.store.scalar_count(), m.net.arch.param_count());
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let m = Model::<f32>::new(ModelConfig::parse_name("pdfnet3").unwrap(), 42).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 3, 16, 32), |i| ((i * 7919) % 97) as f32 / 97.0);
        let a = m.predict(&x).unwrap();
        assert_eq!(a.shape(), Shape::new(1, 20, 16, 32));
        assert_eq!(a, m.predict(&x).unwrap());
        let bad = Tensor::<f32>::zeros(Shape::new(1, 4, 16, 32));
        assert!(matches!(m.predict(&bad), Err(Error::Dimension { axis: Axis::Channels, .. })));
    }
}
