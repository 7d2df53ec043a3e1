//! Analytic parameter and FLOP accounting, plus a grid search over the
//! structural options against target cost figures.
//!
//! Everything here works on an [`Architecture`] and allocates no tensors.

use std::fmt;

use crate::config::{parse_bool, KvConfig};
use crate::error::{Error, Result};
use crate::glance::GlanceTail;
use crate::layers::{ConvSpec, SepBn};
use crate::network::{Architecture, ArchOptions, DecoderWidth, ModelConfig, TwoStrideStem, VariantSpec};

/// What one FLOP means for a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Convention {
    /// One per multiply-accumulate.
    Mac,
    /// Two per multiply-accumulate.
    MulAdd2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CostOptions {
    pub convention: Convention,
    /// Count non-convolution work: batch norm (2 per element), ReLU (1),
    /// bias (1 per output), pooling (1 per input), resize (1 per output).
    /// Residual adds and concatenation are free.
    pub elementwise: bool,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            convention: Convention::Mac,
            elementwise: true,
        }
    }
}

impl CostOptions {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut o = CostOptions::default();
        if let Some(v) = kv.get("flop_convention") {
            o.convention = match v {
                "mac" => Convention::Mac,
                "muladd2" => Convention::MulAdd2,
                _ => return Err(Error::Config(format!("`flop_convention` must be mac | muladd2, got `{v}`"))),
            };
        }
        if let Some(v) = kv.get("flop_elementwise") {
            o.elementwise = parse_bool("flop_elementwise", v)?;
        }
        Ok(o)
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set(
            "flop_convention",
            match self.convention {
                Convention::Mac => "mac",
                Convention::MulAdd2 => "muladd2",
            },
        );
        kv.set("flop_elementwise", self.elementwise);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: usize,
    pub macs: u64,
    pub elementwise: u64,
}

impl LayerCost {
    pub fn flops(&self, o: CostOptions) -> u64 {
        let per_mac = match o.convention {
            Convention::Mac => 1,
            Convention::MulAdd2 => 2,
        };
        self.macs * per_mac + if o.elementwise { self.elementwise } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub variant: String,
    /// `(N, H, W)` of the input.
    pub input: (usize, usize, usize),
    pub options: CostOptions,
    pub stage_channels: Vec<usize>,
    pub total_params: usize,
    /// Encoder stages in order, then `decoder`.
    pub params_by_stage: Vec<(String, usize)>,
    pub total_flops: u64,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }

    /// `variant,params,gflops@HxW`
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{}@{}x{}",
            self.variant,
            self.total_params,
            crate::fmt6(self.gflops()),
            self.input.1,
            self.input.2
        )
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant          {}", self.variant)?;
        writeln!(
            f,
            "input            {}x3x{}x{}",
            self.input.0, self.input.1, self.input.2
        )?;
        let ch: Vec<String> = self.stage_channels.iter().map(|c| c.to_string()).collect();
        writeln!(f, "stage channels   [{}]", ch.join(", "))?;
        for (name, p) in &self.params_by_stage {
            writeln!(f, "  {name:<14} {p:>10}")?;
        }
        writeln!(f, "params           {:>10}", self.total_params)?;
        writeln!(f, "GFLOPs           {:>10}", crate::fmt6(self.gflops()))
    }
}

struct Walker {
    n: usize,
    layers: Vec<LayerCost>,
}

impl Walker {
    /// Records a convolution applied to an `hw` input; returns its output size.
    fn conv(&mut self, name: String, spec: &ConvSpec, hw: (usize, usize)) -> (usize, usize) {
        let (oh, ow) = spec.output_hw(hw.0, hw.1).unwrap_or((0, 0));
        let out = (self.n * spec.out_channels * oh * ow) as u64;
        let mut ew = 0;
        if spec.bias {
            ew += out;
        }
        if spec.bn_relu {
            ew += 3 * out;
        }
        self.layers.push(LayerCost {
            name,
            params: spec.param_count(),
            macs: out * spec.macs_per_output() as u64,
            elementwise: ew,
        });
        (oh, ow)
    }

    fn elementwise(&mut self, name: String, count: usize) {
        self.layers.push(LayerCost {
            name,
            params: 0,
            macs: 0,
            elementwise: count as u64,
        });
    }
}

fn block_names(prefix: &str, specs: &[ConvSpec]) -> Vec<String> {
    match specs.len() {
        1 => vec![prefix.to_string()],
        _ => vec![format!("{prefix}.dw"), format!("{prefix}.pw")],
    }
}

/// Full cost breakdown for an `n x C x h x w` input.
pub fn cost_report(arch: &Architecture, n: usize, h: usize, w: usize, options: CostOptions) -> CostReport {
    let res = arch.stage_resolutions(h, w);
    let mut walk = Walker {
        n,
        layers: Vec::new(),
    };
    let channels = arch.stage_channels();
    for (si, stage) in arch.stages.iter().enumerate() {
        if si > 0 {
            let (ph, pw) = res[si - 1];
            walk.elementwise(format!("{}.pool", stage.name), n * channels[si - 1] * ph * pw);
        }
        for (gi, g) in stage.glances.iter().enumerate() {
            let mut hw = if si == 0 && gi == 0 { (h, w) } else { res[si] };
            let base = format!("{}.g{}", stage.name, gi + 1);
            let conv1 = g.conv1_specs();
            let tail = g.tail_specs();
            let parts = [("conv1", &conv1), ("conv2", &tail), ("conv3", &tail)];
            for (part, specs) in parts {
                for (name, spec) in block_names(&format!("{base}.{part}"), specs).into_iter().zip(specs.iter()) {
                    hw = walk.conv(name, spec, hw);
                }
            }
        }
    }
    let (fh, fw) = res[0];
    for (i, spec) in arch.projections.iter().enumerate() {
        walk.conv(format!("decoder.proj{}", i + 1), spec, res[i]);
        if res[i] != res[0] {
            walk.elementwise(format!("decoder.resize{}", i + 1), n * spec.out_channels * fh * fw);
        }
    }
    walk.conv("decoder.fusion".into(), &arch.fusion, (fh, fw));
    if (fh, fw) != (h, w) {
        walk.elementwise("upsample".into(), n * arch.fusion.out_channels * h * w);
    }

    let mut params_by_stage: Vec<(String, usize)> = arch
        .stages
        .iter()
        .map(|s| (s.name.clone(), s.param_count()))
        .collect();
    params_by_stage.push(("decoder".into(), arch.decoder_params()));
    let total_flops = walk.layers.iter().map(|l| l.flops(options)).sum();
    CostReport {
        variant: arch.spec().name(),
        input: (n, h, w),
        options,
        stage_channels: channels,
        total_params: walk.layers.iter().map(|l| l.params).sum(),
        params_by_stage,
        total_flops,
        layers: walk.layers,
    }
}

pub fn count_params(arch: &Architecture) -> usize {
    arch.param_count()
}

pub fn count_flops(arch: &Architecture, n: usize, h: usize, w: usize, options: CostOptions) -> u64 {
    cost_report(arch, n, h, w, options).total_flops
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    Params,
    Gflops,
}

/// One target cost figure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceRow {
    pub source: &'static str,
    pub variant: &'static str,
    pub num_classes: usize,
    pub input: (usize, usize),
    pub quantity: Quantity,
    /// Params are absolute counts; FLOPs are in G.
    pub value: f64,
    /// Half of the last printed digit, in the same unit as `value`.
    pub half_ulp: f64,
}

const CITY: (usize, usize) = (512, 1024);
const CAMVID: (usize, usize) = (368, 480);

const fn row(
    source: &'static str,
    variant: &'static str,
    num_classes: usize,
    input: (usize, usize),
    quantity: Quantity,
    value: f64,
    half_ulp: f64,
) -> ReferenceRow {
    ReferenceRow {
        source,
        variant,
        num_classes,
        input,
        quantity,
        value,
        half_ulp,
    }
}

use Quantity::{Gflops as G, Params as P};

/// Target parameter and FLOP figures for the shipped variants.
pub const REFERENCE: &[ReferenceRow] = &[
    // Parameter counts to the nearest thousand.
    row("exact", "pdfnet3", 20, CITY, P, 164e3, 0.5e3),
    row("exact", "pdfnet6", 20, CITY, P, 405e3, 0.5e3),
    row("exact", "pdfnet9", 20, CITY, P, 758e3, 0.5e3),
    row("exact", "pdfnet12", 20, CITY, P, 1.2e6, 0.05e6),
    // Rounded figures, 20 classes, 512x1024.
    row("cityscapes", "pdfnet3", 20, CITY, P, 0.2e6, 0.05e6),
    row("cityscapes", "pdfnet6", 20, CITY, P, 0.4e6, 0.05e6),
    row("cityscapes", "pdfnet9", 20, CITY, P, 0.8e6, 0.05e6),
    row("cityscapes", "pdfnet12", 20, CITY, P, 1.2e6, 0.05e6),
    row("cityscapes", "pdfnet3-2s", 20, CITY, P, 0.1e6, 0.05e6),
    row("cityscapes", "pdfnet6-2s", 20, CITY, P, 0.3e6, 0.05e6),
    row("cityscapes", "pdfnet9-2s", 20, CITY, P, 0.7e6, 0.05e6),
    row("cityscapes", "pdfnet12-2s", 20, CITY, P, 1.1e6, 0.05e6),
    row("cityscapes", "pdfnet3", 20, CITY, G, 8.0, 0.05),
    row("cityscapes", "pdfnet6", 20, CITY, G, 10.3, 0.05),
    row("cityscapes", "pdfnet9", 20, CITY, G, 13.5, 0.05),
    row("cityscapes", "pdfnet12", 20, CITY, G, 17.5, 0.05),
    row("cityscapes", "pdfnet3-2s", 20, CITY, G, 2.7, 0.05),
    row("cityscapes", "pdfnet6-2s", 20, CITY, G, 4.5, 0.05),
    row("cityscapes", "pdfnet9-2s", 20, CITY, G, 7.5, 0.05),
    row("cityscapes", "pdfnet12-2s", 20, CITY, G, 11.1, 0.05),
    // DF family, 512x1024.
    row("df", "dfnet3", 20, CITY, P, 0.9e6, 0.05e6),
    row("df", "dfnet6", 20, CITY, P, 2.3e6, 0.05e6),
    row("df", "dfnet9", 20, CITY, P, 4.6e6, 0.05e6),
    row("df", "dfnet12", 20, CITY, P, 7.6e6, 0.05e6),
    row("df", "dfnet3", 20, CITY, G, 28.1, 0.05),
    row("df", "dfnet6", 20, CITY, G, 42.1, 0.05),
    row("df", "dfnet9", 20, CITY, G, 61.7, 0.05),
    row("df", "dfnet12", 20, CITY, G, 86.9, 0.05),
    // CamVid, 12 classes, 368x480.
    row("camvid", "pdfnet3", 12, CAMVID, P, 0.2e6, 0.05e6),
    row("camvid", "pdfnet6", 12, CAMVID, P, 0.4e6, 0.05e6),
    row("camvid", "pdfnet9", 12, CAMVID, P, 0.7e6, 0.05e6),
    row("camvid", "pdfnet12", 12, CAMVID, P, 1.2e6, 0.05e6),
    row("camvid", "pdfnet3-2s", 12, CAMVID, P, 0.1e6, 0.05e6),
    row("camvid", "pdfnet6-2s", 12, CAMVID, P, 0.3e6, 0.05e6),
    row("camvid", "pdfnet9-2s", 12, CAMVID, P, 0.6e6, 0.05e6),
    row("camvid", "pdfnet12-2s", 12, CAMVID, P, 1.1e6, 0.05e6),
    row("camvid", "pdfnet3", 12, CAMVID, G, 2.3, 0.05),
    row("camvid", "pdfnet6", 12, CAMVID, G, 3.0, 0.05),
    row("camvid", "pdfnet9", 12, CAMVID, G, 4.1, 0.05),
    row("camvid", "pdfnet12", 12, CAMVID, G, 5.4, 0.05),
    row("camvid", "pdfnet3-2s", 12, CAMVID, G, 0.8, 0.05),
    row("camvid", "pdfnet6-2s", 12, CAMVID, G, 1.4, 0.05),
    row("camvid", "pdfnet9-2s", 12, CAMVID, G, 2.4, 0.05),
    row("camvid", "pdfnet12-2s", 12, CAMVID, G, 3.6, 0.05),
];

/// A candidate setting of every calibrated choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Calibration {
    pub arch: ArchOptions,
    pub cost: CostOptions,
}

impl Calibration {
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = ModelConfig {
            spec: VariantSpec::parse_name("pdfnet3").expect("known"),
            options: self.arch,
        }
        .to_kv();
        for k in ["family", "depth", "two_stride", "num_classes", "in_channels"] {
            kv.remove(k);
        }
        self.cost.write_kv(&mut kv);
        kv
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowResult {
    pub row: ReferenceRow,
    pub ours: f64,
    /// `|ours - ref| / ref`.
    pub rel_error: f64,
    /// Error left after allowing for the printed precision.
    pub excess: f64,
}

impl RowResult {
    /// Our value agrees with the target at its printed precision.
    pub fn rounds_to_reference(&self) -> bool {
        self.excess == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub best: Calibration,
    pub rows: Vec<RowResult>,
    /// Maximum excess of the best candidate.
    pub score: f64,
    pub candidates: usize,
}

impl CalibrationReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_error).fold(0.0, f64::max)
    }

    /// Every row within 25% of its reference.
    pub fn succeeded(&self) -> bool {
        self.max_rel_error() <= 0.25
    }
}

impl fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "searched {} candidates", self.candidates)?;
        write!(f, "{}", self.best.to_kv())?;
        writeln!(
            f,
            "{:<11} {:<12} {:>6} {:>14} {:>14} {:>10}",
            "source", "variant", "kind", "reference", "ours", "rel.err"
        )?;
        for r in &self.rows {
            let (kind, refv, ours) = match r.row.quantity {
                Quantity::Params => ("params", crate::fmt6(r.row.value), r.ours.to_string()),
                Quantity::Gflops => ("GFLOPs", crate::fmt6(r.row.value), crate::fmt6(r.ours)),
            };
            writeln!(
                f,
                "{:<11} {:<12} {:>6} {:>14} {:>14} {:>10}{}",
                r.row.source,
                r.row.variant,
                kind,
                refv,
                ours,
                crate::fmt6(r.rel_error),
                if r.rounds_to_reference() { "" } else { "  *" }
            )?;
        }
        if !self.succeeded() {
            writeln!(f, "calibration failed: some row is off by more than 25%")?;
        }
        Ok(())
    }
}

/// Scores one candidate against the given rows.
pub fn evaluate(cal: Calibration, rows: &[ReferenceRow]) -> Result<Vec<RowResult>> {
    rows.iter()
        .map(|row| {
            let mut spec = VariantSpec::parse_name(row.variant)?;
            spec.num_classes = row.num_classes;
            let arch = Architecture::new(ModelConfig {
                spec,
                options: cal.arch,
            })?;
            let ours = match row.quantity {
                Quantity::Params => arch.param_count() as f64,
                Quantity::Gflops => count_flops(&arch, 1, row.input.0, row.input.1, cal.cost) as f64 / 1e9,
            };
            let diff = (ours - row.value).abs();
            Ok(RowResult {
                row: *row,
                ours,
                rel_error: diff / row.value,
                excess: (diff - row.half_ulp).max(0.0) / row.value,
            })
        })
        .collect()
}

/// Every combination of the calibrated choices.
pub fn candidates() -> Vec<Calibration> {
    let mut out = Vec::new();
    for sep_bn in [SepBn::Both, SepBn::PointwiseOnly] {
        for tail in [GlanceTail::Depthwise, GlanceTail::Separable] {
            for stem_2s in [TwoStrideStem::DropFirstStage, TwoStrideStem::StridedStem] {
                for decoder_width in [DecoderWidth::Classes, DecoderWidth::Fixed(20)] {
                    for convention in [Convention::Mac, Convention::MulAdd2] {
                        for elementwise in [true, false] {
                            out.push(Calibration {
                                arch: ArchOptions {
                                    sep_bn,
                                    tail,
                                    stem_2s,
                                    decoder_width,
                                    ..ArchOptions::default()
                                },
                                cost: CostOptions {
                                    convention,
                                    elementwise,
                                },
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Grid search minimizing the worst beyond-precision error over `rows`,
/// ties broken by the summed relative error.
pub fn calibrate(rows: &[ReferenceRow]) -> Result<CalibrationReport> {
    let all = candidates();
    let mut best: Option<(f64, f64, Calibration, Vec<RowResult>)> = None;
    for cal in &all {
        let res = evaluate(*cal, rows)?;
        let score = res.iter().map(|r| r.excess).fold(0.0, f64::max);
        let total: f64 = res.iter().map(|r| r.rel_error).sum();
        let better = match &best {
            None => true,
            Some((s, t, _, _)) => score < *s || (score == *s && total < *t),
        };
        if better {
            best = Some((score, total, *cal, res));
        }
    }
    let (score, _, best, rows) = best.ok_or_else(|| Error::Config("no reference rows".into()))?;
    Ok(CalibrationReport {
        best,
        rows,
        score,
        candidates: all.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(name: &str) -> Architecture {
        Architecture::new(ModelConfig::parse_name(name).unwrap()).unwrap()
    }

    #[test]
    fn fusion_alone() {
        let spec = ConvSpec::new(100, 20, 1).output_head();
        assert_eq!(spec.param_count(), 2020);
        assert_eq!(arch("pdfnet3").fusion.param_count(), 2020);
    }

    #[test]
    fn single_mac() {
        let mut w = Walker {
            n: 1,
            layers: Vec::new(),
        };
        w.conv("c".into(), &ConvSpec::new(1, 1, 1).with_bn_relu(false), (1, 1));
        assert_eq!(w.layers[0].flops(CostOptions { convention: Convention::Mac, elementwise: true }), 1);
        assert_eq!(w.layers[0].flops(CostOptions { convention: Convention::MulAdd2, elementwise: false }), 2);
    }

    #[test]
    fn totals_are_sums_of_parts() {
        for v in VariantSpec::all() {
            let a = Architecture::new(ModelConfig::new(v)).unwrap();
            let r = cost_report(&a, 1, 64, 128, CostOptions::default());
            assert_eq!(r.total_params, a.param_count());
            assert_eq!(r.params_by_stage.iter().map(|p| p.1).sum::<usize>(), r.total_params);
            assert_eq!(r.layers.iter().map(|l| l.flops(r.options)).sum::<u64>(), r.total_flops);
            assert_eq!(r, cost_report(&a, 1, 64, 128, CostOptions::default()));
        }
    }

    #[test]
    fn flops_scale_with_batch() {
        let a = arch("pdfnet6-2s");
        let o = CostOptions::default();
        assert_eq!(count_flops(&a, 3, 64, 128, o), 3 * count_flops(&a, 1, 64, 128, o));
    }

    #[test]
    fn calibrated_values() {
        let o = CostOptions::default();
        let p: Vec<usize> = ["pdfnet3", "pdfnet6", "pdfnet9", "pdfnet12"]
            .iter()
            .map(|n| arch(n).param_count())
            .collect();
        assert_eq!(p, vec![164_652, 405_996, 758_796, 1_223_052]);
        let g = count_flops(&arch("pdfnet3"), 1, 512, 1024, o) as f64 / 1e9;
        assert!((g - 8.0).abs() < 0.05, "{g}");
        let g = count_flops(&arch("pdfnet3-2s"), 1, 512, 1024, o) as f64 / 1e9;
        assert!((g - 2.7).abs() < 0.05, "{g}");
    }

    #[test]
    fn calibration_kv_round_trips() {
        for cal in candidates() {
            let kv = KvConfig::parse(&cal.to_kv().to_string()).unwrap();
            let back = Calibration {
                arch: ModelConfig::from_kv(&kv).unwrap().options,
                cost: CostOptions::from_kv(&kv).unwrap(),
            };
            assert_eq!(back, cal);
        }
    }

    #[test]
    fn grid_picks_defaults() {
        let r = calibrate(REFERENCE).unwrap();
        assert_eq!(r.candidates, 64);
        assert_eq!(
            r.best,
            Calibration {
                arch: ArchOptions::default(),
                cost: CostOptions::default()
            }
        );
        assert!(r.succeeded());
    }
}
