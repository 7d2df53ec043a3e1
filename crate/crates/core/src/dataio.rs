//! Segmentation samples: PPM/PGM ingestion, resizing, normalization,
//! manifests and seeded splits.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{io_at, Error, Result};
use crate::pnm::{self, Pnm};
use crate::tensor::kernels::bilinear_resize;
use crate::tensor::{Shape, Tensor};

/// Label value excluded from loss and metrics.
pub const IGNORE: u8 = 255;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// One image with its per-pixel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    /// `1 x 3 x H x W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `H * W` row-major class indices or [`IGNORE`].
    pub labels: Vec<u8>,
}

impl SegSample {
    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let s = self.image.shape();
        if s.n != 1 || s.c != 3 || self.labels.len() != s.plane() {
            return Err(Error::Validation(format!(
                "image {s} does not align with {} labels",
                self.labels.len()
            )));
        }
        check_labels(&self.labels, num_classes)
    }

    /// 8-bit image and label map at native resolution.
    pub fn to_pnm(&self) -> (Pnm, Pnm) {
        let (h, w) = (self.height(), self.width());
        let mut rgb = Vec::with_capacity(h * w * 3);
        for i in 0..h * w {
            for c in 0..3 {
                let v = self.image.data()[c * h * w + i];
                rgb.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        (Pnm::rgb(w, h, rgb), Pnm::gray(w, h, self.labels.clone()))
    }
}

pub fn check_labels(labels: &[u8], num_classes: usize) -> Result<()> {
    match labels
        .iter()
        .position(|&l| l != IGNORE && l as usize >= num_classes)
    {
        Some(i) => Err(Error::Validation(format!(
            "label {} at pixel {i} is outside 0..{num_classes} and not {IGNORE}",
            labels[i]
        ))),
        None => Ok(()),
    }
}

/// RGB raster to a `1 x 3 x H x W` tensor in `[0, 1]`.
pub fn image_tensor(p: &Pnm) -> Result<Tensor<f32>> {
    if p.channels != 3 {
        return Err(Error::Validation("expected an RGB image".into()));
    }
    let (h, w) = (p.height, p.width);
    let maxval = p.maxval as f32;
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in p.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / maxval;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

/// Nearest-neighbour resize with half-pixel centres. Labels are never
/// interpolated.
pub fn resize_labels(labels: &[u8], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<u8> {
    let src = |dst: usize, inp: usize, out: usize| ((2 * dst + 1) * inp / (2 * out)).min(inp - 1);
    let rows: Vec<usize> = (0..out_h).map(|y| src(y, h, out_h)).collect();
    let cols: Vec<usize> = (0..out_w).map(|x| src(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &r in &rows {
        for &c in &cols {
            out.push(labels[r * w + c]);
        }
    }
    out
}

/// Loads an image/label pair, resizing both to `target` when given.
pub fn load_sample(
    image_path: &Path,
    label_path: &Path,
    target: Option<(usize, usize)>,
    num_classes: usize,
) -> Result<SegSample> {
    let with_path = |e: Error, p: &Path| match e {
        Error::Parse { offset, msg, .. } => Error::Validation(format!(
            "{}: parse error at byte {offset}: {msg}",
            p.display()
        )),
        e => e,
    };
    let img = pnm::parse_ppm(&std::fs::read(image_path).map_err(io_at(image_path))?).map_err(|e| with_path(e, image_path))?;
    let lab = pnm::parse_pgm(&std::fs::read(label_path).map_err(io_at(label_path))?).map_err(|e| with_path(e, label_path))?;
    sample_from_pnm(&img, &lab, target, num_classes)
        .map_err(|e| match e {
            Error::Validation(m) => Error::Validation(format!("{}: {m}", label_path.display())),
            e => e,
        })
}

/// Loads an RGB image alone, resized to `target` when given.
pub fn load_image(path: &Path, target: Option<(usize, usize)>) -> Result<Tensor<f32>> {
    let img = pnm::parse_ppm(&std::fs::read(path).map_err(io_at(path))?).map_err(|e| match e {
        Error::Parse { offset, msg, .. } => {
            Error::Validation(format!("{}: parse error at byte {offset}: {msg}", path.display()))
        }
        e => e,
    })?;
    let image = image_tensor(&img)?;
    match target {
        Some((th, tw)) if (th, tw) != (img.height, img.width) => bilinear_resize(&image, th, tw),
        _ => Ok(image),
    }
}

/// Writes samples as `NNNN.ppm` / `NNNN.pgm` pairs under `dir` together with
/// a `manifest.tsv` listing them. Returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[SegSample]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let (img, lab) = s.to_pnm();
        let (ip, lp) = (format!("{i:04}.ppm"), format!("{i:04}.pgm"));
        let ipath = dir.join(&ip);
        std::fs::write(&ipath, img.encode()).map_err(io_at(&ipath))?;
        let lpath = dir.join(&lp);
        std::fs::write(&lpath, lab.encode()).map_err(io_at(&lpath))?;
        manifest.push_str(&format!("{ip}\t{lp}\n"));
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).map_err(io_at(&path))?;
    Ok(path)
}

pub fn sample_from_pnm(
    img: &Pnm,
    lab: &Pnm,
    target: Option<(usize, usize)>,
    num_classes: usize,
) -> Result<SegSample> {
    if (img.width, img.height) != (lab.width, lab.height) {
        return Err(Error::Validation(format!(
            "image is {}x{} but labels are {}x{}",
            img.height, img.width, lab.height, lab.width
        )));
    }
    check_labels(&lab.data, num_classes)?;
    let mut image = image_tensor(img)?;
    let mut labels = lab.data.clone();
    if let Some((th, tw)) = target {
        if (th, tw) != (img.height, img.width) {
            image = bilinear_resize(&image, th, tw)?;
            labels = resize_labels(&labels, img.height, img.width, th, tw);
        }
    }
    Ok(SegSample { image, labels })
}

/// Per-channel `(x - mean) / std`.
pub fn normalize(img: &Tensor<f32>, mean: [f32; 3], std: [f32; 3]) -> Tensor<f32> {
    let s = img.shape();
    let mut out = img.clone();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % s.c;
        for v in chunk {
            *v = (*v - mean[c % 3]) / std[c % 3];
        }
    }
    out
}

/// Normalized images stacked into one batch, and the concatenated labels.
pub fn make_batch(samples: &[&SegSample]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let imgs: Vec<Tensor<f32>> = samples
        .iter()
        .map(|s| normalize(&s.image, IMAGENET_MEAN, IMAGENET_STD))
        .collect();
    let refs: Vec<&Tensor<f32>> = imgs.iter().collect();
    let x = Tensor::stack_batch(&refs)?;
    let labels = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
    Ok((x, labels))
}

/// Ordered `(image, label)` path pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, PathBuf)>,
}

impl Manifest {
    /// One `image<TAB>label` pair per line; `#` lines are comments. Relative
    /// paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let start = offset;
            offset += raw.len();
            let line = raw.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(img), Some(lab), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(
                    "manifest",
                    start,
                    "expected `image<TAB>label`",
                ));
            };
            if img.is_empty() || lab.is_empty() {
                return Err(Error::parse("manifest", start, "empty path"));
            }
            entries.push((base.join(img), base.join(lab)));
        }
        Ok(Manifest { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads every sample; output order follows the manifest.
    pub fn load_samples(&self, target: Option<(usize, usize)>, num_classes: usize) -> Result<Vec<SegSample>> {
        self.entries
            .par_iter()
            .map(|(i, l)| load_sample(i, l, target, num_classes))
            .collect()
    }
}

/// Index partitions derived from one seeded shuffle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    pub order: Vec<usize>,
    pub parts: Vec<Vec<usize>>,
}

/// Shuffles `0..n` (Fisher-Yates) and cuts consecutive partitions of the
/// given sizes.
pub fn seeded_split(n: usize, sizes: &[usize], seed: u64) -> Result<SplitPlan> {
    let total: usize = sizes.iter().sum();
    if total > n {
        return Err(Error::Config(format!(
            "split sizes sum to {total} but only {n} samples exist"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &s in sizes {
        parts.push(order[at..at + s].to_vec());
        at += s;
    }
    Ok(SplitPlan { seed, order, parts })
}

/// Nested prefixes of `train`: the full list, then repeated floor halving,
/// `count` lists in all.
pub fn halving_subsets(train: &[usize], count: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(count);
    let mut size = train.len();
    for _ in 0..count {
        out.push(train[..size].to_vec());
        size /= 2;
    }
    out
}

/// Synthetic samples with learnable structure: a few axis-aligned
/// rectangles of random classes over a background class, each class with
/// its own colour plus mild noise.
pub fn synthetic_samples(count: usize, h: usize, w: usize, num_classes: usize, seed: u64) -> Vec<SegSample> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette: Vec<[f32; 3]> = (0..num_classes)
        .map(|_| [rng.gen(), rng.gen(), rng.gen()])
        .collect();
    (0..count)
        .map(|_| {
            let mut labels = vec![0u8; h * w];
            for _ in 0..4 {
                let class = rng.gen_range(0..num_classes) as u8;
                let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
                let (rh, rw) = (rng.gen_range(h / 8..=h / 2), rng.gen_range(w / 8..=w / 2));
                for y in y0..(y0 + rh).min(h) {
                    for x in x0..(x0 + rw).min(w) {
                        labels[y * w + x] = class;
                    }
                }
            }
            let mut data = vec![0.0f32; 3 * h * w];
            for (i, &l) in labels.iter().enumerate() {
                for c in 0..3 {
                    let noise: f32 = rng.gen_range(-0.05..0.05);
                    data[c * h * w + i] = (palette[l as usize][c] + noise).clamp(0.0, 1.0);
                }
            }
            SegSample {
                image: Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("sized"),
                labels,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_ppm_is_ones() {
        let p = Pnm::rgb(2, 2, vec![255; 12]);
        let t = image_tensor(&p).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 2));
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn nearest_label_upsampling_replicates_blocks() {
        let up = resize_labels(&[0, 1, 2, 3], 2, 2, 4, 4);
        assert_eq!(
            up,
            vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]
        );
        let same = resize_labels(&[5, 6, 7, 8, 9, 10], 2, 3, 2, 3);
        assert_eq!(same, vec![5, 6, 7, 8, 9, 10]);
        let down = resize_labels(&up, 4, 4, 2, 2);
        assert_eq!(down, vec![0, 1, 2, 3]);
    }

    #[test]
    fn normalization_constants() {
        let mean = Tensor::from_fn(Shape::new(1, 3, 1, 1), |c| IMAGENET_MEAN[c]);
        assert!(normalize(&mean, IMAGENET_MEAN, IMAGENET_STD).data().iter().all(|v| v.abs() < 1e-7));
        let one = Tensor::full(Shape::new(1, 3, 1, 1), 1.0f32);
        let n = normalize(&one, IMAGENET_MEAN, IMAGENET_STD);
        assert!((n.data()[0] - (1.0 - 0.485) / 0.229).abs() < 1e-6);
        assert!((n.data()[0] - 2.249).abs() < 1e-3);
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let img = Pnm::rgb(2, 1, vec![0; 6]);
        assert!(sample_from_pnm(&img, &Pnm::gray(2, 1, vec![0, 255]), None, 3).is_ok());
        let e = sample_from_pnm(&img, &Pnm::gray(2, 1, vec![0, 3]), None, 3).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
        assert!(sample_from_pnm(&img, &Pnm::gray(1, 2, vec![0, 0]), None, 3).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let m = Manifest::parse("# header\na.ppm\ta.pgm\n\n/abs/b.ppm\tb.pgm\r\n", Path::new("/data")).unwrap();
        assert_eq!(m.entries[0], (PathBuf::from("/data/a.ppm"), PathBuf::from("/data/a.pgm")));
        assert_eq!(m.entries[1].0, PathBuf::from("/abs/b.ppm"));
        let e = Manifest::parse("ok.ppm\tok.pgm\nno tab here\n", Path::new(".")).unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 14, .. }));
        assert!(Manifest::parse("a\tb\tc\n", Path::new(".")).is_err());
    }

    #[test]
    fn splits_are_disjoint_and_reproducible() {
        let a = seeded_split(100, &[70, 20, 10], 42).unwrap();
        assert_eq!(a, seeded_split(100, &[70, 20, 10], 42).unwrap());
        assert_ne!(a.order, seeded_split(100, &[70, 20, 10], 43).unwrap().order);
        let mut all: Vec<usize> = a.parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(matches!(seeded_split(10, &[6, 5], 1), Err(Error::Config(_))));
    }

    #[test]
    fn halving_chains() {
        let train: Vec<usize> = (0..2975).collect();
        let sizes: Vec<usize> = halving_subsets(&train, 6).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2975, 1487, 743, 371, 185, 92]);
        let sizes: Vec<usize> = halving_subsets(&train[..367], 3).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![367, 183, 91]);
        let subs = halving_subsets(&train, 6);
        for pair in subs.windows(2) {
            assert!(pair[0].starts_with(&pair[1]));
        }
    }

    #[test]
    fn pnm_round_trip_at_native_resolution() {
        let s = &synthetic_samples(1, 8, 12, 5, 3)[0];
        let (img, lab) = s.to_pnm();
        let back = sample_from_pnm(
            &pnm::parse(&img.encode()).unwrap(),
            &pnm::parse(&lab.encode()).unwrap(),
            None,
            5,
        )
        .unwrap();
        assert_eq!(back.labels, s.labels);
        let (img2, lab2) = back.to_pnm();
        assert_eq!((&img2, &lab2), (&img, &lab));
        let again = sample_from_pnm(&img2, &lab2, None, 5).unwrap();
        assert_eq!(again, back);
    }
}
