//! Confusion-matrix scoring: per-class and category IoU, pixel accuracy.

use std::fmt;

use crate::dataio::IGNORE;
use crate::error::{Error, Result};

/// The 19 scored Cityscapes classes; index 19 is background.
pub const CITYSCAPES_CLASSES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// `counts[t * k + p]` = pixels of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Validation(format!("{} counts for {k} classes", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    /// Adds one pixel-aligned prediction. Pixels whose truth is [`IGNORE`]
    /// are skipped.
    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Validation(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let k = self.k;
        if let Some(i) = pred.iter().position(|&p| p as usize >= k) {
            return Err(Error::Validation(format!("prediction {} at pixel {i} is not a class", pred[i])));
        }
        if let Some(i) = truth.iter().position(|&t| t != IGNORE && t as usize >= k) {
            return Err(Error::Validation(format!("label {} at pixel {i} is not a class", truth[i])));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if t != IGNORE {
                self.counts[t as usize * k + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Validation("merging matrices of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t * self.k..(t + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, p)).sum()
    }

    /// `(TP, TP + FP + FN)` for class `c`.
    pub fn iou_parts(&self, c: usize) -> (u64, u64) {
        let tp = self.get(c, c);
        (tp, self.row_sum(c) + self.col_sum(c) - tp)
    }

    /// `None` when the class appears in neither truth nor prediction.
    pub fn class_iou(&self, c: usize) -> Option<f64> {
        let (tp, union) = self.iou_parts(c);
        (union > 0).then(|| tp as f64 / union as f64)
    }

    /// Mean over `scored` classes with a non-empty union.
    pub fn mean_iou(&self, scored: &[usize]) -> Option<f64> {
        let ious: Vec<f64> = scored.iter().filter_map(|&c| self.class_iou(c)).collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }

    pub fn pixel_accuracy(&self) -> Option<f64> {
        let total = self.total();
        let correct: u64 = (0..self.k).map(|c| self.get(c, c)).sum();
        (total > 0).then(|| correct as f64 / total as f64)
    }

    /// Sums rows and columns within each category. Classes outside the map
    /// land in one trailing bucket that is never scored.
    pub fn collapse(&self, map: &CategoryMap) -> Result<ConfusionMatrix> {
        if map.of_class.len() != self.k {
            return Err(Error::Config(format!(
                "category map covers {} classes, matrix has {}",
                map.of_class.len(),
                self.k
            )));
        }
        let m = map.names.len();
        let bucket = |c: usize| map.of_class[c].unwrap_or(m);
        let mut out = ConfusionMatrix::new(m + 1);
        for t in 0..self.k {
            for p in 0..self.k {
                out.counts[bucket(t) * (m + 1) + bucket(p)] += self.get(t, p);
            }
        }
        Ok(out)
    }
}

/// Class to category assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryMap {
    pub names: Vec<String>,
    /// Category of each class; `None` for unscored classes.
    pub of_class: Vec<Option<usize>>,
}

impl CategoryMap {
    pub fn identity(k: usize) -> Self {
        CategoryMap {
            names: (0..k).map(|c| c.to_string()).collect(),
            of_class: (0..k).map(Some).collect(),
        }
    }

    /// The seven Cityscapes categories over the 19 scored classes, with
    /// background (index 19) unmapped.
    pub fn cityscapes() -> Self {
        let names = ["flat", "construction", "object", "nature", "sky", "human", "vehicle"];
        let of = [0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 4, 5, 5, 6, 6, 6, 6, 6, 6];
        let mut of_class: Vec<Option<usize>> = of.iter().map(|&c| Some(c)).collect();
        of_class.push(None);
        CategoryMap {
            names: names.iter().map(|s| s.to_string()).collect(),
            of_class,
        }
    }

    /// `class = category` lines; `#` comments allowed. Unlisted classes are
    /// unscored.
    pub fn parse(text: &str, num_classes: usize) -> Result<Self> {
        let kv = crate::config::KvConfig::parse(text)?;
        let mut names: Vec<String> = Vec::new();
        let mut of_class = vec![None; num_classes];
        for (class, cat) in kv.entries() {
            let c: usize = class
                .parse()
                .map_err(|_| Error::Config(format!("category map key `{class}` is not a class index")))?;
            if c >= num_classes {
                return Err(Error::Config(format!("class {c} out of range in category map")));
            }
            let idx = match names.iter().position(|n| n == cat) {
                Some(i) => i,
                None => {
                    names.push(cat.clone());
                    names.len() - 1
                }
            };
            of_class[c] = Some(idx);
        }
        Ok(CategoryMap { names, of_class })
    }
}

/// Per-category IoU and their mean. Every class in `scored` must have a
/// category.
pub fn category_iou(
    cm: &ConfusionMatrix,
    map: &CategoryMap,
    scored: &[usize],
) -> Result<(Vec<Option<f64>>, Option<f64>)> {
    if let Some(&c) = scored.iter().find(|&&c| map.of_class.get(c).copied().flatten().is_none()) {
        return Err(Error::Config(format!("scored class {c} has no category")));
    }
    let collapsed = cm.collapse(map)?;
    let cats: Vec<usize> = (0..map.names.len()).collect();
    let per: Vec<Option<f64>> = cats.iter().map(|&c| collapsed.class_iou(c)).collect();
    Ok((per, collapsed.mean_iou(&cats)))
}

/// Classes averaged in the mean: all but `background`.
pub fn scored_classes(num_classes: usize, background: Option<usize>) -> Vec<usize> {
    (0..num_classes).filter(|&c| Some(c) != background).collect()
}

/// One table row: per-class IoU plus the average.
#[derive(Clone, Debug, PartialEq)]
pub struct IouTable {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>, Option<f64>)>,
}

impl IouTable {
    pub fn new(names: Vec<String>) -> Self {
        IouTable {
            names,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &str, cm: &ConfusionMatrix, scored: &[usize]) {
        let per = scored.iter().map(|&c| cm.class_iou(c)).collect();
        self.rows.push((label.to_string(), per, cm.mean_iou(scored)));
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: &Option<f64>| v.map(crate::fmt6).unwrap_or_default();
        let mut s = format!("network,{},average\n", self.names.join(","));
        for (label, per, avg) in &self.rows {
            let cells: Vec<String> = per.iter().map(cell).collect();
            s += &format!("{label},{},{}\n", cells.join(","), cell(avg));
        }
        s
    }
}

impl fmt::Display for IouTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: &Option<f64>| v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_else(|| "-".into());
        write!(f, "{:<12}", "network")?;
        for n in &self.names {
            let short: String = n.chars().take(7).collect();
            write!(f, " {short:>7}")?;
        }
        writeln!(f, " {:>7}", "average")?;
        for (label, per, avg) in &self.rows {
            write!(f, "{label:<12}")?;
            for v in per {
                write!(f, " {:>7}", cell(v))?;
            }
            writeln!(f, " {:>7}", cell(avg))?;
        }
        Ok(())
    }
}

/// Display names for `num_classes` classes.
pub fn class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes)
        .map(|c| match (num_classes, CITYSCAPES_CLASSES.get(c)) {
            (20, Some(n)) => n.to_string(),
            (20, None) => "background".into(),
            _ => format!("class{c}"),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulate_examples() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(1, 1), cm.get(0, 1)), (2, 2, 0));
        let before = cm.clone();
        cm.accumulate(&[0, 1], &[IGNORE, IGNORE]).unwrap();
        assert_eq!(cm, before);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(cm.counts, vec![1, 1, 1, 1]);
        assert!(cm.accumulate(&[2], &[0]).is_err());
        assert!(cm.accumulate(&[0], &[7]).is_err());
    }

    #[test]
    fn iou_examples() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 2, 4]).unwrap();
        assert_eq!(cm.class_iou(0), Some(0.5));
        assert!((cm.class_iou(1).unwrap() - 4.0 / 7.0).abs() < 1e-15);
        assert!((cm.mean_iou(&[0, 1]).unwrap() - (0.5 + 4.0 / 7.0) / 2.0).abs() < 1e-15);
        let mut disjoint = ConfusionMatrix::new(2);
        disjoint.accumulate(&[1, 1], &[0, 0]).unwrap();
        assert_eq!((disjoint.class_iou(0), disjoint.class_iou(1)), (Some(0.0), Some(0.0)));
        let mut perfect = ConfusionMatrix::new(3);
        perfect.accumulate(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(perfect.mean_iou(&[0, 1, 2]), Some(1.0));
    }

    #[test]
    fn empty_union_is_excluded() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(cm.class_iou(2), None);
        assert_eq!(cm.mean_iou(&[0, 1, 2]), Some(1.0));
        assert_eq!(ConfusionMatrix::new(2).mean_iou(&[0, 1]), None);
    }

    #[test]
    fn category_examples() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 2, 4]).unwrap();
        let one = CategoryMap {
            names: vec!["A".into()],
            of_class: vec![Some(0), Some(0)],
        };
        let (per, mean) = category_iou(&cm, &one, &[0, 1]).unwrap();
        assert_eq!(per, vec![Some(1.0)]);
        assert_eq!(mean, Some(1.0));
        let (per, _) = category_iou(&cm, &CategoryMap::identity(2), &[0, 1]).unwrap();
        assert_eq!(per, vec![cm.class_iou(0), cm.class_iou(1)]);
        let partial = CategoryMap {
            names: vec!["A".into()],
            of_class: vec![Some(0), None],
        };
        assert!(matches!(category_iou(&cm, &partial, &[0, 1]), Err(Error::Config(_))));
    }

    #[test]
    fn cityscapes_map_covers_scored_classes() {
        let map = CategoryMap::cityscapes();
        assert_eq!(map.names.len(), 7);
        assert_eq!(map.of_class.len(), 20);
        assert!(map.of_class[..19].iter().all(Option::is_some));
        assert_eq!(map.of_class[19], None);
        assert_eq!(scored_classes(20, Some(19)), (0..19).collect::<Vec<_>>());
        let parsed = CategoryMap::parse("0 = flat\n1 = flat\n2 = sky\n", 4).unwrap();
        assert_eq!(parsed.of_class, vec![Some(0), Some(0), Some(1), None]);
    }

    #[test]
    fn table_csv() {
        let mut t = IouTable::new(vec!["a".into(), "b".into()]);
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 2, 4]).unwrap();
        t.push("net", &cm, &[0, 1]);
        assert_eq!(t.to_csv(), "network,a,b,average\nnet,0.500000,0.571429,0.535714\n");
    }
}
