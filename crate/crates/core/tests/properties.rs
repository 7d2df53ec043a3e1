use pdfnet::checkpoint;
use pdfnet::config::KvConfig;
use pdfnet::dataio::{normalize, IMAGENET_MEAN, IMAGENET_STD};
use pdfnet::metrics::ConfusionMatrix;
use pdfnet::pnm::{self, Pnm};
use pdfnet::tensor::{Shape, Tensor};
use pdfnet::train::Plateau;
use proptest::prelude::*;

fn image() -> impl Strategy<Value = Pnm> {
    (1usize..12, 1usize..12, prop::bool::ANY).prop_flat_map(|(w, h, rgb)| {
        let c = if rgb { 3 } else { 1 };
        prop::collection::vec(any::<u8>(), w * h * c).prop_map(move |data| {
            if rgb {
                Pnm::rgb(w, h, data)
            } else {
                Pnm::gray(w, h, data)
            }
        })
    })
}

proptest! {
    #[test]
    fn pnm_round_trips(img in image()) {
        prop_assert_eq!(pnm::parse(&img.encode()).unwrap(), img);
    }

    #[test]
    fn pnm_parse_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = pnm::parse(&bytes);
    }

    #[test]
    fn kv_round_trips(pairs in prop::collection::btree_map("[a-z_][a-z0-9_]{0,8}", "[A-Za-z0-9 ._/-]{0,12}", 0..8)) {
        let mut kv = KvConfig::new();
        for (k, v) in &pairs {
            kv.set(k.clone(), v.trim());
        }
        prop_assert_eq!(KvConfig::parse(&kv.to_string()).unwrap(), kv);
    }

    #[test]
    fn kv_parse_never_panics(text in "\\PC{0,80}") {
        let _ = KvConfig::parse(&text);
    }

    #[test]
    fn checkpoint_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        let _ = checkpoint::decode::<f32>(&bytes);
    }

    #[test]
    fn confusion_merge_is_concatenation(
        a in prop::collection::vec((0u8..4, 0u8..4), 0..40),
        b in prop::collection::vec((0u8..4, 0u8..4), 0..40),
    ) {
        let split = |v: &[(u8, u8)]| -> (Vec<u8>, Vec<u8>) { v.iter().copied().unzip() };
        let (pa, ta) = split(&a);
        let (pb, tb) = split(&b);
        let mut left = ConfusionMatrix::new(4);
        left.accumulate(&pa, &ta).unwrap();
        let mut right = ConfusionMatrix::new(4);
        right.accumulate(&pb, &tb).unwrap();
        left.merge(&right).unwrap();
        let mut whole = ConfusionMatrix::new(4);
        whole.accumulate(&[pa, pb].concat(), &[ta, tb].concat()).unwrap();
        prop_assert_eq!(left, whole);
    }

    #[test]
    fn normalize_is_affine(a in prop::collection::vec(0f32..1.0, 12), b in prop::collection::vec(0f32..1.0, 12)) {
        let shape = Shape::new(1, 3, 2, 2);
        let (ta, tb) = (Tensor::from_vec(shape, a.clone()).unwrap(), Tensor::from_vec(shape, b.clone()).unwrap());
        let (na, nb) = (normalize(&ta, IMAGENET_MEAN, IMAGENET_STD), normalize(&tb, IMAGENET_MEAN, IMAGENET_STD));
        for i in 0..12 {
            let want = (a[i] - b[i]) / IMAGENET_STD[i / 4];
            prop_assert!((na.data()[i] - nb.data()[i] - want).abs() < 1e-5);
        }
    }

    #[test]
    fn scheduler_is_a_function_of_the_metrics(metrics in prop::collection::vec(0f64..10.0, 0..80)) {
        let run = || {
            let mut s = Plateau::new(0.1, 0.5, 3, 1e-4);
            metrics.iter().map(|&m| s.step(m).to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
