//! Replays the fuzz seed corpora through the same invariants the fuzz
//! targets assert, so the seeds stay meaningful without a nightly toolchain.

use std::path::{Path, PathBuf};

use pdfnet::checkpoint;
use pdfnet::config::KvConfig;
use pdfnet::dataio::Manifest;
use pdfnet::pnm;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn pnm_seeds() {
    for (name, bytes) in seeds("pnm") {
        match pnm::parse(&bytes) {
            Ok(img) => {
                assert!(!name.starts_with("bad"), "{name} parsed");
                assert_eq!(pnm::parse(&img.encode()).unwrap(), img);
            }
            Err(_) => assert!(name.starts_with("bad"), "{name} rejected"),
        }
    }
}

#[test]
fn manifest_seeds() {
    for (name, bytes) in seeds("manifest") {
        let text = std::str::from_utf8(&bytes).unwrap();
        match Manifest::parse(text, Path::new("/base")) {
            Ok(m) => {
                assert!(!m.entries.is_empty(), "{name}");
                assert!(m.entries.iter().all(|(i, l)| i.is_absolute() && l.is_absolute()));
            }
            Err(_) => assert_eq!(name, "missing_tab.tsv"),
        }
    }
}

#[test]
fn kv_config_seeds() {
    for (name, bytes) in seeds("kv_config") {
        let text = std::str::from_utf8(&bytes).unwrap();
        match KvConfig::parse(text) {
            Ok(kv) => assert_eq!(KvConfig::parse(&kv.to_string()).unwrap(), kv, "{name}"),
            Err(_) => assert!(["duplicate.conf", "no_equals.conf"].contains(&name.as_str()), "{name} rejected"),
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint") {
        let ok = match name.as_str() {
            "tiny_f64" => checkpoint::decode::<f64>(&bytes).is_ok(),
            _ => match checkpoint::decode::<f32>(&bytes) {
                Ok((meta, store)) => {
                    assert_eq!(checkpoint::encode(&store, &meta), bytes, "{name}");
                    true
                }
                Err(_) => false,
            },
        };
        assert_eq!(ok, name != "truncated", "{name}");
    }
}
