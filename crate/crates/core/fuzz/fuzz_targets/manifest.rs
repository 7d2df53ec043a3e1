#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use pdfnet::dataio::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse(text, Path::new("/base")) {
            for (img, lab) in &m.entries {
                assert!(img.is_absolute() && lab.is_absolute());
            }
        }
    }
});
