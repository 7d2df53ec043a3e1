#![no_main]

use libfuzzer_sys::fuzz_target;
use pdfnet::pnm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = pnm::parse(data) {
        assert_eq!(img.data.len(), img.width * img.height * img.channels);
        // Anything accepted must survive a re-encode.
        assert_eq!(pnm::parse(&img.encode()).unwrap(), img);
    }
});
