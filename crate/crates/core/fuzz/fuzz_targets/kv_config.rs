#![no_main]

use libfuzzer_sys::fuzz_target;
use pdfnet::config::KvConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(kv) = KvConfig::parse(text) {
            assert_eq!(KvConfig::parse(&kv.to_string()).unwrap(), kv);
        }
    }
});
