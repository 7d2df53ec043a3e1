#![no_main]

use libfuzzer_sys::fuzz_target;
use pdfnet::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok((meta, store)) = checkpoint::decode::<f32>(data) {
        let again = checkpoint::encode(&store, &meta);
        let (meta2, _) = checkpoint::decode::<f32>(&again).unwrap();
        assert_eq!(meta, meta2);
    }
    let _ = checkpoint::decode::<f64>(data);
});
