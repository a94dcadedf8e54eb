#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = tripcc::io::decode_packed(data) {
        let mut out = Vec::new();
        tripcc::io::write_packed(&mut out, &r).unwrap();
        let back = tripcc::io::decode_packed(&out).unwrap();
        assert!(back.bitwise_eq(&r));
    }
});
