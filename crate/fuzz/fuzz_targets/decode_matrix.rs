#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = tripcc::io::decode_matrix(data) {
        let mut out = Vec::new();
        tripcc::io::write_matrix(&mut out, &d).unwrap();
        assert_eq!(out, data);
    }
});
