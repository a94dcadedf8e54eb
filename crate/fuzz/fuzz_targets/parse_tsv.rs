#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = tripcc::io::parse_tsv(data) {
        assert_eq!(d.values().len(), d.n() * d.l());
        assert!(d.values().iter().all(|v| v.is_finite()));
    }
});
