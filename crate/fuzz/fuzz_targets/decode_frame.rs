#![no_main]

use libfuzzer_sys::fuzz_target;
use tripcc::protocol::{decode_frame, read_frame, write_frame};

fuzz_target!(|data: &[u8]| {
    if let Ok((frame, used)) = decode_frame(data) {
        let mut again = Vec::new();
        write_frame(&mut again, &frame).unwrap();
        assert!(used <= data.len());
        let (twice, n) = decode_frame(&again).unwrap();
        assert_eq!(n, again.len());
        let mut third = Vec::new();
        write_frame(&mut third, &twice).unwrap();
        assert_eq!(third, again);
    }
    let mut r = data;
    while let Ok(Some(_)) = read_frame(&mut r) {}
});
