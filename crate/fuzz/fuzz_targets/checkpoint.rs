#![no_main]

use libfuzzer_sys::fuzz_target;
use nodeprint::gcn::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode(data) {
        assert_eq!(encode(&m), data);
    }
});
