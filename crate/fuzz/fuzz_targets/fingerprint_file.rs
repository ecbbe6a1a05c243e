#![no_main]

use libfuzzer_sys::fuzz_target;
use nodeprint::fingerprint::{parse_fingerprint_file, FingerprintFile};

fuzz_target!(|data: &[u8]| {
    if let Ok(FingerprintFile::Transductive(t)) = parse_fingerprint_file(data) {
        let _ = t.fingerprints();
    }
});
