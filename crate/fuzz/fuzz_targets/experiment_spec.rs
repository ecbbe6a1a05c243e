#![no_main]

use libfuzzer_sys::fuzz_target;
use nodeprint::harness::parse_experiment_spec;

fuzz_target!(|data: &[u8]| {
    let _ = parse_experiment_spec(data);
});
