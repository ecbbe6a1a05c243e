#![no_main]

use libfuzzer_sys::fuzz_target;
use nodeprint::graph::{parse_graph, LoadOptions};

fuzz_target!(|data: &[u8]| {
    for symmetrize in [false, true] {
        if let Ok(g) = parse_graph(data, LoadOptions { symmetrize }) {
            let _ = g.canonical_hash();
        }
    }
});
