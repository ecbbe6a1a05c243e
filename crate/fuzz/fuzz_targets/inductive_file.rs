#![no_main]

use std::collections::BTreeMap;

use libfuzzer_sys::fuzz_target;
use nodeprint::fingerprint::{parse_fingerprint_file, FingerprintFile};
use nodeprint::graph::{Features, Graph};

fuzz_target!(|data: &[u8]| {
    let Ok(FingerprintFile::Inductive(file)) = parse_fingerprint_file(data) else {
        return;
    };
    let shadow = Graph::new(
        4,
        2,
        &[(0, 1), (1, 2), (2, 3)],
        Features::Dense { dim: 2, values: vec![0.0, 1.0, 1.0, 0.0, 0.5, 0.5, 1.0, 1.0] },
        vec![0, 1, 0, 1],
        BTreeMap::new(),
    )
    .expect("static shadow graph is valid");
    let mut file = file;
    file.base_graph_hash = shadow.canonical_hash();
    let _ = file.fingerprints(&shadow);
});
