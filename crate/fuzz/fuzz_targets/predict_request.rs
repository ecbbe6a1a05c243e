#![no_main]

use std::collections::BTreeMap;
use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use nodeprint::graph::{Features, Graph};
use nodeprint::serving::{Attacker, Service, ServingConfig, ServingMode};
use nodeprint::{Model, Params};

fn services() -> &'static [Service; 2] {
    static S: OnceLock<[Service; 2]> = OnceLock::new();
    S.get_or_init(|| {
        let mut p = Params::zeros(2, 3, 2);
        p.w1 = vec![0.5, -0.3, 0.8, 0.1, 0.7, -0.4];
        p.w2 = vec![0.3, -0.2, 0.5, -0.6, 0.4, 0.1];
        let model = Model::from_params(&p, 0);
        let graph = Graph::new(
            3,
            2,
            &[(0, 1), (1, 2)],
            Features::Dense { dim: 2, values: vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0] },
            vec![0, 1, 0],
            BTreeMap::new(),
        )
        .expect("static graph is valid");
        let make = |mode, graph| {
            Service::new(ServingConfig {
                mode,
                model: model.clone(),
                graph,
                attacker: Attacker::None,
                expose_model_hash: true,
            })
            .expect("static service is valid")
        };
        [make(ServingMode::Transductive, Some(graph)), make(ServingMode::Inductive, None)]
    })
}

fuzz_target!(|data: &[u8]| {
    for s in services() {
        let r = s.handle("POST", "/predict", data);
        assert!(matches!(r.status, 200 | 400));
    }
});
