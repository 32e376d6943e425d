#![allow(dead_code)]

use std::sync::OnceLock;

use fdmu::diffusion::{pretrain, ConceptSet, DenoiserNet, NoiseSchedule, PretrainConfig};

pub struct Fixture {
    pub net: DenoiserNet,
    pub concepts: ConceptSet,
    pub schedule: NoiseSchedule,
}

/// A briefly trained denoiser shared by the tests of one binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let concepts = ConceptSet::four_corners();
        let schedule = NoiseSchedule::default_toy();
        let data = concepts.dataset(1000, 11).unwrap();
        let config = PretrainConfig {
            epochs: 25,
            seed: 11,
            ..PretrainConfig::default()
        };
        let (net, _) = pretrain(&data, concepts.len(), &schedule, &config).unwrap();
        Fixture { net, concepts, schedule }
    })
}
