//! Bundled demo models, embedded at compile time.

use crate::model::{Model, ModelError};

pub struct Demo {
    pub name: &'static str,
    pub summary: &'static str,
    pub json: &'static str,
    /// Cycles the demo is meant to run for.
    pub cycles: u64,
}

impl Demo {
    pub fn model(&self) -> Result<Model, ModelError> {
        Model::parse(self.json)
    }
}

pub const THREAT: Demo = Demo {
    name: "threat",
    summary: "an emotion shadow system interrupts a navigation goal when a bear appears",
    json: include_str!("../models/threat.json"),
    cycles: 200,
};

pub const QUERY: Demo = Demo {
    name: "query",
    summary: "central posts retrieval queries that a declarative shadow system answers from Middle Memory",
    json: include_str!("../models/query.json"),
    cycles: 200,
};

pub const NEXTWORD: Demo = Demo {
    name: "nextword",
    summary: "an n-gram predictor and a language shadow system feed each other through Middle Memory",
    json: include_str!("../models/nextword.json"),
    cycles: 200,
};

pub const COMPARISON: Demo = Demo {
    name: "comparison",
    summary: "three predictors at one emission per cycle, for comparing central load across modes",
    json: include_str!("../models/comparison.json"),
    cycles: 500,
};

pub const FORMATION: Demo = Demo {
    name: "formation",
    summary: "a burst of presentations forms a retrieval production that a scheduled reward makes permanent",
    json: include_str!("../models/formation.json"),
    cycles: 200,
};

pub const ALL: [Demo; 5] = [THREAT, QUERY, NEXTWORD, COMPARISON, FORMATION];

pub fn find(name: &str) -> Option<&'static Demo> {
    ALL.iter().find(|d| d.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_demo_validates() {
        for d in &ALL {
            let m = d.model().unwrap_or_else(|e| panic!("{}: {e}", d.name));
            assert_eq!(Model::parse(&m.to_json()).unwrap(), m, "{}", d.name);
        }
    }

    #[test]
    fn threat_shape() {
        let m = THREAT.model().unwrap();
        assert_eq!(m.shadow_systems.len(), 1);
        assert_eq!(m.shadow_systems[0].name.as_str(), "emotion");
        assert_eq!(m.central_productions.len(), 4);
    }
}
