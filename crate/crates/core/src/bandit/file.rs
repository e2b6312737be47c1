//! Instance files.
//!
//! ```text
//! M = 2
//! K = 3
//! means = [
//!   [0.89, 0.47, 0.01],
//!   [0.01, 0.47, 0.89],
//! ]
//!
//! [metadata]
//! seed = 7
//! ```
//!
//! The file is TOML with one agent per line of `means`. Means are written
//! with the shortest decimal that round-trips, so re-reading a written file
//! reproduces the instance bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generator::InstanceGenConfig;
use super::instance::LocalInstanceSet;
use crate::error::{Error, Result};

/// Optional provenance stored next to the means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<InstanceGenConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    #[serde(rename = "M")]
    agents: usize,
    #[serde(rename = "K")]
    arms: usize,
    means: Vec<Vec<f64>>,
    #[serde(default)]
    metadata: Option<InstanceMetadata>,
}

#[derive(Serialize)]
struct MetadataSection<'a> {
    metadata: &'a InstanceMetadata,
}

pub fn instance_to_string(inst: &LocalInstanceSet, metadata: Option<&InstanceMetadata>) -> String {
    let mut out = String::new();
    writeln!(out, "M = {}", inst.agents()).unwrap();
    writeln!(out, "K = {}", inst.arms()).unwrap();
    out.push_str("means = [\n");
    for row in inst.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "  [{}],", cells.join(", ")).unwrap();
    }
    out.push_str("]\n");
    if let Some(meta) = metadata {
        if meta != &InstanceMetadata::default() {
            out.push('\n');
            out.push_str(
                &toml::to_string(&MetadataSection { metadata: meta }).expect("metadata serializes"),
            );
        }
    }
    out
}

pub fn instance_from_str(text: &str) -> Result<(LocalInstanceSet, InstanceMetadata)> {
    let file: InstanceFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.means.len() != file.agents {
        return Err(Error::Parse(format!(
            "M = {} but {} rows of means",
            file.agents,
            file.means.len()
        )));
    }
    if let Some(row) = file.means.iter().find(|r| r.len() != file.arms) {
        return Err(Error::Parse(format!(
            "K = {} but a row has {} means",
            file.arms,
            row.len()
        )));
    }
    let inst = LocalInstanceSet::new(file.means)?;
    Ok((inst, file.metadata.unwrap_or_default()))
}

pub fn write_instance(
    path: &Path,
    inst: &LocalInstanceSet,
    metadata: Option<&InstanceMetadata>,
) -> Result<()> {
    std::fs::write(path, instance_to_string(inst, metadata))?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<(LocalInstanceSet, InstanceMetadata)> {
    instance_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::generate_random_instance;
    use crate::seeding::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn toy_file_layout() {
        let text = instance_to_string(&LocalInstanceSet::toy(), None);
        assert_eq!(
            text,
            "M = 2\nK = 3\nmeans = [\n  [0.89, 0.47, 0.01],\n  [0.01, 0.47, 0.89],\n]\n"
        );
    }

    #[test]
    fn generated_instance_round_trips_with_metadata() {
        let cfg = InstanceGenConfig {
            agents: 12,
            ..Default::default()
        };
        let inst = generate_random_instance(&cfg, &mut rng_from_seed(5)).unwrap();
        let meta = InstanceMetadata {
            seed: Some(5),
            generator: Some(cfg),
        };
        let (back, back_meta) = instance_from_str(&instance_to_string(&inst, Some(&meta))).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back_meta, meta);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(instance_from_str("M = 2\nK = 2\nmeans = [[0.1, 0.2]]\n").is_err());
        assert!(instance_from_str("M = 1\nK = 3\nmeans = [[0.1, 0.2]]\n").is_err());
        assert!(instance_from_str("M = 1\nK = 2\nmeans = [[0.1, 0.2]]\nextra = 1\n").is_err());
        assert!(instance_from_str("M = 1\nK = 2\nmeans = [[0.1, 1.2]]\n").is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_means_round_trip(rows in prop::collection::vec(
            prop::collection::vec(0.0f64..=1.0, 3), 1..5)) {
            if let Ok(inst) = LocalInstanceSet::new(rows) {
                let (back, _) = instance_from_str(&instance_to_string(&inst, None)).unwrap();
                prop_assert_eq!(back, inst);
            }
        }
    }
}
