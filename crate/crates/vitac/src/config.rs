//! Run configuration: one TOML file with a section per component, plus
//! dotted-key overrides from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vitac_core::eval::{ABLATION_THRESHOLD, MAIN_THRESHOLD};
use vitac_core::vtcon::{AgentConfig, TrainConfig};
use vitac_core::vtgen::{GenTrainConfig, VtGenConfig};
use vitac_core::world::EpisodeConfig;

use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub world: EpisodeConfig,
    pub collect: CollectConfig,
    pub generator: VtGenConfig,
    pub gen_train: GenTrainConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            world: EpisodeConfig::default(),
            collect: CollectConfig::default(),
            generator: VtGenConfig::default(),
            gen_train: GenTrainConfig::default(),
            agent: AgentConfig::default(),
            train: TrainConfig::default(),
            policy: PolicyConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub sequences: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { sequences: 100 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TouchMode {
    GroundTruth,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub touch: TouchMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { touch: TouchMode::Generated }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Success threshold, meters.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 50, threshold: MAIN_THRESHOLD, seed: 1_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Training seeds shared by every variant.
    pub seeds: Vec<u64>,
    /// Environment steps per variant and seed.
    pub steps: usize,
    pub episodes: usize,
    pub threshold: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { seeds: vec![0], steps: 150_000, episodes: 50, threshold: ABLATION_THRESHOLD }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies `key.path=value` overrides. The key must already exist in the
    /// serialized configuration; values parse as TOML, falling back to a
    /// bare string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, Error> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).expect("configuration serializes");
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| Error::Override(format!("`{item}` is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut root, key.trim(), value)?;
        }
        Ok(root.try_into()?)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), Error> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| Error::Override(format!("`{key}`: `{part}` is not inside a section")))?;
        if i + 1 == parts.len() {
            // Optional fields are omitted when unset, so a missing last key is
            // accepted and left for deserialization to validate.
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table.get_mut(*part).ok_or_else(|| Error::Override(format!("unknown section `{part}` in `{key}`")))?;
    }
    Err(Error::Override("empty key".into()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vitac_core::vtcon::FusionMode;
    use vitac_core::world::ShapeKind;

    #[test]
    fn default_round_trips_through_toml() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(Config::parse("").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("sed = 3").is_err());
        assert!(Config::parse("[agent]\ngama = 0.9").is_err());
        assert!(Config::default().with_overrides(&["agent.gama=0.9".into()]).is_err());
        assert!(Config::default().with_overrides(&["agnt.gamma=0.9".into()]).is_err());
    }

    #[test]
    fn overrides_set_nested_values() {
        let c = Config::default()
            .with_overrides(&[
                "agent.gamma=0.9".into(),
                "agent.fusion=concat".into(),
                "seed=7".into(),
                "world.object={ kind = \"box\", half_x = 0.04, half_y = 0.03 }".into(),
            ])
            .unwrap();
        assert_eq!(c.agent.gamma, 0.9);
        assert_eq!(c.agent.fusion, FusionMode::Concat);
        assert_eq!(c.seed, 7);
        assert_eq!(c.world.object, ShapeKind::Box { half_x: 0.04, half_y: 0.03 });
        let t = Config::default().with_overrides(&["agent.target_entropy=-1.5".into()]).unwrap();
        assert_eq!(t.agent.target_entropy, Some(-1.5));
    }

    #[test]
    fn digest_separates_any_key_change() {
        let a = Config::default();
        let b = a.with_overrides(&["eval.episodes=51".into()]).unwrap();
        let c = a.with_overrides(&["world.sensor.rows=33".into()]).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_ne!(b.digest(), c.digest());
        assert_eq!(a.digest(), Config::default().digest());
    }
}
