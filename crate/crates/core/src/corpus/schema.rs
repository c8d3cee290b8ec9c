use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, EntityKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityLayout {
    /// Record type that introduces the entity, e.g. `PLAYER`.
    pub identity: String,
    /// Fixed verbalization order of box-score record types.
    pub order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayLayout {
    pub order: Vec<String>,
}

/// A number followed by `keyword` yields a relation of type `team` or
/// `player` depending on the subject's entity kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IeFrame {
    pub keyword: String,
    #[serde(default)]
    pub team: Option<String>,
    #[serde(default)]
    pub player: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IeRules {
    pub action_type: String,
    pub action_marker: String,
    pub action_words: Vec<String>,
    pub sentence_end: String,
    pub frames: Vec<IeFrame>,
}

/// Declared record types and their verbalization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub version: u32,
    pub name: String,
    pub team: EntityLayout,
    pub player: EntityLayout,
    pub play: PlayLayout,
    pub ie: IeRules,
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        let schema: Schema = toml::from_str(text).map_err(|e| CorpusError::Schema(e.to_string()))?;
        if schema.version != SCHEMA_VERSION {
            return Err(CorpusError::Schema(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                schema.version
            )));
        }
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn toy() -> Self {
        Self::from_toml(include_str!("../../schemas/toy.toml")).expect("built-in toy schema")
    }

    pub fn mlb() -> Self {
        Self::from_toml(include_str!("../../schemas/mlb.toml")).expect("built-in mlb schema")
    }

    pub fn layout(&self, kind: EntityKind) -> &EntityLayout {
        match kind {
            EntityKind::Team => &self.team,
            EntityKind::Player => &self.player,
        }
    }

    pub fn order_for(&self, kind: EntityKind) -> &[String] {
        &self.layout(kind).order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_schemas_parse() {
        let toy = Schema::toy();
        assert_eq!(toy.player.order, vec!["H/V", "BH", "RBI"]);
        assert_eq!(toy.ie.frames.len(), 3);
        let mlb = Schema::mlb();
        assert_eq!(&mlb.player.order[..6], &["H/V", "W", "L", "IP", "PH", "PR"]);
    }

    #[test]
    fn version_is_enforced() {
        let text = include_str!("../../schemas/toy.toml").replace("version = 1", "version = 7");
        assert!(matches!(Schema::from_toml(&text), Err(CorpusError::Schema(_))));
    }
}
