//! Structured game tables, paragraph plans and the text they describe.

mod bins;
mod io;
mod oracle;
mod pool;
mod schema;
mod toy;
mod verbalize;
mod vocab;

pub use bins::{assign_length_bins, BinAssignment};
pub use io::{read_corpus, write_corpus, GameRecord};
pub use oracle::{extract_oracle_plan, find_mentions, Mentions};
pub use pool::{build_plan_pool, build_plan_pool_with, PoolRules};
pub use schema::{IeFrame, Schema};
pub use toy::{generate_toy_corpus, tiny_game, ToyCorpus, ToyGame, ToyParams};
pub use verbalize::{fixtures, type_token, verbalize_entity, verbalize_event};
pub use vocab::{build_vocab, Vocab, BOS, EOP, EOS, PAD, PARAGRAPH, UNK};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Paragraph delimiter in serialized summaries.
pub const PARAGRAPH_DELIMITER: &str = "<P>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("entity {0:?} has no records")]
    EmptyEntity(String),
    #[error("unknown event {0:?}")]
    UnknownEvent(String),
    #[error("event {0:?} has no play records")]
    EmptyEvent(String),
    #[error("record type {type_key:?} of {entity:?} is not declared in the schema")]
    UndeclaredType { entity: String, type_key: String },
    #[error("record of {0:?} has an empty value")]
    EmptyValue(String),
    #[error("record refers to entity {0:?} missing from the table")]
    DanglingEntity(String),
    #[error("record refers to event {0:?} missing from the table")]
    DanglingEvent(String),
    #[error("paragraph {paragraph} matches no plan (entities {entities:?}, events {events:?})")]
    UnmatchedParagraph {
        paragraph: usize,
        entities: Vec<String>,
        events: Vec<String>,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("corpus file line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Home,
    Visiting,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub entity_id: String,
    pub type_key: String,
    pub value: String,
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_key: Option<String>,
}

impl Record {
    pub fn stat(entity: &str, type_key: &str, value: impl ToString, side: Side) -> Self {
        Record {
            entity_id: entity.to_string(),
            type_key: type_key.to_string(),
            value: value.to_string(),
            side,
            event_key: None,
        }
    }

    pub fn play(entity: &str, type_key: &str, value: impl ToString, side: Side, event: &str) -> Self {
        Record {
            event_key: Some(event.to_string()),
            ..Record::stat(entity, type_key, value, side)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Team,
    Player,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
}

/// Records of one game, keyed by entity and (for play-by-play) event.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Table {
    pub records: Vec<Record>,
    pub entities: Vec<Entity>,
    pub events: Vec<String>,
}

impl Table {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn teams(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.kind == EntityKind::Team)
    }

    pub fn players(&self) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(|e| e.kind == EntityKind::Player)
    }

    /// Box-score records of an entity (play-by-play records excluded), in table order.
    pub fn entity_records<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records
            .iter()
            .filter(move |r| r.entity_id == id && r.event_key.is_none())
    }

    pub fn event_records<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Record> + 'a {
        self.records
            .iter()
            .filter(move |r| r.event_key.as_deref() == Some(key))
    }

    /// Whether some record carries exactly this `(entity, type, value)`.
    pub fn contains(&self, entity: &str, type_key: &str, value: &str) -> bool {
        self.records
            .iter()
            .any(|r| r.entity_id == entity && r.type_key == type_key && r.value == value)
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), CorpusError> {
        for r in &self.records {
            let Some(entity) = self.entity(&r.entity_id) else {
                return Err(CorpusError::DanglingEntity(r.entity_id.clone()));
            };
            if r.value.is_empty() {
                return Err(CorpusError::EmptyValue(r.entity_id.clone()));
            }
            let declared = match &r.event_key {
                Some(ev) => {
                    if !self.events.contains(ev) {
                        return Err(CorpusError::DanglingEvent(ev.clone()));
                    }
                    schema.play.order.contains(&r.type_key)
                }
                None => schema.order_for(entity.kind).contains(&r.type_key),
            };
            if !declared {
                return Err(CorpusError::UndeclaredType {
                    entity: r.entity_id.clone(),
                    type_key: r.type_key.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    Entity,
    Event,
    Combination,
}

impl PlanKind {
    pub const ALL: [PlanKind; 3] = [PlanKind::Entity, PlanKind::Event, PlanKind::Combination];

    pub fn index(self) -> usize {
        match self {
            PlanKind::Entity => 0,
            PlanKind::Event => 1,
            PlanKind::Combination => 2,
        }
    }
}

/// One candidate paragraph plan: a verbalized cluster of records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphPlan {
    pub tokens: Vec<String>,
    pub covered_entities: Vec<String>,
    pub covered_events: Vec<String>,
    pub kind: PlanKind,
}

impl ParagraphPlan {
    /// Shorthand such as `V(Royals) V(Orioles)` or `V(1-T)`.
    pub fn descriptor(&self) -> String {
        match self.kind {
            PlanKind::Event => format!("V({})", self.covered_events.join(", ")),
            _ => self
                .covered_entities
                .iter()
                .map(|e| format!("V({e})"))
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    /// Covered entities then covered events, in plan order.
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.covered_entities
            .iter()
            .chain(&self.covered_events)
            .map(String::as_str)
    }

    fn covers(&self, entities: &[String], events: &[String]) -> bool {
        same_set(&self.covered_entities, entities) && same_set(&self.covered_events, events)
    }
}

fn same_set(a: &[String], b: &[String]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

/// Ordered candidate plans of one game.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlanPool {
    pub plans: Vec<ParagraphPlan>,
}

impl PlanPool {
    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    /// Index of the plan covering exactly these entities and events.
    pub fn find(&self, entities: &[String], events: &[String]) -> Option<usize> {
        self.plans.iter().position(|p| p.covers(entities, events))
    }
}

/// Sequence of pool indices; `terminated` records that EOP closed it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MacroPlan {
    pub steps: Vec<usize>,
    pub terminated: bool,
}

impl MacroPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A summary as a sequence of paragraphs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Document {
    pub paragraphs: Vec<Vec<String>>,
}

impl Document {
    pub fn new(paragraphs: Vec<Vec<String>>) -> Self {
        Document { paragraphs }
    }

    /// Parses whitespace-tokenized text with `<P>` delimiters. Empty paragraphs are dropped.
    pub fn from_text(text: &str) -> Self {
        let mut paragraphs = vec![];
        let mut cur: Vec<String> = vec![];
        for tok in text.split_whitespace() {
            if tok == PARAGRAPH_DELIMITER {
                if !cur.is_empty() {
                    paragraphs.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push(tok.to_string());
            }
        }
        if !cur.is_empty() {
            paragraphs.push(cur);
        }
        Document { paragraphs }
    }

    /// Every paragraph followed by `<P>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.paragraphs {
            for tok in p {
                out.push_str(tok);
                out.push(' ');
            }
            out.push_str(PARAGRAPH_DELIMITER);
            out.push(' ');
        }
        out.pop();
        out
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.paragraphs.iter().flatten().map(String::as_str)
    }

    pub fn num_tokens(&self) -> usize {
        self.paragraphs.iter().map(Vec::len).sum()
    }
}

pub(crate) fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_text_round_trip() {
        let doc = Document::from_text("a b . <P> c d <P>");
        assert_eq!(doc.paragraphs, vec![toks("a b ."), toks("c d")]);
        assert_eq!(doc.to_text(), "a b . <P> c d <P>");
        assert_eq!(Document::from_text(&doc.to_text()), doc);
        assert_eq!(Document::from_text("x <P> <P> y").paragraphs.len(), 2);
    }

    #[test]
    fn descriptors() {
        let p = ParagraphPlan {
            tokens: toks("<TEAM> Royals"),
            covered_entities: vec!["Royals".into(), "Orioles".into()],
            covered_events: vec![],
            kind: PlanKind::Combination,
        };
        assert_eq!(p.descriptor(), "V(Royals) V(Orioles)");
        let e = ParagraphPlan {
            covered_entities: vec!["C.Mullins".into()],
            covered_events: vec!["1-T".into()],
            kind: PlanKind::Event,
            ..p
        };
        assert_eq!(e.descriptor(), "V(1-T)");
    }
}
