use super::Relation;
use crate::corpus::{Document, EntityKind, Schema, Table};

/// Rule-based relation extraction for template-style summaries.
///
/// Entity mentions are tokens naming an entity of `table`. Within a sentence,
/// a number followed by a frame keyword, or an action word after the action
/// marker, becomes a relation of the latest preceding entity mention.
/// Duplicates are kept in textual order.
pub fn extract_relations(summary: &Document, table: &Table, schema: &Schema) -> Vec<Relation> {
    let ie = &schema.ie;
    let mut out = vec![];
    for para in &summary.paragraphs {
        let mut subject: Option<(&str, EntityKind)> = None;
        for (i, tok) in para.iter().enumerate() {
            if *tok == ie.sentence_end {
                subject = None;
                continue;
            }
            if let Some(e) = table.entity(tok) {
                subject = Some((&e.id, e.kind));
                continue;
            }
            let Some((entity, kind)) = subject else { continue };
            let next = para.get(i + 1).map(String::as_str);
            if is_number(tok) {
                let frame = ie.frames.iter().find(|f| Some(f.keyword.as_str()) == next);
                let ty = frame.and_then(|f| match kind {
                    EntityKind::Team => f.team.as_deref(),
                    EntityKind::Player => f.player.as_deref(),
                });
                if let Some(ty) = ty {
                    out.push(Relation::new(entity, tok, ty));
                }
            } else if *tok == ie.action_marker {
                if let Some(word) = next.filter(|w| ie.action_words.iter().any(|a| a == w)) {
                    out.push(Relation::new(entity, word, &ie.action_type));
                }
            }
        }
    }
    out
}

fn is_number(tok: &str) -> bool {
    !tok.is_empty() && tok.bytes().all(|b| b.is_ascii_digit())
}
