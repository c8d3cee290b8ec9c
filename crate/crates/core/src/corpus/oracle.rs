use super::{CorpusError, Document, MacroPlan, PlanPool, Table};

/// Entities and events named in a paragraph, in order of first mention.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Mentions {
    pub entities: Vec<String>,
    pub events: Vec<String>,
}

/// Exact token match against entity ids and event keys. Repeated mentions count once.
pub fn find_mentions(table: &Table, paragraph: &[String]) -> Mentions {
    let mut m = Mentions::default();
    for tok in paragraph {
        if table.entity(tok).is_some() {
            if !m.entities.contains(tok) {
                m.entities.push(tok.clone());
            }
        } else if table.events.contains(tok) && !m.events.contains(tok) {
            m.events.push(tok.clone());
        }
    }
    m
}

/// Maps each paragraph to the pool plan covering exactly its mentions and
/// closes the plan with EOP.
pub fn extract_oracle_plan(table: &Table, doc: &Document, pool: &PlanPool) -> Result<MacroPlan, CorpusError> {
    let mut steps = Vec::with_capacity(doc.paragraphs.len());
    for (i, paragraph) in doc.paragraphs.iter().enumerate() {
        let m = find_mentions(table, paragraph);
        match pool.find(&m.entities, &m.events) {
            Some(idx) => steps.push(idx),
            None => {
                return Err(CorpusError::UnmatchedParagraph {
                    paragraph: i,
                    entities: m.entities,
                    events: m.events,
                })
            }
        }
    }
    Ok(MacroPlan { steps, terminated: true })
}
