use super::{CorpusError, ParagraphPlan, PlanKind, Schema, Table};

/// Spelling of a record type inside a plan, e.g. `<H/V>`.
pub fn type_token(type_key: &str) -> String {
    format!("<{type_key}>")
}

fn entity_tokens(table: &Table, schema: &Schema, entity_id: &str, out: &mut Vec<String>) -> Result<usize, CorpusError> {
    let entity = table
        .entity(entity_id)
        .ok_or_else(|| CorpusError::UnknownEntity(entity_id.to_string()))?;
    let layout = schema.layout(entity.kind);
    out.push(type_token(&layout.identity));
    out.push(entity.id.clone());
    let mut emitted = 0;
    for ty in &layout.order {
        for r in table.entity_records(entity_id).filter(|r| &r.type_key == ty) {
            out.push(type_token(ty));
            out.push(r.value.clone());
            emitted += 1;
        }
    }
    if let Some(r) = table
        .entity_records(entity_id)
        .find(|r| !layout.order.contains(&r.type_key))
    {
        return Err(CorpusError::UndeclaredType {
            entity: entity_id.to_string(),
            type_key: r.type_key.clone(),
        });
    }
    Ok(emitted)
}

/// Identity fields followed by `<type> value` pairs in the schema's fixed order.
pub fn verbalize_entity(table: &Table, schema: &Schema, entity_id: &str) -> Result<ParagraphPlan, CorpusError> {
    let mut tokens = vec![];
    if entity_tokens(table, schema, entity_id, &mut tokens)? == 0 {
        return Err(CorpusError::EmptyEntity(entity_id.to_string()));
    }
    Ok(ParagraphPlan {
        tokens,
        covered_entities: vec![entity_id.to_string()],
        covered_events: vec![],
        kind: PlanKind::Entity,
    })
}

/// Verbalizations of the event's participants, then its play records in table order.
pub fn verbalize_event(table: &Table, schema: &Schema, event_key: &str) -> Result<ParagraphPlan, CorpusError> {
    if !table.events.iter().any(|e| e == event_key) {
        return Err(CorpusError::UnknownEvent(event_key.to_string()));
    }
    let plays: Vec<_> = table.event_records(event_key).collect();
    if plays.is_empty() {
        return Err(CorpusError::EmptyEvent(event_key.to_string()));
    }
    let mut participants: Vec<String> = vec![];
    for r in &plays {
        if !participants.contains(&r.entity_id) {
            participants.push(r.entity_id.clone());
        }
    }
    let mut tokens = vec![];
    for p in &participants {
        entity_tokens(table, schema, p, &mut tokens)?;
    }
    for r in &plays {
        tokens.push(type_token(&r.type_key));
        tokens.push(r.value.clone());
    }
    Ok(ParagraphPlan {
        tokens,
        covered_entities: participants,
        covered_events: vec![event_key.to_string()],
        kind: PlanKind::Event,
    })
}

/// Small fixed tables for examples and tests.
pub mod fixtures {
    use crate::corpus::{Entity, EntityKind, Record, Side, Table};

    /// The MLB example game: two teams, a handful of players and the first plays.
    pub fn example_game() -> Table {
        let team = |id: &str| Entity { id: id.into(), kind: EntityKind::Team };
        let player = |id: &str| Entity { id: id.into(), kind: EntityKind::Player };
        let mut records = vec![];
        for (t, side, hv, tr, th, e) in [
            ("Orioles", Side::Home, "H", 2, 4, 0),
            ("Royals", Side::Visiting, "V", 9, 14, 1),
        ] {
            records.push(Record::stat(t, "H/V", hv, side));
            records.push(Record::stat(t, "TR", tr, side));
            records.push(Record::stat(t, "TH", th, side));
            records.push(Record::stat(t, "E", e, side));
        }
        for (p, side, hv, ab, br, bh, rbi) in [
            ("C.Mullins", Side::Home, "H", 4, 2, 2, 1),
            ("J.Villar", Side::Home, "H", 4, 0, 0, 0),
            ("W.Merrifield", Side::Visiting, "V", 2, 3, 2, 1),
            ("R.O'Hearn", Side::Visiting, "V", 5, 1, 3, 4),
        ] {
            // Deliberately out of schema order: verbalization must reorder.
            records.push(Record::stat(p, "RBI", rbi, side));
            records.push(Record::stat(p, "H/V", hv, side));
            records.push(Record::stat(p, "AB", ab, side));
            records.push(Record::stat(p, "BR", br, side));
            records.push(Record::stat(p, "BH", bh, side));
        }
        for (p, side, hv, stats) in [
            ("A.Cashner", Side::Home, "H", ["4", "13", "5.1", "9", "4", "4", "3", "1"]),
            ("B.Keller", Side::Visiting, "V", ["7", "5", "8", "4", "2", "2", "2", "4"]),
        ] {
            records.push(Record::stat(p, "H/V", hv, side));
            for (ty, v) in ["W", "L", "IP", "PH", "PR", "ER", "BB", "K"].iter().zip(stats) {
                records.push(Record::stat(p, ty, v, side));
            }
        }
        records.push(Record::stat("H.Dozier", "H/V", "V", Side::Visiting));
        records.push(Record::stat("H.Dozier", "BH", 2, Side::Visiting));
        let plays = [
            ("1-T", "C.Mullins", "B.Keller", "Home_run", Side::Home),
            ("1-B", "H.Dozier", "A.Cashner", "Grounded", Side::Visiting),
            ("4-B", "W.Merrifield", "A.Cashner", "Sac_fly", Side::Visiting),
        ];
        for (inn, batter, pitcher, action, side) in plays {
            records.push(Record::play(batter, "INN", inn, side, inn));
            records.push(Record::play(batter, "BATTER", batter, side, inn));
            records.push(Record::play(pitcher, "PITCHER", pitcher, side, inn));
            records.push(Record::play(batter, "ACTION", action, side, inn));
        }
        Table {
            records,
            entities: vec![
                team("Orioles"),
                team("Royals"),
                player("C.Mullins"),
                player("J.Villar"),
                player("W.Merrifield"),
                player("R.O'Hearn"),
                player("A.Cashner"),
                player("B.Keller"),
                player("H.Dozier"),
            ],
            events: vec!["1-T".into(), "1-B".into(), "4-B".into()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::example_game;
    use super::*;
    use crate::corpus::{toks, Entity, EntityKind, Record, Side};

    #[test]
    fn keller_verbalization() {
        let table = example_game();
        let plan = verbalize_entity(&table, &Schema::mlb(), "B.Keller").unwrap();
        let expected = toks("<PLAYER> B.Keller <H/V> V <W> 7 <L> 5 <IP> 8 <PH> 4");
        assert_eq!(&plan.tokens[..expected.len()], expected.as_slice());
        assert_eq!(plan.kind, PlanKind::Entity);
        assert_eq!(plan.covered_entities, vec!["B.Keller"]);
    }

    #[test]
    fn records_follow_schema_order() {
        let table = example_game();
        let plan = verbalize_entity(&table, &Schema::mlb(), "C.Mullins").unwrap();
        assert_eq!(
            plan.tokens,
            toks("<PLAYER> C.Mullins <H/V> H <AB> 4 <BR> 2 <BH> 2 <RBI> 1")
        );
    }

    #[test]
    fn singleton_record() {
        let table = Table {
            records: vec![Record::stat("X.Solo", "K", 4, Side::None)],
            entities: vec![Entity { id: "X.Solo".into(), kind: EntityKind::Player }],
            events: vec![],
        };
        let plan = verbalize_entity(&table, &Schema::mlb(), "X.Solo").unwrap();
        assert_eq!(plan.tokens, toks("<PLAYER> X.Solo <K> 4"));
    }

    #[test]
    fn toy_player_with_three_records_has_eight_tokens() {
        let table = Table {
            records: vec![
                Record::stat("A.Cruz", "RBI", 2, Side::Home),
                Record::stat("A.Cruz", "BH", 3, Side::Home),
                Record::stat("A.Cruz", "H/V", "H", Side::Home),
            ],
            entities: vec![Entity { id: "A.Cruz".into(), kind: EntityKind::Player }],
            events: vec![],
        };
        let plan = verbalize_entity(&table, &Schema::toy(), "A.Cruz").unwrap();
        assert_eq!(plan.tokens, toks("<PLAYER> A.Cruz <H/V> H <BH> 3 <RBI> 2"));
    }

    #[test]
    fn entity_errors() {
        let table = example_game();
        assert_eq!(
            verbalize_entity(&table, &Schema::mlb(), "Nobody"),
            Err(CorpusError::UnknownEntity("Nobody".into()))
        );
        let mut t = table.clone();
        t.entities.push(Entity { id: "Z.Empty".into(), kind: EntityKind::Player });
        assert_eq!(
            verbalize_entity(&t, &Schema::mlb(), "Z.Empty"),
            Err(CorpusError::EmptyEntity("Z.Empty".into()))
        );
    }

    #[test]
    fn first_inning_event() {
        let table = example_game();
        let schema = Schema::mlb();
        let plan = verbalize_event(&table, &schema, "1-T").unwrap();
        assert_eq!(plan.covered_entities, vec!["C.Mullins", "B.Keller"]);
        assert_eq!(plan.covered_events, vec!["1-T"]);
        let mut expected = verbalize_entity(&table, &schema, "C.Mullins").unwrap().tokens;
        expected.extend(verbalize_entity(&table, &schema, "B.Keller").unwrap().tokens);
        expected.extend(toks(
            "<INN> 1-T <BATTER> C.Mullins <PITCHER> B.Keller <ACTION> Home_run",
        ));
        assert_eq!(plan.tokens, expected);
    }

    #[test]
    fn single_play_single_batter() {
        let table = Table {
            records: vec![
                Record::stat("A.Cruz", "H/V", "H", Side::Home),
                Record::play("A.Cruz", "ACTION", "single", Side::Home, "2-B"),
            ],
            entities: vec![Entity { id: "A.Cruz".into(), kind: EntityKind::Player }],
            events: vec!["2-B".into()],
        };
        let plan = verbalize_event(&table, &Schema::toy(), "2-B").unwrap();
        assert_eq!(plan.tokens, toks("<PLAYER> A.Cruz <H/V> H <ACTION> single"));
    }

    #[test]
    fn unknown_event() {
        let table = example_game();
        assert_eq!(
            verbalize_event(&table, &Schema::mlb(), "9-B"),
            Err(CorpusError::UnknownEvent("9-B".into()))
        );
    }
}
