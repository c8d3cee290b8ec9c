use super::verbalize::{verbalize_entity, verbalize_event};
use super::{CorpusError, EntityKind, ParagraphPlan, PlanKind, PlanPool, Schema, Table};
use serde::{Deserialize, Serialize};

/// Which plan families enter the pool. Enumeration order is fixed:
/// teams, players, events, the team pair, then each player with the team pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRules {
    pub teams: bool,
    pub players: bool,
    pub events: bool,
    pub team_pair: bool,
    pub player_with_pair: bool,
}

impl Default for PoolRules {
    fn default() -> Self {
        PoolRules {
            teams: true,
            players: true,
            events: true,
            team_pair: true,
            player_with_pair: true,
        }
    }
}

pub fn build_plan_pool(table: &Table, schema: &Schema) -> Result<PlanPool, CorpusError> {
    build_plan_pool_with(table, schema, PoolRules::default())
}

/// Like [`verbalize_entity`] but an entity without records keeps its identity tokens.
fn entity_plan(table: &Table, schema: &Schema, id: &str) -> Result<ParagraphPlan, CorpusError> {
    match verbalize_entity(table, schema, id) {
        Err(CorpusError::EmptyEntity(_)) => {
            let kind = table.entity(id).map(|e| e.kind).unwrap_or(EntityKind::Player);
            Ok(ParagraphPlan {
                tokens: vec![super::type_token(&schema.layout(kind).identity), id.to_string()],
                covered_entities: vec![id.to_string()],
                covered_events: vec![],
                kind: PlanKind::Entity,
            })
        }
        other => other,
    }
}

fn combine(kind: PlanKind, parts: &[&ParagraphPlan]) -> ParagraphPlan {
    ParagraphPlan {
        tokens: parts.iter().flat_map(|p| p.tokens.iter().cloned()).collect(),
        covered_entities: parts.iter().flat_map(|p| p.covered_entities.iter().cloned()).collect(),
        covered_events: parts.iter().flat_map(|p| p.covered_events.iter().cloned()).collect(),
        kind,
    }
}

pub fn build_plan_pool_with(table: &Table, schema: &Schema, rules: PoolRules) -> Result<PlanPool, CorpusError> {
    let teams = table
        .teams()
        .map(|e| entity_plan(table, schema, &e.id))
        .collect::<Result<Vec<_>, _>>()?;
    let players = table
        .players()
        .map(|e| entity_plan(table, schema, &e.id))
        .collect::<Result<Vec<_>, _>>()?;

    let mut plans = vec![];
    if rules.teams {
        plans.extend(teams.iter().cloned());
    }
    if rules.players {
        plans.extend(players.iter().cloned());
    }
    if rules.events {
        for ev in &table.events {
            plans.push(verbalize_event(table, schema, ev)?);
        }
    }
    let pair = (teams.len() == 2).then(|| combine(PlanKind::Combination, &[&teams[0], &teams[1]]));
    if let Some(pair) = &pair {
        if rules.team_pair {
            plans.push(pair.clone());
        }
        if rules.player_with_pair {
            for p in &players {
                plans.push(combine(PlanKind::Combination, &[p, pair]));
            }
        }
    }

    let mut pool = PlanPool::default();
    for plan in plans {
        let dup = pool.plans.iter().any(|q| {
            q.kind == plan.kind && q.covers(&plan.covered_entities, &plan.covered_events)
        });
        if !dup {
            pool.plans.push(plan);
        }
    }
    Ok(pool)
}
