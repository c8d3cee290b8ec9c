//! Synthetic baseball corpus whose oracle plans are known by construction.
//!
//! Every game follows the same editorial policy, so plans are learnable from
//! the table alone:
//!
//! 1. the two teams (combination plan),
//! 2. the visiting standout hitter, if any (entity plan),
//! 3. the home standout hitter together with both teams, if any,
//! 4. the half-inning containing a home run, if any (event plan).
//!
//! Standouts are the only players with 3+ hits, so the policy depends only
//! on values visible in the verbalized plans.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_plan_pool, CorpusError, Document, Entity, EntityKind, MacroPlan, PlanPool, Record, Schema, Side, Table,
};
use crate::metrics::Relation;

const TEAMS: [&str; 8] = ["Hawks", "Owls", "Bears", "Lions", "Wolves", "Sharks", "Eagles", "Tigers"];
const PLAYERS: [&str; 24] = [
    "A.Cruz", "B.Diaz", "C.Evans", "D.Fox", "E.Gray", "F.Hill", "G.Ito", "H.Jones", "I.Kim", "J.Lee", "K.Moss",
    "L.Nash", "M.Ortiz", "N.Park", "O.Quinn", "P.Reyes", "Q.Shaw", "R.Tate", "S.Vega", "T.Wade", "U.Young",
    "V.Zane", "W.Bell", "X.Cole",
];
const HITS: [&str; 3] = ["single", "double", "triple"];
const HOMER: &str = "homer";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub min_players_per_team: usize,
    pub max_players_per_team: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub max_plays_per_event: usize,
    /// Chance that a side has one standout hitter.
    pub standout_prob: f64,
    /// Chance that one half-inning contains a home run.
    pub homer_prob: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        ToyParams {
            min_players_per_team: 2,
            max_players_per_team: 3,
            min_events: 2,
            max_events: 3,
            max_plays_per_event: 2,
            standout_prob: 0.6,
            homer_prob: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGame {
    pub table: Table,
    pub pool: PlanPool,
    pub document: Document,
    pub plan: MacroPlan,
    /// Relations realized in the summary, in textual order.
    pub relations: Vec<Relation>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToyCorpus {
    pub games: Vec<ToyGame>,
}

pub fn generate_toy_corpus(seed: u64, n_games: usize, params: &ToyParams) -> Result<ToyCorpus, CorpusError> {
    if params.min_players_per_team < 1
        || params.min_players_per_team > params.max_players_per_team
        || 2 * params.max_players_per_team > PLAYERS.len()
        || params.min_events > params.max_events
        || params.max_events > 9
        || params.max_plays_per_event < 1
    {
        return Err(CorpusError::Parameter(format!("invalid toy parameters {params:?}")));
    }
    let schema = Schema::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let games = (0..n_games)
        .map(|_| generate_game(&mut rng, params, &schema))
        .collect::<Result<_, _>>()?;
    Ok(ToyCorpus { games })
}

/// Fixed two-paragraph game with two teams and one player (pool of 5),
/// small enough for exhaustive gradient checks.
pub fn tiny_game() -> ToyGame {
    let schema = Schema::toy();
    let (home, visit) = ("Lions", "Bears");
    let records = vec![
        Record::stat(home, "H/V", "H", Side::Home),
        Record::stat(home, "TR", 4, Side::Home),
        Record::stat(home, "TH", 6, Side::Home),
        Record::stat(visit, "H/V", "V", Side::Visiting),
        Record::stat(visit, "TR", 3, Side::Visiting),
        Record::stat(visit, "TH", 5, Side::Visiting),
        Record::stat("J.Lee", "H/V", "H", Side::Home),
        Record::stat("J.Lee", "BH", 3, Side::Home),
        Record::stat("J.Lee", "RBI", 2, Side::Home),
    ];
    let entities = vec![
        Entity { id: home.into(), kind: EntityKind::Team },
        Entity { id: visit.into(), kind: EntityKind::Team },
        Entity { id: "J.Lee".into(), kind: EntityKind::Player },
    ];
    let table = Table { records, entities, events: vec![] };
    let pool = build_plan_pool(&table, &schema).expect("tiny table is valid");
    let text = [
        "Bears scored 3 runs , 5 hits . Lions scored 4 runs , 6 hits .",
        "J.Lee had 3 hits , 2 RBI .",
    ];
    let steps = vec![
        pool.find(&[home.into(), visit.into()], &[]).expect("pair plan"),
        pool.find(&["J.Lee".into()], &[]).expect("player plan"),
    ];
    let relations = vec![
        rel(visit, 3, "TR"),
        rel(visit, 5, "TH"),
        rel(home, 4, "TR"),
        rel(home, 6, "TH"),
        rel("J.Lee", 3, "BH"),
        rel("J.Lee", 2, "RBI"),
    ];
    ToyGame {
        table,
        pool,
        document: Document::new(text.iter().map(|t| super::toks(t)).collect()),
        plan: MacroPlan { steps, terminated: true },
        relations,
    }
}

struct Hitter {
    name: String,
    side: Side,
    hits: u32,
    rbi: u32,
}

fn hv(side: Side) -> &'static str {
    match side {
        Side::Home => "H",
        _ => "V",
    }
}

fn generate_game(rng: &mut ChaCha8Rng, params: &ToyParams, schema: &Schema) -> Result<ToyGame, CorpusError> {
    let teams = sample(rng, TEAMS.len(), 2).into_vec();
    let (home, visiting) = (TEAMS[teams[0]], TEAMS[teams[1]]);
    let n_home = rng.gen_range(params.min_players_per_team..=params.max_players_per_team);
    let n_visit = rng.gen_range(params.min_players_per_team..=params.max_players_per_team);
    let roster = sample(rng, PLAYERS.len(), n_home + n_visit).into_vec();

    let mut hitters = vec![];
    let mut standout: [Option<usize>; 2] = [None, None];
    for (s, (side, range)) in [(Side::Home, 0..n_home), (Side::Visiting, n_home..n_home + n_visit)]
        .into_iter()
        .enumerate()
    {
        let star = rng.gen_bool(params.standout_prob).then(|| rng.gen_range(range.clone()));
        standout[s] = star;
        for i in range {
            let (hits, rbi) = if Some(i) == star {
                (rng.gen_range(3..=4), rng.gen_range(2..=4))
            } else {
                (rng.gen_range(0..=2), rng.gen_range(0..=1))
            };
            hitters.push(Hitter {
                name: PLAYERS[roster[i]].to_string(),
                side,
                hits,
                rbi,
            });
        }
    }

    let mut records = vec![];
    let mut team_stats = vec![];
    for (team, side) in [(home, Side::Home), (visiting, Side::Visiting)] {
        let own = hitters.iter().filter(|h| h.side == side);
        let runs = own.clone().map(|h| h.rbi).sum::<u32>() + rng.gen_range(0..=2);
        let hits = own.map(|h| h.hits).sum::<u32>() + rng.gen_range(0..=3);
        records.push(Record::stat(team, "H/V", hv(side), side));
        records.push(Record::stat(team, "TR", runs, side));
        records.push(Record::stat(team, "TH", hits, side));
        team_stats.push((runs, hits));
    }
    for h in &hitters {
        records.push(Record::stat(&h.name, "H/V", hv(h.side), h.side));
        records.push(Record::stat(&h.name, "BH", h.hits, h.side));
        records.push(Record::stat(&h.name, "RBI", h.rbi, h.side));
    }

    // Half-innings, in game order.
    let n_events = rng.gen_range(params.min_events..=params.max_events);
    let mut innings = sample(rng, 9, n_events).into_vec();
    innings.sort_unstable();
    let events: Vec<String> = innings
        .iter()
        .map(|&i| format!("{}-{}", i + 1, if rng.gen_bool(0.5) { "T" } else { "B" }))
        .collect();
    let homer_event = rng.gen_bool(params.homer_prob).then(|| rng.gen_range(0..n_events));
    let mut plays: Vec<Vec<(usize, &'static str)>> = vec![];
    for (e, key) in events.iter().enumerate() {
        let batting = if key.ends_with('T') { Side::Visiting } else { Side::Home };
        let candidates: Vec<usize> = (0..hitters.len()).filter(|&i| hitters[i].side == batting).collect();
        let n_plays = rng.gen_range(1..=params.max_plays_per_event);
        let mut ev = vec![];
        for p in 0..n_plays {
            let batter = candidates[rng.gen_range(0..candidates.len())];
            let action = if p == 0 && homer_event == Some(e) {
                HOMER
            } else {
                HITS[rng.gen_range(0..HITS.len())]
            };
            let b = &hitters[batter];
            records.push(Record::play(&b.name, "INN", key, b.side, key));
            records.push(Record::play(&b.name, "BATTER", &b.name, b.side, key));
            records.push(Record::play(&b.name, "ACTION", action, b.side, key));
            ev.push((batter, action));
        }
        plays.push(ev);
    }

    let mut entities = vec![
        Entity { id: home.into(), kind: EntityKind::Team },
        Entity { id: visiting.into(), kind: EntityKind::Team },
    ];
    entities.extend(hitters.iter().map(|h| Entity { id: h.name.clone(), kind: EntityKind::Player }));
    let table = Table { records, entities, events: events.clone() };
    table.validate(schema)?;
    let pool = build_plan_pool(&table, schema)?;

    let mut paragraphs = vec![];
    let mut relations = vec![];
    let mut steps = vec![];
    let mut emit = |entities: Vec<&str>, events: Vec<&str>, (tokens, rels): (String, Vec<Relation>)| {
        let ents: Vec<String> = entities.into_iter().map(String::from).collect();
        let evs: Vec<String> = events.into_iter().map(String::from).collect();
        let idx = pool.find(&ents, &evs).expect("policy plans are in the pool");
        steps.push(idx);
        paragraphs.push(super::toks(&tokens));
        relations.extend(rels);
    };

    let (h_stats, v_stats) = (team_stats[0], team_stats[1]);
    emit(vec![home, visiting], vec![], team_pair(rng, home, h_stats, visiting, v_stats));
    if let Some(i) = standout[1] {
        let h = &hitters[i];
        emit(vec![&h.name], vec![], hitter(rng, h));
    }
    if let Some(i) = standout[0] {
        let h = &hitters[i];
        emit(vec![&h.name, home, visiting], vec![], hitter_with_teams(rng, h, home, visiting));
    }
    if let Some(e) = homer_event {
        let mut batters: Vec<&str> = vec![];
        for &(b, _) in &plays[e] {
            if !batters.contains(&hitters[b].name.as_str()) {
                batters.push(&hitters[b].name);
            }
        }
        let text = half_inning(rng, &events[e], &plays[e], &hitters);
        emit(batters, vec![&events[e]], text);
    }

    Ok(ToyGame {
        table,
        pool,
        document: Document::new(paragraphs),
        plan: MacroPlan { steps, terminated: true },
        relations,
    })
}

fn rel(entity: &str, value: impl ToString, type_key: &str) -> Relation {
    Relation {
        entity: entity.to_string(),
        value: value.to_string(),
        type_key: type_key.to_string(),
    }
}

fn team_pair(rng: &mut ChaCha8Rng, home: &str, (hr, hh): (u32, u32), visit: &str, (vr, vh): (u32, u32)) -> (String, Vec<Relation>) {
    let home_rels = vec![rel(home, hr, "TR"), rel(home, hh, "TH")];
    let visit_rels = vec![rel(visit, vr, "TR"), rel(visit, vh, "TH")];
    if rng.gen_bool(0.5) {
        (
            format!(
                "the {home} hosted the {visit} . the {home} scored {hr} runs on {hh} hits . \
                 the {visit} scored {vr} runs on {vh} hits ."
            ),
            [home_rels, visit_rels].concat(),
        )
    } else {
        (
            format!(
                "the {visit} visited the {home} . the {visit} scored {vr} runs on {vh} hits , \
                 while the {home} scored {hr} runs on {hh} hits ."
            ),
            [visit_rels, home_rels].concat(),
        )
    }
}

fn hitter(rng: &mut ChaCha8Rng, h: &Hitter) -> (String, Vec<Relation>) {
    let (n, bh, rbi) = (&h.name, h.hits, h.rbi);
    if rng.gen_bool(0.5) {
        (format!("{n} had {bh} hits and {rbi} RBI ."), vec![rel(n, bh, "BH"), rel(n, rbi, "RBI")])
    } else {
        (
            format!("{n} finished with {rbi} RBI and {bh} hits ."),
            vec![rel(n, rbi, "RBI"), rel(n, bh, "BH")],
        )
    }
}

fn hitter_with_teams(rng: &mut ChaCha8Rng, h: &Hitter, home: &str, visit: &str) -> (String, Vec<Relation>) {
    let (n, bh, rbi) = (&h.name, h.hits, h.rbi);
    let (own, other) = if h.side == Side::Home { (home, visit) } else { (visit, home) };
    if rng.gen_bool(0.5) {
        (
            format!("{n} drove in {rbi} RBI on {bh} hits for the {own} against the {other} ."),
            vec![rel(n, rbi, "RBI"), rel(n, bh, "BH")],
        )
    } else {
        (
            format!("for the {own} , {n} had {bh} hits and {rbi} RBI against the {other} ."),
            vec![rel(n, bh, "BH"), rel(n, rbi, "RBI")],
        )
    }
}

fn half_inning(rng: &mut ChaCha8Rng, key: &str, plays: &[(usize, &str)], hitters: &[Hitter]) -> (String, Vec<Relation>) {
    let (first, action) = (&hitters[plays[0].0].name, plays[0].1);
    let mut text = if rng.gen_bool(0.5) {
        format!("in the {key} , {first} hit a {action} .")
    } else {
        format!("{first} hit a {action} in the {key} .")
    };
    let mut rels = vec![rel(first, action, "ACTION")];
    for &(b, action) in &plays[1..] {
        let name = &hitters[b].name;
        text.push_str(&format!(" {name} added a {action} ."));
        rels.push(rel(name, action, "ACTION"));
    }
    (text, rels)
}
