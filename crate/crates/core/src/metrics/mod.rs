//! Automatic evaluation of generated summaries and macro plans.
//!
//! Relation generation (RG) counts extracted relations and checks them
//! against the table. Content selection (CS) compares generated relations
//! with those of the gold summary as multisets; content ordering (CO) is the
//! complement of their normalized edit distance.

mod bleu;
mod edit;
mod ie;

pub use bleu::{bleu, BLEU_EPSILON};
pub use edit::dld;
pub use ie::extract_relations;

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, MacroPlan, PlanPool, Schema, Table};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("{what}: {left} items against {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("plan step {step} is outside a pool of {pool} plans")]
    PoolMismatch { step: usize, pool: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub entity: String,
    pub value: String,
    pub type_key: String,
}

impl Relation {
    pub fn new(entity: &str, value: &str, type_key: &str) -> Self {
        Relation {
            entity: entity.into(),
            value: value.into(),
            type_key: type_key.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgScore {
    pub count: usize,
    pub precision: f64,
    /// Set when there was nothing to score; `precision` is then 0.
    pub undefined: bool,
}

pub fn rg(relations: &[Relation], table: &Table) -> RgScore {
    let hits = relations
        .iter()
        .filter(|r| table.contains(&r.entity, &r.type_key, &r.value))
        .count();
    RgScore {
        count: relations.len(),
        precision: if relations.is_empty() { 0.0 } else { 100.0 * hits as f64 / relations.len() as f64 },
        undefined: relations.is_empty(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Multiset precision and recall. Two empty sides agree perfectly; one empty
/// side scores 0.
pub fn cs<T: Eq + Hash>(generated: &[T], gold: &[T]) -> CsScore {
    if generated.is_empty() && gold.is_empty() {
        return CsScore { precision: 100.0, recall: 100.0, f: 100.0 };
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    let mut matched = 0;
    for g in generated {
        if let Some(c) = counts.get_mut(g).filter(|c| **c > 0) {
            *c -= 1;
            matched += 1;
        }
    }
    let ratio = |n: usize| if n == 0 { 0.0 } else { 100.0 * matched as f64 / n as f64 };
    let (p, r) = (ratio(generated.len()), ratio(gold.len()));
    CsScore { precision: p, recall: r, f: harmonic(p, r) }
}

/// `100·(1 − dld/max(len))`; 100 when both are empty.
pub fn co<T: PartialEq>(generated: &[T], gold: &[T]) -> f64 {
    let denom = generated.len().max(gold.len());
    if denom == 0 {
        return 100.0;
    }
    100.0 * (1.0 - dld(generated, gold) as f64 / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanQuality {
    pub cs: CsScore,
    pub co: f64,
}

fn plan_items<'a>(plan: &MacroPlan, pool: &'a PlanPool) -> Result<Vec<&'a str>, MetricsError> {
    let mut items = vec![];
    for &s in &plan.steps {
        let p = pool.plans.get(s).ok_or(MetricsError::PoolMismatch { step: s, pool: pool.len() })?;
        items.extend(p.items());
    }
    Ok(items)
}

/// CS and CO over the entities and events named by each plan, in order.
pub fn plan_quality(pred: &MacroPlan, oracle: &MacroPlan, pool: &PlanPool) -> Result<PlanQuality, MetricsError> {
    let p = plan_items(pred, pool)?;
    let o = plan_items(oracle, pool)?;
    Ok(PlanQuality { cs: cs(&p, &o), co: co(&p, &o) })
}

/// Corpus-level scores, all in percent except `rg_count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean relations per summary.
    pub rg_count: f64,
    /// Micro-averaged over all extracted relations.
    pub rg_precision: f64,
    pub rg_undefined: bool,
    /// CS precision and recall are averaged over summaries; F is their harmonic mean.
    pub cs_precision: f64,
    pub cs_recall: f64,
    pub cs_f: f64,
    pub co: f64,
    pub bleu: f64,
}

pub const REPORT_COLUMNS: [&str; 7] = ["RG #", "RG P%", "CS P%", "CS R%", "CS F%", "CO DLD%", "BLEU"];

impl MetricReport {
    fn values(&self) -> [f64; 7] {
        [self.rg_count, self.rg_precision, self.cs_precision, self.cs_recall, self.cs_f, self.co, self.bleu]
    }

    pub fn to_csv(&self) -> String {
        let vals: Vec<String> = self.values().iter().map(|v| format!("{v:.4}")).collect();
        format!("{}\n{}\n", REPORT_COLUMNS.join(","), vals.join(","))
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in REPORT_COLUMNS {
            write!(f, "{c:>9}")?;
        }
        writeln!(f)?;
        for v in self.values() {
            write!(f, "{v:>9.2}")?;
        }
        if self.rg_undefined {
            write!(f, "  (no relations extracted)")?;
        }
        writeln!(f)
    }
}

/// Scores generated summaries against gold summaries of the same games.
pub fn evaluate(
    generated: &[Document],
    gold: &[Document],
    tables: &[Table],
    schema: &Schema,
) -> Result<MetricReport, MetricsError> {
    if generated.is_empty() {
        return Err(MetricsError::Empty("evaluation corpus"));
    }
    for (what, n) in [("gold summaries", gold.len()), ("tables", tables.len())] {
        if n != generated.len() {
            return Err(MetricsError::LengthMismatch { what, left: generated.len(), right: n });
        }
    }
    let n = generated.len() as f64;
    let (mut count, mut correct) = (0usize, 0.0f64);
    let (mut p, mut r, mut o) = (0.0, 0.0, 0.0);
    for ((g, ref_doc), table) in generated.iter().zip(gold).zip(tables) {
        let rel_gen = extract_relations(g, table, schema);
        let rel_gold = extract_relations(ref_doc, table, schema);
        let score = rg(&rel_gen, table);
        count += score.count;
        correct += score.precision * score.count as f64 / 100.0;
        let c = cs(&rel_gen, &rel_gold);
        p += c.precision;
        r += c.recall;
        o += co(&rel_gen, &rel_gold);
    }
    let cands: Vec<Vec<&str>> = generated.iter().map(|d| d.tokens().collect()).collect();
    let refs: Vec<Vec<&str>> = gold.iter().map(|d| d.tokens().collect()).collect();
    let (cs_precision, cs_recall) = (p / n, r / n);
    Ok(MetricReport {
        rg_count: count as f64 / n,
        rg_precision: if count == 0 { 0.0 } else { 100.0 * correct / count as f64 },
        rg_undefined: count == 0,
        cs_precision,
        cs_recall,
        cs_f: harmonic(cs_precision, cs_recall),
        co: o / n,
        bleu: bleu(&cands, &refs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyParams};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 0.05
    }

    #[test]
    fn rg_examples() {
        let corpus = generate_toy_corpus(1, 1, &ToyParams::default()).unwrap();
        let g = &corpus.games[0];
        let s = rg(&g.relations, &g.table);
        assert_eq!(s.precision, 100.0);
        let mut rels = g.relations[..3].to_vec();
        rels.push(Relation::new("Nobody", "9", "BH"));
        assert!(close(rg(&rels, &g.table).precision, 75.0));
        let empty = rg(&[], &g.table);
        assert!(empty.undefined && empty.precision == 0.0 && empty.count == 0);
    }

    #[test]
    fn cs_examples() {
        let s = cs(&["a", "b"], &["a", "b"]);
        assert_eq!((s.precision, s.recall, s.f), (100.0, 100.0, 100.0));
        let s = cs(&["a"], &["b"]);
        assert_eq!((s.precision, s.recall, s.f), (0.0, 0.0, 0.0));
        let s = cs(&["a", "a", "b"], &["a", "b", "c"]);
        assert!(close(s.precision, 66.7) && close(s.recall, 66.7));
        let swapped = cs(&["a", "b", "c"], &["a", "a", "b", "d"]);
        let back = cs(&["a", "a", "b", "d"], &["a", "b", "c"]);
        assert_eq!((swapped.precision, swapped.recall), (back.recall, back.precision));
    }

    #[test]
    fn co_examples() {
        assert_eq!(co(&[1, 2, 3], &[1, 2, 3]), 100.0);
        assert!(close(co(&["a", "b", "c"], &["a", "c", "b"]), 66.7));
        assert_eq!(co(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(co::<u8>(&[], &[]), 100.0);
    }

    #[test]
    fn plan_quality_examples() {
        let corpus = generate_toy_corpus(4, 30, &ToyParams::default()).unwrap();
        let g = corpus.games.iter().find(|g| g.plan.len() >= 3).unwrap();
        let q = plan_quality(&g.plan, &g.plan, &g.pool).unwrap();
        assert_eq!((q.cs.f, q.co), (100.0, 100.0));

        let empty = MacroPlan::default();
        assert_eq!(plan_quality(&empty, &g.plan, &g.pool).unwrap().cs.recall, 0.0);

        let bad = MacroPlan { steps: vec![g.pool.len()], terminated: true };
        assert!(plan_quality(&bad, &g.plan, &g.pool).is_err());
    }

    #[test]
    fn reversed_plan_keeps_selection() {
        use crate::corpus::{ParagraphPlan, PlanKind};
        let plans = ["X", "Y", "Z", "W"]
            .iter()
            .map(|e| ParagraphPlan {
                tokens: vec![e.to_string()],
                covered_entities: vec![e.to_string()],
                covered_events: vec![],
                kind: PlanKind::Entity,
            })
            .collect();
        let pool = PlanPool { plans };
        let oracle = MacroPlan { steps: vec![0, 1, 2, 3], terminated: true };
        let rev = MacroPlan { steps: vec![3, 2, 1, 0], terminated: true };
        let q = plan_quality(&rev, &oracle, &pool).unwrap();
        assert_eq!(q.cs.f, 100.0);
        let expected = 100.0 * (1.0 - dld(&["W", "Z", "Y", "X"], &["X", "Y", "Z", "W"]) as f64 / 4.0);
        assert_eq!(q.co, expected);
    }

    #[test]
    fn gold_against_gold() {
        let corpus = generate_toy_corpus(9, 20, &ToyParams::default()).unwrap();
        let docs: Vec<_> = corpus.games.iter().map(|g| g.document.clone()).collect();
        let tables: Vec<_> = corpus.games.iter().map(|g| g.table.clone()).collect();
        let r = evaluate(&docs, &docs, &tables, &Schema::toy()).unwrap();
        for v in [r.rg_precision, r.cs_f, r.co] {
            assert_eq!(v, 100.0);
        }
        assert!((r.bleu - 100.0).abs() < 1e-9);
        assert!(r.to_csv().starts_with("RG #,RG P%,CS P%,CS R%,CS F%,CO DLD%,BLEU\n"));
    }

    #[test]
    fn empty_generation_flags_rg() {
        let corpus = generate_toy_corpus(9, 3, &ToyParams::default()).unwrap();
        let gold: Vec<_> = corpus.games.iter().map(|g| g.document.clone()).collect();
        let tables: Vec<_> = corpus.games.iter().map(|g| g.table.clone()).collect();
        let empty = vec![Document::default(); 3];
        let r = evaluate(&empty, &gold, &tables, &Schema::toy()).unwrap();
        assert!(r.rg_undefined);
        assert_eq!((r.rg_count, r.rg_precision, r.cs_f, r.co, r.bleu), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert!(format!("{r}").contains("no relations"));
    }
}
