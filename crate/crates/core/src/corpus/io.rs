use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Document, Table, ToyGame};

/// One line of a JSONL corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub id: String,
    pub table: Table,
    /// Whitespace-tokenized summary with `<P>` after every paragraph.
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_desc: Option<Vec<String>>,
}

impl GameRecord {
    pub fn from_toy(id: impl Into<String>, game: &ToyGame) -> Self {
        GameRecord {
            id: id.into(),
            table: game.table.clone(),
            summary: game.document.to_text(),
            plan: Some(game.plan.steps.clone()),
            plan_desc: Some(game.plan.steps.iter().map(|&s| game.pool.plans[s].descriptor()).collect()),
        }
    }

    pub fn document(&self) -> Document {
        Document::from_text(&self.summary)
    }
}

pub fn write_corpus(path: &Path, games: &[GameRecord]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for g in games {
        let line = serde_json::to_string(g).map_err(|e| CorpusError::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_corpus(path: &Path) -> Result<Vec<GameRecord>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut games = vec![];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            line: i + 1,
            detail: e.to_string(),
        })?;
        games.push(g);
    }
    Ok(games)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyParams};

    #[test]
    fn jsonl_round_trip() {
        let corpus = generate_toy_corpus(3, 5, &ToyParams::default()).unwrap();
        let recs: Vec<_> = corpus
            .games
            .iter()
            .enumerate()
            .map(|(i, g)| GameRecord::from_toy(format!("g{i}"), g))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &recs).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back[0].document(), corpus.games[0].document);
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "\n{\"id\": 1}\n").unwrap();
        assert!(matches!(read_corpus(&path), Err(CorpusError::Format { line: 2, .. })));
    }
}
