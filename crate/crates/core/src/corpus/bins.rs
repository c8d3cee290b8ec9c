use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Paragraph-length buckets. A length `l` falls in bin
/// `#{b in boundaries : l > b}`, so each boundary is the inclusive upper
/// edge of its bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinAssignment {
    pub boundaries: Vec<usize>,
    pub bin_count: usize,
}

impl BinAssignment {
    pub fn single() -> Self {
        BinAssignment {
            boundaries: vec![],
            bin_count: 1,
        }
    }

    pub fn bin(&self, length: usize) -> usize {
        self.boundaries.iter().filter(|&&b| length > b).count()
    }

    pub fn populations(&self, lengths: &[usize]) -> Vec<usize> {
        let mut pops = vec![0; self.bin_count];
        for &l in lengths {
            pops[self.bin(l)] += 1;
        }
        pops
    }
}

/// Quantile cut points giving `bins` buckets of roughly equal population.
///
/// Cut `k` is the `ceil(k·n/B)`-th smallest length. Tied cut points are
/// merged, which leaves the bins above them empty: with every length equal
/// and `B = 2`, all paragraphs share bin 0.
pub fn assign_length_bins(lengths: &[usize], bins: usize) -> Result<BinAssignment, CorpusError> {
    if bins < 1 {
        return Err(CorpusError::Parameter("bin count must be at least 1".into()));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let mut boundaries: Vec<usize> = vec![];
    if n > 0 {
        for k in 1..bins {
            let idx = (k * n).div_ceil(bins).max(1) - 1;
            let b = sorted[idx];
            if boundaries.last().is_none_or(|&last| b > last) {
                boundaries.push(b);
            }
        }
    }
    Ok(BinAssignment {
        boundaries,
        bin_count: bins,
    })
}
