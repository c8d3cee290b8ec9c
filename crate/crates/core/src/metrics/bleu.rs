use std::collections::HashMap;

use super::MetricsError;

/// Floor added to zero n-gram match counts.
pub const BLEU_EPSILON: f64 = 1e-9;

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *out.entry(w.iter().map(|t| t.as_ref()).collect()).or_default() += 1;
        }
    }
    out
}

/// Corpus-level BLEU-4 (percent) against one reference per candidate.
///
/// Clipped n-gram counts and lengths are summed over the corpus before the
/// geometric mean. A zero match count for some order becomes
/// `BLEU_EPSILON`, and every order's denominator is at least 1.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<R>]) -> Result<f64, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::Empty("bleu candidates"));
    }
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            what: "bleu",
            left: candidates.len(),
            right: references.len(),
        });
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngrams(r, n);
            for (g, k) in ngrams(c, n) {
                total[n - 1] += k;
                matched[n - 1] += k.min(rc.get(&g).copied().unwrap_or(0));
            }
        }
    }
    if matched[0] == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4)
        .map(|i| {
            let num = if matched[i] == 0 { BLEU_EPSILON } else { matched[i] as f64 };
            (num / total[i].max(1) as f64).ln()
        })
        .sum::<f64>()
        / 4.0;
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * log_p.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toks;

    #[test]
    fn perfect_match() {
        let c = vec![toks("the Hawks scored 5 runs on 9 hits .")];
        assert!((bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_overlap() {
        assert!(bleu(&[toks("a b c d")], &[toks("w x y z")]).unwrap() < 0.1);
    }

    #[test]
    fn short_candidate_matches_reference_value() {
        let v = bleu(&[toks("the cat sat")], &[toks("the cat sat down")]).unwrap();
        assert!((v - 0.4029351667284424).abs() < 1e-6, "{v}");
    }

    #[test]
    fn corpus_level_aggregation() {
        let c = vec![toks("a b c d"), toks("x y q w")];
        let r = vec![toks("a b c d e"), toks("x y z w")];
        assert!((bleu(&c, &r).unwrap() - 54.535260304042396).abs() < 1e-6);
        let one = bleu(&[toks("the cat sat on a mat")], &[toks("the cat sat on the mat")]).unwrap();
        assert!((one - 53.7284965911771).abs() < 1e-6);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let none: Vec<Vec<String>> = vec![];
        assert!(bleu(&none, &none).is_err());
        assert!(bleu(&[toks("a")], &[toks("a"), toks("b")]).is_err());
    }
}
