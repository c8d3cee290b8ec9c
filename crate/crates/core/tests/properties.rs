use macroplan::autodiff::{grad_check, AutodiffError, Graph, ParamStore};
use macroplan::corpus::{generate_toy_corpus, read_corpus, write_corpus, GameRecord, ToyParams};
use macroplan::inference::{apply_blocking, is_blocked, violations, DecodeConfig};
use macroplan::metrics::{co, cs, dld};
use proptest::prelude::*;

fn store(a: &[f64], b: &[f64], rows: usize) -> ParamStore {
    let mut ps = ParamStore::new();
    ps.add("a", &[rows, a.len() / rows], a.to_vec());
    ps.add("b", &[b.len()], b.to_vec());
    ps
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // A composite of every smooth op the model uses.
    #[test]
    fn composite_gradients_match_differences(
        a in prop::collection::vec(-1.5f64..1.5, 6),
        b in prop::collection::vec(-1.5f64..1.5, 3),
    ) {
        let mut ps = store(&a, &b, 2);
        let r = grad_check::<AutodiffError, _>(&mut ps, 1e-4, |g, p| {
            let (a, b) = (p.vars()[0], p.vars()[1]);
            let ab = g.matmul(a, b)?;
            let t = g.tanh(ab);
            let s = g.sigmoid(b);
            let row = g.row(a, 1)?;
            let m = g.mul(row, s)?;
            let sm = g.softmax(m)?;
            let ls = g.log_softmax(t)?;
            let e = g.exp(ls);
            let c = g.concat(&[sm, e]);
            let w = g.scatter(c, &[0, 2, 1, 0, 3], 4)?;
            let k = g.affine(w, 0.5, 0.25);
            let l = g.log(k)?;
            let d = g.dot(l, l)?;
            let pk = g.pick(t, 1)?;
            let st = g.stack_rows(&[d, pk])?;
            Ok(g.sum(st))
        })
        .unwrap();
        prop_assert!(r.max_rel_error < 1e-6, "{:?}", r);
    }

    #[test]
    fn normalizers_sum_to_one(xs in prop::collection::vec(-300.0f64..300.0, 1..24), rows in 1usize..4) {
        let cols = xs.len().div_ceil(rows);
        let mut vals = xs.clone();
        vals.resize(rows * cols, 0.0);
        let mut g = Graph::new();
        let v = g.constant(&[rows, cols], vals).unwrap();
        let s = g.softmax(v).unwrap();
        let ls = g.log_softmax(v).unwrap();
        for (r1, r2) in g.value(s).chunks(cols).zip(g.value(ls).chunks(cols)) {
            prop_assert!((r1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((r2.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edit_distance_is_a_bounded_symmetric_score(
        a in prop::collection::vec(0u8..4, 0..8),
        b in prop::collection::vec(0u8..4, 0..8),
    ) {
        let d = dld(&a, &b);
        prop_assert_eq!(d, dld(&b, &a));
        prop_assert!(d <= a.len().max(b.len()));
        prop_assert_eq!(d == 0, a == b);
        let c = co(&a, &b);
        prop_assert!((0.0..=100.0).contains(&c));
        let s = cs(&a, &b);
        prop_assert!((0.0..=100.0).contains(&s.f));
    }

    #[test]
    fn blocking_never_admits_a_violation(
        choices in prop::collection::vec(0usize..5, 0..14),
        bigrams: bool,
        repeats in 0usize..4,
    ) {
        let cfg = DecodeConfig { block_plan_bigrams: bigrams, max_unigram_repeats: repeats, ..DecodeConfig::default() };
        let mut plan = vec![];
        for c in choices {
            let mut probs = vec![0.01; 6];
            probs[c] = 0.9;
            let z = apply_blocking(&plan, &probs, &cfg);
            prop_assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let pick = (0..6).max_by(|&i, &j| z[i].total_cmp(&z[j]).then(j.cmp(&i))).unwrap();
            if pick == 5 {
                break;
            }
            prop_assert!(!is_blocked(&plan, pick, &cfg));
            plan.push(pick);
        }
        prop_assert!(violations(&plan, &cfg).is_empty(), "{:?}", plan);
    }
}

#[test]
fn corpus_files_round_trip() {
    let games = generate_toy_corpus(3, 12, &ToyParams::default()).unwrap().games;
    let recs: Vec<GameRecord> = games.iter().enumerate().map(|(i, g)| GameRecord::from_toy(format!("r{i}"), g)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_corpus(&path, &recs).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), recs);
    assert!(read_corpus(&dir.path().join("missing.jsonl")).is_err());
}
