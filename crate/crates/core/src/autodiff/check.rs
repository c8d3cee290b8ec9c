use super::{AutodiffError, Bound, Graph, ParamStore, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients against fourth-order central differences
/// (points `x ± h`, `x ± 2h`) for every entry of every parameter in `params`.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<E, F>(params: &mut ParamStore, h: f64, mut f: F) -> Result<GradCheckReport, E>
where
    E: From<AutodiffError>,
    F: FnMut(&mut Graph, &Bound) -> Result<Var, E>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let root = f(&mut g, &bound)?;
    g.backward(root)?;
    let analytic = params.grads(&g, &bound);
    drop(g);

    let mut eval = |params: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g)?;
        let root = f(&mut g, &bound)?;
        Ok(g.scalar(root))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for p in 0..params.len() {
        let id = super::ParamId(p);
        for j in 0..params.get(id).values.len() {
            let orig = params.get(id).values[j];
            let mut at = |x: f64, params: &mut ParamStore| -> Result<f64, E> {
                params.get_mut(id).values[j] = x;
                eval(params)
            };
            let (p1, m1) = (at(orig + h, params)?, at(orig - h, params)?);
            let (p2, m2) = (at(orig + 2.0 * h, params)?, at(orig - 2.0 * h, params)?);
            params.get_mut(id).values[j] = orig;

            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let a = analytic[p][j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((params.get(id).name.clone(), j));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::OpKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", &[3], vec![0.5, -1.0, 2.0]);
        let r = grad_check::<AutodiffError, _>(&mut ps, 1e-5, |g, b| {
            let x = g.vector(vec![1.0, 2.0, -3.0]);
            g.dot(b[w], x)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn tanh_layer_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::new();
        let w = ps.add_uniform("w", &[4, 3], 2.0, &mut rng);
        let x: Vec<f64> = vec![0.3, -1.2, 0.8];
        let r = grad_check::<AutodiffError, _>(&mut ps, 1e-5, |g, b| {
            let x = g.vector(x.clone());
            let h = g.matmul(b[w], x)?;
            let t = g.tanh(h);
            Ok(g.sum(t))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamStore::new();
        let w = ps.add_uniform("w", &[2, 2], 1.0, &mut rng);
        let r = grad_check::<AutodiffError, _>(&mut ps, 1e-5, |g, b| {
            g.inject_backward_fault(OpKind::Tanh);
            let x = g.vector(vec![0.7, -0.4]);
            let h = g.matmul(b[w], x)?;
            let t = g.tanh(h);
            Ok(g.sum(t))
        })
        .unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }
}
