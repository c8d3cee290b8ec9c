use rand::Rng;

use super::{Graph, Result, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named flat parameter tensors, owned outside any graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Parameters of a [`ParamStore`] loaded as leaves onto one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "parameter shape");
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            values,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter drawn uniformly from `[-scale, scale]`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.add(name, shape, values)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.params.iter_mut().map(|p| &mut p.values)
    }

    /// Loads every parameter onto `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let vars = self
            .params
            .iter()
            .map(|p| g.param(&p.shape, p.values.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { vars })
    }

    /// Gradients of the bound leaves, in store order.
    pub fn grads(&self, g: &Graph, bound: &Bound) -> Vec<Vec<f64>> {
        bound.vars.iter().map(|&v| g.grad(v).to_vec()).collect()
    }
}
