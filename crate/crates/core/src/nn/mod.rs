//! Named parameter storage shared by every model.

use std::collections::HashMap;
use std::ops::Index;

use crate::autograd::{finite_diff_gradcheck, GradcheckReport, GradcheckSpec, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Frozen parameters still receive gradients but are skipped by the optimizer.
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, uniquely named set of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

/// Parameters recorded as leaves on one tape, indexable by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            grad: Tensor::zeros(value.shape()),
            name,
            value,
            trainable: true,
        });
        Ok(ParamId(id))
    }

    /// Swaps in a new value (possibly of a different shape) and clears the
    /// parameter's gradient.
    pub fn replace(&mut self, id: ParamId, value: Tensor) {
        let p = &mut self.params[id.0];
        p.grad = Tensor::zeros(value.shape());
        p.value = value;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
        }
    }

    /// Records trainable parameters as leaves and frozen ones as constants,
    /// so backward skips work that would only feed frozen tensors.
    pub fn bind_trainable(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| if p.trainable { tape.leaf(p.value.clone()) } else { tape.constant(p.value.clone()) })
                .collect(),
        }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_constant(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect(),
        }
    }

    /// Adds the sweep's gradients into each parameter's `grad` buffer.
    pub fn accumulate(&mut self, bound: &Bound, grads: &mut Gradients) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            p.grad.add_assign(&grads.take(v))?;
        }
        Ok(())
    }

    pub fn set_trainable(&mut self, mut pred: impl FnMut(&str) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(&p.name);
        }
    }

    /// Finite-difference check of `loss` with respect to every parameter.
    pub fn gradcheck<F>(&mut self, loss: F, spec: &GradcheckSpec) -> Result<(GradcheckReport, Option<String>)>
    where
        F: Fn(&Tape, &Bound) -> Result<Var>,
    {
        let mut values: Vec<Tensor> = self.params.iter().map(|p| p.value.clone()).collect();
        let report = finite_diff_gradcheck(
            |tape, vars| {
                let bound = Bound { vars: vars.to_vec() };
                loss(tape, &bound)
            },
            &mut values,
            spec,
        )?;
        let worst = report.worst.map(|(t, _)| self.params[t].name.clone());
        Ok((report, worst))
    }
}

/// Affine layer parameters (`weight: in×out`, `bias: out`).
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        tape.add(y, p[self.bias])
    }
}

/// Layer-norm affine parameters.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gamma], p[self.beta], LAYER_NORM_EPS)
    }
}

/// Convolution parameters (`weight: out×(in/groups)×k×k`, `bias: out`).
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv {
    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            p[self.weight],
            Some(p[self.bias]),
            (self.stride, self.stride),
            (self.padding, self.padding),
            self.groups,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::zeros(&[1])).unwrap();
        assert!(store.add("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn backward_accumulates_additively() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_fn(&[3], |i| i as f64 + 1.0)).unwrap();
        let run = |store: &mut ParamStore| {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let sq = tape.mul(p[w], p[w]).unwrap();
            let loss = tape.sum(sq).unwrap();
            let mut g = tape.backward(loss).unwrap();
            store.accumulate(&p, &mut g).unwrap();
        };
        run(&mut store);
        let once = store.get(w).grad.clone();
        run(&mut store);
        let twice = store.get(w).grad.clone();
        assert_eq!(once.data(), &[2.0, 4.0, 6.0]);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        store.zero_grad();
        assert_eq!(store.get(w).grad.sum(), 0.0);
    }
}
