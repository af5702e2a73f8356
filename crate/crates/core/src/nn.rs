//! Named parameters and the small layer building blocks the models compose.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;

use crate::autograd::{Gradients, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered set of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Integrity(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                p.value.shape(),
                value.shape(),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copy values from `other` by name; every parameter here must be present
    /// there with the same shape.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .by_name(&p.name)
                .ok_or_else(|| Error::Integrity(format!("missing parameter `{}`", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape(
                    "load_from",
                    p.value.shape(),
                    src.value.shape(),
                ));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    /// Graph leaves for one forward pass. Leaves only track gradients when
    /// `trainable` is set.
    pub fn bind(&self, trainable: bool) -> Bound<T> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    Var::leaf(p.value.clone())
                } else {
                    Var::constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound into one graph.
pub struct Bound<T: Real = f32> {
    vars: Vec<Var<T>>,
}

impl<T: Real> Index<ParamId> for Bound<T> {
    type Output = Var<T>;
    fn index(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }
}

impl<T: Real> Bound<T> {
    /// Bind caller-owned leaves, in store order.
    pub fn from_vars(vars: Vec<Var<T>>) -> Self {
        Bound { vars }
    }

    /// Gradient per parameter, in store order.
    pub fn grads(&self, g: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| g.wrt(v)).collect()
    }
}

/// Element-wise sum of per-sample gradient lists, in the given order.
pub fn sum_grads<T: Real>(parts: Vec<Vec<Tensor<T>>>) -> Option<Vec<Tensor<T>>> {
    let mut iter = parts.into_iter();
    let mut total = iter.next()?;
    for part in iter {
        for (acc, g) in total.iter_mut().zip(&part) {
            acc.add_assign(g);
        }
    }
    Some(total)
}

/// `uniform(-1/√fan_in, 1/√fan_in)`
pub fn fan_in_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

/// `normal(0, √(2/fan_in))`
pub fn kaiming_normal<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::<f64>::randn(shape, rng).map(|v| v * std).cast()
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[d_out, d_in], d_in, rng),
        )?;
        let b = if bias {
            Some(store.add(format!("{name}.bias"), fan_in_uniform(&[d_out], d_in, rng))?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.linear(&p[self.w], self.b.map(|b| &p[b]))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub dilation: usize,
    pub padding: usize,
}

impl Conv1d {
    /// "Same"-padded convolution (odd kernel).
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {kernel}"
            )));
        }
        let fan_in = c_in * kernel;
        let w = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[c_out, c_in, kernel], fan_in, rng),
        )?;
        let b = store.add(
            format!("{name}.bias"),
            fan_in_uniform(&[c_out], fan_in, rng),
        )?;
        Ok(Conv1d {
            w,
            b,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        })
    }

    /// Zero weights and bias, so the layer outputs zero until trained.
    pub fn zeroed<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.weight"), Tensor::zeros(&[c_out, c_in, 1]))?;
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Conv1d {
            w,
            b,
            dilation: 1,
            padding: 0,
        })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.conv1d(&p[self.w], Some(&p[self.b]), self.dilation, self.padding)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[d]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d]))?,
        })
    }

    pub fn forward<T: Real>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.layer_norm(&p[self.gamma], &p[self.beta], Self::EPS)
    }
}
