//! Named parameter storage in declaration order.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::backend::{Init, ParamDecl};
use crate::autograd::Parameter;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Initializes every declaration in order from one seeded stream.
    pub fn from_decls(decls: &[ParamDecl], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for d in decls {
            let n: usize = d.shape.iter().product();
            let data: Vec<f32> = match d.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::TruncNormal(std) => {
                    let dist = Normal::new(0.0f32, std).map_err(|e| Error::Model(e.to_string()))?;
                    (0..n)
                        .map(|_| loop {
                            let v = dist.sample(&mut rng);
                            if v.abs() <= 2.0 * std {
                                break v;
                            }
                        })
                        .collect()
                }
                Init::FanInUniform => {
                    let fan_in: usize = d.shape[1..].iter().product::<usize>().max(1);
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound);
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            store.insert(&d.name, Parameter::new(Tensor::new(&d.shape, data)?))?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, p: Parameter) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateTensor(name.to_string()));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.params.push(p);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.params.iter_mut().collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decl(name: &str, shape: &[usize], init: Init) -> ParamDecl {
        ParamDecl {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    #[test]
    fn init_kinds() {
        let decls = [
            decl("a", &[4, 2, 3, 3], Init::FanInUniform),
            decl("b", &[4], Init::Zeros),
            decl("c", &[1000], Init::TruncNormal(0.02)),
            decl("d", &[3], Init::Ones),
        ];
        let s = ParamStore::from_decls(&decls, 1).unwrap();
        let bound = 1.0 / 18f32.sqrt();
        assert!(s.get("a").unwrap().value.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(s.get("b").unwrap().value, Tensor::zeros(&[4]));
        assert!(s.get("c").unwrap().value.data().iter().all(|v| v.abs() <= 0.04));
        assert_eq!(s.param_count(), 72 + 4 + 1000 + 3);
        assert_eq!(s, ParamStore::from_decls(&decls, 1).unwrap());
        assert_ne!(s, ParamStore::from_decls(&decls, 2).unwrap());
    }

    #[test]
    fn duplicate_rejected() {
        let mut s = ParamStore::new();
        s.insert("x", Parameter::new(Tensor::zeros(&[1]))).unwrap();
        assert!(matches!(
            s.insert("x", Parameter::new(Tensor::zeros(&[1]))),
            Err(Error::DuplicateTensor(_))
        ));
    }
}
