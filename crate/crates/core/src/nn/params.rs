use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub var: Var,
    /// Buffers such as batch-norm running statistics are not optimized.
    pub trainable: bool,
}

/// Owns every variable of a model, in creation order, and the seeded RNG
/// used to initialise them.
#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, tensor: Tensor, trainable: bool) -> Result<Var> {
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let var = Var::from_tensor(&tensor)?;
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            var: var.clone(),
            trainable,
        });
        Ok(var)
    }

    /// Normal(0, std) initialised trainable parameter.
    pub fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let values: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        self.insert(name.into(), t, true)
    }

    pub fn constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64, trainable: bool) -> Result<Var> {
        let t = Tensor::full(value, shape, &self.device)?.to_dtype(self.dtype)?;
        self.insert(name.into(), t, trainable)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.trainable)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.trainable().map(|p| p.var.elem_count()).sum()
    }

    pub fn save_safetensors(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.var.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Overwrites every variable with the tensor of the same name.
    pub fn load_safetensors(&self, path: &Path) -> Result<()> {
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        for p in &self.params {
            let t = loaded
                .get(&p.name)
                .ok_or_else(|| Error::ingest(path, format!("missing tensor {}", p.name)))?;
            if t.dims() != p.var.dims() {
                return Err(Error::ingest(
                    path,
                    format!("tensor {} has shape {:?}, expected {:?}", p.name, t.dims(), p.var.dims()),
                ));
            }
            p.var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copies all values from a store with identical names and shapes.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for p in &self.params {
            let src = other
                .get(&p.name)
                .ok_or_else(|| Error::Config(format!("missing parameter {}", p.name)))?;
            p.var.set(&src.var.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}
