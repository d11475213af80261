use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Result, Shape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::seed::rng_for;

/// Initialization drawn per tensor from a stream keyed by (seed, name).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Const(f64),
    Uniform(f64),
    Normal(f64),
    TruncNormal(f64),
    /// He normal over fan-out: std = sqrt(2 / (out_channels·kh·kw / groups)).
    KaimingFanOut { fan_out: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as running statistics.
    Buffer,
}

#[derive(Clone)]
pub struct Entry {
    pub var: Var,
    pub kind: ParamKind,
    pub init: Init,
}

struct Store {
    dtype: DType,
    device: Device,
    seed: u64,
    entries: Mutex<BTreeMap<String, Entry>>,
}

/// Named tensor store plus a path prefix, cheap to clone.
#[derive(Clone)]
pub struct Params {
    store: Arc<Store>,
    prefix: String,
}

fn std_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sample(init: Init, n: usize, seed: u64, name: &str) -> Vec<f64> {
    let mut rng = rng_for(seed, &["init", name]);
    match init {
        Init::Const(v) => vec![v; n],
        Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
        Init::Normal(s) => (0..n).map(|_| s * std_normal(&mut rng)).collect(),
        // Resampled outside two standard deviations.
        Init::TruncNormal(s) => (0..n)
            .map(|_| loop {
                let z = std_normal(&mut rng);
                if z.abs() <= 2.0 {
                    break s * z;
                }
            })
            .collect(),
        Init::KaimingFanOut { fan_out } => {
            let s = (2.0 / fan_out.max(1) as f64).sqrt();
            (0..n).map(|_| s * std_normal(&mut rng)).collect()
        }
    }
}

impl Params {
    pub fn new(dtype: DType, device: Device, seed: u64) -> Self {
        Self {
            store: Arc::new(Store { dtype, device, seed, entries: Mutex::new(BTreeMap::new()) }),
            prefix: String::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn seed(&self) -> u64 {
        self.store.seed
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Self { store: self.store.clone(), prefix }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn create(&self, name: &str, shape: impl Into<Shape>, init: Init, kind: ParamKind) -> Result<Var> {
        let full = self.full(name);
        let shape = shape.into();
        let mut entries = self.store.entries.lock().unwrap();
        if let Some(e) = entries.get(&full) {
            if e.var.shape() != &shape {
                candle_core::bail!("parameter {full} requested as {shape:?} but exists as {:?}", e.var.shape());
            }
            return Ok(e.var.clone());
        }
        let t = Tensor::from_vec(sample(init, shape.elem_count(), self.store.seed, &full), shape, &self.store.device)?
            .to_dtype(self.store.dtype)?;
        let var = Var::from_tensor(&t)?;
        entries.insert(full, Entry { var: var.clone(), kind, init });
        Ok(var)
    }

    pub fn weight(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Var> {
        self.create(name, shape, init, ParamKind::Trainable)
    }

    pub fn buffer(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Var> {
        self.create(name, shape, init, ParamKind::Buffer)
    }

    /// Every entry under this prefix, keyed by full name.
    pub fn entries(&self) -> BTreeMap<String, Entry> {
        let entries = self.store.entries.lock().unwrap();
        entries
            .iter()
            .filter(|(k, _)| self.prefix.is_empty() || k.starts_with(&format!("{}.", self.prefix)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn trainable(&self) -> Vec<Var> {
        self.entries().into_values().filter(|e| e.kind == ParamKind::Trainable).map(|e| e.var).collect()
    }

    pub fn get(&self, full_name: &str) -> Option<Entry> {
        self.store.entries.lock().unwrap().get(full_name).cloned()
    }

    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.entries().into_iter().map(|(k, e)| (k, e.var.as_tensor().detach())).collect()
    }

    pub fn n_elements(&self) -> usize {
        self.entries().values().map(|e| e.var.elem_count()).sum()
    }

    /// Restores the recorded initialization of `full_name`, drawn from
    /// `seed` so reinitialization is reproducible.
    pub fn reinit(&self, full_name: &str, seed: u64) -> Result<()> {
        let e = self.get(full_name).ok_or_else(|| candle_core::Error::Msg(format!("no parameter {full_name}")))?;
        let shape = e.var.shape().clone();
        let t = Tensor::from_vec(sample(e.init, shape.elem_count(), seed, full_name), shape, &self.store.device)?
            .to_dtype(self.store.dtype)?;
        e.var.set(&t)
    }

    pub fn set(&self, full_name: &str, value: &Tensor) -> Result<()> {
        let e = self.get(full_name).ok_or_else(|| candle_core::Error::Msg(format!("no parameter {full_name}")))?;
        if e.var.shape() != value.shape() {
            candle_core::bail!("shape mismatch for {full_name}: {:?} vs {:?}", e.var.shape(), value.shape());
        }
        e.var.set(&value.to_dtype(self.store.dtype)?.to_device(&self.store.device)?)
    }

    /// Loads every tensor of `values` whose name exists here. Returns names
    /// missing from `values`.
    pub fn load(&self, values: &HashMap<String, Tensor>) -> Result<Vec<String>> {
        let mut missing = Vec::new();
        for name in self.entries().keys() {
            match values.get(name) {
                Some(t) => self.set(name, t)?,
                None => missing.push(name.clone()),
            }
        }
        Ok(missing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_by_name() {
        let a = Params::new(DType::F32, Device::Cpu, 3);
        let b = Params::new(DType::F32, Device::Cpu, 3);
        let wa = a.pp("x").weight("w", (4, 4), Init::Normal(1.0)).unwrap();
        let _ = b.pp("y").weight("w", (4, 4), Init::Normal(1.0)).unwrap();
        let wb = b.pp("x").weight("w", (4, 4), Init::Normal(1.0)).unwrap();
        let d = (wa.as_tensor() - wb.as_tensor()).unwrap().abs().unwrap().sum_all().unwrap();
        assert_eq!(d.to_scalar::<f32>().unwrap(), 0.0);
        assert_eq!(a.entries().len(), 1);
        assert_eq!(b.pp("y").entries().len(), 1);
    }

    #[test]
    fn reinit_restores() {
        let p = Params::new(DType::F64, Device::Cpu, 1);
        let w = p.weight("w", 3, Init::Uniform(0.5)).unwrap();
        let before = w.as_tensor().to_vec1::<f64>().unwrap();
        w.set(&Tensor::zeros(3, DType::F64, &Device::Cpu).unwrap()).unwrap();
        p.reinit("w", 1).unwrap();
        assert_eq!(w.as_tensor().to_vec1::<f64>().unwrap(), before);
        assert!(before.iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn kaiming_scale() {
        let p = Params::new(DType::F64, Device::Cpu, 0);
        let w = p.weight("w", 20000, Init::KaimingFanOut { fan_out: 8 }).unwrap();
        let v = w.as_tensor().to_vec1::<f64>().unwrap();
        let var = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!((var - 0.25).abs() < 0.02);
    }
}
