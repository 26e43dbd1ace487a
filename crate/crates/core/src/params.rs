//! Named parameter declarations, the immutable parameter store, and
//! deterministic initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{numel, Dims, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
    FanInUniform,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Dims,
    pub fan_in: usize,
    pub init: Init,
}

impl ParamSpec {
    /// Convolution weight `[out, in/groups, kh, kw]`.
    pub fn conv_weight(name: impl Into<String>, dims: Dims) -> Self {
        ParamSpec {
            name: name.into(),
            dims,
            fan_in: dims[1] * dims[2] * dims[3],
            init: Init::FanInUniform,
        }
    }

    pub fn channel(name: impl Into<String>, channels: usize, init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            dims: [1, channels, 1, 1],
            fan_in: 1,
            init,
        }
    }

    pub fn numel(&self) -> usize {
        numel(&self.dims)
    }
}

/// Parameters keyed by dot-path name. There is no mutable access; derived
/// stores are built with [`ParamStore::with_replaced`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Tensor<T>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (name, t) in entries {
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::format(
                    "parameter store",
                    format!("duplicate name `{name}`"),
                ));
            }
        }
        Ok(ParamStore { entries: map })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count over all entries.
    pub fn total_elems(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Entries in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// A copy with one entry swapped out; dims must match.
    pub fn with_replaced(&self, name: &str, value: Tensor<T>) -> Result<Self> {
        let old = self.require(name)?;
        if old.dims() != value.dims() {
            return Err(Error::shape(
                "with_replaced",
                format!(
                    "`{name}` has dims {:?}, replacement {:?}",
                    old.dims(),
                    value.dims()
                ),
            ));
        }
        let mut entries = self.entries.clone();
        entries.insert(name.to_string(), value);
        Ok(ParamStore { entries })
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Names must match the declarations exactly, and dims must agree.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        let declared: BTreeMap<&str, &ParamSpec> =
            specs.iter().map(|s| (s.name.as_str(), s)).collect();
        let missing: Vec<String> = declared
            .keys()
            .filter(|k| !self.entries.contains_key(**k))
            .map(|k| k.to_string())
            .collect();
        let extra: Vec<String> = self
            .entries
            .keys()
            .filter(|k| !declared.contains_key(k.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::WeightMismatch { missing, extra });
        }
        let wrong: Vec<String> = declared
            .iter()
            .filter(|(name, spec)| self.entries[**name].dims() != spec.dims)
            .map(|(name, spec)| {
                format!(
                    "`{name}` has dims {:?}, model expects {:?}",
                    self.entries[*name].dims(),
                    spec.dims
                )
            })
            .collect();
        if !wrong.is_empty() {
            return Err(Error::shape("weights", wrong.join("; ")));
        }
        Ok(())
    }
}

fn stream_for(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// One independent random stream per (seed, name), so the result does not
/// depend on declaration order.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ParamStore<f32>> {
    ParamStore::from_entries(specs.iter().map(|spec| {
        let t = match spec.init {
            Init::Zeros => Tensor::zeros(spec.dims),
            Init::Ones => Tensor::ones(spec.dims),
            Init::FanInUniform => {
                let bound = (1.0 / spec.fan_in.max(1) as f64).sqrt() as f32;
                let mut rng = stream_for(seed, &spec.name);
                let data = (0..spec.numel())
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::from_raw(spec.dims, data)
            }
        };
        (spec.name.clone(), t)
    }))
}
