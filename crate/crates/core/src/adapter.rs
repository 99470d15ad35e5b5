//! Low-rank adapter deltas: expansion, mixing and merging.
//!
//! The mixed delta of two adapters is the rank-`max(r1, r2)` truncated SVD of
//! their element-wise mean. Sum and mean mixes are kept for ablations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::linalg::{numerical_rank, truncated_svd, Matrix};
use crate::nmlf::{self, Dtype, Entry};

/// Entry-name suffixes for factor files: `<layer>.lora_A` is the r x k_cols
/// down projection, `<layer>.lora_B` the d x r up projection.
pub const DOWN_SUFFIX: &str = ".lora_A";
pub const UP_SUFFIX: &str = ".lora_B";

#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    pub down: Matrix,
    pub up: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdapter {
    pub name: String,
    pub layers: BTreeMap<String, LoraFactors>,
    pub rank: usize,
    pub scale: f64,
}

impl LowRankAdapter {
    /// Infers the rank from the factors and checks every layer agrees with it.
    pub fn new(name: impl Into<String>, layers: BTreeMap<String, LoraFactors>, scale: f64) -> Result<Self> {
        let rank = layers.values().next().map_or(0, |f| f.down.rows());
        for (layer, f) in &layers {
            if f.down.rows() != rank || f.up.cols() != rank {
                return Err(ForgeError::Shape {
                    layer: layer.clone(),
                    detail: format!(
                        "up is {}x{}, down is {}x{}, expected rank {rank}",
                        f.up.rows(),
                        f.up.cols(),
                        f.down.rows(),
                        f.down.cols()
                    ),
                });
            }
        }
        if rank == 0 {
            return Err(ForgeError::Input("adapter has no layers or zero rank".into()));
        }
        Ok(LowRankAdapter {
            name: name.into(),
            layers,
            rank,
            scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDelta {
    pub name: String,
    pub layers: BTreeMap<String, Matrix>,
    pub effective_rank: usize,
}

impl AdapterDelta {
    pub fn negate(&self) -> AdapterDelta {
        AdapterDelta {
            name: format!("-{}", self.name),
            layers: self.layers.iter().map(|(k, m)| (k.clone(), m.scale(-1.0))).collect(),
            effective_rank: self.effective_rank,
        }
    }

    pub fn to_entries(&self) -> Vec<Entry> {
        named_entries(&self.layers)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    pub layers: BTreeMap<String, Matrix>,
}

impl WeightSet {
    pub fn to_entries(&self) -> Vec<Entry> {
        named_entries(&self.layers)
    }

    pub fn from_entries(entries: Vec<Entry>) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for e in entries {
            if layers.insert(e.name.clone(), e.matrix).is_some() {
                return Err(ForgeError::Input(format!("duplicate entry `{}`", e.name)));
            }
        }
        Ok(WeightSet { layers })
    }
}

fn named_entries(layers: &BTreeMap<String, Matrix>) -> Vec<Entry> {
    layers
        .iter()
        .map(|(name, m)| Entry {
            name: name.clone(),
            dtype: Dtype::F64,
            matrix: m.clone(),
        })
        .collect()
}

/// `scale * up * down` for every layer.
pub fn expand_delta(a: &LowRankAdapter) -> Result<AdapterDelta> {
    let layers = a
        .layers
        .iter()
        .map(|(name, f)| {
            let product = f.up.matmul(&f.down).ok_or_else(|| ForgeError::Shape {
                layer: name.clone(),
                detail: format!(
                    "cannot multiply up {}x{} by down {}x{}",
                    f.up.rows(),
                    f.up.cols(),
                    f.down.rows(),
                    f.down.cols()
                ),
            })?;
            Ok((name.clone(), product.scale(a.scale)))
        })
        .collect::<Result<_>>()?;
    Ok(AdapterDelta {
        name: a.name.clone(),
        layers,
        effective_rank: a.rank,
    })
}

fn check_compatible(d1: &AdapterDelta, d2: &AdapterDelta) -> Result<()> {
    let k1: BTreeSet<&String> = d1.layers.keys().collect();
    let k2: BTreeSet<&String> = d2.layers.keys().collect();
    if k1 != k2 {
        let only1: Vec<_> = k1.difference(&k2).collect();
        let only2: Vec<_> = k2.difference(&k1).collect();
        return Err(ForgeError::LayerMismatch(format!(
            "only in `{}`: {only1:?}; only in `{}`: {only2:?}",
            d1.name, d2.name
        )));
    }
    for (name, m1) in &d1.layers {
        let m2 = &d2.layers[name];
        if m1.shape() != m2.shape() {
            return Err(ForgeError::Shape {
                layer: name.clone(),
                detail: format!("{:?} vs {:?}", m1.shape(), m2.shape()),
            });
        }
    }
    Ok(())
}

fn combine(
    d1: &AdapterDelta,
    d2: &AdapterDelta,
    name: String,
    f: impl Fn(&Matrix, &Matrix) -> Matrix + Sync,
) -> Result<AdapterDelta> {
    check_compatible(d1, d2)?;
    let layers = d1
        .layers
        .iter()
        .map(|(k, m)| (k.clone(), f(m, &d2.layers[k])))
        .collect();
    Ok(AdapterDelta {
        name,
        layers,
        effective_rank: d1.effective_rank + d2.effective_rank,
    })
}

pub fn mix_mean(d1: &AdapterDelta, d2: &AdapterDelta) -> Result<AdapterDelta> {
    combine(d1, d2, format!("mean({}, {})", d1.name, d2.name), |a, b| {
        a.add(b).expect("checked shapes").scale(0.5)
    })
}

pub fn mix_sum(d1: &AdapterDelta, d2: &AdapterDelta) -> Result<AdapterDelta> {
    combine(d1, d2, format!("sum({}, {})", d1.name, d2.name), |a, b| {
        a.add(b).expect("checked shapes")
    })
}

/// Truncates the mean delta of every layer to its top `max(r1, r2)` singular
/// triplets.
pub fn mix_svd(d1: &AdapterDelta, d2: &AdapterDelta, r1: usize, r2: usize) -> Result<AdapterDelta> {
    if r1 == 0 || r2 == 0 {
        return Err(ForgeError::Input("adapter ranks must be >= 1".into()));
    }
    let mean = mix_mean(d1, d2)?;
    let r = r1.max(r2);
    let layers: Vec<(String, Matrix)> = mean
        .layers
        .par_iter()
        .map(|(name, m)| {
            let t = truncated_svd(m, r).map_err(|e| ForgeError::Numerical {
                layer: name.clone(),
                detail: format!("SVD did not converge after {} sweeps", e.sweeps),
            })?;
            Ok((name.clone(), t.reconstruct()))
        })
        .collect::<Result<_>>()?;
    Ok(AdapterDelta {
        name: format!("svd({}, {})", d1.name, d2.name),
        layers: layers.into_iter().collect(),
        effective_rank: r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMethod {
    Svd,
    Mean,
    Sum,
}

pub fn mix(d1: &AdapterDelta, d2: &AdapterDelta, method: MixMethod) -> Result<AdapterDelta> {
    match method {
        MixMethod::Svd => mix_svd(d1, d2, d1.effective_rank, d2.effective_rank),
        MixMethod::Mean => mix_mean(d1, d2),
        MixMethod::Sum => mix_sum(d1, d2),
    }
}

/// `W_base + delta` for every layer of the delta; other base layers pass through.
pub fn merge(base: &WeightSet, mixed: &AdapterDelta) -> Result<WeightSet> {
    let mut layers = base.layers.clone();
    for (name, delta) in &mixed.layers {
        let w = layers
            .get_mut(name)
            .ok_or_else(|| ForgeError::LayerMismatch(format!("layer `{name}` missing from base weights")))?;
        *w = w.add(delta).ok_or_else(|| ForgeError::Shape {
            layer: name.clone(),
            detail: format!("base {:?} vs delta {:?}", w.shape(), delta.shape()),
        })?;
    }
    Ok(WeightSet { layers })
}

/// Loads an adapter from an NMLF file holding either `.lora_A`/`.lora_B`
/// factor pairs or already-expanded delta matrices. Expanded deltas get their
/// numerical rank (largest over layers) as the effective rank.
pub fn load_delta(path: &Path, scale: f64) -> Result<AdapterDelta> {
    let entries = nmlf::read(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    delta_from_entries(name, entries, scale)
}

pub fn delta_from_entries(name: String, entries: Vec<Entry>, scale: f64) -> Result<AdapterDelta> {
    let factor_like = |n: &str| n.ends_with(DOWN_SUFFIX) || n.ends_with(UP_SUFFIX);
    let n_factor = entries.iter().filter(|e| factor_like(&e.name)).count();
    if n_factor == 0 {
        let layers = WeightSet::from_entries(entries)?.layers;
        if layers.is_empty() {
            return Err(ForgeError::Input(format!("`{name}` holds no layers")));
        }
        let mut rank = 0;
        for (layer, m) in &layers {
            let r = numerical_rank(m).map_err(|e| ForgeError::Numerical {
                layer: layer.clone(),
                detail: format!("SVD did not converge after {} sweeps", e.sweeps),
            })?;
            rank = rank.max(r);
        }
        let layers = layers.into_iter().map(|(k, m)| (k, m.scale(scale))).collect();
        return Ok(AdapterDelta {
            name,
            layers,
            effective_rank: rank.max(1),
        });
    }
    if n_factor != entries.len() {
        return Err(ForgeError::Input(format!(
            "`{name}` mixes factor entries with plain matrices"
        )));
    }
    let mut downs = BTreeMap::new();
    let mut ups = BTreeMap::new();
    for e in entries {
        if let Some(layer) = e.name.strip_suffix(DOWN_SUFFIX) {
            downs.insert(layer.to_string(), e.matrix);
        } else if let Some(layer) = e.name.strip_suffix(UP_SUFFIX) {
            ups.insert(layer.to_string(), e.matrix);
        }
    }
    let mut layers = BTreeMap::new();
    for (layer, down) in downs {
        let up = ups
            .remove(&layer)
            .ok_or_else(|| ForgeError::Input(format!("`{layer}` has {DOWN_SUFFIX} but no {UP_SUFFIX}")))?;
        layers.insert(layer, LoraFactors { down, up });
    }
    if let Some(layer) = ups.keys().next() {
        return Err(ForgeError::Input(format!(
            "`{layer}` has {UP_SUFFIX} but no {DOWN_SUFFIX}"
        )));
    }
    expand_delta(&LowRankAdapter::new(name, layers, scale)?)
}
