//! Named parameter storage shared by models, optimizers and checkpoints.

use std::collections::BTreeMap;

use rand::Rng;

use super::array::{Array, Scalar};

#[derive(Debug, Clone)]
pub struct Entry<T> {
    pub value: Array<T>,
    pub trainable: bool,
}

/// Flat map from dotted names ("enc.conv1.w") to tensors. Non-trainable
/// entries hold things like batch-norm running statistics; they are saved in
/// checkpoints but skipped by optimizers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Array<T>, trainable: bool) {
        assert!(
            self.entries
                .insert(name.to_string(), Entry { value, trainable })
                .is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Array<T> {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array<T> {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .trainable
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, entry) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                entry.trainable = trainable;
            }
        }
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|name, _| !name.starts_with(prefix));
    }

    /// Overwrite every entry under `prefix` with the matching entry from
    /// `other`. Shapes must agree.
    pub fn copy_prefix_from(&mut self, other: &ParamStore<T>, prefix: &str) -> crate::Result<()> {
        for (name, entry) in other.entries.iter().filter(|(n, _)| n.starts_with(prefix)) {
            match self.entries.get_mut(name) {
                Some(mine) if mine.value.shape() == entry.value.shape() => {
                    mine.value = entry.value.clone();
                }
                Some(mine) => {
                    return Err(crate::Error::ShapeMismatch(format!(
                        "{name}: {:?} vs {:?}",
                        mine.value.shape(),
                        entry.value.shape()
                    )));
                }
                None => {
                    return Err(crate::Error::ShapeMismatch(format!("{name}: missing here")));
                }
            }
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            value: e.value.cast::<U>(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Uniform Kaiming init: weights on +/- sqrt(6 / fan_in).
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
) -> Array<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut arr = Array::zeros(shape);
    for v in arr.data_mut() {
        *v = T::from_f64(rng.gen_range(-bound..bound));
    }
    arr
}

/// Bias init on +/- 1 / sqrt(fan_in).
pub fn bias_uniform<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    fan_in: usize,
) -> Array<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut arr = Array::zeros(&[len]);
    for v in arr.data_mut() {
        *v = T::from_f64(rng.gen_range(-bound..bound));
    }
    arr
}
