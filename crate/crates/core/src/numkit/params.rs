use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2, IxDyn};

use super::NumError;

/// One named tensor inside a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// Ordered, named collection of weight matrices and bias vectors.
///
/// Networks address their entries by index (registration order), so lookups on
/// the hot path never touch the names. Names exist for checkpoints and
/// diagnostics. Gradients and optimizer moments use a set with the same layout,
/// see [`ParameterSet::zeros_like`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: Vec<Entry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> usize {
        self.entries.push(Entry {
            name: name.into(),
            value,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, idx: usize) -> &Entry {
        &self.entries[idx]
    }

    pub fn get(&self, idx: usize) -> &ArrayD<f64> {
        &self.entries[idx].value
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut ArrayD<f64> {
        &mut self.entries[idx].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn matrix(&self, idx: usize) -> ArrayView2<'_, f64> {
        self.entries[idx]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("entry is not a matrix")
    }

    pub fn matrix_mut(&mut self, idx: usize) -> ArrayViewMut2<'_, f64> {
        self.entries[idx]
            .value
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("entry is not a matrix")
    }

    pub fn vector(&self, idx: usize) -> ArrayView1<'_, f64> {
        self.entries[idx]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("entry is not a vector")
    }

    pub fn vector_mut(&mut self, idx: usize) -> ArrayViewMut1<'_, f64> {
        self.entries[idx]
            .value
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("entry is not a vector")
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: ArrayD::zeros(IxDyn(e.value.shape())),
                })
                .collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        for e in &mut self.entries {
            e.value.fill(value);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.value.iter().all(|v| v.is_finite()))
    }

    /// Name of the first entry holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.value.iter().any(|v| !v.is_finite()))
            .map(|e| e.name.as_str())
    }

    /// Checks that `other` has the same entry count and per-entry shapes.
    pub fn check_same_layout(&self, other: &ParameterSet) -> Result<(), NumError> {
        if self.entries.len() != other.entries.len() {
            return Err(NumError::Shape(format!(
                "parameter sets differ in entry count: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.value.shape() != b.value.shape() {
                return Err(NumError::Shape(format!(
                    "entry {}: shape {:?} vs {:?}",
                    a.name,
                    a.value.shape(),
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Overwrites every entry with the values of `other` (layouts must match).
    pub fn assign(&mut self, other: &ParameterSet) -> Result<(), NumError> {
        self.check_same_layout(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value.assign(&b.value);
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParameterSet, scale: f64) -> Result<(), NumError> {
        self.check_same_layout(other)?;
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value.scaled_add(scale, &b.value);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.value.mapv_inplace(|v| v * factor);
        }
    }

    /// Euclidean norm over every scalar in the set.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.value.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Flat view of scalar `i` counted across entries in order.
    pub fn scalar(&self, mut i: usize) -> f64 {
        for e in &self.entries {
            if i < e.value.len() {
                return *e.value.iter().nth(i).unwrap();
            }
            i -= e.value.len();
        }
        panic!("scalar index out of range");
    }
}
