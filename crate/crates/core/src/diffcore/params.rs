use std::sync::Arc;

use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape as a matrix: rank-1 entries become a single row, higher ranks
    /// fold every leading axis into the rows.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            dims => {
                let cols = *dims.last().unwrap();
                (dims[..dims.len() - 1].iter().product(), cols)
            }
        }
    }
}

/// Ordered mapping from a flat parameter vector to named tensors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let entry = LayoutEntry {
            name: name.into(),
            offset: self.total,
            shape,
        };
        self.total += entry.len();
        self.entries.push(entry);
        self.entries.len() - 1
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<usize>)>,
        S: Into<String>,
    {
        let mut l = Layout::new();
        for (name, shape) in entries {
            l.push(name, shape);
        }
        l
    }

    /// Concatenates layouts, prefixing every name with `prefix.`.
    pub fn concat(parts: &[(&str, &Layout)]) -> Self {
        let mut l = Layout::new();
        for (prefix, part) in parts {
            for e in &part.entries {
                l.push(format!("{prefix}.{}", e.name), e.shape.clone());
            }
        }
        l
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// Flat parameter vector tied to an immutable layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::contract(format!(
                "parameter vector has {} values but layout needs {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.total_len()];
        Self { values, layout }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::contract("parameter layouts differ"))
        }
    }

    pub fn entry(&self, idx: usize) -> &[f64] {
        let e = &self.layout.entries()[idx];
        &self.values[e.offset..e.offset + e.len()]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut [f64] {
        let e = &self.layout.entries()[idx];
        let (o, n) = (e.offset, e.len());
        &mut self.values[o..o + n]
    }

    pub fn entry_matrix(&self, idx: usize) -> Array2<f64> {
        let dims = self.layout.entries()[idx].matrix_dims();
        Array2::from_shape_vec(dims, self.entry(idx).to_vec()).expect("layout dims")
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        let values = self.values.iter().map(|x| alpha * x).collect();
        Self {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Records every entry as a leaf on the tape.
    pub fn load(&self, tape: &mut Tape, as_variables: bool) -> Vec<Var> {
        (0..self.layout.entries().len())
            .map(|i| {
                let m = self.entry_matrix(i);
                if as_variables {
                    tape.variable(m)
                } else {
                    tape.constant(m)
                }
            })
            .collect()
    }

    /// Flattens per-entry tensors read from the tape back into this layout.
    pub fn gather(layout: &Arc<Layout>, tape: &Tape, vars: &[Var]) -> ParamVector {
        let mut values = Vec::with_capacity(layout.total_len());
        for v in vars {
            values.extend(tape.value(*v).iter().copied());
        }
        ParamVector {
            values,
            layout: layout.clone(),
        }
    }
}
