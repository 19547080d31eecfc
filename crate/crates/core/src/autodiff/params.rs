use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Named `rows × cols` window into a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlice {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector with a layout of named slices that partition it
/// exactly, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<ParamSlice>,
}

impl ParamVector {
    /// Zero-filled vector for the given `(name, rows, cols)` shapes.
    pub fn zeros<S: Into<String>>(shapes: impl IntoIterator<Item = (S, usize, usize)>) -> Self {
        let mut layout = Vec::new();
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            layout.push(ParamSlice {
                name: name.into(),
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        Self {
            values: vec![0.0; offset],
            layout,
        }
    }

    pub fn from_parts(layout: Vec<ParamSlice>, values: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        for s in &layout {
            if s.offset != offset {
                return Err(Error::Usage(format!(
                    "slice `{}` starts at {} but previous slices end at {offset}",
                    s.name, s.offset
                )));
            }
            offset += s.len();
        }
        if offset != values.len() {
            return Err(Error::Dimension {
                expected: offset,
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[ParamSlice] {
        &self.layout
    }

    pub fn slice(&self, index: usize) -> &[f64] {
        &self.values[self.layout[index].range()]
    }

    pub fn slice_mut(&mut self, index: usize) -> &mut [f64] {
        let r = self.layout[index].range();
        &mut self.values[r]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.iter().position(|s| s.name == name)
    }

    pub fn matrix(&self, index: usize) -> Matrix {
        let s = &self.layout[index];
        Matrix::from_vec(s.rows, s.cols, self.slice(index).to_vec())
            .expect("layout slice matches its shape")
    }

    /// Name of the slice holding flat coordinate `i`, with the offset inside it.
    pub fn locate(&self, i: usize) -> Option<(&str, usize)> {
        self.layout
            .iter()
            .find(|s| s.range().contains(&i))
            .map(|s| (s.name.as_str(), i - s.offset))
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
