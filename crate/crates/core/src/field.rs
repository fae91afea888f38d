//! Cell-averaged distribution `f_{j,i}` stored row-major in `j`, then `i`.

use std::ops::{Index, IndexMut};

use crate::mesh::GridSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    np: usize,
    nr: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            np: grid.np(),
            nr: grid.nr(),
            values: vec![0.0; grid.n_cells()],
        }
    }

    pub fn from_fn(grid: &GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut field = Self::zeros(grid);
        for j in 0..field.np {
            for i in 0..field.nr {
                field.values[j * field.nr + i] = f(j, i);
            }
        }
        field
    }

    /// Wraps raw row-major values; panics if the length does not match the grid.
    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            grid.n_cells(),
            "field length does not match grid"
        );
        Self {
            np: grid.np(),
            nr: grid.nr(),
            values,
        }
    }

    pub fn np(&self) -> usize {
        self.np
    }

    pub fn nr(&self) -> usize {
        self.nr
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

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.nr..(j + 1) * self.nr]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.nr..(j + 1) * self.nr]
    }

    pub fn matches(&self, grid: &GridSpec) -> bool {
        self.np == grid.np() && self.nr == grid.nr()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

impl Index<(usize, usize)> for Field {
    type Output = f64;

    #[inline]
    fn index(&self, (j, i): (usize, usize)) -> &f64 {
        &self.values[j * self.nr + i]
    }
}

impl IndexMut<(usize, usize)> for Field {
    #[inline]
    fn index_mut(&mut self, (j, i): (usize, usize)) -> &mut f64 {
        &mut self.values[j * self.nr + i]
    }
}
