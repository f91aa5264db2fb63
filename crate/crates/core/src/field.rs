//! Uniform periodic grids over `[-L/2, L/2)^n` and real fields sampled on them.
//!
//! Samples are stored component-major: component `c` occupies
//! `data[c * P .. (c + 1) * P]` with `P = N^n`, each block row-major
//! (last axis fastest).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if dim != 3 && dim != 4 {
            return Err(Error::InvalidParameter(format!("dimension {dim} not in {{3, 4}}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("resolution {n} is not a power of two >= 4")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidParameter(format!("domain length {length} must be positive")));
        }
        Ok(Self { dim, n, length })
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.spacing()
    }

    /// Calls `visit(flat, x)` for every grid point in storage order.
    pub fn for_each_point(&self, mut visit: impl FnMut(usize, &[f64])) {
        let mut idx = [0usize; 4];
        let mut x = [0.0f64; 4];
        for d in 0..self.dim {
            x[d] = self.coord(0);
        }
        for flat in 0..self.points() {
            visit(flat, &x[..self.dim]);
            let mut d = self.dim;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                if idx[d] < self.n {
                    x[d] = self.coord(idx[d]);
                    break;
                }
                idx[d] = 0;
                x[d] = self.coord(0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    comps: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid, comps: usize) -> Self {
        assert!(comps >= 1);
        Self { grid, comps, data: vec![0.0; comps * grid.points()] }
    }

    pub fn from_data(grid: Grid, comps: usize, data: Vec<f64>) -> Result<Self> {
        if comps == 0 || data.len() != comps * grid.points() {
            return Err(Error::Shape(format!(
                "{} samples do not match {} components on {}^{} points",
                data.len(),
                comps,
                grid.n,
                grid.dim
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, comps, data })
    }

    /// Samples `f(x, out)` at every grid point; `out` has one slot per component.
    pub fn from_fn(grid: Grid, comps: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let p = grid.points();
        let mut data = vec![0.0; comps * p];
        let mut out = vec![0.0; comps];
        grid.for_each_point(|flat, x| {
            out.iter_mut().for_each(|v| *v = 0.0);
            f(x, &mut out);
            for c in 0..comps {
                data[c * p + flat] = out[c];
            }
        });
        Self::from_data(grid, comps, data)
    }

    pub fn scalar(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        Self::from_fn(grid, 1, |x, out| out[0] = f(x))
    }

    /// Builds a field without the finiteness scan; internal use by transforms.
    pub(crate) fn from_raw(grid: Grid, comps: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), comps * grid.points());
        Self { grid, comps, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn is_vector(&self) -> bool {
        self.comps == self.grid.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let p = self.grid.points();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.grid.points();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn check_compatible(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid || self.comps != other.comps {
            return Err(Error::Mismatch(format!(
                "({:?}, c={}) vs ({:?}, c={})",
                self.grid, self.comps, other.grid, other.comps
            )));
        }
        Ok(())
    }

    /// Pointwise Euclidean magnitude across components.
    pub fn magnitude(&self) -> Vec<f64> {
        let p = self.grid.points();
        if self.comps == 1 {
            return self.data.iter().map(|v| v.abs()).collect();
        }
        (0..p)
            .map(|i| (0..self.comps).map(|c| self.data[c * p + i].powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::from_raw(self.grid, self.comps, data))
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_raw(self.grid, self.comps, data))
    }

    pub fn scale(&self, s: f64) -> Field {
        Self::from_raw(self.grid, self.comps, self.data.iter().map(|v| s * v).collect())
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Field) -> Result<()> {
        self.check_compatible(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += s * b);
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid approximation of the L^2 norm over one period.
    pub fn l2_norm(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    /// Grid approximation of `∫ u·v dx`.
    pub fn pairing(&self, other: &Field) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume())
    }

    pub fn mean(&self, c: usize) -> f64 {
        let comp = self.component(c);
        comp.iter().sum::<f64>() / comp.len() as f64
    }

    /// Copy with every component's mean subtracted.
    pub fn without_mean(&self) -> Field {
        let mut out = self.clone();
        for c in 0..self.comps {
            let m = self.mean(c);
            out.component_mut(c).iter_mut().for_each(|v| *v -= m);
        }
        out
    }

    /// Embeds a scalar as component `axis` of an otherwise zero vector field.
    pub fn scalar_to_vector(&self, axis: usize) -> Result<Field> {
        if self.comps != 1 || axis >= self.grid.dim {
            return Err(Error::Shape("scalar_to_vector needs a scalar and a valid axis".into()));
        }
        let mut out = Field::zeros(self.grid, self.grid.dim);
        out.component_mut(axis).copy_from_slice(&self.data);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_metadata() {
        assert!(Grid::new(2, 16, 1.0).is_err());
        assert!(Grid::new(3, 12, 1.0).is_err());
        assert!(Grid::new(3, 16, -1.0).is_err());
        assert!(Grid::new(4, 8, 2.0).is_ok());
    }

    #[test]
    fn points_visit_in_storage_order() {
        let g = Grid::new(3, 4, 4.0).unwrap();
        let mut seen = Vec::new();
        g.for_each_point(|flat, x| seen.push((flat, x.to_vec())));
        assert_eq!(seen.len(), 64);
        assert_eq!(seen[0].1, vec![-2.0, -2.0, -2.0]);
        assert_eq!(seen[1].1, vec![-2.0, -2.0, -1.0]);
        assert_eq!(seen[4].1, vec![-2.0, -1.0, -2.0]);
        assert_eq!(seen[63].1, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_finite_sample_is_named() {
        let g = Grid::new(3, 4, 1.0).unwrap();
        let mut data = vec![0.0; 64];
        data[17] = f64::NAN;
        match Field::from_data(g, 1, data) {
            Err(Error::NonFinite { index }) => assert_eq!(index, 17),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_fields_do_not_compose() {
        let a = Field::zeros(Grid::new(3, 4, 1.0).unwrap(), 1);
        let b = Field::zeros(Grid::new(3, 4, 2.0).unwrap(), 1);
        let c = Field::zeros(Grid::new(3, 4, 1.0).unwrap(), 3);
        assert!(a.add(&b).is_err());
        assert!(a.sub(&c).is_err());
    }

    #[test]
    fn magnitude_is_euclidean() {
        let g = Grid::new(3, 4, 1.0).unwrap();
        let f = Field::from_fn(g, 3, |_, o| {
            o[0] = 3.0;
            o[2] = 4.0;
        })
        .unwrap();
        assert!(f.magnitude().iter().all(|&m| (m - 5.0).abs() < 1e-15));
    }
}
