//! Periodic Cartesian grids and the FFT machinery that lives on them.

use std::sync::Arc;

use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

/// Periodic box `[-L/2, L/2)^d` sampled with `points` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub dim: usize,
    pub extent: T,
    pub points: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(dim: usize, extent: T, points: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("grid dimension {dim} not in 1..=3")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::Config(format!(
                "points per axis must be a power of two >= 8, got {points}"
            )));
        }
        if !(extent > T::zero()) || !extent.is_finite() {
            return Err(Error::Config(format!("extent must be positive, got {extent}")));
        }
        Ok(Self { dim, extent, points })
    }

    #[inline]
    pub fn spacing(&self) -> T {
        self.extent / T::from_usize_lossy(self.points)
    }

    /// Total number of nodes, `points^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element `dx^d`.
    #[inline]
    pub fn cell_volume(&self) -> T {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> T {
        self.extent.powi(self.dim as i32)
    }

    /// Wavenumber spacing `2 pi / L`.
    #[inline]
    pub fn dk(&self) -> T {
        T::TAU() / self.extent
    }

    /// Coordinate of node `i` along an axis.
    #[inline]
    pub fn coord(&self, i: usize) -> T {
        -self.extent / T::lit(2.0) + T::from_usize_lossy(i) * self.spacing()
    }

    /// Wavenumber of FFT bin `j` along an axis.
    #[inline]
    pub fn wavenumber(&self, j: usize) -> T {
        let n = self.points;
        let signed = if j < n / 2 { j as f64 } else { j as f64 - n as f64 };
        T::lit(signed) * self.dk()
    }

    /// Largest resolved |k| along one axis.
    pub fn nyquist(&self) -> T {
        T::PI() / self.spacing()
    }

    /// Multi-index of a flat (row-major) index.
    pub fn unravel(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.points;
            flat /= self.points;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .take(self.dim)
            .fold(0usize, |acc, &i| acc * self.points + i)
    }

    /// Position vector of a flat index.
    pub fn position(&self, flat: usize) -> Vec<T> {
        let idx = self.unravel(flat);
        (0..self.dim).map(|a| self.coord(idx[a])).collect()
    }

    /// Wavevector of a flat index in FFT ordering.
    pub fn wavevector(&self, flat: usize) -> Vec<T> {
        let idx = self.unravel(flat);
        (0..self.dim).map(|a| self.wavenumber(idx[a])).collect()
    }

    /// `|k|^2` for every FFT bin.
    pub fn k_squared(&self) -> Vec<T> {
        (0..self.len())
            .map(|f| self.wavevector(f).iter().map(|&k| k * k).sum())
            .collect()
    }

    pub fn max_k_squared(&self) -> T {
        self.nyquist().powi(2) * T::from_usize_lossy(self.dim)
    }

    /// Samples a function of position on every node.
    pub fn sample<F: Fn(&[T]) -> T>(&self, f: F) -> Vec<T> {
        (0..self.len()).map(|i| f(&self.position(i))).collect()
    }

    pub fn sample_complex<F: Fn(&[T]) -> Cx<T>>(&self, f: F) -> Vec<Cx<T>> {
        (0..self.len()).map(|i| f(&self.position(i))).collect()
    }

    /// Checks that another grid describes the same lattice.
    pub fn ensure_same(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.points != other.points || self.extent != other.extent {
            return Err(Error::Config("fields live on different grids".into()));
        }
        Ok(())
    }
}

/// Planned d-dimensional FFTs for a [`Grid`].
///
/// The forward transform is unnormalized; the inverse divides by `points^dim`,
/// so `inverse(forward(f)) == f`.
#[derive(Clone)]
pub struct Spectral<T: Real> {
    grid: Grid<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    k2: Vec<T>,
}

impl<T: Real> std::fmt::Debug for Spectral<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl<T: Real> Spectral<T> {
    pub fn new(grid: Grid<T>) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft(grid.points, FftDirection::Forward);
        let inv = planner.plan_fft(grid.points, FftDirection::Inverse);
        let k2 = grid.k_squared();
        Self { grid, fwd, inv, k2 }
    }

    #[inline]
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    #[inline]
    pub fn k_squared(&self) -> &[T] {
        &self.k2
    }

    pub fn forward(&self, data: &mut [Cx<T>]) {
        self.transform(data, &self.fwd);
    }

    pub fn inverse(&self, data: &mut [Cx<T>]) {
        self.transform(data, &self.inv);
        let scale = T::one() / T::from_usize_lossy(self.grid.len());
        for z in data.iter_mut() {
            *z = *z * scale;
        }
    }

    fn transform(&self, data: &mut [Cx<T>], plan: &Arc<dyn Fft<T>>) {
        let n = self.grid.points;
        let dim = self.grid.dim;
        assert_eq!(data.len(), self.grid.len(), "field length does not match grid");
        let mut scratch = vec![Cx::default(); plan.get_inplace_scratch_len()];
        // last axis is contiguous
        plan.process_with_scratch(data, &mut scratch);
        if dim == 1 {
            return;
        }
        let mut line = vec![Cx::default(); n];
        for axis in 0..dim - 1 {
            let stride = n.pow((dim - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (j, z) in line.iter_mut().enumerate() {
                        *z = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, z) in line.iter().enumerate() {
                        data[base + j * stride] = *z;
                    }
                }
            }
        }
    }

    /// Spectral Laplacian of a complex field.
    pub fn laplacian(&self, field: &[Cx<T>]) -> Vec<Cx<T>> {
        let mut buf = field.to_vec();
        self.forward(&mut buf);
        for (z, &k2) in buf.iter_mut().zip(&self.k2) {
            *z = *z * (-k2);
        }
        self.inverse(&mut buf);
        buf
    }

    /// Spectral partial derivative of a complex field along `axis`.
    pub fn derivative(&self, field: &[Cx<T>], axis: usize) -> Vec<Cx<T>> {
        let mut buf = field.to_vec();
        self.forward(&mut buf);
        let n = self.grid.points;
        for (f, z) in buf.iter_mut().enumerate() {
            let idx = self.grid.unravel(f);
            // the Nyquist bin has no well-defined derivative for real data
            let k = if idx[axis] == n / 2 { T::zero() } else { self.grid.wavenumber(idx[axis]) };
            *z = Cx::new(-z.im * k, z.re * k);
        }
        self.inverse(&mut buf);
        buf
    }

    /// Spectral gradient of a real field, one component per axis.
    pub fn gradient_real(&self, field: &[T]) -> Vec<Vec<T>> {
        let c: Vec<Cx<T>> = field.iter().map(|&v| Cx::new(v, T::zero())).collect();
        (0..self.grid.dim)
            .map(|a| self.derivative(&c, a).into_iter().map(|z| z.re).collect())
            .collect()
    }

    /// `sum |grad f|^2 dx^d` evaluated in Fourier space.
    pub fn gradient_energy(&self, field: &[Cx<T>]) -> T {
        let mut buf = field.to_vec();
        self.forward(&mut buf);
        let n = T::from_usize_lossy(self.grid.len());
        let s: T = buf.iter().zip(&self.k2).map(|(z, &k2)| k2 * z.norm_sqr()).sum();
        s * self.grid.cell_volume() / n
    }
}
