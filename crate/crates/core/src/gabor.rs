//! Gaussian-windowed Fourier analysis of fields on phase space `(x, k)`.
//!
//! With the kernel `f(y) = (2 pi)^-d exp(-y^2)` evaluated at `eps* |y|`,
//!
//! ```text
//! g_hat(x, k) = int f(eps* |x - x0|) e^{i k (x - x0)} g(x0) dx0 = a(x, k) e^{i k x}
//! ```
//!
//! Slow amplitudes `a` are computed per x node by one FFT of the windowed field.
//! The k lattice of a [`PhaseSpaceGrid`] built from a field grid is the field's
//! own Fourier lattice in ascending order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{bogoliubov_frequency, Vec3};
use crate::error::{Error, Result};
use crate::fields::PerturbationState;
use crate::grid::{Grid, Spectral};
use crate::scalar::{cis, cx, Cx, Real};

/// Uniform 1D lattice `start + i * step`, `i < count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice<T> {
    pub start: T,
    pub step: T,
    pub count: usize,
}

impl<T: Real> Lattice<T> {
    pub fn new(start: T, step: T, count: usize) -> Result<Self> {
        if count == 0 || !(step > T::zero()) {
            return Err(Error::Config("lattice needs count >= 1 and step > 0".into()));
        }
        Ok(Self { start, step, count })
    }

    /// `count` nodes covering `[lo, hi]` inclusive.
    pub fn spanning(lo: T, hi: T, count: usize) -> Result<Self> {
        if count < 2 || !(hi > lo) {
            return Err(Error::Config("lattice needs count >= 2 and hi > lo".into()));
        }
        Self::new(lo, (hi - lo) / T::from_usize_lossy(count - 1), count)
    }

    #[inline]
    pub fn node(&self, i: usize) -> T {
        self.start + T::from_usize_lossy(i) * self.step
    }

    pub fn nodes(&self) -> Vec<T> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    pub fn end(&self) -> T {
        self.node(self.count - 1)
    }
}

/// Tensor-product phase-space lattice; the same 1D lattice on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid<T> {
    pub dim: usize,
    pub x: Lattice<T>,
    pub k: Lattice<T>,
    /// Field grid and x-node stride when the lattice is derived from a field.
    pub field: Option<(Grid<T>, usize)>,
}

impl<T: Real> PhaseSpaceGrid<T> {
    pub fn new(dim: usize, x: Lattice<T>, k: Lattice<T>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("phase-space dimension {dim} not in 1..=3")));
        }
        Ok(Self { dim, x, k, field: None })
    }

    /// x nodes every `stride` field points, k nodes on the full Fourier lattice.
    pub fn for_field(grid: Grid<T>, stride: usize) -> Result<Self> {
        if stride == 0 || grid.points % stride != 0 {
            return Err(Error::Config(format!("stride {stride} must divide {} points", grid.points)));
        }
        let n = grid.points;
        let x = Lattice::new(grid.coord(0), grid.spacing() * T::from_usize_lossy(stride), n / stride)?;
        let k = Lattice::new(-T::from_usize_lossy(n / 2) * grid.dk(), grid.dk(), n)?;
        Ok(Self { dim: grid.dim, x, k, field: Some((grid, stride)) })
    }

    pub fn x_len(&self) -> usize {
        self.x.count.pow(self.dim as u32)
    }

    pub fn k_len(&self) -> usize {
        self.k.count.pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        self.x_len() * self.k_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn unravel(&self, mut flat: usize, count: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % count;
            flat /= count;
        }
        idx
    }

    pub fn x_index(&self, flat: usize) -> [usize; 3] {
        self.unravel(flat, self.x.count)
    }

    pub fn k_index(&self, flat: usize) -> [usize; 3] {
        self.unravel(flat, self.k.count)
    }

    pub fn x_node(&self, flat: usize) -> Vec3<T> {
        let idx = self.x_index(flat);
        let mut v = [T::zero(); 3];
        for a in 0..self.dim {
            v[a] = self.x.node(idx[a]);
        }
        v
    }

    pub fn k_node(&self, flat: usize) -> Vec3<T> {
        let idx = self.k_index(flat);
        let mut v = [T::zero(); 3];
        for a in 0..self.dim {
            v[a] = self.k.node(idx[a]);
        }
        v
    }

    /// Flat index of `(x node, k node)`.
    #[inline]
    pub fn index(&self, xi: usize, ki: usize) -> usize {
        xi * self.k_len() + ki
    }

    /// Phase-space cell volume `(dx dk)^d`.
    pub fn cell_volume(&self) -> T {
        (self.x.step * self.k.step).powi(self.dim as i32)
    }

    pub(crate) fn field_grid(&self) -> Result<(Grid<T>, usize)> {
        self.field
            .ok_or_else(|| Error::Config("phase-space grid is not attached to a field grid".into()))
    }

    /// Natural-order k index -> FFT bin, per axis.
    fn fft_bin(&self, m: usize) -> usize {
        let n = self.k.count;
        (m + n / 2) % n
    }
}

/// Gaussian kernel at intermediate scale `eps*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborKernel<T> {
    pub eps_star: T,
}

impl<T: Real> GaborKernel<T> {
    pub fn new(eps_star: T) -> Result<Self> {
        if !(eps_star >= T::zero() && eps_star < T::one()) {
            return Err(Error::Config(format!("eps* must lie in [0, 1), got {eps_star}")));
        }
        Ok(Self { eps_star })
    }

    /// Default `eps* = sqrt(eps)` for scale separation `eps`.
    pub fn from_scale_separation(eps: T) -> Result<Self> {
        Self::new(eps.sqrt())
    }

    /// `f(eps* |y|)` for `|y|^2 = y2`.
    #[inline]
    pub fn weight(&self, y2: T, dim: usize) -> T {
        T::TAU().powi(-(dim as i32)) * (-self.eps_star * self.eps_star * y2).exp()
    }

    /// `F(0) = (2 pi)^-d (pi / eps*^2)^(d/2)`, the spectrum normalization.
    pub fn f0(&self, dim: usize) -> T {
        self.peak(T::zero(), dim)
    }

    /// `eps*^-d F(q / eps*)`: transform of the scaled kernel at wavenumber
    /// offset `|q|`.
    pub fn peak(&self, q: T, dim: usize) -> T {
        let e2 = self.eps_star * self.eps_star;
        T::TAU().powi(-(dim as i32)) * (T::PI() / e2).powf(T::lit(dim as f64 / 2.0)) * (-q * q / (T::lit(4.0) * e2)).exp()
    }

    /// Checks resolution (>= 8 points per kernel width), window containment
    /// in the periodic box and x-node overlap.
    pub fn validate_for(&self, psg: &PhaseSpaceGrid<T>) -> Result<()> {
        let (grid, _) = psg.field_grid()?;
        let e = self.eps_star;
        if e == T::zero() {
            if psg.x_len() != 1 {
                return Err(Error::Config("eps* = 0 (plain Fourier transform) needs a single x node".into()));
            }
            return Ok(());
        }
        if e * grid.spacing() > T::lit(0.125) {
            return Err(Error::Config(format!("kernel width 1/eps* = {} spans fewer than 8 grid points", T::one() / e)));
        }
        if e * grid.extent / T::lit(2.0) < T::lit(6.0) {
            return Err(Error::Config("kernel does not decay within the periodic box (need eps* L / 2 >= 6)".into()));
        }
        if e * psg.x.step > T::lit(1.5) {
            return Err(Error::Config("x-node spacing too coarse for the kernel width (need eps* dx_node <= 1.5)".into()));
        }
        Ok(())
    }
}

/// `g_hat(x, k)` on a [`PhaseSpaceGrid`], x-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborField<T: Real> {
    pub psg: PhaseSpaceGrid<T>,
    pub kernel: GaborKernel<T>,
    pub values: Vec<Cx<T>>,
    pub time: T,
}

/// `a(x, k) = g_hat(x, k) e^{-i k x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowAmplitude<T: Real> {
    pub psg: PhaseSpaceGrid<T>,
    pub kernel: GaborKernel<T>,
    pub values: Vec<Cx<T>>,
    pub time: T,
}

impl<T: Real> SlowAmplitude<T> {
    pub fn zeros(psg: PhaseSpaceGrid<T>, kernel: GaborKernel<T>) -> Self {
        Self { psg, kernel, values: vec![Cx::default(); psg.len()], time: T::zero() }
    }
}

/// Bogoliubov eigen-amplitudes `lambda`, `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair<T: Real> {
    pub psg: PhaseSpaceGrid<T>,
    pub lambda_amp: Vec<Cx<T>>,
    pub mu_amp: Vec<Cx<T>>,
    /// Local density at each x node used for the projection.
    pub rho: Vec<T>,
}

/// Waveaction density `n(x, k)`, x-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceSpectrum<T: Real> {
    pub psg: PhaseSpaceGrid<T>,
    pub eps_star: T,
    pub values: Vec<T>,
    pub time: T,
}

impl<T: Real> PhaseSpaceSpectrum<T> {
    pub fn zeros(psg: PhaseSpaceGrid<T>, eps_star: T) -> Self {
        Self { psg, eps_star, values: vec![T::zero(); psg.len()], time: T::zero() }
    }

    /// `int n dk dx` by the midpoint rule.
    pub fn total(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.psg.cell_volume()
    }

    /// Values at one x node over the k lattice.
    pub fn at_x(&self, xi: usize) -> &[T] {
        let nk = self.psg.k_len();
        &self.values[xi * nk..(xi + 1) * nk]
    }
}

/// Sign `(-1)^j` of an FFT bin multi-index; accounts for the grid starting at
/// `-L/2`.
fn bin_parity(grid: &Grid<impl Real>, flat: usize) -> bool {
    let idx = grid.unravel(flat);
    idx.iter().take(grid.dim).sum::<usize>() % 2 == 1
}

/// FFT bin and parity for each natural-order k index of a field-derived grid.
pub(crate) fn bin_table<T: Real>(psg: &PhaseSpaceGrid<T>) -> Result<Vec<(usize, bool)>> {
    let (grid, _) = psg.field_grid()?;
    Ok((0..psg.k_len())
        .map(|m| {
            let idx = psg.k_index(m);
            let mut bins = [0usize; 3];
            for a in 0..grid.dim {
                bins[a] = psg.fft_bin(idx[a]);
            }
            let b = grid.ravel(&bins);
            (b, bin_parity(&grid, b))
        })
        .collect())
}

/// Minimum-image offset `x_n - x0` along one axis.
#[inline]
pub(crate) fn wrapped<T: Real>(d: T, extent: T) -> T {
    let h = extent / T::lit(2.0);
    let mut y = d;
    while y >= h {
        y = y - extent;
    }
    while y < -h {
        y = y + extent;
    }
    y
}

/// Window `f(eps* |x_n - x0|)` sampled on every field node.
pub(crate) fn window<T: Real>(grid: &Grid<T>, kernel: &GaborKernel<T>, x0: &Vec3<T>) -> Vec<T> {
    let e2 = kernel.eps_star * kernel.eps_star;
    let axis: Vec<Vec<T>> = (0..grid.dim)
        .map(|a| {
            (0..grid.points)
                .map(|i| {
                    let y = wrapped(grid.coord(i) - x0[a], grid.extent);
                    (-e2 * y * y).exp()
                })
                .collect()
        })
        .collect();
    let pre = T::TAU().powi(-(grid.dim as i32));
    (0..grid.len())
        .map(|f| {
            let idx = grid.unravel(f);
            (0..grid.dim).fold(pre, |acc, a| acc * axis[a][idx[a]])
        })
        .collect()
}

/// Slow amplitudes `a(x0, k)` at one position for every lattice k (ascending
/// order), `a = dx^d sum_n f(eps*|x0 - x_n|) g_n e^{-i k x_n}`.
pub fn gabor_local<T: Real>(field: &[Cx<T>], grid: &Grid<T>, kernel: &GaborKernel<T>, x0: &Vec3<T>) -> Vec<Cx<T>> {
    let sp = Spectral::new(*grid);
    local_with(&sp, field, kernel, x0)
}

fn local_with<T: Real>(sp: &Spectral<T>, field: &[Cx<T>], kernel: &GaborKernel<T>, x0: &Vec3<T>) -> Vec<Cx<T>> {
    let grid = sp.grid();
    let w = window(grid, kernel, x0);
    let mut buf: Vec<Cx<T>> = field.iter().zip(&w).map(|(g, &wv)| g * wv).collect();
    sp.forward(&mut buf);
    let dv = grid.cell_volume();
    let psg = PhaseSpaceGrid::for_field(*grid, 1).expect("unit stride divides any grid");
    let mut out = vec![Cx::default(); grid.len()];
    for (m, o) in out.iter_mut().enumerate() {
        let idx = psg.k_index(m);
        let mut bins = [0usize; 3];
        for a in 0..grid.dim {
            bins[a] = psg.fft_bin(idx[a]);
        }
        let b = grid.ravel(&bins);
        let z = buf[b] * dv;
        *o = if bin_parity(grid, b) { -z } else { z };
    }
    out
}

/// Slow amplitude at an arbitrary `(x0, k)` by direct summation.
pub fn gabor_point<T: Real>(field: &[Cx<T>], grid: &Grid<T>, kernel: &GaborKernel<T>, x0: &Vec3<T>, k: &Vec3<T>) -> Cx<T> {
    let w = window(grid, kernel, x0);
    let mut acc = Cx::default();
    for (f, (g, &wv)) in field.iter().zip(&w).enumerate() {
        if wv == T::zero() {
            continue;
        }
        let x = grid.position(f);
        let phase: T = (0..grid.dim).map(|a| k[a] * x[a]).sum();
        acc = acc + g * cis(-phase) * wv;
    }
    acc * grid.cell_volume()
}

/// Slow amplitudes on every node of a field-derived [`PhaseSpaceGrid`].
pub fn slow_transform<T: Real>(field: &[Cx<T>], kernel: &GaborKernel<T>, psg: &PhaseSpaceGrid<T>) -> Result<SlowAmplitude<T>> {
    let (grid, _) = psg.field_grid()?;
    if field.len() != grid.len() {
        return Err(Error::Config("field does not match the phase-space grid".into()));
    }
    kernel.validate_for(psg)?;
    let sp = Spectral::new(grid);
    let rows: Vec<Vec<Cx<T>>> = (0..psg.x_len())
        .into_par_iter()
        .map(|xi| local_with(&sp, field, kernel, &psg.x_node(xi)))
        .collect();
    Ok(SlowAmplitude { psg: *psg, kernel: *kernel, values: rows.concat(), time: T::zero() })
}

/// `g_hat(x, k)` on every phase-space node.
pub fn gabor_transform<T: Real>(field: &[Cx<T>], kernel: &GaborKernel<T>, psg: &PhaseSpaceGrid<T>) -> Result<GaborField<T>> {
    Ok(fast_restore(&slow_transform(field, kernel, psg)?))
}

/// Same as [`gabor_transform`] for a real field.
pub fn gabor_transform_real<T: Real>(field: &[T], kernel: &GaborKernel<T>, psg: &PhaseSpaceGrid<T>) -> Result<GaborField<T>> {
    let c: Vec<Cx<T>> = field.iter().map(|&v| cx(v, T::zero())).collect();
    gabor_transform(&c, kernel, psg)
}

fn phase_factors<T: Real>(psg: &PhaseSpaceGrid<T>, sign: T) -> impl Fn(usize, usize) -> Cx<T> + '_ {
    move |xi, ki| {
        let x = psg.x_node(xi);
        let k = psg.k_node(ki);
        cis(sign * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]))
    }
}

/// Divides out the fast factor `e^{i k x}`.
pub fn slow_amplitude<T: Real>(gf: &GaborField<T>) -> SlowAmplitude<T> {
    let nk = gf.psg.k_len();
    let ph = phase_factors(&gf.psg, -T::one());
    let values = gf.values.iter().enumerate().map(|(i, z)| z * ph(i / nk, i % nk)).collect();
    SlowAmplitude { psg: gf.psg, kernel: gf.kernel, values, time: gf.time }
}

/// Multiplies back the fast factor `e^{i k x}`.
pub fn fast_restore<T: Real>(sa: &SlowAmplitude<T>) -> GaborField<T> {
    let nk = sa.psg.k_len();
    let ph = phase_factors(&sa.psg, T::one());
    let values = sa.values.iter().enumerate().map(|(i, z)| z * ph(i / nk, i % nk)).collect();
    GaborField { psg: sa.psg, kernel: sa.kernel, values, time: sa.time }
}

/// Field reconstruction by window-weighted overlap-add:
///
/// ```text
/// g(x) = sum_j int g_hat(x_j, k) e^{i k (x - x_j)} dk / ((2 pi)^d sum_j f(eps*|x - x_j|))
/// ```
///
/// which is the k quadrature `int g_hat(x, k) dk / ((2 pi)^d f(0))` at the
/// x nodes and an exact inverse of [`gabor_transform`] everywhere.
pub fn gabor_inverse<T: Real>(gf: &GaborField<T>) -> Result<Vec<Cx<T>>> {
    inverse_slow(&slow_amplitude(gf))
}

pub fn inverse_slow<T: Real>(sa: &SlowAmplitude<T>) -> Result<Vec<Cx<T>>> {
    let psg = &sa.psg;
    let (grid, _) = psg.field_grid()?;
    let sp = Spectral::new(grid);
    let nk = psg.k_len();
    let n = grid.len();
    let parts: Vec<(Vec<Cx<T>>, Vec<T>)> = (0..psg.x_len())
        .into_par_iter()
        .map(|xi| {
            let mut buf = vec![Cx::default(); n];
            for m in 0..nk {
                let idx = psg.k_index(m);
                let mut bins = [0usize; 3];
                for a in 0..grid.dim {
                    bins[a] = psg.fft_bin(idx[a]);
                }
                let b = grid.ravel(&bins);
                let z = sa.values[psg.index(xi, m)];
                buf[b] = if bin_parity(&grid, b) { -z } else { z };
            }
            sp.inverse(&mut buf);
            (buf, window(&grid, &sa.kernel, &psg.x_node(xi)))
        })
        .collect();
    let mut num = vec![Cx::default(); n];
    let mut den = vec![T::zero(); n];
    for (buf, w) in &parts {
        for i in 0..n {
            num[i] = num[i] + buf[i];
            den[i] = den[i] + w[i];
        }
    }
    // sum_k a e^{ikx} = N^d inverse(a) = L^d w g
    let scale = T::from_usize_lossy(n) / grid.volume();
    let mut out = Vec::with_capacity(n);
    for (z, &d) in num.iter().zip(&den) {
        if d <= T::min_positive_value() {
            return Err(Error::Domain("window weights vanish; x nodes too sparse".into()));
        }
        out.push(z * (scale / d));
    }
    Ok(out)
}

/// `lambda = (a_hat - i k^2/omega b_hat) / 2`, `mu = (a_hat + i k^2/omega b_hat) / 2`
/// with `omega = k sqrt(k^2 + 2 rho)` and `rho` given per x node.
pub fn bogoliubov_project<T: Real>(a_hat: &GaborField<T>, b_hat: &GaborField<T>, rho: &[T]) -> Result<EigenPair<T>> {
    let psg = a_hat.psg;
    if b_hat.psg != psg || a_hat.values.len() != b_hat.values.len() {
        return Err(Error::Config("a_hat and b_hat live on different phase-space grids".into()));
    }
    if rho.len() != psg.x_len() {
        return Err(Error::Config("need one density per x node".into()));
    }
    let nk = psg.k_len();
    let mut lambda_amp = Vec::with_capacity(psg.len());
    let mut mu_amp = Vec::with_capacity(psg.len());
    for (i, (a, b)) in a_hat.values.iter().zip(&b_hat.values).enumerate() {
        let k = psg.k_node(i % nk);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        let ib = b * cx(T::zero(), quadrature_ratio(k2, rho[i / nk]));
        lambda_amp.push((a - ib) / T::lit(2.0));
        mu_amp.push((a + ib) / T::lit(2.0));
    }
    Ok(EigenPair { psg, lambda_amp, mu_amp, rho: rho.to_vec() })
}

/// `k^2 / omega`, continued to its `k -> 0` limit.
fn quadrature_ratio<T: Real>(k2: T, rho: T) -> T {
    let w = bogoliubov_frequency(k2, rho);
    if w > T::zero() {
        k2 / w
    } else if rho > T::zero() {
        T::zero()
    } else {
        T::one()
    }
}

/// Inverse of [`bogoliubov_project`]: `a_hat = lambda + mu`,
/// `b_hat = -i (omega/k^2) (mu - lambda)`. `b_hat` is not recoverable at
/// `k = 0` in a condensate and is returned as zero there.
pub fn bogoliubov_reconstruct<T: Real>(pair: &EigenPair<T>) -> (Vec<Cx<T>>, Vec<Cx<T>>) {
    let nk = pair.psg.k_len();
    pair.lambda_amp
        .iter()
        .zip(&pair.mu_amp)
        .enumerate()
        .map(|(i, (l, m))| {
            let k = pair.psg.k_node(i % nk);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            let r = quadrature_ratio(k2, pair.rho[i / nk]);
            let b = if r > T::zero() { (m - l) * cx(T::zero(), -T::one() / r) } else { Cx::default() };
            (l + m, b)
        })
        .unzip()
}

/// Crossover density (in units of `k^2`) below which the no-condensate
/// waveaction `|psi_hat|^2 / 2` is used.
pub const CONDENSATE_CROSSOVER: f64 = 1e-6;

/// Waveaction `n = (omega rho / 2k^2) |a_hat + i (k^2/omega) b_hat|^2` of a
/// perturbation, with `|psi_hat|^2 / 2` where `rho <= 1e-6 k^2`.
///
/// Densities are taken at the x nodes. `k = 0` nodes are left at zero.
pub fn waveaction_field<T: Real>(
    pert: &PerturbationState<T>,
    kernel: &GaborKernel<T>,
    psg: &PhaseSpaceGrid<T>,
) -> Result<PhaseSpaceSpectrum<T>> {
    let (grid, stride) = psg.field_grid()?;
    let bg = &pert.background;
    grid.ensure_same(&bg.grid)?;
    let re: Vec<T> = pert.re_part();
    let im: Vec<T> = pert.im_part();
    let a_hat = slow_transform(&re.iter().map(|&v| cx(v, T::zero())).collect::<Vec<_>>(), kernel, psg)?;
    let b_hat = slow_transform(&im.iter().map(|&v| cx(v, T::zero())).collect::<Vec<_>>(), kernel, psg)?;
    let psi_hat = slow_transform(&pert.delta_psi, kernel, psg)?;
    let rho: Vec<T> = (0..psg.x_len())
        .map(|xi| {
            let idx = psg.x_index(xi);
            let mut g = [0usize; 3];
            for a in 0..grid.dim {
                g[a] = idx[a] * stride;
            }
            bg.rho[grid.ravel(&g)]
        })
        .collect();
    let nk = psg.k_len();
    let values = (0..psg.len())
        .map(|i| {
            let k = psg.k_node(i % nk);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            waveaction_value(a_hat.values[i], b_hat.values[i], psi_hat.values[i], k2, rho[i / nk])
        })
        .collect();
    Ok(PhaseSpaceSpectrum { psg: *psg, eps_star: kernel.eps_star, values, time: pert.time })
}

/// Pointwise waveaction from component transforms at one phase-space point.
pub fn waveaction_value<T: Real>(a_hat: Cx<T>, b_hat: Cx<T>, psi_hat: Cx<T>, k2: T, rho: T) -> T {
    if k2 == T::zero() {
        return T::zero();
    }
    if rho <= T::lit(CONDENSATE_CROSSOVER) * k2 {
        return psi_hat.norm_sqr() / T::lit(2.0);
    }
    let w = bogoliubov_frequency(k2, rho);
    let m = a_hat + b_hat * cx(T::zero(), k2 / w);
    w * rho / (T::lit(2.0) * k2) * m.norm_sqr()
}

/// `2 (omega rho / k^2) |lambda|^2`, the action carried by the opposite branch.
pub fn lambda_action<T: Real>(pair: &EigenPair<T>) -> Vec<T> {
    branch_action(pair, &pair.lambda_amp)
}

/// `2 (omega rho / k^2) |mu|^2`, equal to [`waveaction_field`] in the
/// condensate region.
pub fn mu_action<T: Real>(pair: &EigenPair<T>) -> Vec<T> {
    branch_action(pair, &pair.mu_amp)
}

fn branch_action<T: Real>(pair: &EigenPair<T>, amp: &[Cx<T>]) -> Vec<T> {
    let nk = pair.psg.k_len();
    amp.iter()
        .enumerate()
        .map(|(i, z)| {
            let k = pair.psg.k_node(i % nk);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            let rho = pair.rho[i / nk];
            T::lit(2.0) * bogoliubov_frequency(k2, rho) * rho / k2 * z.norm_sqr()
        })
        .collect()
}

/// `n = <|a|^2> / F(0)` over an ensemble of slow amplitudes.
pub fn spectrum<T: Real>(ensemble: &[SlowAmplitude<T>]) -> Result<PhaseSpaceSpectrum<T>> {
    let first = ensemble.first().ok_or(Error::EmptyEnsemble)?;
    if ensemble.iter().any(|m| m.psg != first.psg || m.kernel != first.kernel) {
        return Err(Error::Config("ensemble members use different phase-space grids".into()));
    }
    if first.kernel.eps_star == T::zero() {
        return Err(Error::Config("spectrum normalization needs eps* > 0".into()));
    }
    let f0 = first.kernel.f0(first.psg.dim);
    let count = T::from_usize_lossy(ensemble.len());
    let mut values = vec![T::zero(); first.psg.len()];
    for m in ensemble {
        for (v, z) in values.iter_mut().zip(&m.values) {
            *v = *v + z.norm_sqr();
        }
    }
    for v in values.iter_mut() {
        *v = *v / (count * f0);
    }
    Ok(PhaseSpaceSpectrum { psg: first.psg, eps_star: first.kernel.eps_star, values, time: first.time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::thomas_fermi_profile;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(n: usize, l: f64, eps: f64, stride: usize) -> (Grid<f64>, GaborKernel<f64>, PhaseSpaceGrid<f64>) {
        let g = Grid::new(1, l, n).unwrap();
        (g, GaborKernel::new(eps).unwrap(), PhaseSpaceGrid::for_field(g, stride).unwrap())
    }

    fn band_limited(g: &Grid<f64>, kmax: f64, seed: u64) -> Vec<Cx<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = Spectral::new(*g);
        let mut spec: Vec<Cx<f64>> = (0..g.len())
            .map(|f| {
                let k2: f64 = g.wavevector(f).iter().map(|k| k * k).sum();
                if k2.sqrt() <= kmax {
                    cx(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                } else {
                    Cx::default()
                }
            })
            .collect();
        sp.inverse(&mut spec);
        spec
    }

    #[test]
    fn plane_wave_matches_gaussian_oracle() {
        let (g, ker, psg) = setup(512, 200.0, 0.1, 8);
        let k0 = g.dk() * 40.0;
        let f = g.sample_complex(|x| cis(k0 * x[0]));
        let gf = gabor_transform(&f, &ker, &psg).unwrap();
        let nk = psg.k_len();
        for xi in [0, 7, 31, 63] {
            for ki in 0..nk {
                let k = psg.k_node(ki)[0];
                let exact = ker.peak(k - k0, 1);
                let got = gf.values[psg.index(xi, ki)].norm();
                assert!((got - exact).abs() < 1e-10 * ker.f0(1), "x{xi} k{k}: {got} vs {exact}");
            }
        }
        // slow amplitude is x-independent at the carrier
        let sa = slow_amplitude(&gf);
        let ki = psg.k.count / 2 + 40;
        let a0 = sa.values[psg.index(0, ki)];
        for xi in 0..psg.x_len() {
            assert!((sa.values[psg.index(xi, ki)] - a0).norm() < 1e-10);
        }
    }

    #[test]
    fn constant_field_peaks_at_zero() {
        let (g, ker, psg) = setup(256, 120.0, 0.1, 8);
        let gf = gabor_transform(&vec![cx(2.0, 0.0); g.len()], &ker, &psg).unwrap();
        let k0 = psg.k.count / 2;
        assert!((gf.values[psg.index(3, k0)] - cx(2.0 * ker.f0(1), 0.0)).norm() < 1e-10);
    }

    #[test]
    fn peak_width_scales_with_eps() {
        let mut widths = Vec::new();
        for eps in [0.1, 0.05, 0.025] {
            let (g, ker, _) = setup(2048, 1600.0, eps, 8);
            let a = gabor_local(&vec![cx(1.0, 0.0); g.len()], &g, &ker, &[0.0; 3]);
            let psg = PhaseSpaceGrid::for_field(g, 8).unwrap();
            let (mut m2, mut m0) = (0.0, 0.0);
            for (ki, z) in a.iter().enumerate() {
                let k = psg.k_node(ki)[0];
                m2 += k * k * z.norm_sqr();
                m0 += z.norm_sqr();
            }
            widths.push((m2 / m0).sqrt());
        }
        assert!((widths[0] / widths[1] - 2.0).abs() < 0.02);
        assert!((widths[1] / widths[2] - 2.0).abs() < 0.02);
    }

    #[test]
    fn round_trips() {
        let (g, ker, psg) = setup(512, 200.0, 0.1, 8);
        let f = band_limited(&g, 3.0, 1);
        let back = gabor_inverse(&gabor_transform(&f, &ker, &psg).unwrap()).unwrap();
        let err: f64 = f.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let nrm: f64 = f.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        assert!(err / nrm < 1e-10);
        let pw = g.sample_complex(|x| cis(g.dk() * 17.0 * x[0]));
        let back = gabor_inverse(&gabor_transform(&pw, &ker, &psg).unwrap()).unwrap();
        assert!(pw.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-10));
        let zero = gabor_inverse(&gabor_transform(&vec![Cx::default(); g.len()], &ker, &psg).unwrap()).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn inverse_is_k_quadrature_at_nodes() {
        let (g, ker, psg) = setup(256, 120.0, 0.1, 8);
        let f = band_limited(&g, 2.0, 9);
        let gf = gabor_transform(&f, &ker, &psg).unwrap();
        let nk = psg.k_len();
        let xi = 5;
        let xg = 5 * 8;
        let q: Cx<f64> = (0..nk).map(|ki| gf.values[psg.index(xi, ki)]).sum::<Cx<f64>>() * psg.k.step;
        let expect = f[xg] * ker.weight(0.0, 1) * std::f64::consts::TAU;
        assert!((q - expect).norm() < 1e-10 * expect.norm().max(1e-3));
    }

    #[test]
    fn two_dimensional_round_trip() {
        let g = Grid::new(2, 80.0, 128).unwrap();
        let ker = GaborKernel::new(0.2).unwrap();
        let psg = PhaseSpaceGrid::for_field(g, 8).unwrap();
        let f = band_limited(&g, 2.0, 5);
        let back = gabor_inverse(&gabor_transform(&f, &ker, &psg).unwrap()).unwrap();
        assert!(f.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-10));
        let a = gabor_point(&f, &g, &ker, &psg.x_node(9), &psg.k_node(77));
        let sa = slow_transform(&f, &ker, &psg).unwrap();
        assert!((a - sa.values[psg.index(9, 77)]).norm() < 1e-10);
    }

    #[test]
    fn rejects_unresolved_kernel() {
        let (_, _, psg) = setup(64, 10.0, 0.5, 8);
        assert!(GaborKernel::new(0.5).unwrap().validate_for(&psg).is_err());
        assert!(GaborKernel::new(1.5f64).is_err());
    }

    #[test]
    fn wavepacket_slow_gradient() {
        let (g, ker, psg) = setup(2048, 800.0, 0.1, 8);
        let eps = 0.01;
        let k0 = g.dk() * 200.0;
        let f = g.sample_complex(|x| cis(k0 * x[0]) * (-(eps * x[0]).powi(2)).exp());
        let sa = slow_transform(&f, &ker, &psg).unwrap();
        let ki = psg.k.count / 2 + 200;
        let row: Vec<Cx<f64>> = (0..psg.x_len()).map(|xi| sa.values[psg.index(xi, ki)]).collect();
        let h = psg.x.step;
        let grad: f64 = row.windows(3).map(|w| ((w[2] - w[0]) / (2.0 * h)).norm_sqr()).sum::<f64>().sqrt();
        let nrm: f64 = row[1..row.len() - 1].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let ratio = grad / nrm;
        assert!(ratio > 0.2 * eps && ratio < 5.0 * eps, "{ratio}");
    }

    #[test]
    fn eigen_pair_identities() {
        let (g, ker, psg) = setup(256, 120.0, 0.1, 8);
        let a = band_limited(&g, 2.0, 2).into_iter().map(|z| z.re).collect::<Vec<_>>();
        let b = band_limited(&g, 2.0, 3).into_iter().map(|z| z.re).collect::<Vec<_>>();
        let ah = gabor_transform_real(&a, &ker, &psg).unwrap();
        let bh = gabor_transform_real(&b, &ker, &psg).unwrap();
        let rho = vec![1.3; psg.x_len()];
        let pair = bogoliubov_project(&ah, &bh, &rho).unwrap();
        let i0 = psg.index(2, psg.k.count / 2);
        assert!((pair.lambda_amp[i0] - ah.values[i0] / 2.0).norm() < 1e-15);
        assert!((pair.mu_amp[i0] - ah.values[i0] / 2.0).norm() < 1e-15);
        let (_, br) = bogoliubov_reconstruct(&pair);
        assert_eq!(br[i0], Cx::default());
    }

    #[test]
    fn projection_involution_and_symmetry() {
        let (g, ker, psg) = setup(256, 120.0, 0.1, 8);
        let a: Vec<f64> = band_limited(&g, 2.0, 2).into_iter().map(|z| z.re).collect();
        let b: Vec<f64> = band_limited(&g, 2.0, 3).into_iter().map(|z| z.re).collect();
        let ah = gabor_transform_real(&a, &ker, &psg).unwrap();
        let bh = gabor_transform_real(&b, &ker, &psg).unwrap();
        let nk = psg.k_len();
        let rho = vec![1.3; psg.x_len()];
        let pair = bogoliubov_project(&ah, &bh, &rho).unwrap();
        let (ar, br) = bogoliubov_reconstruct(&pair);
        for i in 0..ah.values.len() {
            assert!((ar[i] - ah.values[i]).norm() < 1e-12);
            if i % nk == nk / 2 {
                continue;
            }
            assert!((br[i] - bh.values[i]).norm() < 1e-12 * (1.0 + bh.values[i].norm()));
        }
        // lambda*(k) = mu(-k); k -> -k is m -> N - m in ascending order
        for xi in 0..psg.x_len() {
            for m in 1..nk {
                if m == nk / 2 {
                    continue;
                }
                let l = pair.lambda_amp[psg.index(xi, m)].conj();
                let u = pair.mu_amp[psg.index(xi, nk - m)];
                assert!((l - u).norm() < 1e-12 * (1.0 + l.norm()));
            }
        }
        let bzero = GaborField { values: vec![Cx::default(); ah.values.len()], ..ah.clone() };
        let pair = bogoliubov_project(&ah, &bzero, &rho).unwrap();
        for ((l, m), a) in pair.lambda_amp.iter().zip(&pair.mu_amp).zip(&ah.values) {
            assert!((l - a / 2.0).norm() < 1e-15 && (m - a / 2.0).norm() < 1e-15);
        }
    }

    #[test]
    fn waveaction_limits() {
        // rho -> 0 uses |psi_hat|^2 / 2 exactly
        let z = cx(0.3, -0.7);
        assert_eq!(waveaction_value(cx(5.0, 1.0), cx(2.0, 2.0), z, 4.0, 1e-9), z.norm_sqr() / 2.0);
        // continuity across the crossover for psi_hat = sqrt(rho) (a_hat + i b_hat)
        let (ah, bh) = (cx(0.2f64, 0.1), cx(-0.4f64, 0.3));
        let k2 = 2.0f64;
        let rho = 2.0e-6 * k2;
        let psi = (ah + bh * cx(0.0, 1.0)) * rho.sqrt();
        let n_c = waveaction_value(ah, bh, psi, k2, rho);
        let n_0 = psi.norm_sqr() / 2.0;
        assert!((n_c - n_0).abs() < 1e-5 * n_0, "{n_c} {n_0}");
        assert_eq!(waveaction_value(ah, bh, psi, 0.0, 1.0), 0.0);
    }

    #[test]
    fn waveaction_of_single_mode_scales_with_amplitude() {
        let (g, ker, psg) = setup(512, 200.0, 0.1, 8);
        let u = vec![0.0; g.len()];
        let bg = Arc::new(thomas_fermi_profile(g, &u, 1.0).unwrap());
        let k = g.dk() * 30.0;
        let w = bogoliubov_frequency(k * k, 1.0);
        let mut totals = Vec::new();
        for amp in [1e-3, 2e-3] {
            // mu-branch mode: b = -(omega/k^2) a-quadrature
            let re = g.sample(|x| amp * (k * x[0]).cos());
            let im = g.sample(|x| amp * w / (k * k) * (k * x[0]).sin());
            let pert = PerturbationState::from_parts(bg.clone(), &re, &im).unwrap();
            let n = waveaction_field(&pert, &ker, &psg).unwrap();
            let row = n.at_x(10);
            let (imax, _) = row.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
            assert!((psg.k_node(imax)[0].abs() - k).abs() < 1e-9);
            totals.push(n.total());
        }
        assert!((totals[1] / totals[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn ensemble_spectrum() {
        let (g, ker, psg) = setup(256, 120.0, 0.1, 8);
        let k0 = g.dk() * 20.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let members: Vec<SlowAmplitude<f64>> = (0..16)
            .map(|_| {
                let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                slow_transform(&g.sample_complex(|x| cis(k0 * x[0] + th) * 0.5), &ker, &psg).unwrap()
            })
            .collect();
        let n = spectrum(&members).unwrap();
        let row = n.at_x(4);
        let ki = psg.k.count / 2 + 20;
        assert!((row[ki] - 0.25 * ker.f0(1)).abs() < 1e-9 * ker.f0(1));
        assert!(spectrum::<f64>(&[]).is_err());
        let zero = spectrum(&[SlowAmplitude::zeros(psg, ker)]).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spectrum_variance_falls_with_members() {
        let (g, ker, psg) = setup(256, 120.0, 0.1, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draw = |m: usize| {
            let ens: Vec<_> = (0..m).map(|_| slow_transform(&band_limited(&g, 1.5, rng.gen()), &ker, &psg).unwrap()).collect();
            spectrum(&ens).unwrap()
        };
        let var = |m: usize, draw: &mut dyn FnMut(usize) -> PhaseSpaceSpectrum<f64>| {
            let vals: Vec<f64> = (0..24).map(|_| draw(m).values[psg.index(3, psg.k.count / 2 + 5)]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
        };
        let v1 = var(1, &mut draw);
        let v16 = var(16, &mut draw);
        let ratio = v1 / v16;
        assert!(ratio > 6.0 && ratio < 40.0, "{ratio}");
    }

    proptest! {
        #[test]
        fn transform_is_linear(alpha in -2.0..2.0f64, beta in -2.0..2.0f64, s1 in 0u64..1000, s2 in 0u64..1000) {
            let (g, ker, psg) = setup(128, 64.0, 0.2, 8);
            let f1 = band_limited(&g, 2.0, s1);
            let f2 = band_limited(&g, 2.0, s2);
            let mix: Vec<Cx<f64>> = f1.iter().zip(&f2).map(|(a, b)| a * alpha + b * beta).collect();
            let t1 = gabor_transform(&f1, &ker, &psg).unwrap();
            let t2 = gabor_transform(&f2, &ker, &psg).unwrap();
            let tm = gabor_transform(&mix, &ker, &psg).unwrap();
            for i in 0..tm.values.len() {
                let lin = t1.values[i] * alpha + t2.values[i] * beta;
                prop_assert!((tm.values[i] - lin).norm() < 1e-12);
            }
        }

        #[test]
        fn slow_fast_inverse(seed in 0u64..1000) {
            let (g, ker, psg) = setup(128, 64.0, 0.2, 8);
            let gf = gabor_transform(&band_limited(&g, 2.0, seed), &ker, &psg).unwrap();
            let back = fast_restore(&slow_amplitude(&gf));
            for (a, b) in gf.values.iter().zip(&back.values) {
                prop_assert!((a - b).norm() < 1e-13);
            }
        }
    }
}
