//! Discrete calculus on the unit sphere bundle of a conformal surface.
//!
//! Points of `SM` are `(x, θ)` with `v = e^{−λ}(cos θ, sin θ)`. The spatial
//! nodes form a tensor grid on the square `[−a, a]²` inscribed in
//! `{ρ ≥ ρ_grid}`; the fibre nodes are `M` equispaced angles. Spatial
//! derivatives use 4th-order central differences with zero ghost values,
//! fibre derivatives are spectral.
//!
//! Sections of `N ⊗ π*E` are stored by their coefficient against the g-unit
//! normal `v⊥ = e^{−λ}(−sin θ, cos θ)`. With these conventions
//!
//! * `v∇u = (Vu) v⊥` with `V = ∂_θ`,
//! * `h∇u = (X⊥u + Γ(v⊥)u) v⊥` with `X⊥ = [V, X]`,
//! * `Ru = K u` on `N`, and `F u = F(v, v⊥) u = e^{−2λ} f₁₂ u`,
//!
//! and the commutator formulas read `[𝕏, v∇] = −h∇`, `[𝕏, h∇] = R v∇ + F`,
//! `h div v∇ − v div h∇ = 𝕏`, `[𝕏, v div] = −h div`.

use std::f64::consts::TAU;
use std::marker::PhantomData;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::bundle::{ckt_condition_check, curvature_at, ConnectionField, InteriorGrid};
use crate::geometry::AHModel;
use crate::linalg::{CMat, CVec};
use crate::{Error, Result};

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub n_theta: usize,
    pub rho_grid: f64,
}

impl Default for GridSpec {
    /// The reference grid: 64 × 64 spatial nodes and 64 angles.
    fn default() -> Self {
        Self {
            nx: 64,
            n_theta: 64,
            rho_grid: 0.05,
        }
    }
}

impl GridSpec {
    pub fn new(nx: usize, n_theta: usize) -> Self {
        Self {
            nx,
            n_theta,
            ..Self::default()
        }
    }

    /// Half the spatial spacing.
    pub fn refine_x(self) -> Self {
        Self {
            nx: 2 * self.nx - 1,
            ..self
        }
    }

    /// Half the spatial spacing and the angular spacing.
    pub fn refine(self) -> Self {
        Self {
            nx: 2 * self.nx - 1,
            n_theta: 2 * self.n_theta,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeGeometry {
    pub x: [f64; 2],
    pub lambda: f64,
    pub dlambda: [f64; 2],
    pub curvature: f64,
    /// `√det g · Δx · Δθ = e^{2λ} h² 2π/M`.
    pub weight: f64,
}

pub struct SphereBundleGrid {
    pub spec: GridSpec,
    /// Half side of the square.
    pub a: f64,
    pub h: f64,
    pub coords: Vec<f64>,
    pub theta: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
    nodes: Vec<NodeGeometry>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SphereBundleGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphereBundleGrid")
            .field("spec", &self.spec)
            .field("a", &self.a)
            .field("h", &self.h)
            .finish()
    }
}

impl SphereBundleGrid {
    pub fn new(model: &AHModel, spec: GridSpec) -> Result<Self> {
        if spec.nx < 8 {
            return Err(Error::Validation(format!("nx = {} is below 8", spec.nx)));
        }
        if spec.n_theta < 4 || !spec.n_theta.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "n_theta = {} must be even and at least 4",
                spec.n_theta
            )));
        }
        if !(spec.rho_grid > 0.0 && spec.rho_grid < 1.0) {
            return Err(Error::Validation(format!(
                "rho_grid = {} outside (0, 1)",
                spec.rho_grid
            )));
        }
        let a = ((1.0 - spec.rho_grid) / 2.0).sqrt();
        let h = 2.0 * a / (spec.nx - 1) as f64;
        let coords: Vec<f64> = (0..spec.nx).map(|i| -a + i as f64 * h).collect();
        let m = spec.n_theta;
        let theta: Vec<f64> = (0..m).map(|k| TAU * k as f64 / m as f64).collect();
        let dtheta = TAU / m as f64;
        let mut nodes = Vec::with_capacity(spec.nx * spec.nx);
        for &x1 in &coords {
            for &x2 in &coords {
                let x = [x1, x2];
                let l = model.lambda_jet(x);
                nodes.push(NodeGeometry {
                    x,
                    lambda: l.value,
                    dlambda: l.grad,
                    curvature: model.curvature_unchecked(x),
                    weight: (2.0 * l.value).exp() * h * h * dtheta,
                });
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            spec,
            a,
            h,
            cos: theta.iter().map(|t| t.cos()).collect(),
            sin: theta.iter().map(|t| t.sin()).collect(),
            coords,
            theta,
            nodes,
            fft: planner.plan_fft_forward(m),
            ifft: planner.plan_fft_inverse(m),
        })
    }

    pub fn nx(&self) -> usize {
        self.spec.nx
    }

    pub fn n_theta(&self) -> usize {
        self.spec.n_theta
    }

    pub fn nodes(&self) -> &[NodeGeometry] {
        &self.nodes
    }

    pub fn node(&self, i: usize, j: usize) -> &NodeGeometry {
        &self.nodes[i * self.spec.nx + j]
    }

    /// Largest Fourier degree representable without aliasing in products
    /// with first-degree coefficients.
    pub fn max_degree(&self) -> usize {
        (self.spec.n_theta - 2) / 4
    }

    pub fn check_degree(&self, m: usize) -> Result<()> {
        if m > self.max_degree() {
            return Err(Error::Aliasing {
                requested: m,
                max: self.max_degree(),
            });
        }
        Ok(())
    }

    /// Sum of the quadrature weights over the fibre at spatial node `(i, j)`.
    pub fn fiber_measure(&self, i: usize, j: usize) -> f64 {
        self.node(i, j).weight * self.spec.n_theta as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Base;
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Normal;

/// Values on the grid, `d` complex components per node, laid out as
/// `((i·nx + j)·M + k)·d + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<K> {
    pub d: usize,
    pub nx: usize,
    pub n_theta: usize,
    pub data: Vec<C>,
    kind: PhantomData<fn() -> K>,
}

/// A section of `π*E`.
pub type SectionField = GridField<Base>;
/// A section of `N ⊗ π*E`, by its coefficient against `v⊥`.
pub type NSectionField = GridField<Normal>;

impl<K> GridField<K> {
    pub fn zeros(grid: &SphereBundleGrid, d: usize) -> Self {
        Self::from_data(grid, d, vec![ZERO; grid.nx() * grid.nx() * grid.n_theta() * d])
    }

    fn from_data(grid: &SphereBundleGrid, d: usize, data: Vec<C>) -> Self {
        Self {
            d,
            nx: grid.nx(),
            n_theta: grid.n_theta(),
            data,
            kind: PhantomData,
        }
    }

    fn with_data<K2>(&self, data: Vec<C>) -> GridField<K2> {
        GridField {
            d: self.d,
            nx: self.nx,
            n_theta: self.n_theta,
            data,
            kind: PhantomData,
        }
    }

    /// Reinterprets the values as a field of the other kind.
    pub fn retag<K2>(self) -> GridField<K2> {
        GridField {
            d: self.d,
            nx: self.nx,
            n_theta: self.n_theta,
            data: self.data,
            kind: PhantomData,
        }
    }

    fn block(&self) -> usize {
        self.n_theta * self.d
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> &[C] {
        let o = ((i * self.nx + j) * self.n_theta + k) * self.d;
        &self.data[o..o + self.d]
    }

    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut [C] {
        let o = ((i * self.nx + j) * self.n_theta + k) * self.d;
        &mut self.data[o..o + self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// True when the field vanishes on the two outermost rings of nodes.
    pub fn vanishes_near_edge(&self) -> bool {
        let n = self.nx;
        let b = self.block();
        (0..n).all(|i| {
            (0..n).all(|j| {
                let edge = i < 2 || j < 2 || i + 2 >= n || j + 2 >= n;
                !edge
                    || self.data[(i * n + j) * b..(i * n + j + 1) * b]
                        .iter()
                        .all(|z| *z == ZERO)
            })
        })
    }

    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        self.with_data(self.data.iter().zip(&other.data).map(|(a, b)| a + b * alpha).collect())
    }

    pub fn scale(&self, alpha: C) -> Self {
        self.with_data(self.data.iter().map(|a| a * alpha).collect())
    }

    fn check_shape(&self, grid: &SphereBundleGrid) -> Result<()> {
        if self.nx != grid.nx() || self.n_theta != grid.n_theta() {
            return Err(Error::Validation(format!(
                "field shape {}×{} does not match grid {}×{}",
                self.nx,
                self.n_theta,
                grid.nx(),
                grid.n_theta()
            )));
        }
        Ok(())
    }
}

impl<K> GridField<K> {
    /// `⟨u, w⟩ = Σ weight · Σ_e u_e w̄_e`, summed in node order.
    pub fn inner(&self, other: &Self, grid: &SphereBundleGrid) -> C {
        let b = self.block();
        let partial: Vec<C> = self
            .data
            .par_chunks(b)
            .zip(other.data.par_chunks(b))
            .zip(grid.nodes.par_iter())
            .map(|((u, w), node)| u.iter().zip(w).map(|(a, b)| a * b.conj()).sum::<C>() * node.weight)
            .collect();
        partial.iter().sum()
    }

    pub fn norm_sq(&self, grid: &SphereBundleGrid) -> f64 {
        self.inner(self, grid).re
    }

    pub fn norm(&self, grid: &SphereBundleGrid) -> f64 {
        self.norm_sq(grid).sqrt()
    }
}

/// `u(x, θ) = f(x)`.
pub fn lift_from_base(f: impl Fn([f64; 2]) -> CVec + Sync, d: usize, grid: &SphereBundleGrid) -> SectionField {
    let mut u = SectionField::zeros(grid, d);
    let b = u.block();
    u.data
        .par_chunks_mut(b)
        .zip(grid.nodes.par_iter())
        .for_each(|(blk, node)| {
            let v = f(node.x);
            for k in 0..grid.n_theta() {
                for e in 0..d {
                    blk[k * d + e] = v[e];
                }
            }
        });
    u
}

/// Samples `f(x, θ)` at every node.
pub fn sample(f: impl Fn([f64; 2], f64) -> CVec + Sync, d: usize, grid: &SphereBundleGrid) -> SectionField {
    let mut u = SectionField::zeros(grid, d);
    let b = u.block();
    u.data
        .par_chunks_mut(b)
        .zip(grid.nodes.par_iter())
        .for_each(|(blk, node)| {
            for (k, &t) in grid.theta.iter().enumerate() {
                let v = f(node.x, t);
                for e in 0..d {
                    blk[k * d + e] = v[e];
                }
            }
        });
    u
}

/// Signed frequency of FFT bin `k`; the Nyquist bin reports `M/2`.
fn freq(k: usize, m: usize) -> i64 {
    if k <= m / 2 {
        k as i64
    } else {
        k as i64 - m as i64
    }
}

/// Applies the Fourier multiplier `mult(freq, is_nyquist)` in θ.
fn theta_multiplier<K>(grid: &SphereBundleGrid, u: &GridField<K>, mult: impl Fn(i64, bool) -> C + Sync) -> Vec<C> {
    let m = u.n_theta;
    let d = u.d;
    let mut out = vec![ZERO; u.data.len()];
    let factors: Vec<C> = (0..m).map(|k| mult(freq(k, m), m.is_multiple_of(2) && k == m / 2)).collect();
    out.par_chunks_mut(m * d).zip(u.data.par_chunks(m * d)).for_each_init(
        || {
            (
                vec![ZERO; m],
                vec![
                    ZERO;
                    grid.fft
                        .get_inplace_scratch_len()
                        .max(grid.ifft.get_inplace_scratch_len())
                ],
            )
        },
        |(buf, scratch), (o, src)| {
            for e in 0..d {
                for k in 0..m {
                    buf[k] = src[k * d + e];
                }
                grid.fft.process_with_scratch(buf, scratch);
                for k in 0..m {
                    buf[k] *= factors[k] / m as f64;
                }
                grid.ifft.process_with_scratch(buf, scratch);
                for k in 0..m {
                    o[k * d + e] = buf[k];
                }
            }
        },
    );
    out
}

/// `∂_θ`; the Nyquist coefficient is dropped so the discrete operator is
/// real and antisymmetric.
fn theta_derivative<K>(grid: &SphereBundleGrid, u: &GridField<K>) -> Vec<C> {
    theta_multiplier(grid, u, |f, nyq| if nyq { ZERO } else { C::new(0.0, f as f64) })
}

/// 4th-order central difference along `axis` (0 for `x¹`, 1 for `x²`) with
/// zero values outside the grid.
fn spatial_derivative(data: &[C], nx: usize, block: usize, axis: usize, h: f64) -> Vec<C> {
    let mut out = vec![ZERO; data.len()];
    let (si, sj) = if axis == 0 { (1i64, 0i64) } else { (0, 1) };
    let coef = [(-2i64, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)];
    let inv = 1.0 / (12.0 * h);
    out.par_chunks_mut(nx * block).enumerate().for_each(|(i, row)| {
        for j in 0..nx {
            let o = &mut row[j * block..(j + 1) * block];
            for &(off, c) in &coef {
                let (ii, jj) = (i as i64 + si * off, j as i64 + sj * off);
                if ii < 0 || jj < 0 || ii >= nx as i64 || jj >= nx as i64 {
                    continue;
                }
                let s = (ii as usize * nx + jj as usize) * block;
                for (a, b) in o.iter_mut().zip(&data[s..s + block]) {
                    *a += b * (c * inv);
                }
            }
        }
    });
    out
}

/// `out += m · u` for a `d × d` matrix and `d`-vectors.
fn mat_acc(m: &CMat, u: &[C], factor: f64, out: &mut [C]) {
    let d = u.len();
    for r in 0..d {
        let mut acc = ZERO;
        for c in 0..d {
            acc += m[(r, c)] * u[c];
        }
        out[r] += acc * factor;
    }
}

/// Direction of a first-order horizontal operator.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Dir {
    /// The geodesic vector field `X`.
    Along,
    /// `X⊥ = [V, X]`, moving in the `v⊥` direction.
    Normal,
}

/// The connection sampled on a grid, with the operators of the calculus.
pub struct SphereOps<'g> {
    pub grid: &'g SphereBundleGrid,
    pub d: usize,
    gamma: Vec<[CMat; 2]>,
    /// `e^{−2λ} f₁₂` per spatial node.
    fcoef: Vec<CMat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutatorResiduals {
    /// `[𝕏, v∇] + h∇`.
    pub r1: f64,
    /// `[𝕏, h∇] − R v∇ − F`.
    pub r2: f64,
    /// `h div v∇ − v div h∇ − 𝕏`.
    pub r3: f64,
    /// `[𝕏, v div] + h div`.
    pub r4: f64,
}

impl CommutatorResiduals {
    pub fn as_array(&self) -> [f64; 4] {
        [self.r1, self.r2, self.r3, self.r4]
    }

    fn max(self, o: Self) -> Self {
        Self {
            r1: self.r1.max(o.r1),
            r2: self.r2.max(o.r2),
            r3: self.r3.max(o.r3),
            r4: self.r4.max(o.r4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PestovTerms {
    /// `‖v∇𝕏u‖²`.
    pub v_x: f64,
    /// `‖𝕏v∇u‖²`.
    pub x_v: f64,
    /// `⟨R v∇u, v∇u⟩`.
    pub curvature: f64,
    /// `Re ⟨F u, v∇u⟩`.
    pub bundle_curvature: f64,
    /// `‖𝕏u‖²`.
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PestovReport {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_residual: f64,
    pub terms: PestovTerms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModePestovReport {
    pub m: usize,
    /// `(2m + 1)‖𝕏₊u‖²`.
    pub lhs: f64,
    /// `‖h∇u‖² + (2m − 1)‖𝕏₋u‖² − ⟨R v∇u, v∇u⟩ − Re⟨F u, v∇u⟩`.
    pub rhs: f64,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSignReport {
    pub m: usize,
    pub kappa: f64,
    /// `−⟨R v∇u, v∇u⟩`.
    pub lhs: f64,
    /// `κ λ_m ‖u‖²`.
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
    pub d_m: f64,
}

#[derive(Debug, Clone)]
pub struct XSplit {
    pub minus: SectionField,
    pub plus: SectionField,
    /// Fraction of the energy of `𝕏u` outside the modes `m ± 1`.
    pub leak: f64,
}

fn relative(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        num
    } else {
        num / den
    }
}

impl<'g> SphereOps<'g> {
    pub fn new(grid: &'g SphereBundleGrid, conn: &ConnectionField) -> Self {
        let (gamma, fcoef) = grid
            .nodes
            .par_iter()
            .map(|n| {
                let f = curvature_at(conn, n.x) * C::new((-2.0 * n.lambda).exp(), 0.0);
                (conn.symbols(n.x), f)
            })
            .unzip();
        Self {
            grid,
            d: conn.rank(),
            gamma,
            fcoef,
        }
    }

    fn check<K>(&self, u: &GridField<K>) -> Result<()> {
        u.check_shape(self.grid)?;
        if u.d != self.d {
            return Err(Error::RankMismatch {
                expected: self.d,
                got: u.d,
            });
        }
        Ok(())
    }

    /// Unit direction of `dir` at angle index `k`, as `(cos φ, sin φ)`.
    fn direction(&self, dir: Dir, k: usize) -> (f64, f64) {
        let (c, s) = (self.grid.cos[k], self.grid.sin[k]);
        match dir {
            Dir::Along => (c, s),
            Dir::Normal => (-s, c),
        }
    }

    /// `e^{−λ}(cos φ ∂₁ + sin φ ∂₂) + e^{−λ}(cos φ ∂₂λ − sin φ ∂₁λ) ∂_θ`
    /// plus the connection term `Γ(e^{−λ}(cos φ, sin φ))`.
    fn horizontal<K, K2>(&self, u: &GridField<K>, dir: Dir) -> GridField<K2> {
        let g = self.grid;
        let (nx, m, d) = (u.nx, u.n_theta, u.d);
        let b = m * d;
        let d1 = spatial_derivative(&u.data, nx, b, 0, g.h);
        let d2 = spatial_derivative(&u.data, nx, b, 1, g.h);
        let vt = theta_derivative(g, u);
        let mut out = vec![ZERO; u.data.len()];
        out.par_chunks_mut(b).enumerate().for_each(|(n, o)| {
            let node = &g.nodes[n];
            let el = (-node.lambda).exp();
            let [g1, g2] = &self.gamma[n];
            for k in 0..m {
                let (cp, sp) = self.direction(dir, k);
                let drift = el * (cp * node.dlambda[1] - sp * node.dlambda[0]);
                let r = n * b + k * d;
                let ok = &mut o[k * d..(k + 1) * d];
                for e in 0..d {
                    ok[e] = (d1[r + e] * cp + d2[r + e] * sp) * el + vt[r + e] * drift;
                }
                mat_acc(g1, &u.data[r..r + d], el * cp, ok);
                mat_acc(g2, &u.data[r..r + d], el * sp, ok);
            }
        });
        u.with_data(out)
    }

    /// `−T*` for `T = horizontal(·, dir)`, adjoint under the quadrature
    /// inner product.
    fn horizontal_divergence<K, K2>(&self, w: &GridField<K>, dir: Dir) -> GridField<K2> {
        let g = self.grid;
        let (nx, m, d) = (w.nx, w.n_theta, w.d);
        let b = m * d;
        let mut p1 = vec![ZERO; w.data.len()];
        let mut p2 = vec![ZERO; w.data.len()];
        let mut q = vec![ZERO; w.data.len()];
        p1.par_chunks_mut(b)
            .zip(p2.par_chunks_mut(b))
            .zip(q.par_chunks_mut(b))
            .enumerate()
            .for_each(|(n, ((a1, a2), bq))| {
                let node = &g.nodes[n];
                let el = (-node.lambda).exp();
                let e1 = node.lambda.exp();
                for k in 0..m {
                    let (cp, sp) = self.direction(dir, k);
                    let drift = el * (cp * node.dlambda[1] - sp * node.dlambda[0]);
                    for e in 0..d {
                        let v = w.data[n * b + k * d + e];
                        a1[k * d + e] = v * (e1 * cp);
                        a2[k * d + e] = v * (e1 * sp);
                        bq[k * d + e] = v * drift;
                    }
                }
            });
        let d1 = spatial_derivative(&p1, nx, b, 0, g.h);
        let d2 = spatial_derivative(&p2, nx, b, 1, g.h);
        let vq = theta_derivative(g, &w.with_data::<K>(q));
        let mut out = vec![ZERO; w.data.len()];
        out.par_chunks_mut(b).enumerate().for_each(|(n, o)| {
            let node = &g.nodes[n];
            let el = (-node.lambda).exp();
            let e2 = (-2.0 * node.lambda).exp();
            let [g1, g2] = &self.gamma[n];
            let (g1h, g2h) = (g1.adjoint(), g2.adjoint());
            for k in 0..m {
                let (cp, sp) = self.direction(dir, k);
                let r = n * b + k * d;
                let ok = &mut o[k * d..(k + 1) * d];
                for e in 0..d {
                    ok[e] = (d1[r + e] + d2[r + e]) * e2 + vq[r + e];
                }
                mat_acc(&g1h, &w.data[r..r + d], -el * cp, ok);
                mat_acc(&g2h, &w.data[r..r + d], -el * sp, ok);
            }
        });
        w.with_data(out)
    }

    /// `𝕏` on sections of `π*E` or of `N ⊗ π*E` (`v⊥` is parallel along
    /// geodesics, so both use the same formula).
    pub fn x<K>(&self, u: &GridField<K>) -> GridField<K> {
        self.horizontal(u, Dir::Along)
    }

    pub fn vertical_derivative(&self, u: &SectionField) -> NSectionField {
        u.with_data(theta_derivative(self.grid, u))
    }

    /// `v div w`, the negative quadrature adjoint of `v∇`.
    pub fn vertical_divergence(&self, w: &NSectionField) -> SectionField {
        w.with_data(theta_derivative(self.grid, w))
    }

    pub fn horizontal_derivative(&self, u: &SectionField) -> NSectionField {
        self.horizontal(u, Dir::Normal)
    }

    /// `h div w`, the negative quadrature adjoint of `h∇`.
    pub fn horizontal_divergence_of(&self, w: &NSectionField) -> SectionField {
        self.horizontal_divergence(w, Dir::Normal)
    }

    /// `−𝕏*`, equal to `𝕏` in the continuum for unitary connections.
    pub fn x_adjoint_neg<K>(&self, u: &GridField<K>) -> GridField<K> {
        self.horizontal_divergence(u, Dir::Along)
    }

    /// Multiplication by the Gauss curvature, `R` on `N`.
    pub fn curvature_multiply<K>(&self, u: &GridField<K>) -> GridField<K> {
        let b = u.block();
        let mut out = u.data.clone();
        out.par_chunks_mut(b)
            .zip(self.grid.nodes.par_iter())
            .for_each(|(o, n)| {
                o.iter_mut().for_each(|z| *z *= n.curvature);
            });
        u.with_data(out)
    }

    /// `F u = e^{−2λ} f₁₂ u` as a section of `N ⊗ π*E`.
    pub fn bundle_curvature(&self, u: &SectionField) -> NSectionField {
        let (m, d) = (u.n_theta, u.d);
        let b = m * d;
        let mut out = vec![ZERO; u.data.len()];
        out.par_chunks_mut(b).enumerate().for_each(|(n, o)| {
            for k in 0..m {
                let r = n * b + k * d;
                mat_acc(&self.fcoef[n], &u.data[r..r + d], 1.0, &mut o[k * d..(k + 1) * d]);
            }
        });
        u.with_data(out)
    }

    /// Residual norms of the four commutator formulas on `u`, each relative
    /// to the norm of its leading term.
    pub fn commutator_residuals(&self, u: &SectionField) -> Result<CommutatorResiduals> {
        self.check(u)?;
        let g = self.grid;
        let xu = self.x(u);
        let vu = self.vertical_derivative(u);
        let hu = self.horizontal_derivative(u);
        // [𝕏, v∇]u + h∇u
        let x_vu = self.x(&vu);
        let v_xu = self.vertical_derivative(&xu);
        let res1 = x_vu.axpy(-1.0, &v_xu).axpy(1.0, &hu);
        // [𝕏, h∇]u − R v∇u − F u
        let x_hu = self.x(&hu);
        let h_xu = self.horizontal_derivative(&xu);
        let res2 = x_hu
            .axpy(-1.0, &h_xu)
            .axpy(-1.0, &self.curvature_multiply(&vu))
            .axpy(-1.0, &self.bundle_curvature(u));
        // h div v∇u − v div h∇u − 𝕏u
        let hdiv_vu = self.horizontal_divergence_of(&vu);
        let res3 = hdiv_vu.axpy(-1.0, &self.vertical_divergence(&hu)).axpy(-1.0, &xu);
        // [𝕏, v div]w + h div w with w = u read as a section of N
        let w: NSectionField = u.clone().retag();
        let x_vdiv = self.x(&self.vertical_divergence(&w));
        let vdiv_x = self.vertical_divergence(&self.x(&w));
        let hdiv_w = self.horizontal_divergence_of(&w);
        let res4 = x_vdiv.axpy(-1.0, &vdiv_x).axpy(1.0, &hdiv_w);
        Ok(CommutatorResiduals {
            r1: relative(res1.norm(g), hu.norm(g)),
            r2: relative(res2.norm(g), x_hu.norm(g).max(h_xu.norm(g))),
            r3: relative(res3.norm(g), xu.norm(g)),
            r4: relative(res4.norm(g), hdiv_w.norm(g)),
        })
    }

    /// Both sides of
    /// `‖v∇𝕏u‖² = ‖𝕏v∇u‖² − ⟨R v∇u, v∇u⟩ − ⟨F u, v∇u⟩ + ‖𝕏u‖²`.
    pub fn pestov_residual(&self, u: &SectionField) -> Result<PestovReport> {
        self.check(u)?;
        if !u.vanishes_near_edge() {
            return Err(Error::SupportAtEdge("Pestov test section reaches the grid edge".into()));
        }
        let g = self.grid;
        let xu = self.x(u);
        let vu = self.vertical_derivative(u);
        let terms = PestovTerms {
            v_x: self.vertical_derivative(&xu).norm_sq(g),
            x_v: self.x(&vu).norm_sq(g),
            curvature: self.curvature_multiply(&vu).inner(&vu, g).re,
            bundle_curvature: self.bundle_curvature(u).inner(&vu, g).re,
            x: xu.norm_sq(g),
        };
        let lhs = terms.v_x;
        let rhs = terms.x_v - terms.curvature - terms.bundle_curvature + terms.x;
        Ok(PestovReport {
            lhs,
            rhs,
            relative_residual: relative((lhs - rhs).abs(), lhs.abs().max(rhs.abs())),
            terms,
        })
    }

    /// The Pestov identity restricted to `u ∈ Ω_m`:
    /// `(2m+1)‖𝕏₊u‖² = ‖h∇u‖² + (2m−1)‖𝕏₋u‖² − ⟨R v∇u, v∇u⟩ − ⟨F u, v∇u⟩`.
    pub fn mode_pestov_residual(&self, u: &SectionField, m: usize) -> Result<ModePestovReport> {
        let split = self.x_split(u, m)?;
        let g = self.grid;
        let vu = self.vertical_derivative(u);
        let m_f = m as f64;
        let lhs = (2.0 * m_f + 1.0) * split.plus.norm_sq(g);
        let rhs = self.horizontal_derivative(u).norm_sq(g) + (2.0 * m_f - 1.0) * split.minus.norm_sq(g)
            - self.curvature_multiply(&vu).inner(&vu, g).re
            - self.bundle_curvature(u).inner(&vu, g).re;
        Ok(ModePestovReport {
            m,
            lhs,
            rhs,
            relative_residual: relative((lhs - rhs).abs(), lhs.abs().max(rhs.abs())),
        })
    }

    /// `𝕏u` for `u ∈ Ω_m` split into its `Ω_{m−1}` and `Ω_{m+1}` parts.
    pub fn x_split(&self, u: &SectionField, m: usize) -> Result<XSplit> {
        self.check(u)?;
        if m + 1 >= self.grid.n_theta() / 2 {
            return Err(Error::Aliasing {
                requested: m + 1,
                max: self.grid.n_theta() / 2 - 1,
            });
        }
        let energies = mode_energies(u, self.grid);
        let total: f64 = energies.iter().sum();
        if total > 0.0 && 1.0 - energies[m] / total > 1e-10 {
            return Err(Error::Validation(format!(
                "section has relative energy {:.2e} outside mode {m}",
                1.0 - energies[m] / total
            )));
        }
        let xu = self.x(u);
        let minus = if m == 0 {
            SectionField::zeros(self.grid, u.d)
        } else {
            mode_component(&xu, m - 1, self.grid)
        };
        let plus = mode_component(&xu, m + 1, self.grid);
        let e = mode_energies(&xu, self.grid);
        let all: f64 = e.iter().sum();
        let kept = e[m + 1] + if m > 0 { e[m - 1] } else { 0.0 };
        Ok(XSplit {
            minus,
            plus,
            leak: relative((all - kept).max(0.0), all),
        })
    }

    /// Checks `−⟨R v∇u, v∇u⟩ ≥ κ λ_m ‖u‖²` with `κ` from the CKT check
    /// of this connection.
    pub fn curvature_term_sign_check(
        &self,
        model: &AHModel,
        conn: &ConnectionField,
        u: &SectionField,
        m: usize,
    ) -> Result<CurvatureSignReport> {
        self.check(u)?;
        let g = self.grid;
        let kappa = ckt_condition_check(conn, model, &InteriorGrid::default()).kappa;
        let vu = self.vertical_derivative(u);
        let lhs = -self.curvature_multiply(&vu).inner(&vu, g).re;
        let rhs = kappa * (m * m) as f64 * u.norm_sq(g);
        let margin = lhs - rhs;
        Ok(CurvatureSignReport {
            m,
            kappa,
            lhs,
            rhs,
            margin,
            holds: margin >= -1e-12 * lhs.abs().max(rhs.abs()),
            d_m: d_m(m),
        })
    }
}

/// Checks the edge rings before applying `𝕏`.
pub fn apply_x(u: &SectionField, conn: &ConnectionField, grid: &SphereBundleGrid) -> Result<SectionField> {
    if !u.vanishes_near_edge() {
        return Err(Error::SupportAtEdge(
            "section is nonzero on the two outermost rings".into(),
        ));
    }
    let ops = SphereOps::new(grid, conn);
    ops.check(u)?;
    Ok(ops.x(u))
}

pub fn vertical_derivative(u: &SectionField, grid: &SphereBundleGrid) -> NSectionField {
    u.with_data(theta_derivative(grid, u))
}

pub fn vertical_divergence(w: &NSectionField, grid: &SphereBundleGrid) -> SectionField {
    w.with_data(theta_derivative(grid, w))
}

pub fn horizontal_derivative(
    u: &SectionField,
    conn: &ConnectionField,
    grid: &SphereBundleGrid,
) -> Result<NSectionField> {
    if !u.vanishes_near_edge() {
        return Err(Error::SupportAtEdge(
            "section is nonzero on the two outermost rings".into(),
        ));
    }
    let ops = SphereOps::new(grid, conn);
    ops.check(u)?;
    Ok(ops.horizontal_derivative(u))
}

/// `Δ = −∂²_θ`, with eigenvalue `m²` on `Ω_m`.
pub fn vertical_laplacian(u: &SectionField, grid: &SphereBundleGrid) -> SectionField {
    u.with_data(theta_multiplier(grid, u, |f, _| C::new((f * f) as f64, 0.0)))
}

/// The `Ω_m` part of `u` (bins `±m`).
pub fn mode_component(u: &SectionField, m: usize, grid: &SphereBundleGrid) -> SectionField {
    let m = m as i64;
    u.with_data(theta_multiplier(grid, u, |f, _| {
        if f.abs() == m {
            C::new(1.0, 0.0)
        } else {
            ZERO
        }
    }))
}

/// `[u₀, …, u_{m_max}]`.
pub fn fourier_modes(u: &SectionField, grid: &SphereBundleGrid, m_max: usize) -> Result<Vec<SectionField>> {
    if m_max >= grid.n_theta() / 2 {
        return Err(Error::Aliasing {
            requested: m_max,
            max: grid.n_theta() / 2 - 1,
        });
    }
    Ok((0..=m_max).map(|m| mode_component(u, m, grid)).collect())
}

/// `‖u_m‖²` for `m = 0, …, M/2`.
pub fn mode_energies<K>(u: &GridField<K>, grid: &SphereBundleGrid) -> Vec<f64> {
    let (m, d) = (u.n_theta, u.d);
    let half = m / 2;
    let per_node: Vec<Vec<f64>> = u
        .data
        .par_chunks(m * d)
        .zip(grid.nodes.par_iter())
        .map_init(
            || (vec![ZERO; m], vec![ZERO; grid.fft.get_inplace_scratch_len()]),
            |(buf, scratch), (src, node)| {
                let mut e = vec![0.0; half + 1];
                for c in 0..d {
                    for k in 0..m {
                        buf[k] = src[k * d + c];
                    }
                    grid.fft.process_with_scratch(buf, scratch);
                    for k in 0..m {
                        e[freq(k, m).unsigned_abs() as usize] += buf[k].norm_sqr() / m as f64 * node.weight;
                    }
                }
                e
            },
        )
        .collect();
    let mut total = vec![0.0; half + 1];
    for e in &per_node {
        for (t, v) in total.iter_mut().zip(e) {
            *t += v;
        }
    }
    total
}

/// Largest `m` whose share of the energy exceeds `tol`.
pub fn degree(u: &SectionField, grid: &SphereBundleGrid, tol: f64) -> usize {
    let e = mode_energies(u, grid);
    let total: f64 = e.iter().sum();
    if total == 0.0 {
        return 0;
    }
    e.iter().rposition(|v| v / total > tol).unwrap_or(0)
}

/// `d_m = 1 + 1/[(2m − 1)(m + 1)²]`.
pub fn d_m(m: usize) -> f64 {
    let m = m as f64;
    1.0 + 1.0 / ((2.0 * m - 1.0) * (m + 1.0) * (m + 1.0))
}

/// One Fourier term `coeff · e^{imθ}` of a test section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTerm {
    pub m: i32,
    /// One `[re, im]` pair per component, or a single pair for all.
    pub coeff: Vec<[f64; 2]>,
}

/// `u(x, θ) = (1 − |x − c|²/R²)^p · Σ coeff_k e^{i m_k θ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub power: i32,
    pub terms: Vec<ModeTerm>,
}

impl Default for SectionSpec {
    fn default() -> Self {
        Self::reference(1)
    }
}

impl SectionSpec {
    /// A bump of radius 0.45 near the origin, pure of degree `m`.
    pub fn reference(m: i32) -> Self {
        Self {
            center: [0.05, -0.03],
            radius: 0.45,
            power: 10,
            terms: vec![
                ModeTerm {
                    m,
                    coeff: vec![[1.0, 0.0]],
                },
                ModeTerm {
                    m: -m,
                    coeff: vec![[0.0, if m == 0 { 0.0 } else { 0.5 }]],
                },
            ],
        }
    }

    /// A random section in `Ω_m` with a randomly placed bump.
    pub fn random_mode<R: Rng + ?Sized>(rng: &mut R, d: usize, m: i32) -> Self {
        let mut coeff = || {
            (0..d)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect()
        };
        let terms = if m == 0 {
            vec![ModeTerm { m: 0, coeff: coeff() }]
        } else {
            vec![ModeTerm { m, coeff: coeff() }, ModeTerm { m: -m, coeff: coeff() }]
        };
        Self {
            center: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
            radius: rng.random_range(0.35..0.45),
            power: 10,
            terms,
        }
    }

    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.m.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: [f64; 2], theta: f64, d: usize) -> CVec {
        let q = ((x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2)) / (self.radius * self.radius);
        if q >= 1.0 {
            return CVec::zeros(d);
        }
        let b = (1.0 - q).powi(self.power);
        let mut v = CVec::zeros(d);
        for t in &self.terms {
            let ph = C::from_polar(b, t.m as f64 * theta);
            for e in 0..d {
                let [re, im] = if t.coeff.len() == 1 { t.coeff[0] } else { t.coeff[e] };
                v[e] += ph * C::new(re, im);
            }
        }
        v
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.radius > 0.0) || self.power < 6 {
            return Err(Error::Validation("section bump needs radius > 0 and power ≥ 6".into()));
        }
        if self.terms.iter().any(|t| t.coeff.len() != 1 && t.coeff.len() != d) {
            return Err(Error::Validation(format!(
                "mode coefficients must have length 1 or {d}"
            )));
        }
        Ok(())
    }

    /// Samples on the grid, requiring compact support away from the edge.
    pub fn sample(&self, grid: &SphereBundleGrid, d: usize) -> Result<SectionField> {
        self.validate(d)?;
        grid.check_degree(self.degree())?;
        let u = sample(|x, t| self.eval(x, t, d), d, grid);
        if !u.vanishes_near_edge() {
            return Err(Error::SupportAtEdge(format!(
                "bump at {:?} with radius {} reaches the grid edge",
                self.center, self.radius
            )));
        }
        Ok(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub nx: usize,
    pub n_theta: usize,
    pub h: f64,
    pub relative_residual: f64,
}

/// Pestov residual for the same section on successively refined grids.
pub fn pestov_refinement(
    model: &AHModel,
    conn: &ConnectionField,
    section: &SectionSpec,
    start: GridSpec,
    levels: usize,
) -> Result<Vec<RefinementRow>> {
    let mut spec = start;
    let mut rows = Vec::with_capacity(levels);
    for _ in 0..levels {
        let grid = SphereBundleGrid::new(model, spec)?;
        let ops = SphereOps::new(&grid, conn);
        let u = section.sample(&grid, conn.rank())?;
        rows.push(RefinementRow {
            nx: spec.nx,
            n_theta: spec.n_theta,
            h: grid.h,
            relative_residual: ops.pestov_residual(&u)?.relative_residual,
        });
        spec = spec.refine();
    }
    Ok(rows)
}

/// Worst commutator residuals over several test sections.
pub fn commutator_residuals(
    conn: &ConnectionField,
    grid: &SphereBundleGrid,
    tests: &[SectionField],
) -> Result<CommutatorResiduals> {
    let ops = SphereOps::new(grid, conn);
    let mut worst = CommutatorResiduals {
        r1: 0.0,
        r2: 0.0,
        r3: 0.0,
        r4: 0.0,
    };
    for u in tests {
        if !u.vanishes_near_edge() {
            return Err(Error::SupportAtEdge(
                "commutator test section reaches the grid edge".into(),
            ));
        }
        worst = worst.max(ops.commutator_residuals(u)?);
    }
    Ok(worst)
}

/// Angle of the fibre node closest to `theta`.
pub fn nearest_theta_index(grid: &SphereBundleGrid, theta: f64) -> usize {
    let m = grid.n_theta();
    ((theta.rem_euclid(TAU) / TAU * m as f64).round() as usize) % m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{integrate_for, Bump, IntegratorConfig, ModelLimits, PhasePoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(model: &AHModel) -> SphereBundleGrid {
        SphereBundleGrid::new(model, GridSpec::new(32, 16)).unwrap()
    }

    fn perturbed() -> AHModel {
        AHModel::perturbed(
            Bump {
                center: [0.1, -0.05],
                radius: 0.5,
                amplitude: 0.1,
            },
            &ModelLimits::default(),
        )
        .unwrap()
    }

    #[test]
    fn weights_and_fiber_measure() {
        let m = perturbed();
        let g = small(&m);
        let n = g.node(5, 9);
        let expect = (2.0 * n.lambda).exp() * g.h * g.h * TAU;
        assert!((g.fiber_measure(5, 9) - expect).abs() < 1e-12 * expect);
        assert!(g.nodes().iter().all(|n| n.weight > 0.0));
        assert!(g.nodes().iter().all(|n| crate::geometry::rho(n.x) >= 0.05 - 1e-12));
    }

    #[test]
    fn lifted_fields_have_degree_zero() {
        let m = AHModel::poincare();
        let g = small(&m);
        let u = lift_from_base(|x| CVec::from_vec(vec![C::new(x[0], 1.0), C::new(2.0, x[1])]), 2, &g);
        assert_eq!(degree(&u, &g, 1e-12), 0);
        let v = vertical_derivative(&u, &g);
        assert!(v.data.iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn vertical_derivative_is_spectral() {
        let m = AHModel::poincare();
        let g = small(&m);
        let c = CVec::from_vec(vec![C::new(1.0, -2.0)]);
        let u = sample(|_, t| c.clone() * C::from_polar(1.0, t), 1, &g);
        let v = vertical_derivative(&u, &g);
        let expect = sample(|_, t| c.clone() * C::new(0.0, 1.0) * C::from_polar(1.0, t), 1, &g);
        let err = v
            .data
            .iter()
            .zip(&expect.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
        let lap = vertical_laplacian(&sample(|_, t| c.clone() * C::from_polar(1.0, 2.0 * t), 1, &g), &g);
        assert!(lap
            .data
            .iter()
            .zip(&sample(|_, t| c.clone() * C::from_polar(4.0, 2.0 * t), 1, &g).data)
            .all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn vertical_adjointness() {
        let m = perturbed();
        let g = small(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = SectionSpec::random_mode(&mut rng, 2, 3).sample(&g, 2).unwrap();
        let u = u.axpy(1.0, &SectionSpec::random_mode(&mut rng, 2, 1).sample(&g, 2).unwrap());
        let w: NSectionField = SectionSpec::random_mode(&mut rng, 2, 2).sample(&g, 2).unwrap().retag();
        let lhs = vertical_derivative(&u, &g).inner(&w, &g);
        let rhs = u.inner(&vertical_divergence(&w, &g), &g);
        assert!((lhs + rhs).norm() < 1e-10);
    }

    #[test]
    fn horizontal_divergence_is_discrete_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = perturbed();
        let g = small(&m);
        let conn = ConnectionField::random(&mut rng, 2, 2, 2, 0.5);
        let ops = SphereOps::new(&g, &conn);
        let u = SectionSpec::random_mode(&mut rng, 2, 2).sample(&g, 2).unwrap();
        let w: NSectionField = SectionSpec::random_mode(&mut rng, 2, 1).sample(&g, 2).unwrap().retag();
        let lhs = ops.horizontal_derivative(&u).inner(&w, &g);
        let rhs = u.inner(&ops.horizontal_divergence_of(&w), &g);
        assert!((lhs + rhs).norm() < 1e-10 * lhs.norm().max(1.0));
        let wx: SectionField = w.clone().retag();
        let lhs = ops.x(&u).inner(&wx, &g);
        let rhs = u.inner(&ops.x_adjoint_neg(&wx), &g);
        assert!((lhs + rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn x_of_lifted_field_is_directional_derivative() {
        let m = perturbed();
        let mut errs = Vec::new();
        for nx in [33, 65] {
            let g = SphereBundleGrid::new(&m, GridSpec::new(nx, 8)).unwrap();
            let spec = SectionSpec::reference(0);
            let u = spec.sample(&g, 1).unwrap();
            let xu = apply_x(&u, &ConnectionField::trivial(1), &g).unwrap();
            let mut err: f64 = 0.0;
            for i in 0..nx {
                for j in 0..nx {
                    let n = g.node(i, j);
                    for (k, &t) in g.theta.iter().enumerate() {
                        let v = m.unit_vector(n.x, t);
                        let hh = 1e-5;
                        let fd = (spec.eval([n.x[0] + hh * v[0], n.x[1] + hh * v[1]], t, 1)[0]
                            - spec.eval([n.x[0] - hh * v[0], n.x[1] - hh * v[1]], t, 1)[0])
                            / (2.0 * hh);
                        err = err.max((xu.at(i, j, k)[0] - fd).norm());
                    }
                }
            }
            errs.push(err);
        }
        // max |Xu| is about 6
        assert!(errs[1] < 2e-3, "{errs:?}");
        assert!(errs[0] / errs[1] > 10.0, "{errs:?}");
    }

    #[test]
    fn x_matches_flow_difference() {
        let m = perturbed();
        let g = SphereBundleGrid::new(&m, GridSpec::new(129, 16)).unwrap();
        let spec = SectionSpec {
            center: [0.0, 0.0],
            radius: 0.6,
            power: 8,
            ..SectionSpec::reference(2)
        };
        let u = spec.sample(&g, 1).unwrap();
        let xu = apply_x(&u, &ConnectionField::trivial(1), &g).unwrap();
        let cfg = IntegratorConfig {
            atol: 1e-13,
            rtol: 1e-13,
            ..Default::default()
        };
        let t = 1e-4;
        let mut err: f64 = 0.0;
        for (i, j, k) in [(40, 60, 3), (64, 64, 0), (80, 50, 11), (56, 72, 7)] {
            let n = g.node(i, j);
            let start = PhasePoint::from_angle(&m, n.x, g.theta[k]).unwrap();
            let value = |tt: f64| {
                let s = *integrate_for(&m, &start, tt, &cfg).unwrap().last().unwrap();
                spec.eval(s.x, s.theta, 1)[0]
            };
            let fd = (value(t) - value(-t)) / (2.0 * t);
            err = err.max((fd - xu.at(i, j, k)[0]).norm());
        }
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn modes_are_orthogonal_and_commute_with_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = AHModel::poincare();
        let g = small(&m);
        let mut u = SectionField::zeros(&g, 2);
        for k in 0..4 {
            u = u.axpy(1.0, &SectionSpec::random_mode(&mut rng, 2, k).sample(&g, 2).unwrap());
        }
        let modes = fourier_modes(&u, &g, 4).unwrap();
        let scale = u.norm_sq(&g);
        for a in 0..modes.len() {
            for b in 0..a {
                assert!(modes[a].inner(&modes[b], &g).norm() < 1e-14 * scale);
            }
        }
        let lap_modes = fourier_modes(&vertical_laplacian(&u, &g), &g, 4).unwrap();
        for (lm, md) in lap_modes.iter().zip(&modes) {
            let l = vertical_laplacian(md, &g);
            assert!(lm.data.iter().zip(&l.data).all(|(a, b)| (a - b).norm() < 1e-12));
        }
        assert!(fourier_modes(&u, &g, 8).is_err());
        assert_eq!(degree(&u, &g, 1e-10), 3);
    }

    #[test]
    fn x_split_leak_and_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = perturbed();
        let g = SphereBundleGrid::new(&m, GridSpec::new(32, 32)).unwrap();
        let conn = ConnectionField::random(&mut rng, 2, 2, 2, 0.5);
        let ops = SphereOps::new(&g, &conn);
        for k in 0..=6 {
            let u = SectionSpec::random_mode(&mut rng, 2, k as i32).sample(&g, 2).unwrap();
            let s = ops.x_split(&u, k).unwrap();
            assert!(s.leak < 1e-10, "m = {k}: leak {}", s.leak);
            let xu = ops.x(&u);
            let rest = xu.axpy(-1.0, &s.minus).axpy(-1.0, &s.plus);
            assert!(rest.norm(&g) < 1e-6 * xu.norm(&g));
            if k == 0 {
                assert_eq!(s.minus.norm(&g), 0.0);
            }
        }
        let mixed = SectionSpec::random_mode(&mut rng, 2, 1)
            .sample(&g, 2)
            .unwrap()
            .axpy(1.0, &SectionSpec::random_mode(&mut rng, 2, 2).sample(&g, 2).unwrap());
        assert!(ops.x_split(&mixed, 1).is_err());
    }

    #[test]
    fn commutators_hold_on_reference_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = perturbed();
        let conn = ConnectionField::random(&mut rng, 2, 2, 2, 0.5);
        let g = SphereBundleGrid::new(&m, GridSpec::new(64, 16)).unwrap();
        let u = SectionSpec::random_mode(&mut rng, 2, 1).sample(&g, 2).unwrap();
        let r = commutator_residuals(&conn, &g, &[u]).unwrap();
        for (i, v) in r.as_array().iter().enumerate() {
            assert!(*v < 1e-4, "r{} = {v}", i + 1);
        }
    }

    #[test]
    fn pestov_identity_with_connection() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = perturbed();
        let conn = ConnectionField::random(&mut rng, 2, 2, 2, 0.5);
        let g = SphereBundleGrid::new(&m, GridSpec::new(64, 16)).unwrap();
        let ops = SphereOps::new(&g, &conn);
        let u = SectionSpec::random_mode(&mut rng, 2, 1)
            .sample(&g, 2)
            .unwrap()
            .axpy(1.0, &SectionSpec::random_mode(&mut rng, 2, 2).sample(&g, 2).unwrap());
        let rep = ops.pestov_residual(&u).unwrap();
        assert!(rep.relative_residual < 1e-2, "{rep:?}");
        assert!(rep.terms.bundle_curvature.abs() > 1e-6 * rep.lhs);
        let zero = ops.pestov_residual(&SectionField::zeros(&g, 2)).unwrap();
        assert_eq!((zero.lhs, zero.rhs, zero.relative_residual), (0.0, 0.0, 0.0));
        let u2 = SectionSpec::random_mode(&mut rng, 2, 2).sample(&g, 2).unwrap();
        let mp = ops.mode_pestov_residual(&u2, 2).unwrap();
        assert!(mp.relative_residual < 1e-2, "{mp:?}");
    }

    #[test]
    fn curvature_sign_and_d_m() {
        let m = AHModel::poincare();
        let g = small(&m);
        let t = ConnectionField::trivial(1);
        let ops = SphereOps::new(&g, &t);
        let u = SectionSpec::reference(1).sample(&g, 1).unwrap();
        let r = ops.curvature_term_sign_check(&m, &t, &u, 1).unwrap();
        assert!(r.holds, "{r:?}");
        assert!((r.kappa - 1.0).abs() < 1e-12);
        let z = ops
            .curvature_term_sign_check(&m, &t, &SectionField::zeros(&g, 1), 1)
            .unwrap();
        assert!(z.holds && z.lhs == 0.0);
        assert!((d_m(2) - 28.0 / 27.0).abs() < 1e-15);
        assert!((d_m(1) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn edge_support_rejected() {
        let m = AHModel::poincare();
        let g = small(&m);
        let spec = SectionSpec {
            center: [0.6, 0.0],
            ..SectionSpec::reference(1)
        };
        assert!(matches!(spec.sample(&g, 1), Err(Error::SupportAtEdge(_))));
        let u = lift_from_base(|_| CVec::from_element(1, C::new(1.0, 0.0)), 1, &g);
        assert!(apply_x(&u, &ConnectionField::trivial(1), &g).is_err());
        assert!(matches!(
            SectionSpec::reference(4).sample(&g, 1),
            Err(Error::Aliasing { .. })
        ));
    }
}
