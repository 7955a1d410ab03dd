//! Poincaré disk and compactly supported conformal perturbations of it.
//!
//! Every metric here has the form `g = e^{2λ} δ` with
//! `λ = ln 2 − ln(1 − |x|²) + ψ(x)`, where `ψ` vanishes outside a bump.
//! Geodesics are integrated in the isothermal angle form
//!
//! ```text
//! ẋ = e^{−λ} (cos θ, sin θ),   θ̇ = e^{−λ} (cos θ ∂₂λ − sin θ ∂₁λ)
//! ```
//!
//! which is the geodesic equation for a conformal metric with the velocity
//! written as `v = e^{−λ}(cos θ, sin θ)`. Unit speed holds by construction.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ode::{self, OdeFailure, OdeOptions, Stop};
use crate::{Error, Result};

/// Points closer than this to the unit circle are rejected.
pub const DOMAIN_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    PoincareDisk,
    ConformalPerturbed,
}

/// `ψ(x) = A · exp(1 − 1/(1 − q))` with `q = |x − c|²/R²`, zero for `q ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

/// Value, gradient and Hessian of a scalar field on the plane.
#[derive(Debug, Clone, Copy, Default)]
pub struct Jet2 {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

impl Bump {
    pub fn jet(&self, x: [f64; 2]) -> Jet2 {
        let r2 = self.radius * self.radius;
        let dx = [x[0] - self.center[0], x[1] - self.center[1]];
        let q = (dx[0] * dx[0] + dx[1] * dx[1]) / r2;
        if q >= 1.0 {
            return Jet2::default();
        }
        let u = 1.0 / (1.0 - q);
        let b = (1.0 - u).exp();
        let b1 = -b * u * u;
        let b2 = b * (u.powi(4) - 2.0 * u.powi(3));
        let a = self.amplitude;
        let dq = [2.0 * dx[0] / r2, 2.0 * dx[1] / r2];
        let mut hess = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let ddq = if i == j { 2.0 / r2 } else { 0.0 };
                hess[i][j] = a * (b2 * dq[i] * dq[j] + b1 * ddq);
            }
        }
        Jet2 {
            value: a * b,
            grad: [a * b1 * dq[0], a * b1 * dq[1]],
            hess,
        }
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let dx = [x[0] - self.center[0], x[1] - self.center[1]];
        dx[0] * dx[0] + dx[1] * dx[1] < self.radius * self.radius
    }
}

/// Admissibility limits applied when building a perturbed model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelLimits {
    /// The bump support must lie in `{ρ ≥ eps0}`.
    pub eps0: f64,
    pub amplitude_cap: f64,
    /// Side length of the curvature validation grids.
    pub validation_grid: usize,
}

impl Default for ModelLimits {
    fn default() -> Self {
        Self {
            eps0: 0.1,
            amplitude_cap: 0.5,
            validation_grid: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AHModel {
    pub kind: ModelKind,
    pub bump: Option<Bump>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub g: [[f64; 2]; 2],
    pub g_inv: [[f64; 2]; 2],
    /// `christoffel[k][i][j] = Γ^k_ij`.
    pub christoffel: [[[f64; 2]; 2]; 2],
    /// `dg[k][i][j] = ∂_k g_ij`.
    pub dg: [[[f64; 2]; 2]; 2],
}

pub fn rho(x: [f64; 2]) -> f64 {
    1.0 - x[0] * x[0] - x[1] * x[1]
}

impl AHModel {
    pub fn poincare() -> Self {
        Self {
            kind: ModelKind::PoincareDisk,
            bump: None,
        }
    }

    /// Builds a perturbed model after checking support, amplitude and
    /// curvature sign on the validation grids.
    pub fn perturbed(bump: Bump, limits: &ModelLimits) -> Result<Self> {
        let c = bump.center;
        if !(bump.radius > 0.0) || !bump.amplitude.is_finite() {
            return Err(Error::Validation("bump radius must be positive".into()));
        }
        let reach = (c[0] * c[0] + c[1] * c[1]).sqrt() + bump.radius;
        if reach > (1.0 - limits.eps0).sqrt() {
            return Err(Error::Validation(format!(
                "bump support reaches ρ < {} (outer radius {reach:.4})",
                limits.eps0
            )));
        }
        if bump.amplitude.abs() > limits.amplitude_cap {
            return Err(Error::Validation(format!(
                "bump amplitude {} exceeds cap {}",
                bump.amplitude, limits.amplitude_cap
            )));
        }
        let model = Self {
            kind: ModelKind::ConformalPerturbed,
            bump: Some(bump),
        };
        if let Some((x, k)) = model.max_curvature_on_grid(limits.validation_grid) {
            if k >= 0.0 {
                return Err(Error::Validation(format!(
                    "curvature {k:.4} ≥ 0 at ({:.4}, {:.4})",
                    x[0], x[1]
                )));
            }
        }
        Ok(model)
    }

    fn check_domain(&self, x: [f64; 2]) -> Result<()> {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        if !(r < 1.0 - DOMAIN_MARGIN) {
            return Err(Error::Domain(x[0], x[1]));
        }
        Ok(())
    }

    /// Jet of the log conformal factor `λ`. No domain check.
    pub fn lambda_jet(&self, x: [f64; 2]) -> Jet2 {
        let rho = rho(x);
        let mut jet = Jet2 {
            value: 2f64.ln() - rho.ln(),
            grad: [2.0 * x[0] / rho, 2.0 * x[1] / rho],
            hess: [[0.0; 2]; 2],
        };
        for i in 0..2 {
            for j in 0..2 {
                let d = if i == j { 2.0 / rho } else { 0.0 };
                jet.hess[i][j] = d + 4.0 * x[i] * x[j] / (rho * rho);
            }
        }
        if let Some(b) = &self.bump {
            let p = b.jet(x);
            jet.value += p.value;
            for i in 0..2 {
                jet.grad[i] += p.grad[i];
                for j in 0..2 {
                    jet.hess[i][j] += p.hess[i][j];
                }
            }
        }
        jet
    }

    pub fn metric_at(&self, x: [f64; 2]) -> Result<MetricSample> {
        self.check_domain(x)?;
        let jet = self.lambda_jet(x);
        let e2 = (2.0 * jet.value).exp();
        let dl = jet.grad;
        let mut s = MetricSample {
            g: [[e2, 0.0], [0.0, e2]],
            g_inv: [[1.0 / e2, 0.0], [0.0, 1.0 / e2]],
            christoffel: [[[0.0; 2]; 2]; 2],
            dg: [[[0.0; 2]; 2]; 2],
        };
        for k in 0..2 {
            s.dg[k][0][0] = 2.0 * dl[k] * e2;
            s.dg[k][1][1] = 2.0 * dl[k] * e2;
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = -if i == j { dl[k] } else { 0.0 };
                    if k == i {
                        v += dl[j];
                    }
                    if k == j {
                        v += dl[i];
                    }
                    s.christoffel[k][i][j] = v;
                }
            }
        }
        Ok(s)
    }

    pub fn rho_at(&self, x: [f64; 2]) -> f64 {
        rho(x)
    }

    /// Gauss curvature `K = −e^{−2λ} Δλ`.
    pub fn sectional_curvature(&self, x: [f64; 2]) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.curvature_unchecked(x))
    }

    pub(crate) fn curvature_unchecked(&self, x: [f64; 2]) -> f64 {
        match &self.bump {
            None => -1.0,
            Some(b) => {
                let p = b.jet(x);
                let r = rho(x);
                let lap = p.hess[0][0] + p.hess[1][1];
                (-2.0 * p.value).exp() * (-1.0 - r * r * lap / 4.0)
            }
        }
    }

    /// Largest curvature over an `n × n` grid of the disk and an `n × n`
    /// grid of the bump's bounding box. `None` for the unperturbed disk.
    pub fn max_curvature_on_grid(&self, n: usize) -> Option<([f64; 2], f64)> {
        let b = self.bump.as_ref()?;
        let mut best = ([0.0, 0.0], f64::NEG_INFINITY);
        let mut visit = |x: [f64; 2]| {
            if rho(x) > 1e-6 {
                let k = self.curvature_unchecked(x);
                if k > best.1 {
                    best = (x, k);
                }
            }
        };
        for i in 0..n {
            for j in 0..n {
                let u = (i as f64 + 0.5) / n as f64;
                let v = (j as f64 + 0.5) / n as f64;
                visit([2.0 * u - 1.0, 2.0 * v - 1.0]);
                visit([
                    b.center[0] + b.radius * (2.0 * u - 1.0),
                    b.center[1] + b.radius * (2.0 * v - 1.0),
                ]);
            }
        }
        Some(best)
    }

    /// Metric speed `|v|_g`.
    pub fn speed(&self, x: [f64; 2], v: [f64; 2]) -> f64 {
        self.lambda_jet(x).value.exp() * (v[0] * v[0] + v[1] * v[1]).sqrt()
    }

    /// Unit vector `e^{−λ}(cos θ, sin θ)`.
    pub fn unit_vector(&self, x: [f64; 2], theta: f64) -> [f64; 2] {
        let el = (-self.lambda_jet(x).value).exp();
        [el * theta.cos(), el * theta.sin()]
    }

    /// Tangential boundary component `g(v, ∂_α)` of the b-covector dual to `v`.
    pub fn angular_momentum(&self, x: [f64; 2], v: [f64; 2]) -> f64 {
        (2.0 * self.lambda_jet(x).value).exp() * (x[0] * v[1] - x[1] * v[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: [f64; 2],
    pub v: [f64; 2],
}

impl PhasePoint {
    pub fn new(model: &AHModel, x: [f64; 2], v: [f64; 2]) -> Result<Self> {
        model.check_domain(x)?;
        let s = model.speed(x, v);
        if (s * s - 1.0).abs() >= 1e-10 {
            return Err(Error::Validation(format!("|v|_g² = {} is not 1", s * s)));
        }
        Ok(Self { x, v })
    }

    pub fn from_angle(model: &AHModel, x: [f64; 2], theta: f64) -> Result<Self> {
        model.check_domain(x)?;
        Ok(Self {
            x,
            v: model.unit_vector(x, theta),
        })
    }

    pub fn theta(&self) -> f64 {
        self.v[1].atan2(self.v[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Incoming,
    Outgoing,
}

impl Direction {
    /// Normal b-covector component: +1 incoming, −1 outgoing.
    pub fn eta0(self) -> f64 {
        match self {
            Direction::Incoming => 1.0,
            Direction::Outgoing => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDatum {
    pub alpha: f64,
    pub eta_tangential: f64,
    pub direction: Direction,
}

impl BoundaryDatum {
    pub fn incoming(alpha: f64, eta: f64) -> Self {
        Self {
            alpha: alpha.rem_euclid(TAU),
            eta_tangential: eta,
            direction: Direction::Incoming,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub x: [f64; 2],
    pub v: [f64; 2],
    /// Euclidean direction angle of `v`, continuous along the path.
    pub theta: f64,
}

/// How a path was produced; analytic paths can be evaluated at any time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathKind {
    /// `z(t) = e^{iψ}(w + is)/(1 − isw)` with `w = tanh(t/2)`.
    Chord {
        psi: f64,
        s: f64,
    },
    Integrated,
}

#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub samples: Vec<PathSample>,
    pub entry: BoundaryDatum,
    pub exit: BoundaryDatum,
    pub rho_cut: f64,
    pub kind: PathKind,
}

/// Which form of the geodesic equation to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeodesicForm {
    /// State `(x, θ)`; unit speed exact.
    Angle,
    /// State `(x, v)` with `ẍ^k + Γ^k_ij ẋ^i ẋ^j = 0`.
    Christoffel,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub atol: f64,
    pub rtol: f64,
    pub rho_cut: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub fixed_step: Option<f64>,
    pub form: GeodesicForm,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-10,
            rho_cut: 1e-6,
            max_step: 0.5,
            max_steps: 100_000,
            fixed_step: None,
            form: GeodesicForm::Angle,
        }
    }
}

impl IntegratorConfig {
    pub fn ode_options(&self) -> OdeOptions {
        OdeOptions {
            atol: self.atol,
            rtol: self.rtol,
            h_init: 1e-2f64.min(self.max_step),
            h_max: self.max_step,
            max_steps: self.max_steps,
            fixed_step: self.fixed_step,
        }
    }

    pub fn with_rho_cut(mut self, rho_cut: f64) -> Self {
        self.rho_cut = rho_cut;
        self
    }
}

/// Right-hand side of the angle form.
pub(crate) fn angle_rhs(model: &AHModel, y: &[f64], dy: &mut [f64]) {
    let jet = model.lambda_jet([y[0], y[1]]);
    let el = (-jet.value).exp();
    let (s, c) = y[2].sin_cos();
    dy[0] = el * c;
    dy[1] = el * s;
    dy[2] = el * (c * jet.grad[1] - s * jet.grad[0]);
}

fn christoffel_rhs(model: &AHModel, y: &[f64], dy: &mut [f64]) {
    let dl = model.lambda_jet([y[0], y[1]]).grad;
    let v = [y[2], y[3]];
    let vv = v[0] * v[0] + v[1] * v[1];
    let vdl = v[0] * dl[0] + v[1] * dl[1];
    dy[0] = v[0];
    dy[1] = v[1];
    // Γ^k_ij v^i v^j = 2 v^k (v·∇λ) − |v|² ∂_kλ
    dy[2] = -(2.0 * v[0] * vdl - vv * dl[0]);
    dy[3] = -(2.0 * v[1] * vdl - vv * dl[1]);
}

struct Flow<'a> {
    model: &'a AHModel,
    form: GeodesicForm,
}

impl ode::OdeSystem for Flow<'_> {
    fn dim(&self) -> usize {
        match self.form {
            GeodesicForm::Angle => 3,
            GeodesicForm::Christoffel => 4,
        }
    }
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        match self.form {
            GeodesicForm::Angle => angle_rhs(self.model, y, dy),
            GeodesicForm::Christoffel => christoffel_rhs(self.model, y, dy),
        }
    }
}

impl Flow<'_> {
    fn state(&self, p: &PhasePoint) -> Vec<f64> {
        match self.form {
            GeodesicForm::Angle => vec![p.x[0], p.x[1], p.theta()],
            GeodesicForm::Christoffel => vec![p.x[0], p.x[1], p.v[0], p.v[1]],
        }
    }

    fn sample(&self, t: f64, y: &[f64]) -> PathSample {
        let x = [y[0], y[1]];
        match self.form {
            GeodesicForm::Angle => PathSample {
                t,
                x,
                v: self.model.unit_vector(x, y[2]),
                theta: y[2],
            },
            GeodesicForm::Christoffel => PathSample {
                t,
                x,
                v: [y[2], y[3]],
                theta: y[3].atan2(y[2]),
            },
        }
    }
}

fn unwrap_theta(samples: &mut [PathSample]) {
    for i in 1..samples.len() {
        let prev = samples[i - 1].theta;
        let mut th = samples[i].theta;
        while th - prev > PI {
            th -= TAU;
        }
        while th - prev < -PI {
            th += TAU;
        }
        samples[i].theta = th;
    }
}

/// Least-squares quadratic in `ρ` evaluated at `ρ = 0`.
fn extrapolate_quadratic(rhos: &[f64], values: &[f64]) -> f64 {
    let n = rhos.len();
    if n < 3 {
        return values[0];
    }
    let scale = rhos.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let a = DMatrix::from_fn(n, 3, |i, j| (rhos[i] / scale).powi(j as i32));
    let b = DVector::from_column_slice(values);
    match a.svd(true, true).solve(&b, 1e-14) {
        Ok(c) => c[0],
        Err(_) => values[0],
    }
}

/// Boundary datum from the samples nearest the boundary (first five for
/// `Incoming`, last five for `Outgoing`).
fn boundary_datum(model: &AHModel, samples: &[PathSample], direction: Direction) -> BoundaryDatum {
    let k = samples.len().min(5);
    let tail: Vec<&PathSample> = match direction {
        Direction::Incoming => samples[..k].iter().collect(),
        Direction::Outgoing => samples[samples.len() - k..].iter().rev().collect(),
    };
    let rhos: Vec<f64> = tail.iter().map(|s| rho(s.x)).collect();
    let mut alphas: Vec<f64> = tail.iter().map(|s| s.x[1].atan2(s.x[0])).collect();
    for i in 1..alphas.len() {
        while alphas[i] - alphas[i - 1] > PI {
            alphas[i] -= TAU;
        }
        while alphas[i] - alphas[i - 1] < -PI {
            alphas[i] += TAU;
        }
    }
    let etas: Vec<f64> = tail.iter().map(|s| model.angular_momentum(s.x, s.v)).collect();
    BoundaryDatum {
        alpha: extrapolate_quadratic(&rhos, &alphas).rem_euclid(TAU),
        eta_tangential: extrapolate_quadratic(&rhos, &etas),
        direction,
    }
}

struct HalfPath {
    samples: Vec<PathSample>,
    steps: usize,
    trapped: bool,
}

fn half_path(model: &AHModel, start: &PhasePoint, config: &IntegratorConfig, dir: f64) -> Result<HalfPath> {
    let flow = Flow {
        model,
        form: config.form,
    };
    let y0 = flow.state(start);
    let rho_cut = config.rho_cut;
    let g = move |_t: f64, y: &[f64]| rho([y[0], y[1]]) - rho_cut;
    let opts = config.ode_options();
    let (sol, trapped) = match ode::integrate(&flow, 0.0, &y0, Stop::Event { direction: dir, g: &g }, &opts, &[], true)
    {
        Ok(sol) => (sol, false),
        Err(OdeFailure::StepBudget(sol)) => (sol, true),
        Err(e) => return Err(Error::Numerical(format!("geodesic integration: {e}"))),
    };
    Ok(HalfPath {
        samples: sol.t.iter().zip(&sol.y).map(|(t, y)| flow.sample(*t, y)).collect(),
        steps: sol.steps,
        trapped,
    })
}

/// Integrates the complete geodesic through `start` in both directions until
/// `ρ = rho_cut`. Time zero is at `start`.
pub fn integrate_geodesic(model: &AHModel, start: &PhasePoint, config: &IntegratorConfig) -> Result<GeodesicPath> {
    if !(rho(start.x) > config.rho_cut) {
        return Err(Error::Validation(format!(
            "start ρ = {} is not above rho_cut = {}",
            rho(start.x),
            config.rho_cut
        )));
    }
    model.check_domain(start.x)?;
    let back = half_path(model, start, config, -1.0)?;
    let fwd = half_path(model, start, config, 1.0)?;
    let mut samples: Vec<PathSample> = back.samples.into_iter().rev().collect();
    samples.pop();
    samples.extend(fwd.samples);
    finish_path(
        model,
        samples,
        config.rho_cut,
        back.trapped || fwd.trapped,
        back.steps + fwd.steps,
    )
}

fn finish_path(
    model: &AHModel,
    mut samples: Vec<PathSample>,
    rho_cut: f64,
    trapped: bool,
    steps: usize,
) -> Result<GeodesicPath> {
    unwrap_theta(&mut samples);
    let path = GeodesicPath {
        entry: boundary_datum(model, &samples, Direction::Incoming),
        exit: boundary_datum(model, &samples, Direction::Outgoing),
        samples,
        rho_cut,
        kind: PathKind::Integrated,
    };
    if trapped {
        return Err(Error::Trapped {
            steps,
            partial: Box::new(path),
        });
    }
    Ok(path)
}

/// Integrates from `start` for a fixed time span `[0, t_end]`, recording
/// every step. Used for convergence studies.
pub fn integrate_for(
    model: &AHModel,
    start: &PhasePoint,
    t_end: f64,
    config: &IntegratorConfig,
) -> Result<Vec<PathSample>> {
    let flow = Flow {
        model,
        form: config.form,
    };
    let sol = ode::integrate(
        &flow,
        0.0,
        &flow.state(start),
        Stop::At(t_end),
        &config.ode_options(),
        &[],
        true,
    )
    .map_err(|e| Error::Numerical(e.to_string()))?;
    let mut samples: Vec<PathSample> = sol.t.iter().zip(&sol.y).map(|(t, y)| flow.sample(*t, y)).collect();
    unwrap_theta(&mut samples);
    Ok(samples)
}

/// Chord parameters `(ψ, s)` of the disk geodesic from `alpha_in` to `alpha_out`.
pub fn chord_parameters(alpha_in: f64, alpha_out: f64) -> Result<(f64, f64)> {
    let delta = (alpha_out - alpha_in).rem_euclid(TAU);
    if delta < 1e-12 || TAU - delta < 1e-12 {
        return Err(Error::Degenerate(format!(
            "entry and exit angles coincide ({alpha_in}, {alpha_out})"
        )));
    }
    let beta = (delta - PI) / 4.0;
    Ok((alpha_out - 2.0 * beta, beta.tan()))
}

/// Position, velocity and direction angle on a chord at time `t`.
pub fn chord_state(psi: f64, s: f64, t: f64) -> ([f64; 2], [f64; 2], f64) {
    let w = (0.5 * t).tanh();
    // z = e^{iψ}(w + is)/(1 − isw), ż = e^{iψ}(1 − s²)(1 − w²)/(2(1 − isw)²)
    let (cp, sp) = (psi.cos(), psi.sin());
    let den = 1.0 + s * s * w * w;
    // (w + is)(1 + isw) = w − s²w + i(s + s w²)
    let zr = (w - s * s * w) / den;
    let zi = (s + s * w * w) / den;
    let x = [cp * zr - sp * zi, sp * zr + cp * zi];
    // 1/(1 − isw)² = (1 + isw)²/den² = (1 − s²w² + 2isw)/den²
    let amp = (1.0 - s * s) * (1.0 - w * w) / (2.0 * den * den);
    let vr = amp * (1.0 - s * s * w * w);
    let vi = amp * 2.0 * s * w;
    let v = [cp * vr - sp * vi, sp * vr + cp * vi];
    (x, v, v[1].atan2(v[0]))
}

/// Half-length of the chord segment with `ρ ≥ rho_cut`.
pub fn chord_half_time(s: f64, rho_cut: f64) -> f64 {
    let cosh_d0 = (1.0 + s * s) / (1.0 - s * s);
    ((2.0 / rho_cut - 1.0) / cosh_d0).max(1.0).acosh()
}

/// Sample spacing used for analytic paths.
pub const CHORD_DT: f64 = 0.05;

/// The disk geodesic with boundary limits `alpha_in → alpha_out`, sampled on
/// `ρ ≥ rho_cut` with time zero at the point closest to the origin.
pub fn geodesic_between_boundary_angles(
    model: &AHModel,
    alpha_in: f64,
    alpha_out: f64,
    rho_cut: f64,
) -> Result<GeodesicPath> {
    if model.kind != ModelKind::PoincareDisk {
        return Err(Error::Validation(
            "analytic geodesics are only available on the unperturbed disk".into(),
        ));
    }
    let (psi, s) = chord_parameters(alpha_in, alpha_out)?;
    Ok(chord_path(psi, s, rho_cut))
}

pub(crate) fn chord_path(psi: f64, s: f64, rho_cut: f64) -> GeodesicPath {
    let t_end = chord_half_time(s, rho_cut);
    let n = ((2.0 * t_end / CHORD_DT).ceil() as usize).max(2);
    let mut samples: Vec<PathSample> = (0..=n)
        .map(|i| {
            let t = -t_end + 2.0 * t_end * i as f64 / n as f64;
            let (x, v, theta) = chord_state(psi, s, t);
            PathSample { t, x, v, theta }
        })
        .collect();
    unwrap_theta(&mut samples);
    let beta = s.atan();
    let eta = -2.0 * s / (1.0 - s * s);
    GeodesicPath {
        samples,
        entry: BoundaryDatum {
            alpha: (psi + PI - 2.0 * beta).rem_euclid(TAU),
            eta_tangential: eta,
            direction: Direction::Incoming,
        },
        exit: BoundaryDatum {
            alpha: (psi + 2.0 * beta).rem_euclid(TAU),
            eta_tangential: eta,
            direction: Direction::Outgoing,
        },
        rho_cut,
        kind: PathKind::Chord { psi, s },
    }
}

/// Phase point at `ρ = rho_start` whose backward limit is the incoming datum.
pub fn boundary_start(datum: &BoundaryDatum, rho_start: f64) -> ([f64; 2], f64) {
    let l = datum.eta_tangential;
    let r = (1.0 - rho_start).sqrt();
    let alpha = datum.alpha + l * rho_start * rho_start / 8.0;
    let adot = l * rho_start * rho_start / (4.0 * r * r);
    let rdot = -(rho_start * rho_start / 4.0 - r * r * adot * adot).max(0.0).sqrt();
    let (sa, ca) = alpha.sin_cos();
    let x = [r * ca, r * sa];
    let v = [rdot * ca - r * adot * sa, rdot * sa + r * adot * ca];
    (x, v[1].atan2(v[0]))
}

/// Integrates forward from the incoming boundary datum until the exit cut.
pub fn shoot_from_boundary(
    model: &AHModel,
    datum: &BoundaryDatum,
    rho_start: f64,
    config: &IntegratorConfig,
) -> Result<GeodesicPath> {
    if datum.direction != Direction::Incoming {
        return Err(Error::Validation("shooting needs an incoming datum".into()));
    }
    if !(rho_start > 0.0 && rho_start <= config.rho_cut) {
        return Err(Error::Validation(format!(
            "rho_start = {rho_start} must lie in (0, rho_cut = {}]",
            config.rho_cut
        )));
    }
    // the tangential component is bounded by the hyperbolic speed at ρ
    if datum.eta_tangential.abs() * rho_start > 2.0 {
        return Err(Error::Validation(format!(
            "|η₁| = {} is not resolvable at ρ = {rho_start}",
            datum.eta_tangential
        )));
    }
    let (x, theta) = boundary_start(datum, rho_start);
    let start = PhasePoint::from_angle(model, x, theta)?;
    let flow = Flow {
        model,
        form: config.form,
    };
    let y0 = flow.state(&start);
    let rho_cut = config.rho_cut;
    let opts = config.ode_options();
    // the start already sits below the cut, so the event only arms once
    // the path is heading outward
    let g = move |_t: f64, y: &[f64]| {
        let x = [y[0], y[1]];
        let r = rho(x);
        let outward = match config.form {
            GeodesicForm::Angle => y[2].cos() * x[0] + y[2].sin() * x[1],
            GeodesicForm::Christoffel => y[2] * x[0] + y[3] * x[1],
        };
        if outward <= 0.0 {
            1.0
        } else {
            r - rho_cut
        }
    };
    let (sol, trapped) = match ode::integrate(&flow, 0.0, &y0, Stop::Event { direction: 1.0, g: &g }, &opts, &[], true)
    {
        Ok(sol) => (sol, false),
        Err(OdeFailure::StepBudget(sol)) => (sol, true),
        Err(e) => return Err(Error::Numerical(format!("geodesic integration: {e}"))),
    };
    let steps = sol.steps;
    let samples: Vec<PathSample> = sol.t.iter().zip(&sol.y).map(|(t, y)| flow.sample(*t, y)).collect();
    let mut path = finish_path(model, samples, rho_cut, trapped, steps)?;
    path.entry = *datum;
    Ok(path)
}

impl GeodesicPath {
    pub fn first(&self) -> &PathSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &PathSample {
        self.samples.last().unwrap()
    }

    pub fn max_speed_defect(&self, model: &AHModel) -> f64 {
        self.samples
            .iter()
            .map(|s| (model.speed(s.x, s.v) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// The same geodesic traversed backwards, with `t ↦ −t`.
    pub fn reversed(&self) -> GeodesicPath {
        let samples = self
            .samples
            .iter()
            .rev()
            .map(|s| PathSample {
                t: -s.t,
                x: s.x,
                v: [-s.v[0], -s.v[1]],
                theta: s.theta + PI,
            })
            .collect();
        let flip = |d: &BoundaryDatum, direction| BoundaryDatum {
            alpha: d.alpha,
            eta_tangential: -d.eta_tangential,
            direction,
        };
        GeodesicPath {
            samples,
            entry: flip(&self.exit, Direction::Incoming),
            exit: flip(&self.entry, Direction::Outgoing),
            rho_cut: self.rho_cut,
            kind: match self.kind {
                PathKind::Chord { psi, s } => PathKind::Chord { psi: psi + PI, s: -s },
                PathKind::Integrated => PathKind::Integrated,
            },
        }
    }

    /// Writes `t,x1,x2,v1,v2` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x1,x2,v1,v2")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                s.t, s.x[0], s.x[1], s.v[0], s.v[1]
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perturbed() -> AHModel {
        AHModel::perturbed(
            Bump {
                center: [0.1, -0.2],
                radius: 0.4,
                amplitude: 0.05,
            },
            &ModelLimits::default(),
        )
        .unwrap()
    }

    #[test]
    fn metric_at_center_and_half() {
        let m = AHModel::poincare();
        let s = m.metric_at([0.0, 0.0]).unwrap();
        assert!((s.g[0][0] - 4.0).abs() < 1e-15 && s.g[0][1] == 0.0);
        assert!(s.christoffel.iter().flatten().flatten().all(|v| *v == 0.0));
        let s = m.metric_at([0.5, 0.0]).unwrap();
        assert!((s.g[0][0] - 4.0 / 0.5625).abs() < 1e-12);
        assert!((s.g[0][0] - 7.111111111111).abs() < 1e-9);
    }

    #[test]
    fn metric_symmetries() {
        let m = perturbed();
        for x in [[0.1, 0.0], [0.3, -0.4], [-0.7, 0.2]] {
            let s = m.metric_at(x).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let gg: f64 = (0..2).map(|k| s.g[i][k] * s.g_inv[k][j]).sum();
                    assert!((gg - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                    for k in 0..2 {
                        assert_eq!(s.christoffel[k][i][j], s.christoffel[k][j][i]);
                    }
                }
            }
        }
    }

    #[test]
    fn christoffels_match_metric_derivatives() {
        let m = perturbed();
        let x = [0.2, -0.1];
        let s = m.metric_at(x).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = 0.0;
                    for l in 0..2 {
                        v += 0.5 * s.g_inv[k][l] * (s.dg[i][l][j] + s.dg[j][l][i] - s.dg[l][i][j]);
                    }
                    assert!((v - s.christoffel[k][i][j]).abs() < 1e-12);
                }
            }
        }
        // dg against central differences
        let h = 1e-6;
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (m.metric_at(xp).unwrap().g[0][0] - m.metric_at(xm).unwrap().g[0][0]) / (2.0 * h);
            assert!((fd - s.dg[k][0][0]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn domain_errors() {
        let m = AHModel::poincare();
        assert!(matches!(m.metric_at([0.6, 0.8]), Err(Error::Domain(..))));
        assert!(matches!(m.metric_at([1.0, 1e-3]), Err(Error::Domain(..))));
        assert!(m.rho_at([0.6, 0.8]).abs() < 1e-15);
        assert_eq!(m.rho_at([0.0, 0.0]), 1.0);
        assert_eq!(m.rho_at([0.5, 0.0]), 0.75);
    }

    #[test]
    fn disk_curvature() {
        let m = AHModel::poincare();
        assert_eq!(m.sectional_curvature([0.0, 0.0]).unwrap(), -1.0);
        assert!((m.sectional_curvature([0.9, 0.1]).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn perturbed_equals_disk_outside_support() {
        let m = perturbed();
        let d = AHModel::poincare();
        let x = [-0.6, 0.5];
        assert_eq!(m.metric_at(x).unwrap(), d.metric_at(x).unwrap());
        assert_eq!(m.sectional_curvature(x).unwrap(), -1.0);
    }

    #[test]
    fn perturbed_model_rejections() {
        let lim = ModelLimits::default();
        let far = Bump {
            center: [0.7, 0.0],
            radius: 0.3,
            amplitude: 0.01,
        };
        assert!(AHModel::perturbed(far, &lim).is_err());
        let big = Bump {
            center: [0.0, 0.0],
            radius: 0.3,
            amplitude: 0.6,
        };
        assert!(AHModel::perturbed(big, &lim).is_err());
        // positive curvature at the center once A > R²
        let sharp = Bump {
            center: [0.0, 0.0],
            radius: 0.3,
            amplitude: 0.2,
        };
        assert!(AHModel::perturbed(sharp, &lim).is_err());
    }

    #[test]
    fn unit_speed_and_tanh_oracle() {
        let m = AHModel::poincare();
        let start = PhasePoint::new(&m, [0.0, 0.0], [0.5, 0.0]).unwrap();
        let path = integrate_geodesic(&m, &start, &IntegratorConfig::default()).unwrap();
        assert!(path.max_speed_defect(&m) < 1e-8);
        let mut checked = 0;
        for s in &path.samples {
            if s.t.abs() <= 6.0 {
                assert!((s.x[0] - (s.t / 2.0).tanh()).abs() < 1e-6);
                assert!(s.x[1].abs() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked > 10);
        assert!(path.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert!((path.exit.alpha).abs() < 1e-6 || (path.exit.alpha - TAU).abs() < 1e-6);
        assert!((path.entry.alpha - PI).abs() < 1e-6);
    }

    #[test]
    fn christoffel_form_agrees() {
        let m = perturbed();
        let start = PhasePoint::from_angle(&m, [-0.3, 0.1], 0.4).unwrap();
        let a = integrate_geodesic(&m, &start, &IntegratorConfig::default()).unwrap();
        let cfg = IntegratorConfig {
            form: GeodesicForm::Christoffel,
            ..Default::default()
        };
        let b = integrate_geodesic(&m, &start, &cfg).unwrap();
        let da = (a.exit.alpha - b.exit.alpha).abs();
        assert!(da < 1e-6, "exit angles differ by {da}");
        assert!((a.entry.alpha - b.entry.alpha).abs() < 1e-6);
    }

    #[test]
    fn chord_examples() {
        let m = AHModel::poincare();
        let p = geodesic_between_boundary_angles(&m, PI, 0.0, 1e-6).unwrap();
        assert!(p.samples.iter().all(|s| s.x[1].abs() < 1e-12));
        assert!((p.entry.alpha - PI).abs() < 1e-12);
        let p = geodesic_between_boundary_angles(&m, PI / 2.0, 0.0, 1e-6).unwrap();
        for s in &p.samples {
            let d = ((s.x[0] - 1.0).powi(2) + (s.x[1] - 1.0).powi(2)).sqrt();
            assert!((d - 1.0).abs() < 1e-12);
            assert!((m.speed(s.x, s.v) - 1.0).abs() < 1e-8);
        }
        assert!((p.entry.alpha - PI / 2.0).abs() < 1e-9);
        assert!(p.exit.alpha.abs() < 1e-9 || (p.exit.alpha - TAU).abs() < 1e-9);
        assert!(matches!(
            geodesic_between_boundary_angles(&m, 1.0, 1.0, 1e-6),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn chord_velocity_matches_finite_difference() {
        let (psi, s) = chord_parameters(0.3, 2.0).unwrap();
        let h = 1e-6;
        for t in [-2.0, 0.0, 1.5] {
            let (_, v, _) = chord_state(psi, s, t);
            let (xp, _, _) = chord_state(psi, s, t + h);
            let (xm, _, _) = chord_state(psi, s, t - h);
            for k in 0..2 {
                assert!(((xp[k] - xm[k]) / (2.0 * h) - v[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reversed_path_swaps_data() {
        let m = AHModel::poincare();
        let p = geodesic_between_boundary_angles(&m, 0.5, 2.5, 1e-6).unwrap();
        let r = p.reversed();
        assert_eq!(r.entry.alpha, p.exit.alpha);
        assert_eq!(r.entry.eta_tangential, -p.exit.eta_tangential);
        let PathKind::Chord { psi, s } = r.kind else { panic!() };
        let (x, v, _) = chord_state(psi, s, r.samples[3].t);
        assert!((x[0] - r.samples[3].x[0]).abs() < 1e-12);
        assert!((v[1] - r.samples[3].v[1]).abs() < 1e-12);
    }

    #[test]
    fn shooting_matches_chord() {
        let m = AHModel::poincare();
        let cfg = IntegratorConfig::default();
        let chord = geodesic_between_boundary_angles(&m, 0.7, 3.9, 1e-6).unwrap();
        let shot = shoot_from_boundary(&m, &chord.entry, 1e-6, &cfg).unwrap();
        assert!((shot.exit.alpha - chord.exit.alpha).abs() < 1e-4);
        assert!((shot.exit.eta_tangential - chord.exit.eta_tangential).abs() < 1e-6);
        let radial = shoot_from_boundary(&m, &BoundaryDatum::incoming(1.0, 0.0), 1e-6, &cfg).unwrap();
        assert!((radial.exit.alpha - (1.0 + PI)).abs() < 1e-4);
    }

    #[test]
    fn csv_export() {
        let m = AHModel::poincare();
        let p = geodesic_between_boundary_angles(&m, 0.0, 2.0, 1e-3).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2,v1,v2\n"));
        assert_eq!(text.lines().count(), p.samples.len() + 1);
    }
}
