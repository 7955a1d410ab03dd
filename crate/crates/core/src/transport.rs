//! Transport of sections and endomorphisms along geodesics.
//!
//! All solves integrate `dU/dt = −L U + U R` from the entry truncation
//! point to the exit truncation point, with `U` a `d × k` block:
//!
//! * bundle form: `L = Γ(γ̇) + Φ`, `R = 0` (sections and scattering matrices);
//! * endomorphism form: `L = Γ(γ̇) + Φ`, `R = Γ(γ̇)`, i.e.
//!   `∇^{End}_γ̇ U + ΦU = 0`.
//!
//! Analytic disk chords are evaluated in closed form; integrated paths are
//! re-integrated jointly with the transport state from their first sample.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bundle::{ConnectionField, HiggsField};
use crate::geometry::{
    self, angle_rhs, chord_path, chord_state, rho, AHModel, GeodesicPath, IntegratorConfig, PathKind, PhasePoint,
};
use crate::linalg::{self, CMat, CVec};
use crate::ode::{self, OdeOptions, OdeSystem, Stop};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    pub rho_cut: f64,
    pub atol: f64,
    pub rtol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Also solve at `rho_cut / 2` and report a truncation estimate.
    pub richardson: bool,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            rho_cut: 1e-6,
            atol: 1e-11,
            rtol: 1e-11,
            max_step: 0.5,
            max_steps: 200_000,
            richardson: false,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_cut > 0.0 && self.rho_cut <= 1e-2) {
            return Err(Error::Validation(format!(
                "rho_cut = {} must lie in (0, 1e-2]",
                self.rho_cut
            )));
        }
        if !(self.atol > 0.0 && self.rtol > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            atol: self.atol,
            rtol: self.rtol,
            rho_cut: self.rho_cut,
            max_step: self.max_step,
            max_steps: self.max_steps,
            ..Default::default()
        }
    }

    fn ode_options(&self) -> OdeOptions {
        OdeOptions {
            atol: self.atol,
            rtol: self.rtol,
            h_init: 1e-2,
            h_max: self.max_step,
            max_steps: self.max_steps,
            fixed_step: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportResult<T> {
    pub exit_value: T,
    pub unitarity_defect: f64,
    pub truncation_estimate: Option<f64>,
}

/// A matrix-valued solution sampled at one time along the path.
#[derive(Debug, Clone)]
pub struct EndSample {
    pub t: f64,
    pub x: [f64; 2],
    pub theta: f64,
    pub u: CMat,
}

/// Coefficients of the left and right multipliers.
#[derive(Clone, Copy)]
pub struct Side<'a> {
    pub conn: &'a ConnectionField,
    pub higgs: Option<(&'a HiggsField, f64)>,
}

enum Geo {
    Chord { psi: f64, s: f64 },
    Flow,
}

struct System<'a> {
    model: &'a AHModel,
    geo: Geo,
    left: Side<'a>,
    right: Option<&'a ConnectionField>,
    d: usize,
    k: usize,
}

impl System<'_> {
    fn offset(&self) -> usize {
        match self.geo {
            Geo::Chord { .. } => 0,
            Geo::Flow => 3,
        }
    }

    fn position(&self, t: f64, y: &[f64]) -> ([f64; 2], [f64; 2], f64) {
        match self.geo {
            Geo::Chord { psi, s } => chord_state(psi, s, t),
            Geo::Flow => {
                let x = [y[0], y[1]];
                (x, self.model.unit_vector(x, y[2]), y[2])
            }
        }
    }

    fn matrix(&self, y: &[f64]) -> CMat {
        let o = self.offset();
        CMat::from_fn(self.d, self.k, |i, j| {
            let p = o + 2 * (i * self.k + j);
            Complex64::new(y[p], y[p + 1])
        })
    }

    fn pack(&self, u: &CMat, out: &mut [f64]) {
        let o = self.offset();
        for i in 0..self.d {
            for j in 0..self.k {
                let p = o + 2 * (i * self.k + j);
                out[p] = u[(i, j)].re;
                out[p + 1] = u[(i, j)].im;
            }
        }
    }
}

impl OdeSystem for System<'_> {
    fn dim(&self) -> usize {
        self.offset() + 2 * self.d * self.k
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        if let Geo::Flow = self.geo {
            angle_rhs(self.model, y, dy);
        }
        let (x, v, _) = self.position(t, y);
        let u = self.matrix(y);
        let mut l = self.left.conn.along(x, v);
        if let Some((h, sign)) = self.left.higgs {
            l += h.value(x) * Complex64::new(sign, 0.0);
        }
        let mut du = -(l * &u);
        if let Some(r) = self.right {
            du += &u * r.along(x, v);
        }
        self.pack(&du, dy);
    }
}

/// An incomplete path cannot stand in for a complete geodesic.
fn check_path(path: &GeodesicPath) -> Result<()> {
    if path.samples.len() < 2 {
        return Err(Error::Validation("path has fewer than two samples".into()));
    }
    let ends = [rho(path.first().x), rho(path.last().x)];
    if ends.iter().any(|r| *r > 2.0 * path.rho_cut * (1.0 + 1e-9)) {
        return Err(Error::Validation(format!(
            "path is not complete: end ρ = ({:.3e}, {:.3e}) with rho_cut {:.3e}",
            ends[0], ends[1], path.rho_cut
        )));
    }
    Ok(())
}

fn check_ranks(d: usize, conn: &ConnectionField, higgs: Option<&HiggsField>) -> Result<()> {
    if conn.rank() != d {
        return Err(Error::RankMismatch {
            expected: d,
            got: conn.rank(),
        });
    }
    if let Some(h) = higgs {
        if h.rank() != d {
            return Err(Error::RankMismatch {
                expected: d,
                got: h.rank(),
            });
        }
    }
    Ok(())
}

fn setup<'a>(
    model: &'a AHModel,
    path: &GeodesicPath,
    left: Side<'a>,
    right: Option<&'a ConnectionField>,
    u0: &CMat,
) -> Result<(System<'a>, Vec<f64>)> {
    check_path(path)?;
    let d = u0.nrows();
    check_ranks(d, left.conn, left.higgs.map(|h| h.0))?;
    if let Some(r) = right {
        check_ranks(d, r, None)?;
    }
    let geo = match path.kind {
        PathKind::Chord { psi, s } => Geo::Chord { psi, s },
        PathKind::Integrated => Geo::Flow,
    };
    let sys = System {
        model,
        geo,
        left,
        right,
        d,
        k: u0.ncols(),
    };
    let first = path.first();
    let mut y0 = vec![0.0; sys.dim()];
    if let Geo::Flow = sys.geo {
        y0[0] = first.x[0];
        y0[1] = first.x[1];
        y0[2] = first.theta;
    }
    sys.pack(u0, &mut y0);
    Ok((sys, y0))
}

/// Integrates `dU/dt = −L U + U R` along the path from `u0` at the entry
/// cut. Returns the exit value and the states at `sample_times`.
pub fn propagate(
    model: &AHModel,
    path: &GeodesicPath,
    left: Side<'_>,
    right: Option<&ConnectionField>,
    u0: &CMat,
    sample_times: &[f64],
    cfg: &TransportConfig,
) -> Result<(CMat, Vec<EndSample>)> {
    let (sys, y0) = setup(model, path, left, right, u0)?;
    let first = path.first();
    let sol = ode::integrate(
        &sys,
        first.t,
        &y0,
        Stop::At(path.last().t),
        &cfg.ode_options(),
        sample_times,
        false,
    )
    .map_err(|e| Error::Numerical(format!("transport integration: {e}")))?;
    let (_, y) = sol.last();
    let samples = sol
        .samples
        .iter()
        .map(|(t, y)| {
            let (x, _, theta) = sys.position(*t, y);
            EndSample {
                t: *t,
                x,
                theta,
                u: sys.matrix(y),
            }
        })
        .collect();
    Ok((sys.matrix(y), samples))
}

/// Accepted step times of the matrix solve, reused by the column solver.
fn solve_mesh(
    model: &AHModel,
    path: &GeodesicPath,
    left: Side<'_>,
    u0: &CMat,
    mesh: Option<&[f64]>,
    cfg: &TransportConfig,
) -> Result<(CMat, Vec<f64>)> {
    let (sys, y0) = setup(model, path, left, None, u0)?;
    let first = path.first();
    match mesh {
        Some(mesh) => {
            let y = ode::integrate_mesh(&sys, mesh, &y0);
            Ok((sys.matrix(&y), mesh.to_vec()))
        }
        None => {
            let sol = ode::integrate(
                &sys,
                first.t,
                &y0,
                Stop::At(path.last().t),
                &cfg.ode_options(),
                &[],
                true,
            )
            .map_err(|e| Error::Numerical(format!("transport integration: {e}")))?;
            Ok((sys.matrix(sol.last().1), sol.t))
        }
    }
}

/// The same geodesic truncated at `rho_cut`.
pub fn retruncate(model: &AHModel, path: &GeodesicPath, rho_cut: f64, cfg: &TransportConfig) -> Result<GeodesicPath> {
    match path.kind {
        PathKind::Chord { psi, s } => Ok(chord_path(psi, s, rho_cut)),
        PathKind::Integrated => {
            let mid = path
                .samples
                .iter()
                .max_by(|a, b| rho(a.x).total_cmp(&rho(b.x)))
                .unwrap();
            let start = PhasePoint::from_angle(model, mid.x, mid.theta)?;
            geometry::integrate_geodesic(model, &start, &cfg.integrator().with_rho_cut(rho_cut))
        }
    }
}

fn with_richardson<F>(
    model: &AHModel,
    path: &GeodesicPath,
    cfg: &TransportConfig,
    solve: F,
) -> Result<(CMat, Option<f64>)>
where
    F: Fn(&GeodesicPath) -> Result<CMat>,
{
    cfg.validate()?;
    let exit = solve(path)?;
    if !cfg.richardson {
        return Ok((exit, None));
    }
    let half = retruncate(model, path, 0.5 * path.rho_cut, cfg)?;
    let exit_half = solve(&half)?;
    Ok((exit.clone(), Some(2.0 * linalg::frobenius_distance(&exit, &exit_half))))
}

/// Exit value of `du/dt + (Γ(γ̇) + Φ)u = 0` with `u = e_in` at the entry cut.
pub fn solve_transport(
    model: &AHModel,
    conn: &ConnectionField,
    higgs: &HiggsField,
    path: &GeodesicPath,
    e_in: &CVec,
    cfg: &TransportConfig,
) -> Result<TransportResult<CVec>> {
    let u0 = CMat::from_column_slice(e_in.len(), 1, e_in.as_slice());
    let side = Side {
        conn,
        higgs: Some((higgs, 1.0)),
    };
    let (exit, est) = with_richardson(model, path, cfg, |p| {
        Ok(propagate(model, p, side, None, &u0, &[], cfg)?.0)
    })?;
    let exit = CVec::from_column_slice(exit.as_slice());
    Ok(TransportResult {
        unitarity_defect: (linalg::vec_norm(&exit) - linalg::vec_norm(e_in)).abs(),
        exit_value: exit,
        truncation_estimate: est,
    })
}

/// Scattering matrix: the fundamental matrix of the bundle-form transport,
/// identity at the entry cut.
pub fn scattering_matrix(
    model: &AHModel,
    conn: &ConnectionField,
    higgs: &HiggsField,
    path: &GeodesicPath,
    cfg: &TransportConfig,
) -> Result<TransportResult<CMat>> {
    let d = conn.rank();
    let side = Side {
        conn,
        higgs: Some((higgs, 1.0)),
    };
    let (exit, est) = with_richardson(model, path, cfg, |p| {
        Ok(propagate(model, p, side, None, &linalg::identity(d), &[], cfg)?.0)
    })?;
    Ok(TransportResult {
        unitarity_defect: linalg::unitarity_defect(&exit),
        exit_value: exit,
        truncation_estimate: est,
    })
}

/// Scattering matrix assembled one column at a time, each column solved
/// on the step mesh chosen by the matrix solve so that the two agree to
/// rounding.
pub fn scattering_matrix_by_columns(
    model: &AHModel,
    conn: &ConnectionField,
    higgs: &HiggsField,
    path: &GeodesicPath,
    cfg: &TransportConfig,
) -> Result<CMat> {
    let d = conn.rank();
    let side = Side {
        conn,
        higgs: Some((higgs, 1.0)),
    };
    let (_, mesh) = solve_mesh(model, path, side, &linalg::identity(d), None, cfg)?;
    let mut m = linalg::zeros(d);
    for k in 0..d {
        let mut e = CMat::zeros(d, 1);
        e[(k, 0)] = linalg::c(1.0, 0.0);
        let (col, _) = solve_mesh(model, path, side, &e, Some(&mesh), cfg)?;
        m.set_column(k, &col.column(0));
    }
    Ok(m)
}

/// Parallel transport of `e_in` (transport with `Φ = 0`).
pub fn parallel_transport(
    model: &AHModel,
    conn: &ConnectionField,
    path: &GeodesicPath,
    e_in: &CVec,
    cfg: &TransportConfig,
) -> Result<TransportResult<CVec>> {
    solve_transport(model, conn, &HiggsField::zero(conn.rank()), path, e_in, cfg)
}

/// Parallel transport matrix along the whole path.
pub fn parallel_transport_matrix(
    model: &AHModel,
    conn: &ConnectionField,
    path: &GeodesicPath,
    cfg: &TransportConfig,
) -> Result<CMat> {
    let side = Side { conn, higgs: None };
    Ok(propagate(model, path, side, None, &linalg::identity(conn.rank()), &[], cfg)?.0)
}

/// Endomorphism-form solution `∇^{End}_γ̇ U + ΦU = 0`, `U = id` at entry,
/// at the exit and at the requested times.
pub fn endomorphism_transport(
    model: &AHModel,
    conn: &ConnectionField,
    higgs: &HiggsField,
    path: &GeodesicPath,
    sample_times: &[f64],
    cfg: &TransportConfig,
) -> Result<(CMat, Vec<EndSample>)> {
    let side = Side {
        conn,
        higgs: Some((higgs, 1.0)),
    };
    propagate(
        model,
        path,
        side,
        Some(conn),
        &linalg::identity(conn.rank()),
        sample_times,
        cfg,
    )
}

/// `U_exit · P e_in` with `U` the endomorphism-form solution and `P` parallel
/// transport; equals the exit value of `solve_transport`.
pub fn transported_data_action(
    model: &AHModel,
    conn: &ConnectionField,
    higgs: &HiggsField,
    path: &GeodesicPath,
    e_in: &CVec,
    cfg: &TransportConfig,
) -> Result<CVec> {
    let (u, _) = endomorphism_transport(model, conn, higgs, path, &[], cfg)?;
    let p = parallel_transport(model, conn, path, e_in, cfg)?.exit_value;
    Ok(u * p)
}
