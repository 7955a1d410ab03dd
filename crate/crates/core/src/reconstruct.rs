//! Recovery of a skew-Hermitian Higgs field from scattering data for a fixed
//! flat connection, by damped Gauss–Newton on the output misfit with
//! Tikhonov regularization.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{sup_curvature_norm, ConnectionField, HiggsField, InteriorGrid, Profile, Term};
use crate::geometry::{rho, AHModel, GeodesicPath, ModelKind};
use crate::linalg::{self, CMat};
use crate::transport::{scattering_matrix, TransportConfig};
use crate::xray::{compute_scattering_data, FanSpec, ScatteringDataset};
use crate::{Error, Result};

/// Curvature level below which a connection counts as flat.
pub const FLAT_TOL: f64 = 1e-8;

/// One basis element `S_k β_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTerm {
    pub generator: CMat,
    pub profile: Profile,
}

/// `Φ_c(x) = ρ^{decay} Σ c_k S_k β_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiggsParameterization {
    pub d: usize,
    pub decay: u32,
    pub basis: Vec<BasisTerm>,
}

impl HiggsParameterization {
    /// Checks skewness and linear independence of the basis fields, sampled
    /// on an interior grid.
    pub fn new(d: usize, decay: u32, basis: Vec<BasisTerm>) -> Result<Self> {
        if decay == 0 {
            return Err(Error::Validation("Higgs basis must decay (exponent ≥ 1)".into()));
        }
        if basis.is_empty() {
            return Err(Error::Validation("empty Higgs basis".into()));
        }
        for b in &basis {
            if b.generator.nrows() != d || b.generator.ncols() != d {
                return Err(Error::RankMismatch {
                    expected: d,
                    got: b.generator.nrows(),
                });
            }
            if linalg::skew_defect(&b.generator) > 1e-12 {
                return Err(Error::Validation("Higgs basis generator is not skew-Hermitian".into()));
            }
        }
        let p = Self { d, decay, basis };
        let pts = InteriorGrid::new(12, 0.05).points();
        let rows = pts.len() * 2 * d * d;
        let mut a = DMatrix::<f64>::zeros(rows, p.len());
        for (k, b) in p.basis.iter().enumerate() {
            for (n, x) in pts.iter().enumerate() {
                let f = b.generator.clone() * linalg::c(b.profile.jet(*x).value, 0.0);
                for (e, z) in f.iter().enumerate() {
                    a[(n * 2 * d * d + 2 * e, k)] = z.re;
                    a[(n * 2 * d * d + 2 * e + 1, k)] = z.im;
                }
            }
        }
        let sv = a.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > 1e-8 * smax) {
            return Err(Error::Validation(format!(
                "Higgs basis is linearly dependent (singular values {smin:.2e} / {smax:.2e})"
            )));
        }
        Ok(p)
    }

    /// `k` terms cycling through the standard skew-Hermitian generators,
    /// each with a random Gaussian profile.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, decay: u32, k: usize) -> Result<Self> {
        let gens = linalg::skew_hermitian_basis(d);
        let basis = (0..k)
            .map(|i| BasisTerm {
                generator: gens[i % gens.len()].clone(),
                profile: Profile::random(rng),
            })
            .collect();
        Self::new(d, decay, basis)
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn field(&self, c: &[f64]) -> Result<HiggsField> {
        if c.len() != self.len() {
            return Err(Error::Validation(format!(
                "{} coefficients for a basis of {}",
                c.len(),
                self.len()
            )));
        }
        let terms = self
            .basis
            .iter()
            .zip(c)
            .map(|(b, ck)| Term {
                s: b.generator.clone() * linalg::c(*ck, 0.0),
                profile: b.profile,
            })
            .collect();
        HiggsField::separable(self.d, self.decay, terms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    pub tikhonov: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    pub gradient_tol: f64,
    /// Relative step size below which the iteration stops.
    pub step_tol: f64,
    /// Step halvings tried before a damped step counts as failed.
    pub max_backtracks: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            tikhonov: 1e-10,
            max_iterations: 30,
            fd_step: 1e-6,
            gradient_tol: 1e-12,
            step_tol: 1e-9,
            max_backtracks: 8,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tikhonov >= 0.0) {
            return Err(Error::Validation(format!("tikhonov = {} is negative", self.tikhonov)));
        }
        if !(1e-8..=1e-4).contains(&self.fd_step) {
            return Err(Error::Validation(format!(
                "fd_step = {} outside [1e-8, 1e-4]",
                self.fd_step
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Validation("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Consecutive failed damped steps that end the iteration.
pub const STAGNATION_LIMIT: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub coeffs: Vec<f64>,
    /// Objective `Σ‖U(c) − U_data‖² + λ‖c‖²` at each accepted iterate,
    /// starting with the initial guess.
    pub residual_history: Vec<f64>,
    /// `(Σ‖U(c) − U_data‖²)^{1/2}` at the final iterate.
    pub data_misfit: f64,
    /// `‖c − c*‖ / ‖c*‖` when the ground truth is known.
    pub coefficient_error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_flat(conn: &ConnectionField, model: &AHModel) -> Result<()> {
    let f = sup_curvature_norm(conn, model, &InteriorGrid::default());
    if f > FLAT_TOL {
        return Err(Error::NotFlat(f));
    }
    Ok(())
}

/// Scattering data of `(conn0, Φ_c)`; refuses connections that are not flat.
pub fn forward_map(
    model: &AHModel,
    conn0: &ConnectionField,
    param: &HiggsParameterization,
    c: &[f64],
    fan: &FanSpec,
    cfg: &TransportConfig,
) -> Result<ScatteringDataset> {
    check_flat(conn0, model)?;
    compute_scattering_data(model, conn0, &param.field(c)?, fan, cfg, "")
}

/// Precomputed geodesics of a dataset and the stacked data vector.
struct Problem<'a> {
    model: &'a AHModel,
    conn0: &'a ConnectionField,
    param: &'a HiggsParameterization,
    cfg: &'a TransportConfig,
    paths: Vec<GeodesicPath>,
    data: Vec<f64>,
}

fn stack(mats: &[CMat]) -> Vec<f64> {
    let mut out = Vec::with_capacity(mats.len() * 2 * mats.first().map_or(0, |m| m.len()));
    for m in mats {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push(m[(i, j)].re);
                out.push(m[(i, j)].im);
            }
        }
    }
    out
}

impl<'a> Problem<'a> {
    fn new(
        data: &ScatteringDataset,
        model: &'a AHModel,
        conn0: &'a ConnectionField,
        param: &'a HiggsParameterization,
        cfg: &'a TransportConfig,
    ) -> Result<Self> {
        let fan = fan_of(data, model);
        let paths = (0..fan.len())
            .into_par_iter()
            .map(|k| fan.path(k, model, cfg))
            .collect::<Result<Vec<_>>>()?;
        let mats: Vec<CMat> = data.records.iter().map(|r| r.matrix.clone()).collect();
        Ok(Self {
            model,
            conn0,
            param,
            cfg,
            paths,
            data: stack(&mats),
        })
    }

    fn predict(&self, c: &[f64]) -> Result<Vec<f64>> {
        let higgs = self.param.field(c)?;
        let mats = self
            .paths
            .par_iter()
            .map(|p| Ok(scattering_matrix(self.model, self.conn0, &higgs, p, self.cfg)?.exit_value))
            .collect::<Result<Vec<_>>>()?;
        Ok(stack(&mats))
    }

    fn residual(&self, c: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.predict(c)?;
        for (a, b) in r.iter_mut().zip(&self.data) {
            *a -= b;
        }
        Ok(r)
    }

    /// Central differences, one column per coefficient.
    fn jacobian(&self, c: &[f64], step: f64) -> Result<DMatrix<f64>> {
        let cols = (0..c.len())
            .into_par_iter()
            .map(|k| {
                let mut cp = c.to_vec();
                let mut cm = c.to_vec();
                cp[k] += step;
                cm[k] -= step;
                if cp[k] == c[k] {
                    return Err(Error::Numerical(format!(
                        "finite-difference step {step} underflows at c = {}",
                        c[k]
                    )));
                }
                let h = cp[k] - cm[k];
                let (fp, fm) = (self.predict(&cp)?, self.predict(&cm)?);
                Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / h).collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = cols.first().map_or(0, |v| v.len());
        Ok(DMatrix::from_fn(rows, c.len(), |i, k| cols[k][i]))
    }
}

/// The fan that produced `data`: boundary pairs on the disk, the recorded
/// entry data otherwise.
pub fn fan_of(data: &ScatteringDataset, model: &AHModel) -> FanSpec {
    match model.kind {
        ModelKind::PoincareDisk => {
            FanSpec::BoundaryPairs(data.records.iter().map(|r| (r.entry.alpha, r.exit.alpha)).collect())
        }
        ModelKind::ConformalPerturbed => FanSpec::Shooting(data.records.iter().map(|r| r.entry).collect()),
    }
}

/// Jacobian of the stacked `(re, im)` record entries with respect to `c`,
/// `records·2d² × K`.
pub fn jacobian_fd(
    model: &AHModel,
    conn0: &ConnectionField,
    param: &HiggsParameterization,
    fan: &FanSpec,
    c: &[f64],
    step: f64,
    cfg: &TransportConfig,
) -> Result<DMatrix<f64>> {
    check_flat(conn0, model)?;
    let data = forward_map(model, conn0, param, c, fan, cfg)?;
    Problem::new(&data, model, conn0, param, cfg)?.jacobian(c, step)
}

fn objective(r: &[f64], c: &[f64], lambda: f64) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() + lambda * c.iter().map(|v| v * v).sum::<f64>()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimizes `Σ‖U(c) − U_data‖² + λ‖c‖²` from `c = 0`.
pub fn reconstruct_higgs(
    data: &ScatteringDataset,
    model: &AHModel,
    conn0: &ConnectionField,
    param: &HiggsParameterization,
    rcfg: &ReconstructionConfig,
    tcfg: &TransportConfig,
    truth: Option<&[f64]>,
) -> Result<ReconstructionReport> {
    rcfg.validate()?;
    check_flat(conn0, model)?;
    if data.d != param.d || conn0.rank() != param.d {
        return Err(Error::RankMismatch {
            expected: param.d,
            got: data.d,
        });
    }
    if data.records.is_empty() {
        return Err(Error::DatasetMismatch("dataset has no records".into()));
    }
    let problem = Problem::new(data, model, conn0, param, tcfg)?;
    let k = param.len();
    let lambda = rcfg.tikhonov;
    let mut c = vec![0.0; k];
    let mut r = problem.residual(&c)?;
    let mut f = objective(&r, &c, lambda);
    let mut history = vec![f];
    let mut mu = 0.0;
    let mut failures = 0;
    let mut iterations = 0;
    let mut converged = false;
    let report = |c: &[f64], r: &[f64], history: &[f64], iterations: usize, converged: bool| ReconstructionReport {
        coeffs: c.to_vec(),
        residual_history: history.to_vec(),
        data_misfit: norm(r),
        coefficient_error: truth.map(|t| {
            let diff: Vec<f64> = c.iter().zip(t).map(|(a, b)| a - b).collect();
            norm(&diff) / norm(t).max(f64::MIN_POSITIVE)
        }),
        iterations,
        converged,
    };
    while iterations < rcfg.max_iterations {
        iterations += 1;
        let j = problem.jacobian(&c, rcfg.fd_step)?;
        let rv = DVector::from_column_slice(&r);
        let cv = DVector::from_column_slice(&c);
        let grad = j.transpose() * &rv + &cv * lambda;
        if grad.norm() < rcfg.gradient_tol {
            converged = true;
            break;
        }
        let mut normal = j.transpose() * &j;
        let scale = normal.diagonal().max().max(1e-300);
        for i in 0..k {
            normal[(i, i)] += lambda + mu * scale;
        }
        let delta = normal
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(-&grad)))
            .or_else(|| normal.clone().svd(true, true).solve(&(-&grad), 1e-14).ok())
            .ok_or_else(|| Error::Numerical("singular Gauss–Newton system".into()))?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=rcfg.max_backtracks {
            let trial: Vec<f64> = c.iter().zip(delta.iter()).map(|(a, d)| a + alpha * d).collect();
            let rt = problem.residual(&trial)?;
            let ft = objective(&rt, &trial, lambda);
            if ft < f {
                accepted = Some((trial, rt, ft));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, rt, ft)) => {
                let step = norm(&trial.iter().zip(&c).map(|(a, b)| a - b).collect::<Vec<_>>());
                c = trial;
                r = rt;
                f = ft;
                history.push(f);
                failures = 0;
                mu *= 0.1;
                if mu < 1e-12 {
                    mu = 0.0;
                }
                if step < rcfg.step_tol * (norm(&c) + rcfg.step_tol) {
                    converged = true;
                    break;
                }
            }
            None => {
                if delta.norm() < rcfg.step_tol * (norm(&c) + rcfg.step_tol) {
                    converged = true;
                    break;
                }
                failures += 1;
                mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
                if failures >= STAGNATION_LIMIT {
                    return Err(Error::Stagnation {
                        iterations,
                        report: Box::new(report(&c, &r, &history, iterations, false)),
                    });
                }
            }
        }
    }
    Ok(report(&c, &r, &history, iterations, converged))
}

/// `Φ_c` sampled at `points`, for plotting.
pub fn field_samples(param: &HiggsParameterization, c: &[f64], points: &[[f64; 2]]) -> Result<Vec<([f64; 2], CMat)>> {
    let f = param.field(c)?;
    Ok(points.iter().map(|x| (*x, f.value(*x))).collect())
}

/// `ρ^{decay} β_k` along a path, used by the abelian oracles.
pub fn basis_profile(param: &HiggsParameterization, k: usize, x: [f64; 2]) -> f64 {
    rho(x).powi(param.decay as i32) * param.basis[k].profile.jet(x).value
}
