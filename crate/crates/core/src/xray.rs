//! Scattering datasets over geodesic fans, dataset comparison, and gauge
//! recovery `Q = U Ũ⁻¹` from pairs with equal data.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ConnectionField, HiggsField};
use crate::geometry::{
    geodesic_between_boundary_angles, integrate_geodesic, shoot_from_boundary, AHModel, BoundaryDatum, Direction,
    GeodesicPath, ModelKind, PhasePoint,
};
use crate::linalg::{self, CMat};
use crate::transport::{self, endomorphism_transport, scattering_matrix, Side, TransportConfig};
use crate::{Error, Result};

/// Golden-ratio increment used to spread fan angles.
const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "elements", rename_all = "snake_case")]
pub enum FanSpec {
    /// `(α_in, α_out)` pairs; disk only.
    BoundaryPairs(Vec<(f64, f64)>),
    /// Incoming boundary data.
    Shooting(Vec<BoundaryDatum>),
}

impl FanSpec {
    /// `count` pairs with entry angles on a golden-ratio sequence and
    /// angular separations uniform in `(0, 2π)`.
    pub fn uniform_pairs(count: usize) -> Self {
        FanSpec::BoundaryPairs(
            (0..count)
                .map(|k| {
                    let a = TAU * ((k as f64 * GOLDEN) % 1.0);
                    let delta = TAU * (k as f64 + 0.5) / count as f64;
                    (a, (a + delta).rem_euclid(TAU))
                })
                .collect(),
        )
    }

    /// `count` incoming data with `|η₁| ≤ eta_max`.
    pub fn uniform_shooting(count: usize, eta_max: f64) -> Self {
        FanSpec::Shooting(
            (0..count)
                .map(|k| {
                    let a = TAU * ((k as f64 * GOLDEN) % 1.0);
                    let eta = eta_max * (2.0 * (k as f64 + 0.5) / count as f64 - 1.0);
                    BoundaryDatum::incoming(a, eta)
                })
                .collect(),
        )
    }

    /// Pairs on the disk, shooting on perturbed models.
    pub fn default_for(model: &AHModel, count: usize) -> Self {
        match model.kind {
            ModelKind::PoincareDisk => Self::uniform_pairs(count),
            ModelKind::ConformalPerturbed => Self::uniform_shooting(count, DEFAULT_ETA_MAX),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            FanSpec::BoundaryPairs(v) => v.len(),
            FanSpec::Shooting(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FanSpec::BoundaryPairs(v) => {
                for (a, b) in v {
                    let d = (b - a).rem_euclid(TAU);
                    if d < 1e-12 || TAU - d < 1e-12 {
                        return Err(Error::Validation(format!("degenerate fan pair ({a}, {b})")));
                    }
                }
            }
            FanSpec::Shooting(v) => {
                if v.iter().any(|d| d.direction != Direction::Incoming) {
                    return Err(Error::Validation("shooting fan data must be incoming".into()));
                }
            }
        }
        Ok(())
    }

    /// Path of element `k`.
    pub fn path(&self, k: usize, model: &AHModel, cfg: &TransportConfig) -> Result<GeodesicPath> {
        match self {
            FanSpec::BoundaryPairs(v) => geodesic_between_boundary_angles(model, v[k].0, v[k].1, cfg.rho_cut),
            FanSpec::Shooting(v) => shoot_from_boundary(model, &v[k], cfg.rho_cut, &cfg.integrator()),
        }
    }

    /// Entry datum of element `k` without integrating anything.
    fn nominal_entry(&self, k: usize) -> BoundaryDatum {
        match self {
            FanSpec::BoundaryPairs(v) => {
                let (a, b) = v[k];
                let delta = (b - a).rem_euclid(TAU);
                let s = ((delta - std::f64::consts::PI) / 4.0).tan();
                BoundaryDatum::incoming(a, -2.0 * s / (1.0 - s * s))
            }
            FanSpec::Shooting(v) => v[k],
        }
    }
}

/// Tangential window sampled by default shooting fans.
pub const DEFAULT_ETA_MAX: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct ScatteringRecord {
    pub entry: BoundaryDatum,
    pub exit: BoundaryDatum,
    pub matrix: CMat,
    pub unitarity_defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedRecord {
    pub entry: BoundaryDatum,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ScatteringDataset {
    pub fingerprint: String,
    pub d: usize,
    pub rho_cut: f64,
    pub records: Vec<ScatteringRecord>,
    pub failures: Vec<FailedRecord>,
}

fn entry_order(a: &BoundaryDatum, b: &BoundaryDatum) -> Ordering {
    a.alpha
        .total_cmp(&b.alpha)
        .then(a.eta_tangential.total_cmp(&b.eta_tangential))
}

/// Checks skewness and decay of the data before a fan is computed.
pub fn validate_pair(conn: &ConnectionField, higgs: &HiggsField) -> Result<()> {
    if conn.rank() != higgs.rank() {
        return Err(Error::RankMismatch {
            expected: conn.rank(),
            got: higgs.rank(),
        });
    }
    if !higgs.is_zero() && higgs.decay() == 0 {
        return Err(Error::Validation("Higgs field does not decay".into()));
    }
    for x in [[0.0, 0.0], [0.4, -0.3], [-0.2, 0.6], [0.7, 0.1]] {
        let g = conn.symbols(x);
        let defect = linalg::skew_defect(&g[0])
            .max(linalg::skew_defect(&g[1]))
            .max(linalg::skew_defect(&higgs.value(x)));
        if defect > 1e-10 {
            return Err(Error::Validation(format!(
                "connection or Higgs field is not skew-Hermitian at {x:?} (defect {defect:.2e})"
            )));
        }
    }
    Ok(())
}

/// One record per fan element, computed in parallel and sorted by entry.
/// Failed geodesics become failure entries instead of aborting the set.
pub fn compute_scattering_data(
    model: &AHModel,
    conn: &ConnectionField,
    higgs: &HiggsField,
    fan: &FanSpec,
    cfg: &TransportConfig,
    fingerprint: &str,
) -> Result<ScatteringDataset> {
    cfg.validate()?;
    fan.validate()?;
    validate_pair(conn, higgs)?;
    if matches!(fan, FanSpec::BoundaryPairs(_)) && model.kind != ModelKind::PoincareDisk {
        return Err(Error::Validation(
            "boundary-pair fans need the unperturbed disk; use a shooting fan".into(),
        ));
    }
    let outcomes: Vec<std::result::Result<ScatteringRecord, FailedRecord>> = (0..fan.len())
        .into_par_iter()
        .map(|k| {
            let fail = |e: Error| FailedRecord {
                entry: fan.nominal_entry(k),
                error: e.to_string(),
            };
            let path = fan.path(k, model, cfg).map_err(fail)?;
            let r = scattering_matrix(model, conn, higgs, &path, cfg).map_err(fail)?;
            Ok(ScatteringRecord {
                entry: path.entry,
                exit: path.exit,
                matrix: r.exit_value,
                unitarity_defect: r.unitarity_defect,
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by(|a, b| entry_order(&a.entry, &b.entry));
    failures.sort_by(|a, b| entry_order(&a.entry, &b.entry));
    Ok(ScatteringDataset {
        fingerprint: fingerprint.to_string(),
        d: conn.rank(),
        rho_cut: cfg.rho_cut,
        records,
        failures,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub max_frobenius: f64,
    pub per_record: Vec<f64>,
}

/// Pairwise Frobenius distances between records with matching entries.
pub fn compare_datasets(a: &ScatteringDataset, b: &ScatteringDataset) -> Result<Comparison> {
    if a.d != b.d {
        return Err(Error::DatasetMismatch(format!("ranks {} and {}", a.d, b.d)));
    }
    if !a.fingerprint.is_empty() && !b.fingerprint.is_empty() && a.fingerprint != b.fingerprint {
        return Err(Error::DatasetMismatch("geometry fingerprints differ".into()));
    }
    if a.records.len() != b.records.len() {
        return Err(Error::DatasetMismatch(format!(
            "record counts {} and {}",
            a.records.len(),
            b.records.len()
        )));
    }
    let mut per_record = Vec::with_capacity(a.records.len());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let da = (ra.entry.alpha - rb.entry.alpha).abs();
        let da = da.min(TAU - da);
        if da > 1e-6 || (ra.entry.eta_tangential - rb.entry.eta_tangential).abs() > 1e-6 {
            return Err(Error::DatasetMismatch(format!(
                "fan mismatch at entry ({}, {}) vs ({}, {})",
                ra.entry.alpha, ra.entry.eta_tangential, rb.entry.alpha, rb.entry.eta_tangential
            )));
        }
        per_record.push(linalg::frobenius_distance(&ra.matrix, &rb.matrix));
    }
    Ok(Comparison {
        max_frobenius: per_record.iter().cloned().fold(0.0, f64::max),
        per_record,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    d: usize,
    rho_cut: f64,
    version: String,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    entry_alpha: f64,
    entry_eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exit_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exit_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unitarity_defect: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl ScatteringDataset {
    /// Adds independent `N(0, σ²)` noise to the real and imaginary part of
    /// every matrix entry; the unitarity defects are recomputed.
    pub fn add_gaussian_noise<R: Rng + ?Sized>(&mut self, rng: &mut R, sigma: f64) -> Result<()> {
        if sigma == 0.0 {
            return Ok(());
        }
        let dist = Normal::new(0.0, sigma).map_err(|e| Error::Validation(format!("noise sigma: {e}")))?;
        for r in &mut self.records {
            for z in r.matrix.iter_mut() {
                z.re += dist.sample(rng);
                z.im += dist.sample(rng);
            }
            r.unitarity_defect = linalg::unitarity_defect(&r.matrix);
        }
        Ok(())
    }

    /// Header line, then one line per record, then one per failure.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            fingerprint: self.fingerprint.clone(),
            d: self.d,
            rho_cut: self.rho_cut,
            version: crate::VERSION.to_string(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for r in &self.records {
            let line = RecordLine {
                entry_alpha: r.entry.alpha,
                entry_eta: r.entry.eta_tangential,
                exit_alpha: Some(r.exit.alpha),
                exit_eta: Some(r.exit.eta_tangential),
                matrix: Some(linalg::to_pairs(&r.matrix)),
                unitarity_defect: Some(r.unitarity_defect),
                error: None,
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        for f in &self.failures {
            let line = RecordLine {
                entry_alpha: f.entry.alpha,
                entry_eta: f.entry.eta_tangential,
                exit_alpha: None,
                exit_eta: None,
                matrix: None,
                unitarity_defect: None,
                error: Some(f.error.clone()),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::DatasetMismatch("empty dataset file".into()))??;
        let header: Header = serde_json::from_str(&first)?;
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine =
                serde_json::from_str(&line).map_err(|e| Error::DatasetMismatch(format!("line {}: {e}", i + 2)))?;
            let entry = BoundaryDatum::incoming(rec.entry_alpha, rec.entry_eta);
            if let Some(error) = rec.error {
                failures.push(FailedRecord { entry, error });
                continue;
            }
            let missing = || Error::DatasetMismatch(format!("line {}: incomplete record", i + 2));
            let matrix = linalg::from_pairs(header.d, &rec.matrix.ok_or_else(missing)?)?;
            records.push(ScatteringRecord {
                entry,
                exit: BoundaryDatum {
                    alpha: rec.exit_alpha.ok_or_else(missing)?,
                    eta_tangential: rec.exit_eta.ok_or_else(missing)?,
                    direction: Direction::Outgoing,
                },
                matrix,
                unitarity_defect: rec.unitarity_defect.ok_or_else(missing)?,
            });
        }
        Ok(Self {
            fingerprint: header.fingerprint,
            d: header.d,
            rho_cut: header.rho_cut,
            records,
            failures,
        })
    }
}

/// A Higgs/connection pair.
#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub conn: &'a ConnectionField,
    pub higgs: &'a HiggsField,
}

#[derive(Debug, Clone)]
pub struct GaugeSample {
    pub t: f64,
    pub x: [f64; 2],
    pub theta: f64,
    pub q: CMat,
}

/// Condition number above which `Ũ` is treated as singular.
pub const MAX_CONDITION: f64 = 1e8;

/// `Q(t) = U(t) Ũ(t)⁻¹` along the path, where `U` and `Ũ` solve the
/// endomorphism transport equations of the two pairs with identity entry
/// data, `Ũ` relative to the connection of pair `a`.
pub fn gauge_candidate(
    model: &AHModel,
    a: Pair<'_>,
    b: Pair<'_>,
    path: &GeodesicPath,
    sample_times: &[f64],
    cfg: &TransportConfig,
) -> Result<Vec<GaugeSample>> {
    let d = a.conn.rank();
    let (_, us) = endomorphism_transport(model, a.conn, a.higgs, path, sample_times, cfg)?;
    let side = Side {
        conn: b.conn,
        higgs: Some((b.higgs, 1.0)),
    };
    let (_, uts) = transport::propagate(model, path, side, Some(a.conn), &linalg::identity(d), sample_times, cfg)?;
    us.iter()
        .zip(&uts)
        .map(|(u, ut)| {
            let cond = linalg::condition_number(&ut.u);
            if !(cond <= MAX_CONDITION) {
                return Err(Error::IllConditioned(cond));
            }
            let inv = ut.u.clone().try_inverse().ok_or(Error::IllConditioned(f64::INFINITY))?;
            Ok(GaugeSample {
                t: u.t,
                x: u.x,
                theta: u.theta,
                q: &u.u * inv,
            })
        })
        .collect()
}

/// A geodesic through a cell centre with candidate gauges at the centre
/// and at `±delta` along the path.
#[derive(Debug, Clone)]
pub struct Crossing {
    pub center: GaugeSample,
    pub before: GaugeSample,
    pub after: GaugeSample,
    pub delta: f64,
}

/// Geodesics through each centre in `directions` directions spread over
/// `[0, π)`, with candidate gauges sampled at `t ∈ {−δ, 0, δ}`.
pub fn crossing_family(
    model: &AHModel,
    a: Pair<'_>,
    b: Pair<'_>,
    centers: &[[f64; 2]],
    directions: usize,
    delta: f64,
    cfg: &TransportConfig,
) -> Result<Vec<Crossing>> {
    let jobs: Vec<([f64; 2], f64)> = centers
        .iter()
        .flat_map(|c| (0..directions).map(move |j| (*c, std::f64::consts::PI * (j as f64 + 0.25) / directions as f64)))
        .collect();
    jobs.par_iter()
        .map(|(c, theta)| {
            let start = PhasePoint::from_angle(model, *c, *theta)?;
            let path = integrate_geodesic(model, &start, &cfg.integrator())?;
            let s = gauge_candidate(model, a, b, &path, &[-delta, 0.0, delta], cfg)?;
            Ok(Crossing {
                before: s[0].clone(),
                center: s[1].clone(),
                after: s[2].clone(),
                delta,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub center: [f64; 2],
    pub crossings: usize,
    pub theta_variation: f64,
    pub higgs_residual: f64,
    pub transport_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegreeZeroReport {
    pub cells: Vec<CellReport>,
    pub max_theta_variation: f64,
    /// `max ‖Φ Q − Q Φ̃‖`.
    pub max_higgs_residual: f64,
    /// `max ‖dQ/dt + Γ(γ̇)Q − QΓ̃(γ̇)‖`, the derivative by central differences.
    pub max_transport_residual: f64,
    pub tolerance: f64,
    pub degree_zero: bool,
}

/// Groups crossings by the spatial cell of side `cell` containing their
/// centre sample and measures how much `Q` depends on the direction there.
pub fn gauge_degree_zero_check(
    model: &AHModel,
    a: Pair<'_>,
    b: Pair<'_>,
    crossings: &[Crossing],
    cell: f64,
    tolerance: f64,
) -> Result<DegreeZeroReport> {
    let mut groups: BTreeMap<(i64, i64), Vec<&Crossing>> = BTreeMap::new();
    for c in crossings {
        let key = (
            (c.center.x[0] / cell).floor() as i64,
            (c.center.x[1] / cell).floor() as i64,
        );
        groups.entry(key).or_default().push(c);
    }
    let mut cells = Vec::new();
    for members in groups.values() {
        if members.len() < 3 {
            return Err(Error::Validation(format!(
                "cell near ({:.3}, {:.3}) has {} crossings; at least 3 are needed",
                members[0].center.x[0],
                members[0].center.x[1],
                members.len()
            )));
        }
        let mut variation: f64 = 0.0;
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                variation = variation.max(linalg::frobenius_distance(&members[i].center.q, &members[j].center.q));
            }
        }
        let mut higgs_res: f64 = 0.0;
        let mut transport_res: f64 = 0.0;
        for c in members {
            let x = c.center.x;
            let q = &c.center.q;
            higgs_res = higgs_res.max(linalg::frobenius(&(a.higgs.value(x) * q - q * b.higgs.value(x))));
            let v = model.unit_vector(x, c.center.theta);
            let dq = (&c.after.q - &c.before.q) * linalg::c(0.5 / c.delta, 0.0);
            let r = dq + a.conn.along(x, v) * q - q * b.conn.along(x, v);
            transport_res = transport_res.max(linalg::frobenius(&r));
        }
        let n = members.len() as f64;
        cells.push(CellReport {
            center: [
                members.iter().map(|c| c.center.x[0]).sum::<f64>() / n,
                members.iter().map(|c| c.center.x[1]).sum::<f64>() / n,
            ],
            crossings: members.len(),
            theta_variation: variation,
            higgs_residual: higgs_res,
            transport_residual: transport_res,
        });
    }
    if cells.is_empty() {
        return Err(Error::Validation("no crossings supplied".into()));
    }
    let max = |f: fn(&CellReport) -> f64| cells.iter().map(f).fold(0.0, f64::max);
    let max_theta_variation = max(|c| c.theta_variation);
    Ok(DegreeZeroReport {
        max_higgs_residual: max(|c| c.higgs_residual),
        max_transport_residual: max(|c| c.transport_residual),
        degree_zero: max_theta_variation < tolerance,
        max_theta_variation,
        tolerance,
        cells,
    })
}
