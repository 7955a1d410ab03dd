//! Data on the trivial Hermitian bundle `D̄ × ℂ^d`: unitary connections,
//! skew-Hermitian Higgs fields and unitary gauges, all built from finite
//! sums of constant matrices times scalar profiles with a `ρ^N` factor, so
//! that every partial derivative is available in closed form.
//!
//! Conventions: `∇_v u = du(v) + Γ(v) u` with `Γ(v) = v¹Γ₁ + v²Γ₂`, gauge
//! action `Γ′ᵢ = Q⁻¹ΓᵢQ + Q⁻¹∂ᵢQ`, `Φ′ = Q⁻¹ΦQ`, and curvature
//! `f₁₂ = ∂₁Γ₂ − ∂₂Γ₁ + [Γ₁, Γ₂]`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{rho, AHModel, Jet2, PhasePoint};
use crate::linalg::{self, adjoint_action, CMat, CVec, SkewExp};
use crate::{Error, Result};

/// Tolerance for skew-Hermitian and unitarity assertions.
pub const SKEW_TOL: f64 = 1e-12;

/// Smooth scalar profile `β(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `exp(−|x − c|²/(2w²))`.
    Gaussian {
        center: [f64; 2],
        width: f64,
    },
    /// `(1 − |x − c|²/R²)^p` inside the disk of radius `R`, zero outside.
    Bump {
        center: [f64; 2],
        radius: f64,
        power: i32,
    },
}

impl Profile {
    pub fn jet(&self, x: [f64; 2]) -> Jet2 {
        match *self {
            Profile::Constant { value } => Jet2 {
                value,
                ..Default::default()
            },
            Profile::Gaussian { center, width } => {
                let dx = [x[0] - center[0], x[1] - center[1]];
                let w2 = width * width;
                let g = (-(dx[0] * dx[0] + dx[1] * dx[1]) / (2.0 * w2)).exp();
                let mut jet = Jet2 {
                    value: g,
                    grad: [-dx[0] / w2 * g, -dx[1] / w2 * g],
                    hess: [[0.0; 2]; 2],
                };
                for i in 0..2 {
                    for j in 0..2 {
                        let d = if i == j { 1.0 / w2 } else { 0.0 };
                        jet.hess[i][j] = (dx[i] * dx[j] / (w2 * w2) - d) * g;
                    }
                }
                jet
            }
            Profile::Bump { center, radius, power } => {
                let r2 = radius * radius;
                let dx = [x[0] - center[0], x[1] - center[1]];
                let s = 1.0 - (dx[0] * dx[0] + dx[1] * dx[1]) / r2;
                if s <= 0.0 {
                    return Jet2::default();
                }
                let p = power as f64;
                let dq = [2.0 * dx[0] / r2, 2.0 * dx[1] / r2];
                let v = s.powi(power);
                let v1 = p * s.powi(power - 1);
                let v2 = p * (p - 1.0) * s.powi(power - 2);
                let mut jet = Jet2 {
                    value: v,
                    grad: [-v1 * dq[0], -v1 * dq[1]],
                    hess: [[0.0; 2]; 2],
                };
                for i in 0..2 {
                    for j in 0..2 {
                        let ddq = if i == j { 2.0 / r2 } else { 0.0 };
                        jet.hess[i][j] = v2 * dq[i] * dq[j] - v1 * ddq;
                    }
                }
                jet
            }
        }
    }

    /// Random Gaussian profile centred in `|c| < 0.5`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let r = 0.5 * rng.random::<f64>().sqrt();
        let a = std::f64::consts::TAU * rng.random::<f64>();
        Profile::Gaussian {
            center: [r * a.cos(), r * a.sin()],
            width: 0.3 + 0.3 * rng.random::<f64>(),
        }
    }
}

/// Jet of `ρ^n`.
pub fn rho_power_jet(x: [f64; 2], n: u32) -> Jet2 {
    let r = rho(x);
    let dr = [-2.0 * x[0], -2.0 * x[1]];
    let nf = n as f64;
    let mut jet = Jet2 {
        value: r.powi(n as i32),
        ..Default::default()
    };
    if n >= 1 {
        let a = nf * r.powi(n as i32 - 1);
        for i in 0..2 {
            jet.grad[i] = a * dr[i];
            jet.hess[i][i] = -2.0 * a;
        }
    }
    if n >= 2 {
        let b = nf * (nf - 1.0) * r.powi(n as i32 - 2);
        for i in 0..2 {
            for j in 0..2 {
                jet.hess[i][j] += b * dr[i] * dr[j];
            }
        }
    }
    jet
}

pub fn product_jet(a: &Jet2, b: &Jet2) -> Jet2 {
    let mut out = Jet2 {
        value: a.value * b.value,
        ..Default::default()
    };
    for i in 0..2 {
        out.grad[i] = a.grad[i] * b.value + a.value * b.grad[i];
        for j in 0..2 {
            out.hess[i][j] =
                a.hess[i][j] * b.value + a.grad[i] * b.grad[j] + a.grad[j] * b.grad[i] + a.value * b.hess[i][j];
        }
    }
    out
}

/// `ρ^n β` together with its derivatives.
pub fn decayed_jet(x: [f64; 2], n: u32, profile: &Profile) -> Jet2 {
    product_jet(&rho_power_jet(x, n), &profile.jet(x))
}

fn scale(m: &CMat, f: f64) -> CMat {
    m * Complex64::new(f, 0.0)
}

fn check_skew(m: &CMat, what: &str) -> Result<()> {
    let defect = linalg::skew_defect(m);
    if defect > SKEW_TOL * linalg::frobenius(m).max(1.0) {
        return Err(Error::Validation(format!(
            "{what} is not skew-Hermitian (‖S + S*‖ = {defect:.3e})"
        )));
    }
    Ok(())
}

fn check_rank(m: &CMat, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::RankMismatch {
            expected: d,
            got: m.nrows(),
        });
    }
    Ok(())
}

/// One summand `ρ^N β(x) S` of a connection symbol `Γ_component`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnTerm {
    pub component: usize,
    pub s: CMat,
    pub profile: Profile,
}

/// One summand `ρ^N β(x) S` of a Higgs field.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub s: CMat,
    pub profile: Profile,
}

/// Connection symbols and their first partials at a point;
/// `dgamma[j][i] = ∂ⱼΓᵢ`.
#[derive(Debug, Clone)]
pub struct ConnectionSample {
    pub gamma: [CMat; 2],
    pub dgamma: [[CMat; 2]; 2],
}

impl ConnectionSample {
    pub fn along(&self, v: [f64; 2]) -> CMat {
        scale(&self.gamma[0], v[0]) + scale(&self.gamma[1], v[1])
    }

    pub fn curvature(&self) -> CMat {
        &self.dgamma[0][1] - &self.dgamma[1][0] + linalg::commutator(&self.gamma[0], &self.gamma[1])
    }
}

#[derive(Debug, Clone)]
pub enum ConnectionField {
    Separable {
        d: usize,
        decay: u32,
        terms: Vec<ConnTerm>,
    },
    /// `Q⁻¹ΓQ + Q⁻¹dQ`.
    Gauged {
        base: Box<ConnectionField>,
        gauge: GaugeField,
    },
    /// The induced connection on `End ℂ^d`, symbols `ad(Γᵢ)` acting on
    /// row-major flattened matrices.
    Adjoint(Box<ConnectionField>),
    Scaled {
        base: Box<ConnectionField>,
        factor: f64,
    },
}

impl ConnectionField {
    pub fn trivial(d: usize) -> Self {
        ConnectionField::Separable {
            d,
            decay: 0,
            terms: Vec::new(),
        }
    }

    pub fn separable(d: usize, decay: u32, terms: Vec<ConnTerm>) -> Result<Self> {
        for t in &terms {
            check_rank(&t.s, d)?;
            check_skew(&t.s, "connection generator")?;
            if t.component > 1 {
                return Err(Error::Validation(format!(
                    "connection component {} out of range",
                    t.component
                )));
            }
        }
        Ok(ConnectionField::Separable { d, decay, terms })
    }

    /// `per_component` random terms for each of `Γ₁, Γ₂`, generators of
    /// Frobenius norm `scale`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, decay: u32, per_component: usize, scale: f64) -> Self {
        let mut terms = Vec::new();
        for component in 0..2 {
            for _ in 0..per_component {
                terms.push(ConnTerm {
                    component,
                    s: linalg::random_skew_hermitian(rng, d, scale),
                    profile: Profile::random(rng),
                });
            }
        }
        ConnectionField::Separable { d, decay, terms }
    }

    /// `Q⁻¹dQ`, flat by construction.
    pub fn pure_gauge(gauge: GaugeField) -> Self {
        ConnectionField::Gauged {
            base: Box::new(Self::trivial(gauge.rank())),
            gauge,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ConnectionField::Scaled {
            base: Box::new(self.clone()),
            factor,
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            ConnectionField::Separable { d, .. } => *d,
            ConnectionField::Gauged { base, .. } | ConnectionField::Scaled { base, .. } => base.rank(),
            ConnectionField::Adjoint(base) => base.rank() * base.rank(),
        }
    }

    /// Decay exponent guaranteed by the construction.
    pub fn decay(&self) -> u32 {
        match self {
            ConnectionField::Separable { decay, terms, .. } => {
                if terms.is_empty() {
                    u32::MAX
                } else {
                    *decay
                }
            }
            ConnectionField::Gauged { base, gauge } => base.decay().min(gauge.decay().saturating_sub(1)),
            ConnectionField::Adjoint(base) | ConnectionField::Scaled { base, .. } => base.decay(),
        }
    }

    pub fn is_trivial(&self) -> bool {
        match self {
            ConnectionField::Separable { terms, .. } => terms.is_empty(),
            ConnectionField::Gauged { base, gauge } => base.is_trivial() && gauge.factors.is_empty(),
            ConnectionField::Adjoint(base) => base.is_trivial(),
            ConnectionField::Scaled { base, factor } => *factor == 0.0 || base.is_trivial(),
        }
    }

    /// Symbols `(Γ₁, Γ₂)` and, when `derivs` is set, their first partials
    /// (left as zeros otherwise).
    pub fn eval(&self, x: [f64; 2], derivs: bool) -> ConnectionSample {
        match self {
            ConnectionField::Separable { d, decay, terms } => {
                let z = linalg::zeros(*d);
                let mut s = ConnectionSample {
                    gamma: [z.clone(), z.clone()],
                    dgamma: [[z.clone(), z.clone()], [z.clone(), z]],
                };
                for t in terms {
                    let jet = if derivs {
                        decayed_jet(x, *decay, &t.profile)
                    } else {
                        Jet2 {
                            value: rho(x).powi(*decay as i32) * t.profile.jet(x).value,
                            ..Default::default()
                        }
                    };
                    s.gamma[t.component] += scale(&t.s, jet.value);
                    if derivs {
                        for j in 0..2 {
                            s.dgamma[j][t.component] += scale(&t.s, jet.grad[j]);
                        }
                    }
                }
                s
            }
            ConnectionField::Gauged { base, gauge } => {
                let b = base.eval(x, derivs);
                let q = gauge.jet(x, derivs);
                let qi = q.value.adjoint();
                let mut gamma: [CMat; 2] = std::array::from_fn(|i| &qi * &b.gamma[i] * &q.value + &qi * &q.d[i]);
                let mut dgamma = b.dgamma.clone();
                if derivs {
                    for j in 0..2 {
                        let dqj_adj = q.d[j].adjoint();
                        for i in 0..2 {
                            dgamma[j][i] = &dqj_adj * &b.gamma[i] * &q.value
                                + &qi * &b.dgamma[j][i] * &q.value
                                + &qi * &b.gamma[i] * &q.d[j]
                                + &dqj_adj * &q.d[i]
                                + &qi * &q.dd[j][i];
                        }
                    }
                }
                // keep the symbols exactly skew against rounding drift
                for g in gamma.iter_mut() {
                    *g = (&*g - g.adjoint()) * Complex64::new(0.5, 0.0);
                }
                ConnectionSample { gamma, dgamma }
            }
            ConnectionField::Adjoint(base) => {
                let b = base.eval(x, derivs);
                ConnectionSample {
                    gamma: std::array::from_fn(|i| adjoint_action(&b.gamma[i])),
                    dgamma: std::array::from_fn(|j| std::array::from_fn(|i| adjoint_action(&b.dgamma[j][i]))),
                }
            }
            ConnectionField::Scaled { base, factor } => {
                let b = base.eval(x, derivs);
                ConnectionSample {
                    gamma: std::array::from_fn(|i| scale(&b.gamma[i], *factor)),
                    dgamma: std::array::from_fn(|j| std::array::from_fn(|i| scale(&b.dgamma[j][i], *factor))),
                }
            }
        }
    }

    pub fn symbols(&self, x: [f64; 2]) -> [CMat; 2] {
        self.eval(x, false).gamma
    }

    /// `Γ(v) = vⁱΓᵢ`.
    pub fn along(&self, x: [f64; 2], v: [f64; 2]) -> CMat {
        self.eval(x, false).along(v)
    }

    /// Largest `‖Γ_i + Γ_i*‖` over the grid.
    pub fn max_skew_defect(&self, grid: &InteriorGrid) -> f64 {
        grid.points()
            .iter()
            .flat_map(|x| {
                let g = self.symbols(*x);
                [linalg::skew_defect(&g[0]), linalg::skew_defect(&g[1])]
            })
            .fold(0.0, f64::max)
    }

    /// Largest `max(‖Γ₁‖, ‖Γ₂‖)/ρ^n` over the grid.
    pub fn decay_constant(&self, n: u32, grid: &InteriorGrid) -> f64 {
        grid.points()
            .iter()
            .map(|x| {
                let g = self.symbols(*x);
                linalg::frobenius(&g[0]).max(linalg::frobenius(&g[1])) / rho(*x).powi(n as i32)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub enum HiggsField {
    Separable {
        d: usize,
        decay: u32,
        terms: Vec<Term>,
    },
    /// `Q⁻¹ΦQ`.
    Gauged {
        base: Box<HiggsField>,
        gauge: GaugeField,
    },
    Scaled {
        base: Box<HiggsField>,
        factor: f64,
    },
}

impl HiggsField {
    pub fn zero(d: usize) -> Self {
        HiggsField::Separable {
            d,
            decay: 1,
            terms: Vec::new(),
        }
    }

    /// Rejects generators that are not skew-Hermitian and fields that do
    /// not decay at the boundary.
    pub fn separable(d: usize, decay: u32, terms: Vec<Term>) -> Result<Self> {
        if decay == 0 && !terms.is_empty() {
            return Err(Error::Validation(
                "Higgs field must decay at the boundary (decay exponent ≥ 1)".into(),
            ));
        }
        for t in &terms {
            check_rank(&t.s, d)?;
            check_skew(&t.s, "Higgs generator")?;
        }
        Ok(HiggsField::Separable { d, decay, terms })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, decay: u32, n_terms: usize, scale: f64) -> Self {
        let terms = (0..n_terms)
            .map(|_| Term {
                s: linalg::random_skew_hermitian(rng, d, scale),
                profile: Profile::random(rng),
            })
            .collect();
        HiggsField::Separable {
            d,
            decay: decay.max(1),
            terms,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        HiggsField::Scaled {
            base: Box::new(self.clone()),
            factor,
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            HiggsField::Separable { d, .. } => *d,
            HiggsField::Gauged { base, .. } | HiggsField::Scaled { base, .. } => base.rank(),
        }
    }

    pub fn decay(&self) -> u32 {
        match self {
            HiggsField::Separable { decay, terms, .. } => {
                if terms.is_empty() {
                    u32::MAX
                } else {
                    *decay
                }
            }
            HiggsField::Gauged { base, .. } | HiggsField::Scaled { base, .. } => base.decay(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            HiggsField::Separable { terms, .. } => terms.is_empty(),
            HiggsField::Gauged { base, .. } => base.is_zero(),
            HiggsField::Scaled { base, factor } => *factor == 0.0 || base.is_zero(),
        }
    }

    pub fn value(&self, x: [f64; 2]) -> CMat {
        match self {
            HiggsField::Separable { d, decay, terms } => {
                let r = rho(x).powi(*decay as i32);
                let mut m = linalg::zeros(*d);
                for t in terms {
                    m += scale(&t.s, r * t.profile.jet(x).value);
                }
                m
            }
            HiggsField::Gauged { base, gauge } => {
                let q = gauge.value(x);
                let m = q.adjoint() * base.value(x) * &q;
                (&m - m.adjoint()) * Complex64::new(0.5, 0.0)
            }
            HiggsField::Scaled { base, factor } => scale(&base.value(x), *factor),
        }
    }
}

/// One factor `exp(ρ^M β(x) S)` of a gauge.
#[derive(Debug, Clone)]
pub struct GaugeFactor {
    pub decay: u32,
    pub s: CMat,
    pub profile: Profile,
    exp: SkewExp,
}

impl GaugeFactor {
    pub fn new(decay: u32, s: CMat, profile: Profile) -> Result<Self> {
        check_skew(&s, "gauge generator")?;
        if decay == 0 {
            return Err(Error::Validation(
                "gauge must equal the identity at the boundary (decay exponent ≥ 1)".into(),
            ));
        }
        let exp = SkewExp::new(&s);
        Ok(Self { decay, s, profile, exp })
    }
}

/// `Q`, `∂ᵢQ` and `∂ᵢ∂ⱼQ` at a point.
#[derive(Debug, Clone)]
pub struct MatJet {
    pub value: CMat,
    pub d: [CMat; 2],
    pub dd: [[CMat; 2]; 2],
}

/// Unitary gauge `Q = Πₖ exp(ρ^{Mₖ} βₖ(x) Sₖ)`, equal to the identity on
/// the boundary circle.
#[derive(Debug, Clone)]
pub struct GaugeField {
    d: usize,
    pub factors: Vec<GaugeFactor>,
}

impl GaugeField {
    pub fn identity(d: usize) -> Self {
        Self { d, factors: Vec::new() }
    }

    pub fn new(d: usize, factors: Vec<GaugeFactor>) -> Result<Self> {
        for f in &factors {
            check_rank(&f.s, d)?;
        }
        Ok(Self { d, factors })
    }

    /// `exp(ρ^M β S)` for a single generator.
    pub fn exponential(decay: u32, s: CMat, profile: Profile) -> Result<Self> {
        let d = s.nrows();
        Self::new(d, vec![GaugeFactor::new(decay, s, profile)?])
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, decay: u32, n_factors: usize, scale: f64) -> Self {
        let factors = (0..n_factors)
            .map(|_| {
                GaugeFactor::new(
                    decay.max(1),
                    linalg::random_skew_hermitian(rng, d, scale),
                    Profile::random(rng),
                )
                .expect("random generator is skew")
            })
            .collect();
        Self { d, factors }
    }

    /// The gauge `self · other`.
    pub fn compose(&self, other: &GaugeField) -> Result<GaugeField> {
        if self.d != other.d {
            return Err(Error::RankMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        Ok(GaugeField { d: self.d, factors })
    }

    pub fn rank(&self) -> usize {
        self.d
    }

    pub fn decay(&self) -> u32 {
        self.factors.iter().map(|f| f.decay).min().unwrap_or(u32::MAX)
    }

    pub fn value(&self, x: [f64; 2]) -> CMat {
        let mut q = linalg::identity(self.d);
        for f in &self.factors {
            let a = rho(x).powi(f.decay as i32) * f.profile.jet(x).value;
            q *= f.exp.exp(a);
        }
        q
    }

    /// Value with first and (when `second` is set) second partials.
    pub fn jet(&self, x: [f64; 2], second: bool) -> MatJet {
        let id = linalg::identity(self.d);
        let z = linalg::zeros(self.d);
        let mut p = MatJet {
            value: id,
            d: [z.clone(), z.clone()],
            dd: [[z.clone(), z.clone()], [z.clone(), z]],
        };
        for f in &self.factors {
            let a = decayed_jet(x, f.decay, &f.profile);
            let e = f.exp.exp(a.value);
            let se = &f.s * &e;
            let sse = &f.s * &se;
            let de: [CMat; 2] = std::array::from_fn(|i| scale(&se, a.grad[i]));
            let mut next = MatJet {
                value: &p.value * &e,
                d: std::array::from_fn(|i| &p.d[i] * &e + &p.value * &de[i]),
                dd: p.dd.clone(),
            };
            if second {
                for i in 0..2 {
                    for j in 0..2 {
                        let dde = scale(&se, a.hess[i][j]) + scale(&sse, a.grad[i] * a.grad[j]);
                        next.dd[i][j] = &p.dd[i][j] * &e + &p.d[i] * &de[j] + &p.d[j] * &de[i] + &p.value * dde;
                    }
                }
            }
            p = next;
        }
        p
    }
}

/// The single independent curvature component `f₁₂` on a surface.
pub type CurvatureSample = CMat;

/// `f₁₂` at `x`.
pub fn curvature_at(conn: &ConnectionField, x: [f64; 2]) -> CurvatureSample {
    conn.eval(x, true).curvature()
}

/// `f₁₂` from central differences of the symbols.
pub fn curvature_fd(conn: &ConnectionField, x: [f64; 2], h: f64) -> CMat {
    let at = |dx: f64, dy: f64| conn.symbols([x[0] + dx, x[1] + dy]);
    let inv = Complex64::new(1.0 / (2.0 * h), 0.0);
    let d1g2 = (&at(h, 0.0)[1] - &at(-h, 0.0)[1]) * inv;
    let d2g1 = (&at(0.0, h)[0] - &at(0.0, -h)[0]) * inv;
    let g = conn.symbols(x);
    d1g2 - d2g1 + linalg::commutator(&g[0], &g[1])
}

/// Coefficient of `F_v e` along the g-unit normal `v⊥ = (−v², v¹)`; on a
/// surface this is `f(v, v⊥) e = |v|²_eucl f₁₂ e`.
pub fn curvature_operator(conn: &ConnectionField, p: &PhasePoint, e: &CVec) -> CVec {
    let f = curvature_at(conn, p.x);
    let v2 = p.v[0] * p.v[0] + p.v[1] * p.v[1];
    (f * e) * Complex64::new(v2, 0.0)
}

/// Gauge transform of a pair. Rank-checked; the outputs are asserted
/// unitary and skew-Hermitian at a few sample points.
pub fn gauge_transform(
    conn: &ConnectionField,
    higgs: &HiggsField,
    q: &GaugeField,
) -> Result<(ConnectionField, HiggsField)> {
    let d = q.rank();
    for got in [conn.rank(), higgs.rank()] {
        if got != d {
            return Err(Error::RankMismatch { expected: d, got });
        }
    }
    let c2 = ConnectionField::Gauged {
        base: Box::new(conn.clone()),
        gauge: q.clone(),
    };
    let h2 = HiggsField::Gauged {
        base: Box::new(higgs.clone()),
        gauge: q.clone(),
    };
    for x in [[0.0, 0.0], [0.3, -0.2], [-0.5, 0.4], [0.1, 0.7]] {
        let u = linalg::unitarity_defect(&q.value(x));
        let s = linalg::skew_defect(&h2.value(x));
        let g = c2.symbols(x);
        let cs = linalg::skew_defect(&g[0]).max(linalg::skew_defect(&g[1]));
        let limit = 1e-10;
        if u > limit || s > limit || cs > limit {
            return Err(Error::Numerical(format!(
                "gauge transform lost unitarity (Q: {u:.2e}, Φ: {s:.2e}, Γ: {cs:.2e})"
            )));
        }
    }
    Ok((c2, h2))
}

/// Square grid of points clipped to `{ρ ≥ rho_min}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteriorGrid {
    pub n: usize,
    pub rho_min: f64,
}

impl Default for InteriorGrid {
    fn default() -> Self {
        Self { n: 32, rho_min: 0.05 }
    }
}

impl InteriorGrid {
    pub fn new(n: usize, rho_min: f64) -> Self {
        Self { n, rho_min }
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        let a = (1.0 - self.rho_min).sqrt();
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let x = [
                    -a + 2.0 * a * (i as f64 + 0.5) / self.n as f64,
                    -a + 2.0 * a * (j as f64 + 0.5) / self.n as f64,
                ];
                if rho(x) >= self.rho_min {
                    out.push(x);
                }
            }
        }
        out
    }
}

/// `sup_x ‖F‖` where `‖F_v‖ = e^{−2λ}‖f₁₂‖_op` for every unit `v`.
pub fn sup_curvature_norm(conn: &ConnectionField, model: &AHModel, grid: &InteriorGrid) -> f64 {
    grid.points()
        .iter()
        .map(|x| {
            let e2 = (-2.0 * model.lambda_jet(*x).value).exp();
            e2 * linalg::op_norm(&curvature_at(conn, *x))
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CktReport {
    pub kappa: f64,
    pub fnorm: f64,
    pub satisfied: bool,
}

/// Sufficient condition `‖F‖ ≤ κ√n` (here `n = 1`) ruling out twisted
/// conformal Killing tensors, with `−κ` the largest curvature on the grid.
pub fn ckt_condition_check(conn: &ConnectionField, model: &AHModel, grid: &InteriorGrid) -> CktReport {
    let kmax = grid
        .points()
        .iter()
        .map(|x| model.curvature_unchecked(*x))
        .fold(f64::NEG_INFINITY, f64::max);
    let kappa = -kmax;
    let fnorm = sup_curvature_norm(conn, model, grid);
    CktReport {
        kappa,
        fnorm,
        satisfied: fnorm <= kappa,
    }
}

/// Connection induced on `End ℂ^d` by commutators.
pub fn endomorphism_lift(conn: &ConnectionField) -> ConnectionField {
    ConnectionField::Adjoint(Box::new(conn.clone()))
}

/// Least-squares slope of `log f` against `log ρ` along the ray at angle
/// `alpha`.
pub fn fit_decay_exponent(f: impl Fn([f64; 2]) -> f64, alpha: f64, rhos: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = rhos
        .iter()
        .map(|&r| {
            let s = (1.0 - r).sqrt();
            (r.ln(), f([s * alpha.cos(), s * alpha.sin()]).ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
