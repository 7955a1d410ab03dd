//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! kind = "conformal_perturbed"          # or "poincare_disk"
//! bump = { center = [0.1, -0.2], radius = 0.4, amplitude = 0.05 }
//!
//! [connection]
//! type = "random"                       # trivial | random | pure_gauge
//! rank = 2
//! decay = 3
//!
//! [higgs]
//! type = "random"                       # zero | random | basis
//! rank = 2
//! decay = 4
//!
//! [gauge]                               # optional second pair for gauge-check
//! type = "exponential"
//! decay = 4
//!
//! [fan]
//! count = 200
//!
//! [transport]
//! rho_cut = 1e-6
//! ```
//!
//! Every randomized block draws from its own ChaCha stream of `seed`, so
//! editing one block does not change the others.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{gauge_transform, ConnectionField, GaugeField, HiggsField, Profile};
use crate::geometry::{AHModel, Bump, ModelKind, ModelLimits};
use crate::linalg::{self, CMat};
use crate::reconstruct::{BasisTerm, HiggsParameterization, ReconstructionConfig};
use crate::spherebundle::{GridSpec, SectionSpec};
use crate::transport::TransportConfig;
use crate::xray::{FanSpec, DEFAULT_ETA_MAX};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub bump: Option<Bump>,
    #[serde(default)]
    pub limits: Option<ModelLimits>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::PoincareDisk,
            bump: None,
            limits: None,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<AHModel> {
        match (self.kind, self.bump) {
            (ModelKind::PoincareDisk, None) => Ok(AHModel::poincare()),
            (ModelKind::PoincareDisk, Some(_)) => Err(Error::Config(
                "model.bump is only allowed with kind = \"conformal_perturbed\"".into(),
            )),
            (ModelKind::ConformalPerturbed, Some(b)) => AHModel::perturbed(b, &self.limits.unwrap_or_default()),
            (ModelKind::ConformalPerturbed, None) => {
                Err(Error::Config("model.bump is required for a perturbed model".into()))
            }
        }
    }
}

fn default_rank() -> usize {
    2
}
fn default_decay() -> u32 {
    4
}
fn default_terms() -> usize {
    2
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConnectionConfig {
    Trivial {
        #[serde(default = "default_rank")]
        rank: usize,
    },
    Random {
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_decay")]
        decay: u32,
        #[serde(default = "default_terms")]
        terms_per_component: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `Q⁻¹dQ` for a random gauge `Q`; flat.
    PureGauge {
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_decay")]
        decay: u32,
        #[serde(default = "default_terms")]
        factors: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

impl Default for ConnectionConfig {
    fn default() -> Self {
        ConnectionConfig::Trivial { rank: 2 }
    }
}

impl ConnectionConfig {
    pub fn rank(&self) -> usize {
        match *self {
            ConnectionConfig::Trivial { rank }
            | ConnectionConfig::Random { rank, .. }
            | ConnectionConfig::PureGauge { rank, .. } => rank,
        }
    }

    pub fn build<R: Rng>(&self, rng: &mut R) -> Result<ConnectionField> {
        Ok(match *self {
            ConnectionConfig::Trivial { rank } => ConnectionField::trivial(rank),
            ConnectionConfig::Random {
                rank,
                decay,
                terms_per_component,
                scale,
            } => ConnectionField::random(rng, rank, decay, terms_per_component, scale),
            ConnectionConfig::PureGauge {
                rank,
                decay,
                factors,
                scale,
            } => ConnectionField::pure_gauge(GaugeField::random(rng, rank, decay, factors, scale)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum HiggsConfig {
    Zero {
        #[serde(default = "default_rank")]
        rank: usize,
    },
    Random {
        #[serde(default = "default_rank")]
        rank: usize,
        #[serde(default = "default_decay")]
        decay: u32,
        #[serde(default = "default_terms")]
        terms: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `Φ_c` over the `[basis]` block; `coeffs` defaults to a random
    /// vector of norm `norm`.
    Basis {
        #[serde(default)]
        coeffs: Option<Vec<f64>>,
        #[serde(default = "default_scale")]
        norm: f64,
    },
}

impl Default for HiggsConfig {
    fn default() -> Self {
        HiggsConfig::Zero { rank: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaugeConfig {
    Random {
        #[serde(default = "default_decay")]
        decay: u32,
        #[serde(default = "default_terms")]
        factors: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `exp(ρ^decay β S)`; `S` random of Frobenius norm `scale` unless given
    /// as row-major `[re, im]` pairs, `β ≡ 1` unless a profile is given.
    Exponential {
        #[serde(default = "default_decay")]
        decay: u32,
        #[serde(default)]
        generator: Option<Vec<[f64; 2]>>,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        profile: Option<Profile>,
    },
}

impl GaugeConfig {
    pub fn build<R: Rng>(&self, rng: &mut R, d: usize) -> Result<GaugeField> {
        match self {
            GaugeConfig::Random { decay, factors, scale } => Ok(GaugeField::random(rng, d, *decay, *factors, *scale)),
            GaugeConfig::Exponential {
                decay,
                generator,
                scale,
                profile,
            } => {
                let s = match generator {
                    Some(pairs) => linalg::from_pairs(d, pairs)?,
                    None => linalg::random_skew_hermitian(rng, d, *scale),
                };
                GaugeField::exponential(*decay, s, profile.unwrap_or(Profile::Constant { value: 1.0 }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanMode {
    /// Boundary pairs on the disk, shooting otherwise.
    Auto,
    Pairs,
    Shooting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FanConfig {
    pub count: usize,
    pub mode: FanMode,
    /// Window `|η₁| ≤ eta_max` of shooting fans.
    pub eta_max: f64,
}

impl Default for FanConfig {
    fn default() -> Self {
        Self {
            count: 100,
            mode: FanMode::Auto,
            eta_max: DEFAULT_ETA_MAX,
        }
    }
}

impl FanConfig {
    pub fn build(&self, model: &AHModel) -> Result<FanSpec> {
        if self.count == 0 {
            return Err(Error::Config("fan.count must be positive".into()));
        }
        Ok(match self.mode {
            FanMode::Auto => match model.kind {
                ModelKind::PoincareDisk => FanSpec::uniform_pairs(self.count),
                ModelKind::ConformalPerturbed => FanSpec::uniform_shooting(self.count, self.eta_max),
            },
            FanMode::Pairs => FanSpec::uniform_pairs(self.count),
            FanMode::Shooting => FanSpec::uniform_shooting(self.count, self.eta_max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisTermConfig {
    /// Row-major `[re, im]` pairs of a skew-Hermitian matrix.
    pub generator: Vec<[f64; 2]>,
    pub profile: Profile,
}

/// Explicit terms, or `count` random terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub rank: usize,
    pub decay: u32,
    pub count: usize,
    pub terms: Vec<BasisTermConfig>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            rank: 2,
            decay: 4,
            count: 6,
            terms: Vec::new(),
        }
    }
}

impl BasisConfig {
    pub fn build<R: Rng>(&self, rng: &mut R) -> Result<HiggsParameterization> {
        if self.terms.is_empty() {
            HiggsParameterization::random(rng, self.rank, self.decay, self.count)
        } else {
            let basis = self
                .terms
                .iter()
                .map(|t| {
                    Ok(BasisTerm {
                        generator: linalg::from_pairs(self.rank, &t.generator)?,
                        profile: t.profile,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            HiggsParameterization::new(self.rank, self.decay, basis)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of additive Gaussian noise on matrix entries.
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub connection: ConnectionConfig,
    #[serde(default)]
    pub higgs: HiggsConfig,
    #[serde(default)]
    pub gauge: Option<GaugeConfig>,
    #[serde(default)]
    pub fan: FanConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub section: SectionSpec,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
}

/// Stream indices of the randomized blocks.
mod stream {
    pub const CONNECTION: u64 = 1;
    pub const HIGGS: u64 = 2;
    pub const GAUGE: u64 = 3;
    pub const BASIS: u64 = 4;
    pub const TRUTH: u64 = 5;
    pub const NOISE: u64 = 6;
}

/// All objects built from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: AHModel,
    pub conn: ConnectionField,
    pub higgs: HiggsField,
    /// The gauge-transformed pair, when a `[gauge]` block is present.
    pub gauged: Option<(ConnectionField, HiggsField, GaugeField)>,
    pub fan: FanSpec,
    pub transport: TransportConfig,
    pub basis: Option<HiggsParameterization>,
    pub truth: Option<Vec<f64>>,
    pub geometry_fingerprint: String,
    pub fingerprint: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }

    /// SHA-256 of the whole configuration.
    pub fn fingerprint(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// SHA-256 of the model and fan blocks; datasets from configs that
    /// share it are comparable.
    pub fn geometry_fingerprint(&self) -> String {
        let key = serde_json::json!({ "model": self.model, "fan": self.fan });
        sha256_hex(key.to_string().as_bytes())
    }

    pub fn rank(&self) -> usize {
        match self.higgs {
            HiggsConfig::Basis { .. } => self.basis.rank,
            _ => self.connection.rank(),
        }
    }

    pub fn build(&self) -> Result<Experiment> {
        let model = self.model.build()?;
        self.transport.validate()?;
        let d = self.connection.rank();
        let conn = self.connection.build(&mut self.rng(stream::CONNECTION))?;
        let mut basis = None;
        let mut truth = None;
        let higgs = match &self.higgs {
            HiggsConfig::Zero { rank } => {
                check_rank(*rank, d, "higgs.rank")?;
                HiggsField::zero(d)
            }
            HiggsConfig::Random {
                rank,
                decay,
                terms,
                scale,
            } => {
                check_rank(*rank, d, "higgs.rank")?;
                if *decay == 0 {
                    return Err(Error::Config("higgs.decay must be at least 1".into()));
                }
                HiggsField::random(&mut self.rng(stream::HIGGS), d, *decay, *terms, *scale)
            }
            HiggsConfig::Basis { coeffs, norm } => {
                check_rank(self.basis.rank, d, "basis.rank")?;
                let p = self.build_basis()?;
                let c = match coeffs {
                    Some(c) => c.clone(),
                    None => random_direction(&mut self.rng(stream::TRUTH), p.len(), *norm),
                };
                let h = p.field(&c)?;
                basis = Some(p);
                truth = Some(c);
                h
            }
        };
        if basis.is_none() && self.basis.rank == d {
            basis = self.build_basis().ok();
        }
        let gauged = match &self.gauge {
            Some(g) => {
                let q = g.build(&mut self.rng(stream::GAUGE), d)?;
                let (c2, h2) = gauge_transform(&conn, &higgs, &q)?;
                Some((c2, h2, q))
            }
            None => None,
        };
        Ok(Experiment {
            fan: self.fan.build(&model)?,
            model,
            conn,
            higgs,
            gauged,
            transport: self.transport,
            basis,
            truth,
            geometry_fingerprint: self.geometry_fingerprint(),
            fingerprint: self.fingerprint(),
        })
    }

    /// The `[basis]` parameterization, drawn from its own stream.
    pub fn build_basis(&self) -> Result<HiggsParameterization> {
        self.basis.build(&mut self.rng(stream::BASIS))
    }

    pub fn noise_rng(&self) -> ChaCha8Rng {
        self.rng(stream::NOISE)
    }
}

fn check_rank(got: usize, expected: usize, field: &str) -> Result<()> {
    if got != expected {
        return Err(Error::Config(format!(
            "{field} = {got} does not match connection.rank = {expected}"
        )));
    }
    Ok(())
}

/// Uniformly random direction scaled to `norm`.
pub fn random_direction<R: Rng>(rng: &mut R, k: usize, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let n = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x * norm / n).collect();
        }
    }
}

/// Reads a basis block on its own, as passed to `reconstruct --basis`.
pub fn load_basis(path: &Path) -> Result<BasisConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct File {
        basis: BasisConfig,
    }
    toml::from_str::<File>(&text)
        .map(|f| f.basis)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Row-major `[re, im]` pairs of a matrix, as used in config files.
pub fn matrix_pairs(m: &CMat) -> Vec<[f64; 2]> {
    linalg::to_pairs(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
seed = 7

[model]
kind = "conformal_perturbed"
bump = { center = [0.1, -0.2], radius = 0.4, amplitude = 0.05 }

[connection]
type = "random"
rank = 2
decay = 3

[higgs]
type = "random"
rank = 2

[gauge]
type = "exponential"
decay = 4

[fan]
count = 12

[transport]
rho_cut = 1e-6
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let e = cfg.build().unwrap();
        assert_eq!(e.model.kind, ModelKind::ConformalPerturbed);
        assert_eq!(e.fan.len(), 12);
        assert!(matches!(e.fan, FanSpec::Shooting(_)));
        assert!(e.gauged.is_some());
        assert_eq!(e.fingerprint.len(), 64);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn streams_are_independent() {
        let a = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let mut b = a.clone();
        b.higgs = HiggsConfig::Random {
            rank: 2,
            decay: 4,
            terms: 5,
            scale: 1.0,
        };
        let (ea, eb) = (a.build().unwrap(), b.build().unwrap());
        let x = [0.2, -0.1];
        assert_eq!(ea.conn.symbols(x), eb.conn.symbols(x));
        assert_ne!(ea.higgs.value(x), eb.higgs.value(x));
        assert_eq!(a.geometry_fingerprint(), b.geometry_fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn diagnostics_name_the_field() {
        let bad = EXAMPLE.replace("count = 12", "count = \"many\"");
        let msg = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(msg.contains("count"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
        let unknown = EXAMPLE.replace("[fan]", "[fan]\nwidth = 3");
        assert!(ExperimentConfig::from_toml(&unknown)
            .unwrap_err()
            .to_string()
            .contains("width"));
        assert!(ExperimentConfig::from_toml("[model]\nkind = \"poincare_disk\"").is_err());
    }

    #[test]
    fn basis_higgs_records_truth() {
        let cfg = ExperimentConfig::from_toml("seed = 3\n[higgs]\ntype = \"basis\"\nnorm = 1.0\n[basis]\ncount = 6\n")
            .unwrap();
        let e = cfg.build().unwrap();
        let t = e.truth.unwrap();
        assert_eq!(t.len(), 6);
        assert!((t.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_mismatch_reported() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 1\n[connection]\ntype = \"trivial\"\nrank = 3\n[higgs]\ntype = \"zero\"\nrank = 2\n",
        )
        .unwrap();
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }
}
