//! `ahx`: batch front end for scattering, gauge, sphere-bundle and
//! reconstruction experiments. Exit codes: 0 success, 2 invalid input,
//! 3 numerical failure.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ahx::bundle::{ckt_condition_check, curvature_at, InteriorGrid};
use ahx::config::{Experiment, ExperimentConfig};
use ahx::linalg;
use ahx::reconstruct::{reconstruct_higgs, ReconstructionReport};
use ahx::spherebundle::{self, mode_energies, GridSpec, SphereBundleGrid, SphereOps};
use ahx::xray::{
    compare_datasets, compute_scattering_data, crossing_family, gauge_degree_zero_check, Pair, ScatteringDataset,
};
use ahx::{Error, Result, VERSION};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ahx", version, about = "Non-abelian X-ray transform laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides transport.rho_cut.
    #[arg(long = "rho-cut")]
    rho_cut: Option<f64>,
    /// Overrides fan.count.
    #[arg(long)]
    fan: Option<usize>,
    /// Overrides the grid as `nx,ntheta`.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
}

#[derive(Subcommand)]
enum Command {
    /// Scattering dataset over the configured fan, as JSON lines.
    Scatter {
        #[command(flatten)]
        common: Common,
        /// Use the gauge-transformed pair of the `[gauge]` block.
        #[arg(long)]
        gauged: bool,
    },
    /// Compares the data of a pair and its gauge transform, or two dataset files.
    GaugeCheck {
        #[command(flatten)]
        common: Common,
        /// First dataset file; compared against `--b` instead of using the config.
        #[arg(long, requires = "b", conflicts_with = "config")]
        a: Option<PathBuf>,
        /// Second dataset file.
        #[arg(long, requires = "a")]
        b: Option<PathBuf>,
        /// Reported as `equivalent` when the distance is below this.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Also recover the gauge along crossing geodesics and test it for degree zero.
        #[arg(long)]
        recover: bool,
    },
    /// Commutator residuals and the Pestov residual under grid refinement.
    Pestov {
        #[command(flatten)]
        common: Common,
        /// Refinement levels.
        #[arg(long, default_value_t = 3)]
        levels: usize,
        /// CSV refinement table.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Fourier mode energies of the configured test section and of its image under X.
    Fourier {
        #[command(flatten)]
        common: Common,
    },
    /// Gauss-Newton recovery of the Higgs coefficients over the `[basis]` block.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Dataset from `scatter`; generated in-process from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// TOML file with a `[basis]` table replacing the config's.
        #[arg(long)]
        basis: Option<PathBuf>,
    },
    /// Curvature table on an interior grid and the CKT condition.
    Curvature {
        #[command(flatten)]
        common: Common,
        /// Side length of the sampling grid.
        #[arg(long, default_value_t = 32)]
        n: usize,
        /// JSON summary with the CKT condition.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected nx,ntheta")?;
    let nx = a.trim().parse().map_err(|e| format!("nx: {e}"))?;
    let nt = b.trim().parse().map_err(|e| format!("ntheta: {e}"))?;
    Ok((nx, nt))
}

/// Header shared by every JSON report.
#[derive(Serialize)]
struct Report<T: Serialize> {
    command: &'static str,
    version: &'static str,
    fingerprint: String,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Scatter { common, gauged } => scatter(&common, gauged),
        Command::GaugeCheck {
            common,
            a,
            b,
            tolerance,
            recover,
        } => gauge_check(&common, a.as_deref().zip(b.as_deref()), tolerance, recover),
        Command::Pestov { common, levels, table } => pestov(&common, levels, table.as_deref()),
        Command::Fourier { common } => fourier(&common),
        Command::Reconstruct { common, data, basis } => reconstruct(&common, data.as_deref(), basis.as_deref()),
        Command::Curvature { common, n, report } => curvature(&common, n, report.as_deref()),
    }
}

impl Common {
    fn setup(&self) -> Result<()> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Error::Validation("--threads must be positive".into()));
            }
            // Fails only if a pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(())
    }

    fn load(&self) -> Result<ExperimentConfig> {
        self.setup()?;
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.rho_cut {
            cfg.transport.rho_cut = r;
        }
        if let Some(n) = self.fan {
            cfg.fan.count = n;
        }
        if let Some((nx, nt)) = self.grid {
            cfg.grid.nx = nx;
            cfg.grid.n_theta = nt;
        }
        Ok(cfg)
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        open_sink(self.out.as_deref())
    }
}

fn open_sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| {
                Error::Validation(format!("cannot write {}: {e}", p.display()))
            })?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_report<T: Serialize>(w: &mut dyn Write, cfg: &ExperimentConfig, command: &'static str, body: T) -> Result<()> {
    let r = Report {
        command,
        version: VERSION,
        fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        body,
    };
    serde_json::to_writer_pretty(&mut *w, &r)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn dataset(cfg: &ExperimentConfig, e: &Experiment, gauged: bool) -> Result<ScatteringDataset> {
    let (conn, higgs) = if gauged {
        let (c, h, _) = e
            .gauged
            .as_ref()
            .ok_or_else(|| Error::Config("--gauged needs a [gauge] block".into()))?;
        (c, h)
    } else {
        (&e.conn, &e.higgs)
    };
    let mut ds = compute_scattering_data(&e.model, conn, higgs, &e.fan, &e.transport, &e.geometry_fingerprint)?;
    ds.add_gaussian_noise(&mut cfg.noise_rng(), cfg.noise.sigma)?;
    Ok(ds)
}

fn scatter(common: &Common, gauged: bool) -> Result<()> {
    let cfg = common.load()?;
    let e = cfg.build()?;
    let ds = dataset(&cfg, &e, gauged)?;
    let mut w = common.sink()?;
    ds.write_jsonl(&mut w)?;
    w.flush()?;
    eprintln!("{} records, {} failures", ds.records.len(), ds.failures.len());
    Ok(())
}

fn read_dataset(path: &Path) -> Result<ScatteringDataset> {
    let f = File::open(path).map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    ScatteringDataset::read_jsonl(BufReader::new(f))
}

#[derive(Serialize)]
struct GaugeCheckBody {
    records: usize,
    max_frobenius: f64,
    mean_frobenius: f64,
    tolerance: f64,
    equivalent: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    recovery: Option<ahx::xray::DegreeZeroReport>,
}

/// Centres of the crossing families used by `--recover`, away from cell edges.
const RECOVERY_CENTERS: [[f64; 2]; 4] = [[0.05, 0.05], [-0.35, 0.25], [0.25, -0.15], [-0.15, -0.45]];

fn gauge_check(common: &Common, files: Option<(&Path, &Path)>, tolerance: f64, recover: bool) -> Result<()> {
    let (cfg, a, b, e) = match files {
        Some((pa, pb)) => {
            common.setup()?;
            if recover {
                return Err(Error::Validation("--recover needs --config".into()));
            }
            // Reports from file mode carry the fingerprint of the first dataset.
            let a = read_dataset(pa)?;
            let b = read_dataset(pb)?;
            (None, a, b, None)
        }
        None => {
            let cfg = common.load()?;
            let e = cfg.build()?;
            if e.gauged.is_none() {
                return Err(Error::Config("gauge-check needs a [gauge] block or --a/--b".into()));
            }
            let a = dataset(&cfg, &e, false)?;
            let b = dataset(&cfg, &e, true)?;
            (Some(cfg), a, b, Some(e))
        }
    };
    let cmp = compare_datasets(&a, &b)?;
    let n = cmp.per_record.len();
    let recovery = match (&e, recover) {
        (Some(e), true) => {
            let (c2, h2, _) = e.gauged.as_ref().expect("checked above");
            let pa = Pair {
                conn: &e.conn,
                higgs: &e.higgs,
            };
            let pb = Pair { conn: c2, higgs: h2 };
            let cr = crossing_family(&e.model, pa, pb, &RECOVERY_CENTERS, 6, 1e-3, &e.transport)?;
            Some(gauge_degree_zero_check(&e.model, pa, pb, &cr, 0.1, 1e-4)?)
        }
        _ => None,
    };
    let body = GaugeCheckBody {
        records: n,
        max_frobenius: cmp.max_frobenius,
        mean_frobenius: if n > 0 {
            cmp.per_record.iter().sum::<f64>() / n as f64
        } else {
            0.0
        },
        tolerance,
        equivalent: cmp.max_frobenius < tolerance,
        recovery,
    };
    println!("max Frobenius distance {:.3e} over {n} records", body.max_frobenius);
    let mut w = common.sink()?;
    match cfg {
        Some(cfg) => write_report(&mut w, &cfg, "gauge-check", body),
        None => {
            let r = Report {
                command: "gauge-check",
                version: VERSION,
                fingerprint: a.fingerprint.clone(),
                seed: 0,
                body,
            };
            serde_json::to_writer_pretty(&mut w, &r)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct PestovBody {
    grid: GridSpec,
    section_degree: usize,
    commutators: spherebundle::CommutatorResiduals,
    pestov: spherebundle::PestovReport,
    refinement: Vec<spherebundle::RefinementRow>,
}

fn pestov(common: &Common, levels: usize, table: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    if levels == 0 {
        return Err(Error::Validation("--levels must be positive".into()));
    }
    let e = cfg.build()?;
    let d = e.conn.rank();
    let grid = SphereBundleGrid::new(&e.model, cfg.grid)?;
    let u = cfg.section.sample(&grid, d)?;
    let commutators = spherebundle::commutator_residuals(&e.conn, &grid, std::slice::from_ref(&u))?;
    let pestov = SphereOps::new(&grid, &e.conn).pestov_residual(&u)?;
    let refinement = spherebundle::pestov_refinement(&e.model, &e.conn, &cfg.section, cfg.grid, levels)?;
    if let Some(p) = table {
        let mut t = open_sink(Some(p))?;
        writeln!(t, "nx,n_theta,h,relative_residual")?;
        for r in &refinement {
            writeln!(t, "{},{},{},{}", r.nx, r.n_theta, r.h, r.relative_residual)?;
        }
        t.flush()?;
    }
    println!(
        "Pestov relative residual {:.3e} on {}x{}",
        pestov.relative_residual, cfg.grid.nx, cfg.grid.n_theta
    );
    let body = PestovBody {
        grid: cfg.grid,
        section_degree: cfg.section.degree(),
        commutators,
        pestov,
        refinement,
    };
    write_report(&mut *common.sink()?, &cfg, "pestov", body)
}

fn fourier(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let e = cfg.build()?;
    let d = e.conn.rank();
    let grid = SphereBundleGrid::new(&e.model, cfg.grid)?;
    let u = cfg.section.sample(&grid, d)?;
    let xu = SphereOps::new(&grid, &e.conn).x(&u);
    let (eu, ex) = (mode_energies(&u, &grid), mode_energies(&xu, &grid));
    let mut w = common.sink()?;
    writeln!(w, "# ahx {VERSION} fingerprint {}", cfg.fingerprint())?;
    writeln!(w, "m,energy_u,energy_xu")?;
    for (m, (a, b)) in eu.iter().zip(&ex).enumerate() {
        writeln!(w, "{m},{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}

fn reconstruct(common: &Common, data: Option<&Path>, basis: Option<&Path>) -> Result<()> {
    let mut cfg = common.load()?;
    if let Some(p) = basis {
        cfg.basis = ahx::config::load_basis(p)?;
    }
    let e = cfg.build()?;
    if cfg.basis.rank != e.conn.rank() {
        return Err(Error::Config(format!(
            "basis.rank = {} does not match connection.rank = {}",
            cfg.basis.rank,
            e.conn.rank()
        )));
    }
    let param = cfg.build_basis()?;
    let ds = match data {
        Some(p) => {
            let ds = read_dataset(p)?;
            if !ds.fingerprint.is_empty() && ds.fingerprint != e.geometry_fingerprint {
                return Err(Error::DatasetMismatch(format!(
                    "{} was computed for geometry {}, the config describes {}",
                    p.display(),
                    ds.fingerprint,
                    e.geometry_fingerprint
                )));
            }
            ds
        }
        None => dataset(&cfg, &e, false)?,
    };
    let result = reconstruct_higgs(
        &ds,
        &e.model,
        &e.conn,
        &param,
        &cfg.reconstruction,
        &e.transport,
        e.truth.as_deref(),
    );
    let (report, err): (ReconstructionReport, Option<Error>) = match result {
        Ok(r) => (r, None),
        Err(Error::Stagnation { iterations, report }) => {
            let r = (*report).clone();
            (r, Some(Error::Stagnation { iterations, report }))
        }
        Err(other) => return Err(other),
    };
    match report.coefficient_error {
        Some(err) => println!("{} iterations, relative coefficient error {err:.3e}", report.iterations),
        None => println!(
            "{} iterations, data misfit {:.3e}",
            report.iterations, report.data_misfit
        ),
    }
    write_report(&mut *common.sink()?, &cfg, "reconstruct", &report)?;
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct CurvatureBody {
    grid_side: usize,
    rho_min: f64,
    max_sectional_curvature: f64,
    ckt: ahx::bundle::CktReport,
}

fn curvature(common: &Common, n: usize, report: Option<&Path>) -> Result<()> {
    let cfg = common.load()?;
    if n == 0 {
        return Err(Error::Validation("--n must be positive".into()));
    }
    let e = cfg.build()?;
    let ig = InteriorGrid::new(n, InteriorGrid::default().rho_min);
    let mut w = common.sink()?;
    writeln!(w, "# ahx {VERSION} fingerprint {}", cfg.fingerprint())?;
    writeln!(w, "x,y,rho,sectional_curvature,bundle_curvature_norm")?;
    let mut kmax = f64::NEG_INFINITY;
    for x in ig.points() {
        let k = e.model.sectional_curvature(x)?;
        kmax = kmax.max(k);
        let f = (-2.0 * e.model.lambda_jet(x).value).exp() * linalg::op_norm(&curvature_at(&e.conn, x));
        writeln!(w, "{},{},{},{k},{f}", x[0], x[1], e.model.rho_at(x))?;
    }
    w.flush()?;
    let ckt = ckt_condition_check(&e.conn, &e.model, &ig);
    println!("max curvature {kmax:.6}, CKT condition satisfied: {}", ckt.satisfied);
    if let Some(p) = report {
        let body = CurvatureBody {
            grid_side: n,
            rho_min: ig.rho_min,
            max_sectional_curvature: kmax,
            ckt,
        };
        write_report(&mut *open_sink(Some(p))?, &cfg, "curvature", body)?;
    }
    Ok(())
}
