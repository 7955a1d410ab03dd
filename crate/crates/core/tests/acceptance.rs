//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Numeric arguments select criteria, e.g.
//! `cargo test --test acceptance -- 5 6`.

use std::f64::consts::PI;
use std::time::Instant;

use ahx::bundle::{gauge_transform, ConnectionField, GaugeField, HiggsField, Profile, Term};
use ahx::config::{random_direction, ExperimentConfig};
use ahx::geometry::{
    geodesic_between_boundary_angles, integrate_for, AHModel, Bump, IntegratorConfig, ModelLimits, PhasePoint,
};
use ahx::linalg::{self, CMat};
use ahx::reconstruct::{forward_map, reconstruct_higgs, HiggsParameterization, ReconstructionConfig};
use ahx::spherebundle::{
    self, d_m, fourier_modes, pestov_refinement, vertical_derivative, vertical_divergence, vertical_laplacian,
    GridSpec, NSectionField, SectionField, SectionSpec, SphereBundleGrid, SphereOps,
};
use ahx::transport::TransportConfig;
use ahx::xray::{
    compare_datasets, compute_scattering_data, crossing_family, gauge_candidate, gauge_degree_zero_check, FanSpec,
    Pair, ScatteringDataset,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String), ahx::Error>;

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

fn c1_geometry_oracle() -> Check {
    let m = AHModel::poincare();
    let cfg = IntegratorConfig::default();
    let mut err: f64 = 0.0;
    for (theta, sign) in [(0.0, 1.0), (PI, -1.0)] {
        let start = PhasePoint::from_angle(&m, [0.0, 0.0], theta)?;
        let path = integrate_for(&m, &start, 6.0, &cfg)?;
        for s in &path {
            let e = (s.x[0] - sign * (s.t / 2.0).tanh()).abs().max(s.x[1].abs());
            err = err.max(e);
        }
        let end = path.last().unwrap();
        if (end.t - 6.0).abs() > 1e-12 {
            return Ok((false, format!("integration stopped at t = {}", end.t)));
        }
    }
    Ok((err < 1e-6, format!("sup error {err:.2e} over t in [-6, 6] (tol 1e-6)")))
}

fn c2_curvature() -> Check {
    let m = AHModel::poincare();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut err: f64 = 0.0;
    for _ in 0..1000 {
        let r = 0.999 * rng.random::<f64>().sqrt();
        let a = rng.random::<f64>() * 2.0 * PI;
        let x = [r * a.cos(), r * a.sin()];
        // K = −e^{−2λ}Δλ from the analytic jet, and the model's own value.
        let j = m.lambda_jet(x);
        let k_jet = -(-2.0 * j.value).exp() * (j.hess[0][0] + j.hess[1][1]);
        let k = m.sectional_curvature(x)?;
        err = err.max((k + 1.0).abs()).max((k_jet + 1.0).abs());
    }
    Ok((err < 1e-9, format!("max |K + 1| = {err:.2e} at 1000 points (tol 1e-9)")))
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn c3_scalar_reduction() -> Check {
    let m = AHModel::poincare();
    let higgs = HiggsField::separable(
        1,
        2,
        vec![
            Term {
                s: CMat::from_element(1, 1, linalg::c(0.0, 0.8)),
                profile: Profile::Gaussian {
                    center: [-0.1, 0.2],
                    width: 0.4,
                },
            },
            Term {
                s: CMat::from_element(1, 1, linalg::c(0.0, -0.5)),
                profile: Profile::Constant { value: 1.0 },
            },
        ],
    )?;
    let cfg = TransportConfig::default();
    let fan = FanSpec::uniform_pairs(100);
    let ds = compute_scattering_data(&m, &ConnectionField::trivial(1), &higgs, &fan, &cfg, "")?;
    if !ds.failures.is_empty() {
        return Ok((false, format!("{} failed geodesics", ds.failures.len())));
    }
    let mut err: f64 = 0.0;
    for k in 0..fan.len() {
        let p = fan.path(k, &m, &cfg)?;
        let alpha = p.first().x[1].atan2(p.first().x[0]);
        let rec = ds
            .records
            .iter()
            .min_by(|a, b| {
                let da = (a.entry.alpha - alpha)
                    .rem_euclid(2.0 * PI)
                    .min((alpha - a.entry.alpha).rem_euclid(2.0 * PI));
                let db = (b.entry.alpha - alpha)
                    .rem_euclid(2.0 * PI)
                    .min((alpha - b.entry.alpha).rem_euclid(2.0 * PI));
                da.total_cmp(&db)
            })
            .unwrap();
        // Piecewise-linear interpolation of the path samples is too coarse,
        // so the oracle re-evaluates the chord in closed form.
        let ahx::geometry::PathKind::Chord { psi, s } = p.kind else {
            return Ok((false, "disk fan produced a non-chord path".into()));
        };
        let f = |t: f64| higgs.value(ahx::geometry::chord_state(psi, s, t).0)[(0, 0)].im;
        let phase = simpson(f, p.first().t, p.last().t, 40_000);
        let expect = Complex64::from_polar(1.0, -phase);
        err = err.max((rec.matrix[(0, 0)] - expect).norm());
    }
    Ok((
        err < 1e-8,
        format!("max |U - exp(-i∫φ)| = {err:.2e} over 100 geodesics (tol 1e-8)"),
    ))
}

fn c4_unitarity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = AHModel::poincare();
    let conn = ConnectionField::random(&mut rng, 2, 3, 2, 1.0);
    let higgs = HiggsField::random(&mut rng, 2, 4, 3, 1.0);
    let cfg = TransportConfig::default();
    let ds = compute_scattering_data(&m, &conn, &higgs, &FanSpec::uniform_pairs(200), &cfg, "")?;
    let worst = ds.records.iter().map(|r| r.unitarity_defect).fold(0.0, f64::max);
    let ok = ds.failures.is_empty() && ds.records.len() == 200 && worst < 1e-7;
    Ok((
        ok,
        format!(
            "max unitarity defect {worst:.2e} over {} records (tol 1e-7)",
            ds.records.len()
        ),
    ))
}

/// Random pair and its transform by `Q = exp(ρ⁴S)`, `d = 2`.
struct GaugePair {
    conn: ConnectionField,
    higgs: HiggsField,
    conn_b: ConnectionField,
    higgs_b: HiggsField,
    q: GaugeField,
}

fn gauge_pair() -> GaugePair {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let conn = ConnectionField::random(&mut rng, 2, 3, 2, 1.0);
    let higgs = HiggsField::random(&mut rng, 2, 4, 2, 1.0);
    let s = linalg::random_skew_hermitian(&mut rng, 2, 2.0);
    let q = GaugeField::exponential(4, s, Profile::Constant { value: 1.0 }).unwrap();
    let (conn_b, higgs_b) = gauge_transform(&conn, &higgs, &q).unwrap();
    GaugePair {
        conn,
        higgs,
        conn_b,
        higgs_b,
        q,
    }
}

fn c5_gauge_equivalence() -> Check {
    let m = AHModel::poincare();
    let g = gauge_pair();
    let data = |fan: &FanSpec, cfg: &TransportConfig| -> Result<(ScatteringDataset, ScatteringDataset), ahx::Error> {
        Ok((
            compute_scattering_data(&m, &g.conn, &g.higgs, fan, cfg, "")?,
            compute_scattering_data(&m, &g.conn_b, &g.higgs_b, fan, cfg, "")?,
        ))
    };
    let cfg = TransportConfig::default();
    let (a, b) = data(&FanSpec::uniform_pairs(200), &cfg)?;
    let dist = compare_datasets(&a, &b)?.max_frobenius;
    let ok_dist = a.records.len() == 200 && dist < 1e-6;
    // Truncation at ρ_cut leaves ‖Q − I‖ ≈ ρ_cut⁴‖S‖ at both ends. At
    // ρ_cut = 1e-6 that is far below the solver tolerance, so the rate is
    // read off at larger cuts with tighter tolerances.
    let tight = TransportConfig {
        atol: 1e-14,
        rtol: 1e-14,
        ..cfg
    };
    let fan = FanSpec::uniform_pairs(20);
    let mut dists = Vec::new();
    for rc in [1e-2, 5e-3, 2.5e-3] {
        let (a, b) = data(&fan, &TransportConfig { rho_cut: rc, ..tight })?;
        dists.push(compare_datasets(&a, &b)?.max_frobenius);
    }
    let slopes: Vec<f64> = dists.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let ok_rate = slopes.iter().all(|s| (s - 4.0).abs() < 0.5);
    Ok((
        ok_dist && ok_rate,
        format!(
            "max distance {dist:.2e} at rho_cut 1e-6 (tol 1e-6); distances [{}] at rho_cut 1e-2/5e-3/2.5e-3, \
             halving slopes [{}] (expected decay exponent 4)",
            sci(&dists),
            fixed(&slopes)
        ),
    ))
}

fn c6_gauge_recovery() -> Check {
    let m = AHModel::poincare();
    let g = gauge_pair();
    let cfg = TransportConfig::default();
    let a = Pair {
        conn: &g.conn,
        higgs: &g.higgs,
    };
    let b = Pair {
        conn: &g.conn_b,
        higgs: &g.higgs_b,
    };
    let mut q_err: f64 = 0.0;
    let mut q_dev: f64 = 0.0;
    for k in 0..8 {
        let ain = 0.4 + 0.77 * k as f64;
        let path = geodesic_between_boundary_angles(&m, ain, ain + 1.2 + 0.3 * k as f64, cfg.rho_cut)?;
        let s = gauge_candidate(&m, a, b, &path, &[-2.0, -1.0, 0.0, 0.5, 1.5], &cfg)?;
        for smp in &s {
            let qs = g.q.value(smp.x);
            q_err = q_err.max(linalg::frobenius_distance(&smp.q, &qs));
            q_dev = q_dev.max(linalg::frobenius_distance(&qs, &linalg::identity(2)));
        }
    }
    let centers = [[0.05, 0.05], [-0.35, 0.25], [0.25, -0.15], [-0.15, -0.45]];
    let cr = crossing_family(&m, a, b, &centers, 6, 1e-3, &cfg)?;
    let rep = gauge_degree_zero_check(&m, a, b, &cr, 0.1, 1e-4)?;
    let ok = q_err < 1e-5
        && rep.cells.len() == centers.len()
        && rep.max_theta_variation < 1e-4
        && rep.max_higgs_residual < 1e-4
        && rep.max_transport_residual < 1e-4;
    Ok((
        ok,
        format!(
            "max |Q - Q*| {q_err:.2e} (tol 1e-5, |Q* - I| up to {q_dev:.2}); over {} cells: theta variation {:.2e}, \
             Higgs residual {:.2e}, transport residual {:.2e} (tol 1e-4)",
            rep.cells.len(),
            rep.max_theta_variation,
            rep.max_higgs_residual,
            rep.max_transport_residual
        ),
    ))
}

fn c7_sphere_calculus() -> Check {
    let m = perturbed();
    let g = SphereBundleGrid::new(&m, GridSpec::new(64, 64))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut u = SectionField::zeros(&g, 2);
    let mut parts = Vec::new();
    for k in 0..=6 {
        let p = SectionSpec::random_mode(&mut rng, 2, k).sample(&g, 2)?;
        u = u.axpy(1.0, &p);
        parts.push(p);
    }
    let w: NSectionField = SectionSpec::random_mode(&mut rng, 2, 3)
        .sample(&g, 2)?
        .axpy(1.0, &SectionSpec::random_mode(&mut rng, 2, 5).sample(&g, 2)?)
        .retag();
    let adj = (vertical_derivative(&u, &g).inner(&w, &g) + u.inner(&vertical_divergence(&w, &g), &g)).norm();
    let scale = u.norm(&g) * w.norm(&g);
    let mut eig: f64 = 0.0;
    for (k, p) in parts.iter().enumerate() {
        let lp = vertical_laplacian(p, &g);
        eig = eig.max(lp.axpy(-((k * k) as f64), p).norm(&g) / p.norm(&g));
    }
    let modes = fourier_modes(&u, &g, 6)?;
    let un = u.norm_sq(&g);
    let mut orth: f64 = 0.0;
    for i in 0..modes.len() {
        for j in 0..i {
            orth = orth.max(modes[i].inner(&modes[j], &g).norm() / un);
        }
    }
    let d2 = d_m(2);
    let d2_err = (d2 - 28.0 / 27.0).abs();
    let ok = adj < 1e-10 && eig < 1e-12 && orth < 1e-14 && d2_err < 1e-15;
    Ok((
        ok,
        format!(
            "adjointness {adj:.2e} (tol 1e-10, |u||w| = {scale:.2}); max |Δu - m²u|/|u| {eig:.2e} for m <= 6; \
             mode orthogonality {orth:.2e}; d_2 = {d2:.9} on 64x64x64"
        ),
    ))
}

/// Residuals at roundoff level cannot shrink further and count as converged.
const ROUNDOFF_FLOOR: f64 = 1e-11;

fn commutator_rows(
    m: &AHModel,
    conn: &ConnectionField,
    spec: &SectionSpec,
    start: GridSpec,
) -> Result<[[f64; 4]; 2], ahx::Error> {
    let mut rows = [[0.0; 4]; 2];
    for (row, gs) in rows.iter_mut().zip([start, start.refine_x()]) {
        let g = SphereBundleGrid::new(m, gs)?;
        let u = spec.sample(&g, 2)?;
        *row = spherebundle::commutator_residuals(conn, &g, &[u])?.as_array();
    }
    Ok(rows)
}

fn c8_commutators() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let conn = ConnectionField::random(&mut rng, 2, 3, 2, 0.5);
    let spec = SectionSpec::reference(1);
    let start = GridSpec::default();
    let [c, f] = commutator_rows(&AHModel::poincare(), &conn, &spec, start)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for i in 0..4 {
        let shrinks = (c[i] < ROUNDOFF_FLOOR && f[i] < ROUNDOFF_FLOOR) || c[i] / f[i] >= 8.0;
        ok &= c[i] < 1e-4 && shrinks;
        parts.push(format!("r{} {:.2e} -> {:.2e} (x{:.1})", i + 1, c[i], f[i], c[i] / f[i]));
    }
    // The bump of the perturbed model is not yet resolved at 64²; its
    // residuals are shown for reference and do not gate the criterion.
    let [pc, pf] = commutator_rows(&perturbed(), &conn, &spec, start)?;
    Ok((
        ok,
        format!(
            "disk, random connection: {} on {}x{} -> {}x{} (tol 1e-4, shrink >= 8 or both below {ROUNDOFF_FLOOR:.0e}); \
             perturbed model, not gated: r2 {:.2e} -> {:.2e}, r3 {:.2e} -> {:.2e}",
            parts.join(", "),
            start.nx,
            start.n_theta,
            start.refine_x().nx,
            start.n_theta,
            pc[1],
            pf[1],
            pc[2],
            pf[2]
        ),
    ))
}

fn c9_pestov() -> Check {
    let m = AHModel::poincare();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let conns = [
        ("trivial", ConnectionField::trivial(2)),
        ("random", ConnectionField::random(&mut rng, 2, 3, 2, 0.3)),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, conn) in &conns {
        for deg in 0..=2 {
            let spec = SectionSpec::reference(deg);
            let rows = pestov_refinement(&m, conn, &spec, GridSpec::default(), 2)?;
            let (r0, r1) = (rows[0].relative_residual, rows[1].relative_residual);
            ok &= r0 < 1e-2 && (r1 < r0 || (r0 < ROUNDOFF_FLOOR && r1 < ROUNDOFF_FLOOR));
            parts.push(format!("{name}/deg{deg} {r0:.1e}->{r1:.1e}"));
        }
    }
    Ok((
        ok,
        format!(
            "{} (64x64 -> 127x128, tol 1e-2 and decreasing unless both below {ROUNDOFF_FLOOR:.0e})",
            parts.join(", ")
        ),
    ))
}

fn c10_x_split() -> Check {
    let m = perturbed();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let conn = ConnectionField::random(&mut rng, 2, 3, 2, 0.5);
    let g = SphereBundleGrid::new(&m, GridSpec::default())?;
    let ops = SphereOps::new(&g, &conn);
    let mut worst: f64 = 0.0;
    for k in 0..=6 {
        let u = SectionSpec::random_mode(&mut rng, 2, k as i32).sample(&g, 2)?;
        worst = worst.max(ops.x_split(&u, k)?.leak);
    }
    Ok((
        worst < 1e-6,
        format!("max energy fraction outside m±1 {worst:.2e} for m <= 6 (tol 1e-6)"),
    ))
}

fn reconstruction_problem() -> (AHModel, HiggsParameterization, Vec<f64>, FanSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = HiggsParameterization::random(&mut rng, 2, 4, 6).unwrap();
    let truth = random_direction(&mut rng, 6, 1.0);
    (AHModel::poincare(), p, truth, FanSpec::uniform_pairs(60))
}

fn c11_reconstruction() -> Check {
    let (m, p, truth, fan) = reconstruction_problem();
    let cfg = TransportConfig::default();
    let t = ConnectionField::trivial(2);
    let data = forward_map(&m, &t, &p, &truth, &fan, &cfg)?;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let start = Instant::now();
        let rep =
            pool.install(|| reconstruct_higgs(&data, &m, &t, &p, &ReconstructionConfig::default(), &cfg, Some(&truth)));
        (rep, start.elapsed().as_secs_f64())
    };
    let (rep, serial) = run(1);
    let rep = rep?;
    let err = rep.coefficient_error.unwrap();
    let mut ok = err < 0.05 && rep.iterations <= 30 && serial < 600.0;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let parallel = if cores >= 8 {
        let (_, t8) = run(8);
        ok &= t8 < 180.0;
        format!("{t8:.1} s with 8 threads (limit 180 s)")
    } else {
        format!("8-thread timing not measured, {cores} core(s) available")
    };
    Ok((
        ok,
        format!(
            "relative coefficient error {err:.2e} (tol 5e-2) after {} iterations (limit 30); {serial:.1} s single-threaded \
             (limit 600 s); {parallel}",
            rep.iterations
        ),
    ))
}

const DETERMINISM_CONFIG: &str = r#"
seed = 12

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
count = 24

[noise]
sigma = 1e-4
"#;

fn c12_determinism() -> Check {
    let cfg = ExperimentConfig::from_toml(DETERMINISM_CONFIG)?;
    let dataset_bytes = |threads: usize| -> Result<Vec<u8>, ahx::Error> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let e = cfg.build()?;
            let mut ds = compute_scattering_data(
                &e.model,
                &e.conn,
                &e.higgs,
                &e.fan,
                &e.transport,
                &e.geometry_fingerprint,
            )?;
            ds.add_gaussian_noise(&mut cfg.noise_rng(), cfg.noise.sigma)?;
            let mut buf = Vec::new();
            ds.write_jsonl(&mut buf)?;
            Ok(buf)
        })
    };
    let a = dataset_bytes(1)?;
    let b = dataset_bytes(1)?;
    let c = dataset_bytes(3)?;
    let recon_cfg =
        ExperimentConfig::from_toml("seed = 13\n[higgs]\ntype = \"basis\"\n[basis]\ncount = 3\n[fan]\ncount = 16\n")?;
    let report_bytes = || -> Result<Vec<u8>, ahx::Error> {
        let e = recon_cfg.build()?;
        let p = e.basis.clone().unwrap();
        let data = compute_scattering_data(&e.model, &e.conn, &e.higgs, &e.fan, &e.transport, "")?;
        let rep = reconstruct_higgs(
            &data,
            &e.model,
            &e.conn,
            &p,
            &recon_cfg.reconstruction,
            &e.transport,
            e.truth.as_deref(),
        )?;
        Ok(serde_json::to_vec_pretty(&rep)?)
    };
    let (ra, rb) = (report_bytes()?, report_bytes()?);
    let ok = a == b && a == c && ra == rb;
    Ok((
        ok,
        format!(
            "dataset {} bytes identical across runs: {}, across thread counts: {}; report {} bytes identical: {}",
            a.len(),
            a == b,
            a == c,
            ra.len(),
            ra == rb
        ),
    ))
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn fixed(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: f64,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "geometry oracle",
            limit: 1.0,
            run: c1_geometry_oracle,
        },
        Criterion {
            id: 2,
            name: "curvature",
            limit: 1.0,
            run: c2_curvature,
        },
        Criterion {
            id: 3,
            name: "scalar reduction",
            limit: 10.0,
            run: c3_scalar_reduction,
        },
        Criterion {
            id: 4,
            name: "unitarity",
            limit: 30.0,
            run: c4_unitarity,
        },
        Criterion {
            id: 5,
            name: "gauge equivalence",
            limit: 120.0,
            run: c5_gauge_equivalence,
        },
        Criterion {
            id: 6,
            name: "gauge recovery",
            limit: 120.0,
            run: c6_gauge_recovery,
        },
        Criterion {
            id: 7,
            name: "sphere-bundle calculus",
            limit: 30.0,
            run: c7_sphere_calculus,
        },
        Criterion {
            id: 8,
            name: "commutators",
            limit: 120.0,
            run: c8_commutators,
        },
        Criterion {
            id: 9,
            name: "Pestov identity",
            limit: 300.0,
            run: c9_pestov,
        },
        Criterion {
            id: 10,
            name: "X± leakage",
            limit: 60.0,
            run: c10_x_split,
        },
        Criterion {
            id: 11,
            name: "reconstruction closed loop",
            limit: 600.0,
            run: c11_reconstruction,
        },
        Criterion {
            id: 12,
            name: "determinism",
            limit: f64::INFINITY,
            run: c12_determinism,
        },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        ran += 1;
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => (ok && secs < c.limit, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit = if c.limit.is_finite() {
            format!(", limit {} s", c.limit)
        } else {
            String::new()
        };
        println!(
            "{} [{:>2}] {}: {detail} ({secs:.2} s{limit})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name
        );
        if !pass {
            failed += 1;
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
