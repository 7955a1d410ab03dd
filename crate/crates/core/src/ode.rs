//! Explicit Dormand–Prince 5(4) integrator with step-size control, terminal
//! events and dense sampling at requested times.
//!
//! Event location and sampling both re-take a single step of reduced size
//! from the last accepted state. A reduced step is at least as accurate as
//! the accepted one, so no separate interpolant is needed.

use std::fmt;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
// fifth-order weights, also the last stage row (FSAL)
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Nominal order of the propagated (fifth-order) solution.
pub const ORDER: u32 = 5;

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

impl<F> OdeSystem for (usize, F)
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.0
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.1)(t, y, dy)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub atol: f64,
    pub rtol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Disables step control and uses this constant step instead.
    pub fixed_step: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-10,
            h_init: 1e-2,
            h_max: 0.5,
            max_steps: 200_000,
            fixed_step: None,
        }
    }
}

/// Where integration ends.
pub enum Stop<'a> {
    /// Integrate up to this time (direction inferred from the start time).
    At(f64),
    /// Integrate in `direction` (±1) until the event function, positive at
    /// the start, drops to zero.
    Event {
        direction: f64,
        g: &'a dyn Fn(f64, &[f64]) -> f64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Solution {
    /// Accepted step times, starting with the initial time.
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// States at the requested sample times, in request order.
    pub samples: Vec<(f64, Vec<f64>)>,
    pub steps: usize,
    pub rejected: usize,
}

impl Solution {
    pub fn last(&self) -> (f64, &[f64]) {
        (*self.t.last().unwrap(), self.y.last().unwrap())
    }
}

#[derive(Debug, Clone)]
pub enum OdeFailure {
    StepBudget(Solution),
    StepUnderflow(Solution),
    NonFinite(Solution),
}

impl fmt::Display for OdeFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OdeFailure::StepBudget(s) => write!(f, "step budget exhausted after {} steps", s.steps),
            OdeFailure::StepUnderflow(s) => write!(f, "step size underflow at t = {}", s.last().0),
            OdeFailure::NonFinite(s) => write!(f, "non-finite state at t = {}", s.last().0),
        }
    }
}

struct Workspace {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

/// One Dormand–Prince step from `(t, y)` with `k[0] = f(t, y)` already set.
/// Writes the fifth-order state into `out` and returns the scaled error
/// norm. On return `k[6]` holds `f(t + h, out)`.
fn step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    h: f64,
    ws: &mut Workspace,
    out: &mut [f64],
    opts: &OdeOptions,
) -> f64 {
    let n = y.len();
    let rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
    for (s, row) in rows.iter().enumerate() {
        let stage = s + 1;
        for i in 0..n {
            let mut acc = 0.0;
            for (j, a) in row.iter().enumerate() {
                acc += a * ws.k[j][i];
            }
            ws.tmp[i] = y[i] + h * acc;
        }
        let (head, tail) = ws.k.split_at_mut(stage);
        let _ = head;
        sys.rhs(t + C[stage] * h, &ws.tmp, &mut tail[0]);
    }
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..6 {
            acc += B[j] * ws.k[j][i];
        }
        out[i] = y[i] + h * acc;
    }
    {
        let (head, tail) = ws.k.split_at_mut(6);
        let _ = head;
        sys.rhs(t + h, out, &mut tail[0]);
    }
    let mut err = 0.0;
    for i in 0..n {
        let mut e = 0.0;
        for j in 0..7 {
            e += (B[j] - B4[j]) * ws.k[j][i];
        }
        e *= h;
        let sc = opts.atol + opts.rtol * y[i].abs().max(out[i].abs());
        err += (e / sc) * (e / sc);
    }
    (err / n as f64).sqrt()
}

/// State after a single step of size `h` from `(t, y)`; `k1 = f(t, y)`.
fn single_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], k1: &[f64], h: f64, opts: &OdeOptions) -> Vec<f64> {
    let mut ws = Workspace::new(y.len());
    ws.k[0].copy_from_slice(k1);
    let mut out = vec![0.0; y.len()];
    step(sys, t, y, h, &mut ws, &mut out, opts);
    out
}

/// Integrates `sys` from `(t0, y0)`.
///
/// `sample_times` are reported in `Solution::samples` when they fall inside
/// the integration span; `record` keeps every accepted step.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    stop: Stop<'_>,
    opts: &OdeOptions,
    sample_times: &[f64],
    record: bool,
) -> Result<Solution, OdeFailure> {
    let n = sys.dim();
    assert_eq!(n, y0.len(), "state dimension mismatch");
    let (dir, t_end) = match &stop {
        Stop::At(te) => ((te - t0).signum(), Some(*te)),
        Stop::Event { direction, .. } => (direction.signum(), None),
    };
    let mut sol = Solution {
        t: vec![t0],
        y: vec![y0.to_vec()],
        ..Default::default()
    };
    if dir == 0.0 {
        return Ok(sol);
    }
    let mut pending: Vec<(usize, f64)> = sample_times
        .iter()
        .cloned()
        .enumerate()
        .filter(|(_, s)| (s - t0) * dir >= 0.0)
        .collect();
    pending.sort_by(|a, b| (a.1 * dir).total_cmp(&(b.1 * dir)));
    let mut found: Vec<(usize, f64, Vec<f64>)> = Vec::new();

    let mut ws = Workspace::new(n);
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    sys.rhs(t, &y, &mut ws.k[0]);
    let mut h = opts.fixed_step.unwrap_or(opts.h_init).abs().min(opts.h_max) * dir;
    let mut last_y = y.clone();
    let mut last_t = t;

    loop {
        if sol.steps >= opts.max_steps {
            if !record {
                sol.t.push(t);
                sol.y.push(y.clone());
            }
            return Err(OdeFailure::StepBudget(sol));
        }
        let mut finishing = false;
        if let Some(te) = t_end {
            if (t + h - te) * dir >= 0.0 {
                h = te - t;
                finishing = true;
            }
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) && !finishing {
            return Err(OdeFailure::StepUnderflow(sol));
        }
        let k1 = ws.k[0].clone();
        let err = step(sys, t, &y, h, &mut ws, &mut y_new, opts);
        if !y_new.iter().all(|v| v.is_finite()) || !err.is_finite() {
            if opts.fixed_step.is_some() || h.abs() < 1e-12 {
                return Err(OdeFailure::NonFinite(sol));
            }
            h *= 0.25;
            sol.rejected += 1;
            continue;
        }
        if opts.fixed_step.is_none() && err > 1.0 {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h *= fac;
            sol.rejected += 1;
            continue;
        }
        sol.steps += 1;
        let t_new = t + h;

        // event detection on the accepted step
        if let Stop::Event { g, .. } = &stop {
            if g(t_new, &y_new) <= 0.0 {
                let (ts, ys) = locate_event(sys, t, &y, &k1, h, *g, opts);
                collect_samples(sys, t, &y, &k1, ts, opts, &mut pending, &mut found);
                sol.t.push(ts);
                sol.y.push(ys);
                finish_samples(&mut sol, found);
                return Ok(sol);
            }
        }
        collect_samples(sys, t, &y, &k1, t_new, opts, &mut pending, &mut found);

        t = t_new;
        std::mem::swap(&mut y, &mut y_new);
        let (head, tail) = ws.k.split_at_mut(6);
        head[0].copy_from_slice(&tail[0]);
        if record {
            sol.t.push(t);
            sol.y.push(y.clone());
        } else {
            last_t = t;
            last_y.copy_from_slice(&y);
        }
        if finishing {
            if !record {
                sol.t.push(last_t);
                sol.y.push(last_y);
            }
            finish_samples(&mut sol, found);
            return Ok(sol);
        }
        if opts.fixed_step.is_none() {
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h * fac).abs().min(opts.h_max) * dir;
        }
    }
}

/// Takes one fifth-order step per interval of `mesh`, without error
/// control. Returns the state at the last mesh point.
pub fn integrate_mesh<S: OdeSystem + ?Sized>(sys: &S, mesh: &[f64], y0: &[f64]) -> Vec<f64> {
    let opts = OdeOptions::default();
    let n = y0.len();
    let mut ws = Workspace::new(n);
    let mut y = y0.to_vec();
    let mut out = vec![0.0; n];
    if mesh.is_empty() {
        return y;
    }
    sys.rhs(mesh[0], &y, &mut ws.k[0]);
    for w in mesh.windows(2) {
        step(sys, w[0], &y, w[1] - w[0], &mut ws, &mut out, &opts);
        std::mem::swap(&mut y, &mut out);
        let (head, tail) = ws.k.split_at_mut(6);
        head[0].copy_from_slice(&tail[0]);
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn collect_samples<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    k1: &[f64],
    t_new: f64,
    opts: &OdeOptions,
    pending: &mut Vec<(usize, f64)>,
    found: &mut Vec<(usize, f64, Vec<f64>)>,
) {
    let dir = (t_new - t).signum();
    while let Some(&(idx, ts)) = pending.first() {
        if (ts - t_new) * dir > 0.0 {
            break;
        }
        let ys = if ts == t {
            y.to_vec()
        } else {
            single_step(sys, t, y, k1, ts - t, opts)
        };
        found.push((idx, ts, ys));
        pending.remove(0);
    }
}

fn finish_samples(sol: &mut Solution, mut found: Vec<(usize, f64, Vec<f64>)>) {
    found.sort_by_key(|f| f.0);
    sol.samples = found.into_iter().map(|(_, t, y)| (t, y)).collect();
}

/// Illinois-style regula falsi on the sub-step length.
fn locate_event<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    k1: &[f64],
    h: f64,
    g: &dyn Fn(f64, &[f64]) -> f64,
    opts: &OdeOptions,
) -> (f64, Vec<f64>) {
    let mut a = 0.0;
    let mut ga = g(t, y);
    let mut b = h;
    let mut yb = single_step(sys, t, y, k1, b, opts);
    let mut gb = g(t + b, &yb);
    if ga <= 0.0 {
        return (t, y.to_vec());
    }
    let mut side = 0i32;
    let mut best = (t + b, yb.clone());
    for _ in 0..80 {
        let s = (a * gb - b * ga) / (gb - ga);
        let ys = single_step(sys, t, y, k1, s, opts);
        let gs = g(t + s, &ys);
        best = (t + s, ys.clone());
        if gs.abs() <= 1e-15 * (ga.abs() + gb.abs()) || (b - a).abs() < 1e-15 * t.abs().max(1.0) {
            break;
        }
        if gs > 0.0 {
            a = s;
            ga = gs;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = s;
            gb = gs;
            yb = ys;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
    }
    let _ = yb;
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic() -> (usize, impl Fn(f64, &[f64], &mut [f64])) {
        (2, |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        })
    }

    #[test]
    fn harmonic_oscillator_to_tolerance() {
        let sys = harmonic();
        let sol = integrate(
            &sys,
            0.0,
            &[1.0, 0.0],
            Stop::At(10.0),
            &OdeOptions::default(),
            &[],
            false,
        )
        .unwrap();
        let (t, y) = sol.last();
        assert_eq!(t, 10.0);
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn backward_integration() {
        let sys = harmonic();
        let sol = integrate(
            &sys,
            0.0,
            &[1.0, 0.0],
            Stop::At(-3.0),
            &OdeOptions::default(),
            &[],
            true,
        )
        .unwrap();
        let (_, y) = sol.last();
        assert!((y[0] - 3f64.cos()).abs() < 1e-9);
        assert!(sol.t.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn event_located_precisely() {
        let sys = harmonic();
        let g = |_t: f64, y: &[f64]| y[0];
        let sol = integrate(
            &sys,
            0.0,
            &[1.0, 0.0],
            Stop::Event { direction: 1.0, g: &g },
            &OdeOptions::default(),
            &[],
            false,
        )
        .unwrap();
        let (t, y) = sol.last();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-9, "t = {t}");
        assert!(y[0].abs() < 1e-12);
    }

    #[test]
    fn samples_at_requested_times() {
        let sys = harmonic();
        let times = [2.5, 0.3, 7.0, 11.0];
        let sol = integrate(
            &sys,
            0.0,
            &[1.0, 0.0],
            Stop::At(10.0),
            &OdeOptions::default(),
            &times,
            false,
        )
        .unwrap();
        assert_eq!(sol.samples.len(), 3);
        for (t, y) in &sol.samples {
            assert!((y[0] - t.cos()).abs() < 1e-9);
        }
        assert_eq!(sol.samples[0].0, 2.5);
    }

    #[test]
    fn fixed_step_order_five() {
        let sys = harmonic();
        let err = |h: f64| {
            let opts = OdeOptions {
                fixed_step: Some(h),
                h_max: 1.0,
                ..Default::default()
            };
            let sol = integrate(&sys, 0.0, &[1.0, 0.0], Stop::At(4.0), &opts, &[], false).unwrap();
            (sol.last().1[0] - 4f64.cos()).abs()
        };
        let ratio = err(0.2) / err(0.1);
        assert!(ratio > 16.0 && ratio < 64.0, "ratio {ratio}");
    }

    #[test]
    fn mesh_replay_reproduces_adaptive_run() {
        let sys = harmonic();
        let sol = integrate(&sys, 0.0, &[1.0, 0.0], Stop::At(5.0), &OdeOptions::default(), &[], true).unwrap();
        let y = integrate_mesh(&sys, &sol.t, &[1.0, 0.0]);
        for (a, b) in y.iter().zip(sol.last().1) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn step_budget_reports_partial() {
        let sys = harmonic();
        let opts = OdeOptions {
            max_steps: 5,
            ..Default::default()
        };
        match integrate(&sys, 0.0, &[1.0, 0.0], Stop::At(100.0), &opts, &[], true) {
            Err(OdeFailure::StepBudget(sol)) => assert!(sol.t.len() > 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
