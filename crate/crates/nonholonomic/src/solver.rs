//! Low-level ODE stepping: fixed-step RK4 and adaptive RKF45 with dense output.
//!
//! Callers hand in a flat state vector and get back samples at every accepted
//! step plus any explicitly requested output times. Requested times are hit by
//! stepping exactly onto them under RK4 and by fifth-order Hermite interpolation
//! under RKF45, so downstream comparisons never resample trajectories themselves.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Integration method and its tuning knobs.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Rk4 { step: f64 },
    Rkf45 { abs_tol: f64, rel_tol: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Rk4 { step: 1e-3 }
    }
}

/// Options for one integration run.
#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub method: Method,
    /// Extra output times, strictly increasing, inside [t0, t_end].
    pub t_eval: Option<Vec<f64>>,
    /// Hard cap on accepted plus rejected steps.
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            method: Method::default(),
            t_eval: None,
            max_steps: 20_000_000,
        }
    }
}

impl IntegrateOptions {
    pub fn rk4(step: f64) -> Self {
        IntegrateOptions {
            method: Method::Rk4 { step },
            ..Default::default()
        }
    }

    pub fn rkf45(abs_tol: f64, rel_tol: f64) -> Self {
        IntegrateOptions {
            method: Method::Rkf45 { abs_tol, rel_tol },
            ..Default::default()
        }
    }

    pub fn with_t_eval(mut self, t_eval: Vec<f64>) -> Self {
        self.t_eval = Some(t_eval);
        self
    }
}

/// Raw solution samples: times with flat state vectors.
#[derive(Debug, Clone)]
pub struct RawTrajectory {
    pub ts: Vec<f64>,
    pub ys: Vec<DVector<f64>>,
}

fn wrap_at<E: Into<Error>>(t: f64) -> impl FnOnce(E) -> Error {
    move |e| Error::Integration {
        t,
        source: Box::new(e.into()),
    }
}

fn rk4_step<F>(f: &F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, y).map_err(wrap_at(t))?;
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h))).map_err(wrap_at(t))?;
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h))).map_err(wrap_at(t))?;
    let k4 = f(t + h, &(y + &k3 * h)).map_err(wrap_at(t))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

// Fehlberg 4(5) tableau.
const A21: f64 = 1.0 / 4.0;
const A31: f64 = 3.0 / 32.0;
const A32: f64 = 9.0 / 32.0;
const A41: f64 = 1932.0 / 2197.0;
const A42: f64 = -7200.0 / 2197.0;
const A43: f64 = 7296.0 / 2197.0;
const A51: f64 = 439.0 / 216.0;
const A52: f64 = -8.0;
const A53: f64 = 3680.0 / 513.0;
const A54: f64 = -845.0 / 4104.0;
const A61: f64 = -8.0 / 27.0;
const A62: f64 = 2.0;
const A63: f64 = -3544.0 / 2565.0;
const A64: f64 = 1859.0 / 4104.0;
const A65: f64 = -11.0 / 40.0;
const C2: f64 = 1.0 / 4.0;
const C3: f64 = 3.0 / 8.0;
const C4: f64 = 12.0 / 13.0;
const C6: f64 = 1.0 / 2.0;
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];

struct Rkf45Step {
    /// Fifth-order solution, the one that is propagated.
    y5: DVector<f64>,
    /// Scaled error norm; accept when at most 1.
    err_norm: f64,
}

fn rkf45_step<F>(
    f: &F,
    t: f64,
    y: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Rkf45Step>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k2 = f(t + C2 * h, &(y + k1 * (A21 * h))).map_err(wrap_at(t))?;
    let k3 = f(t + C3 * h, &(y + (k1 * A31 + &k2 * A32) * h)).map_err(wrap_at(t))?;
    let k4 = f(t + C4 * h, &(y + (k1 * A41 + &k2 * A42 + &k3 * A43) * h)).map_err(wrap_at(t))?;
    let k5 = f(
        t + h,
        &(y + (k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h),
    )
    .map_err(wrap_at(t))?;
    let k6 = f(
        t + C6 * h,
        &(y + (k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h),
    )
    .map_err(wrap_at(t))?;

    let ks = [k1, &k2, &k3, &k4, &k5, &k6];
    let dim = y.len();
    let mut y5 = y.clone();
    let mut y4 = y.clone();
    for (i, k) in ks.iter().enumerate() {
        if B5[i] != 0.0 {
            y5 += *k * (B5[i] * h);
        }
        if B4[i] != 0.0 {
            y4 += *k * (B4[i] * h);
        }
    }
    let mut err_norm: f64 = 0.0;
    for i in 0..dim {
        let scale = abs_tol + rel_tol * y[i].abs().max(y5[i].abs());
        let e = (y5[i] - y4[i]).abs() / scale;
        err_norm = err_norm.max(e);
    }
    if !err_norm.is_finite() {
        err_norm = f64::INFINITY;
    }
    Ok(Rkf45Step { y5, err_norm })
}

/// Quintic Hermite interpolant through (t, y, y') at the span ends and midpoint.
struct HermiteSpan {
    z: [f64; 6],
    /// Newton coefficients for the divided-difference form.
    coeff: Vec<DVector<f64>>,
}

impl HermiteSpan {
    fn new(
        ts: [f64; 3],
        ys: [&DVector<f64>; 3],
        fs: [&DVector<f64>; 3],
    ) -> HermiteSpan {
        let z = [ts[0], ts[0], ts[1], ts[1], ts[2], ts[2]];
        let mut table: Vec<Vec<DVector<f64>>> = Vec::with_capacity(6);
        table.push(vec![
            ys[0].clone(),
            ys[0].clone(),
            ys[1].clone(),
            ys[1].clone(),
            ys[2].clone(),
            ys[2].clone(),
        ]);
        for order in 1..6 {
            let prev = &table[order - 1];
            let mut row = Vec::with_capacity(6 - order);
            for i in 0..(6 - order) {
                let dz = z[i + order] - z[i];
                if order == 1 && dz == 0.0 {
                    // repeated node: slot in the derivative
                    row.push(fs[i / 2].clone());
                } else {
                    row.push((&prev[i + 1] - &prev[i]) / dz);
                }
            }
            table.push(row);
        }
        let coeff = table.iter().map(|row| row[0].clone()).collect();
        HermiteSpan { z, coeff }
    }

    fn eval(&self, t: f64) -> DVector<f64> {
        let mut p = self.coeff[5].clone();
        for k in (0..5).rev() {
            p = p * (t - self.z[k]) + &self.coeff[k];
        }
        p
    }
}

fn validate_t_eval(t_eval: &Option<Vec<f64>>, t0: f64, t_end: f64) -> Result<Vec<f64>> {
    let Some(ts) = t_eval else {
        return Ok(Vec::new());
    };
    let mut prev = f64::NEG_INFINITY;
    for &t in ts {
        if !t.is_finite() || t < t0 - 1e-12 || t > t_end + 1e-12 * t_end.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "requested output time {t} outside [{t0}, {t_end}]"
            )));
        }
        if t <= prev {
            return Err(Error::InvalidInput(
                "requested output times must be strictly increasing".into(),
            ));
        }
        prev = t;
    }
    Ok(ts.clone())
}

/// Integrates y' = f(t, y) from (t0, y0) to t_end.
///
/// The sample list contains (t0, y0), every accepted step endpoint, and every
/// requested output time, strictly increasing with no duplicates.
pub fn solve<F>(
    f: F,
    t0: f64,
    y0: &DVector<f64>,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<RawTrajectory>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(t_end > t0) {
        return Err(Error::InvalidInput(format!(
            "integration span must be positive, got [{t0}, {t_end}]"
        )));
    }
    let evals = validate_t_eval(&opts.t_eval, t0, t_end)?;
    match opts.method {
        Method::Rk4 { step } => {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidInput(format!("rk4 step must be positive, got {step}")));
            }
            solve_rk4(f, t0, y0, t_end, step, &evals, opts.max_steps)
        }
        Method::Rkf45 { abs_tol, rel_tol } => {
            if !(abs_tol > 0.0 && rel_tol >= 0.0) {
                return Err(Error::InvalidInput(
                    "rkf45 tolerances must be positive".into(),
                ));
            }
            solve_rkf45(f, t0, y0, t_end, abs_tol, rel_tol, &evals, opts.max_steps)
        }
    }
}

fn solve_rk4<F>(
    f: F,
    t0: f64,
    y0: &DVector<f64>,
    t_end: f64,
    step: f64,
    evals: &[f64],
    max_steps: usize,
) -> Result<RawTrajectory>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let t_scale = t_end.abs().max(t0.abs()).max(1.0);
    let same = 1e-12 * t_scale;
    let mut ts = vec![t0];
    let mut ys = vec![y0.clone()];
    let mut t = t0;
    let mut y = y0.clone();
    let mut ei = evals.iter().copied().peekable();
    // drop eval points at the start; t0 is already recorded
    while ei.next_if(|&te| te <= t0 + same).is_some() {}
    let mut k: u64 = 1;
    let mut steps = 0usize;
    loop {
        let tg = t0 + (k as f64) * step;
        // fold a sub-nanostep remainder into the final step
        let t_next = if tg >= t_end - 1e-9 * step { t_end } else { tg };
        // serve requested times inside (t, t_next)
        while let Some(&te) = ei.peek() {
            if te >= t_next - same {
                break;
            }
            ei.next();
            if te <= t + same {
                continue;
            }
            y = rk4_step(&f, t, &y, te - t)?;
            t = te;
            ts.push(t);
            ys.push(y.clone());
            steps += 1;
            if steps > max_steps {
                return Err(Error::StepLimit { max_steps, t });
            }
        }
        y = rk4_step(&f, t, &y, t_next - t)?;
        t = t_next;
        ts.push(t);
        ys.push(y.clone());
        k += 1;
        steps += 1;
        if steps > max_steps {
            return Err(Error::StepLimit { max_steps, t });
        }
        // requested times that coincide with the grid point are already covered
        while ei.next_if(|&te| te <= t + same).is_some() {}
        if t >= t_end {
            return Ok(RawTrajectory { ts, ys });
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_rkf45<F>(
    f: F,
    t0: f64,
    y0: &DVector<f64>,
    t_end: f64,
    abs_tol: f64,
    rel_tol: f64,
    evals: &[f64],
    max_steps: usize,
) -> Result<RawTrajectory>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let t_scale = t_end.abs().max(t0.abs()).max(1.0);
    let same = 1e-12 * t_scale;
    let mut ts = vec![t0];
    let mut ys = vec![y0.clone()];
    let mut t = t0;
    let mut y = y0.clone();
    let mut fy = f(t, &y).map_err(wrap_at(t))?;
    let mut ei = evals.iter().copied().peekable();
    while ei.next_if(|&te| te <= t0 + same).is_some() {}
    let mut h = ((t_end - t0) * 1e-3).min(t_end - t0);
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > max_steps {
            return Err(Error::StepLimit { max_steps, t });
        }
        let h_min = 1e-14 * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::StepUnderflow { step: h, t });
        }
        if t + h > t_end {
            h = t_end - t;
        }
        let attempt = rkf45_step(&f, t, &y, &fy, h, abs_tol, rel_tol)?;
        if attempt.err_norm <= 1.0 {
            let mut t_new = t + h;
            if t_new > t_end || t_end - t_new <= same {
                t_new = t_end;
            }
            let y_new = attempt.y5;
            let fy_new = f(t_new, &y_new).map_err(wrap_at(t_new))?;
            // serve requested times inside the accepted span by interpolation
            let mut span: Option<HermiteSpan> = None;
            while let Some(&te) = ei.peek() {
                if te >= t_new - same {
                    break;
                }
                ei.next();
                if te <= t + same {
                    continue;
                }
                if span.is_none() {
                    // midpoint by a fifth-order half step keeps the interpolant
                    // at the integrator's own order
                    let hm = 0.5 * (t_new - t);
                    let mid = rkf45_step(&f, t, &y, &fy, hm, abs_tol, rel_tol)?;
                    let tm = t + hm;
                    let fm = f(tm, &mid.y5).map_err(wrap_at(tm))?;
                    span = Some(HermiteSpan::new(
                        [t, tm, t_new],
                        [&y, &mid.y5, &y_new],
                        [&fy, &fm, &fy_new],
                    ));
                }
                let yi = span.as_ref().unwrap().eval(te);
                ts.push(te);
                ys.push(yi);
            }
            t = t_new;
            y = y_new;
            fy = fy_new;
            ts.push(t);
            ys.push(y.clone());
            while ei.next_if(|&te| te <= t + same).is_some() {}
        }
        let factor = if attempt.err_norm > 0.0 {
            (0.9 * attempt.err_norm.powf(-0.2)).clamp(0.1, 5.0)
        } else {
            5.0
        };
        h *= factor;
    }
    Ok(RawTrajectory { ts, ys })
}
