//! Adaptive Gaussian quadrature for closed-form trajectory components.
//!
//! Nodes and weights of the 16-point Gauss-Legendre rule are computed at first
//! use by Newton iteration on the Legendre recurrence, so they are accurate to
//! machine precision without hard-coded tables. Intervals are bisected until
//! the two-level estimate settles below the requested tolerance.

use std::sync::OnceLock;

const GL_ORDER: usize = 16;
const MAX_DEPTH: usize = 48;

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn gauss_legendre_nodes() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = GL_ORDER;
        let mut xs = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_and_derivative(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_and_derivative(n, x);
            xs.push(x);
            ws.push(2.0 / ((1.0 - x * x) * dp * dp));
        }
        (xs, ws)
    })
}

fn gl_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (xs, ws) = gauss_legendre_nodes();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in xs.iter().zip(ws.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let whole = gl_panel(f, a, b);
    let mid = 0.5 * (a + b);
    let split = gl_panel(f, a, mid) + gl_panel(f, mid, b);
    if (whole - split).abs() <= tol || depth >= MAX_DEPTH {
        return split;
    }
    adaptive(f, a, mid, 0.5 * tol, depth + 1) + adaptive(f, mid, b, 0.5 * tol, depth + 1)
}

/// Integral of `f` over [a, b] to absolute tolerance `tol`; a may exceed b.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a < b {
        adaptive(&f, a, b, tol, 0)
    } else {
        -adaptive(&f, b, a, tol, 0)
    }
}

fn lagrange_eval(ts: &[f64], vals: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..ts.len() {
        let mut basis = 1.0;
        for k in 0..ts.len() {
            if k != i {
                basis *= (x - ts[k]) / (ts[i] - ts[k]);
            }
        }
        acc += vals[i] * basis;
    }
    acc
}

/// Cumulative integral of sampled data: out[j] = integral of the sampled
/// function from ts[0] to ts[j], with out[0] = 0.
///
/// Each interval integrates the local cubic interpolant (quadratic or linear
/// when fewer nodes exist) through a two-point Gauss rule, which is exact for
/// it. The stencil shifts one node per interval, so on smooth data the
/// accumulated error is a smooth O(step^4) function of position with no
/// parity alternation; derivative estimates taken on the output stay at
/// fourth order. Nodes must be strictly increasing.
pub fn cumulative(ts: &[f64], vals: &[f64]) -> Vec<f64> {
    assert_eq!(ts.len(), vals.len(), "sample times and values must pair up");
    let len = ts.len();
    let mut out = vec![0.0; len];
    if len < 2 {
        return out;
    }
    let width = len.min(4);
    let d = 0.5 / 3f64.sqrt();
    for j in 0..len - 1 {
        let lo = j.saturating_sub(1).min(len - width);
        let nodes = &ts[lo..lo + width];
        let data = &vals[lo..lo + width];
        let mid = 0.5 * (ts[j] + ts[j + 1]);
        let dt = ts[j + 1] - ts[j];
        let seg = 0.5
            * dt
            * (lagrange_eval(nodes, data, mid - d * dt) + lagrange_eval(nodes, data, mid + d * dt));
        out[j + 1] = out[j] + seg;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn smooth_integrals_to_tolerance() {
        let v = integrate(|s| s.sin(), 0.0, std::f64::consts::PI, 1e-13);
        assert_relative_eq!(v, 2.0, epsilon = 1e-13);
        let v = integrate(|s| s.exp(), 0.0, 1.0, 1e-13);
        assert_relative_eq!(v, 1f64.exp() - 1.0, epsilon = 1e-13);
    }

    #[test]
    fn oscillatory_integral() {
        let v = integrate(|s| (5.0 * s).cos(), 0.0, 10.0, 1e-13);
        assert_relative_eq!(v, 50f64.sin() / 5.0, epsilon = 1e-12);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let a = integrate(|s| s * s, 0.0, 2.0, 1e-13);
        let b = integrate(|s| s * s, 2.0, 0.0, 1e-13);
        assert_relative_eq!(a, 8.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(a, -b, epsilon = 1e-15);
    }

    #[test]
    fn cumulative_is_exact_on_cubics() {
        let f = |x: f64| 2.0 * x * x * x - x * x + 3.0 * x - 0.5;
        let exact = |x: f64| 0.5 * x.powi(4) - x.powi(3) / 3.0 + 1.5 * x * x - 0.5 * x;
        let ts: Vec<f64> = (0..=30).map(|j| 0.1 * j as f64).collect();
        let vals: Vec<f64> = ts.iter().map(|&x| f(x)).collect();
        let out = cumulative(&ts, &vals);
        for (t, h) in ts.iter().zip(out.iter()) {
            assert_relative_eq!(*h, exact(*t), epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn cumulative_handles_nonuniform_nodes() {
        let ts = [0.0, 0.13, 0.4, 0.45, 0.9, 1.7, 2.0];
        let vals: Vec<f64> = ts.iter().map(|&x: &f64| x * x * x - x).collect();
        let out = cumulative(&ts, &vals);
        let exact = |x: f64| 0.25 * x.powi(4) - 0.5 * x * x;
        for (t, h) in ts.iter().zip(out.iter()) {
            assert_relative_eq!(*h, exact(*t), epsilon = 1e-12);
        }
    }

    #[test]
    fn cumulative_short_inputs() {
        assert_eq!(cumulative(&[], &[]), Vec::<f64>::new());
        assert_eq!(cumulative(&[1.0], &[7.0]), vec![0.0]);
        // two nodes: the linear interpolant makes this the trapezoid value
        let out = cumulative(&[0.0, 2.0], &[1.0, 3.0]);
        assert_relative_eq!(out[1], 4.0, epsilon = 1e-14);
        // three nodes: quadratic through them, exact for a parabola
        let out = cumulative(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]);
        assert_relative_eq!(out[2], 8.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn cumulative_fourth_order_convergence() {
        let run = |n: usize| {
            let ts: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
            let vals: Vec<f64> = ts.iter().map(|&x| (3.0 * x).sin().exp()).collect();
            let out = cumulative(&ts, &vals);
            let exact = integrate(|x| (3.0 * x).sin().exp(), 0.0, 1.0, 1e-14);
            (out[n] - exact).abs()
        };
        let e1 = run(50);
        let e2 = run(100);
        assert!(e1 > 1e-12, "coarse error too small to measure: {e1:.3e}");
        let ratio = e1 / e2;
        assert!(
            (10.0..40.0).contains(&ratio),
            "expected ~16x shrink, got {ratio:.2} ({e1:.3e} -> {e2:.3e})"
        );
    }
}
