//! Configuration-space geometry: metric, constraint distribution, adapted frames.
//!
//! A system lives on an n-dimensional chart with Riemannian metric G(q) and a
//! rank-m distribution D spanned by m frame fields X_a. All downstream dynamics
//! are written in the adapted frame, so the quantities assembled here (Gram
//! matrix, projector, complement frame, structure functions) are the only
//! geometry the integrators ever touch.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Scalar field on the chart, e.g. a potential.
pub type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// Vector field on the chart (n components).
pub type VectorFieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Matrix-valued field on the chart (metric, Jacobians).
pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Condition-number cap on the frame Gram matrix before it is declared degenerate.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Relative step used by fourth-order central differences.
pub const FD_STEP: f64 = 1e-5;

/// Discard threshold for complement candidates, scaled by the metric norm.
pub const COMPLEMENT_DISCARD: f64 = 1e-8;

/// Box constraint on valid chart coordinates.
///
/// Periodic coordinates (angles) are flagged and never clipped or wrapped by
/// the library during integration; wrapping is an output-time concern.
#[derive(Debug, Clone)]
pub struct ChartBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl ChartBounds {
    /// Unbounded chart with the given periodicity flags.
    pub fn periodic_only(periodic: Vec<bool>) -> Self {
        let n = periodic.len();
        ChartBounds {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            periodic,
        }
    }

    /// True when stepping coordinate `i` by `delta` stays inside the chart.
    /// Periodic coordinates always allow the step.
    pub fn allows_step(&self, q: &DVector<f64>, i: usize, delta: f64) -> bool {
        if self.periodic[i] {
            return true;
        }
        let v = q[i] + delta;
        v >= self.lower[i] && v <= self.upper[i]
    }
}

/// A mechanical system: metric, potential, and constraint frame on one chart.
///
/// The metric must be symmetric positive definite wherever it is evaluated,
/// and the frame fields must stay linearly independent. Analytic gradients
/// and Jacobians are optional; fourth-order central differences fill in.
#[derive(Clone)]
pub struct SystemDefinition {
    name: String,
    n: usize,
    m: usize,
    metric: MatrixField,
    potential: ScalarField,
    potential_gradient: Option<VectorFieldFn>,
    frame: Vec<VectorFieldFn>,
    frame_jacobians: Option<Vec<MatrixField>>,
    chart_bounds: Option<ChartBounds>,
}

impl std::fmt::Debug for SystemDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemDefinition")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl SystemDefinition {
    /// Builds a system from its defining fields. Panics on inconsistent ranks,
    /// those are programming errors, not runtime conditions.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        metric: MatrixField,
        potential: ScalarField,
        frame: Vec<VectorFieldFn>,
    ) -> Self {
        assert!(m >= 1 && m <= n, "need 1 <= m <= n");
        assert_eq!(frame.len(), m, "frame must have m fields");
        SystemDefinition {
            name: name.into(),
            n,
            m,
            metric,
            potential,
            potential_gradient: None,
            frame,
            frame_jacobians: None,
            chart_bounds: None,
        }
    }

    pub fn with_potential_gradient(mut self, grad: VectorFieldFn) -> Self {
        self.potential_gradient = Some(grad);
        self
    }

    pub fn with_frame_jacobians(mut self, jacobians: Vec<MatrixField>) -> Self {
        assert_eq!(jacobians.len(), self.m);
        self.frame_jacobians = Some(jacobians);
        self
    }

    pub fn with_chart_bounds(mut self, bounds: ChartBounds) -> Self {
        assert_eq!(bounds.periodic.len(), self.n);
        assert_eq!(bounds.lower.len(), self.n);
        assert_eq!(bounds.upper.len(), self.n);
        self.chart_bounds = Some(bounds);
        self
    }

    /// Kinetic system whose metric is (e - V(q)) G(q): same frame, same chart,
    /// zero potential. Where e - V <= 0 the scaled metric stops being positive
    /// definite and evaluation reports MetricSingular.
    pub(crate) fn rescaled_by_energy_margin(&self, name: String, e: f64) -> SystemDefinition {
        let metric = Arc::clone(&self.metric);
        let potential = Arc::clone(&self.potential);
        let scaled: MatrixField = Arc::new(move |q: &DVector<f64>| {
            let w = e - potential(q);
            metric(q) * w
        });
        SystemDefinition {
            name,
            n: self.n,
            m: self.m,
            metric: scaled,
            potential: Arc::new(|_| 0.0),
            potential_gradient: Some(Arc::new(|q: &DVector<f64>| DVector::zeros(q.len()))),
            frame: self.frame.clone(),
            frame_jacobians: self.frame_jacobians.clone(),
            chart_bounds: self.chart_bounds.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Chart dimension n.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Distribution rank m.
    pub fn rank(&self) -> usize {
        self.m
    }

    pub fn chart_bounds(&self) -> Option<&ChartBounds> {
        self.chart_bounds.as_ref()
    }

    pub fn has_analytic_frame_jacobians(&self) -> bool {
        self.frame_jacobians.is_some()
    }

    /// Metric at q, validated symmetric positive definite.
    pub fn metric_at(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let g = (self.metric)(q);
        debug_assert_eq!(g.nrows(), self.n);
        let scale = g.norm().max(1.0);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if (g[(i, j)] - g[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::MetricSingular { q: q.iter().copied().collect() });
                }
            }
        }
        if g.clone().cholesky().is_none() {
            return Err(Error::MetricSingular { q: q.iter().copied().collect() });
        }
        Ok(g)
    }

    pub fn potential_at(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    /// Differential dV as a covector, analytic when supplied, else fourth-order
    /// central differences.
    pub fn potential_differential_at(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some(grad) = &self.potential_gradient {
            return Ok(grad(q));
        }
        let mut dv = DVector::zeros(self.n);
        for i in 0..self.n {
            dv[i] = self.central_diff_scalar(q, i, |p| (self.potential)(p))?;
        }
        Ok(dv)
    }

    /// Frame matrix X(q), n rows and m columns.
    pub fn frame_at(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n, self.m);
        for (a, field) in self.frame.iter().enumerate() {
            x.set_column(a, &field(q));
        }
        x
    }

    /// Jacobian of frame field a: entry (r, c) is the derivative of component r
    /// along coordinate c.
    pub fn frame_jacobian_at(&self, q: &DVector<f64>, a: usize) -> Result<DMatrix<f64>> {
        if let Some(jacs) = &self.frame_jacobians {
            return Ok(jacs[a](q));
        }
        let mut jac = DMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            let col = self.central_diff_vector(q, c, |p| self.frame[a](p))?;
            jac.set_column(c, &col);
        }
        Ok(jac)
    }

    /// Partial derivative of the metric along coordinate i, by differences.
    /// Constant metrics difference to exactly zero.
    pub fn metric_partial_at(&self, q: &DVector<f64>, i: usize) -> Result<DMatrix<f64>> {
        self.central_diff_matrix(q, i, |p| (self.metric)(p))
    }

    fn fd_step(&self, q: &DVector<f64>, i: usize) -> Result<f64> {
        let eps = FD_STEP * (1.0 + q[i].abs());
        if let Some(bounds) = &self.chart_bounds {
            if !bounds.allows_step(q, i, 2.0 * eps) || !bounds.allows_step(q, i, -2.0 * eps) {
                return Err(Error::JacobianUnavailable {
                    coord: i,
                    q: q.iter().copied().collect(),
                });
            }
        }
        Ok(eps)
    }

    fn central_diff_scalar(
        &self,
        q: &DVector<f64>,
        i: usize,
        f: impl Fn(&DVector<f64>) -> f64,
    ) -> Result<f64> {
        let eps = self.fd_step(q, i)?;
        let mut qq = q.clone();
        let mut at = |delta: f64| {
            qq[i] = q[i] + delta;
            f(&qq)
        };
        let v = (-at(2.0 * eps) + 8.0 * at(eps) - 8.0 * at(-eps) + at(-2.0 * eps)) / (12.0 * eps);
        Ok(v)
    }

    fn central_diff_vector(
        &self,
        q: &DVector<f64>,
        i: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64>,
    ) -> Result<DVector<f64>> {
        let eps = self.fd_step(q, i)?;
        let mut qq = q.clone();
        let mut at = |delta: f64| {
            qq[i] = q[i] + delta;
            f(&qq)
        };
        let v = (-at(2.0 * eps) + at(eps) * 8.0 - at(-eps) * 8.0 + at(-2.0 * eps)) / (12.0 * eps);
        Ok(v)
    }

    fn central_diff_matrix(
        &self,
        q: &DVector<f64>,
        i: usize,
        f: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let eps = self.fd_step(q, i)?;
        let mut qq = q.clone();
        let mut at = |delta: f64| {
            qq[i] = q[i] + delta;
            f(&qq)
        };
        let v = (-at(2.0 * eps) + at(eps) * 8.0 - at(-eps) * 8.0 + at(-2.0 * eps)) / (12.0 * eps);
        Ok(v)
    }
}

/// Gram matrix g_ab = X_a . G X_b and its inverse at q.
///
/// The inverse is assembled from the symmetric eigendecomposition so it is
/// symmetric by construction; the same decomposition supplies the condition
/// number that gates `FrameDegenerate`.
pub fn gram_at(sys: &SystemDefinition, q: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let g = sys.metric_at(q)?;
    let x = sys.frame_at(q);
    gram_of(sys, q, &g, &x)
}

pub(crate) fn gram_of(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = sys.rank();
    let gram = {
        let gx = g * x;
        let mut gram = x.transpose() * gx;
        // symmetrize to kill rounding skew before eigendecomposition
        for a in 0..m {
            for b in (a + 1)..m {
                let s = 0.5 * (gram[(a, b)] + gram[(b, a)]);
                gram[(a, b)] = s;
                gram[(b, a)] = s;
            }
        }
        gram
    };
    let eig = gram.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond.is_finite() && cond <= MAX_GRAM_CONDITION) {
        return Err(Error::FrameDegenerate {
            cond,
            max: MAX_GRAM_CONDITION,
            q: q.iter().copied().collect(),
        });
    }
    let mut inv = DMatrix::zeros(m, m);
    for k in 0..m {
        let vk = eig.eigenvectors.column(k);
        let w = 1.0 / eig.eigenvalues[k];
        for a in 0..m {
            for b in 0..m {
                inv[(a, b)] += w * vk[a] * vk[b];
            }
        }
    }
    Ok((gram, inv))
}

/// G-orthogonal projector onto D_q: P = X (X.G X)^-1 X.G.
pub fn projector_at(sys: &SystemDefinition, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let g = sys.metric_at(q)?;
    let x = sys.frame_at(q);
    let (_, gram_inv) = gram_of(sys, q, &g, &x)?;
    Ok(&x * gram_inv * x.transpose() * &g)
}

/// G-orthonormal complement frame: n-m columns spanning the G-orthogonal
/// complement of D_q.
///
/// Candidates are (I - P) applied to the standard basis in order, G-orthonormalized
/// by modified Gram-Schmidt with one reorthogonalization pass; near-zero results
/// are discarded. Deterministic for a fixed q.
pub fn complement_frame(sys: &SystemDefinition, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let g = sys.metric_at(q)?;
    let x = sys.frame_at(q);
    let (_, gram_inv) = gram_of(sys, q, &g, &x)?;
    complement_of(sys, q, &g, &x, &gram_inv)
}

pub(crate) fn complement_of(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    gram_inv: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    let m = sys.rank();
    let k = n - m;
    let mut y = DMatrix::zeros(n, k);
    if k == 0 {
        return Ok(y);
    }
    let threshold = COMPLEMENT_DISCARD * g.norm();
    let gdot = |u: &DVector<f64>, v: &DVector<f64>| (u.transpose() * g * v)[(0, 0)];
    let mut found = 0;
    for i in 0..n {
        // w = (I - P) e_i without forming P: subtract the D-component
        let gei = g.column(i).clone_owned();
        let coeff = gram_inv * x.transpose() * &gei;
        let mut w = DVector::zeros(n);
        w[i] = 1.0;
        w -= x * coeff;
        // two Gram-Schmidt passes against accepted columns
        for _ in 0..2 {
            for j in 0..found {
                let yj = y.column(j).clone_owned();
                let c = gdot(&yj, &w);
                w -= yj * c;
            }
        }
        let norm = gdot(&w, &w).max(0.0).sqrt();
        if norm > threshold {
            w /= norm;
            y.set_column(found, &w);
            found += 1;
            if found == k {
                return Ok(y);
            }
        }
    }
    Err(Error::FrameDegenerate {
        cond: f64::INFINITY,
        max: MAX_GRAM_CONDITION,
        q: q.iter().copied().collect(),
    })
}

/// Lie bracket [X_a, X_b](q) = J_b X_a - J_a X_b from the frame Jacobians.
pub(crate) fn bracket_at(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    x: &DMatrix<f64>,
    a: usize,
    b: usize,
) -> Result<DVector<f64>> {
    let ja = sys.frame_jacobian_at(q, a)?;
    let jb = sys.frame_jacobian_at(q, b)?;
    let xa = x.column(a).clone_owned();
    let xb = x.column(b).clone_owned();
    Ok(jb * xa - ja * xb)
}

/// D-part of the structure functions only, from precomputed frame data.
/// The dynamics hot path calls this; it never touches the complement.
pub(crate) fn structure_d_of(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    gram_inv: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let m = sys.rank();
    let mut d = vec![DMatrix::zeros(m, m); m];
    for a in 0..m {
        for b in (a + 1)..m {
            let w = bracket_at(sys, q, x, a, b)?;
            let cd = gram_inv * (x.transpose() * (g * &w));
            for c in 0..m {
                d[c][(a, b)] = cd[c];
                d[c][(b, a)] = -cd[c];
            }
        }
    }
    Ok(d)
}

/// Structure functions of the adapted frame at q.
///
/// `d[c][(a, b)]` is the X_c-coefficient and `perp[al][(a, b)]` the Y_al-coefficient
/// of [X_a, X_b]. Brackets are computed for a < b and antisymmetrized, so the
/// antisymmetry is exact by construction.
#[derive(Debug, Clone)]
pub struct StructureFunctions {
    pub d: Vec<DMatrix<f64>>,
    pub perp: Vec<DMatrix<f64>>,
}

pub fn structure_functions_at(sys: &SystemDefinition, q: &DVector<f64>) -> Result<StructureFunctions> {
    let n = sys.dim();
    let m = sys.rank();
    let g = sys.metric_at(q)?;
    let x = sys.frame_at(q);
    let (_, gram_inv) = gram_of(sys, q, &g, &x)?;
    let y = complement_of(sys, q, &g, &x, &gram_inv)?;
    let mut d = vec![DMatrix::zeros(m, m); m];
    let mut perp = vec![DMatrix::zeros(m, m); n - m];
    for a in 0..m {
        for b in (a + 1)..m {
            let w = bracket_at(sys, q, &x, a, b)?;
            let gw = &g * &w;
            // D-part in the frame basis; the complement is G-orthogonal to D,
            // so the projection coefficients need no joint solve
            let cd = &gram_inv * (x.transpose() * &gw);
            let cp = y.transpose() * &gw;
            for c in 0..m {
                d[c][(a, b)] = cd[c];
                d[c][(b, a)] = -cd[c];
            }
            for al in 0..(n - m) {
                perp[al][(a, b)] = cp[al];
                perp[al][(b, a)] = -cp[al];
            }
        }
    }
    Ok(StructureFunctions { d, perp })
}

/// Riemannian gradient of the potential: G^-1 dV.
pub fn grad_potential(sys: &SystemDefinition, q: &DVector<f64>) -> Result<DVector<f64>> {
    let g = sys.metric_at(q)?;
    let dv = sys.potential_differential_at(q)?;
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::MetricSingular { q: q.iter().copied().collect() })?;
    Ok(chol.solve(&dv))
}

/// Everything the adapted frame knows at one point, bundled for inspection.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub q: DVector<f64>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub gram_inv: DMatrix<f64>,
    pub structure: StructureFunctions,
}

impl FrameData {
    pub fn at(sys: &SystemDefinition, q: &DVector<f64>) -> Result<FrameData> {
        let g = sys.metric_at(q)?;
        let x = sys.frame_at(q);
        let (gram, gram_inv) = gram_of(sys, q, &g, &x)?;
        let y = complement_of(sys, q, &g, &x, &gram_inv)?;
        let structure = structure_functions_at(sys, q)?;
        Ok(FrameData {
            q: q.clone(),
            x,
            y,
            gram,
            gram_inv,
            structure,
        })
    }
}
