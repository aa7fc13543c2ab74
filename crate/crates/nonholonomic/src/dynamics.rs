//! Equations of motion in the adapted frame.
//!
//! A state is the chart point q together with the m momenta p conjugate to the
//! frame directions. Two right-hand sides are provided: the mechanical field of
//! the constrained system with its potential, and the kinetic field of the
//! conformally rescaled metric (e - V) G, the one that trades the potential for
//! a change of time variable. Both share the curvature term built from the
//! structure functions; only the configuration gradient differs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{self, SystemDefinition};
use crate::solver::{self, IntegrateOptions, Method};

/// Floor on e - V during conformal dynamics; below it the motion is treated
/// as having reached the boundary of the allowed region.
pub const HILL_MARGIN: f64 = 1e-8;

/// Relative tolerance for declaring a chart velocity compatible with the
/// constraint when converting it to momenta.
pub const CONSTRAINT_RTOL: f64 = 1e-9;

/// Phase-space state in adapted coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedState {
    pub t: f64,
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl AdaptedState {
    pub fn new(t: f64, q: DVector<f64>, p: DVector<f64>) -> Self {
        AdaptedState { t, q, p }
    }
}

/// Shared per-point data for both right-hand sides.
struct FieldData {
    x: DMatrix<f64>,
    /// Frame components of the velocity, gram_inv p.
    y: DVector<f64>,
    /// p . y, twice the kinetic energy.
    pty: f64,
    /// curv_a = sum_{b,c} C_ab^c p_c y^b.
    curv: DVector<f64>,
    /// i-th entry: -(1/2) y . (d_i gram) y, the kinetic part of dH/dq.
    kin_grad: DVector<f64>,
    dv: DVector<f64>,
}

fn field_data(sys: &SystemDefinition, q: &DVector<f64>, p: &DVector<f64>) -> Result<FieldData> {
    let n = sys.dim();
    let m = sys.rank();
    let g = sys.metric_at(q)?;
    let x = sys.frame_at(q);
    let (_, gram_inv) = geometry::gram_of(sys, q, &g, &x)?;
    let y = &gram_inv * p;
    let pty = p.dot(&y);
    let d = geometry::structure_d_of(sys, q, &g, &x, &gram_inv)?;
    let mut curv = DVector::zeros(m);
    for c in 0..m {
        curv += (&d[c] * &y) * p[c];
    }
    let jacs: Vec<DMatrix<f64>> = (0..m)
        .map(|a| sys.frame_jacobian_at(q, a))
        .collect::<Result<_>>()?;
    let gx = &g * &x;
    let mut kin_grad = DVector::zeros(n);
    for i in 0..n {
        // d_i gram_ab = (d_i X_a) . G X_b + X_a . (d_i G) X_b + X_a . G (d_i X_b)
        let dgi = sys.metric_partial_at(q, i)?;
        let dgix = &dgi * &x;
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                let t = jacs[a].column(i).dot(&gx.column(b))
                    + x.column(a).dot(&dgix.column(b))
                    + gx.column(a).dot(&jacs[b].column(i));
                acc += y[a] * t * y[b];
            }
        }
        kin_grad[i] = -0.5 * acc;
    }
    let dv = sys.potential_differential_at(q)?;
    Ok(FieldData {
        x,
        y,
        pty,
        curv,
        kin_grad,
        dv,
    })
}

fn check_dims(sys: &SystemDefinition, state: &AdaptedState) -> Result<()> {
    if state.q.len() != sys.dim() || state.p.len() != sys.rank() {
        return Err(Error::InvalidInput(format!(
            "state has dimensions ({}, {}), system '{}' needs ({}, {})",
            state.q.len(),
            state.p.len(),
            sys.name(),
            sys.dim(),
            sys.rank()
        )));
    }
    Ok(())
}

/// Mechanical right-hand side: (dq/dt, dp/dt) for H = (1/2) p . gram_inv p + V.
pub fn mechanical_field(
    sys: &SystemDefinition,
    state: &AdaptedState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dims(sys, state)?;
    let fd = field_data(sys, &state.q, &state.p)?;
    let qdot = &fd.x * &fd.y;
    let dh = &fd.kin_grad + &fd.dv;
    let pdot = -&fd.curv - fd.x.transpose() * dh;
    Ok((qdot, pdot))
}

/// Kinetic right-hand side of the conformally rescaled system at energy level e:
/// H = p . gram_inv p / (2 (e - V)). Fails at the boundary e = V.
pub fn jacobi_field(
    sys: &SystemDefinition,
    e: f64,
    state: &AdaptedState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dims(sys, state)?;
    let w = e - sys.potential_at(&state.q);
    if w <= HILL_MARGIN {
        return Err(Error::HillBoundary {
            margin: w,
            t: state.t,
        });
    }
    let fd = field_data(sys, &state.q, &state.p)?;
    let qdot = (&fd.x * &fd.y) / w;
    let dh = &fd.kin_grad / w + &fd.dv * (fd.pty / (2.0 * w * w));
    let pdot = -&fd.curv / w - fd.x.transpose() * dh;
    Ok((qdot, pdot))
}

/// Total mechanical energy (1/2) p . gram_inv p + V(q).
pub fn energy(sys: &SystemDefinition, q: &DVector<f64>, p: &DVector<f64>) -> Result<f64> {
    let (_, gram_inv) = geometry::gram_at(sys, q)?;
    Ok(0.5 * p.dot(&(&gram_inv * p)) + sys.potential_at(q))
}

/// Kinetic energy of the conformally rescaled metric, p . gram_inv p / (2 (e - V)).
/// Constant along `jacobi_field` flow; equal to 1 on the level set matched to e.
pub fn jacobi_energy(
    sys: &SystemDefinition,
    e: f64,
    q: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<f64> {
    let w = e - sys.potential_at(q);
    let (_, gram_inv) = geometry::gram_at(sys, q)?;
    Ok(p.dot(&(&gram_inv * p)) / (2.0 * w))
}

/// G-norm of the component of v outside the distribution at q.
pub fn constraint_residual(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<f64> {
    let g = sys.metric_at(q)?;
    let x = sys.frame_at(q);
    let (_, gram_inv) = geometry::gram_of(sys, q, &g, &x)?;
    let coeff = &gram_inv * (x.transpose() * (&g * v));
    let r = v - &x * coeff;
    Ok(r.dot(&(&g * &r)).max(0.0).sqrt())
}

/// Adapted momenta of a chart velocity: p_a = X_a . G v.
///
/// The velocity must satisfy the constraint; the residual gate is relative to
/// the G-norm of v so pure scalings never change the verdict.
pub fn momenta_from_velocity(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let g = sys.metric_at(q)?;
    let x = sys.frame_at(q);
    let (_, gram_inv) = geometry::gram_of(sys, q, &g, &x)?;
    let gv = &g * v;
    let coeff = &gram_inv * (x.transpose() * &gv);
    let r = v - &x * coeff;
    let residual = r.dot(&(&g * &r)).max(0.0).sqrt();
    let tol = CONSTRAINT_RTOL * v.dot(&gv).max(0.0).sqrt();
    if residual > tol {
        return Err(Error::NotInDistribution { residual, tol });
    }
    Ok(x.transpose() * gv)
}

/// Chart velocity of adapted momenta: v = X gram_inv p. Always satisfies the
/// constraint by construction.
pub fn velocity_from_momenta(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<DVector<f64>> {
    let g = sys.metric_at(q)?;
    let x = sys.frame_at(q);
    let (_, gram_inv) = geometry::gram_of(sys, q, &g, &x)?;
    Ok(&x * (&gram_inv * p))
}

/// A right-hand side the phase-space integrator can drive.
pub trait PhaseField {
    fn system(&self) -> &SystemDefinition;
    fn rates(&self, state: &AdaptedState) -> Result<(DVector<f64>, DVector<f64>)>;
    /// Quantity conserved along exact flow, recorded with every sample.
    fn invariant(&self, state: &AdaptedState) -> Result<f64>;
    fn label(&self) -> &'static str;
}

/// The constrained system with its potential, in physical time.
pub struct MechanicalField<'a> {
    pub system: &'a SystemDefinition,
}

impl PhaseField for MechanicalField<'_> {
    fn system(&self) -> &SystemDefinition {
        self.system
    }

    fn rates(&self, state: &AdaptedState) -> Result<(DVector<f64>, DVector<f64>)> {
        mechanical_field(self.system, state)
    }

    fn invariant(&self, state: &AdaptedState) -> Result<f64> {
        energy(self.system, &state.q, &state.p)
    }

    fn label(&self) -> &'static str {
        "mechanical"
    }
}

/// The kinetic system of the conformally rescaled metric at level e, in its
/// own time variable.
pub struct JacobiField<'a> {
    pub system: &'a SystemDefinition,
    pub e: f64,
}

impl PhaseField for JacobiField<'_> {
    fn system(&self) -> &SystemDefinition {
        self.system
    }

    fn rates(&self, state: &AdaptedState) -> Result<(DVector<f64>, DVector<f64>)> {
        jacobi_field(self.system, self.e, state)
    }

    fn invariant(&self, state: &AdaptedState) -> Result<f64> {
        jacobi_energy(self.system, self.e, &state.q, &state.p)
    }

    fn label(&self) -> &'static str {
        "jacobi-kinetic"
    }
}

/// Integrated phase-space trajectory with the invariant recorded per sample.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub system: String,
    pub field: String,
    pub method: Method,
    pub samples: Vec<AdaptedState>,
    pub energy: Vec<f64>,
}

impl Trajectory {
    pub fn start(&self) -> &AdaptedState {
        self.samples.first().expect("trajectory has samples")
    }

    pub fn end(&self) -> &AdaptedState {
        self.samples.last().expect("trajectory has samples")
    }

    /// Sample whose time matches t up to roundoff slack. Requested output
    /// times always resolve through this; they may sit a few ulp off the
    /// recorded grid when they coincide with a step boundary.
    pub fn sample_near(&self, t: f64) -> Option<&AdaptedState> {
        let tol = 1e-9 * t.abs().max(1.0);
        let idx = self.samples.partition_point(|s| s.t < t);
        let mut best: Option<&AdaptedState> = None;
        for j in [idx.wrapping_sub(1), idx] {
            if let Some(s) = self.samples.get(j) {
                if (s.t - t).abs() <= tol
                    && best.is_none_or(|b| (s.t - t).abs() < (b.t - t).abs())
                {
                    best = Some(s);
                }
            }
        }
        best
    }
}

/// Integrates a phase field from `start` to time `t_end`.
pub fn integrate<F: PhaseField + ?Sized>(
    field: &F,
    start: &AdaptedState,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let sys = field.system();
    check_dims(sys, start)?;
    let n = sys.dim();
    let m = sys.rank();
    let mut y0 = DVector::zeros(n + m);
    y0.rows_mut(0, n).copy_from(&start.q);
    y0.rows_mut(n, m).copy_from(&start.p);
    let rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let st = AdaptedState {
            t,
            q: y.rows(0, n).clone_owned(),
            p: y.rows(n, m).clone_owned(),
        };
        let (qd, pd) = field.rates(&st)?;
        let mut out = DVector::zeros(n + m);
        out.rows_mut(0, n).copy_from(&qd);
        out.rows_mut(n, m).copy_from(&pd);
        Ok(out)
    };
    let raw = solver::solve(rhs, start.t, &y0, t_end, opts)?;
    let mut samples = Vec::with_capacity(raw.ts.len());
    let mut energy = Vec::with_capacity(raw.ts.len());
    for (t, y) in raw.ts.iter().zip(raw.ys.iter()) {
        let st = AdaptedState {
            t: *t,
            q: y.rows(0, n).clone_owned(),
            p: y.rows(n, m).clone_owned(),
        };
        energy.push(field.invariant(&st)?);
        samples.push(st);
    }
    Ok(Trajectory {
        system: sys.name().to_string(),
        field: field.label().to_string(),
        method: opts.method.clone(),
        samples,
        energy,
    })
}
