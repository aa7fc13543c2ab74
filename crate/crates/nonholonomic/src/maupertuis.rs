//! Energy-shell machinery: the conformal (Jacobi) rescaling of a mechanical
//! system, the sphere projections connecting the two pictures, trajectory
//! reparametrization, and the two-leg equivalence verifier.
//!
//! The central fact being checked: a mechanical trajectory at energy e,
//! launched from the projected velocity P(v), traces the same curve as the
//! kinetic trajectory of the rescaled metric launched from Q(v), once the
//! kinetic leg is sampled at the reparametrized times h(s) with
//! dh/ds = e - V along the curve.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    self, AdaptedState, JacobiField, MechanicalField, Trajectory, HILL_MARGIN,
};
use crate::error::{Error, Result};
use crate::geometry::{self, SystemDefinition};
use crate::quad;
use crate::solver::{IntegrateOptions, Method};

/// Absolute tolerance on membership in the cotangent energy shell.
pub const SHELL_TOL: f64 = 1e-10;

/// Sphere-membership tolerance of the velocity rescaling map [`psi`].
pub const PSI_SPHERE_TOL: f64 = 1e-9;

/// Shell drift allowed on the first sample of an externally supplied
/// mechanical leg; matches the drift budget of integrated trajectories.
const SHELL_DRIFT: f64 = 1e-8;

fn margin_at(sys: &SystemDefinition, e: f64, q: &DVector<f64>) -> Result<f64> {
    let w = e - sys.potential_at(q);
    if w <= HILL_MARGIN {
        return Err(Error::HillBoundary { margin: w, t: 0.0 });
    }
    Ok(w)
}

/// The kinetic system of the rescaled metric (e - V(q)) G(q): same frame and
/// chart, zero potential. Orthogonality in the rescaled metric agrees with
/// orthogonality in G, so the distribution projector is unchanged.
///
/// Construction never fails; evaluating the metric outside the region e > V
/// reports `MetricSingular`, since there the scaled matrix stops being
/// positive definite.
pub fn jacobi_system(sys: &SystemDefinition, e: f64) -> SystemDefinition {
    sys.rescaled_by_energy_margin(format!("{}-jacobi", sys.name()), e)
}

/// Rescales a distribution velocity onto the mechanical sphere of radius
/// sqrt(2 (e - V(q))) in the G-norm, keeping its direction.
pub fn project_p(
    sys: &SystemDefinition,
    e: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let w = margin_at(sys, e, q)?;
    let g = sys.metric_at(q)?;
    let nrm = v.dot(&(&g * v)).max(0.0).sqrt();
    if nrm == 0.0 {
        return Err(Error::ZeroVector);
    }
    dynamics::momenta_from_velocity(sys, q, v)?;
    Ok(v * ((2.0 * w).sqrt() / nrm))
}

/// Rescales a distribution velocity onto the sphere of radius
/// sqrt(2 / (e - V(q))): the image has unit kinetic energy in the rescaled
/// metric.
pub fn project_q(
    sys: &SystemDefinition,
    e: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let w = margin_at(sys, e, q)?;
    let g = sys.metric_at(q)?;
    let nrm = v.dot(&(&g * v)).max(0.0).sqrt();
    if nrm == 0.0 {
        return Err(Error::ZeroVector);
    }
    dynamics::momenta_from_velocity(sys, q, v)?;
    Ok(v * ((2.0 / w).sqrt() / nrm))
}

/// The fiberwise rescaling v -> v / (e - V(q)) carrying the mechanical sphere
/// onto the unit-energy sphere of the rescaled metric. The input must already
/// sit on the mechanical sphere; composed with [`project_p`] it reproduces
/// [`project_q`].
pub fn psi(
    sys: &SystemDefinition,
    e: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let w = margin_at(sys, e, q)?;
    let g = sys.metric_at(q)?;
    let residual = (v.dot(&(&g * v)) - 2.0 * w).abs();
    if residual > PSI_SPHERE_TOL {
        return Err(Error::NotOnSphere {
            residual,
            tol: PSI_SPHERE_TOL,
        });
    }
    Ok(v / w)
}

/// A point of the cotangent energy shell: adapted momenta whose kinetic
/// energy equals e - V(q).
///
/// The checked constructors are the contract; the fields stay public so
/// deliberately off-shell points can be built where a test needs one.
#[derive(Debug, Clone)]
pub struct EnergyShellPoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl EnergyShellPoint {
    /// Validates membership: |p . gram_inv p - 2 (e - V(q))| <= SHELL_TOL.
    pub fn new(
        sys: &SystemDefinition,
        e: f64,
        q: DVector<f64>,
        p: DVector<f64>,
    ) -> Result<Self> {
        let w = margin_at(sys, e, &q)?;
        let (_, gram_inv) = geometry::gram_at(sys, &q)?;
        let defect = (p.dot(&(&gram_inv * &p)) - 2.0 * w).abs();
        if defect > SHELL_TOL {
            return Err(Error::NotOnSphere {
                residual: defect,
                tol: SHELL_TOL,
            });
        }
        Ok(EnergyShellPoint { q, p })
    }

    /// Scales a nonzero momentum direction onto the shell.
    pub fn rescale(
        sys: &SystemDefinition,
        e: f64,
        q: DVector<f64>,
        p: DVector<f64>,
    ) -> Result<Self> {
        let w = margin_at(sys, e, &q)?;
        let (_, gram_inv) = geometry::gram_at(sys, &q)?;
        let k2 = p.dot(&(&gram_inv * &p)).max(0.0);
        if k2 == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(EnergyShellPoint {
            q,
            p: p * (2.0 * w / k2).sqrt(),
        })
    }

    /// Shell point carrying the momenta of the P-projection of v.
    pub fn from_velocity(
        sys: &SystemDefinition,
        e: f64,
        q: DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<Self> {
        let vm = project_p(sys, e, &q, v)?;
        let p = dynamics::momenta_from_velocity(sys, &q, &vm)?;
        Ok(EnergyShellPoint { q, p })
    }

    /// Membership defect |p . gram_inv p - 2 (e - V(q))|.
    pub fn defect(&self, sys: &SystemDefinition, e: f64) -> Result<f64> {
        let w = e - sys.potential_at(&self.q);
        let (_, gram_inv) = geometry::gram_at(sys, &self.q)?;
        Ok((self.p.dot(&(&gram_inv * &self.p)) - 2.0 * w).abs())
    }
}

/// Relative defect of the proportionality (e - V) * kinetic field =
/// mechanical field over the combined (dq/dt, dp/dt) vector at a shell point.
/// Exact on the shell; the returned value is pure floating-point noise there.
pub fn reeb_ratio_check(
    sys: &SystemDefinition,
    e: f64,
    pt: &EnergyShellPoint,
) -> Result<f64> {
    let state = AdaptedState::new(0.0, pt.q.clone(), pt.p.clone());
    let (qm, pm) = dynamics::mechanical_field(sys, &state)?;
    let (qj, pj) = dynamics::jacobi_field(sys, e, &state)?;
    let w = e - sys.potential_at(&pt.q);
    let num = (&qj * w - &qm).norm_squared() + (&pj * w - &pm).norm_squared();
    let den = qm.norm_squared() + pm.norm_squared();
    if den == 0.0 {
        // both fields vanish only at an equilibrium; report the absolute defect
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

/// Half-pairings of the momentum with the frame coefficients of each field's
/// base velocity: (kinetic, mechanical). On the shell the kinetic pairing is
/// exactly 1 and the mechanical pairing is e - V(q).
pub fn contact_pairing(
    sys: &SystemDefinition,
    e: f64,
    pt: &EnergyShellPoint,
) -> Result<(f64, f64)> {
    let state = AdaptedState::new(0.0, pt.q.clone(), pt.p.clone());
    let g = sys.metric_at(&pt.q)?;
    let x = sys.frame_at(&pt.q);
    let (_, gram_inv) = geometry::gram_of(sys, &pt.q, &g, &x)?;
    let (qm, _) = dynamics::mechanical_field(sys, &state)?;
    let (qj, _) = dynamics::jacobi_field(sys, e, &state)?;
    let coeff_m = &gram_inv * (x.transpose() * (&g * &qm));
    let coeff_j = &gram_inv * (x.transpose() * (&g * &qj));
    Ok((0.5 * pt.p.dot(&coeff_j), 0.5 * pt.p.dot(&coeff_m)))
}

fn ensure_increasing(h: &[f64]) -> Result<()> {
    for j in 1..h.len() {
        if h[j] <= h[j - 1] {
            return Err(Error::NonMonotone { index: j });
        }
    }
    Ok(())
}

/// Cumulative reparametrization along a mechanical trajectory:
/// h[j] = integral of e - V from the first sample time to sample j.
/// h[0] = 0 and the output increases strictly inside the Hill region.
pub fn reparametrization(
    sys: &SystemDefinition,
    e: f64,
    mech: &Trajectory,
) -> Result<Vec<f64>> {
    let mut ts = Vec::with_capacity(mech.samples.len());
    let mut ws = Vec::with_capacity(mech.samples.len());
    for s in &mech.samples {
        let w = e - sys.potential_at(&s.q);
        if w <= HILL_MARGIN {
            return Err(Error::HillBoundary { margin: w, t: s.t });
        }
        ts.push(s.t);
        ws.push(w);
    }
    let h = quad::cumulative(&ts, &ws);
    ensure_increasing(&h)?;
    Ok(h)
}

/// Inverse reparametrization: cumulative integral of 1 / (e - V) along a
/// kinetic trajectory of the rescaled metric, recovering mechanical time.
/// Well posed because the forward map is strictly increasing.
pub fn inverse_reparametrization(
    sys: &SystemDefinition,
    e: f64,
    kinetic: &Trajectory,
) -> Result<Vec<f64>> {
    let mut ts = Vec::with_capacity(kinetic.samples.len());
    let mut ws = Vec::with_capacity(kinetic.samples.len());
    for s in &kinetic.samples {
        let w = e - sys.potential_at(&s.q);
        if w <= HILL_MARGIN {
            return Err(Error::HillBoundary { margin: w, t: s.t });
        }
        ts.push(s.t);
        ws.push(1.0 / w);
    }
    let out = quad::cumulative(&ts, &ws);
    ensure_increasing(&out)?;
    Ok(out)
}

/// Tuning for [`verify_maupertuis`].
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Integrator used for both legs.
    pub method: Method,
    /// Number of uniform intervals in the comparison grid.
    pub grid_samples: usize,
    /// Pass threshold on the sup-norm position deviation.
    pub tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            method: Method::Rk4 { step: 1e-4 },
            grid_samples: 200,
            tol: 1e-6,
        }
    }
}

/// Outcome of one equivalence check between the mechanical leg and the
/// reparametrized kinetic leg.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub e: f64,
    /// Initial velocity of the mechanical leg (the P-projection, so reports
    /// do not depend on the magnitude of the requested velocity).
    pub v_q: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub max_position_deviation: f64,
    /// Sup of |dh/ds - (e - V)| over the grid, dh/ds estimated at fourth
    /// order from the h samples.
    pub max_h_residual: f64,
    pub h_samples: Vec<f64>,
    pub pass: bool,
}

/// Report plus the two integrated legs behind it.
#[derive(Debug, Clone)]
pub struct VerificationOutcome {
    pub report: VerificationReport,
    pub mechanical: Trajectory,
    pub kinetic: Trajectory,
}

/// Fourth-order first-derivative estimates on a uniform grid, one-sided
/// stencils at the two nodes nearest each end. Needs at least five samples.
fn derivative_stencil(h: &[f64], dt: f64) -> Vec<f64> {
    let k = h.len();
    debug_assert!(k >= 5);
    let mut out = vec![0.0; k];
    for j in 0..k {
        out[j] = if j >= 2 && j + 2 < k {
            (h[j - 2] - 8.0 * h[j - 1] + 8.0 * h[j + 1] - h[j + 2]) / (12.0 * dt)
        } else if j == 0 {
            (-25.0 * h[0] + 48.0 * h[1] - 36.0 * h[2] + 16.0 * h[3] - 3.0 * h[4]) / (12.0 * dt)
        } else if j == 1 {
            (-3.0 * h[0] - 10.0 * h[1] + 18.0 * h[2] - 6.0 * h[3] + h[4]) / (12.0 * dt)
        } else if j == k - 2 {
            (3.0 * h[k - 1] + 10.0 * h[k - 2] - 18.0 * h[k - 3] + 6.0 * h[k - 4] - h[k - 5])
                / (12.0 * dt)
        } else {
            (25.0 * h[k - 1] - 48.0 * h[k - 2] + 36.0 * h[k - 3] - 16.0 * h[k - 4]
                + 3.0 * h[k - 5])
                / (12.0 * dt)
        };
    }
    out
}

fn verify_core(
    sys: &SystemDefinition,
    e: f64,
    samples: &[AdaptedState],
    opts: &VerifyOptions,
) -> Result<(VerificationReport, Trajectory)> {
    if samples.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "verification needs at least 5 grid samples, got {}",
            samples.len()
        )));
    }
    let ts: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let dt = ts[1] - ts[0];
    let span = ts[ts.len() - 1] - ts[0];
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(
            "verification grid must increase".into(),
        ));
    }
    let slack = 1e-9 * span.abs().max(1.0);
    if ts
        .windows(2)
        .any(|pair| ((pair[1] - pair[0]) - dt).abs() > slack)
    {
        return Err(Error::InvalidInput(
            "verification grid must be uniform".into(),
        ));
    }

    let first = &samples[0];
    let start_defect = {
        let w = margin_at(sys, e, &first.q)?;
        let (_, gram_inv) = geometry::gram_at(sys, &first.q)?;
        (first.p.dot(&(&gram_inv * &first.p)) - 2.0 * w).abs()
    };
    if start_defect > SHELL_DRIFT {
        return Err(Error::NotOnSphere {
            residual: start_defect,
            tol: SHELL_DRIFT,
        });
    }

    let mut ws = Vec::with_capacity(samples.len());
    for s in samples {
        let w = e - sys.potential_at(&s.q);
        if w <= HILL_MARGIN {
            return Err(Error::HillBoundary { margin: w, t: s.t });
        }
        ws.push(w);
    }
    let h = quad::cumulative(&ts, &ws);
    ensure_increasing(&h)?;
    let h_end = h[h.len() - 1];

    let jfield = JacobiField { system: sys, e };
    let start = AdaptedState::new(0.0, first.q.clone(), first.p.clone());
    let iopts = IntegrateOptions {
        method: opts.method.clone(),
        ..Default::default()
    }
    .with_t_eval(h[1..h.len() - 1].to_vec());
    let kinetic = dynamics::integrate(&jfield, &start, h_end, &iopts).map_err(|err| {
        Error::LegFailed {
            leg: "kinetic",
            source: Box::new(err),
        }
    })?;

    let mut max_dev = 0.0f64;
    for (j, s) in samples.iter().enumerate() {
        let k = kinetic.sample_near(h[j]).ok_or_else(|| {
            Error::InvalidInput(format!("kinetic leg lost the sample at h = {}", h[j]))
        })?;
        max_dev = max_dev.max((&s.q - &k.q).norm());
    }

    let dh = derivative_stencil(&h, dt);
    let max_res = dh
        .iter()
        .zip(ws.iter())
        .map(|(d, w)| (d - w).abs())
        .fold(0.0f64, f64::max);

    let v0 = dynamics::velocity_from_momenta(sys, &first.q, &first.p)?;
    let report = VerificationReport {
        e,
        v_q: v0.iter().copied().collect(),
        s_grid: ts,
        max_position_deviation: max_dev,
        max_h_residual: max_res,
        h_samples: h,
        pass: max_dev <= opts.tol,
    };
    Ok((report, kinetic))
}

/// Runs the kinetic-leg comparison against externally produced mechanical
/// samples on a uniform time grid (closed-form solutions, other
/// integrators). The first sample must sit on the energy shell.
pub fn verify_against_mech(
    sys: &SystemDefinition,
    e: f64,
    samples: &[AdaptedState],
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    verify_core(sys, e, samples, opts).map(|(report, _)| report)
}

/// Full equivalence check returning both legs: projects v onto the
/// mechanical sphere, integrates the mechanical leg over [0, s_end] on a
/// uniform grid, computes h by quadrature, integrates the kinetic leg of the
/// rescaled metric from the same phase point over [0, h(s_end)], and
/// compares positions at matched parameters.
pub fn verify_full(
    sys: &SystemDefinition,
    e: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    s_end: f64,
    opts: &VerifyOptions,
) -> Result<VerificationOutcome> {
    if !s_end.is_finite() || s_end <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "s_end must be positive and finite, got {s_end}"
        )));
    }
    if opts.grid_samples < 8 {
        return Err(Error::InvalidInput(format!(
            "need at least 8 grid intervals, got {}",
            opts.grid_samples
        )));
    }
    let vm = project_p(sys, e, q, v)?;
    let p0 = dynamics::momenta_from_velocity(sys, q, &vm)?;
    let n_grid = opts.grid_samples;
    let s_grid: Vec<f64> = (0..=n_grid)
        .map(|j| s_end * j as f64 / n_grid as f64)
        .collect();

    let mfield = MechanicalField { system: sys };
    let start = AdaptedState::new(0.0, q.clone(), p0);
    let iopts = IntegrateOptions {
        method: opts.method.clone(),
        ..Default::default()
    }
    .with_t_eval(s_grid[1..n_grid].to_vec());
    let mechanical = dynamics::integrate(&mfield, &start, s_end, &iopts).map_err(|err| {
        Error::LegFailed {
            leg: "mechanical",
            source: Box::new(err),
        }
    })?;

    let mut states = Vec::with_capacity(s_grid.len());
    for s in &s_grid {
        let st = mechanical.sample_near(*s).ok_or_else(|| {
            Error::InvalidInput(format!("mechanical leg lost the sample at s = {s}"))
        })?;
        states.push(st.clone());
    }
    let (report, kinetic) = verify_core(sys, e, &states, opts)?;
    Ok(VerificationOutcome {
        report,
        mechanical,
        kinetic,
    })
}

/// The headline equivalence check; see [`verify_full`] for the procedure.
pub fn verify_maupertuis(
    sys: &SystemDefinition,
    e: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    s_end: f64,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    verify_full(sys, e, q, v, s_end, opts).map(|outcome| outcome.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PhaseField;
    use crate::geometry::{MatrixField, ScalarField, VectorFieldFn};
    use crate::systems;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector, DMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn sys_named(name: &str) -> SystemDefinition {
        systems::builtin(name).unwrap().definition
    }

    fn random_disk_q(rng: &mut ChaCha8Rng) -> DVector<f64> {
        dvector![
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.8..0.8)
        ]
    }

    fn random_particle_q(rng: &mut ChaCha8Rng) -> DVector<f64> {
        dvector![
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0)
        ]
    }

    fn random_q(name: &str, rng: &mut ChaCha8Rng) -> DVector<f64> {
        if name.starts_with("disk") {
            random_disk_q(rng)
        } else {
            random_particle_q(rng)
        }
    }

    fn random_frame_velocity(
        sys: &SystemDefinition,
        q: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> DVector<f64> {
        let x = sys.frame_at(q);
        loop {
            let coeff = DVector::from_fn(sys.rank(), |_, _| rng.gen_range(-1.0..1.0));
            if coeff.norm() > 0.2 {
                return &x * coeff;
            }
        }
    }

    #[test]
    fn jacobi_system_rescales_metric_and_keeps_projector() {
        let free = sys_named("disk-free");
        let jfree = jacobi_system(&free, 1.0);
        assert_eq!(jfree.name(), "disk-free-jacobi");
        let q = dvector![0.3, -0.2, 0.5, 0.7];
        let g = jfree.metric_at(&q).unwrap();
        assert_relative_eq!(g, DMatrix::identity(4, 4), epsilon = 1e-15);

        let linear = sys_named("disk-linear");
        let jlin = jacobi_system(&linear, 2.0);
        let q = dvector![0.0, 0.0, 0.0, 0.5];
        let g = jlin.metric_at(&q).unwrap();
        assert_relative_eq!(g, DMatrix::identity(4, 4) * 1.5, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ["disk-harmonic", "particle-r3-linear"] {
            let sys = sys_named(name);
            let jsys = jacobi_system(&sys, 2.0);
            for _ in 0..100 {
                let q = random_q(name, &mut rng);
                let p_orig = geometry::projector_at(&sys, &q).unwrap();
                let p_resc = geometry::projector_at(&jsys, &q).unwrap();
                assert_relative_eq!(p_orig, p_resc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_metric_degenerates_outside_hill_region() {
        let jlin = jacobi_system(&sys_named("disk-linear"), 2.0);
        let err = jlin.metric_at(&dvector![0.0, 0.0, 0.0, 5.0]).unwrap_err();
        assert_eq!(err.code(), "MetricSingular");
    }

    // Two routes to the same vector field: the kinetic equations of the
    // rescaled system (metric derivatives by finite differences) against the
    // rescaled form of the original equations (analytic potential gradient).
    #[test]
    fn rescaled_system_mechanics_equal_jacobi_field() {
        let sys = sys_named("disk-harmonic");
        let e = 1.7;
        let jsys = jacobi_system(&sys, e);
        let mech_of_rescaled = MechanicalField { system: &jsys };
        let jfield = JacobiField { system: &sys, e };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let q = random_disk_q(&mut rng);
            let p = DVector::from_fn(2, |_, _| rng.gen_range(-1.5..1.5));
            let state = AdaptedState::new(0.0, q, p);
            let (qa, pa) = mech_of_rescaled.rates(&state).unwrap();
            let (qb, pb) = jfield.rates(&state).unwrap();
            assert_relative_eq!(qa, qb, epsilon = 1e-12);
            assert_relative_eq!(pa, pb, epsilon = 1e-9);
        }
    }

    #[test]
    fn project_p_reaches_the_mechanical_sphere() {
        let particle = sys_named("particle-r3-linear");
        let q = dvector![0.0, 0.0, 0.0];
        let out = project_p(&particle, 1.0, &q, &dvector![1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(out, dvector![2f64.sqrt(), 0.0, 0.0], epsilon = 1e-15);

        // already on the sphere: projection is the identity there
        let again = project_p(&particle, 1.0, &q, &out).unwrap();
        assert_relative_eq!(again, out, epsilon = 1e-14);

        // |v|^2_G = 2 Omega^2 + omega^2 = 3 equals 2(e - V) at e = 3/2
        let disk = sys_named("disk-harmonic");
        let q0 = dvector![0.0, 0.0, 0.0, 0.0];
        let v = dvector![1.0, 0.0, 1.0, 1.0];
        let out = project_p(&disk, 1.5, &q0, &v).unwrap();
        assert_relative_eq!(out, v, epsilon = 1e-14);
    }

    #[test]
    fn project_q_has_unit_rescaled_energy() {
        let particle = sys_named("particle-r3-linear");
        let q = dvector![0.0, 0.0, 0.0];
        let out = project_q(&particle, 1.0, &q, &dvector![1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(out, dvector![2f64.sqrt(), 0.0, 0.0], epsilon = 1e-15);

        let disk = sys_named("disk-harmonic");
        let e = 1.5;
        let q0 = dvector![0.0, 0.0, 0.0, 0.0];
        let v = dvector![1.0, 0.0, 1.0, 1.0];
        let out = project_q(&disk, e, &q0, &v).unwrap();
        assert_relative_eq!(out, &v * (2.0 / 3.0), epsilon = 1e-14);

        // momenta of Q(v) in the rescaled metric have unit kinetic energy
        let w = e - disk.potential_at(&q0);
        let p = dynamics::momenta_from_velocity(&disk, &q0, &out).unwrap() * w;
        let energy = dynamics::jacobi_energy(&disk, e, &q0, &p).unwrap();
        assert_relative_eq!(energy, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn projections_reject_bad_inputs() {
        let disk = sys_named("disk-harmonic");
        let q0 = dvector![0.0, 0.0, 0.0, 0.0];
        let zero = dvector![0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            project_p(&disk, 1.0, &q0, &zero).unwrap_err().code(),
            "ZeroVector"
        );
        // x-translation is not admissible for the rolling constraint
        let bad = dvector![1.0, 0.0, 0.0, 0.0];
        assert_eq!(
            project_p(&disk, 1.0, &q0, &bad).unwrap_err().code(),
            "NotInDistribution"
        );
        let particle = sys_named("particle-r3-linear");
        let high = dvector![0.0, 0.0, 1.0];
        let v = dvector![1.0, 0.0, 0.0];
        assert_eq!(
            project_p(&particle, 1.0, &high, &v).unwrap_err().code(),
            "HillBoundary"
        );
        assert_eq!(
            project_q(&particle, 1.0, &high, &v).unwrap_err().code(),
            "HillBoundary"
        );
    }

    #[test]
    fn psi_rescales_spheres_and_commutes_with_projections() {
        let particle = sys_named("particle-r3-linear");
        // e - V = 1: the map is the identity
        let q = dvector![0.0, 0.0, 0.0];
        let v = dvector![2f64.sqrt(), 0.0, 0.0];
        let out = psi(&particle, 1.0, &q, &v).unwrap();
        assert_relative_eq!(out, v, epsilon = 1e-15);

        // e - V = 2: norm-2 input lands on the radius-1 sphere
        let low = dvector![0.0, 0.0, -1.0];
        let v = dvector![2.0, 0.0, 0.0];
        let out = psi(&particle, 1.0, &low, &v).unwrap();
        assert_relative_eq!(out, dvector![1.0, 0.0, 0.0], epsilon = 1e-15);

        let err = psi(&particle, 1.0, &low, &dvector![1.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(err.code(), "NotOnSphere");

        let disk = sys_named("disk-harmonic");
        let e = 1.5;
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..100 {
            let q = random_disk_q(&mut rng);
            let v = random_frame_velocity(&disk, &q, &mut rng);
            let p_img = project_p(&disk, e, &q, &v).unwrap();
            let through_psi = psi(&disk, e, &q, &p_img).unwrap();
            let q_img = project_q(&disk, e, &q, &v).unwrap();
            assert_relative_eq!(through_psi, q_img, epsilon = 1e-12);
        }
    }

    #[test]
    fn shell_points_gate_membership() {
        let disk = sys_named("disk-harmonic");
        let q0 = dvector![0.0, 0.0, 0.0, 0.0];
        // gram = diag(2, 1): p = (2, 0) has p . gram_inv p = 2 = 2(e - V)
        let ok = EnergyShellPoint::new(&disk, 1.0, q0.clone(), dvector![2.0, 0.0]);
        assert!(ok.is_ok());
        let off = EnergyShellPoint::new(&disk, 1.0, q0.clone(), dvector![2.0, 1e-4]);
        assert_eq!(off.unwrap_err().code(), "NotOnSphere");

        let pt =
            EnergyShellPoint::rescale(&disk, 1.0, q0.clone(), dvector![1.0, 1.0]).unwrap();
        assert!(pt.defect(&disk, 1.0).unwrap() <= 1e-14);

        let v = dvector![1.0, 0.0, 1.0, 1.0];
        let from_v = EnergyShellPoint::from_velocity(&disk, 1.5, q0.clone(), &v).unwrap();
        let vm = project_p(&disk, 1.5, &q0, &v).unwrap();
        let expect = dynamics::momenta_from_velocity(&disk, &q0, &vm).unwrap();
        assert_relative_eq!(from_v.p, expect, epsilon = 1e-14);
        assert!(from_v.defect(&disk, 1.5).unwrap() <= 1e-14);
    }

    fn integrate_mech(
        sys: &SystemDefinition,
        q0: DVector<f64>,
        p0: DVector<f64>,
        t_end: f64,
        step: f64,
    ) -> Trajectory {
        let field = MechanicalField { system: sys };
        let start = AdaptedState::new(0.0, q0, p0);
        dynamics::integrate(&field, &start, t_end, &IntegrateOptions::rk4(step)).unwrap()
    }

    #[test]
    fn reparametrization_matches_closed_forms() {
        // rolling disk with linear potential: h(s) = 2s + s^3/6 - s^2/2
        let linear = sys_named("disk-linear");
        let q0 = dvector![0.0, 0.0, 0.0, 0.0];
        let traj = integrate_mech(&linear, q0.clone(), dvector![2.0, 1.0], 1.0, 1e-3);
        let h = reparametrization(&linear, 2.0, &traj).unwrap();
        assert_eq!(h[0], 0.0);
        for (state, hj) in traj.samples.iter().zip(h.iter()) {
            let expect = systems::analytic_h("disk-linear", 2.0, 0.0, 1.0, state.t).unwrap();
            assert_relative_eq!(*hj, expect, epsilon = 1e-9);
        }
        assert_relative_eq!(*h.last().unwrap(), 5.0 / 3.0, epsilon = 1e-9);

        // harmonic potential, e = 1, steering rate 1: h(pi) = 3 pi / 4
        let harmonic = sys_named("disk-harmonic");
        let omega = 0.5f64.sqrt();
        let traj = integrate_mech(
            &harmonic,
            q0.clone(),
            dvector![2.0 * omega, 1.0],
            std::f64::consts::PI,
            1e-3,
        );
        let h = reparametrization(&harmonic, 1.0, &traj).unwrap();
        for (state, hj) in traj.samples.iter().zip(h.iter()) {
            let expect = systems::analytic_h("disk-harmonic", 1.0, 0.0, 1.0, state.t).unwrap();
            assert_relative_eq!(*hj, expect, epsilon = 1e-9);
        }
        assert_relative_eq!(
            *h.last().unwrap(),
            0.75 * std::f64::consts::PI,
            epsilon = 1e-9
        );

        // no potential: h(s) = e s to roundoff
        let free = sys_named("disk-free");
        let traj = integrate_mech(&free, q0, dvector![1.0, 0.5], 1.0, 1e-3);
        let h = reparametrization(&free, 1.3, &traj).unwrap();
        for (state, hj) in traj.samples.iter().zip(h.iter()) {
            assert_relative_eq!(*hj, 1.3 * state.t, epsilon = 1e-12);
        }
    }

    fn hand_trajectory(zs: &[f64]) -> Trajectory {
        let samples = zs
            .iter()
            .enumerate()
            .map(|(j, z)| AdaptedState::new(j as f64, dvector![0.0, 0.0, *z], dvector![0.1, 0.0]))
            .collect();
        Trajectory {
            system: "particle-r3-linear".into(),
            field: "mechanical".into(),
            method: Method::Rk4 { step: 1.0 },
            samples,
            energy: Vec::new(),
        }
    }

    #[test]
    fn reparametrization_failure_modes() {
        let particle = sys_named("particle-r3-linear");
        // a sample exactly on the boundary e = V
        let at_boundary = hand_trajectory(&[0.5, 0.8, 1.0, 0.7]);
        let err = reparametrization(&particle, 1.0, &at_boundary).unwrap_err();
        match err {
            Error::HillBoundary { t, .. } => assert_eq!(t, 2.0),
            other => panic!("expected HillBoundary, got {other:?}"),
        }

        // legal margins arranged so the local cubic overshoots negative
        let spike = hand_trajectory(&[0.99, 0.99, 0.99, -9.0]);
        let err = reparametrization(&particle, 1.0, &spike).unwrap_err();
        match err {
            Error::NonMonotone { index } => assert_eq!(index, 2),
            other => panic!("expected NonMonotone, got {other:?}"),
        }
    }

    #[test]
    fn inverse_reparametrization_recovers_mechanical_time() {
        // kinetic leg built from the closed-form mechanical solution: sample
        // the inverse map at uniform kinetic times via Newton on h
        let linear = sys_named("disk-linear");
        let (e, omega) = (2.0, 1.0);
        let h = |s: f64| e * s + s * s * s / 6.0 - omega * s * s / 2.0;
        let dh = |s: f64| e + s * s / 2.0 - omega * s;
        let h_end = h(1.0);
        let n = 200;
        let mut samples = Vec::with_capacity(n + 1);
        let mut s_exact = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let tau = h_end * k as f64 / n as f64;
            let mut s = tau / e;
            for _ in 0..60 {
                let step = (h(s) - tau) / dh(s);
                s -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            let state = systems::analytic_state("disk-linear", &DVector::zeros(4), 1.0, omega, s)
                .unwrap();
            samples.push(AdaptedState::new(
                tau,
                state.q.clone(),
                dvector![2.0, omega - s],
            ));
            s_exact.push(s);
        }
        let kinetic = Trajectory {
            system: "disk-linear".into(),
            field: "jacobi-kinetic".into(),
            method: Method::Rk4 { step: 1.0 },
            samples,
            energy: Vec::new(),
        };
        let s_back = inverse_reparametrization(&linear, e, &kinetic).unwrap();
        for (got, expect) in s_back.iter().zip(s_exact.iter()) {
            assert_relative_eq!(*got, *expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn verify_disk_linear_passes_with_closed_form_h() {
        let linear = sys_named("disk-linear");
        let q0 = dvector![0.0, 0.0, 0.0, 0.0];
        let v = dvector![1.0, 0.0, 1.0, 1.0];
        let outcome =
            verify_full(&linear, 2.0, &q0, &v, 1.0, &VerifyOptions::default()).unwrap();
        let report = &outcome.report;
        assert!(report.pass);
        assert!(report.max_position_deviation <= 1e-6);
        assert!(report.max_h_residual <= 1e-9);
        assert_eq!(report.h_samples[0], 0.0);
        assert!(report
            .h_samples
            .windows(2)
            .all(|pair| pair[1] > pair[0]));

        // P scales v by sqrt(4/3), so the steering rate becomes sqrt(4/3)
        let scale = (4.0f64 / 3.0).sqrt();
        assert_relative_eq!(
            DVector::from_vec(report.v_q.clone()),
            &v * scale,
            epsilon = 1e-12
        );
        let expect_h = systems::analytic_h("disk-linear", 2.0, 0.0, scale, 1.0).unwrap();
        assert_relative_eq!(*report.h_samples.last().unwrap(), expect_h, epsilon = 1e-8);
        assert_eq!(outcome.mechanical.field, "mechanical");
        assert_eq!(outcome.kinetic.field, "jacobi-kinetic");
    }

    #[test]
    fn verify_passes_on_every_builtin() {
        let opts = VerifyOptions {
            method: Method::Rk4 { step: 1e-3 },
            grid_samples: 200,
            tol: 1e-6,
        };
        let cases = [
            ("particle-r3-linear", dvector![0.1, 0.3, -0.2], 1.5),
            ("disk-harmonic", dvector![0.0, 0.0, 0.0, 0.2], 1.5),
            ("disk-linear", dvector![0.0, 0.0, 0.0, 0.2], 1.5),
            ("disk-free", dvector![0.0, 0.0, 0.0, 0.2], 1.5),
        ];
        for (name, q0, e) in cases {
            let sys = sys_named(name);
            let x = sys.frame_at(&q0);
            let v = &x * dvector![1.0, 0.7];
            let report = verify_maupertuis(&sys, e, &q0, &v, 1.0, &opts).unwrap();
            assert!(
                report.pass && report.max_h_residual <= 1e-9,
                "{name}: dev {:.3e}, residual {:.3e}",
                report.max_position_deviation,
                report.max_h_residual
            );
        }
    }

    #[test]
    fn verify_report_ignores_velocity_magnitude() {
        let harmonic = sys_named("disk-harmonic");
        let q0 = dvector![0.0, 0.0, 0.0, 0.1];
        let x = harmonic.frame_at(&q0);
        let v = &x * dvector![1.0, 0.5];
        let opts = VerifyOptions {
            method: Method::Rk4 { step: 1e-3 },
            grid_samples: 50,
            tol: 1e-6,
        };
        let base = verify_maupertuis(&harmonic, 1.0, &q0, &v, 1.0, &opts).unwrap();
        let doubled = verify_maupertuis(&harmonic, 1.0, &q0, &(&v * 2.0), 1.0, &opts).unwrap();
        assert_eq!(
            serde_json::to_string(&base).unwrap(),
            serde_json::to_string(&doubled).unwrap()
        );
        let tripled = verify_maupertuis(&harmonic, 1.0, &q0, &(&v * 3.0), 1.0, &opts).unwrap();
        assert_relative_eq!(
            base.max_position_deviation,
            tripled.max_position_deviation,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            DVector::from_vec(base.v_q.clone()),
            DVector::from_vec(tripled.v_q.clone()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn verify_accepts_closed_form_mechanical_leg() {
        // the same initial data as the integrated disk-linear run, but the
        // mechanical samples come from the closed-form solution
        let linear = sys_named("disk-linear");
        let scale = (4.0f64 / 3.0).sqrt();
        let (roll, steer) = (scale, scale);
        let n = 100;
        let mut states = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let s = j as f64 / n as f64;
            let sample =
                systems::analytic_state("disk-linear", &DVector::zeros(4), roll, steer, s)
                    .unwrap();
            states.push(AdaptedState::new(
                s,
                sample.q.clone(),
                dvector![2.0 * roll, steer - s],
            ));
        }
        let opts = VerifyOptions {
            method: Method::Rk4 { step: 1e-3 },
            grid_samples: n,
            tol: 1e-6,
        };
        let report = verify_against_mech(&linear, 2.0, &states, &opts).unwrap();
        assert!(report.pass);
        assert!(report.max_position_deviation <= 1e-8);
        // e - V is quadratic along this leg, so the quadrature and the
        // stencils are both exact and the residual is pure roundoff
        assert!(report.max_h_residual <= 1e-11);
    }

    #[test]
    fn verify_requires_uniform_increasing_grid() {
        let free = sys_named("disk-free");
        let opts = VerifyOptions::default();
        let state = |t: f64| AdaptedState::new(t, dvector![0.0, 0.0, 0.0, 0.0], dvector![2.0, 0.0]);
        let uneven: Vec<_> = [0.0, 0.1, 0.25, 0.4, 0.6].iter().map(|&t| state(t)).collect();
        let err = verify_against_mech(&free, 1.0, &uneven, &opts).unwrap_err();
        assert_eq!(err.code(), "InvalidInput");
        let short: Vec<_> = [0.0, 0.1, 0.2, 0.3].iter().map(|&t| state(t)).collect();
        let err = verify_against_mech(&free, 1.0, &short, &opts).unwrap_err();
        assert_eq!(err.code(), "InvalidInput");
        let off_shell: Vec<_> = (0..6)
            .map(|j| AdaptedState::new(j as f64 * 0.1, DVector::zeros(4), dvector![1.0, 0.0]))
            .collect();
        let err = verify_against_mech(&free, 1.0, &off_shell, &opts).unwrap_err();
        assert_eq!(err.code(), "NotOnSphere");
    }

    #[test]
    fn verify_reports_the_failing_leg() {
        // 1-d system whose metric degenerates at |q| = sqrt(2); the
        // mechanical leg runs into it and the error names that leg
        let metric: MatrixField = Arc::new(|q: &DVector<f64>| dmatrix![2.0 - q[0] * q[0]]);
        let potential: ScalarField = Arc::new(|_| 0.0);
        let frame: Vec<VectorFieldFn> = vec![Arc::new(|_| dvector![1.0])];
        let sys = SystemDefinition::new("shrinking-line", 1, 1, metric, potential, frame);
        let q0 = dvector![1.2];
        let v = dvector![1.0];
        // kinetic energy of v is 0.28, so e = 0.28 keeps P(v) = v
        let err = verify_maupertuis(
            &sys,
            0.28,
            &q0,
            &v,
            1.0,
            &VerifyOptions {
                method: Method::Rk4 { step: 1e-3 },
                grid_samples: 50,
                tol: 1e-6,
            },
        )
        .unwrap_err();
        match &err {
            Error::LegFailed { leg, .. } => assert_eq!(*leg, "mechanical"),
            other => panic!("expected LegFailed, got {other:?}"),
        }
        assert_eq!(err.code(), "MetricSingular");
    }

    // Forced output times cap the marching step at the grid spacing, so the
    // whole procedure refines together: halving the grid halves the step.
    #[test]
    fn verify_deviation_shrinks_at_fourth_order() {
        let harmonic = sys_named("disk-harmonic");
        let q0 = dvector![0.0, 0.0, 0.0, 0.3];
        let x = harmonic.frame_at(&q0);
        let v = &x * dvector![1.0, 1.0];
        let run = |step: f64, grid_samples: usize| {
            let opts = VerifyOptions {
                method: Method::Rk4 { step },
                grid_samples,
                tol: 1e-3,
            };
            verify_maupertuis(&harmonic, 1.0, &q0, &v, 1.0, &opts)
                .unwrap()
                .max_position_deviation
        };
        let coarse = run(2e-2, 50);
        let fine = run(1e-2, 100);
        assert!(coarse > 1e-10, "coarse deviation at noise floor: {coarse:.3e}");
        let ratio = coarse / fine;
        assert!(
            (8.0..40.0).contains(&ratio),
            "expected ~16x shrink, got {ratio:.2} ({coarse:.3e} -> {fine:.3e})"
        );
    }

    #[test]
    fn reeb_proportionality_hand_values() {
        let particle = sys_named("particle-r3-linear");
        // q = origin: gram is the identity, structure functions vanish
        let pt = EnergyShellPoint::new(&particle, 1.0, DVector::zeros(3), dvector![1.0, 1.0])
            .unwrap();
        let state = AdaptedState::new(0.0, pt.q.clone(), pt.p.clone());
        let (qm, pm) = dynamics::mechanical_field(&particle, &state).unwrap();
        assert_relative_eq!(qm, dvector![1.0, 1.0, 0.0], epsilon = 1e-14);
        assert_relative_eq!(pm, dvector![0.0, 0.0], epsilon = 1e-14);
        assert!(reeb_ratio_check(&particle, 1.0, &pt).unwrap() <= 1e-13);

        // q = (0, 1, -3), e = 1: e - V = 4, p = (2 sqrt 2, 2) sits on the
        // shell since gram = diag(2, 1); worked out by hand from the frame
        let q = dvector![0.0, 1.0, -3.0];
        let p = dvector![2.0 * 2f64.sqrt(), 2.0];
        let pt = EnergyShellPoint::new(&particle, 1.0, q, p).unwrap();
        let state = AdaptedState::new(0.0, pt.q.clone(), pt.p.clone());
        let r2 = 2f64.sqrt();
        let (qm, pm) = dynamics::mechanical_field(&particle, &state).unwrap();
        assert_relative_eq!(qm, dvector![r2, 2.0, r2], epsilon = 1e-12);
        assert_relative_eq!(pm, dvector![2.0 * r2 - 1.0, 0.0], epsilon = 1e-12);
        let (qj, pj) = dynamics::jacobi_field(&particle, 1.0, &state).unwrap();
        assert_relative_eq!(qj, qm / 4.0, epsilon = 1e-12);
        assert_relative_eq!(pj, pm / 4.0, epsilon = 1e-12);
        assert!(reeb_ratio_check(&particle, 1.0, &pt).unwrap() <= 1e-13);
    }

    #[test]
    fn reeb_proportionality_on_random_shell_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for name in systems::BUILTIN_NAMES {
            let sys = sys_named(name);
            for _ in 0..50 {
                let q = random_q(name, &mut rng);
                let p = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
                if p.norm() < 0.2 {
                    continue;
                }
                let pt = EnergyShellPoint::rescale(&sys, 1.5, q, p).unwrap();
                let ratio = reeb_ratio_check(&sys, 1.5, &pt).unwrap();
                assert!(ratio <= 1e-12, "{name}: reeb defect {ratio:.3e}");
            }
        }
    }

    #[test]
    fn reeb_proportionality_fails_off_shell() {
        let particle = sys_named("particle-r3-linear");
        let pt = EnergyShellPoint {
            q: dvector![0.0, 1.0, -3.0],
            p: dvector![2.0 * 2f64.sqrt() * 1.3, 2.6],
        };
        assert!(reeb_ratio_check(&particle, 1.0, &pt).unwrap() > 1e-6);
    }

    #[test]
    fn contact_pairings_on_the_shell() {
        let particle = sys_named("particle-r3-linear");
        let pt = EnergyShellPoint::new(
            &particle,
            1.0,
            dvector![0.0, 1.0, -3.0],
            dvector![2.0 * 2f64.sqrt(), 2.0],
        )
        .unwrap();
        let (kin, mech) = contact_pairing(&particle, 1.0, &pt).unwrap();
        assert_relative_eq!(kin, 1.0, epsilon = 1e-12);
        assert_relative_eq!(mech, 4.0, epsilon = 1e-12);

        // without a potential and at e = 1 the two pairings coincide
        let free = sys_named("disk-free");
        let pt = EnergyShellPoint::rescale(
            &free,
            1.0,
            dvector![0.0, 0.0, 0.0, 0.4],
            dvector![1.0, -0.7],
        )
        .unwrap();
        let (kin, mech) = contact_pairing(&free, 1.0, &pt).unwrap();
        assert_relative_eq!(kin, 1.0, epsilon = 1e-12);
        assert_relative_eq!(mech, 1.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for name in systems::BUILTIN_NAMES {
            let sys = sys_named(name);
            for _ in 0..50 {
                let q = random_q(name, &mut rng);
                let p = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
                if p.norm() < 0.2 {
                    continue;
                }
                let e = 1.5;
                let pt = EnergyShellPoint::rescale(&sys, e, q, p).unwrap();
                let w = e - sys.potential_at(&pt.q);
                let (kin, mech) = contact_pairing(&sys, e, &pt).unwrap();
                assert_relative_eq!(kin, 1.0, epsilon = 1e-10);
                assert_relative_eq!(mech, w, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn mechanical_flow_preserves_the_shell() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        for name in ["particle-r3-linear", "disk-harmonic"] {
            let sys = sys_named(name);
            let q = random_q(name, &mut rng);
            let p = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let pt = EnergyShellPoint::rescale(&sys, 1.5, q, p).unwrap();
            let traj = integrate_mech(&sys, pt.q.clone(), pt.p.clone(), 1.0, 1e-3);
            for state in &traj.samples {
                let moving = EnergyShellPoint {
                    q: state.q.clone(),
                    p: state.p.clone(),
                };
                let defect = moving.defect(&sys, 1.5).unwrap();
                assert!(defect <= 1e-8, "{name}: shell defect {defect:.3e}");
            }
        }
    }

    #[test]
    fn report_serializes_with_pinned_fields() {
        let free = sys_named("disk-free");
        let q0 = dvector![0.0, 0.0, 0.0, 0.0];
        let v = dvector![1.0, 0.0, 1.0, 1.0];
        let opts = VerifyOptions {
            method: Method::Rk4 { step: 1e-2 },
            grid_samples: 10,
            tol: 1e-6,
        };
        let report = verify_maupertuis(&free, 1.0, &q0, &v, 0.5, &opts).unwrap();
        let value = serde_json::to_value(&report).unwrap();
        let keys: BTreeSet<String> = value
            .as_object()
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let expected: BTreeSet<String> = [
            "e",
            "v_q",
            "s_grid",
            "max_position_deviation",
            "max_h_residual",
            "h_samples",
            "pass",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(keys, expected);
        let back: VerificationReport = serde_json::from_value(value).unwrap();
        assert_eq!(back.pass, report.pass);
        assert_eq!(back.h_samples, report.h_samples);
    }
}
