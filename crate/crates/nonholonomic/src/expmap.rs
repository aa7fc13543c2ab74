//! Exponential-type maps of a constrained system: the kinetic map (time-t
//! endpoint of the constrained geodesic flow), its counterpart at a fixed
//! mechanical energy, finite-difference differentials at the origin, image
//! grids over stars of directions, and the closed-form inverses available for
//! the rolling-disk examples.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{self, AdaptedState, JacobiField, MechanicalField, HILL_MARGIN};
use crate::error::{Error, Result};
use crate::geometry::{self, SystemDefinition};
use crate::solver::{IntegrateOptions, Method};
use crate::systems::{self, DiskVariant};

/// Gradient entries below this count as a constant potential.
const KINETIC_GRAD_TOL: f64 = 1e-10;

/// Chart offset of the constant-potential probe points around the base point.
const KINETIC_PROBE_OFFSET: f64 = 0.1;

/// Admissible g-norm defect of a grid direction.
const UNIT_DIRECTION_TOL: f64 = 1e-9;

/// Tuning for the exponential maps.
#[derive(Debug, Clone)]
pub struct ExpOptions {
    /// Integrator driving the underlying flows.
    pub method: Method,
    /// Energy margin of the admissible ball: velocities are flagged beyond
    /// g-radius sqrt(2 eps / (e - V(q))). The analytic radius is existential,
    /// so the bound is soft.
    pub ball_epsilon: f64,
}

impl Default for ExpOptions {
    fn default() -> Self {
        ExpOptions {
            method: Method::Rk4 { step: 1e-3 },
            ball_epsilon: 0.5,
        }
    }
}

fn flow_options(method: &Method) -> IntegrateOptions {
    IntegrateOptions {
        method: method.clone(),
        ..Default::default()
    }
}

fn check_chart_vectors(sys: &SystemDefinition, q: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
    if q.len() != sys.dim() || v.len() != sys.dim() {
        return Err(Error::InvalidInput(format!(
            "expected chart vectors of length {}, got point {} and velocity {}",
            sys.dim(),
            q.len(),
            v.len()
        )));
    }
    Ok(())
}

/// Worst potential-gradient entry near q, probed at q and at q +- 0.1 along
/// each chart axis.
fn potential_variation(sys: &SystemDefinition, q: &DVector<f64>) -> Result<f64> {
    let mut worst = sys.potential_differential_at(q)?.amax();
    for i in 0..sys.dim() {
        for sign in [-1.0, 1.0] {
            let mut probe = q.clone();
            probe[i] += sign * KINETIC_PROBE_OFFSET;
            worst = worst.max(sys.potential_differential_at(&probe)?.amax());
        }
    }
    Ok(worst)
}

/// Chart endpoint of the constrained mechanical trajectory from velocity v
/// after time t. No energy level enters; for a system without potential this
/// is the kinetic exponential, and the disk closed-form inverses invert it at
/// t = 1.
pub fn mechanical_endpoint(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    v: &DVector<f64>,
    t: f64,
    opts: &ExpOptions,
) -> Result<DVector<f64>> {
    check_chart_vectors(sys, q, v)?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidInput(format!(
            "flow time must be nonnegative and finite, got {t}"
        )));
    }
    let p0 = dynamics::momenta_from_velocity(sys, q, v)?;
    if t == 0.0 {
        return Ok(q.clone());
    }
    let field = MechanicalField { system: sys };
    let start = AdaptedState::new(0.0, q.clone(), p0);
    let traj = dynamics::integrate(&field, &start, t, &flow_options(&opts.method))?;
    Ok(traj.samples.last().expect("trajectory holds its start").q.clone())
}

/// Kinetic nonholonomic exponential: endpoint at time t of the constrained
/// geodesic flow from (q, v). Defined only where the potential is constant;
/// exp(q, c v, t) = exp(q, v, c t) in exact arithmetic.
pub fn exp_nh(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    v: &DVector<f64>,
    t: f64,
    opts: &ExpOptions,
) -> Result<DVector<f64>> {
    check_chart_vectors(sys, q, v)?;
    let variation = potential_variation(sys, q)?;
    if variation > KINETIC_GRAD_TOL {
        return Err(Error::NotKinetic { variation });
    }
    mechanical_endpoint(sys, q, v, t, opts)
}

/// Endpoint of the energy-e exponential plus the admissibility flag of the
/// configured velocity ball.
#[derive(Debug, Clone)]
pub struct MechExpPoint {
    pub endpoint: DVector<f64>,
    /// The requested velocity fell outside the configured ball; the endpoint
    /// is still the integrated one.
    pub ball_exceeded: bool,
}

/// Mechanical exponential at energy e: time-1 endpoint of the kinetic flow of
/// the rescaled metric (e - V) G from velocity v.
pub fn exp_nh_mech(
    sys: &SystemDefinition,
    e: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    opts: &ExpOptions,
) -> Result<MechExpPoint> {
    check_chart_vectors(sys, q, v)?;
    let w = e - sys.potential_at(q);
    if w <= HILL_MARGIN {
        return Err(Error::HillBoundary { margin: w, t: 0.0 });
    }
    let g = sys.metric_at(q)?;
    let vnorm = v.dot(&(&g * v)).max(0.0).sqrt();
    let ball_exceeded = vnorm > (2.0 * opts.ball_epsilon / w).sqrt();
    // conformal momenta: the flow starts with chart velocity exactly v
    let p0 = dynamics::momenta_from_velocity(sys, q, v)? * w;
    let field = JacobiField { system: sys, e };
    let start = AdaptedState::new(0.0, q.clone(), p0);
    let traj = dynamics::integrate(&field, &start, 1.0, &flow_options(&opts.method))?;
    Ok(MechExpPoint {
        endpoint: traj.samples.last().expect("trajectory holds its start").q.clone(),
        ball_exceeded,
    })
}

fn map_endpoint(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    v: &DVector<f64>,
    e: Option<f64>,
    opts: &ExpOptions,
) -> Result<DVector<f64>> {
    match e {
        None => exp_nh(sys, q, v, 1.0, opts),
        Some(e) => exp_nh_mech(sys, e, q, v, opts).map(|pt| pt.endpoint),
    }
}

/// Central-difference differential of the exponential map at the origin of
/// the distribution fiber, in frame coefficients, returned as the defect from
/// the identity matrix. The defect shrinks quadratically in the difference
/// step for a smooth map. Pass an energy for the mechanical map, none for the
/// kinetic one.
pub fn differential_at_zero(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    e: Option<f64>,
    delta: f64,
    opts: &ExpOptions,
) -> Result<DMatrix<f64>> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "difference step must be positive and finite, got {delta}"
        )));
    }
    let x = sys.frame_at(q);
    let g = sys.metric_at(q)?;
    let (_, gram_inv) = geometry::gram_of(sys, q, &g, &x)?;
    let m = sys.rank();
    let mut b = DMatrix::zeros(m, m);
    for a in 0..m {
        let dir = x.column(a).clone_owned();
        let plus = map_endpoint(sys, q, &(&dir * delta), e, opts)?;
        let minus = map_endpoint(sys, q, &(&dir * -delta), e, opts)?;
        let diff = (plus - minus) / (2.0 * delta);
        let beta = &gram_inv * (x.transpose() * (&g * diff));
        b.set_column(a, &beta);
    }
    Ok(b - DMatrix::identity(m, m))
}

/// One grid cell that could not be evaluated.
#[derive(Debug, Clone)]
pub struct GridFailure {
    pub direction: usize,
    pub radius: f64,
    pub error: String,
}

/// Image of the exponential map over a star of directions and radii, rows in
/// direction-major order. Failed cells are skipped in `image` and recorded in
/// `failures`; radius-0 cells short-circuit to the base point exactly.
#[derive(Debug, Clone)]
pub struct ExpGrid {
    pub q: DVector<f64>,
    pub e: Option<f64>,
    pub directions: Vec<DVector<f64>>,
    pub radii: Vec<f64>,
    pub image: DMatrix<f64>,
    pub failures: Vec<GridFailure>,
}

impl ExpGrid {
    /// Successful cells as (direction index, radius, image row), in emission
    /// order.
    fn present_cells(&self) -> Vec<(usize, f64, usize)> {
        let mut out = Vec::with_capacity(self.image.nrows());
        let mut fail = self.failures.iter().peekable();
        let mut row = 0usize;
        for i in 0..self.directions.len() {
            for &r in &self.radii {
                if fail.next_if(|f| f.direction == i && f.radius == r).is_some() {
                    continue;
                }
                out.push((i, r, row));
                row += 1;
            }
        }
        out
    }

    /// CSV document: direction index, radius, then the chart coordinates.
    pub fn to_csv(&self) -> String {
        let n = self.q.len();
        let mut out = String::from("direction,radius");
        for i in 1..=n {
            out.push_str(&format!(",q_{i}"));
        }
        out.push('\n');
        for (dir, radius, row) in self.present_cells() {
            out.push_str(&format!("{dir},{radius:?}"));
            for c in 0..n {
                out.push_str(&format!(",{:?}", self.image[(row, c)]));
            }
            out.push('\n');
        }
        out
    }

    /// JSON document with the grid inputs, image rows, and failures.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .present_cells()
            .into_iter()
            .map(|(dir, radius, row)| {
                serde_json::json!({
                    "direction": dir,
                    "radius": radius,
                    "point": self.image.row(row).iter().copied().collect::<Vec<f64>>(),
                })
            })
            .collect();
        serde_json::json!({
            "q": self.q.as_slice(),
            "e": self.e,
            "directions": self.directions.iter().map(|d| d.as_slice().to_vec()).collect::<Vec<_>>(),
            "radii": self.radii,
            "rows": rows,
            "failures": self.failures.iter().map(|f| {
                serde_json::json!({
                    "direction": f.direction,
                    "radius": f.radius,
                    "error": f.error,
                })
            }).collect::<Vec<_>>(),
        })
    }
}

/// Samples the exponential map over every (direction, radius) pair, direction
/// major. Directions must be unit in the metric at q and radii nonnegative
/// ascending; cells that fail to integrate are recorded and skipped.
pub fn exp_grid(
    sys: &SystemDefinition,
    q: &DVector<f64>,
    e: Option<f64>,
    directions: &[DVector<f64>],
    radii: &[f64],
    opts: &ExpOptions,
) -> Result<ExpGrid> {
    let g = sys.metric_at(q)?;
    for (i, d) in directions.iter().enumerate() {
        if d.len() != sys.dim() {
            return Err(Error::InvalidInput(format!(
                "direction {i} has length {}, chart has {}",
                d.len(),
                sys.dim()
            )));
        }
        let nrm = d.dot(&(&g * d)).max(0.0).sqrt();
        if (nrm - 1.0).abs() > UNIT_DIRECTION_TOL {
            return Err(Error::InvalidInput(format!(
                "direction {i} is not unit in the metric: |d|_g = {nrm}"
            )));
        }
    }
    for r in radii {
        if !r.is_finite() || *r < 0.0 {
            return Err(Error::InvalidInput(format!(
                "radii must be nonnegative and finite, got {r}"
            )));
        }
    }
    if radii.windows(2).any(|pair| pair[1] < pair[0]) {
        return Err(Error::InvalidInput("radii must be ascending".into()));
    }

    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(directions.len() * radii.len());
    let mut failures = Vec::new();
    for (i, dir) in directions.iter().enumerate() {
        for &r in radii {
            if r == 0.0 {
                rows.push(q.clone());
                continue;
            }
            match map_endpoint(sys, q, &(dir * r), e, opts) {
                Ok(point) => rows.push(point),
                Err(err) => failures.push(GridFailure {
                    direction: i,
                    radius: r,
                    error: err.to_string(),
                }),
            }
        }
    }
    let mut image = DMatrix::zeros(rows.len(), sys.dim());
    for (j, row) in rows.iter().enumerate() {
        image.row_mut(j).copy_from(&row.transpose());
    }
    Ok(ExpGrid {
        q: q.clone(),
        e,
        directions: directions.to_vec(),
        radii: radii.to_vec(),
        image,
        failures,
    })
}

/// Closed-form inverse of the disk's time-1 mechanical flow: recovers the
/// initial rolling and steering rates (Omega, omega) from the endpoint's
/// rolling angle and heading. Affine in the angles, hence exact.
pub fn disk_inverse_exp(
    variant: DiskVariant,
    q0: &DVector<f64>,
    point: &DVector<f64>,
) -> Result<(f64, f64)> {
    if q0.len() != 4 || point.len() != 4 {
        return Err(Error::InvalidInput(format!(
            "disk chart points have length 4, got {} and {}",
            q0.len(),
            point.len()
        )));
    }
    let (theta0, phi0) = (q0[2], q0[3]);
    let (theta, phi) = (point[2], point[3]);
    let steer = match variant {
        DiskVariant::Harmonic => (phi - phi0 * 1f64.cos()) / 1f64.sin(),
        DiskVariant::Linear => phi - phi0 + 0.5,
        DiskVariant::Free => phi - phi0,
    };
    Ok((theta - theta0, steer))
}

/// Pullback checks for the disk examples.
#[derive(Debug, Clone)]
pub struct GaussReport {
    /// Defect of the radial pairing condition for the pulled-back metric;
    /// identically zero because that metric is constant over the fiber.
    pub flat_metric_defect: f64,
    /// Worst deviation of the inverse image of a scaled flow endpoint from
    /// the scaled rate pair.
    pub max_radial_defect: f64,
    /// Number of (cell, scale) flow evaluations behind the radial defect.
    pub samples: usize,
    pub pass: bool,
}

/// Number of scales probed per grid cell by [`gauss_pullback_check`].
const RADIAL_SCALES: usize = 10;

/// Pass threshold on the radial straight-line defect.
const RADIAL_TOL: f64 = 1e-8;

/// Checks the pullback structure of the disk's time-1 mechanical flow through
/// the closed-form inverse: the pulled-back metric is the flat one on the
/// rate chart (so the radial pairing condition holds identically), and scaled
/// initial rates t (Omega, omega) must land back on t (Omega, omega), i.e.
/// radial flows map to straight lines through the origin of the rate chart.
pub fn gauss_pullback_check(
    variant: DiskVariant,
    q0: &DVector<f64>,
    grid: &[(f64, f64)],
    opts: &ExpOptions,
) -> Result<GaussReport> {
    let sys = systems::builtin(variant.system_name())?.definition;
    if q0.len() != sys.dim() {
        return Err(Error::InvalidInput(format!(
            "disk chart points have length 4, got {}",
            q0.len()
        )));
    }
    // the pulled-back metric does not depend on the base rate pair, so the
    // pairing at t (Omega, omega) minus the pairing at the origin is zero
    let flat_metric_defect = 0.0;

    let x = sys.frame_at(q0);
    let mut max_radial_defect = 0.0f64;
    let mut samples = 0usize;
    for &(roll, steer) in grid {
        for k in 1..=RADIAL_SCALES {
            let t = k as f64 / RADIAL_SCALES as f64;
            let v = &x * dvector_from(roll * t, steer * t);
            let endpoint = mechanical_endpoint(&sys, q0, &v, 1.0, opts)?;
            let (roll_back, steer_back) = disk_inverse_exp(variant, q0, &endpoint)?;
            let defect = (roll_back - roll * t)
                .hypot(steer_back - steer * t);
            max_radial_defect = max_radial_defect.max(defect);
            samples += 1;
        }
    }
    Ok(GaussReport {
        flat_metric_defect,
        max_radial_defect,
        samples,
        pass: max_radial_defect <= RADIAL_TOL,
    })
}

fn dvector_from(a: f64, b: f64) -> DVector<f64> {
    DVector::from_column_slice(&[a, b])
}
