//! Builtin benchmark systems and their closed-form reference solutions.
//!
//! Two families ship with the library. A point particle in euclidean R^3 with
//! a linear potential, constrained to a rank-2 distribution that twists with
//! the y coordinate. And a vertical rolling disk on the plane, chart
//! (x, y, theta, phi) with theta the rolling angle and phi the heading, under
//! a harmonic, linear, or zero potential in phi. The disk family has
//! closed-form trajectories: theta and phi integrate elementarily and x, y
//! follow by quadrature of cos and sin of the heading.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChartBounds, MatrixField, ScalarField, SystemDefinition, VectorFieldFn};
use crate::quad;

/// Absolute tolerance of the x, y quadrature in closed-form disk states.
pub const ANALYTIC_QUAD_TOL: f64 = 1e-12;

/// Which potential drives the disk's heading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiskVariant {
    Harmonic,
    Linear,
    Free,
}

impl DiskVariant {
    /// Builtin name of this variant, as accepted by [`builtin`].
    pub fn system_name(self) -> &'static str {
        match self {
            DiskVariant::Harmonic => "disk-harmonic",
            DiskVariant::Linear => "disk-linear",
            DiskVariant::Free => "disk-free",
        }
    }
}

/// A builtin system plus its capability flags.
#[derive(Debug, Clone)]
pub struct BuiltinSystem {
    pub name: &'static str,
    pub definition: SystemDefinition,
    pub has_analytic_solution: bool,
    pub has_analytic_h: bool,
}

/// Catalog row describing one builtin, as emitted by `list-systems`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemInfo {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub has_analytic: bool,
}

pub const BUILTIN_NAMES: [&str; 4] = [
    "particle-r3-linear",
    "disk-harmonic",
    "disk-linear",
    "disk-free",
];

fn particle_r3_linear() -> SystemDefinition {
    let metric: MatrixField = Arc::new(|_q: &DVector<f64>| DMatrix::identity(3, 3));
    let potential: ScalarField = Arc::new(|q: &DVector<f64>| q[2]);
    let grad: VectorFieldFn =
        Arc::new(|_q: &DVector<f64>| DVector::from_column_slice(&[0.0, 0.0, 1.0]));
    let x1: VectorFieldFn =
        Arc::new(|q: &DVector<f64>| DVector::from_column_slice(&[1.0, 0.0, q[1]]));
    let x2: VectorFieldFn =
        Arc::new(|_q: &DVector<f64>| DVector::from_column_slice(&[0.0, 1.0, 0.0]));
    let j1: MatrixField = Arc::new(|_q: &DVector<f64>| {
        let mut j = DMatrix::zeros(3, 3);
        j[(2, 1)] = 1.0;
        j
    });
    let j2: MatrixField = Arc::new(|_q: &DVector<f64>| DMatrix::zeros(3, 3));
    SystemDefinition::new(
        "particle-r3-linear",
        3,
        2,
        metric,
        potential,
        vec![x1, x2],
    )
    .with_potential_gradient(grad)
    .with_frame_jacobians(vec![j1, j2])
}

fn disk(variant: DiskVariant) -> SystemDefinition {
    let metric: MatrixField = Arc::new(|_q: &DVector<f64>| DMatrix::identity(4, 4));
    let (name, potential, grad): (&str, ScalarField, VectorFieldFn) = match variant {
        DiskVariant::Harmonic => (
            "disk-harmonic",
            Arc::new(|q: &DVector<f64>| 0.5 * q[3] * q[3]),
            Arc::new(|q: &DVector<f64>| DVector::from_column_slice(&[0.0, 0.0, 0.0, q[3]])),
        ),
        DiskVariant::Linear => (
            "disk-linear",
            Arc::new(|q: &DVector<f64>| q[3]),
            Arc::new(|_q: &DVector<f64>| DVector::from_column_slice(&[0.0, 0.0, 0.0, 1.0])),
        ),
        DiskVariant::Free => (
            "disk-free",
            Arc::new(|_q: &DVector<f64>| 0.0),
            Arc::new(|_q: &DVector<f64>| DVector::zeros(4)),
        ),
    };
    let x1: VectorFieldFn = Arc::new(|q: &DVector<f64>| {
        DVector::from_column_slice(&[q[3].cos(), q[3].sin(), 1.0, 0.0])
    });
    let x2: VectorFieldFn =
        Arc::new(|_q: &DVector<f64>| DVector::from_column_slice(&[0.0, 0.0, 0.0, 1.0]));
    let j1: MatrixField = Arc::new(|q: &DVector<f64>| {
        let mut j = DMatrix::zeros(4, 4);
        j[(0, 3)] = -q[3].sin();
        j[(1, 3)] = q[3].cos();
        j
    });
    let j2: MatrixField = Arc::new(|_q: &DVector<f64>| DMatrix::zeros(4, 4));
    SystemDefinition::new(name, 4, 2, metric, potential, vec![x1, x2])
        .with_potential_gradient(grad)
        .with_frame_jacobians(vec![j1, j2])
        .with_chart_bounds(ChartBounds::periodic_only(vec![false, false, true, true]))
}

/// Looks up a builtin by name.
pub fn builtin(name: &str) -> Result<BuiltinSystem> {
    match name {
        "particle-r3-linear" => Ok(BuiltinSystem {
            name: "particle-r3-linear",
            definition: particle_r3_linear(),
            has_analytic_solution: false,
            has_analytic_h: false,
        }),
        "disk-harmonic" => Ok(BuiltinSystem {
            name: "disk-harmonic",
            definition: disk(DiskVariant::Harmonic),
            has_analytic_solution: true,
            has_analytic_h: true,
        }),
        "disk-linear" => Ok(BuiltinSystem {
            name: "disk-linear",
            definition: disk(DiskVariant::Linear),
            has_analytic_solution: true,
            has_analytic_h: true,
        }),
        "disk-free" => Ok(BuiltinSystem {
            name: "disk-free",
            definition: disk(DiskVariant::Free),
            has_analytic_solution: true,
            has_analytic_h: true,
        }),
        _ => Err(Error::UnknownSystem { name: name.into() }),
    }
}

/// Metadata for every builtin, in catalog order.
pub fn catalog() -> Vec<SystemInfo> {
    BUILTIN_NAMES
        .iter()
        .map(|name| {
            let b = builtin(name).expect("builtin names are valid");
            SystemInfo {
                name: b.name.to_string(),
                n: b.definition.dim(),
                m: b.definition.rank(),
                has_analytic: b.has_analytic_solution,
            }
        })
        .collect()
}

fn disk_variant(name: &str) -> Option<DiskVariant> {
    match name {
        "disk-harmonic" => Some(DiskVariant::Harmonic),
        "disk-linear" => Some(DiskVariant::Linear),
        "disk-free" => Some(DiskVariant::Free),
        _ => None,
    }
}

/// State of a closed-form trajectory: chart point and chart velocity.
#[derive(Debug, Clone)]
pub struct AnalyticSample {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

/// Heading angle and rate of the disk under `variant` at time t, from initial
/// heading phi0 and steering rate omega.
fn disk_heading(variant: DiskVariant, phi0: f64, steer_rate: f64, t: f64) -> (f64, f64) {
    match variant {
        DiskVariant::Harmonic => (
            phi0 * t.cos() + steer_rate * t.sin(),
            -phi0 * t.sin() + steer_rate * t.cos(),
        ),
        DiskVariant::Linear => (phi0 + steer_rate * t - 0.5 * t * t, steer_rate - t),
        DiskVariant::Free => (phi0 + steer_rate * t, steer_rate),
    }
}

/// Closed-form state of a builtin at time t.
///
/// `roll_rate` is the initial rolling angular velocity (theta direction) and
/// `steer_rate` the initial heading angular velocity (phi direction). The
/// rolling rate stays constant for every disk variant, so theta is affine in t
/// and the contact point follows x' = roll_rate cos(phi), y' = roll_rate
/// sin(phi), integrated adaptively to 1e-12.
pub fn analytic_state(
    name: &str,
    q0: &DVector<f64>,
    roll_rate: f64,
    steer_rate: f64,
    t: f64,
) -> Result<AnalyticSample> {
    let b = builtin(name)?;
    let Some(variant) = disk_variant(name) else {
        return Err(Error::NoAnalyticSolution { name: name.into() });
    };
    if q0.len() != b.definition.dim() {
        return Err(Error::InvalidInput(format!(
            "q0 must have {} components",
            b.definition.dim()
        )));
    }
    let (x0, y0, theta0, phi0) = (q0[0], q0[1], q0[2], q0[3]);
    let (phi, phidot) = disk_heading(variant, phi0, steer_rate, t);
    let theta = theta0 + roll_rate * t;
    let x = x0
        + roll_rate
            * quad::integrate(
                |s| disk_heading(variant, phi0, steer_rate, s).0.cos(),
                0.0,
                t,
                ANALYTIC_QUAD_TOL,
            );
    let y = y0
        + roll_rate
            * quad::integrate(
                |s| disk_heading(variant, phi0, steer_rate, s).0.sin(),
                0.0,
                t,
                ANALYTIC_QUAD_TOL,
            );
    let q = DVector::from_column_slice(&[x, y, theta, phi]);
    let v = DVector::from_column_slice(&[
        roll_rate * phi.cos(),
        roll_rate * phi.sin(),
        roll_rate,
        phidot,
    ]);
    Ok(AnalyticSample { q, v })
}

/// Closed-form time reparametrization h(s) of a disk trajectory at total
/// energy e, initial heading phi0 and steering rate omega: the antiderivative
/// of e - V(phi(s)) starting at h(0) = 0.
pub fn analytic_h(name: &str, e: f64, phi0: f64, steer_rate: f64, s: f64) -> Result<f64> {
    builtin(name)?;
    let Some(variant) = disk_variant(name) else {
        return Err(Error::NoAnalyticH { name: name.into() });
    };
    let w = steer_rate;
    Ok(match variant {
        DiskVariant::Harmonic => {
            e * s
                - 0.5
                    * ((phi0 * phi0 - w * w) * s.cos() * s.sin() / 2.0
                        + (phi0 * phi0 + w * w) * s / 2.0
                        + phi0 * w * s.sin() * s.sin())
        }
        DiskVariant::Linear => e * s + s * s * s / 6.0 - w * s * s / 2.0 - phi0 * s,
        DiskVariant::Free => e * s,
    })
}
