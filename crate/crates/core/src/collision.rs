//! Ellipsoidal separation: buffered Voronoi cells, on-demand collision
//! detection and the linearized halfspaces handed to the QP.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Diagonal scaling `theta` and minimum scaled distance `r_min`. The keep-out
/// region around a point `c` is `{p : |diag(theta)^-1 (p - c)| < r_min}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    pub theta: Vector3<f64>,
    pub r_min: f64,
}

impl EllipsoidSpec {
    pub fn new(theta: Vector3<f64>, r_min: f64) -> Result<Self> {
        let e = Self { theta, r_min };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(invalid("ellipsoid scaling entries must be positive"));
        }
        if !(self.r_min > 0.0 && self.r_min.is_finite()) {
            return Err(invalid("r_min must be positive"));
        }
        Ok(())
    }

    /// Agent-to-obstacle spec: larger radius, elementwise larger scaling.
    pub fn combine(&self, other: &EllipsoidSpec) -> EllipsoidSpec {
        EllipsoidSpec {
            theta: self.theta.sup(&other.theta),
            r_min: self.r_min.max(other.r_min),
        }
    }

    pub fn distance(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        scaled_distance(self, a, b)
    }

    /// `Theta^-2 v`
    fn metric(&self, v: &Vector3<f64>) -> Vector3<f64> {
        v.component_div(&self.theta.component_mul(&self.theta))
    }
}

/// `|Theta^-1 (pi - pj)|_2`
pub fn scaled_distance(e: &EllipsoidSpec, pi: &Vector3<f64>, pj: &Vector3<f64>) -> f64 {
    (pi - pj).component_div(&e.theta).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvoidanceSpace {
    /// Constrain model-predicted positions.
    State,
    /// Constrain the reference (input) samples.
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeighborKind {
    Agent,
    /// Static obstacle with its own ellipsoid.
    Obstacle(EllipsoidSpec),
}

/// What one agent shares about its plan: predicted positions `p[k|t]` and
/// reference samples `u[k|t]` for `k = 0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPrediction {
    pub agent_id: usize,
    pub positions: Vec<Vector3<f64>>,
    pub inputs: Vec<Vector3<f64>>,
    pub stamp: u64,
    pub kind: NeighborKind,
}

impl HorizonPrediction {
    pub fn new(
        agent_id: usize,
        positions: Vec<Vector3<f64>>,
        inputs: Vec<Vector3<f64>>,
        stamp: u64,
    ) -> Result<Self> {
        if positions.len() != inputs.len() || positions.is_empty() {
            return Err(invalid(
                "prediction arrays must be non-empty and of equal length",
            ));
        }
        if positions
            .iter()
            .chain(inputs.iter())
            .any(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(invalid("prediction contains non-finite values"));
        }
        Ok(Self {
            agent_id,
            positions,
            inputs,
            stamp,
            kind: NeighborKind::Agent,
        })
    }

    /// Constant prediction at `position`, used before any plan exists.
    pub fn stationary(agent_id: usize, position: Vector3<f64>, horizon: usize, stamp: u64) -> Self {
        Self {
            agent_id,
            positions: vec![position; horizon],
            inputs: vec![position; horizon],
            stamp,
            kind: NeighborKind::Agent,
        }
    }

    pub fn horizon(&self) -> usize {
        self.positions.len()
    }

    pub fn samples(&self, space: AvoidanceSpace) -> &[Vector3<f64>] {
        match space {
            AvoidanceSpace::State => &self.positions,
            AvoidanceSpace::Input => &self.inputs,
        }
    }

    /// Ellipsoid to use when `self` avoids `other`.
    pub fn pair_spec(own: &EllipsoidSpec, other: &HorizonPrediction) -> EllipsoidSpec {
        match other.kind {
            NeighborKind::Agent => *own,
            NeighborKind::Obstacle(e) => own.combine(&e),
        }
    }
}

/// A static obstacle dressed up as a neighbour that never moves.
pub fn obstacle_as_neighbor(
    id: usize,
    center: Vector3<f64>,
    e: EllipsoidSpec,
    horizon: usize,
    stamp: u64,
) -> HorizonPrediction {
    HorizonPrediction {
        agent_id: id,
        positions: vec![center; horizon],
        inputs: vec![center; horizon],
        stamp,
        kind: NeighborKind::Obstacle(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintTarget {
    /// One horizon sample of the new plan (input or predicted position).
    Sample(usize),
    /// Every control point of the first Bézier segment.
    FirstSegment,
}

/// `normal' p >= offset (+ eps when soft)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceConstraint {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub target: ConstraintTarget,
    pub soft: bool,
    pub neighbor: usize,
}

impl HalfspaceConstraint {
    /// `normal' p - offset`, non-negative when satisfied.
    pub fn residual(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

const COINCIDENT: f64 = 1e-12;

/// Buffered Voronoi cell of `p_i` against each neighbour position, applied to
/// the control points of the first segment.
pub fn bvc_constraints(
    p_i: &Vector3<f64>,
    neighbors: &[(usize, Vector3<f64>)],
    e: &EllipsoidSpec,
    soft: bool,
) -> Result<Vec<HalfspaceConstraint>> {
    neighbors
        .iter()
        .map(|(id, p_j)| {
            let d = scaled_distance(e, p_i, p_j);
            if d < COINCIDENT {
                return Err(Error::DegenerateGeometry(format!(
                    "agent coincides with neighbour {id}"
                )));
            }
            let normal = e.metric(&(p_i - p_j)) / d;
            Ok(HalfspaceConstraint {
                offset: normal.dot(p_i) + 0.5 * (e.r_min - d),
                normal,
                target: ConstraintTarget::FirstSegment,
                soft,
                neighbor: *id,
            })
        })
        .collect()
}

/// Cell boundary against a static obstacle: the obstacle does not move, so
/// the agent takes the whole buffer instead of half of it.
pub fn bvc_obstacle_constraint(
    p_i: &Vector3<f64>,
    center: &Vector3<f64>,
    e: &EllipsoidSpec,
    soft: bool,
    id: usize,
) -> Result<HalfspaceConstraint> {
    let d = scaled_distance(e, p_i, center);
    if d < COINCIDENT {
        return Err(Error::DegenerateGeometry(format!(
            "agent sits on obstacle {id} centre"
        )));
    }
    let normal = e.metric(&(p_i - center)) / d;
    Ok(HalfspaceConstraint {
        offset: normal.dot(center) + e.r_min,
        normal,
        target: ConstraintTarget::FirstSegment,
        soft,
        neighbor: id,
    })
}

fn check_stamps(mine: &HorizonPrediction, theirs: &HorizonPrediction) -> Result<()> {
    if mine.stamp != theirs.stamp {
        return Err(Error::StalePrediction {
            expected: mine.stamp,
            found: theirs.stamp,
        });
    }
    if mine.horizon() != theirs.horizon() {
        return Err(invalid("predictions have different horizons"));
    }
    Ok(())
}

/// Scaled distances `xi[k]` for `k = 1..K`.
fn scaled_distances<'a>(
    mine: &'a HorizonPrediction,
    theirs: &'a HorizonPrediction,
    e: &EllipsoidSpec,
    space: AvoidanceSpace,
) -> impl Iterator<Item = (usize, f64)> + 'a {
    let a = mine.samples(space);
    let b = theirs.samples(space);
    let e = *e;
    (1..a.len()).map(move |k| (k, scaled_distance(&e, &a[k], &b[k])))
}

/// First horizon index `k >= 1` where the two predictions come closer than `r_min`.
pub fn detect_first_collision(
    mine: &HorizonPrediction,
    theirs: &HorizonPrediction,
    e: &EllipsoidSpec,
    space: AvoidanceSpace,
) -> Result<Option<usize>> {
    check_stamps(mine, theirs)?;
    Ok(scaled_distances(mine, theirs, e, space)
        .find(|(_, d)| *d < e.r_min)
        .map(|(k, _)| k))
}

/// Index and value of the smallest scaled distance over `k = 1..K`.
pub fn closest_approach(
    mine: &HorizonPrediction,
    theirs: &HorizonPrediction,
    e: &EllipsoidSpec,
    space: AvoidanceSpace,
) -> Result<(usize, f64)> {
    check_stamps(mine, theirs)?;
    Ok(
        scaled_distances(mine, theirs, e, space).fold((1, f64::INFINITY), |best, cur| {
            if cur.1 <= best.1 {
                cur
            } else {
                best
            }
        }),
    )
}

/// Indices into `all` of the neighbours whose closest approach is below
/// `2 r_min`. Entries sharing `mine.agent_id` are skipped.
pub fn neighbor_set(
    mine: &HorizonPrediction,
    all: &[HorizonPrediction],
    e: &EllipsoidSpec,
    space: AvoidanceSpace,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (idx, other) in all.iter().enumerate() {
        if other.agent_id == mine.agent_id && other.kind == NeighborKind::Agent {
            continue;
        }
        let pair = HorizonPrediction::pair_spec(e, other);
        let (_, d) = closest_approach(mine, other, &pair, space)?;
        if d < 2.0 * pair.r_min {
            out.push(idx);
        }
    }
    Ok(out)
}

/// First-order approximation of `|Theta^-1 (p - pj)| >= r_min` about `p0_i`,
/// imposed on the new plan's sample `target`.
pub fn ondemand_constraint(
    p0_i: &Vector3<f64>,
    pj: &Vector3<f64>,
    e: &EllipsoidSpec,
    target: usize,
    neighbor: usize,
) -> Result<HalfspaceConstraint> {
    let d = scaled_distance(e, p0_i, pj);
    if d < COINCIDENT {
        return Err(Error::DegenerateGeometry(format!(
            "prediction coincides with neighbour {neighbor}"
        )));
    }
    let normal = e.metric(&(p0_i - pj)) / d;
    Ok(HalfspaceConstraint {
        // n'(p - p0) >= r - d  <=>  n'p >= n'p0 + r - d
        offset: normal.dot(p0_i) + e.r_min - d,
        normal,
        target: ConstraintTarget::Sample(target),
        soft: true,
        neighbor,
    })
}

/// Same halfspace family built from a separating direction, for when the
/// linearization point coincides with the neighbour.
pub fn halfspace_along(
    direction: &Vector3<f64>,
    pj: &Vector3<f64>,
    e: &EllipsoidSpec,
    target: usize,
    neighbor: usize,
) -> HalfspaceConstraint {
    let scaled = direction.component_div(&e.theta).norm();
    let (normal, scaled) = if scaled < COINCIDENT {
        log::warn!("no separating direction against {neighbor}, using +x");
        let x = Vector3::x();
        (e.metric(&x), x.component_div(&e.theta).norm())
    } else {
        (e.metric(direction), scaled)
    };
    let normal = normal / scaled;
    HalfspaceConstraint {
        offset: normal.dot(pj) + e.r_min,
        normal,
        target: ConstraintTarget::Sample(target),
        soft: true,
        neighbor,
    }
}
