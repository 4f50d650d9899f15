//! Per-agent quadratic program: cost terms, constraint assembly and solve.
//!
//! The decision vector is `z = (control points, slacks)`. The solver works
//! on `min 0.5 z'Hz + f'z` subject to `Aeq z = beq` and `Ain z <= bin`.

mod solver;

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, Vector6};

use crate::bezier::{var_index, SplineBasis};
use crate::collision::{AvoidanceSpace, ConstraintTarget, HalfspaceConstraint};
use crate::dynamics::StackedPrediction;
use crate::error::{invalid, Result};
use crate::linalg::LinearRows;

pub use solver::{relative_kkt_residual, solve, SolverSettings};

/// Regularization added to the Hessian diagonal.
pub const HESSIAN_REG: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub eq: LinearRows,
    pub ineq: LinearRows,
    pub slack: Range<usize>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.f.len()
    }

    pub fn num_slack(&self) -> usize {
        self.slack.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }

    /// Plain-text dump of every matrix for external verification.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        fn block<W: Write>(out: &mut W, name: &str, m: &DMatrix<f64>) -> std::io::Result<()> {
            writeln!(out, "# {name} {} {}", m.nrows(), m.ncols())?;
            for r in 0..m.nrows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(out, "{}", row.join(" "))?;
            }
            Ok(())
        }
        let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        block(&mut out, "H", &self.h)?;
        block(&mut out, "f", &col(&self.f))?;
        block(&mut out, "Aeq", &self.eq.a)?;
        block(&mut out, "beq", &col(&self.eq.b))?;
        block(&mut out, "Ain", &self.ineq.a)?;
        block(&mut out, "bin", &col(&self.ineq.b))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub kkt_residual: f64,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
}

impl QpSolution {
    fn failed(n: usize, status: QpStatus) -> Self {
        Self {
            z: DVector::zeros(n),
            status,
            objective: f64::INFINITY,
            kkt_residual: f64::INFINITY,
            eq_multipliers: DVector::zeros(0),
            ineq_multipliers: DVector::zeros(0),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// `J(z) = z' P z + q' z` over one block of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
}

impl CostTerm {
    pub fn zeros(n: usize) -> Self {
        Self {
            quad: DMatrix::zeros(n, n),
            lin: DVector::zeros(n),
        }
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.quad * z)) + self.lin.dot(z)
    }

    pub fn add(&mut self, other: &CostTerm) {
        self.quad += &other.quad;
        self.lin += &other.lin;
    }
}

/// Goal-error term over the last steps of the horizon, precomputed so that
/// only the linear part changes from cycle to cycle.
#[derive(Debug, Clone)]
pub struct GoalErrorTerm {
    /// Predicted positions of the penalized steps as a function of the control points.
    map: DMatrix<f64>,
    /// Contribution of the measured state to the same positions.
    free: DMatrix<f64>,
    steps: usize,
    weight: f64,
    quad: DMatrix<f64>,
}

impl GoalErrorTerm {
    /// Penalizes predicted positions `p[k]` for `k = K - kappa ..= K`.
    pub fn new(
        stacked: &StackedPrediction,
        sample_matrix: &DMatrix<f64>,
        kappa: usize,
        weight: f64,
    ) -> Result<Self> {
        let horizon = stacked.horizon();
        if kappa >= horizon {
            return Err(invalid(format!(
                "kappa = {kappa} must be below the horizon {horizon}"
            )));
        }
        if !(weight > 0.0) {
            return Err(invalid("goal weight must be positive"));
        }
        let n_state = stacked.state_dim();
        if sample_matrix.nrows() != 3 * horizon {
            return Err(invalid("sample matrix does not match the horizon"));
        }
        let first = horizon - kappa; // 1-based state index
        let steps = kappa + 1;
        let mut map = DMatrix::zeros(3 * steps, sample_matrix.ncols());
        let mut free = DMatrix::zeros(3 * steps, n_state);
        for (i, k) in (first..=horizon).enumerate() {
            let block = k - 1;
            let lam_rows = stacked.lambda.rows(block * n_state, 3);
            map.rows_mut(3 * i, 3)
                .copy_from(&(lam_rows * sample_matrix));
            free.rows_mut(3 * i, 3)
                .copy_from(&stacked.a0.rows(block * n_state, 3));
        }
        let quad = map.tr_mul(&map) * weight;
        Ok(Self {
            map,
            free,
            steps,
            weight,
            quad,
        })
    }

    fn offsets(&self, x0: &Vector6<f64>, goal: &nalgebra::Vector3<f64>) -> DVector<f64> {
        let x0 = DVector::from_column_slice(x0.as_slice());
        let mut c = &self.free * x0;
        for i in 0..self.steps {
            for a in 0..3 {
                c[3 * i + a] -= goal[a];
            }
        }
        c
    }

    pub fn cost(&self, x0: &Vector6<f64>, goal: &nalgebra::Vector3<f64>) -> CostTerm {
        let c = self.offsets(x0, goal);
        CostTerm {
            quad: self.quad.clone(),
            lin: self.map.tr_mul(&c) * (2.0 * self.weight),
        }
    }

    /// Only the linear part, for callers that keep the quadratic part cached.
    pub fn linear(&self, x0: &Vector6<f64>, goal: &nalgebra::Vector3<f64>) -> DVector<f64> {
        self.map.tr_mul(&self.offsets(x0, goal)) * (2.0 * self.weight)
    }

    pub fn quad(&self) -> &DMatrix<f64> {
        &self.quad
    }

    /// Constant dropped from the quadratic form.
    pub fn constant(&self, x0: &Vector6<f64>, goal: &nalgebra::Vector3<f64>) -> f64 {
        self.offsets(x0, goal).norm_squared() * self.weight
    }
}

/// `sum_k q_k |p[k] - goal|^2` over the last `kappa + 1` predicted positions,
/// as a quadratic form in the control points (constant dropped).
pub fn error_cost(
    stacked: &StackedPrediction,
    x0: &Vector6<f64>,
    goal: &nalgebra::Vector3<f64>,
    kappa: usize,
    weight: f64,
    sample_matrix: &DMatrix<f64>,
) -> Result<CostTerm> {
    Ok(GoalErrorTerm::new(stacked, sample_matrix, kappa, weight)?.cost(x0, goal))
}

/// `sum_c alpha_c int |d^c u / dt^c|^2 dt`; `alphas[c]` weighs order `c`.
pub fn energy_cost(basis: &SplineBasis, alphas: &[f64]) -> Result<DMatrix<f64>> {
    if alphas.iter().any(|a| *a < 0.0 || !a.is_finite()) {
        return Err(invalid("energy weights must be non-negative"));
    }
    let n = basis.num_vars();
    let p = basis.degree;
    let mut quad = DMatrix::zeros(n, n);
    for (order, alpha) in alphas.iter().enumerate() {
        if *alpha == 0.0 {
            continue;
        }
        if order > p {
            return Err(invalid(format!("order {order} exceeds degree {p}")));
        }
        for s in 0..basis.segments {
            let gram = match basis.energy_grams[s].get(order) {
                Some(g) => g.clone(),
                None => crate::bezier::energy_gram(p, basis.durations[s], order)?,
            };
            for m in 0..=p {
                for k in 0..=p {
                    for axis in 0..3 {
                        quad[(var_index(p, s, m, axis), var_index(p, s, k, axis))] +=
                            alpha * gram[(m, k)];
                    }
                }
            }
        }
    }
    Ok(quad)
}

/// `zeta |eps|^2 + xi sum(eps)` over `n_slack` slacks.
pub fn violation_cost(n_slack: usize, zeta: f64, xi: f64) -> Result<CostTerm> {
    if !(zeta > 0.0) {
        return Err(invalid("quadratic violation weight must be positive"));
    }
    Ok(CostTerm {
        quad: DMatrix::identity(n_slack, n_slack) * zeta,
        lin: DVector::from_element(n_slack, xi),
    })
}

/// Linear maps from control points to the quantities that collision
/// halfspaces constrain.
#[derive(Debug, Clone)]
pub struct CollisionMaps {
    /// Input samples, `3K x n`.
    pub inputs: DMatrix<f64>,
    /// Predicted positions `p[1..=K]`, `3K x n`.
    pub positions: DMatrix<f64>,
    /// Measured-state contribution to the same positions, `3K x 6`.
    pub positions_free: DMatrix<f64>,
    pub degree: usize,
}

impl CollisionMaps {
    pub fn new(stacked: &StackedPrediction, basis: &SplineBasis) -> Self {
        let phi = &basis.samples[0];
        let pos_lambda = &stacked.psel * &stacked.lambda;
        Self {
            inputs: phi.clone(),
            positions: pos_lambda * phi,
            positions_free: &stacked.psel * &stacked.a0,
            degree: basis.degree,
        }
    }

    fn num_cp(&self) -> usize {
        self.inputs.ncols()
    }
}

/// Everything that goes into one agent's QP.
pub struct QpParts<'a> {
    /// Control-point cost, natural form `z'Pz + q'z`.
    pub cost: &'a CostTerm,
    pub eq: &'a LinearRows,
    pub ineq: &'a LinearRows,
    pub collisions: &'a [HalfspaceConstraint],
    pub space: AvoidanceSpace,
    pub maps: &'a CollisionMaps,
    pub x0: &'a Vector6<f64>,
    pub zeta: f64,
    pub xi: f64,
}

/// Builds the full QP. Collision halfspaces `n'p >= c + eps` become rows
/// `-n'p + eps <= -c` on the control points, plus `eps <= 0` for soft ones.
pub fn assemble(parts: &QpParts<'_>) -> Result<QpProblem> {
    let n_cp = parts.maps.num_cp();
    if parts.cost.quad.nrows() != n_cp || parts.eq.ncols() != n_cp || parts.ineq.ncols() != n_cp {
        return Err(invalid(
            "QP blocks disagree on the number of control-point variables",
        ));
    }
    let p = parts.maps.degree;
    let horizon = parts.maps.inputs.nrows() / 3;

    let mut rows: Vec<(DVector<f64>, f64, bool)> = Vec::new();
    let x0 = DVector::from_column_slice(parts.x0.as_slice());
    for hs in parts.collisions {
        match hs.target {
            ConstraintTarget::Sample(k) => {
                if k == 0 || k >= horizon {
                    return Err(invalid(format!("sample index {k} is not plannable")));
                }
                let (coeffs, constant) = match parts.space {
                    AvoidanceSpace::Input => {
                        let m = parts.maps.inputs.rows(3 * k, 3);
                        (m.tr_mul(&hs.normal), 0.0)
                    }
                    AvoidanceSpace::State => {
                        // position p[k] sits in block k - 1 of the stacked states
                        let m = parts.maps.positions.rows(3 * (k - 1), 3);
                        let free = parts.maps.positions_free.rows(3 * (k - 1), 3) * &x0;
                        (m.tr_mul(&hs.normal), hs.normal.dot(&free))
                    }
                };
                rows.push((-coeffs, -(hs.offset - constant), hs.soft));
            }
            ConstraintTarget::FirstSegment => {
                for m in 0..=p {
                    let mut coeffs = DVector::zeros(n_cp);
                    for axis in 0..3 {
                        coeffs[var_index(p, 0, m, axis)] = hs.normal[axis];
                    }
                    rows.push((-coeffs, -hs.offset, hs.soft));
                }
            }
        }
    }

    let n_slack = rows.iter().filter(|r| r.2).count();
    let n = n_cp + n_slack;
    let violation = violation_cost(n_slack, parts.zeta, parts.xi)?;

    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (n_cp, n_cp))
        .copy_from(&(&parts.cost.quad * 2.0));
    h.view_mut((n_cp, n_cp), (n_slack, n_slack))
        .copy_from(&(&violation.quad * 2.0));
    let h = (&h + h.transpose()) * 0.5 + DMatrix::identity(n, n) * HESSIAN_REG;
    let mut f = DVector::zeros(n);
    f.rows_mut(0, n_cp).copy_from(&parts.cost.lin);
    f.rows_mut(n_cp, n_slack).copy_from(&violation.lin);

    let n_rows = parts.ineq.nrows() + rows.len() + n_slack;
    let mut a = DMatrix::zeros(n_rows, n);
    let mut b = DVector::zeros(n_rows);
    a.view_mut((0, 0), (parts.ineq.nrows(), n_cp))
        .copy_from(&parts.ineq.a);
    b.rows_mut(0, parts.ineq.nrows()).copy_from(&parts.ineq.b);
    let mut at = parts.ineq.nrows();
    let mut slack = n_cp;
    for (coeffs, rhs, soft) in &rows {
        a.view_mut((at, 0), (1, n_cp))
            .copy_from(&coeffs.transpose());
        b[at] = *rhs;
        if *soft {
            a[(at, slack)] = 1.0;
            slack += 1;
        }
        at += 1;
    }
    for s in n_cp..n {
        a[(at, s)] = 1.0;
        at += 1;
    }

    Ok(QpProblem {
        h,
        f,
        eq: parts.eq.widen(n),
        ineq: LinearRows::new(a, b),
        slack: n_cp..n,
    })
}
