//! One planning cycle of one agent: replanning trigger, collision
//! constraints, QP solve, horizon broadcast and fine-rate sampling.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::bezier::{
    build_basis, continuity_constraints, initial_condition_constraints, limit_constraints,
    BezierSpline, SplineBasis,
};
use crate::collision::{
    bvc_constraints, bvc_obstacle_constraint, closest_approach, detect_first_collision,
    halfspace_along, obstacle_as_neighbor, ondemand_constraint, AvoidanceSpace, EllipsoidSpec,
    HalfspaceConstraint, HorizonPrediction,
};
use crate::dynamics::{
    build_stacked, make_second_order_model, position, velocity, LinearAgentModel,
    StackedPrediction, State,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::LinearRows;
use crate::qp::{
    assemble, energy_cost, solve, CollisionMaps, CostTerm, GoalErrorTerm, QpParts, SolverSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bvc,
    BvcSoft,
    OndemandState,
    OndemandInput,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Bvc,
        Method::BvcSoft,
        Method::OndemandState,
        Method::OndemandInput,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Bvc => "bvc",
            Method::BvcSoft => "bvc-soft",
            Method::OndemandState => "ondemand-state",
            Method::OndemandInput => "ondemand-input",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub omega_n: f64,
    pub damping: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            omega_n: 8.0,
            damping: 0.7,
        }
    }
}

impl ModelConfig {
    pub fn discretize(&self, h: f64) -> Result<LinearAgentModel> {
        make_second_order_model(self.omega_n, self.damping, h)
    }
}

/// Axis-aligned box, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            min: Vector3::new(-1.5, -1.5, 0.0),
            max: Vector3::new(1.5, 1.5, 2.0),
        }
    }
}

impl Workspace {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn volume(&self) -> f64 {
        (self.max - self.min).product()
    }
}

/// Bounds on one derivative of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeLimit {
    pub order: usize,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Planning period, s.
    pub h: f64,
    /// Command period, s.
    pub ts: f64,
    pub horizon: usize,
    pub segments: usize,
    pub degree: usize,
    /// Continuity order at segment junctions.
    pub continuity: usize,
    pub kappa: usize,
    pub goal_weight: f64,
    /// Energy weight per derivative order, starting at order 0.
    pub alphas: Vec<f64>,
    pub zeta: f64,
    pub xi: f64,
    /// Derivative limits; order 0 is always the workspace.
    pub limits: Vec<DerivativeLimit>,
    pub workspace: Workspace,
    pub ellipsoid: EllipsoidSpec,
    pub f_min: f64,
    pub f_max: f64,
    pub eps_act: f64,
    pub method: Method,
    /// Only neighbours closer than this (scaled, m) get a cell boundary.
    pub bvc_radius: f64,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            h: 0.2,
            ts: 0.05,
            horizon: 16,
            segments: 3,
            degree: 5,
            continuity: 2,
            kappa: 3,
            goal_weight: 100.0,
            alphas: vec![0.0, 0.0, 0.008],
            zeta: 1.0,
            xi: -5e4,
            limits: vec![DerivativeLimit {
                order: 2,
                min: Vector3::repeat(-1.0),
                max: Vector3::repeat(1.0),
            }],
            workspace: Workspace::default(),
            ellipsoid: EllipsoidSpec {
                theta: Vector3::new(1.0, 1.0, 2.0),
                r_min: 0.3,
            },
            f_min: -0.01,
            f_max: 0.8,
            eps_act: 0.01,
            method: Method::OndemandInput,
            bvc_radius: 1.5,
            qp_tol: 1e-6,
            qp_max_iter: 10_000,
        }
    }
}

const TIME_EPS: f64 = 1e-9;

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.h, "h")?;
        pos(self.ts, "ts")?;
        pos(self.eps_act, "eps_act")?;
        pos(self.zeta, "zeta")?;
        pos(self.goal_weight, "goal_weight")?;
        pos(self.bvc_radius, "bvc_radius")?;
        let ratio = self.h / self.ts;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(invalid(format!(
                "ts = {} must divide h = {}",
                self.ts, self.h
            )));
        }
        if self.horizon < 2 || self.segments == 0 || self.degree == 0 {
            return Err(invalid(
                "horizon >= 2, segments >= 1 and degree >= 1 required",
            ));
        }
        if self.kappa >= self.horizon {
            return Err(invalid("kappa must be below the horizon"));
        }
        if self.continuity < 2 || self.continuity > self.degree {
            return Err(invalid("continuity order must lie in 2..=degree"));
        }
        if !(self.xi <= 0.0) {
            return Err(invalid("xi must be non-positive"));
        }
        if !(self.f_min < self.f_max) {
            return Err(invalid("f_min must be below f_max"));
        }
        self.ellipsoid.validate()?;
        if (0..3).any(|i| !(self.workspace.min[i] < self.workspace.max[i])) {
            return Err(invalid("workspace min must be below max"));
        }
        for l in &self.limits {
            if l.order == 0 || l.order > self.degree {
                return Err(invalid(format!(
                    "limit order {} not in 1..=degree",
                    l.order
                )));
            }
            if (0..3).any(|i| !(l.min[i] < l.max[i])) {
                return Err(invalid("limit min must be below max"));
            }
        }
        Ok(())
    }

    /// Length of the planned horizon `(K - 1) h`.
    pub fn horizon_time(&self) -> f64 {
        (self.horizon - 1) as f64 * self.h
    }

    pub fn durations(&self) -> Vec<f64> {
        vec![self.horizon_time() / self.segments as f64; self.segments]
    }

    pub fn fine_steps(&self) -> usize {
        (self.h / self.ts).round() as usize
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
        }
    }
}

/// Static obstacle: keep-out ellipsoid around `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vector3<f64>,
    pub ellipsoid: EllipsoidSpec,
}

/// Everything that depends only on the configuration, built once and
/// shared by all agents.
#[derive(Debug, Clone)]
pub struct PlannerContext {
    pub cfg: PlannerConfig,
    pub model: LinearAgentModel,
    pub stacked: StackedPrediction,
    pub basis: SplineBasis,
    pub maps: CollisionMaps,
    goal: GoalErrorTerm,
    /// Goal plus energy, natural form.
    quad: DMatrix<f64>,
    continuity: LinearRows,
    limits: LinearRows,
}

impl PlannerContext {
    pub fn new(model: &ModelConfig, cfg: &PlannerConfig) -> Result<Self> {
        cfg.validate()?;
        let m = model.discretize(cfg.h)?;
        let stacked = build_stacked(&m, cfg.horizon)?;
        let durations = cfg.durations();
        let max_deriv = cfg
            .limits
            .iter()
            .map(|l| l.order)
            .chain([2, cfg.alphas.len().saturating_sub(1)])
            .max()
            .unwrap_or(2)
            .min(cfg.degree);
        let basis = build_basis(
            cfg.segments,
            cfg.degree,
            &durations,
            cfg.h,
            cfg.horizon,
            max_deriv,
        )?;
        let maps = CollisionMaps::new(&stacked, &basis);
        let goal = GoalErrorTerm::new(&stacked, &basis.samples[0], cfg.kappa, cfg.goal_weight)?;
        let quad = goal.quad() + energy_cost(&basis, &cfg.alphas)?;
        let continuity =
            continuity_constraints(cfg.segments, cfg.degree, &durations, cfg.continuity)?;

        // Sample 0 is pinned by the initial condition, so limits start at 1.
        let mut blocks = vec![limit_constraints(
            &basis,
            0,
            cfg.workspace.min,
            cfg.workspace.max,
            1,
        )?];
        for l in &cfg.limits {
            blocks.push(limit_constraints(&basis, l.order, l.min, l.max, 1)?);
        }
        let refs: Vec<&LinearRows> = blocks.iter().collect();
        let limits = LinearRows::stack(basis.num_vars(), &refs);

        Ok(Self {
            cfg: cfg.clone(),
            model: m,
            stacked,
            basis,
            maps,
            goal,
            quad,
            continuity,
            limits,
        })
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    /// Predicted positions and input samples over the horizon for a
    /// trajectory flown from measured state `x0`.
    pub fn predict(&self, x0: &State, traj: &Trajectory) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let k = self.cfg.horizon;
        let inputs: Vec<Vector3<f64>> = (0..k)
            .map(|i| traj.eval(i as f64 * self.cfg.h, 0))
            .collect();
        let u = DVector::from_iterator(3 * k, inputs.iter().flat_map(|v| v.iter().copied()));
        let x0d = DVector::from_column_slice(x0.as_slice());
        let states = &self.stacked.a0 * &x0d + &self.stacked.lambda * &u;
        let mut positions = Vec::with_capacity(k);
        positions.push(position(x0));
        for i in 1..k {
            let b = 6 * (i - 1);
            positions.push(Vector3::new(states[b], states[b + 1], states[b + 2]));
        }
        (positions, inputs)
    }
}

/// A planned reference: spline read from `offset` seconds into it.
/// Past the end the final value is held with zero derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub spline: BezierSpline,
    pub offset: f64,
}

impl Trajectory {
    pub fn new(spline: BezierSpline) -> Self {
        Self {
            spline,
            offset: 0.0,
        }
    }

    pub fn hover(cfg: &PlannerConfig, at: Vector3<f64>) -> Result<Self> {
        Ok(Self::new(BezierSpline::constant(
            cfg.degree,
            cfg.durations(),
            at,
        )?))
    }

    pub fn eval(&self, t: f64, order: usize) -> Vector3<f64> {
        let tau = t + self.offset;
        let end = self.spline.duration();
        if tau > end + TIME_EPS {
            return if order == 0 {
                self.spline.eval(end, 0)
            } else {
                Vector3::zeros()
            };
        }
        self.spline.eval(tau.max(0.0), order)
    }

    /// Same reference, `dt` seconds later.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            spline: self.spline.clone(),
            offset: self.offset + dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuntime {
    pub id: usize,
    pub goal: Vector3<f64>,
    pub trajectory: Option<Trajectory>,
    /// Last broadcast prediction.
    pub prediction: HorizonPrediction,
    /// Value, velocity and acceleration to continue from next cycle.
    pub pending: Option<[Vector3<f64>; 3]>,
}

impl AgentRuntime {
    /// Agent before its first cycle: static prediction at `start`.
    pub fn new(id: usize, start: Vector3<f64>, goal: Vector3<f64>, horizon: usize) -> Self {
        Self {
            id,
            goal,
            trajectory: None,
            prediction: HorizonPrediction::stationary(id, start, horizon, 0),
            pending: None,
        }
    }
}

/// `f_n = (p_n - u_n)^5 / -(v_n + sgn(v_n) eps)`, with `sgn(0) = +1`.
pub fn activation(x: &State, u_now: &Vector3<f64>, eps_act: f64) -> Vector3<f64> {
    let p = position(x);
    let v = velocity(x);
    Vector3::from_fn(|n, _| {
        let sign = if v[n] >= 0.0 { 1.0 } else { -1.0 };
        (p[n] - u_now[n]).powi(5) / -(v[n] + sign * eps_act)
    })
}

pub fn is_nominal(f: &Vector3<f64>, f_min: f64, f_max: f64) -> bool {
    f.iter().all(|v| *v > f_min && *v < f_max)
}

/// Derivatives to pin at the start of the new plan, and whether the
/// reference was reset to the measured state.
pub fn choose_initial_reference(
    x: &State,
    pending: Option<&[Vector3<f64>; 3]>,
    f: &Vector3<f64>,
    f_min: f64,
    f_max: f64,
) -> ([Vector3<f64>; 3], bool) {
    match pending {
        Some(prev) if is_nominal(f, f_min, f_max) => (*prev, false),
        _ => ([position(x), velocity(x), Vector3::zeros()], true),
    }
}

/// Read-only view of one cycle shared by all agents.
#[derive(Debug, Clone, Copy)]
pub struct CycleInput<'a> {
    /// Completed cycles so far; every prediction must carry this stamp.
    pub stamp: u64,
    /// Measured states indexed by agent id.
    pub measured: &'a [State],
    /// Predictions indexed by agent id.
    pub predictions: &'a [HorizonPrediction],
    pub obstacles: &'a [Obstacle],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanOutcome {
    Solved,
    /// Solved only after re-pinning the start to the measured state.
    Repinned,
    /// No feasible plan; previous plan reused.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct AgentUpdate {
    pub runtime: AgentRuntime,
    /// References for `t0 + j Ts`, `j = 0..h/Ts`.
    pub fine_inputs: Vec<Vector3<f64>>,
    pub reset: bool,
    pub outcome: PlanOutcome,
    pub qp_ms: f64,
    pub cycle_ms: f64,
    pub n_constraints: usize,
    /// Most negative slack in the solution (0 if none).
    pub min_slack: f64,
}

/// Id given to obstacle `idx` when it poses as a neighbour.
pub fn obstacle_id(idx: usize) -> usize {
    1_000_000 + idx
}

fn collision_constraints(
    ctx: &PlannerContext,
    rt: &AgentRuntime,
    input: &CycleInput<'_>,
) -> Result<Vec<HalfspaceConstraint>> {
    let cfg = &ctx.cfg;
    let e = &cfg.ellipsoid;
    let me = position(&input.measured[rt.id]);
    match cfg.method {
        Method::Bvc | Method::BvcSoft => {
            let soft = cfg.method == Method::BvcSoft;
            let neighbors: Vec<(usize, Vector3<f64>)> = input
                .measured
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != rt.id)
                .map(|(j, x)| (j, position(x)))
                .filter(|(_, p)| e.distance(&me, p) < cfg.bvc_radius)
                .collect();
            let mut out = Vec::with_capacity(neighbors.len() + input.obstacles.len());
            for (j, p) in &neighbors {
                match bvc_constraints(&me, &[(*j, *p)], e, soft) {
                    Ok(mut hs) => out.append(&mut hs),
                    Err(Error::DegenerateGeometry(msg)) => log::warn!("agent {}: {msg}", rt.id),
                    Err(err) => return Err(err),
                }
            }
            for (idx, obs) in input.obstacles.iter().enumerate() {
                let pair = e.combine(&obs.ellipsoid);
                if pair.distance(&me, &obs.center) >= cfg.bvc_radius + pair.r_min {
                    continue;
                }
                match bvc_obstacle_constraint(&me, &obs.center, &pair, soft, obstacle_id(idx)) {
                    Ok(hs) => out.push(hs),
                    Err(Error::DegenerateGeometry(msg)) => log::warn!("agent {}: {msg}", rt.id),
                    Err(err) => return Err(err),
                }
            }
            Ok(out)
        }
        Method::OndemandState | Method::OndemandInput => {
            let space = if cfg.method == Method::OndemandState {
                AvoidanceSpace::State
            } else {
                AvoidanceSpace::Input
            };
            let mine = &rt.prediction;
            let k = ctx.horizon();
            let obstacles: Vec<HorizonPrediction> = input
                .obstacles
                .iter()
                .enumerate()
                .map(|(idx, o)| {
                    obstacle_as_neighbor(obstacle_id(idx), o.center, o.ellipsoid, k, mine.stamp)
                })
                .collect();
            let others = input
                .predictions
                .iter()
                .filter(|p| p.agent_id != rt.id)
                .chain(obstacles.iter());
            let mut out = Vec::new();
            for other in others {
                let pair = HorizonPrediction::pair_spec(e, other);
                let (argmin, dmin) = closest_approach(mine, other, &pair, space)?;
                if dmin >= 2.0 * pair.r_min {
                    continue;
                }
                let kc = detect_first_collision(mine, other, &pair, space)?.unwrap_or(argmin);
                let target = kc.saturating_sub(1).max(1);
                let anchor = mine.samples(space)[kc];
                let theirs = other.samples(space)[kc];
                let hs = match ondemand_constraint(&anchor, &theirs, &pair, target, other.agent_id)
                {
                    Ok(hs) => hs,
                    Err(Error::DegenerateGeometry(_)) => {
                        let them = input
                            .measured
                            .get(other.agent_id)
                            .map(position)
                            .unwrap_or(theirs);
                        halfspace_along(&(me - them), &theirs, &pair, target, other.agent_id)
                    }
                    Err(err) => return Err(err),
                };
                out.push(hs);
            }
            Ok(out)
        }
    }
}

/// One cycle of agent `rt.id`. Pure in its arguments.
pub fn update_agent(
    ctx: &PlannerContext,
    rt: &AgentRuntime,
    input: &CycleInput<'_>,
) -> Result<AgentUpdate> {
    let started = Instant::now();
    let cfg = &ctx.cfg;
    let x = input
        .measured
        .get(rt.id)
        .ok_or_else(|| invalid(format!("no measurement for agent {}", rt.id)))?;
    if rt.prediction.stamp != input.stamp {
        return Err(Error::StalePrediction {
            expected: input.stamp,
            found: rt.prediction.stamp,
        });
    }
    if let Some(p) = input.predictions.iter().find(|p| p.stamp != input.stamp) {
        return Err(Error::StalePrediction {
            expected: input.stamp,
            found: p.stamp,
        });
    }

    let u_now = rt
        .trajectory
        .as_ref()
        .map(|t| t.eval(cfg.h, 0))
        .unwrap_or_else(|| position(x));
    let f = activation(x, &u_now, cfg.eps_act);
    let (init, reset) = choose_initial_reference(x, rt.pending.as_ref(), &f, cfg.f_min, cfg.f_max);
    // The very first plan starts from the measured state, which is not a reset.
    let reset = reset && rt.pending.is_some();

    let collisions = collision_constraints(ctx, rt, input)?;
    let durations = cfg.durations();
    let cost = CostTerm {
        quad: ctx.quad.clone(),
        lin: ctx.goal.linear(x, &rt.goal),
    };
    let space = match cfg.method {
        Method::OndemandState => AvoidanceSpace::State,
        _ => AvoidanceSpace::Input,
    };
    let mut qp_ms = 0.0;
    let mut attempt = |init: &[Vector3<f64>; 3]| -> Result<Option<(DVector<f64>, f64)>> {
        let init_rows = initial_condition_constraints(cfg.segments, cfg.degree, &durations, init)?;
        let eq = LinearRows::stack(ctx.basis.num_vars(), &[&init_rows, &ctx.continuity]);
        let qp = assemble(&QpParts {
            cost: &cost,
            eq: &eq,
            ineq: &ctx.limits,
            collisions: &collisions,
            space,
            maps: &ctx.maps,
            x0: x,
            zeta: cfg.zeta,
            xi: cfg.xi,
        })?;
        let started = Instant::now();
        let sol = solve(&qp, &cfg.solver_settings());
        qp_ms += started.elapsed().as_secs_f64() * 1e3;
        if !sol.is_optimal() {
            log::debug!("agent {} cycle {}: QP {:?}", rt.id, input.stamp, sol.status);
            return Ok(None);
        }
        let n = ctx.basis.num_vars();
        let min_slack = sol.z.rows(n, qp.num_slack()).min().min(0.0);
        Ok(Some((sol.z.rows(0, n).into_owned(), min_slack)))
    };

    // If continuing the previous reference is infeasible (a hard cell can
    // exclude the pinned start), start over from the measured state, then
    // from the measured position at rest.
    let mut outcome = PlanOutcome::Solved;
    let mut solved = attempt(&init)?;
    if solved.is_none() && !reset {
        outcome = PlanOutcome::Repinned;
        solved = attempt(&[position(x), velocity(x), Vector3::zeros()])?;
        if solved.is_none() {
            solved = attempt(&[position(x), Vector3::zeros(), Vector3::zeros()])?;
        }
    }
    let (trajectory, min_slack) = match solved {
        Some((points, min_slack)) => (
            Trajectory::new(BezierSpline::new(cfg.degree, durations.clone(), points)?),
            min_slack,
        ),
        None => {
            outcome = PlanOutcome::Fallback;
            let traj = match &rt.trajectory {
                Some(t) => t.shifted(cfg.h),
                None => Trajectory::hover(cfg, position(x))?,
            };
            (traj, 0.0)
        }
    };

    let (positions, inputs) = ctx.predict(x, &trajectory);
    let prediction = HorizonPrediction {
        agent_id: rt.id,
        positions,
        inputs,
        stamp: input.stamp + 1,
        kind: rt.prediction.kind,
    };
    let pending = Some([
        trajectory.eval(cfg.h, 0),
        trajectory.eval(cfg.h, 1),
        trajectory.eval(cfg.h, 2),
    ]);
    let fine_inputs = (0..cfg.fine_steps())
        .map(|j| trajectory.eval(j as f64 * cfg.ts, 0))
        .collect();

    Ok(AgentUpdate {
        runtime: AgentRuntime {
            id: rt.id,
            goal: rt.goal,
            trajectory: Some(trajectory),
            prediction,
            pending,
        },
        fine_inputs,
        reset,
        outcome,
        qp_ms,
        cycle_ms: started.elapsed().as_secs_f64() * 1e3,
        n_constraints: collisions.len(),
        min_slack,
    })
}
