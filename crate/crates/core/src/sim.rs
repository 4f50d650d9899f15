//! Cycle-synchronous swarm simulation and scenario generators.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::collision::{scaled_distance, EllipsoidSpec, HorizonPrediction};
use crate::dynamics::{position, state, velocity, LinearAgentModel, State};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::planner::{
    update_agent, AgentRuntime, CycleInput, ModelConfig, Obstacle, PlanOutcome, PlannerConfig,
    PlannerContext, Workspace,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_p: f64,
    pub sigma_v: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_p: 0.005,
            sigma_v: 0.02,
        }
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma_p: 0.0,
            sigma_v: 0.0,
        }
    }
}

/// Push on one agent: the true position jumps by `offset` and the agent is
/// left moving along it at the scenario's push speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub time: f64,
    pub agent: usize,
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub workspace: Workspace,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    /// Simulated time limit, s.
    pub duration: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    /// Speed left on a pushed agent, m/s.
    #[serde(default = "default_push_speed")]
    pub push_speed: f64,
    pub seed: u64,
}

fn default_push_speed() -> f64 {
    0.1
}

impl ScenarioSpec {
    pub fn validate(&self, e: &EllipsoidSpec) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Scenario("no agents".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Scenario("duration must be positive".into()));
        }
        if self.noise.sigma_p < 0.0 || self.noise.sigma_v < 0.0 {
            return Err(Error::Scenario("noise levels must be non-negative".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !self.workspace.contains(&a.start) || !self.workspace.contains(&a.goal) {
                return Err(Error::Scenario(format!(
                    "agent {i} starts or ends outside the workspace"
                )));
            }
        }
        for i in 0..self.agents.len() {
            for j in i + 1..self.agents.len() {
                let (a, b) = (&self.agents[i], &self.agents[j]);
                if scaled_distance(e, &a.start, &b.start) < e.r_min {
                    return Err(Error::Scenario(format!(
                        "starts of agents {i} and {j} are too close"
                    )));
                }
                if scaled_distance(e, &a.goal, &b.goal) < e.r_min {
                    return Err(Error::Scenario(format!(
                        "goals of agents {i} and {j} are too close"
                    )));
                }
            }
        }
        for o in &self.obstacles {
            o.ellipsoid.validate()?;
        }
        for d in &self.disturbances {
            if d.agent >= self.agents.len() {
                return Err(Error::Scenario(format!(
                    "disturbance targets unknown agent {}",
                    d.agent
                )));
            }
        }
        Ok(())
    }
}

/// Uniform starts and goals in `workspace`, pairwise at least `e.r_min`
/// apart in scaled distance.
pub fn random_transition_scenario(
    n_agents: usize,
    workspace: Workspace,
    e: &EllipsoidSpec,
    duration: f64,
    seed: u64,
) -> Result<ScenarioSpec> {
    const ATTEMPTS: usize = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |taken: &[Vector3<f64>]| -> Result<Vector3<f64>> {
        for _ in 0..ATTEMPTS {
            let p = Vector3::from_fn(|i, _| rng.random_range(workspace.min[i]..=workspace.max[i]));
            if taken.iter().all(|q| scaled_distance(e, &p, q) >= e.r_min) {
                return Ok(p);
            }
        }
        Err(Error::Scenario(format!(
            "could not place {n_agents} agents within {ATTEMPTS} attempts"
        )))
    };
    let mut starts = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let p = draw(&starts)?;
        starts.push(p);
    }
    let mut goals = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        let p = draw(&goals)?;
        goals.push(p);
    }
    Ok(ScenarioSpec {
        workspace,
        agents: starts
            .into_iter()
            .zip(goals)
            .map(|(start, goal)| AgentSpec { start, goal })
            .collect(),
        obstacles: Vec::new(),
        duration,
        noise: NoiseSpec::default(),
        disturbances: Vec::new(),
        push_speed: default_push_speed(),
        seed,
    })
}

/// Geometry of the hoop wall.
pub const HOOP_CENTER: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);
pub const HOOP_DIAMETER: f64 = 0.85;
pub const HOOP_GAP: f64 = 0.30;
/// Semi-axis of every wall ellipsoid across the wall, m.
const WALL_THICKNESS: f64 = 1.0;
const WALL_REACH: f64 = 1.5;
const WALL_SPAN: f64 = 3.0;

/// The four wall ellipsoids around the gap: left, right, bottom, top.
pub fn hoop_obstacles() -> Vec<Obstacle> {
    let half = HOOP_GAP / 2.0;
    let r = 0.3;
    let side = Vector3::new(WALL_THICKNESS, WALL_REACH, WALL_SPAN) / r;
    let cap = Vector3::new(WALL_THICKNESS, WALL_SPAN, WALL_REACH) / r;
    let off = half + WALL_REACH;
    [
        (Vector3::new(0.0, -off, 0.0), side),
        (Vector3::new(0.0, off, 0.0), side),
        (Vector3::new(0.0, 0.0, -off), cap),
        (Vector3::new(0.0, 0.0, off), cap),
    ]
    .into_iter()
    .map(|(d, theta)| Obstacle {
        center: HOOP_CENTER + d,
        ellipsoid: EllipsoidSpec { theta, r_min: r },
    })
    .collect()
}

/// Unit-radius ellipsoid with the semi-axes of `e` shrunk by `margin`.
pub fn obstacle_body(e: &EllipsoidSpec, margin: f64) -> Result<EllipsoidSpec> {
    let semi = e.theta * e.r_min - Vector3::repeat(margin);
    if semi.min() <= 0.0 {
        return Err(invalid(format!(
            "obstacle margin {margin} swallows a semi-axis of {:?}",
            (e.theta * e.r_min).as_slice()
        )));
    }
    Ok(EllipsoidSpec {
        theta: semi,
        r_min: 1.0,
    })
}

/// Lateral and vertical spacing of the start grid, m.
const HOOP_SPACING: f64 = 0.5;
const HOOP_ROW_OFFSET: f64 = 0.5;
/// Distance of the nearest start from the wall plane, m.
const HOOP_STANDOFF: f64 = 1.2;
/// Extra distance per agent, so arrivals at the gap are spread out.
const HOOP_STAGGER: f64 = 0.55;

/// `n_agents` queued on one side of the wall, each heading to its mirror
/// image through the gap centre.
pub fn hoop_scenario(n_agents: usize, duration: f64, seed: u64) -> Result<ScenarioSpec> {
    if n_agents == 0 || n_agents % 2 != 0 {
        return Err(invalid(format!(
            "hoop scenario needs an even agent count, got {n_agents}"
        )));
    }
    let cols = n_agents / 2;
    let mut agents = Vec::with_capacity(n_agents);
    for row in 0..2 {
        for col in 0..cols {
            let y = (col as f64 - (cols - 1) as f64 / 2.0) * HOOP_SPACING;
            let dz = if row == 0 {
                -HOOP_ROW_OFFSET
            } else {
                HOOP_ROW_OFFSET
            };
            let x = -HOOP_STANDOFF - HOOP_STAGGER * (row * cols + col) as f64;
            let start = HOOP_CENTER + Vector3::new(x, y, dz);
            let goal = HOOP_CENTER * 2.0 - start;
            agents.push(AgentSpec { start, goal });
        }
    }
    // Half a metre of room behind the last start and beside the outer columns.
    let reach = HOOP_STANDOFF + HOOP_STAGGER * (n_agents - 1) as f64 + 0.5;
    let half_y = (HOOP_SPACING * (cols - 1) as f64 / 2.0 + 0.5).max(1.5);
    Ok(ScenarioSpec {
        workspace: Workspace {
            min: Vector3::new(-reach, -half_y, 0.0),
            max: Vector3::new(reach, half_y, 2.0),
        },
        agents,
        obstacles: hoop_obstacles(),
        duration,
        noise: NoiseSpec::default(),
        disturbances: Vec::new(),
        push_speed: default_push_speed(),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Distance to goal for success, m.
    pub goal_tolerance: f64,
    /// Tighter distance reported as the settling envelope, m.
    pub envelope_tolerance: f64,
    /// Ellipsoid for declaring collisions.
    pub collision: EllipsoidSpec,
    /// Obstacles are checked against their planning ellipsoid with every
    /// semi-axis shrunk by this much, m.
    pub obstacle_margin: f64,
    /// Stop once every agent is within this distance of its goal.
    pub stop_tolerance: f64,
    pub stop_on_collision: bool,
    pub record_trajectory: bool,
    pub execution: Execution,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            goal_tolerance: 0.10,
            envelope_tolerance: 0.06,
            collision: EllipsoidSpec {
                theta: Vector3::new(1.0, 1.0, 2.25),
                r_min: 0.2,
            },
            obstacle_margin: 0.1,
            stop_tolerance: 0.10,
            stop_on_collision: true,
            record_trajectory: false,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub a: usize,
    /// Agent index, or obstacle id from [`crate::planner::obstacle_id`].
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResetEvent {
    pub cycle: u64,
    pub time: f64,
    pub agent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub agent_id: usize,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
    pub reset_flag: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub t: f64,
    pub min_dist_m: f64,
    pub max_dist_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub success: bool,
    pub failure: Option<String>,
    /// First time every agent was within the goal tolerance.
    pub transit_time: Option<f64>,
    /// First time every agent was within the envelope tolerance.
    pub envelope_time: Option<f64>,
    pub collision: Option<CollisionEvent>,
    /// Smallest pairwise scaled distance under the collision ellipsoid.
    pub min_scaled_distance: f64,
    /// Smallest agent-obstacle distance in units of the checked body; below 1
    /// is a collision.
    pub min_obstacle_distance: f64,
    /// Per-agent QP solve times, ms.
    pub qp_ms: Vec<f64>,
    /// Per-agent full update times, ms.
    pub cycle_ms: Vec<f64>,
    pub resets: Vec<ResetEvent>,
    pub fallbacks: usize,
    /// Plans that had to restart from the measured state.
    pub repins: usize,
    pub cycles: u64,
    pub final_time: f64,
}

impl RunMetrics {
    pub fn mean_qp_ms(&self) -> f64 {
        mean(&self.qp_ms)
    }

    pub fn p95_qp_ms(&self) -> f64 {
        percentile(&self.qp_ms, 0.95)
    }

    pub fn mean_cycle_ms(&self) -> f64 {
        mean(&self.cycle_ms)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Nearest-rank percentile.
pub fn percentile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1]
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub trajectory: Vec<TrajectoryRow>,
    pub envelope: Vec<EnvelopeRow>,
}

/// First pair closer than the collision ellipsoid allows.
pub fn collision_check(positions: &[Vector3<f64>], coll: &EllipsoidSpec) -> Option<(usize, usize)> {
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if scaled_distance(coll, &positions[i], &positions[j]) < coll.r_min {
                return Some((i, j));
            }
        }
    }
    None
}

/// True agent states plus the measurement channel.
pub struct World {
    pub truth: Vec<State>,
    model: LinearAgentModel,
    rng: ChaCha8Rng,
    noise_p: Option<Normal<f64>>,
    noise_v: Option<Normal<f64>>,
}

impl World {
    pub fn new(
        starts: &[Vector3<f64>],
        model: LinearAgentModel,
        noise: NoiseSpec,
        seed: u64,
    ) -> Result<Self> {
        let normal = |s: f64| -> Result<Option<Normal<f64>>> {
            if s == 0.0 {
                Ok(None)
            } else {
                Normal::new(0.0, s)
                    .map(Some)
                    .map_err(|e| invalid(format!("noise: {e}")))
            }
        };
        Ok(Self {
            truth: starts.iter().map(|p| state(*p, Vector3::zeros())).collect(),
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise_p: normal(noise.sigma_p)?,
            noise_v: normal(noise.sigma_v)?,
        })
    }

    pub fn measure(&mut self) -> Vec<State> {
        let mut out = self.truth.clone();
        for x in out.iter_mut() {
            for i in 0..3 {
                if let Some(n) = &self.noise_p {
                    x[i] += n.sample(&mut self.rng);
                }
            }
            for i in 3..6 {
                if let Some(n) = &self.noise_v {
                    x[i] += n.sample(&mut self.rng);
                }
            }
        }
        out
    }

    pub fn disturb(&mut self, agent: usize, offset: &Vector3<f64>, push_speed: f64) {
        let x = &mut self.truth[agent];
        let p = position(x) + offset;
        let norm = offset.norm();
        let v = if norm > 0.0 {
            offset * (push_speed / norm)
        } else {
            velocity(x)
        };
        *x = state(p, v);
    }

    /// One command period under per-agent references.
    pub fn step(&mut self, inputs: &[Vector3<f64>]) {
        for (x, u) in self.truth.iter_mut().zip(inputs) {
            *x = self.model.step(x, u);
        }
    }
}

/// Propagates true states over one planning period under fine-rate inputs
/// (`inputs[agent][j]`) and returns the new states and their measurement.
pub fn step_world(world: &mut World, inputs: &[Vec<Vector3<f64>>]) -> (Vec<State>, Vec<State>) {
    let steps = inputs.iter().map(Vec::len).max().unwrap_or(0);
    for j in 0..steps {
        let u: Vec<Vector3<f64>> = inputs.iter().map(|s| s[j.min(s.len() - 1)]).collect();
        world.step(&u);
    }
    let measured = world.measure();
    (world.truth.clone(), measured)
}

struct Tracker {
    n: usize,
    goals: Vec<Vector3<f64>>,
    obstacles: Vec<(Vector3<f64>, EllipsoidSpec)>,
    opts: SimOptions,
    min_pair: f64,
    min_obstacle: f64,
    collision: Option<CollisionEvent>,
    transit: Option<f64>,
    envelope_time: Option<f64>,
    envelope: Vec<EnvelopeRow>,
}

impl Tracker {
    fn observe(&mut self, t: f64, truth: &[State]) -> f64 {
        let positions: Vec<Vector3<f64>> = truth.iter().map(position).collect();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let d = scaled_distance(&self.opts.collision, &positions[i], &positions[j]);
                self.min_pair = self.min_pair.min(d);
                if d < self.opts.collision.r_min && self.collision.is_none() {
                    self.collision = Some(CollisionEvent {
                        time: t,
                        a: i,
                        b: j,
                    });
                }
            }
            for (k, o) in self.obstacles.iter().enumerate() {
                let d = scaled_distance(&o.1, &positions[i], &o.0);
                self.min_obstacle = self.min_obstacle.min(d);
                if d < o.1.r_min && self.collision.is_none() {
                    self.collision = Some(CollisionEvent {
                        time: t,
                        a: i,
                        b: crate::planner::obstacle_id(k),
                    });
                }
            }
        }
        let dists: Vec<f64> = positions
            .iter()
            .zip(&self.goals)
            .map(|(p, g)| (p - g).norm())
            .collect();
        let max = dists.iter().copied().fold(0.0, f64::max);
        let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        self.envelope.push(EnvelopeRow {
            t,
            min_dist_m: min,
            max_dist_m: max,
        });
        if max <= self.opts.goal_tolerance && self.transit.is_none() {
            self.transit = Some(t);
        }
        if max <= self.opts.envelope_tolerance && self.envelope_time.is_none() {
            self.envelope_time = Some(t);
        }
        max
    }
}

/// Runs one scenario to completion. Errors only on invalid input; planner
/// failures end the run and are reported in the metrics.
pub fn run_scenario(
    spec: &ScenarioSpec,
    model: &ModelConfig,
    cfg: &PlannerConfig,
    opts: &SimOptions,
) -> Result<RunOutput> {
    spec.validate(&cfg.ellipsoid)?;
    // The scenario owns the workspace bounds.
    let cfg = &PlannerConfig {
        workspace: spec.workspace,
        ..cfg.clone()
    };
    let ctx = PlannerContext::new(model, cfg)?;
    let n = spec.agents.len();
    let k = cfg.horizon;
    let starts: Vec<Vector3<f64>> = spec.agents.iter().map(|a| a.start).collect();
    let mut world = World::new(&starts, model.discretize(cfg.ts)?, spec.noise, spec.seed)?;

    let mut runtimes: Vec<AgentRuntime> = spec
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentRuntime::new(i, a.start, a.goal, k))
        .collect();
    let mut predictions: Vec<HorizonPrediction> =
        runtimes.iter().map(|r| r.prediction.clone()).collect();

    let mut tracker = Tracker {
        n,
        goals: spec.agents.iter().map(|a| a.goal).collect(),
        obstacles: spec
            .obstacles
            .iter()
            .map(|o| Ok((o.center, obstacle_body(&o.ellipsoid, opts.obstacle_margin)?)))
            .collect::<Result<_>>()?,
        opts: *opts,
        min_pair: f64::INFINITY,
        min_obstacle: f64::INFINITY,
        collision: None,
        transit: None,
        envelope_time: None,
        envelope: Vec::new(),
    };
    let mut metrics = RunMetrics {
        success: false,
        failure: None,
        transit_time: None,
        envelope_time: None,
        collision: None,
        min_scaled_distance: f64::INFINITY,
        min_obstacle_distance: f64::INFINITY,
        qp_ms: Vec::new(),
        cycle_ms: Vec::new(),
        resets: Vec::new(),
        fallbacks: 0,
        repins: 0,
        cycles: 0,
        final_time: 0.0,
    };
    let mut trajectory = Vec::new();
    let mut pending: Vec<Disturbance> = spec.disturbances.clone();
    pending.sort_by(|a, b| a.time.total_cmp(&b.time));
    pending.reverse();

    let fine = cfg.fine_steps();
    let mut t = 0.0;
    let mut cycle: u64 = 0;
    let mut max_dist = tracker.observe(t, &world.truth);
    let settled = |d: f64| d <= opts.stop_tolerance;

    while t < spec.duration - 1e-9 && !settled(max_dist) {
        if opts.stop_on_collision && tracker.collision.is_some() {
            break;
        }
        while pending.last().is_some_and(|d| d.time <= t + 1e-9) {
            let d = pending.pop().expect("checked");
            world.disturb(d.agent, &d.offset, spec.push_speed);
        }
        let measured = world.measure();
        let input = CycleInput {
            stamp: cycle,
            measured: &measured,
            predictions: &predictions,
            obstacles: &spec.obstacles,
        };
        let updates = opts
            .execution
            .map(&runtimes, |rt| update_agent(&ctx, rt, &input));
        let mut new_runtimes = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        let mut resets = vec![false; n];
        for (i, up) in updates.into_iter().enumerate() {
            let up = match up {
                Ok(up) => up,
                Err(err) => {
                    metrics.failure = Some(format!("planner error for agent {i}: {err}"));
                    break;
                }
            };
            metrics.qp_ms.push(up.qp_ms);
            metrics.cycle_ms.push(up.cycle_ms);
            if up.reset {
                metrics.resets.push(ResetEvent {
                    cycle,
                    time: t,
                    agent: i,
                });
                resets[i] = true;
            }
            match up.outcome {
                PlanOutcome::Fallback => metrics.fallbacks += 1,
                PlanOutcome::Repinned => metrics.repins += 1,
                PlanOutcome::Solved => {}
            }
            inputs.push(up.fine_inputs);
            new_runtimes.push(up.runtime);
        }
        if metrics.failure.is_some() {
            break;
        }
        runtimes = new_runtimes;
        predictions = runtimes.iter().map(|r| r.prediction.clone()).collect();

        for j in 0..fine {
            let u: Vec<Vector3<f64>> = inputs.iter().map(|s: &Vec<Vector3<f64>>| s[j]).collect();
            if opts.record_trajectory {
                for (i, x) in world.truth.iter().enumerate() {
                    trajectory.push(TrajectoryRow {
                        t,
                        agent_id: i,
                        px: x[0],
                        py: x[1],
                        pz: x[2],
                        vx: x[3],
                        vy: x[4],
                        vz: x[5],
                        ux: u[i].x,
                        uy: u[i].y,
                        uz: u[i].z,
                        reset_flag: u8::from(j == 0 && resets[i]),
                    });
                }
            }
            world.step(&u);
            t = (cycle as f64) * cfg.h + (j + 1) as f64 * cfg.ts;
            max_dist = tracker.observe(t, &world.truth);
        }
        cycle += 1;
        t = cycle as f64 * cfg.h;
    }

    metrics.cycles = cycle;
    metrics.final_time = t;
    metrics.collision = tracker.collision;
    metrics.transit_time = tracker.transit;
    metrics.envelope_time = tracker.envelope_time;
    metrics.min_scaled_distance = tracker.min_pair;
    metrics.min_obstacle_distance = tracker.min_obstacle;
    if metrics.failure.is_none() {
        if let Some(c) = &metrics.collision {
            metrics.failure = Some(format!(
                "collision between {} and {} at t = {:.2}",
                c.a, c.b, c.time
            ));
        } else if metrics.transit_time.is_none_or(|tt| tt > spec.duration) {
            metrics.failure = Some("goals not reached in time".into());
        }
    }
    metrics.success = metrics.failure.is_none();
    Ok(RunOutput {
        metrics,
        trajectory,
        envelope: tracker.envelope,
    })
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_envelope_csv<W: Write>(rows: &[EnvelopeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scenario_json(spec: &ScenarioSpec, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, spec)?;
    Ok(())
}
