//! Environments: kinematics, collision/goal predicates, task generation,
//! preference functions, and the chasing-game variant.
//!
//! Steppers integrate the printed vector fields and nothing else; action
//! boxes are enforced by the simulation layer through [`ActionBox::clamp`]
//! so that callers can still probe the raw dynamics (the drone's hover
//! fixed point needs thrust equal to gravity, far outside the box).
//! Everything here is pure and deterministic; one tick of a world steps
//! all agents against the same immutable snapshot.

pub mod lqr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};

/// Disc/sphere radius shared by agents and obstacles.
pub const ENTITY_RADIUS: f64 = 0.15;
/// Agents closer than this (center to center) are in collision.
pub const COLLISION_DISTANCE: f64 = 0.3;
/// Goal-reaching distance for the multi-agent environments.
pub const GOAL_DISTANCE: f64 = 0.45;
/// Goal-reaching distance for the single-agent integrator.
pub const INTEGRATOR_GOAL_DISTANCE: f64 = 0.3;
/// Neighbor radius for egocentric graph construction.
pub const NEIGHBOR_RADIUS: f64 = 1.5;
/// Minimum center-to-center clearance when placing entities.
pub const PLACEMENT_CLEARANCE: f64 = 0.31;
pub const GRAVITY: f64 = 9.8;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum EnvKind {
    /// Constant-speed Dubins car, 1D turn-rate action, dt = 1.
    #[serde(rename = "car")]
    Car,
    /// Dubins car with controllable acceleration, dt = 0.05.
    #[serde(rename = "dyn-dubins")]
    DynDubins,
    /// 9D quadrotor, 4D action, dt = 0.01 with 10 Euler substeps per tick.
    #[serde(rename = "drone")]
    Drone,
    /// 2D single integrator used by the single-agent study, dt = 0.05.
    #[serde(rename = "integrator")]
    Integrator2D,
}

impl EnvKind {
    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Car => 3,
            EnvKind::DynDubins => 4,
            EnvKind::Drone => 9,
            EnvKind::Integrator2D => 2,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::Car => 1,
            EnvKind::DynDubins => 2,
            EnvKind::Drone => 4,
            EnvKind::Integrator2D => 2,
        }
    }

    /// Number of leading position components in the state vector.
    pub fn position_dim(self) -> usize {
        match self {
            EnvKind::Drone => 3,
            _ => 2,
        }
    }

    pub fn action_box(self) -> ActionBox {
        let half_width = match self {
            EnvKind::Car => 2.0 * std::f64::consts::PI / 3.0,
            _ => 1.0,
        };
        ActionBox { dim: self.action_dim(), half_width }
    }

    pub fn goal_distance(self) -> f64 {
        match self {
            EnvKind::Integrator2D => INTEGRATOR_GOAL_DISTANCE,
            _ => GOAL_DISTANCE,
        }
    }

    /// Default episode horizon: enough ticks to cross the training map at
    /// printed speeds with wide margin.
    pub fn default_horizon(self) -> usize {
        match self {
            EnvKind::Car | EnvKind::Integrator2D => 128,
            EnvKind::DynDubins | EnvKind::Drone => 256,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Car => "car",
            EnvKind::DynDubins => "dyn-dubins",
            EnvKind::Drone => "drone",
            EnvKind::Integrator2D => "integrator",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = CamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "car" => Ok(EnvKind::Car),
            "dyn-dubins" => Ok(EnvKind::DynDubins),
            "drone" => Ok(EnvKind::Drone),
            "integrator" => Ok(EnvKind::Integrator2D),
            other => Err(CamError::Config(format!(
                "unknown environment '{other}', expected car, dyn-dubins, drone, or integrator"
            ))),
        }
    }
}

/// Symmetric per-dimension action bounds.
#[derive(Clone, Copy, Debug)]
pub struct ActionBox {
    pub dim: usize,
    pub half_width: f64,
}

impl ActionBox {
    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim && a.iter().all(|v| v.abs() <= self.half_width)
    }

    /// Clamp in place; true if any component actually moved.
    pub fn clamp(&self, a: &mut [f64]) -> bool {
        let mut moved = false;
        for v in a.iter_mut() {
            let c = v.clamp(-self.half_width, self.half_width);
            if c != *v {
                *v = c;
                moved = true;
            }
        }
        moved
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.dim)
            .map(|_| rng.random_range(-self.half_width..self.half_width))
            .collect()
    }

    /// n independent uniform draws, the candidate set for one decision.
    pub fn sample_n(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// Axis-aligned danger region for the single-agent integrator map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Rect { min: [xmin, ymin], max: [xmax, ymax] }
    }

    /// Euclidean distance from a point to this rectangle; 0 inside.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let dx = (self.min[0] - p[0]).max(0.0).max(p[0] - self.max[0]);
        let dy = (self.min[1] - p[1]).max(0.0).max(p[1] - self.max[1]);
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    Navigation,
    Chasing,
}

/// Generator parameters for one episode's world.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub env: EnvKind,
    pub agents: usize,
    pub obstacles: usize,
    pub map_side: f64,
    pub seed: u64,
    pub mode: TaskMode,
    pub horizon: usize,
}

impl TaskSpec {
    pub fn navigation(env: EnvKind, agents: usize, obstacles: usize, map_side: f64, seed: u64) -> Self {
        TaskSpec {
            env,
            agents,
            obstacles,
            map_side,
            seed,
            mode: TaskMode::Navigation,
            horizon: env.default_horizon(),
        }
    }
}

/// Full world snapshot at one timestep.
#[derive(Clone, Debug)]
pub struct WorldState {
    pub env: EnvKind,
    pub agents: Vec<Vec<f64>>,
    pub goals: Vec<Vec<f64>>,
    /// Circle (2D) / infinite-cylinder (Drone) centers.
    pub obstacles: Vec<[f64; 2]>,
    /// Rectangular danger regions (single-agent integrator map).
    pub danger_rects: Vec<Rect>,
    pub map_side: f64,
    pub t: usize,
    pub reached: Vec<bool>,
    pub goal_distance: f64,
    /// Chasing mode: fixed target assignment (no self-targets).
    pub chase_targets: Option<Vec<usize>>,
}

impl WorldState {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn position(&self, agent_id: usize) -> &[f64] {
        &self.agents[agent_id][..self.env.position_dim()]
    }
}

// ─── dynamics ───────────────────────────────────────────────────────────

/// Wrap to [0, 2π).
pub fn wrap_angle(theta: f64) -> f64 {
    theta.rem_euclid(std::f64::consts::TAU)
}

/// Constant speed 0.05; position advances along the updated heading.
pub fn step_car(s: &[f64], theta_dot: f64) -> Vec<f64> {
    const SPEED: f64 = 0.05;
    const DT: f64 = 1.0;
    let heading = s[2] + theta_dot * DT;
    vec![
        s[0] + SPEED * heading.sin() * DT,
        s[1] + SPEED * heading.cos() * DT,
        wrap_angle(heading),
    ]
}

/// State [p_x, p_y, v, θ]; action [q, θ̇]. Position uses the current speed
/// and the updated heading; speed then integrates and clamps to [0, 1].
pub fn step_dyn_dubins(s: &[f64], a: &[f64]) -> Vec<f64> {
    const DT: f64 = 0.05;
    let heading = s[3] + a[1] * DT;
    vec![
        s[0] + s[2] * heading.sin() * DT,
        s[1] + s[2] * heading.cos() * DT,
        (s[2] + a[0] * DT).clamp(0.0, 1.0),
        wrap_angle(heading),
    ]
}

/// State [p, v, α, β, γ]; action [q, α̇, β̇, γ̇]. Ten simultaneous Euler
/// substeps of dt = 0.01, then velocity and angle clamps. Angles clamp to
/// [−π/2, π/2] rather than wrapping.
pub fn step_drone(s: &[f64], a: &[f64]) -> Vec<f64> {
    const DT: f64 = 0.01;
    const SUBSTEPS: usize = 10;
    let (q, alpha_dot, beta_dot, gamma_dot) = (a[0], a[1], a[2], a[3]);
    let mut x = s.to_vec();
    for _ in 0..SUBSTEPS {
        let (vx, vy, vz) = (x[3], x[4], x[5]);
        let (alpha, beta) = (x[6], x[7]);
        let ax = -beta.sin() * q;
        let ay = beta.cos() * alpha.sin() * q;
        let az = beta.cos() * alpha.cos() * q - GRAVITY;
        x[0] += vx * DT;
        x[1] += vy * DT;
        x[2] += vz * DT;
        x[3] += ax * DT;
        x[4] += ay * DT;
        x[5] += az * DT;
        x[6] += alpha_dot * DT;
        x[7] += beta_dot * DT;
        x[8] += gamma_dot * DT;
    }
    for v in &mut x[3..6] {
        *v = v.clamp(-1.0, 1.0);
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    for ang in &mut x[6..9] {
        *ang = ang.clamp(-half_pi, half_pi);
    }
    x
}

pub fn step_integrator(s: &[f64], a: &[f64]) -> Vec<f64> {
    const DT: f64 = 0.05;
    vec![s[0] + a[0] * DT, s[1] + a[1] * DT]
}

/// Dispatch on the environment kind. Actions are taken as given; clamp
/// with [`ActionBox::clamp`] first when box enforcement is wanted.
pub fn step_agent(env: EnvKind, s: &[f64], a: &[f64]) -> Vec<f64> {
    debug_assert_eq!(s.len(), env.state_dim());
    debug_assert_eq!(a.len(), env.action_dim());
    match env {
        EnvKind::Car => step_car(s, a[0]),
        EnvKind::DynDubins => step_dyn_dubins(s, a),
        EnvKind::Drone => step_drone(s, a),
        EnvKind::Integrator2D => step_integrator(s, a),
    }
}

// ─── predicates ─────────────────────────────────────────────────────────

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Agent-to-agent distance: full position space (3D for drones).
fn agent_distance(env: EnvKind, a: &[f64], b: &[f64]) -> f64 {
    let pd = env.position_dim();
    dist(&a[..pd], &b[..pd])
}

/// Agent-to-obstacle distance: horizontal only for drone cylinders.
fn obstacle_distance(a: &[f64], center: [f64; 2]) -> f64 {
    dist(&a[..2], &center)
}

/// Per-agent collision flags at the given snapshot. Strict inequality at
/// the 0.3 boundary; symmetric by construction.
pub fn check_collisions(w: &WorldState) -> Vec<bool> {
    let n = w.agents.len();
    let mut hit = vec![false; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if agent_distance(w.env, &w.agents[i], &w.agents[j]) < COLLISION_DISTANCE {
                hit[i] = true;
                hit[j] = true;
            }
        }
        for &ob in &w.obstacles {
            if obstacle_distance(&w.agents[i], ob) < COLLISION_DISTANCE {
                hit[i] = true;
            }
        }
        if !w.danger_rects.is_empty() {
            let p = [w.agents[i][0], w.agents[i][1]];
            if w.danger_rects.iter().any(|r| r.distance(p) < ENTITY_RADIUS) {
                hit[i] = true;
            }
        }
    }
    hit
}

/// Goal test: position within `goal_distance` (strict) of the goal.
pub fn check_goal(env: EnvKind, state: &[f64], goal: &[f64], goal_distance: f64) -> bool {
    dist(&state[..env.position_dim()], goal) < goal_distance
}

// ─── task generation ────────────────────────────────────────────────────

/// Layout of the fixed single-agent integrator map: three bars forming two
/// narrow passages between start and goal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegratorLayout {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_distance: f64,
    pub rects: Vec<Rect>,
    pub map_side: f64,
}

impl Default for IntegratorLayout {
    fn default() -> Self {
        IntegratorLayout {
            start: [0.0, -1.7],
            goal: [0.0, 1.7],
            goal_distance: INTEGRATOR_GOAL_DISTANCE,
            rects: vec![
                Rect::new(-3.0, -0.3, -1.2, 0.3),
                Rect::new(-0.45, -0.3, 0.45, 0.3),
                Rect::new(1.2, -0.3, 3.0, 0.3),
            ],
            map_side: 6.0,
        }
    }
}

/// Fixed single-agent world for the given layout (coordinates centered on
/// the origin, unlike the sampled multi-agent maps).
pub fn integrator_world(layout: &IntegratorLayout) -> WorldState {
    WorldState {
        env: EnvKind::Integrator2D,
        agents: vec![layout.start.to_vec()],
        goals: vec![layout.goal.to_vec()],
        obstacles: Vec::new(),
        danger_rects: layout.rects.clone(),
        map_side: layout.map_side,
        t: 0,
        reached: vec![false],
        goal_distance: layout.goal_distance,
        chase_targets: None,
    }
}

/// Random permutation with no fixed points, by rejection.
pub fn derangement(n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(CamError::Config(
            "chasing needs at least 2 agents for a derangement".into(),
        ));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        // Fisher-Yates, explicit so the draw sequence is pinned.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// Place agents, goals, and obstacles uniformly with pairwise clearance,
/// rejection-sampling within a global attempt budget. Worlds are
/// collision-free at t = 0 by construction.
pub fn sample_task(spec: &TaskSpec, rng: &mut impl Rng) -> Result<WorldState> {
    if spec.map_side < 1.0 {
        return Err(CamError::Config(format!(
            "map side {} must be at least 1",
            spec.map_side
        )));
    }
    if spec.env == EnvKind::Integrator2D {
        // Fixed start/goal/danger layout; counts in the spec are ignored.
        return Ok(integrator_world(&IntegratorLayout::default()));
    }

    let pd = spec.env.position_dim();
    let side = spec.map_side;
    let mut attempts_left: u32 = 10_000;
    // Positions placed so far, as (point, is_cylinder). Cylinders have no
    // z extent, so their clearance checks use horizontal distance only.
    let mut placed: Vec<(Vec<f64>, bool)> = Vec::new();

    let place = |placed: &mut Vec<(Vec<f64>, bool)>,
                 rng: &mut dyn rand::RngCore,
                 attempts_left: &mut u32,
                 dims: usize,
                 cylinder: bool|
     -> Result<Vec<f64>> {
        loop {
            if *attempts_left == 0 {
                return Err(CamError::Density(format!(
                    "could not place {} agents / {} obstacles on a {side}x{side} map \
                     with clearance {PLACEMENT_CLEARANCE}",
                    spec.agents, spec.obstacles
                )));
            }
            *attempts_left -= 1;
            let p: Vec<f64> = (0..dims).map(|_| rng.random_range(0.0..side)).collect();
            let clear = placed.iter().all(|(q, q_cyl)| {
                let d = if cylinder || *q_cyl {
                    dist(&p[..2], &q[..2])
                } else {
                    let k = dims.min(q.len());
                    dist(&p[..k], &q[..k])
                };
                d >= PLACEMENT_CLEARANCE
            });
            if clear {
                placed.push((p.clone(), cylinder));
                return Ok(p);
            }
        }
    };

    let mut agents = Vec::with_capacity(spec.agents);
    for _ in 0..spec.agents {
        let p = place(&mut placed, rng, &mut attempts_left, pd, false)?;
        let state = match spec.env {
            EnvKind::Car => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                vec![p[0], p[1], theta]
            }
            EnvKind::DynDubins => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                vec![p[0], p[1], 0.0, theta]
            }
            EnvKind::Drone => vec![p[0], p[1], p[2], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            EnvKind::Integrator2D => unreachable!(),
        };
        agents.push(state);
    }

    let (goals, chase_targets) = match spec.mode {
        TaskMode::Navigation => {
            let mut goals = Vec::with_capacity(spec.agents);
            for _ in 0..spec.agents {
                goals.push(place(&mut placed, rng, &mut attempts_left, pd, false)?);
            }
            (goals, None)
        }
        TaskMode::Chasing => {
            let targets = derangement(spec.agents, rng)?;
            let goals = targets
                .iter()
                .map(|&t| agents[t][..pd].to_vec())
                .collect();
            (goals, Some(targets))
        }
    };

    let mut obstacles = Vec::with_capacity(spec.obstacles);
    for _ in 0..spec.obstacles {
        let p = place(&mut placed, rng, &mut attempts_left, 2, true)?;
        obstacles.push([p[0], p[1]]);
    }

    Ok(WorldState {
        env: spec.env,
        agents,
        goals,
        obstacles,
        danger_rects: Vec::new(),
        map_side: side,
        t: 0,
        reached: vec![false; spec.agents],
        goal_distance: spec.env.goal_distance(),
        chase_targets,
    })
}

// ─── chasing game ───────────────────────────────────────────────────────

/// Per-step chasing payoff: clipped distance improvement.
pub fn chasing_reward(d_prev: f64, d_cur: f64) -> f64 {
    (d_prev - d_cur).clamp(0.0, 2.0)
}

/// Reset every agent's goal to its target's current position. Assignment
/// is fixed for the whole episode.
pub fn chasing_retarget(w: &mut WorldState) {
    let Some(targets) = w.chase_targets.clone() else {
        return;
    };
    let pd = w.env.position_dim();
    for (i, &t) in targets.iter().enumerate() {
        w.goals[i] = w.agents[t][..pd].to_vec();
    }
}

// ─── preference functions ───────────────────────────────────────────────

/// Negative squared distance from the action's successor position to the
/// goal. Higher is better; 0 only when the step lands exactly on the goal.
pub fn preference_l2(w: &WorldState, agent_id: usize, goal: &[f64], action: &[f64]) -> f64 {
    let next = step_agent(w.env, &w.agents[agent_id], action);
    let d = dist(&next[..w.env.position_dim()], goal);
    -(d * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const TOL: f64 = 1e-12;

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= TOL, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn car_straight_ahead() {
        assert_close(&step_car(&[0.0, 0.0, 0.0], 0.0), &[0.0, 0.05, 0.0]);
    }

    #[test]
    fn car_turning_step() {
        let s = step_car(&[0.0, 0.0, 0.0], 0.1);
        assert_close(
            &s,
            &[0.05 * 0.1f64.sin(), 0.05 * 0.1f64.cos(), 0.1],
        );
    }

    #[test]
    fn car_heading_wraps() {
        let s = step_car(&[0.0, 0.0, std::f64::consts::TAU - 0.05], 0.1);
        assert!((s[2] - 0.05).abs() <= TOL);
    }

    #[test]
    fn dyn_dubins_zero_velocity_holds_position() {
        let s = step_dyn_dubins(&[1.0, 2.0, 0.0, 0.3], &[0.0, 0.9]);
        assert!((s[0] - 1.0).abs() <= TOL && (s[1] - 2.0).abs() <= TOL);
    }

    #[test]
    fn dyn_dubins_speed_saturates() {
        let s = step_dyn_dubins(&[0.0, 0.0, 1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(s[2], 1.0);
    }

    #[test]
    fn dyn_dubins_printed_example() {
        let s = step_dyn_dubins(&[0.0, 0.0, 0.5, 0.0], &[0.0, 0.0]);
        assert_close(&s, &[0.0, 0.025, 0.5, 0.0]);
    }

    #[test]
    fn drone_hover_is_a_fixed_point() {
        let zero = vec![0.0; 9];
        let s = step_drone(&zero, &[GRAVITY, 0.0, 0.0, 0.0]);
        assert_close(&s, &zero);
    }

    #[test]
    fn drone_free_fall_accumulates_euler_terms() {
        let s = step_drone(&vec![0.0; 9], &[0.0; 4]);
        assert!((s[5] - (-0.98)).abs() <= TOL, "v_z = {}", s[5]);
        assert!((s[2] - (-0.0441)).abs() <= TOL, "p_z = {}", s[2]);
    }

    #[test]
    fn drone_angle_clamps_at_half_pi() {
        let mut x = vec![0.0; 9];
        x[6] = std::f64::consts::FRAC_PI_2 - 0.01;
        let s = step_drone(&x, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s[6], std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn integrator_steps() {
        assert_close(&step_integrator(&[0.0, 0.0], &[0.0, 0.0]), &[0.0, 0.0]);
        assert_close(&step_integrator(&[0.0, 0.0], &[1.0, 0.0]), &[0.05, 0.0]);
        assert_close(&step_integrator(&[0.0, 0.0], &[-1.0, -1.0]), &[-0.05, -0.05]);
    }

    fn car_world(agents: Vec<Vec<f64>>, obstacles: Vec<[f64; 2]>) -> WorldState {
        let n = agents.len();
        WorldState {
            env: EnvKind::Car,
            goals: vec![vec![10.0, 10.0]; n],
            agents,
            obstacles,
            danger_rects: Vec::new(),
            map_side: 3.0,
            t: 0,
            reached: vec![false; n],
            goal_distance: GOAL_DISTANCE,
            chase_targets: None,
        }
    }

    #[test]
    fn collision_boundary_is_strict() {
        let close = car_world(
            vec![vec![0.0, 0.0, 0.0], vec![0.29, 0.0, 0.0]],
            Vec::new(),
        );
        assert_eq!(check_collisions(&close), vec![true, true]);
        let exact = car_world(
            vec![vec![0.0, 0.0, 0.0], vec![0.30, 0.0, 0.0]],
            Vec::new(),
        );
        assert_eq!(check_collisions(&exact), vec![false, false]);
    }

    #[test]
    fn drone_cylinder_collision_ignores_altitude() {
        let mut agent = vec![0.0; 9];
        agent[0] = 0.1;
        agent[2] = 5.0;
        let w = WorldState {
            env: EnvKind::Drone,
            agents: vec![agent],
            goals: vec![vec![2.0, 2.0, 2.0]],
            obstacles: vec![[0.0, 0.0]],
            danger_rects: Vec::new(),
            map_side: 3.0,
            t: 0,
            reached: vec![false],
            goal_distance: GOAL_DISTANCE,
            chase_targets: None,
        };
        assert_eq!(check_collisions(&w), vec![true]);
    }

    #[test]
    fn rect_danger_uses_disc_intersection() {
        let layout = IntegratorLayout::default();
        let mut w = integrator_world(&layout);
        w.agents[0] = vec![0.0, 0.0]; // inside the middle bar
        assert_eq!(check_collisions(&w), vec![true]);
        w.agents[0] = vec![0.0, 0.449]; // 0.149 above the bar edge
        assert_eq!(check_collisions(&w), vec![true]);
        w.agents[0] = vec![0.0, 0.46]; // 0.16 above, clear
        assert_eq!(check_collisions(&w), vec![false]);
        w.agents[0] = layout.start.to_vec();
        assert_eq!(check_collisions(&w), vec![false]);
    }

    #[test]
    fn goal_test_boundaries() {
        let goal = [0.0, 0.0];
        assert!(check_goal(EnvKind::Car, &[0.44, 0.0, 0.0], &goal, GOAL_DISTANCE));
        assert!(!check_goal(EnvKind::Car, &[0.46, 0.0, 0.0], &goal, GOAL_DISTANCE));
        assert!(check_goal(EnvKind::Car, &[0.0, 0.0, 1.0], &goal, GOAL_DISTANCE));
    }

    #[test]
    fn sampled_tasks_are_deterministic_and_clear() {
        let spec = TaskSpec::navigation(EnvKind::Car, 3, 4, 3.0, 7);
        let mut r1 = ChaCha12Rng::seed_from_u64(7);
        let mut r2 = ChaCha12Rng::seed_from_u64(7);
        let w1 = sample_task(&spec, &mut r1).unwrap();
        let w2 = sample_task(&spec, &mut r2).unwrap();
        assert_eq!(w1.agents, w2.agents);
        assert_eq!(w1.goals, w2.goals);
        assert_eq!(w1.obstacles, w2.obstacles);
        assert!(check_collisions(&w1).iter().all(|c| !c));
        // Goals clear of obstacles by the same placement margin.
        for g in &w1.goals {
            for &ob in &w1.obstacles {
                assert!(dist(&g[..2], &ob) >= PLACEMENT_CLEARANCE);
            }
        }
        for a in &w1.agents {
            assert!(a[2] >= 0.0 && a[2] < std::f64::consts::TAU);
        }
    }

    #[test]
    fn zero_obstacles_gives_empty_list() {
        let spec = TaskSpec::navigation(EnvKind::DynDubins, 2, 0, 3.0, 1);
        let w = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(1)).unwrap();
        assert!(w.obstacles.is_empty());
        for a in &w.agents {
            assert_eq!(a[2], 0.0); // speed starts at zero
        }
    }

    #[test]
    fn overpacked_map_is_a_density_error() {
        let spec = TaskSpec::navigation(EnvKind::Car, 512, 0, 3.0, 3);
        let err = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(3)).unwrap_err();
        assert!(matches!(err, CamError::Density(_)));
    }

    #[test]
    fn drone_tasks_place_in_three_dimensions() {
        let spec = TaskSpec::navigation(EnvKind::Drone, 3, 3, 3.0, 11);
        let w = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(11)).unwrap();
        for a in &w.agents {
            assert_eq!(a.len(), 9);
            assert!(a[2] >= 0.0 && a[2] <= 3.0);
            assert!(a[3..].iter().all(|v| *v == 0.0));
        }
        assert!(w.goals.iter().all(|g| g.len() == 3));
    }

    #[test]
    fn preference_prefers_progress() {
        let layout = IntegratorLayout::default();
        let mut w = integrator_world(&layout);
        w.agents[0] = vec![0.0, 0.0];
        let goal = [0.0, 1.0];
        let toward = preference_l2(&w, 0, &goal, &[0.0, 1.0]);
        let away = preference_l2(&w, 0, &goal, &[0.0, -1.0]);
        assert!((toward - (-0.9025)).abs() <= TOL, "{toward}");
        assert!(toward > away);
        w.agents[0] = vec![0.0, 1.0];
        assert_eq!(preference_l2(&w, 0, &goal, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn chasing_reward_clips_both_sides() {
        assert_eq!(chasing_reward(2.0, 1.5), 0.5);
        assert_eq!(chasing_reward(1.5, 3.0), 0.0);
        assert_eq!(chasing_reward(5.0, 1.0), 2.0);
    }

    #[test]
    fn derangements_have_no_fixed_points_and_are_seeded() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let d = derangement(64, &mut rng).unwrap();
        assert!(d.iter().enumerate().all(|(i, &p)| i != p));
        let mut rng2 = ChaCha12Rng::seed_from_u64(5);
        assert_eq!(d, derangement(64, &mut rng2).unwrap());
        let mut rng3 = ChaCha12Rng::seed_from_u64(9);
        assert_eq!(derangement(2, &mut rng3).unwrap(), vec![1, 0]);
        assert!(derangement(1, &mut ChaCha12Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn chasing_tasks_retarget_to_positions() {
        let spec = TaskSpec {
            env: EnvKind::Car,
            agents: 4,
            obstacles: 0,
            map_side: 3.0,
            seed: 13,
            mode: TaskMode::Chasing,
            horizon: 64,
        };
        let mut w = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(13)).unwrap();
        let targets = w.chase_targets.clone().unwrap();
        assert!(targets.iter().enumerate().all(|(i, &p)| i != p));
        w.agents[targets[0]][0] += 0.5;
        chasing_retarget(&mut w);
        assert_eq!(w.goals[0], w.agents[targets[0]][..2].to_vec());
    }
}
