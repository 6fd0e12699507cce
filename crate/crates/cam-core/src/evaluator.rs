//! Deployment-side evaluation: greedy rollouts over seeded task sets,
//! the safety/reward/success metrics, density sweeps, the chasing game,
//! forward-invariance analysis, decision timing, and score-landscape
//! export.
//!
//! Everything except wall-clock timing is bit-reproducible under a fixed
//! seed; timing numbers live in their own report and are serialized
//! separately so metric files stay byte-identical across reruns.

use rayon::prelude::*;
use serde::Serialize;

use crate::cam::{cam_score_batch, CamModel, CamState};
use crate::error::{CamError, Result};
use crate::graph::SubgraphCaps;
use crate::rng::rng_for;
use crate::trainer::{rollout_episode, EpisodeLog, RolloutCfg, ScoringMode};
use crate::worlds::{sample_task, TaskSpec, WorldState};

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    /// Mean over agents of (1 - collision steps / total steps).
    pub safety_rate: f64,
    /// Mean per-agent reward: navigation uses the -1/+10/-0.1 scheme,
    /// chasing the clipped approach reward.
    pub mean_reward: f64,
    /// Fraction of agents that reached their goal with zero collision
    /// steps. Chasing episodes have no goals, so there it stays 0.
    pub success_rate: f64,
    /// Wall-clock scoring cost. Excluded from serialized metrics so
    /// emitted files stay reproducible; see [`decision_timing`].
    #[serde(skip)]
    pub mean_decision_ms: f64,
    #[serde(skip)]
    pub max_decision_ms: f64,
    pub tasks: usize,
    pub agents: usize,
}

/// How evaluation rollouts score candidates. Greedy: no exploration noise.
#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub candidates: usize,
    pub horizon: usize,
    pub use_decomposition: bool,
    pub caps: SubgraphCaps,
    pub master_seed: u64,
}

impl EvalConfig {
    pub fn new(candidates: usize, horizon: usize, master_seed: u64) -> Self {
        EvalConfig {
            candidates,
            horizon,
            use_decomposition: false,
            caps: SubgraphCaps::default(),
            master_seed,
        }
    }

    fn mode(&self) -> ScoringMode {
        if self.use_decomposition {
            ScoringMode::Decomposed(self.caps.clone())
        } else {
            ScoringMode::Direct
        }
    }
}

pub struct EvalOutcome {
    pub metrics: Metrics,
    pub episodes: Vec<EpisodeLog>,
}

/// Per-agent step flags, the unit the metric formulas are defined over.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentSteps {
    pub collision: Vec<bool>,
    /// Sticky goal flag per tick; any true entry counts as reached.
    pub reached: Vec<bool>,
}

/// Flatten an episode into one flag sequence per agent.
pub fn agent_steps(log: &EpisodeLog) -> Vec<AgentSteps> {
    let agents = log.chains.len();
    let mut out = vec![
        AgentSteps {
            collision: Vec::with_capacity(log.stats.steps),
            reached: Vec::with_capacity(log.stats.steps),
        };
        agents
    ];
    for rec in &log.records {
        out[rec.agent].collision.push(rec.collision);
        out[rec.agent].reached.push(rec.reached);
    }
    out
}

/// Mean over agents of (1 - collision steps / total steps). Agents with
/// no recorded steps are skipped; an empty pool scores 1.
pub fn safety_rate(trajectories: &[AgentSteps]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for tr in trajectories {
        if tr.collision.is_empty() {
            continue;
        }
        let hits = tr.collision.iter().filter(|c| **c).count();
        sum += 1.0 - hits as f64 / tr.collision.len() as f64;
        n += 1;
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Mean over agents of: -1 per collision step, +10 once if the goal was
/// ever reached, -0.1 per step.
pub fn episode_reward(trajectories: &[AgentSteps]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for tr in trajectories {
        if tr.collision.is_empty() {
            continue;
        }
        let hits = tr.collision.iter().filter(|c| **c).count() as f64;
        let reached = tr.reached.iter().any(|r| *r);
        sum += -hits + if reached { 10.0 } else { 0.0 } - 0.1 * tr.collision.len() as f64;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Greedy evaluation over pre-sampled tasks. Episodes run in parallel;
/// aggregation order is fixed by task index, so metrics are reproducible
/// bit for bit under a fixed seed.
pub fn evaluate(model: &CamModel, tasks: &[WorldState], cfg: &EvalConfig) -> Result<EvalOutcome> {
    if tasks.is_empty() {
        return Err(CamError::Contract("evaluation needs at least one task".into()));
    }
    let rollout_cfg = RolloutCfg {
        candidates: cfg.candidates,
        noise_mag: 0.0,
        horizon: cfg.horizon,
        mode: cfg.mode(),
        master_seed: cfg.master_seed,
    };
    let episodes: Vec<EpisodeLog> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, world)| rollout_episode(model, world.clone(), &rollout_cfg, i as u64))
        .collect::<Result<_>>()?;

    let mut safety_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut success_sum = 0.0;
    let mut agents = 0usize;
    let mut ms_sum = 0.0;
    let mut ms_max = 0.0f64;
    let mut ms_count = 0usize;
    for log in &episodes {
        let steps = agent_steps(log);
        for (i, tr) in steps.iter().enumerate() {
            if tr.collision.is_empty() {
                continue;
            }
            let hits = tr.collision.iter().filter(|c| **c).count();
            safety_sum += 1.0 - hits as f64 / tr.collision.len() as f64;
            reward_sum += match &log.stats.chase_reward {
                Some(rewards) => rewards[i],
                None => {
                    let reached = tr.reached.iter().any(|r| *r);
                    -(hits as f64) + if reached { 10.0 } else { 0.0 }
                        - 0.1 * tr.collision.len() as f64
                }
            };
            if log.stats.reached[i] && hits == 0 {
                success_sum += 1.0;
            }
            agents += 1;
        }
        for &ms in &log.decision_ms {
            ms_sum += ms;
            ms_max = ms_max.max(ms);
            ms_count += 1;
        }
    }
    if agents == 0 {
        return Err(CamError::Contract("evaluation tasks contained no agents".into()));
    }
    let metrics = Metrics {
        safety_rate: safety_sum / agents as f64,
        mean_reward: reward_sum / agents as f64,
        success_rate: success_sum / agents as f64,
        mean_decision_ms: if ms_count == 0 { 0.0 } else { ms_sum / ms_count as f64 },
        max_decision_ms: ms_max,
        tasks: tasks.len(),
        agents,
    };
    Ok(EvalOutcome { metrics, episodes })
}

/// Sample `count` worlds from the spec; task i draws from a stream keyed
/// by (spec.seed, i) only, so sweeps over different densities see paired
/// streams.
pub fn sample_tasks(spec: &TaskSpec, count: usize) -> Result<Vec<WorldState>> {
    (0..count)
        .map(|i| sample_task(spec, &mut rng_for(spec.seed, "eval-task", &[i as u64])))
        .collect()
}

/// Zero-shot chasing evaluation: sample chasing tasks from the spec and
/// run the greedy policy. Reward is the clipped approach reward; success
/// is identically 0 because chasing defines no terminal goal.
pub fn run_chasing(
    model: &CamModel,
    spec: &TaskSpec,
    count: usize,
    cfg: &EvalConfig,
) -> Result<EvalOutcome> {
    if spec.mode != crate::worlds::TaskMode::Chasing {
        return Err(CamError::Contract("run_chasing needs a chasing task spec".into()));
    }
    if spec.env == crate::worlds::EnvKind::Integrator2D || spec.agents < 2 {
        return Err(CamError::Contract(
            "the chasing game needs at least two agents in a multi-agent environment".into(),
        ));
    }
    let tasks = sample_tasks(spec, count)?;
    evaluate(model, &tasks, cfg)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub agents: usize,
    pub obstacles: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Evaluate over the (agents x obstacles) grid. Every cell reuses the
/// same per-task seed streams, so rows differ only in density.
pub fn density_sweep(
    model: &CamModel,
    base: &TaskSpec,
    agent_counts: &[usize],
    obstacle_counts: &[usize],
    tasks_per_cell: usize,
    cfg: &EvalConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(agent_counts.len() * obstacle_counts.len());
    for &agents in agent_counts {
        for &obstacles in obstacle_counts {
            let spec = TaskSpec {
                agents,
                obstacles,
                ..base.clone()
            };
            let tasks = sample_tasks(&spec, tasks_per_cell)?;
            let outcome = evaluate(model, &tasks, cfg)?;
            rows.push(SweepRow {
                agents,
                obstacles,
                metrics: outcome.metrics,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionClass {
    /// Every probed action scores non-negative.
    AdmissibleRegion,
    /// Mixed probe signs: the admissible-set boundary passes nearby.
    Boundary,
    /// Every probed action scores negative.
    InadmissibleRegion,
}

/// Classify a state by the signs of `n_probe` sampled action scores.
pub fn classify_state(
    model: &CamModel,
    state: &CamState,
    n_probe: usize,
    rng: &mut impl rand::Rng,
) -> Result<RegionClass> {
    if n_probe == 0 {
        return Err(CamError::Config("classification needs at least 1 probe".into()));
    }
    let probes = model.env.action_box().sample_n(n_probe, rng);
    let scores = cam_score_batch(model, state, &probes)?;
    let non_neg = scores.iter().filter(|s| **s >= 0.0).count();
    Ok(if non_neg == scores.len() {
        RegionClass::AdmissibleRegion
    } else if non_neg == 0 {
        RegionClass::InadmissibleRegion
    } else {
        RegionClass::Boundary
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceReport {
    /// Fractions over all visited states.
    pub admissible: f64,
    pub boundary: f64,
    pub inadmissible: f64,
    pub violation: f64,
    pub states: usize,
    pub violations: usize,
}

/// Classify every state visited by the episodes and flag forward-invariance
/// violations: a boundary state whose executed action landed in an
/// all-negative successor. Fractions are over all visited states (each
/// chain contributes its decision states plus the final successor).
pub fn invariance_analysis(
    model: &CamModel,
    episodes: &[EpisodeLog],
    n_probe: usize,
    master_seed: u64,
) -> Result<InvarianceReport> {
    let mut counts = [0usize; 3];
    let mut states = 0usize;
    let mut violations = 0usize;
    for (e, log) in episodes.iter().enumerate() {
        for (agent, chain) in log.chains.iter().enumerate() {
            if chain.is_empty() {
                continue;
            }
            let mut classes: Vec<RegionClass> = Vec::with_capacity(chain.len() + 1);
            for (t, tr) in chain.iter().enumerate() {
                let mut rng =
                    rng_for(master_seed, "invariance", &[e as u64, agent as u64, t as u64]);
                classes.push(classify_state(model, &tr.state, n_probe, &mut rng)?);
            }
            let mut rng = rng_for(
                master_seed,
                "invariance",
                &[e as u64, agent as u64, chain.len() as u64],
            );
            classes.push(classify_state(
                model,
                &chain.last().unwrap().next_state,
                n_probe,
                &mut rng,
            )?);

            for class in &classes {
                counts[*class as usize] += 1;
            }
            states += classes.len();
            for t in 0..chain.len() {
                if classes[t] == RegionClass::Boundary
                    && classes[t + 1] == RegionClass::InadmissibleRegion
                {
                    violations += 1;
                }
            }
        }
    }
    if states == 0 {
        return Err(CamError::Contract("no visited states to analyze".into()));
    }
    let f = |c: usize| c as f64 / states as f64;
    Ok(InvarianceReport {
        admissible: f(counts[RegionClass::AdmissibleRegion as usize]),
        boundary: f(counts[RegionClass::Boundary as usize]),
        inadmissible: f(counts[RegionClass::InadmissibleRegion as usize]),
        violation: f(violations),
        states,
        violations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TimingReport {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

/// Wall-clock per-agent decision cost pooled over episodes. Keep this out
/// of reproducibility-checked files.
pub fn decision_timing(episodes: &[EpisodeLog]) -> TimingReport {
    let mut all: Vec<f64> = episodes.iter().flat_map(|l| l.decision_ms.iter().copied()).collect();
    if all.is_empty() {
        return TimingReport { mean_ms: 0.0, p95_ms: 0.0, samples: 0 };
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let idx = ((all.len() as f64 * 0.95).ceil() as usize).clamp(1, all.len()) - 1;
    TimingReport {
        mean_ms: mean,
        p95_ms: all[idx],
        samples: all.len(),
    }
}

/// Score surface over two action dimensions on a regular grid with
/// inclusive endpoints, other dimensions pinned to `fixed`. Returns
/// comma-delimited text with a header row.
pub fn export_landscape(
    model: &CamModel,
    state: &CamState,
    dims: (usize, usize),
    resolution: usize,
    fixed: &[f64],
) -> Result<String> {
    let act_dim = model.action_dim();
    if dims.0 >= act_dim || dims.1 >= act_dim || dims.0 == dims.1 {
        return Err(CamError::Config(format!(
            "landscape dims {:?} out of range for {}-dimensional actions",
            dims, act_dim
        )));
    }
    if resolution < 2 {
        return Err(CamError::Config("landscape resolution must be at least 2".into()));
    }
    if fixed.len() != act_dim {
        return Err(CamError::Shape(format!(
            "fixed action template has length {}, want {}",
            fixed.len(),
            act_dim
        )));
    }
    let hw = model.env.action_box().half_width;
    let coord = |r: usize| -hw + 2.0 * hw * r as f64 / (resolution - 1) as f64;
    let mut actions = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let mut a = fixed.to_vec();
            a[dims.0] = coord(i);
            a[dims.1] = coord(j);
            actions.push(a);
        }
    }
    let scores = cam_score_batch(model, state, &actions)?;
    let mut out = format!("a{},a{},phi\n", dims.0, dims.1);
    for (a, phi) in actions.iter().zip(&scores) {
        out.push_str(&format!("{},{},{}\n", a[dims.0], a[dims.1], phi));
    }
    Ok(out)
}
