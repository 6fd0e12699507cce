//! Episode engine shared by training and evaluation.
//!
//! One tick: (for chasing, retarget goals to the hunted agents' current
//! positions) sample N candidate actions per agent, compute preference
//! scores, score admissibility, select, then step every agent at once.
//! Successor collisions supply the safety labels; goal flags are sticky
//! and an episode ends at the horizon or once every agent has reached its
//! goal (chasing runs the full horizon).
//!
//! Determinism: everything is driven by streams derived from the master
//! seed, the episode id, and (for per-agent decomposition draws) the tick
//! and agent index. Scoring runs in parallel across agents; results are
//! collected in agent order, so reruns are bit-identical. Wall-clock
//! decision times are collected on the side and must never flow into
//! deterministic outputs.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::cam::{
    adaptive_agent_scoring, admissible_ratio, cam_score_batch, score_with_decomposition,
    select_action, CamModel, CamState, ScoredActions,
};
use crate::error::{CamError, Result};
use crate::graph::{ego_graph, SubgraphCaps};
use crate::rng::rng_for;
use crate::trainer::{Label, Transition};
use crate::worlds::lqr;
use crate::worlds::{
    chasing_retarget, chasing_reward, check_collisions, check_goal, step_agent, EnvKind,
    WorldState,
};

#[derive(Clone, Debug, PartialEq)]
pub enum ScoringMode {
    /// Whole neighborhood graph in one pass (the training distribution).
    Direct,
    /// Split oversized graphs and compose subgraph scores by min.
    Decomposed(SubgraphCaps),
    /// Score candidate chunks until one admissible action appears.
    Adaptive { chunk_size: usize },
}

#[derive(Clone, Debug)]
pub struct RolloutCfg {
    pub candidates: usize,
    pub noise_mag: f64,
    pub horizon: usize,
    pub mode: ScoringMode,
    pub master_seed: u64,
}

/// One agent's outcome at one executed tick. `collision` and `reached`
/// describe the state arrived at.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct StepRecord {
    pub episode: u64,
    pub step: usize,
    pub agent: usize,
    pub collision: bool,
    pub reached: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    pub steps: usize,
    pub collision_steps: Vec<usize>,
    pub reached: Vec<bool>,
    pub mean_admissible_ratio: f64,
    /// Selected actions that still had to be clamped at the sim boundary;
    /// stays 0 unless selection produced an out-of-box action.
    pub clamped_actions: usize,
    /// Per-agent summed chasing reward; None outside chasing tasks.
    pub chase_reward: Option<Vec<f64>>,
}

impl EpisodeStats {
    /// Fraction of agents that reached their goal without a single
    /// collision step.
    pub fn success(&self) -> f64 {
        if self.reached.is_empty() {
            return 0.0;
        }
        let good = self
            .reached
            .iter()
            .zip(&self.collision_steps)
            .filter(|(r, c)| **r && **c == 0)
            .count();
        good as f64 / self.reached.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    /// Per-agent transition chains in time order.
    pub chains: Vec<Vec<Transition>>,
    /// Flat per-agent-per-tick outcomes, agent-major within each tick.
    pub records: Vec<StepRecord>,
    pub stats: EpisodeStats,
    /// Wall-clock milliseconds per agent decision (scoring only), one
    /// entry per agent per tick. Non-deterministic; keep out of metrics.
    pub decision_ms: Vec<f64>,
}

fn build_state(model: &CamModel, world: &WorldState, agent: usize) -> Result<CamState> {
    match model.env {
        EnvKind::Integrator2D => Ok(CamState::Vector(world.agents[agent].clone())),
        _ => Ok(CamState::Graph(ego_graph(world, agent)?)),
    }
}

fn preference(world: &WorldState, agent: usize, action: &[f64], gain: Option<&DMatrix<f64>>) -> f64 {
    match gain {
        Some(k) => lqr::preference_lqr_drone(
            &world.agents[agent],
            &world.goals[agent],
            action,
            k,
        ),
        None => crate::worlds::preference_l2(world, agent, &world.goals[agent], action),
    }
}

pub fn rollout_episode(
    model: &CamModel,
    mut world: WorldState,
    cfg: &RolloutCfg,
    episode: u64,
) -> Result<EpisodeLog> {
    if world.env != model.env {
        return Err(CamError::Contract(format!(
            "world is {}, model is {}",
            world.env.name(),
            model.env.name()
        )));
    }
    if cfg.candidates == 0 {
        return Err(CamError::Config("candidate count must be at least 1".into()));
    }
    let n = world.agent_count();
    let chasing = world.chase_targets.is_some();
    let mut log = EpisodeLog {
        chains: vec![Vec::new(); n],
        records: Vec::new(),
        stats: EpisodeStats {
            steps: 0,
            collision_steps: vec![0; n],
            reached: vec![false; n],
            mean_admissible_ratio: 0.0,
            clamped_actions: 0,
            chase_reward: chasing.then(|| vec![0.0; n]),
        },
        decision_ms: Vec::new(),
    };
    if n == 0 {
        return Ok(log);
    }

    let gain = match model.env {
        EnvKind::Drone => Some(lqr::drone_gain()?),
        _ => None,
    };
    let bx = model.env.action_box();
    let mut rng = rng_for(cfg.master_seed, "rollout", &[episode]);
    let mut states: Vec<CamState> = (0..n)
        .map(|i| build_state(model, &world, i))
        .collect::<Result<_>>()?;
    let mut ratio_sum = 0.0;
    let mut ratio_count = 0usize;

    for t in 0..cfg.horizon {
        if chasing {
            chasing_retarget(&mut world);
        }
        let chase_before: Vec<f64> = if chasing {
            target_distances(&world)
        } else {
            Vec::new()
        };

        let candidates: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|_| bx.sample_n(cfg.candidates, &mut rng))
            .collect();
        let prefs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                candidates[i]
                    .iter()
                    .map(|a| preference(&world, i, a, gain.as_ref()))
                    .collect()
            })
            .collect();

        let scored: Vec<(ScoredActions, f64)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<(ScoredActions, f64)> {
                let start = Instant::now();
                let out = match &cfg.mode {
                    ScoringMode::Direct => {
                        let scores = cam_score_batch(model, &states[i], &candidates[i])?;
                        ScoredActions::new(candidates[i].clone(), scores, prefs[i].clone())?
                    }
                    ScoringMode::Decomposed(caps) => match &states[i] {
                        CamState::Graph(g) => {
                            let mut drng = rng_for(
                                cfg.master_seed,
                                "decompose",
                                &[episode, t as u64, i as u64],
                            );
                            let scores = score_with_decomposition(
                                model,
                                g,
                                &candidates[i],
                                caps,
                                &mut drng,
                            )?;
                            ScoredActions::new(candidates[i].clone(), scores, prefs[i].clone())?
                        }
                        CamState::Vector(_) => {
                            let scores = cam_score_batch(model, &states[i], &candidates[i])?;
                            ScoredActions::new(candidates[i].clone(), scores, prefs[i].clone())?
                        }
                    },
                    ScoringMode::Adaptive { chunk_size } => {
                        let mut out = adaptive_agent_scoring(
                            model,
                            std::slice::from_ref(&states[i]),
                            std::slice::from_ref(&candidates[i]),
                            std::slice::from_ref(&prefs[i]),
                            *chunk_size,
                        )?;
                        out.pop().unwrap()
                    }
                };
                Ok((out, start.elapsed().as_secs_f64() * 1e3))
            })
            .collect::<Result<_>>()?;

        let mut actions: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (i, (s, ms)) in scored.iter().enumerate() {
            ratio_sum += admissible_ratio(s);
            ratio_count += 1;
            log.decision_ms.push(*ms);
            let mut a = select_action(s, cfg.noise_mag, &mut rng);
            if bx.clamp(&mut a) {
                log.stats.clamped_actions += 1;
            }
            if let Some(prev) = log.chains[i].last_mut() {
                prev.next_action = Some(a.clone());
            }
            actions.push(a);
        }

        for i in 0..n {
            world.agents[i] = step_agent(model.env, &world.agents[i], &actions[i]);
        }
        world.t += 1;

        let collisions = check_collisions(&world);
        if !chasing {
            for i in 0..n {
                if check_goal(
                    model.env,
                    &world.agents[i],
                    &world.goals[i],
                    world.goal_distance,
                ) {
                    log.stats.reached[i] = true;
                }
            }
        }
        if let Some(rewards) = log.stats.chase_reward.as_mut() {
            let after = target_distances(&world);
            for i in 0..n {
                rewards[i] += chasing_reward(chase_before[i], after[i]);
            }
        }

        let new_states: Vec<CamState> = (0..n)
            .map(|i| build_state(model, &world, i))
            .collect::<Result<_>>()?;
        for (i, (old, action)) in states.into_iter().zip(actions).enumerate() {
            if collisions[i] {
                log.stats.collision_steps[i] += 1;
            }
            log.chains[i].push(Transition {
                state: old,
                action,
                label: Label::from_collision(collisions[i]),
                next_state: new_states[i].clone(),
                next_action: None,
                relabeled: false,
                episode,
                step: t,
            });
            log.records.push(StepRecord {
                episode,
                step: t,
                agent: i,
                collision: collisions[i],
                reached: log.stats.reached[i],
            });
        }
        states = new_states;
        log.stats.steps = t + 1;

        if !chasing && log.stats.reached.iter().all(|r| *r) {
            break;
        }
    }

    if ratio_count > 0 {
        log.stats.mean_admissible_ratio = ratio_sum / ratio_count as f64;
    }
    Ok(log)
}

/// Distance from each agent to the agent it chases, in position space.
fn target_distances(w: &WorldState) -> Vec<f64> {
    let targets = w.chase_targets.as_ref().expect("chasing world");
    let pd = w.env.position_dim();
    (0..w.agent_count())
        .map(|i| {
            let a = &w.agents[i][..pd];
            let b = &w.agents[targets[i]][..pd];
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::worlds::{integrator_world, sample_task, IntegratorLayout, TaskMode, TaskSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_model(env: EnvKind, seed: u64) -> CamModel {
        CamModel::init(env, 8, 2, &mut rng_for(seed, "model", &[])).unwrap()
    }

    fn cfg(horizon: usize) -> RolloutCfg {
        RolloutCfg {
            candidates: 24,
            noise_mag: 0.1,
            horizon,
            mode: ScoringMode::Direct,
            master_seed: 7,
        }
    }

    #[test]
    fn zero_agents_give_an_empty_episode() {
        let model = small_model(EnvKind::Car, 0);
        let spec = TaskSpec::navigation(EnvKind::Car, 0, 2, 3.0, 1);
        let world = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(1)).unwrap();
        let log = rollout_episode(&model, world, &cfg(16), 0).unwrap();
        assert_eq!(log.stats.steps, 0);
        assert!(log.records.is_empty());
        assert!(log.chains.is_empty());
    }

    #[test]
    fn agent_at_goal_finishes_in_one_step() {
        let model = small_model(EnvKind::Car, 1);
        let spec = TaskSpec::navigation(EnvKind::Car, 1, 0, 3.0, 2);
        let mut world = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(2)).unwrap();
        world.agents[0][0] = world.goals[0][0];
        world.agents[0][1] = world.goals[0][1];
        let log = rollout_episode(&model, world, &cfg(64), 0).unwrap();
        assert_eq!(log.stats.steps, 1);
        assert_eq!(log.stats.success(), 1.0);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let model = small_model(EnvKind::Car, 3);
        let spec = TaskSpec::navigation(EnvKind::Car, 3, 2, 3.0, 4);
        let world = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(4)).unwrap();
        let a = rollout_episode(&model, world.clone(), &cfg(12), 5).unwrap();
        let b = rollout_episode(&model, world, &cfg(12), 5).unwrap();
        assert_eq!(a.chains, b.chains);
        assert_eq!(a.records, b.records);
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn successor_actions_chain_within_an_episode() {
        let model = small_model(EnvKind::Integrator2D, 4);
        let world = integrator_world(&IntegratorLayout::default());
        let log = rollout_episode(&model, world, &cfg(10), 0).unwrap();
        let chain = &log.chains[0];
        assert!(!chain.is_empty());
        for pair in chain.windows(2) {
            assert_eq!(pair[0].next_action.as_ref(), Some(&pair[1].action));
            assert_eq!(pair[0].next_state, pair[1].state);
            assert_eq!(pair[0].step + 1, pair[1].step);
        }
        assert!(chain.last().unwrap().next_action.is_none());
    }

    #[test]
    fn labels_follow_successor_collisions() {
        let model = small_model(EnvKind::Car, 5);
        // Head-on 0.32 apart along y (heading 0 moves +y): one step closes
        // at least 2*0.05*cos(1.0), so the successor separation is below
        // 0.3 for any steering choice.
        let spec = TaskSpec::navigation(EnvKind::Car, 2, 0, 3.0, 6);
        let mut world = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(6)).unwrap();
        world.agents[0] = vec![1.0, 1.0, 0.0];
        world.agents[1] = vec![1.0, 1.32, std::f64::consts::PI];
        let log = rollout_episode(&model, world, &cfg(1), 0).unwrap();
        for (i, chain) in log.chains.iter().enumerate() {
            for tr in chain {
                let rec = log
                    .records
                    .iter()
                    .find(|r| r.agent == i && r.step == tr.step)
                    .unwrap();
                assert_eq!(tr.label == Label::Inadmissible, rec.collision);
                assert_eq!(tr.label, Label::Inadmissible, "forced crash at t=0");
            }
        }
        assert_eq!(log.stats.collision_steps, vec![1, 1]);
        assert_eq!(log.stats.success(), 0.0);
    }

    #[test]
    fn chasing_runs_the_full_horizon_and_accumulates_reward() {
        let model = small_model(EnvKind::Car, 6);
        let spec = TaskSpec {
            env: EnvKind::Car,
            agents: 3,
            obstacles: 0,
            map_side: 3.0,
            seed: 8,
            mode: TaskMode::Chasing,
            horizon: 6,
        };
        let world = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(8)).unwrap();
        assert!(world.chase_targets.is_some());
        let log = rollout_episode(&model, world, &cfg(6), 0).unwrap();
        assert_eq!(log.stats.steps, 6, "no goal termination while chasing");
        let rewards = log.stats.chase_reward.as_ref().unwrap();
        assert_eq!(rewards.len(), 3);
        assert!(rewards.iter().all(|r| *r >= 0.0), "clipped at zero below");
    }

    #[test]
    fn decomposed_mode_matches_direct_on_within_cap_worlds() {
        let model = small_model(EnvKind::Car, 7);
        let spec = TaskSpec::navigation(EnvKind::Car, 2, 3, 3.0, 9);
        let world = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        let direct = rollout_episode(&model, world.clone(), &cfg(8), 3).unwrap();
        let mut dcfg = cfg(8);
        dcfg.mode = ScoringMode::Decomposed(SubgraphCaps::default());
        let decomposed = rollout_episode(&model, world, &dcfg, 3).unwrap();
        assert_eq!(direct.chains, decomposed.chains);
        assert_eq!(direct.stats, decomposed.stats);
    }

    #[test]
    fn adaptive_mode_selects_equally_admissible_actions() {
        // One tick per world so both rollouts decide from identical states
        // and identical candidate draws; after the first executed action
        // the trajectories may legitimately diverge.
        for seed in 0..5u64 {
            let model = small_model(EnvKind::Car, 8 + seed);
            let spec = TaskSpec::navigation(EnvKind::Car, 2, 2, 3.0, 10 + seed);
            let world = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(10 + seed)).unwrap();
            let mut acfg = cfg(1);
            acfg.mode = ScoringMode::Adaptive { chunk_size: 6 };
            let adaptive = rollout_episode(&model, world.clone(), &acfg, 1).unwrap();
            let full = rollout_episode(&model, world, &cfg(1), 1).unwrap();
            for (ca, cf) in adaptive.chains.iter().zip(&full.chains) {
                let (ta, tf) = (&ca[0], &cf[0]);
                let sa = model.score(&ta.state, &ta.action).unwrap() >= 0.0;
                let sf = model.score(&tf.state, &tf.action).unwrap() >= 0.0;
                assert_eq!(sa, sf);
            }
        }
    }

    #[test]
    fn goal_flags_are_sticky() {
        let model = small_model(EnvKind::Car, 9);
        let spec = TaskSpec::navigation(EnvKind::Car, 2, 0, 3.0, 11);
        let mut world = sample_task(&spec, &mut ChaCha12Rng::seed_from_u64(11)).unwrap();
        // Agent 0 at its goal (stays reached); agent 1 far away (keeps the
        // episode alive long enough for agent 0 to wander off).
        world.agents[0][0] = world.goals[0][0];
        world.agents[0][1] = world.goals[0][1];
        world.agents[1] = vec![0.1, 0.1, 0.0];
        world.goals[1] = vec![2.9, 2.9];
        let log = rollout_episode(&model, world, &cfg(40), 0).unwrap();
        let ever: Vec<bool> = (0..2)
            .map(|i| log.records.iter().any(|r| r.agent == i && r.reached))
            .collect();
        assert!(ever[0]);
        if log.stats.steps > 9 {
            // 0.45 radius at 0.05 per step: agent 0 may leave the goal
            // disc, but the flag must never clear.
            let last = log.records.iter().rev().find(|r| r.agent == 0).unwrap();
            assert!(last.reached);
        }
        assert!(log.stats.reached[0]);
    }

    #[test]
    fn mismatched_world_is_rejected() {
        let model = small_model(EnvKind::Car, 10);
        let world = integrator_world(&IntegratorLayout::default());
        assert!(matches!(
            rollout_episode(&model, world, &cfg(4), 0),
            Err(CamError::Contract(_))
        ));
    }
}
