//! Online training loop: collect episodes, label transitions by successor
//! collision, propagate inadmissibility backward through finished episodes,
//! and fit the scoring model with a three-term margin loss.

pub mod rollout;

pub use rollout::{
    rollout_episode, EpisodeLog, EpisodeStats, RolloutCfg, ScoringMode, StepRecord,
};

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cam::{cam_score_batch, CamModel, CamState, DEFAULT_GNN_LAYERS, DEFAULT_HIDDEN};
use crate::diffcore::adam::{AdamConfig, AdamState};
use crate::diffcore::tape::{NodeId, Tape};
use crate::error::{CamError, Result};
use crate::rng::{rng_for, seed_for};
use crate::worlds::{integrator_world, sample_task, EnvKind, IntegratorLayout, TaskSpec, WorldState};

pub const DEFAULT_BUFFER_CAPACITY: usize = 200_000;

/// Safety label attached to a transition: inadmissible when the successor
/// state is in collision, possibly flipped later by relabeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Admissible,
    Inadmissible,
}

impl Label {
    pub fn from_collision(hit: bool) -> Self {
        if hit {
            Label::Inadmissible
        } else {
            Label::Admissible
        }
    }
}

/// One labeled step of one agent. `next_action` is absent on the final
/// step of an episode; within an episode `next_state`/`next_action` agree
/// with the following transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: CamState,
    pub action: Vec<f64>,
    pub label: Label,
    pub next_state: CamState,
    pub next_action: Option<Vec<f64>>,
    pub relabeled: bool,
    pub episode: u64,
    pub step: usize,
}

/// Bounded FIFO of transitions; eviction is strictly oldest-first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer needs capacity");
        ReplayBuffer {
            buf: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        }
    }

    pub fn push(&mut self, tr: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(tr);
    }

    pub fn extend(&mut self, trs: impl IntoIterator<Item = Transition>) {
        for tr in trs {
            self.push(tr);
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// Uniform sample with replacement; smaller buffers just repeat.
    pub fn sample(&self, n: usize, rng: &mut impl rand::Rng) -> Vec<&Transition> {
        assert!(!self.buf.is_empty(), "cannot sample an empty buffer");
        (0..n)
            .map(|_| &self.buf[rng.random_range(0..self.buf.len())])
            .collect()
    }
}

/// Backward pass over one agent's finished episode. A step becomes
/// inadmissible when its successor step is inadmissible and `trapped`
/// holds at the successor state (no admissible action there under the
/// current model). Later steps are read with any flips already applied,
/// so inadmissibility cascades toward the episode start in one pass.
/// `trapped` is consulted only when the successor label condition holds.
/// Returns the number of labels changed.
pub fn relabel_chain(
    chain: &mut [Transition],
    mut trapped: impl FnMut(&CamState) -> Result<bool>,
) -> Result<usize> {
    let mut count = 0;
    for t in (0..chain.len().saturating_sub(1)).rev() {
        if chain[t + 1].label == Label::Inadmissible && trapped(&chain[t + 1].state)? {
            if chain[t].label == Label::Admissible {
                chain[t].label = Label::Inadmissible;
                chain[t].relabeled = true;
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Production relabeling: `trapped` means the best of `n_probe` fresh
/// uniform actions still scores below zero under the current model.
pub fn relabel_episode(
    model: &CamModel,
    chain: &mut [Transition],
    n_probe: usize,
    rng: &mut impl rand::Rng,
) -> Result<usize> {
    if n_probe == 0 {
        return Err(CamError::Config("relabel probe count must be at least 1".into()));
    }
    let bx = model.env.action_box();
    relabel_chain(chain, |state| {
        let probes = bx.sample_n(n_probe, rng);
        let scores = cam_score_batch(model, state, &probes)?;
        Ok(scores.iter().all(|s| *s < 0.0))
    })
}

/// Record the margin loss over a minibatch on the tape and return its
/// scalar node.
///
/// Three terms, each a mean over its partition (an empty partition
/// contributes nothing): admissible pairs pay relu(γ₁ − φ), inadmissible
/// pairs pay relu(γ₂ + φ), and admissible pairs with a successor pair pay
/// relu(γ₃ − (φ′ − φ) − λφ), the discrete forward-invariance margin.
/// Gradients flow through both φ and φ′.
pub fn cam_loss_tape(
    tape: &mut Tape,
    model: &CamModel,
    batch: &[&Transition],
    margins: &[f64; 3],
    decay: f64,
) -> Result<NodeId> {
    let mut admissible = Vec::new();
    let mut inadmissible = Vec::new();
    let mut invariance = Vec::new();
    for tr in batch {
        let phi = model.score_tape(tape, &tr.state, &tr.action)?;
        match tr.label {
            Label::Admissible => {
                let neg = tape.scale(phi, -1.0);
                let gap = tape.add_const(neg, margins[0]);
                admissible.push(tape.relu(gap));
                if let Some(next_action) = &tr.next_action {
                    let phi_next = model.score_tape(tape, &tr.next_state, next_action)?;
                    let rate = tape.sub(phi_next, phi)?;
                    let hold = tape.scale(phi, decay);
                    let total = tape.add(rate, hold)?;
                    let neg = tape.scale(total, -1.0);
                    let gap = tape.add_const(neg, margins[2]);
                    invariance.push(tape.relu(gap));
                }
            }
            Label::Inadmissible => {
                let gap = tape.add_const(phi, margins[1]);
                inadmissible.push(tape.relu(gap));
            }
        }
    }
    let mut loss: Option<NodeId> = None;
    for terms in [admissible, inadmissible, invariance] {
        if terms.is_empty() {
            continue;
        }
        let mean = tape.mean_over(&terms)?;
        loss = Some(match loss {
            Some(acc) => tape.add(acc, mean)?,
            None => mean,
        });
    }
    Ok(loss.unwrap_or_else(|| tape.input(&[0.0])))
}

/// Margin loss as a plain number (fresh tape, no backward).
pub fn cam_loss(
    model: &CamModel,
    batch: &[&Transition],
    margins: &[f64; 3],
    decay: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let node = cam_loss_tape(&mut tape, model, batch, margins, decay)?;
    Ok(tape.scalar(node))
}

/// Random labeled transitions for gradient diagnostics. Sampled worlds
/// provide realistic observations; actions, labels, and follow-up actions
/// are drawn uniformly, successors step only the observed agent. Good for
/// exercising every loss term, useless for learning.
pub fn synthetic_batch(spec: &TaskSpec, size: usize, seed: u64) -> Result<Vec<Transition>> {
    let mut rng = rng_for(seed, "synthetic-batch", &[]);
    let bx = spec.env.action_box();
    let draw = |rng: &mut rand_chacha::ChaCha12Rng| bx.sample_n(1, rng).pop().unwrap();
    let mut out = Vec::with_capacity(size);

    if spec.env == EnvKind::Integrator2D {
        let half = spec.map_side / 2.0;
        for step in 0..size {
            let state: Vec<f64> = (0..2).map(|_| rng.random_range(-half..half)).collect();
            let action = draw(&mut rng);
            let next = crate::worlds::step_agent(spec.env, &state, &action);
            out.push(Transition {
                state: CamState::Vector(state),
                action,
                label: Label::from_collision(rng.random_bool(0.5)),
                next_state: CamState::Vector(next),
                next_action: rng.random_bool(0.5).then(|| draw(&mut rng)),
                relabeled: false,
                episode: 0,
                step,
            });
        }
        return Ok(out);
    }

    let mut world_i = 0u64;
    while out.len() < size {
        let world = sample_task(spec, &mut rng_for(seed, "synthetic-world", &[world_i]))?;
        for agent in 0..world.agents.len() {
            if out.len() == size {
                break;
            }
            let action = draw(&mut rng);
            let mut next_world = world.clone();
            next_world.agents[agent] =
                crate::worlds::step_agent(spec.env, &world.agents[agent], &action);
            out.push(Transition {
                state: CamState::Graph(crate::graph::ego_graph(&world, agent)?),
                action,
                label: Label::from_collision(rng.random_bool(0.5)),
                next_state: CamState::Graph(crate::graph::ego_graph(&next_world, agent)?),
                next_action: rng.random_bool(0.5).then(|| draw(&mut rng)),
                relabeled: false,
                episode: world_i,
                step: agent,
            });
        }
        world_i += 1;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub agents: usize,
    pub obstacles: usize,
    pub map_side: f64,
    pub episodes: usize,
    pub horizon: usize,
    /// γ₁ (admissible), γ₂ (inadmissible), γ₃ (forward invariance).
    pub margins: [f64; 3],
    /// λ in the forward-invariance term. Not printed in the source
    /// material; 0.1 is this implementation's default.
    pub decay: f64,
    pub candidates: usize,
    pub batch_size: usize,
    /// Trajectories between optimization rounds.
    pub update_every: usize,
    /// Adam minibatch steps per optimization round.
    pub grad_steps: usize,
    pub noise_mag: f64,
    pub buffer_capacity: usize,
    /// Fresh uniform actions per relabel probe.
    pub n_probe: usize,
    pub seed: u64,
    /// Optimization rounds between validation passes (0 disables).
    pub validation_every: usize,
    pub validation_episodes: usize,
    /// Stop once the 20-episode success window reaches this mean.
    pub early_stop_success: Option<f64>,
    pub hidden: usize,
    pub gnn_layers: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn for_env(env: EnvKind) -> Self {
        let drone = env == EnvKind::Drone;
        TrainConfig {
            env,
            agents: if env == EnvKind::Integrator2D { 1 } else { 3 },
            obstacles: if env == EnvKind::Integrator2D { 0 } else { 6 },
            map_side: 3.0,
            episodes: 2000,
            horizon: env.default_horizon(),
            margins: if drone {
                [0.0, 1e-1, 1e-2]
            } else {
                [0.0, 2e-2, 1e-2]
            },
            decay: 0.1,
            candidates: 2000,
            batch_size: 256,
            update_every: if drone { 20 } else { 10 },
            grad_steps: 100,
            noise_mag: 0.1,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
            n_probe: 2000,
            seed: 0,
            validation_every: 10,
            validation_episodes: 10,
            early_stop_success: None,
            hidden: DEFAULT_HIDDEN,
            gnn_layers: if env == EnvKind::Integrator2D {
                0
            } else {
                DEFAULT_GNN_LAYERS
            },
            adam: AdamConfig::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.candidates == 0 || self.batch_size == 0 || self.update_every == 0 {
            return Err(CamError::Config(
                "candidates, batch size, and update interval must be at least 1".into(),
            ));
        }
        if self.n_probe == 0 {
            return Err(CamError::Config("n_probe must be at least 1".into()));
        }
        if self.margins.iter().any(|m| *m < 0.0) {
            return Err(CamError::Config("margins must be non-negative".into()));
        }
        Ok(())
    }
}

/// One telemetry line per episode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub episode: u64,
    /// Mean success over the trailing window of up to 20 episodes.
    pub success_window: f64,
    pub relabels: usize,
    pub admissible_ratio: f64,
    /// Last minibatch loss; None until the first optimization round.
    pub loss: Option<f64>,
    pub lr: f64,
}

pub enum TrainEvent<'a> {
    Episode(&'a TelemetryRecord),
    /// Fired after each validation pass; gives the caller a checkpoint
    /// opportunity.
    Validation {
        round: u64,
        success: f64,
        model: &'a CamModel,
    },
}

pub struct TrainOutcome {
    pub model: CamModel,
    pub telemetry: Vec<TelemetryRecord>,
    /// True when optimization hit a non-finite loss and stopped early;
    /// the model holds the last parameters before the bad step.
    pub diverged: bool,
}

fn training_world(cfg: &TrainConfig, episode: u64) -> Result<WorldState> {
    match cfg.env {
        EnvKind::Integrator2D => Ok(integrator_world(&IntegratorLayout::default())),
        _ => {
            let spec = TaskSpec::navigation(cfg.env, cfg.agents, cfg.obstacles, cfg.map_side, cfg.seed);
            sample_task(&spec, &mut rng_for(cfg.seed, "task", &[episode]))
        }
    }
}

/// Greedy success rate over held-out tasks.
fn validate(model: &CamModel, cfg: &TrainConfig, round: u64) -> Result<f64> {
    let rollout_cfg = RolloutCfg {
        candidates: cfg.candidates,
        noise_mag: 0.0,
        horizon: cfg.horizon,
        mode: ScoringMode::Direct,
        master_seed: seed_for(cfg.seed, "validate", &[round]),
    };
    let mut total = 0.0;
    for i in 0..cfg.validation_episodes {
        let world = match cfg.env {
            EnvKind::Integrator2D => integrator_world(&IntegratorLayout::default()),
            _ => {
                let spec = TaskSpec::navigation(
                    cfg.env,
                    cfg.agents,
                    cfg.obstacles,
                    cfg.map_side,
                    cfg.seed,
                );
                sample_task(&spec, &mut rng_for(cfg.seed, "validate-task", &[round, i as u64]))?
            }
        };
        total += rollout_episode(model, world, &rollout_cfg, i as u64)?.stats.success();
    }
    Ok(total / cfg.validation_episodes.max(1) as f64)
}

/// Full training run. `on_event` sees every telemetry record as it is
/// produced plus each validation result with the current model.
pub fn train(cfg: &TrainConfig, mut on_event: impl FnMut(TrainEvent)) -> Result<TrainOutcome> {
    cfg.check()?;
    let mut model = CamModel::init(
        cfg.env,
        cfg.hidden,
        cfg.gnn_layers,
        &mut rng_for(cfg.seed, "model", &[]),
    )?;
    let mut adam = AdamState::new(&model.store, cfg.adam.clone());
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut telemetry: Vec<TelemetryRecord> = Vec::with_capacity(cfg.episodes);
    let mut window: VecDeque<f64> = VecDeque::with_capacity(20);
    let rollout_cfg = RolloutCfg {
        candidates: cfg.candidates,
        noise_mag: cfg.noise_mag,
        horizon: cfg.horizon,
        mode: ScoringMode::Direct,
        master_seed: cfg.seed,
    };
    let mut last_loss: Option<f64> = None;
    let mut rounds = 0u64;

    for episode in 0..cfg.episodes as u64 {
        let world = training_world(cfg, episode)?;
        let mut log = rollout_episode(&model, world, &rollout_cfg, episode)?;

        if window.len() == 20 {
            window.pop_front();
        }
        window.push_back(log.stats.success());

        let mut relabels = 0;
        let mut relabel_rng = rng_for(cfg.seed, "relabel", &[episode]);
        for chain in &mut log.chains {
            relabels += relabel_episode(&model, chain, cfg.n_probe, &mut relabel_rng)?;
        }
        for chain in log.chains {
            buffer.extend(chain);
        }

        let mut diverged = false;
        if (episode + 1) % cfg.update_every as u64 == 0 && !buffer.is_empty() && cfg.grad_steps > 0
        {
            for step in 0..cfg.grad_steps as u64 {
                let mut batch_rng = rng_for(cfg.seed, "batch", &[episode, step]);
                let batch = buffer.sample(cfg.batch_size, &mut batch_rng);
                let mut tape = Tape::new();
                let loss_node = cam_loss_tape(&mut tape, &model, &batch, &cfg.margins, cfg.decay)?;
                let loss = tape.scalar(loss_node);
                if !loss.is_finite() {
                    last_loss = Some(loss);
                    diverged = true;
                    break;
                }
                model.store.zero_grads();
                tape.backward(loss_node, &mut model.store)?;
                adam.update(&mut model.store)?;
                last_loss = Some(loss);
            }
            if !diverged {
                rounds += 1;
                if cfg.validation_every > 0
                    && rounds % cfg.validation_every as u64 == 0
                    && cfg.validation_episodes > 0
                {
                    let success = validate(&model, cfg, rounds)?;
                    adam.plateau_step(success);
                    on_event(TrainEvent::Validation {
                        round: rounds,
                        success,
                        model: &model,
                    });
                }
            }
        }

        let success_window = window.iter().sum::<f64>() / window.len() as f64;
        let record = TelemetryRecord {
            episode,
            success_window,
            relabels,
            admissible_ratio: log.stats.mean_admissible_ratio,
            loss: last_loss,
            lr: adam.lr,
        };
        on_event(TrainEvent::Episode(&record));
        telemetry.push(record);

        if diverged {
            return Ok(TrainOutcome {
                model,
                telemetry,
                diverged: true,
            });
        }
        if let Some(threshold) = cfg.early_stop_success {
            if window.len() == 20 && success_window >= threshold {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model,
        telemetry,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_diff::{collect_grads, finite_diff_grad, max_rel_err};
    use crate::graph::ego_graph;
    use crate::worlds::step_agent;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn vec_state(tag: f64) -> CamState {
        CamState::Vector(vec![tag, 0.0])
    }

    fn synthetic_chain(labels: &[Label]) -> Vec<Transition> {
        labels
            .iter()
            .enumerate()
            .map(|(t, label)| Transition {
                state: vec_state(t as f64),
                action: vec![0.0, 0.0],
                label: *label,
                next_state: vec_state(t as f64 + 1.0),
                next_action: (t + 1 < labels.len()).then(|| vec![0.0, 0.0]),
                relabeled: false,
                episode: 0,
                step: t,
            })
            .collect()
    }

    fn state_tag(s: &CamState) -> usize {
        match s {
            CamState::Vector(v) => v[0] as usize,
            CamState::Graph(_) => unreachable!(),
        }
    }

    #[test]
    fn relabel_cascades_backward_when_probes_fail() {
        use Label::*;
        let mut chain = synthetic_chain(&[Admissible, Admissible, Inadmissible]);
        // Probes fail (trapped) at every state.
        let count = relabel_chain(&mut chain, |_| Ok(true)).unwrap();
        assert_eq!(count, 2);
        assert!(chain.iter().all(|tr| tr.label == Inadmissible));
        assert_eq!(
            chain.iter().map(|tr| tr.relabeled).collect::<Vec<_>>(),
            vec![true, true, false]
        );
    }

    #[test]
    fn relabel_stops_where_an_admissible_action_exists() {
        use Label::*;
        let mut chain = synthetic_chain(&[Admissible, Admissible, Inadmissible]);
        // The collision state (tag 2) is escapable: nothing flips.
        let count = relabel_chain(&mut chain, |s| Ok(state_tag(s) != 2)).unwrap();
        assert_eq!(count, 0);
        assert_eq!(
            chain.iter().map(|tr| tr.label).collect::<Vec<_>>(),
            vec![Admissible, Admissible, Inadmissible]
        );
    }

    #[test]
    fn relabel_skips_probes_on_clean_episodes() {
        use Label::*;
        let mut chain = synthetic_chain(&[Admissible, Admissible, Admissible]);
        let mut calls = 0;
        let count = relabel_chain(&mut chain, |_| {
            calls += 1;
            Ok(true)
        })
        .unwrap();
        assert_eq!(count, 0);
        assert_eq!(calls, 0, "no inadmissible successor, no probe");
    }

    #[test]
    fn relabel_matches_a_brute_force_oracle_on_random_episodes() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let len: usize = rng.random_range(1..12);
            let labels: Vec<Label> = (0..len)
                .map(|_| Label::from_collision(rng.random_bool(0.4)))
                .collect();
            // Preset per-state verdicts play the frozen stub model.
            let trapped: Vec<bool> = (0..=len).map(|_| rng.random_bool(0.5)).collect();

            // Oracle over plain arrays: one backward sweep of the two
            // conditions, flips visible to earlier steps.
            let mut want: Vec<Label> = labels.clone();
            let mut want_count = 0;
            for t in (0..len.saturating_sub(1)).rev() {
                if want[t + 1] == Label::Inadmissible
                    && trapped[t + 1]
                    && want[t] == Label::Admissible
                {
                    want[t] = Label::Inadmissible;
                    want_count += 1;
                }
            }

            let mut chain = synthetic_chain(&labels);
            let count = relabel_chain(&mut chain, |s| Ok(trapped[state_tag(s)])).unwrap();
            assert_eq!(count, want_count);
            assert_eq!(
                chain.iter().map(|tr| tr.label).collect::<Vec<_>>(),
                want
            );
            for (tr, original) in chain.iter().zip(&labels) {
                assert_eq!(tr.relabeled, tr.label != *original);
            }
        }
    }

    #[test]
    fn relabel_episode_rejects_zero_probes() {
        let model = mlp_model(3);
        let mut chain = synthetic_chain(&[Label::Admissible]);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(
            relabel_episode(&model, &mut chain, 0, &mut rng),
            Err(CamError::Config(_))
        ));
    }

    // ─── loss ────────────────────────────────────────────────────────────

    fn mlp_model(seed: u64) -> CamModel {
        CamModel::init(EnvKind::Integrator2D, 8, 0, &mut rng_for(seed, "model", &[])).unwrap()
    }

    /// Zero every parameter, then wire the first two inputs through so the
    /// scoring function is exactly s₀ − s₁ (inputs stay positive, so the
    /// relus pass through).
    fn passthrough_model() -> CamModel {
        let mut m = mlp_model(0);
        for i in 0..m.store.len() {
            let id = crate::diffcore::params::ParamId(i as u32);
            for v in m.store.get_mut(id).values.iter_mut() {
                *v = 0.0;
            }
        }
        let l0 = m.scoring_net().layers[0].w;
        let in_dim = m.scoring_net().layers[0].in_dim;
        m.store.get_mut(l0).values[0] = 1.0; // row 0 reads s0
        m.store.get_mut(l0).values[in_dim + 1] = 1.0; // row 1 reads s1
        let l1 = m.scoring_net().layers[1].w;
        m.store.get_mut(l1).values[0] = 1.0;
        let l1_in = m.scoring_net().layers[1].in_dim;
        m.store.get_mut(l1).values[l1_in + 1] = 1.0;
        let l2 = m.scoring_net().layers[2].w;
        m.store.get_mut(l2).values[0] = 1.0;
        m.store.get_mut(l2).values[1] = -1.0;
        m
    }

    fn transition(s: [f64; 2], label: Label, next: Option<[f64; 2]>) -> Transition {
        Transition {
            state: CamState::Vector(s.to_vec()),
            action: vec![0.0, 0.0],
            label,
            next_state: CamState::Vector(next.unwrap_or([0.0, 0.0]).to_vec()),
            next_action: next.map(|_| vec![0.0, 0.0]),
            relabeled: false,
            episode: 0,
            step: 0,
        }
    }

    #[test]
    fn passthrough_model_scores_s0_minus_s1() {
        let m = passthrough_model();
        let phi = m
            .score(&CamState::Vector(vec![0.7, 0.2]), &[0.0, 0.0])
            .unwrap();
        assert!((phi - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loss_examples_match_hand_computation() {
        let m = passthrough_model();
        let margins = [0.0, 2e-2, 1e-2];

        // Admissible, phi = 0.5, no successor: relu(0 - 0.5) = 0.
        let adm = transition([0.5, 0.0], Label::Admissible, None);
        assert_eq!(cam_loss(&m, &[&adm], &margins, 0.1).unwrap(), 0.0);

        // Inadmissible, phi = 0.5: relu(0.02 + 0.5) = 0.52.
        let inadm = transition([0.5, 0.0], Label::Inadmissible, None);
        let loss = cam_loss(&m, &[&inadm], &margins, 0.1).unwrap();
        assert!((loss - 0.52).abs() < 1e-12);

        // phi = 0.1, phi' = 0.05: relu(0.01 - (0.05-0.1) - 0.1*0.1) = 0.05,
        // and the admissible term is relu(0 - 0.1) = 0.
        let pair = transition([0.1, 0.0], Label::Admissible, Some([0.05, 0.0]));
        let loss = cam_loss(&m, &[&pair], &margins, 0.1).unwrap();
        assert!((loss - 0.05).abs() < 1e-12);
    }

    #[test]
    fn loss_is_zero_exactly_when_all_margins_clear() {
        let m = passthrough_model();
        let margins = [0.0, 2e-2, 1e-2];
        let batch = [
            transition([1.0, 0.1], Label::Admissible, Some([1.0, 0.1])),
            transition([0.1, 1.0], Label::Inadmissible, None),
        ];
        let refs: Vec<&Transition> = batch.iter().collect();
        // phi = 0.9 admissible, phi = -0.9 inadmissible, rate term
        // relu(0.01 - 0 - 0.09) = 0.
        assert_eq!(cam_loss(&m, &refs, &margins, 0.1).unwrap(), 0.0);

        // Shrink the admissible gap below gamma_1 and the loss turns on.
        let tight = [transition([0.005, 0.0], Label::Admissible, None)];
        let refs: Vec<&Transition> = tight.iter().collect();
        assert!(cam_loss(&m, &refs, &[1e-2, 2e-2, 1e-2], 0.1).unwrap() > 0.0);
    }

    #[test]
    fn empty_partitions_contribute_nothing() {
        let m = passthrough_model();
        let margins = [0.0, 2e-2, 1e-2];
        assert_eq!(cam_loss(&m, &[], &margins, 0.1).unwrap(), 0.0);

        // Only inadmissible members: terms 1 and 3 vanish.
        let inadm = transition([0.1, 1.0], Label::Inadmissible, Some([0.1, 1.0]));
        assert_eq!(cam_loss(&m, &[&inadm], &margins, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn loss_is_never_negative() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let m = mlp_model(5);
        for _ in 0..50 {
            let batch: Vec<Transition> = (0..8)
                .map(|_| {
                    let s = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                    let n = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                    transition(
                        s,
                        Label::from_collision(rng.random_bool(0.5)),
                        rng.random_bool(0.7).then_some(n),
                    )
                })
                .collect();
            let refs: Vec<&Transition> = batch.iter().collect();
            assert!(cam_loss(&m, &refs, &[0.0, 2e-2, 1e-2], 0.1).unwrap() >= 0.0);
        }
    }

    fn random_car_batch(seed: u64, n: usize) -> Vec<Transition> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let spec = TaskSpec::navigation(EnvKind::Car, 3, 4, 3.0, seed);
        let world = sample_task(&spec, &mut rng).unwrap();
        let bx = EnvKind::Car.action_box();
        (0..n)
            .map(|i| {
                let agent = i % 3;
                let action = bx.sample(&mut rng);
                let mut next_world = world.clone();
                next_world.agents[agent] =
                    step_agent(EnvKind::Car, &world.agents[agent], &action);
                Transition {
                    state: CamState::Graph(ego_graph(&world, agent).unwrap()),
                    action,
                    label: Label::from_collision(rng.random_bool(0.5)),
                    next_state: CamState::Graph(ego_graph(&next_world, agent).unwrap()),
                    next_action: rng.random_bool(0.75).then(|| bx.sample(&mut rng)),
                    relabeled: false,
                    episode: 0,
                    step: i,
                }
            })
            .collect()
    }

    #[test]
    fn raw_score_gradient_matches_finite_differences() {
        let model = CamModel::init(EnvKind::Car, 6, 2, &mut rng_for(11, "model", &[])).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let spec = TaskSpec::navigation(EnvKind::Car, 3, 4, 3.0, 11);
        let world = sample_task(&spec, &mut rng).unwrap();
        let state = CamState::Graph(ego_graph(&world, 0).unwrap());
        let action = vec![0.3];

        let mut store = model.store.clone();
        store.zero_grads();
        let mut tape = Tape::new();
        let node = model.score_tape(&mut tape, &state, &action).unwrap();
        tape.backward(node, &mut store).unwrap();
        let analytic = collect_grads(&store);

        let mut scratch = model.clone();
        let numeric = finite_diff_grad(&mut store, 1e-6, |s| {
            scratch.store = s.clone();
            scratch.score(&state, &action)
        })
        .unwrap();
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences_on_graphs() {
        let model = CamModel::init(EnvKind::Car, 6, 2, &mut rng_for(11, "model", &[])).unwrap();
        let batch = random_car_batch(11, 16);
        let refs: Vec<&Transition> = batch.iter().collect();
        let margins = [0.0, 2e-2, 1e-2];

        let mut store = model.store.clone();
        store.zero_grads();
        let mut tape = Tape::new();
        let node = cam_loss_tape(&mut tape, &model, &refs, &margins, 0.1).unwrap();
        tape.backward(node, &mut store).unwrap();
        let analytic = collect_grads(&store);

        let mut scratch = model.clone();
        let numeric = finite_diff_grad(&mut store, 1e-5, |s| {
            scratch.store = s.clone();
            cam_loss(&scratch, &refs, &margins, 0.1)
        })
        .unwrap();

        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences_on_vectors() {
        let model = mlp_model(13);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let batch: Vec<Transition> = (0..16)
            .map(|_| {
                let s = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let n = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                transition(
                    s,
                    Label::from_collision(rng.random_bool(0.5)),
                    rng.random_bool(0.75).then_some(n),
                )
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let margins = [0.0, 2e-2, 1e-2];

        let mut store = model.store.clone();
        store.zero_grads();
        let mut tape = Tape::new();
        let node = cam_loss_tape(&mut tape, &model, &refs, &margins, 0.1).unwrap();
        tape.backward(node, &mut store).unwrap();
        let analytic = collect_grads(&store);

        let mut scratch = model.clone();
        let numeric = finite_diff_grad(&mut store, 1e-5, |s| {
            scratch.store = s.clone();
            cam_loss(&scratch, &refs, &margins, 0.1)
        })
        .unwrap();

        assert!(max_rel_err(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn adam_separates_a_linearly_separable_set() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut model =
            CamModel::init(EnvKind::Integrator2D, 16, 0, &mut rng_for(17, "model", &[])).unwrap();
        let batch: Vec<Transition> = (0..64)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                let s = [side, rng.random_range(-0.5..0.5)];
                transition(
                    s,
                    Label::from_collision(side < 0.0),
                    None,
                )
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let margins = [0.0, 2e-2, 1e-2];

        let mut adam = AdamState::new(&model.store, AdamConfig::default());
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let mut tape = Tape::new();
            let node = cam_loss_tape(&mut tape, &model, &refs, &margins, 0.1).unwrap();
            last = tape.scalar(node);
            if last < 1e-3 {
                break;
            }
            model.store.zero_grads();
            tape.backward(node, &mut model.store).unwrap();
            adam.update(&mut model.store).unwrap();
        }
        assert!(last < 1e-3, "loss stuck at {last}");
    }

    // ─── buffer ──────────────────────────────────────────────────────────

    #[test]
    fn buffer_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(10);
        for t in 0..13 {
            buf.push(transition([t as f64, 0.0], Label::Admissible, None));
        }
        assert_eq!(buf.len(), 10);
        let tags: Vec<usize> = buf.iter().map(|tr| state_tag(&tr.state)).collect();
        assert_eq!(tags, (3..13).collect::<Vec<_>>());
    }

    #[test]
    fn buffer_samples_with_replacement() {
        let mut buf = ReplayBuffer::new(10);
        for t in 0..3 {
            buf.push(transition([t as f64, 0.0], Label::Admissible, None));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let batch = buf.sample(8, &mut rng);
        assert_eq!(batch.len(), 8);
        assert!(batch.iter().all(|tr| state_tag(&tr.state) < 3));
    }

    // ─── train loop ──────────────────────────────────────────────────────

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            episodes: 4,
            horizon: 6,
            candidates: 8,
            batch_size: 16,
            update_every: 2,
            grad_steps: 2,
            n_probe: 4,
            hidden: 8,
            validation_every: 1,
            validation_episodes: 1,
            seed: 3,
            ..TrainConfig::for_env(EnvKind::Integrator2D)
        }
    }

    #[test]
    fn zero_episodes_return_the_initialized_model() {
        let mut cfg = tiny_cfg();
        cfg.episodes = 0;
        let out = train(&cfg, |_| {}).unwrap();
        assert!(out.telemetry.is_empty());
        assert!(!out.diverged);
        let fresh = CamModel::init(cfg.env, cfg.hidden, cfg.gnn_layers, &mut rng_for(3, "model", &[]))
            .unwrap();
        for (a, b) in out.model.store.iter().zip(fresh.store.iter()) {
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_cfg();
        let a = train(&cfg, |_| {}).unwrap();
        let b = train(&cfg, |_| {}).unwrap();
        assert_eq!(
            serde_json::to_string(&a.telemetry).unwrap(),
            serde_json::to_string(&b.telemetry).unwrap()
        );
        for (pa, pb) in a.model.store.iter().zip(b.model.store.iter()) {
            let ba: Vec<u64> = pa.values.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = pb.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn telemetry_tracks_updates_and_validations() {
        let cfg = tiny_cfg();
        let mut validations = 0;
        let out = train(&cfg, |ev| {
            if let TrainEvent::Validation { success, .. } = ev {
                assert!((0.0..=1.0).contains(&success));
                validations += 1;
            }
        })
        .unwrap();
        assert_eq!(out.telemetry.len(), 4);
        assert!(out.telemetry[0].loss.is_none(), "no update after episode 0");
        assert!(out.telemetry[1].loss.is_some());
        assert_eq!(validations, 2, "one per optimization round");
        assert!(out.telemetry.iter().all(|r| r.lr > 0.0));
        assert!(out
            .telemetry
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.admissible_ratio)));
    }

    #[test]
    fn early_stop_waits_for_a_full_window() {
        let mut cfg = tiny_cfg();
        cfg.episodes = 30;
        cfg.grad_steps = 0;
        cfg.early_stop_success = Some(0.0);
        let out = train(&cfg, |_| {}).unwrap();
        assert_eq!(out.telemetry.len(), 20, "any mean passes threshold 0");
    }

    #[test]
    fn non_finite_loss_stops_training_with_the_flag_set() {
        let mut cfg = tiny_cfg();
        // An absurd admissible margin overflows the term sum as soon as a
        // batch holds two admissible members.
        cfg.margins = [f64::MAX, 0.0, 0.0];
        cfg.episodes = 2;
        let out = train(&cfg, |_| {}).unwrap();
        assert!(out.diverged);
        assert_eq!(out.telemetry.len(), 2);
        let last = out.telemetry.last().unwrap();
        assert!(!last.loss.unwrap().is_finite());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_cfg();
        cfg.batch_size = 0;
        assert!(matches!(train(&cfg, |_| {}), Err(CamError::Config(_))));
        let mut cfg = tiny_cfg();
        cfg.margins = [-0.1, 0.0, 0.0];
        assert!(matches!(train(&cfg, |_| {}), Err(CamError::Config(_))));
    }
}
