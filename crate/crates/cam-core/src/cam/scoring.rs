//! Batched candidate scoring and action selection.
//!
//! The hidden vector is computed once per state and reused across the
//! whole candidate set via first-layer column partials, so a batch costs
//! one backbone pass plus N cheap head evaluations. Batched results agree
//! with independent full passes to the bit.

use rand::Rng;

use crate::cam::{CamModel, CamState};
use crate::error::{CamError, Result};
use crate::graph::{decompose, EgoGraph, SubgraphCaps};

/// Candidate actions with admissibility scores φ and preference scores ω.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredActions {
    pub actions: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub preferences: Vec<f64>,
}

impl ScoredActions {
    pub fn new(actions: Vec<Vec<f64>>, scores: Vec<f64>, preferences: Vec<f64>) -> Result<Self> {
        if actions.len() != scores.len() || actions.len() != preferences.len() {
            return Err(CamError::Shape(format!(
                "scored set lengths disagree: {} actions, {} scores, {} preferences",
                actions.len(),
                scores.len(),
                preferences.len()
            )));
        }
        Ok(ScoredActions { actions, scores, preferences })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Score every candidate against one state: hidden once, head per action.
pub fn cam_score_batch(
    model: &CamModel,
    state: &CamState,
    actions: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let hidden = model.hidden(state)?;
    score_from_hidden_batch(model, &hidden, actions)
}

fn score_from_hidden_batch(
    model: &CamModel,
    hidden: &[f64],
    actions: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let net = model.scoring_net();
    let partial = net.first_layer_partial(&model.store, hidden);
    actions
        .iter()
        .map(|a| {
            model.check_action(a)?;
            let out = net.forward_from_partial(&model.store, &partial, a)?;
            Ok(out[0])
        })
        .collect()
}

/// Elementwise minimum across score lists: an action admissible for the
/// composite iff admissible for every component.
pub fn compose_min(lists: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = lists
        .first()
        .ok_or_else(|| CamError::Contract("compose_min over zero score lists".into()))?;
    for l in &lists[1..] {
        if l.len() != first.len() {
            return Err(CamError::Shape(format!(
                "score list lengths disagree: {} vs {}",
                first.len(),
                l.len()
            )));
        }
    }
    Ok((0..first.len())
        .map(|i| {
            lists
                .iter()
                .fold(f64::INFINITY, |acc, l| if l[i] < acc { l[i] } else { acc })
        })
        .collect())
}

/// Score through the subgraph decomposition: split the graph to fit the
/// training density caps, score each subgraph, compose by min.
pub fn score_with_decomposition(
    model: &CamModel,
    graph: &EgoGraph,
    actions: &[Vec<f64>],
    caps: &SubgraphCaps,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let lists: Vec<Vec<f64>> = decompose(graph, caps, rng)
        .into_iter()
        .map(|sub| cam_score_batch(model, &CamState::Graph(sub), actions))
        .collect::<Result<_>>()?;
    compose_min(&lists)
}

/// Pick the executed action: the highest-preference admissible candidate,
/// or, with nothing admissible, the highest-scoring candidate plus a
/// uniform per-dimension perturbation of magnitude `noise_mag`. Ties break
/// to the lowest index. Admissible picks carry no noise; `noise_mag` 0 is
/// the greedy inference setting. The result may leave the action box by up
/// to `noise_mag`; the simulation boundary clamps and counts.
pub fn select_action(scored: &ScoredActions, noise_mag: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(!scored.is_empty(), "selection needs at least one candidate");
    let admissible = argmax_filtered(&scored.preferences, &scored.scores, |phi| phi >= 0.0);
    if let Some(best) = admissible {
        return scored.actions[best].clone();
    }
    let best = argmax_filtered(&scored.scores, &scored.scores, |_| true).unwrap();
    let mut action = scored.actions[best].clone();
    if noise_mag > 0.0 {
        for v in action.iter_mut() {
            *v += rng.random_range(-noise_mag..noise_mag);
        }
    }
    action
}

/// Index of the strictly greatest key among entries passing the filter;
/// first occurrence wins ties.
fn argmax_filtered(keys: &[f64], filter_on: &[f64], keep: impl Fn(f64) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&k, &f)) in keys.iter().zip(filter_on).enumerate() {
        if !keep(f) {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if k > keys[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Fraction of candidates scoring ≥ 0.
pub fn admissible_ratio(scored: &ScoredActions) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    let hits = scored.scores.iter().filter(|s| **s >= 0.0).count();
    hits as f64 / scored.len() as f64
}

/// Score candidates chunk by chunk per agent, stopping as soon as any
/// evaluated candidate is admissible. Agents that never produce one are
/// evaluated to exhaustion, so selection over the truncated set has the
/// same admissibility status as selection over the full set.
pub fn adaptive_agent_scoring(
    model: &CamModel,
    states: &[CamState],
    candidates: &[Vec<Vec<f64>>],
    preferences: &[Vec<f64>],
    chunk_size: usize,
) -> Result<Vec<ScoredActions>> {
    if chunk_size == 0 {
        return Err(CamError::Config("chunk size must be at least 1".into()));
    }
    if states.len() != candidates.len() || states.len() != preferences.len() {
        return Err(CamError::Shape(format!(
            "per-agent lengths disagree: {} states, {} candidate sets, {} preference sets",
            states.len(),
            candidates.len(),
            preferences.len()
        )));
    }
    states
        .iter()
        .zip(candidates)
        .zip(preferences)
        .map(|((state, cands), prefs)| {
            if cands.len() != prefs.len() {
                return Err(CamError::Shape(format!(
                    "candidate/preference lengths disagree: {} vs {}",
                    cands.len(),
                    prefs.len()
                )));
            }
            let hidden = model.hidden(state)?;
            let mut evaluated = 0;
            let mut scores: Vec<f64> = Vec::new();
            for chunk in cands.chunks(chunk_size) {
                let chunk_scores = score_from_hidden_batch(model, &hidden, chunk)?;
                let admissible = chunk_scores.iter().any(|s| *s >= 0.0);
                scores.extend(chunk_scores);
                evaluated += chunk.len();
                if admissible {
                    break;
                }
            }
            ScoredActions::new(
                cands[..evaluated].to_vec(),
                scores,
                prefs[..evaluated].to_vec(),
            )
        })
        .collect()
}
