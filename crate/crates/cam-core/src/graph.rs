//! Egocentric star graphs and their decomposition into training-sized
//! subgraphs.
//!
//! Every graph is built for exactly one agent: nodes are the ego plus its
//! neighbors within a radius, and every edge points from a neighbor into
//! the ego. Edge features follow a fixed per-environment layout:
//!
//!   Car        [type(2), sinθ_i, cosθ_i, sinθ_j, cosθ_j, Δx, Δy]            width 8
//!   DynDubins  [type(2), v_i, v_j, sinθ_i, cosθ_i, sinθ_j, cosθ_j, Δx, Δy]  width 10
//!   Drone      [type(2), pose_i(7), pose_j(7), Δx, Δy, Δz]                  width 19
//!
//! where i is the source (neighbor), j the destination (ego), Δ = source −
//! destination, and pose = [v_x, v_y, v_z, sinα, cosα, sinβ, cosβ]. Edges
//! from obstacles zero-pad the source pose fields; drone obstacle edges
//! also zero Δz (cylinders have no height).

use rand::Rng;

use crate::error::{CamError, Result};
use crate::worlds::{EnvKind, WorldState, NEIGHBOR_RADIUS};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NodeType {
    Agent,
    Obstacle,
}

impl NodeType {
    /// One-hot node feature, [agent, obstacle].
    pub fn features(self) -> [f64; 2] {
        match self {
            NodeType::Agent => [1.0, 0.0],
            NodeType::Obstacle => [0.0, 1.0],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EdgeKind {
    ObstacleToAgent,
    AgentToAgent,
}

impl EdgeKind {
    /// One-hot edge-type prefix, [obstacle→agent, agent→agent].
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            EdgeKind::ObstacleToAgent => [1.0, 0.0],
            EdgeKind::AgentToAgent => [0.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EgoEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub features: Vec<f64>,
}

/// Star graph around one agent. Node 0 is always the ego.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoGraph {
    pub env: EnvKind,
    pub nodes: Vec<NodeType>,
    pub edges: Vec<EgoEdge>,
    pub ego: usize,
}

impl EgoGraph {
    pub fn ego_only(env: EnvKind) -> Self {
        EgoGraph { env, nodes: vec![NodeType::Agent], edges: Vec::new(), ego: 0 }
    }

    pub fn edge_feature_width(env: EnvKind) -> Result<usize> {
        match env {
            EnvKind::Car => Ok(8),
            EnvKind::DynDubins => Ok(10),
            EnvKind::Drone => Ok(19),
            EnvKind::Integrator2D => Err(CamError::Contract(
                "the single integrator uses a raw state vector, not a graph".into(),
            )),
        }
    }

    pub fn agent_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::AgentToAgent).count()
    }

    pub fn obstacle_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::ObstacleToAgent).count()
    }
}

/// Caps on edges per type within one subgraph; defaults mirror the
/// training distribution (0-2 neighbor agents, 0-9 neighbor obstacles).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SubgraphCaps {
    pub max_agent_edges: usize,
    pub max_obstacle_edges: usize,
}

impl Default for SubgraphCaps {
    fn default() -> Self {
        SubgraphCaps { max_agent_edges: 2, max_obstacle_edges: 9 }
    }
}

impl SubgraphCaps {
    pub fn satisfied_by(&self, g: &EgoGraph) -> bool {
        g.agent_edge_count() <= self.max_agent_edges
            && g.obstacle_edge_count() <= self.max_obstacle_edges
    }
}

fn sincos(theta: f64) -> (f64, f64) {
    (theta.sin(), theta.cos())
}

/// Pose block used by the drone layout: velocities and angle trig.
fn drone_pose(state: &[f64]) -> [f64; 7] {
    let (sa, ca) = sincos(state[6]);
    let (sb, cb) = sincos(state[7]);
    [state[3], state[4], state[5], sa, ca, sb, cb]
}

fn edge_features(
    env: EnvKind,
    kind: EdgeKind,
    src_state: Option<&[f64]>, // None for obstacles (zero-padded)
    dst_state: &[f64],
    delta: &[f64],
) -> Vec<f64> {
    let mut f: Vec<f64> = kind.one_hot().to_vec();
    match env {
        EnvKind::Car => {
            let (si, ci) = src_state.map_or((0.0, 0.0), |s| sincos(s[2]));
            let (sj, cj) = sincos(dst_state[2]);
            f.extend_from_slice(&[si, ci, sj, cj, delta[0], delta[1]]);
        }
        EnvKind::DynDubins => {
            let (vi, si, ci) = src_state.map_or((0.0, 0.0, 0.0), |s| {
                let (sin, cos) = sincos(s[3]);
                (s[2], sin, cos)
            });
            let (sj, cj) = sincos(dst_state[3]);
            f.extend_from_slice(&[vi, dst_state[2], si, ci, sj, cj, delta[0], delta[1]]);
        }
        EnvKind::Drone => {
            let pose_i = src_state.map_or([0.0; 7], drone_pose);
            let pose_j = drone_pose(dst_state);
            f.extend_from_slice(&pose_i);
            f.extend_from_slice(&pose_j);
            // Obstacle cylinders have no height: Δz pads to zero.
            let dz = if src_state.is_some() { delta[2] } else { 0.0 };
            f.extend_from_slice(&[delta[0], delta[1], dz]);
        }
        EnvKind::Integrator2D => unreachable!("graphless environment"),
    }
    f
}

/// Build the egocentric graph for `agent_id`: all agents within `radius`
/// (full position space) and all obstacles within `radius` (horizontal
/// distance for drone cylinders), each contributing one edge into the ego.
/// Neighbor order is agents by ascending id, then obstacles by ascending
/// id, which makes construction deterministic.
pub fn build_ego_graph(w: &WorldState, agent_id: usize, radius: f64) -> Result<EgoGraph> {
    EgoGraph::edge_feature_width(w.env)?;
    if agent_id >= w.agents.len() {
        return Err(CamError::Contract(format!(
            "agent {agent_id} out of range ({} agents)",
            w.agents.len()
        )));
    }
    assert!(radius > 0.0);
    let pd = w.env.position_dim();
    let ego_state = &w.agents[agent_id];
    let ego_pos = &ego_state[..pd];

    let mut g = EgoGraph::ego_only(w.env);
    for (j, other) in w.agents.iter().enumerate() {
        if j == agent_id {
            continue;
        }
        let delta: Vec<f64> = (0..pd).map(|k| other[k] - ego_pos[k]).collect();
        let d2: f64 = delta.iter().map(|v| v * v).sum();
        if d2.sqrt() < radius {
            let node = g.nodes.len();
            g.nodes.push(NodeType::Agent);
            g.edges.push(EgoEdge {
                src: node,
                dst: g.ego,
                kind: EdgeKind::AgentToAgent,
                features: edge_features(
                    w.env,
                    EdgeKind::AgentToAgent,
                    Some(other),
                    ego_state,
                    &delta,
                ),
            });
        }
    }
    for ob in &w.obstacles {
        let mut delta = vec![ob[0] - ego_pos[0], ob[1] - ego_pos[1]];
        let d = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
        if d < radius {
            if pd == 3 {
                delta.push(0.0);
            }
            let node = g.nodes.len();
            g.nodes.push(NodeType::Obstacle);
            g.edges.push(EgoEdge {
                src: node,
                dst: g.ego,
                kind: EdgeKind::ObstacleToAgent,
                features: edge_features(
                    w.env,
                    EdgeKind::ObstacleToAgent,
                    None,
                    ego_state,
                    &delta,
                ),
            });
        }
    }
    Ok(g)
}

/// Default-radius convenience used throughout rollouts.
pub fn ego_graph(w: &WorldState, agent_id: usize) -> Result<EgoGraph> {
    build_ego_graph(w, agent_id, NEIGHBOR_RADIUS)
}

/// Split an oversized graph into subgraphs within `caps`, covering every
/// input edge at least once. Edges are shuffled per type, chunked to the
/// caps, and chunks paired round-robin (the shorter list repeats). A graph
/// already within caps comes back as a single clone; an edgeless graph
/// yields one ego-only subgraph.
pub fn decompose(g: &EgoGraph, caps: &SubgraphCaps, rng: &mut impl Rng) -> Vec<EgoGraph> {
    if g.edges.is_empty() {
        let mut sub = EgoGraph::ego_only(g.env);
        sub.nodes[0] = g.nodes[g.ego];
        return vec![sub];
    }
    if caps.satisfied_by(g) {
        return vec![g.clone()];
    }

    let mut agent_edges: Vec<usize> = Vec::new();
    let mut obstacle_edges: Vec<usize> = Vec::new();
    for (i, e) in g.edges.iter().enumerate() {
        match e.kind {
            EdgeKind::AgentToAgent => agent_edges.push(i),
            EdgeKind::ObstacleToAgent => obstacle_edges.push(i),
        }
    }
    assert!(
        (agent_edges.is_empty() || caps.max_agent_edges > 0)
            && (obstacle_edges.is_empty() || caps.max_obstacle_edges > 0),
        "caps must allow at least one edge of every type present"
    );
    shuffle(&mut agent_edges, rng);
    shuffle(&mut obstacle_edges, rng);

    let agent_chunks: Vec<&[usize]> = if agent_edges.is_empty() {
        Vec::new()
    } else {
        agent_edges.chunks(caps.max_agent_edges).collect()
    };
    let obstacle_chunks: Vec<&[usize]> = if obstacle_edges.is_empty() {
        Vec::new()
    } else {
        obstacle_edges.chunks(caps.max_obstacle_edges).collect()
    };
    let count = agent_chunks.len().max(obstacle_chunks.len());

    (0..count)
        .map(|s| {
            let mut picked: Vec<usize> = Vec::new();
            if !agent_chunks.is_empty() {
                picked.extend_from_slice(agent_chunks[s % agent_chunks.len()]);
            }
            if !obstacle_chunks.is_empty() {
                picked.extend_from_slice(obstacle_chunks[s % obstacle_chunks.len()]);
            }
            picked.sort_unstable(); // stable node order independent of shuffle
            subgraph_from_edges(g, &picked)
        })
        .collect()
}

fn shuffle(xs: &mut [usize], rng: &mut impl Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}

/// New star graph from a subset of edge indices; features copied verbatim.
fn subgraph_from_edges(g: &EgoGraph, edge_idx: &[usize]) -> EgoGraph {
    let mut sub = EgoGraph::ego_only(g.env);
    sub.nodes[0] = g.nodes[g.ego];
    for &ei in edge_idx {
        let e = &g.edges[ei];
        let node = sub.nodes.len();
        sub.nodes.push(g.nodes[e.src]);
        sub.edges.push(EgoEdge {
            src: node,
            dst: 0,
            kind: e.kind,
            features: e.features.clone(),
        });
    }
    sub
}
