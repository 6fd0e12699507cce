//! The admissibility model: a scalar score φ(state, action), with actions
//! scoring ≥ 0 treated as admissible.
//!
//! Graph environments use a message-passing backbone over the egocentric
//! star graph; the single-agent integrator uses a plain MLP over the raw
//! state. Both end in a scoring head applied to [hidden | action], which
//! lets one hidden computation serve a whole batch of candidate actions.
//!
//! Every forward exists twice: a plain f64 path for inference and a taped
//! path for training. The two follow the same arithmetic order and agree
//! bit for bit; tests pin that equivalence.

pub mod scoring;

pub use scoring::{
    adaptive_agent_scoring, admissible_ratio, cam_score_batch, compose_min,
    score_with_decomposition, select_action, ScoredActions,
};

use rand::Rng;

use crate::diffcore::{Activation, Linear, Mlp, NodeId, ParamStore, Tape};
use crate::error::{CamError, Result};
use crate::graph::EgoGraph;
use crate::worlds::EnvKind;

/// Model input: one agent's local view of the world.
#[derive(Clone, Debug, PartialEq)]
pub enum CamState {
    Graph(EgoGraph),
    Vector(Vec<f64>),
}

/// One message-passing round: `message` maps an edge embedding to a node
/// message (aggregated by componentwise max over incoming edges), and
/// `edge_update` maps [destination node | edge] to an edge residual.
#[derive(Clone, Debug)]
pub struct MessageRound {
    pub message: Mlp,
    pub edge_update: Mlp,
}

#[derive(Clone, Debug)]
pub struct GnnBackbone {
    pub node_embed: Linear,
    pub edge_embed: Linear,
    pub rounds: Vec<MessageRound>,
    pub head: Mlp,
}

#[derive(Clone, Debug)]
pub enum Backbone {
    Gnn(GnnBackbone),
    Mlp(Mlp),
}

impl Backbone {
    pub fn kind(&self) -> &'static str {
        match self {
            Backbone::Gnn(_) => "gnn",
            Backbone::Mlp(_) => "mlp",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CamModel {
    pub env: EnvKind,
    pub hidden: usize,
    /// Message-passing rounds; 0 for the MLP backbone.
    pub gnn_layers: usize,
    pub store: ParamStore,
    pub backbone: Backbone,
}

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_GNN_LAYERS: usize = 3;

impl CamModel {
    /// Fresh model for `env`: graph environments get the message-passing
    /// backbone, the integrator gets the MLP. Parameter allocation order
    /// is fixed and doubles as the checkpoint layout.
    pub fn init(env: EnvKind, hidden: usize, gnn_layers: usize, rng: &mut impl Rng) -> Result<Self> {
        if hidden == 0 {
            return Err(CamError::Config("hidden width must be positive".into()));
        }
        let mut store = ParamStore::new();
        let act_dim = env.action_dim();
        let backbone = match env {
            EnvKind::Integrator2D => {
                let dims = [env.state_dim() + act_dim, hidden, hidden, 1];
                let acts = [Activation::Relu, Activation::Relu, Activation::Linear];
                Backbone::Mlp(Mlp::init(&mut store, "mlp", &dims, &acts, rng))
            }
            _ => {
                if gnn_layers == 0 {
                    return Err(CamError::Config(
                        "graph backbones need at least one message-passing round".into(),
                    ));
                }
                let edge_w = EgoGraph::edge_feature_width(env)?;
                let node_embed =
                    Linear::init(&mut store, "node_embed", 2, hidden, Activation::Relu, rng);
                let edge_embed =
                    Linear::init(&mut store, "edge_embed", edge_w, hidden, Activation::Relu, rng);
                // Linear outputs keep the max-aggregation inputs free of
                // exact-zero ties, which would make the routed gradient
                // depend on edge order.
                let relu_lin = [Activation::Relu, Activation::Linear];
                let rounds = (0..gnn_layers)
                    .map(|k| MessageRound {
                        message: Mlp::init(
                            &mut store,
                            &format!("round{k}.message"),
                            &[hidden, hidden, hidden],
                            &relu_lin,
                            rng,
                        ),
                        edge_update: Mlp::init(
                            &mut store,
                            &format!("round{k}.edge_update"),
                            &[2 * hidden, hidden, hidden],
                            &relu_lin,
                            rng,
                        ),
                    })
                    .collect();
                let head = Mlp::init(
                    &mut store,
                    "head",
                    &[hidden + act_dim, hidden, 1],
                    &[Activation::Relu, Activation::Linear],
                    rng,
                );
                Backbone::Gnn(GnnBackbone { node_embed, edge_embed, rounds, head })
            }
        };
        let gnn_layers = match backbone {
            Backbone::Gnn(_) => gnn_layers,
            Backbone::Mlp(_) => 0,
        };
        Ok(CamModel { env, hidden, gnn_layers, store, backbone })
    }

    pub fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    /// The network that maps [hidden | action] to the score.
    pub fn scoring_net(&self) -> &Mlp {
        match &self.backbone {
            Backbone::Gnn(g) => &g.head,
            Backbone::Mlp(m) => m,
        }
    }

    /// Hidden vector fed to the scoring net ahead of the action columns:
    /// the ego embedding after all message-passing rounds, or the raw
    /// state for the MLP backbone.
    pub fn hidden(&self, state: &CamState) -> Result<Vec<f64>> {
        match (&self.backbone, state) {
            (Backbone::Gnn(net), CamState::Graph(g)) => self.gnn_hidden(net, g),
            (Backbone::Mlp(_), CamState::Vector(v)) => {
                if v.len() != self.env.state_dim() {
                    return Err(CamError::Shape(format!(
                        "state length {} != {}",
                        v.len(),
                        self.env.state_dim()
                    )));
                }
                Ok(v.clone())
            }
            (Backbone::Gnn(_), CamState::Vector(_)) => Err(CamError::Contract(
                "graph backbone scored on a raw state vector".into(),
            )),
            (Backbone::Mlp(_), CamState::Graph(_)) => Err(CamError::Contract(
                "mlp backbone scored on a graph".into(),
            )),
        }
    }

    /// One full unshared pass. The batched path in [`scoring`] must agree
    /// with this to the bit; tests hold both routes against each other.
    pub fn score(&self, state: &CamState, action: &[f64]) -> Result<f64> {
        let h = self.hidden(state)?;
        self.score_from_hidden(&h, action)
    }

    pub fn score_from_hidden(&self, hidden: &[f64], action: &[f64]) -> Result<f64> {
        self.check_action(action)?;
        let mut input = hidden.to_vec();
        input.extend_from_slice(action);
        let out = self.scoring_net().forward(&self.store, &input)?;
        Ok(out[0])
    }

    pub(crate) fn check_action(&self, action: &[f64]) -> Result<()> {
        if action.len() != self.action_dim() {
            return Err(CamError::Shape(format!(
                "action length {} != {}",
                action.len(),
                self.action_dim()
            )));
        }
        Ok(())
    }

    /// m⁽⁰⁾ = node embedding of the type one-hot, n⁽⁰⁾ = edge embedding of
    /// the feature vector; each round adds the max over incoming messages
    /// to every node (no incoming edges: unchanged), then adds
    /// edge_update([m_dst | n_l]) to every edge, reading the updated node
    /// and the pre-round edge. Returns the ego node's final embedding.
    fn gnn_hidden(&self, net: &GnnBackbone, g: &EgoGraph) -> Result<Vec<f64>> {
        if g.env != self.env {
            return Err(CamError::Contract(format!(
                "graph built for {} scored by a {} model",
                g.env.name(),
                self.env.name()
            )));
        }
        let store = &self.store;
        let mut m: Vec<Vec<f64>> = Vec::with_capacity(g.nodes.len());
        for node in &g.nodes {
            let mut e = Vec::new();
            net.node_embed.forward(store, &node.features(), &mut e)?;
            m.push(e);
        }
        let mut n: Vec<Vec<f64>> = Vec::with_capacity(g.edges.len());
        for edge in &g.edges {
            let mut e = Vec::new();
            net.edge_embed.forward(store, &edge.features, &mut e)?;
            n.push(e);
        }
        let incoming = incoming_lists(g);

        for round in &net.rounds {
            for (i, edges_in) in incoming.iter().enumerate() {
                let mut best: Option<Vec<f64>> = None;
                for &l in edges_in {
                    let msg = round.message.forward(store, &n[l])?;
                    match &mut best {
                        None => best = Some(msg),
                        Some(b) => {
                            for (bv, mv) in b.iter_mut().zip(&msg) {
                                if *mv > *bv {
                                    *bv = *mv;
                                }
                            }
                        }
                    }
                }
                if let Some(b) = best {
                    for (mv, bv) in m[i].iter_mut().zip(&b) {
                        *mv += *bv;
                    }
                }
            }
            for (l, edge) in g.edges.iter().enumerate() {
                let mut cat = m[edge.dst].clone();
                cat.extend_from_slice(&n[l]);
                let upd = round.edge_update.forward(store, &cat)?;
                for (nv, uv) in n[l].iter_mut().zip(&upd) {
                    *nv += *uv;
                }
            }
        }
        Ok(std::mem::take(&mut m[g.ego]))
    }

    /// Taped twin of [`CamModel::score`], same arithmetic order.
    pub fn score_tape(&self, tape: &mut Tape, state: &CamState, action: &[f64]) -> Result<NodeId> {
        self.check_action(action)?;
        let head_input = match (&self.backbone, state) {
            (Backbone::Gnn(net), CamState::Graph(g)) => {
                let h = self.gnn_hidden_tape(tape, net, g)?;
                let a = tape.input(action);
                tape.concat(h, a)?
            }
            (Backbone::Mlp(_), CamState::Vector(v)) => {
                if v.len() != self.env.state_dim() {
                    return Err(CamError::Shape(format!(
                        "state length {} != {}",
                        v.len(),
                        self.env.state_dim()
                    )));
                }
                let mut input = v.clone();
                input.extend_from_slice(action);
                tape.input(&input)
            }
            _ => {
                return Err(CamError::Contract(
                    "backbone and state kind do not match".into(),
                ))
            }
        };
        self.scoring_net().forward_tape(tape, &self.store, head_input)
    }

    fn gnn_hidden_tape(&self, tape: &mut Tape, net: &GnnBackbone, g: &EgoGraph) -> Result<NodeId> {
        if g.env != self.env {
            return Err(CamError::Contract(format!(
                "graph built for {} scored by a {} model",
                g.env.name(),
                self.env.name()
            )));
        }
        let store = &self.store;
        let mut m: Vec<NodeId> = Vec::with_capacity(g.nodes.len());
        for node in &g.nodes {
            let x = tape.input(&node.features());
            m.push(net.node_embed.forward_tape(tape, store, x)?);
        }
        let mut n: Vec<NodeId> = Vec::with_capacity(g.edges.len());
        for edge in &g.edges {
            let x = tape.input(&edge.features);
            n.push(net.edge_embed.forward_tape(tape, store, x)?);
        }
        let incoming = incoming_lists(g);

        for round in &net.rounds {
            for (i, edges_in) in incoming.iter().enumerate() {
                if edges_in.is_empty() {
                    continue;
                }
                let msgs: Vec<NodeId> = edges_in
                    .iter()
                    .map(|&l| round.message.forward_tape(tape, store, n[l]))
                    .collect::<Result<_>>()?;
                let agg = tape.max_over(&msgs)?;
                m[i] = tape.add(m[i], agg)?;
            }
            for (l, edge) in g.edges.iter().enumerate() {
                let cat = tape.concat(m[edge.dst], n[l])?;
                let upd = round.edge_update.forward_tape(tape, store, cat)?;
                n[l] = tape.add(n[l], upd)?;
            }
        }
        Ok(m[g.ego])
    }
}

fn incoming_lists(g: &EgoGraph) -> Vec<Vec<usize>> {
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    for (l, e) in g.edges.iter().enumerate() {
        incoming[e.dst].push(l);
    }
    incoming
}
