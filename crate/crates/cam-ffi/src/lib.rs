//! C ABI over the scoring core: load a trained checkpoint, describe world
//! snapshots as flat arrays, score candidate actions, pick one to execute.
//!
//! Conventions, also reproduced in the generated `include/cam.h`:
//! - every fallible call returns a `CamStatus`; `CAM_STATUS_OK` is zero
//! - on failure `cam_last_error` holds a message, per thread, until the
//!   next failing call on that thread
//! - handles are opaque; release them with the matching `_free` (null is
//!   a no-op); a handle is never retained by another handle
//! - multi-row arrays are row-major `f64`
//!
//! Panics never cross the boundary; an unexpected one surfaces as
//! `CAM_STATUS_CONTRACT_ERROR` with the panic text in `cam_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cam_core::cam::{
    cam_score_batch, score_with_decomposition, select_action, CamState, ScoredActions,
};
use cam_core::checkpoint::load_model;
use cam_core::graph::{ego_graph, SubgraphCaps};
use cam_core::rng::rng_for;
use cam_core::worlds::{EnvKind, WorldState};
use cam_core::CamError;

/// Result of every fallible call. Values match the CLI exit codes, with
/// `NullPointer` on top for arguments the type system cannot police.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CamStatus {
    Ok = 0,
    IoError = 1,
    ConfigError = 2,
    ContractError = 3,
    NumericError = 4,
    NullPointer = 5,
}

/// A loaded scoring model. Immutable; safe to share across threads.
pub struct CamModel(cam_core::cam::CamModel);

/// One world snapshot: agent states, goals, obstacle centers.
pub struct CamWorld(WorldState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn fail(e: &CamError) -> CamStatus {
    set_error(&e.to_string());
    match e {
        CamError::Io(_) => CamStatus::IoError,
        CamError::Config(_) => CamStatus::ConfigError,
        CamError::Numeric(_) => CamStatus::NumericError,
        CamError::Shape(_) | CamError::Contract(_) | CamError::Density(_) => {
            CamStatus::ContractError
        }
    }
}

fn null_arg(what: &str) -> CamStatus {
    set_error(&format!("{what} is null"));
    CamStatus::NullPointer
}

fn config_err(msg: &str) -> CamStatus {
    set_error(msg);
    CamStatus::ConfigError
}

/// Run a body, translating panics into an error status instead of
/// unwinding into the caller's frames.
fn guarded(f: impl FnOnce() -> CamStatus) -> CamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            CamStatus::ContractError
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, CamStatus> {
    if p.is_null() {
        return Err(null_arg(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| config_err(&format!("{what} is not valid UTF-8")))
}

unsafe fn rows<'a>(
    p: *const f64,
    count: usize,
    width: usize,
    what: &str,
) -> Result<Vec<Vec<f64>>, CamStatus> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null_arg(what));
    }
    let flat = std::slice::from_raw_parts(p, count * width);
    Ok(flat.chunks(width).map(|r| r.to_vec()).collect())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message from the last failing call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint from a JSON file produced by `cam train`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must point at writable storage.
#[no_mangle]
pub unsafe extern "C" fn cam_model_load(
    path: *const c_char,
    out: *mut *mut CamModel,
) -> CamStatus {
    guarded(|| {
        let Some(out) = out.as_mut() else {
            return null_arg("out");
        };
        *out = ptr::null_mut();
        let path = match text(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_model(Path::new(path)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(CamModel(m)));
                CamStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from `cam_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cam_model_free(model: *mut CamModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Environment name the model was trained for ("car", "dyn-dubins",
/// "drone", "integrator") as a static string; null for a null model.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cam_model_env(model: *const CamModel) -> *const c_char {
    match model.as_ref() {
        Some(m) => match m.0.env {
            EnvKind::Car => c"car".as_ptr(),
            EnvKind::DynDubins => c"dyn-dubins".as_ptr(),
            EnvKind::Drone => c"drone".as_ptr(),
            EnvKind::Integrator2D => c"integrator".as_ptr(),
        },
        None => ptr::null(),
    }
}

/// Per-agent action dimensionality; 0 for a null model.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cam_model_action_dim(model: *const CamModel) -> u32 {
    model.as_ref().map_or(0, |m| m.0.env.action_dim() as u32)
}

/// Per-agent state dimensionality; 0 for a null model.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cam_model_state_dim(model: *const CamModel) -> u32 {
    model.as_ref().map_or(0, |m| m.0.env.state_dim() as u32)
}

/// Build a world snapshot.
///
/// `agent_states` is `n_agents x state_dim(env)`, `goals` is
/// `n_agents x position_dim(env)` (null fills zeros; scoring never reads
/// goals), `obstacles` is `n_obstacles x 2` horizontal centers. At least
/// one agent and a positive `map_side` are required.
///
/// # Safety
/// Arrays must hold the stated number of elements; `env` must be
/// NUL-terminated; `out` must point at writable storage.
#[no_mangle]
pub unsafe extern "C" fn cam_world_new(
    env: *const c_char,
    map_side: f64,
    agent_states: *const f64,
    n_agents: u32,
    goals: *const f64,
    obstacles: *const f64,
    n_obstacles: u32,
    out: *mut *mut CamWorld,
) -> CamStatus {
    guarded(|| {
        let Some(out) = out.as_mut() else {
            return null_arg("out");
        };
        *out = ptr::null_mut();
        let env = match text(env, "env") {
            Ok(name) => match name.parse::<EnvKind>() {
                Ok(k) => k,
                Err(e) => return fail(&e),
            },
            Err(s) => return s,
        };
        if n_agents == 0 {
            return config_err("a world needs at least one agent");
        }
        if !(map_side.is_finite() && map_side > 0.0) {
            return config_err("map_side must be positive and finite");
        }
        let n = n_agents as usize;
        let pd = env.position_dim();
        let agents = match rows(agent_states, n, env.state_dim(), "agent_states") {
            Ok(a) => a,
            Err(s) => return s,
        };
        let goals = if goals.is_null() {
            vec![vec![0.0; pd]; n]
        } else {
            match rows(goals, n, pd, "goals") {
                Ok(g) => g,
                Err(s) => return s,
            }
        };
        let obstacles: Vec<[f64; 2]> = match rows(obstacles, n_obstacles as usize, 2, "obstacles")
        {
            Ok(centers) => centers.into_iter().map(|r| [r[0], r[1]]).collect(),
            Err(s) => return s,
        };
        if agents.iter().chain(goals.iter()).flatten().any(|v| !v.is_finite()) {
            return config_err("agent states and goals must be finite");
        }
        let world = WorldState {
            env,
            agents,
            goals,
            obstacles,
            danger_rects: Vec::new(),
            map_side,
            t: 0,
            reached: vec![false; n],
            goal_distance: env.goal_distance(),
            chase_targets: None,
        };
        *out = Box::into_raw(Box::new(CamWorld(world)));
        CamStatus::Ok
    })
}

/// Release a world handle. Null is a no-op.
///
/// # Safety
/// `world` must come from `cam_world_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cam_world_free(world: *mut CamWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Agents within the neighbor radius of `agent`; `u32::MAX` on error.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn cam_world_neighbor_count(
    world: *const CamWorld,
    agent: u32,
) -> u32 {
    let Some(w) = world.as_ref() else {
        return u32::MAX;
    };
    if w.0.env == EnvKind::Integrator2D {
        return 0;
    }
    match ego_graph(&w.0, agent as usize) {
        Ok(g) => g.agent_edge_count() as u32,
        Err(_) => u32::MAX,
    }
}

/// Score `n_actions` candidates (row-major `n_actions x action_dim`) for
/// one agent, writing `n_actions` values to `out_scores`. An action is
/// admissible iff its score is >= 0.
///
/// With `decompose` set, oversized neighborhoods are split to the edge
/// caps and composed by elementwise min; `seed` fixes the split. Both cap
/// arguments must then be at least 1 (2 and 9 mirror training). Vector
/// environments and within-caps graphs score identically either way.
///
/// # Safety
/// Handles must be live; `actions` must hold `n_actions * action_dim`
/// values; `out_scores` must have room for `n_actions` values.
#[no_mangle]
pub unsafe extern "C" fn cam_score_actions(
    model: *const CamModel,
    world: *const CamWorld,
    agent: u32,
    actions: *const f64,
    n_actions: u32,
    decompose: bool,
    max_agent_edges: u32,
    max_obstacle_edges: u32,
    seed: u64,
    out_scores: *mut f64,
) -> CamStatus {
    guarded(|| {
        let Some(m) = model.as_ref() else {
            return null_arg("model");
        };
        let Some(w) = world.as_ref() else {
            return null_arg("world");
        };
        if out_scores.is_null() {
            return null_arg("out_scores");
        }
        if m.0.env != w.0.env {
            set_error(&format!(
                "model for {} scored against a {} world",
                m.0.env.name(),
                w.0.env.name()
            ));
            return CamStatus::ContractError;
        }
        if n_actions == 0 {
            return config_err("n_actions must be positive");
        }
        let agent = agent as usize;
        if agent >= w.0.agent_count() {
            set_error(&format!(
                "agent {agent} out of range ({} agents)",
                w.0.agent_count()
            ));
            return CamStatus::ContractError;
        }
        let candidates = match rows(actions, n_actions as usize, m.0.env.action_dim(), "actions") {
            Ok(a) => a,
            Err(s) => return s,
        };

        let result = if m.0.env == EnvKind::Integrator2D {
            let state = CamState::Vector(w.0.agents[agent].clone());
            cam_score_batch(&m.0, &state, &candidates)
        } else {
            match ego_graph(&w.0, agent) {
                Ok(g) => {
                    if decompose {
                        if max_agent_edges == 0 || max_obstacle_edges == 0 {
                            return config_err("decomposition caps must be at least 1");
                        }
                        let caps = SubgraphCaps {
                            max_agent_edges: max_agent_edges as usize,
                            max_obstacle_edges: max_obstacle_edges as usize,
                        };
                        let mut rng = rng_for(seed, "decompose", &[]);
                        score_with_decomposition(&m.0, &g, &candidates, &caps, &mut rng)
                    } else {
                        cam_score_batch(&m.0, &CamState::Graph(g), &candidates)
                    }
                }
                Err(e) => return fail(&e),
            }
        };
        match result {
            Ok(scores) => {
                std::slice::from_raw_parts_mut(out_scores, scores.len())
                    .copy_from_slice(&scores);
                CamStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Pick the action to execute from scored candidates: the
/// highest-preference admissible one, else the highest-scoring one plus a
/// uniform perturbation of magnitude `noise_mag` per dimension (seeded by
/// `seed`; pass 0.0 for greedy inference). `preferences` may be null,
/// which makes every admissible candidate tie and the lowest index win.
/// Writes `action_dim` values to `out_action`.
///
/// # Safety
/// `actions` must hold `n_actions * action_dim` values, `scores` (and
/// `preferences` when non-null) `n_actions` values; `out_action` must
/// have room for `action_dim` values.
#[no_mangle]
pub unsafe extern "C" fn cam_select_action(
    actions: *const f64,
    n_actions: u32,
    action_dim: u32,
    scores: *const f64,
    preferences: *const f64,
    noise_mag: f64,
    seed: u64,
    out_action: *mut f64,
) -> CamStatus {
    guarded(|| {
        if n_actions == 0 || action_dim == 0 {
            return config_err("n_actions and action_dim must be positive");
        }
        if out_action.is_null() {
            return null_arg("out_action");
        }
        let n = n_actions as usize;
        let candidates = match rows(actions, n, action_dim as usize, "actions") {
            Ok(a) => a,
            Err(s) => return s,
        };
        if scores.is_null() {
            return null_arg("scores");
        }
        let scores = std::slice::from_raw_parts(scores, n).to_vec();
        let prefs = if preferences.is_null() {
            vec![0.0; n]
        } else {
            std::slice::from_raw_parts(preferences, n).to_vec()
        };
        let scored = match ScoredActions::new(candidates, scores, prefs) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let mut rng = rng_for(seed, "select", &[]);
        let chosen = select_action(&scored, noise_mag, &mut rng);
        std::slice::from_raw_parts_mut(out_action, chosen.len()).copy_from_slice(&chosen);
        CamStatus::Ok
    })
}

#[cfg(test)]
mod tests;
