//! Every test drives the exported functions exactly as a C caller would:
//! raw pointers, flat arrays, status codes.

use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use cam_core::cam::{cam_score_batch, score_with_decomposition, CamState};
use cam_core::graph::{ego_graph, SubgraphCaps};
use cam_core::rng::rng_for;
use cam_core::worlds::{EnvKind, WorldState};

use super::*;

fn checkpoint_file(dir: &Path, env: EnvKind) -> CString {
    let model =
        cam_core::cam::CamModel::init(env, 8, 2, &mut rng_for(7, "model", &[])).unwrap();
    let path = dir.join("m.ckpt.json");
    cam_core::checkpoint::save_model(&model, "abi-test", &path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn load(path: &CStr) -> *mut CamModel {
    let mut handle: *mut CamModel = ptr::null_mut();
    let status = unsafe { cam_model_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, CamStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(cam_last_error()) }.to_str().unwrap().to_owned()
}

/// Seven car agents packed on a ring plus four obstacles: six agent edges
/// overflow the default two-edge cap, so decomposition genuinely splits.
fn packed_car_world() -> WorldState {
    let mut agents = vec![vec![0.0, 0.0, 0.0]];
    for i in 1..7 {
        let th = i as f64;
        agents.push(vec![0.8 * th.cos(), 0.8 * th.sin(), th]);
    }
    WorldState {
        env: EnvKind::Car,
        goals: vec![vec![2.0, 2.0]; agents.len()],
        reached: vec![false; agents.len()],
        agents,
        obstacles: (0..4).map(|i| [0.4 + 0.1 * i as f64, -0.4]).collect(),
        danger_rects: Vec::new(),
        map_side: 6.0,
        t: 0,
        goal_distance: EnvKind::Car.goal_distance(),
        chase_targets: None,
    }
}

fn world_handle(w: &WorldState) -> *mut CamWorld {
    let env = CString::new(w.env.name()).unwrap();
    let states: Vec<f64> = w.agents.iter().flatten().copied().collect();
    let goals: Vec<f64> = w.goals.iter().flatten().copied().collect();
    let obstacles: Vec<f64> = w.obstacles.iter().flatten().copied().collect();
    let mut handle: *mut CamWorld = ptr::null_mut();
    let status = unsafe {
        cam_world_new(
            env.as_ptr(),
            w.map_side,
            states.as_ptr(),
            w.agents.len() as u32,
            goals.as_ptr(),
            obstacles.as_ptr(),
            w.obstacles.len() as u32,
            &mut handle,
        )
    };
    assert_eq!(status, CamStatus::Ok, "{}", last_error());
    handle
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(cam_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_handles_degrade_without_crashing() {
    unsafe {
        assert!(cam_model_env(ptr::null()).is_null());
        assert_eq!(cam_model_action_dim(ptr::null()), 0);
        assert_eq!(cam_model_state_dim(ptr::null()), 0);
        assert_eq!(cam_world_neighbor_count(ptr::null(), 0), u32::MAX);
        cam_model_free(ptr::null_mut());
        cam_world_free(ptr::null_mut());
        let status = cam_model_load(ptr::null(), &mut ptr::null_mut());
        assert_eq!(status, CamStatus::NullPointer);
        assert!(last_error().contains("null"));
    }
}

#[test]
fn missing_checkpoint_reports_io_failure() {
    let path = CString::new("/nonexistent/m.ckpt.json").unwrap();
    let mut handle: *mut CamModel = ptr::null_mut();
    let status = unsafe { cam_model_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, CamStatus::IoError);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn model_metadata_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint_file(dir.path(), EnvKind::Car);
    let model = load(&path);
    unsafe {
        let env = CStr::from_ptr(cam_model_env(model)).to_str().unwrap();
        assert_eq!(env, "car");
        assert_eq!(cam_model_action_dim(model), 1);
        assert_eq!(cam_model_state_dim(model), 3);
        cam_model_free(model);
    }
}

#[test]
fn abi_scores_match_the_library_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint_file(dir.path(), EnvKind::Car);
    let model = load(&path);
    let reference =
        cam_core::cam::CamModel::init(EnvKind::Car, 8, 2, &mut rng_for(7, "model", &[]))
            .unwrap();
    let world = packed_car_world();
    let handle = world_handle(&world);

    let actions: Vec<f64> = (0..5).map(|i| -2.0 + i as f64).collect();
    let mut direct = vec![0.0; 5];
    let mut composed = vec![0.0; 5];
    unsafe {
        assert_eq!(cam_world_neighbor_count(handle, 0), 6);
        let status = cam_score_actions(
            model, handle, 0, actions.as_ptr(), 5, false, 0, 0, 0, direct.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok, "{}", last_error());
        let status = cam_score_actions(
            model, handle, 0, actions.as_ptr(), 5, true, 2, 9, 11, composed.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok, "{}", last_error());
        cam_world_free(handle);
        cam_model_free(model);
    }

    let candidates: Vec<Vec<f64>> = actions.iter().map(|&a| vec![a]).collect();
    let graph = ego_graph(&world, 0).unwrap();
    let want_direct =
        cam_score_batch(&reference, &CamState::Graph(graph.clone()), &candidates).unwrap();
    let want_composed = score_with_decomposition(
        &reference,
        &graph,
        &candidates,
        &SubgraphCaps::default(),
        &mut rng_for(11, "decompose", &[]),
    )
    .unwrap();
    assert_eq!(direct, want_direct);
    assert_eq!(composed, want_composed);
    // Six agent edges force a real split, so min-composition must bind.
    for (c, d) in composed.iter().zip(&direct) {
        assert!(c.is_finite() && d.is_finite());
    }
}

#[test]
fn vector_environments_ignore_the_decompose_flag() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint_file(dir.path(), EnvKind::Integrator2D);
    let model = load(&path);
    let world = WorldState {
        env: EnvKind::Integrator2D,
        agents: vec![vec![0.3, -1.2]],
        goals: vec![vec![0.0, 1.8]],
        obstacles: Vec::new(),
        danger_rects: Vec::new(),
        map_side: 4.0,
        t: 0,
        reached: vec![false],
        goal_distance: EnvKind::Integrator2D.goal_distance(),
        chase_targets: None,
    };
    let handle = world_handle(&world);
    let actions = [0.1, 0.2, -0.5, 0.9];
    let mut plain = [0.0; 2];
    let mut decomposed = [0.0; 2];
    unsafe {
        let status = cam_score_actions(
            model, handle, 0, actions.as_ptr(), 2, false, 0, 0, 0, plain.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok, "{}", last_error());
        let status = cam_score_actions(
            model, handle, 0, actions.as_ptr(), 2, true, 2, 9, 5, decomposed.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok, "{}", last_error());
        cam_world_free(handle);
        cam_model_free(model);
    }
    assert_eq!(plain, decomposed);
}

#[test]
fn mismatches_surface_as_contract_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint_file(dir.path(), EnvKind::Car);
    let model = load(&path);
    let car_world = world_handle(&packed_car_world());
    let integrator_world = world_handle(&WorldState {
        env: EnvKind::Integrator2D,
        agents: vec![vec![0.0, 0.0]],
        goals: vec![vec![0.0, 0.0]],
        obstacles: Vec::new(),
        danger_rects: Vec::new(),
        map_side: 4.0,
        t: 0,
        reached: vec![false],
        goal_distance: EnvKind::Integrator2D.goal_distance(),
        chase_targets: None,
    });
    let actions = [0.0];
    let mut out = [0.0];
    unsafe {
        let status = cam_score_actions(
            model, integrator_world, 0, actions.as_ptr(), 1, false, 0, 0, 0, out.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::ContractError);
        assert!(last_error().contains("car"), "{}", last_error());

        let status = cam_score_actions(
            model, car_world, 99, actions.as_ptr(), 1, false, 0, 0, 0, out.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::ContractError);
        assert!(last_error().contains("99"), "{}", last_error());

        let status = cam_score_actions(
            model, car_world, 0, actions.as_ptr(), 1, true, 0, 9, 0, out.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::ConfigError, "{}", last_error());

        cam_world_free(car_world);
        cam_world_free(integrator_world);
        cam_model_free(model);
    }
}

#[test]
fn world_construction_validates_inputs() {
    let env = CString::new("car").unwrap();
    let states = [0.0, 0.0, 0.0];
    let mut handle: *mut CamWorld = ptr::null_mut();
    unsafe {
        let status = cam_world_new(
            env.as_ptr(), 4.0, states.as_ptr(), 0, ptr::null(), ptr::null(), 0, &mut handle,
        );
        assert_eq!(status, CamStatus::ConfigError);

        let status = cam_world_new(
            env.as_ptr(), -1.0, states.as_ptr(), 1, ptr::null(), ptr::null(), 0, &mut handle,
        );
        assert_eq!(status, CamStatus::ConfigError);

        let status = cam_world_new(
            env.as_ptr(), 4.0, ptr::null(), 1, ptr::null(), ptr::null(), 0, &mut handle,
        );
        assert_eq!(status, CamStatus::NullPointer);

        let nan = [f64::NAN, 0.0, 0.0];
        let status = cam_world_new(
            env.as_ptr(), 4.0, nan.as_ptr(), 1, ptr::null(), ptr::null(), 0, &mut handle,
        );
        assert_eq!(status, CamStatus::ConfigError);

        let bogus = CString::new("walker").unwrap();
        let status = cam_world_new(
            bogus.as_ptr(), 4.0, states.as_ptr(), 1, ptr::null(), ptr::null(), 0, &mut handle,
        );
        assert_eq!(status, CamStatus::ConfigError);
        assert!(last_error().contains("walker"), "{}", last_error());

        // Null goals are zero-filled; construction succeeds.
        let status = cam_world_new(
            env.as_ptr(), 4.0, states.as_ptr(), 1, ptr::null(), ptr::null(), 0, &mut handle,
        );
        assert_eq!(status, CamStatus::Ok, "{}", last_error());
        cam_world_free(handle);
    }
}

#[test]
fn selection_prefers_admissible_then_falls_back() {
    let actions = [-1.0, 0.5, 2.0];
    let mut out = [0.0];
    unsafe {
        // Admissible candidates at indices 1 and 2; index 2 has the higher
        // preference and wins, with zero noise applied.
        let scores = [-0.1, 0.3, 0.8];
        let prefs = [9.0, 0.2, 0.7];
        let status = cam_select_action(
            actions.as_ptr(), 3, 1, scores.as_ptr(), prefs.as_ptr(), 0.0, 0, out.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok, "{}", last_error());
        assert_eq!(out, [2.0]);

        // Nothing admissible: greedy fallback takes the top score.
        let scores = [-0.5, -0.1, -0.9];
        let status = cam_select_action(
            actions.as_ptr(), 3, 1, scores.as_ptr(), prefs.as_ptr(), 0.0, 0, out.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok, "{}", last_error());
        assert_eq!(out, [0.5]);

        // Null preferences tie every admissible candidate; lowest index wins.
        let scores = [-0.1, 0.3, 0.8];
        let status = cam_select_action(
            actions.as_ptr(), 3, 1, scores.as_ptr(), ptr::null(), 0.0, 0, out.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok, "{}", last_error());
        assert_eq!(out, [0.5]);

        // Fallback noise is seeded: identical seeds agree, and the pick
        // stays within noise_mag of the best candidate.
        let scores = [-0.5, -0.1, -0.9];
        let mut a = [0.0];
        let mut b = [0.0];
        let status = cam_select_action(
            actions.as_ptr(), 3, 1, scores.as_ptr(), ptr::null(), 0.25, 42, a.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok);
        let status = cam_select_action(
            actions.as_ptr(), 3, 1, scores.as_ptr(), ptr::null(), 0.25, 42, b.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::Ok);
        assert_eq!(a, b);
        assert!((a[0] - 0.5).abs() <= 0.25);

        let status = cam_select_action(
            actions.as_ptr(), 0, 1, scores.as_ptr(), ptr::null(), 0.0, 0, out.as_mut_ptr(),
        );
        assert_eq!(status, CamStatus::ConfigError);
    }
}

#[test]
fn generated_header_freezes_the_surface() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/cam.h"
    ))
    .expect("build.rs writes include/cam.h");
    for name in [
        "CAM_STATUS_OK",
        "CAM_STATUS_NULL_POINTER",
        "cam_version",
        "cam_last_error",
        "cam_model_load",
        "cam_model_free",
        "cam_model_env",
        "cam_model_action_dim",
        "cam_model_state_dim",
        "cam_world_new",
        "cam_world_free",
        "cam_world_neighbor_count",
        "cam_score_actions",
        "cam_select_action",
    ] {
        assert!(header.contains(name), "header lost {name}");
    }
    assert!(header.contains("typedef struct CamModel CamModel"), "model handle not opaque");
    assert!(header.contains("typedef struct CamWorld CamWorld"), "world handle not opaque");
}
