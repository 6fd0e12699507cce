//! Discrete LQR gain for the drone's goal-reaching preference.
//!
//! The gain comes from fixed-point iteration of the discrete Riccati
//! recurrence on the drone model linearized at hover. The resulting policy
//! is feedback plus a gravity feedforward, clamped to the action box; the
//! preference function scores an action by its squared deviation from that
//! policy. None of this touches the learned model.

use nalgebra::DMatrix;

use crate::error::{CamError, Result};
use crate::worlds::{EnvKind, GRAVITY};

/// Solve for K in u = -K x by iterating
/// P <- Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA
/// until successive P agree to 1e-9 in max-norm (at most 10,000 rounds),
/// then K = (R + BᵀPB)⁻¹ BᵀPA.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert!(a.is_square() && q.is_square() && r.is_square());
    assert_eq!(b.nrows(), n);
    assert_eq!(q.nrows(), n);
    assert_eq!(r.nrows(), b.ncols());

    let mut p = q.clone();
    for _ in 0..10_000 {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let inv = gram.clone().try_inverse().ok_or_else(|| {
            CamError::Numeric("Riccati update: R + BᵀPB is singular".into())
        })?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &inv * &btp * a;
        let diff = (&next - &p).abs().max();
        p = next;
        if diff < 1e-9 {
            let btp = b.transpose() * &p;
            let gram = r + &btp * b;
            let inv = gram.try_inverse().ok_or_else(|| {
                CamError::Numeric("Riccati gain: R + BᵀPB is singular".into())
            })?;
            return Ok(inv * btp * a);
        }
    }
    Err(CamError::Numeric(
        "Riccati iteration did not converge within 10,000 rounds".into(),
    ))
}

/// Euler discretization (h = 0.1, one full drone tick) of the drone field
/// linearized at hover: zero state, thrust = g. State order
/// [p_x, p_y, p_z, v_x, v_y, v_z, α, β, γ], action [q, α̇, β̇, γ̇].
pub fn drone_lqr_matrices() -> (DMatrix<f64>, DMatrix<f64>) {
    const H: f64 = 0.1;
    let mut a = DMatrix::<f64>::identity(9, 9);
    a[(0, 3)] = H;
    a[(1, 4)] = H;
    a[(2, 5)] = H;
    // dv_x/dβ = −cos(β) q = −g,  dv_y/dα = cos(β) cos(α) q = g at hover.
    a[(3, 7)] = -GRAVITY * H;
    a[(4, 6)] = GRAVITY * H;
    let mut b = DMatrix::<f64>::zeros(9, 4);
    // dv_z/dq = cos(β) cos(α) = 1 at hover; angle rates map directly.
    b[(5, 0)] = H;
    b[(6, 1)] = H;
    b[(7, 2)] = H;
    b[(8, 3)] = H;
    (a, b)
}

/// Cached gain for the drone preference policy, with Q = I₉ and R = I₄.
pub fn drone_gain() -> Result<DMatrix<f64>> {
    let (a, b) = drone_lqr_matrices();
    lqr_gain(&a, &b, &DMatrix::identity(9, 9), &DMatrix::identity(4, 4))
}

/// Feedback-plus-feedforward policy toward a hover at the goal position,
/// clamped to the printed action box.
pub fn lqr_policy(state: &[f64], goal: &[f64], gain: &DMatrix<f64>) -> Vec<f64> {
    debug_assert_eq!(state.len(), 9);
    debug_assert_eq!(goal.len(), 3);
    let mut err = DMatrix::<f64>::zeros(9, 1);
    for i in 0..9 {
        let target = if i < 3 { goal[i] } else { 0.0 };
        err[(i, 0)] = state[i] - target;
    }
    let u = -(gain * err);
    let mut action = vec![u[(0, 0)] + GRAVITY, u[(1, 0)], u[(2, 0)], u[(3, 0)]];
    EnvKind::Drone.action_box().clamp(&mut action);
    action
}

/// −‖π(x, goal) − a‖², the drone's preference score.
pub fn preference_lqr_drone(
    state: &[f64],
    goal: &[f64],
    action: &[f64],
    gain: &DMatrix<f64>,
) -> f64 {
    let pi = lqr_policy(state, goal, gain);
    -pi.iter()
        .zip(action)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
}
