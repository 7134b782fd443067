//! Rigid-body quadrotor model.
//!
//! State lives in an inertial frame with z up; the body frame has z along
//! the collective thrust axis. Attitude is a unit quaternion mapping body
//! to inertial coordinates, body rates (p, q, r) are expressed in the body
//! frame. The equations of motion are
//!
//! ```text
//!     v̇  = -g z_I + (f_T / m) R z_B
//!     Ṙ  = R [ω_B]×
//!     J ω̇_B = τ - ω_B × J ω_B + τ_g
//!     ṙ  = v
//! ```
//!
//! with the gyroscopic torque τ_g reserved (zero, no rotor-inertia model).
//! Rotor thrusts are assumed instantaneously achieved, so a held input has
//! ḟ_T = 0 and the position derivatives up to snap reduce to
//!
//! ```text
//!     m r̈  = -m g z_I + f_T z_B
//!     m r⃛  = f_T (ω_I × z_B)
//!     m r⃜  = f_T (ω̇_I × z_B + ω_I × (ω_I × z_B))
//! ```
//!
//! where z_B = R e_z and ω_I = R ω_B. These flat derivatives are what the
//! barrier machinery in [`crate::cbf`] constrains.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Quaternion norm tolerance accepted by [`rotation_matrix`].
pub const QUAT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("quaternion norm {0} is not unit within {QUAT_NORM_TOL}")]
    NonUnitQuaternion(f64),
    #[error("state or input contains non-finite values")]
    NonFinite,
    #[error("invalid quadrotor parameters: {0}")]
    InvalidParams(String),
    #[error("rotor allocation infeasible: squared speed {value:.6e} at rotor {rotor}")]
    InfeasibleAllocation { rotor: usize, value: f64 },
}

/// Physical constants of the vehicle, plus the input box enforced by the
/// safety filter.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadParams {
    /// Mass, kg.
    pub mass: f64,
    /// Diagonal of the inertia matrix (J_xx, J_yy, J_zz), kg·m².
    pub inertia_diag: Vector3<f64>,
    /// Rotor arm length, m.
    pub arm_length: f64,
    /// Thrust coefficient k_F, N·s².
    pub thrust_coeff: f64,
    /// Rotor drag moment coefficient k_M, N·m·s².
    pub moment_coeff: f64,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
    /// Input lower bound (f_T, τ_x, τ_y, τ_z).
    pub u_min: Vector4<f64>,
    /// Input upper bound (f_T, τ_x, τ_y, τ_z).
    pub u_max: Vector4<f64>,
    /// Reserved: there is no rotor-inertia model, so the gyroscopic torque
    /// is zero regardless of this flag.
    pub gyro_torque_enabled: bool,
}

impl QuadParams {
    /// Constants of the IF750A airframe used by both bundled scenarios.
    pub fn if750a() -> Self {
        Self {
            mass: 1.5,
            inertia_diag: Vector3::new(0.039, 0.051, 0.102),
            arm_length: 0.375,
            thrust_coeff: 1.2e-5,
            moment_coeff: 1.9e-7,
            gravity: STANDARD_GRAVITY,
            u_min: Vector4::new(0.0, -5.13, -5.13, -0.024),
            u_max: Vector4::new(39.0, 5.13, 5.13, 0.024),
            gyro_torque_enabled: false,
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: &str| Err(DynamicsError::InvalidParams(msg.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if !self.inertia_diag.iter().all(|j| *j > 0.0) {
            return bad("inertia components must be positive");
        }
        if !(self.arm_length > 0.0) {
            return bad("arm length must be positive");
        }
        if !(self.thrust_coeff > 0.0) || !(self.moment_coeff > 0.0) {
            return bad("mixer coefficients must be positive");
        }
        if !(self.gravity > 0.0) {
            return bad("gravity must be positive");
        }
        if self.u_min.iter().zip(self.u_max.iter()).any(|(lo, hi)| lo > hi) {
            return bad("u_min must not exceed u_max");
        }
        if self.u_min[0] < 0.0 {
            return bad("thrust lower bound must be non-negative");
        }
        let finite = self.mass.is_finite()
            && self.inertia_diag.iter().all(|v| v.is_finite())
            && self.u_min.iter().all(|v| v.is_finite())
            && self.u_max.iter().all(|v| v.is_finite());
        if !finite {
            return bad("parameters must be finite");
        }
        Ok(())
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.inertia_diag)
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.inertia_diag.map(|j| 1.0 / j))
    }

    /// Thrust that exactly cancels gravity in level attitude.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Position, velocity, attitude and body rate.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadState {
    /// Inertial position, m.
    pub position: Vector3<f64>,
    /// Inertial velocity, m/s.
    pub velocity: Vector3<f64>,
    /// Body→inertial attitude.
    pub attitude: UnitQuaternion<f64>,
    /// Body-frame angular velocity (p, q, r), rad/s.
    pub body_rate: Vector3<f64>,
}

impl QuadState {
    /// Level attitude at rest at the given position.
    pub fn rest_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            body_rate: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.coords.iter().all(|v| v.is_finite())
            && self.body_rate.iter().all(|v| v.is_finite())
    }

    /// Body→inertial rotation matrix.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.attitude.to_rotation_matrix().into_inner()
    }

    /// Thrust axis z_B expressed in the inertial frame.
    pub fn thrust_axis(&self) -> Vector3<f64> {
        self.attitude * Vector3::z()
    }
}

/// Collective thrust and body torque, the decision variable of the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// Total thrust magnitude, N.
    pub thrust: f64,
    /// Body torque (τ_x, τ_y, τ_z), N·m.
    pub torque: Vector3<f64>,
}

impl ControlInput {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }

    pub fn zero() -> Self {
        Self::new(0.0, Vector3::zeros())
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(u: &Vector4<f64>) -> Self {
        Self::new(u[0], Vector3::new(u[1], u[2], u[3]))
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.torque.iter().all(|v| v.is_finite())
    }

    /// Element-wise clamp to the input box.
    pub fn clamped(&self, params: &QuadParams) -> Self {
        let u = self.as_vector();
        let mut c = Vector4::zeros();
        for i in 0..4 {
            c[i] = u[i].clamp(params.u_min[i], params.u_max[i]);
        }
        Self::from_vector(&c)
    }
}

/// Rotor speeds (ω̄₁..ω̄₄), rad/s, all non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorSpeeds(pub [f64; 4]);

/// Time derivative of [`QuadState`]. The attitude derivative is a raw
/// quaternion rate; integrators renormalize after stepping.
#[derive(Debug, Clone)]
pub struct StateDerivative {
    pub position_dot: Vector3<f64>,
    pub velocity_dot: Vector3<f64>,
    pub attitude_dot: Quaternion<f64>,
    pub body_rate_dot: Vector3<f64>,
}

/// Position derivatives that a held input determines directly.
#[derive(Debug, Clone)]
pub struct FlatDerivatives {
    /// r̈, m/s².
    pub acceleration: Vector3<f64>,
    /// r⃛, m/s³.
    pub jerk: Vector3<f64>,
    /// r⃜, m/s⁴.
    pub snap: Vector3<f64>,
}

/// Rotation matrix of a quaternion that is unit within [`QUAT_NORM_TOL`].
pub fn rotation_matrix(q: &Quaternion<f64>) -> Result<Matrix3<f64>, DynamicsError> {
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > QUAT_NORM_TOL {
        return Err(DynamicsError::NonUnitQuaternion(n));
    }
    Ok(UnitQuaternion::from_quaternion(*q)
        .to_rotation_matrix()
        .into_inner())
}

/// Z-Y-X Euler angles with a gimbal-lock flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerZyx {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Set when |pitch| is at 90° and yaw is conventionally zero.
    pub gimbal_lock: bool,
}

/// Extract Z-Y-X Euler angles (roll φ, pitch θ, yaw ψ) such that
/// R = Rz(ψ) Ry(θ) Rx(φ). At |θ| = π/2 roll and yaw share an axis; yaw is
/// set to zero by convention and the flag is raised.
pub fn euler_zyx(q: &UnitQuaternion<f64>) -> EulerZyx {
    let r = q.to_rotation_matrix();
    let m = r.matrix();
    let s = -m[(2, 0)]; // sin(pitch)
    if s.abs() > 1.0 - 1e-10 {
        let pitch = std::f64::consts::FRAC_PI_2.copysign(s);
        let roll = if s > 0.0 {
            m[(0, 1)].atan2(m[(0, 2)])
        } else {
            (-m[(0, 1)]).atan2(-m[(0, 2)])
        };
        EulerZyx { roll, pitch, yaw: 0.0, gimbal_lock: true }
    } else {
        EulerZyx {
            roll: m[(2, 1)].atan2(m[(2, 2)]),
            pitch: s.clamp(-1.0, 1.0).asin(),
            yaw: m[(1, 0)].atan2(m[(0, 0)]),
            gimbal_lock: false,
        }
    }
}

/// Thrust and torque produced by the given rotor speeds (plus-configuration
/// mixer):
///
/// ```text
///     f_T = k_F (ω̄₁² + ω̄₂² + ω̄₃² + ω̄₄²)
///     τ_x = k_F L (ω̄₂² - ω̄₄²)
///     τ_y = k_F L (ω̄₃² - ω̄₁²)
///     τ_z = k_M (ω̄₁² - ω̄₂² + ω̄₃² - ω̄₄²)
/// ```
pub fn mixer_forward(w: &RotorSpeeds, params: &QuadParams) -> ControlInput {
    let s: Vec<f64> = w.0.iter().map(|v| v * v).collect();
    let kf = params.thrust_coeff;
    let kfl = kf * params.arm_length;
    let km = params.moment_coeff;
    ControlInput::new(
        kf * (s[0] + s[1] + s[2] + s[3]),
        Vector3::new(
            kfl * (s[1] - s[3]),
            kfl * (s[2] - s[0]),
            km * (s[0] - s[1] + s[2] - s[3]),
        ),
    )
}

/// Invert the mixer. Fails when the requested wrench needs a negative
/// squared rotor speed; the error carries the first offending rotor.
pub fn mixer_inverse(u: &ControlInput, params: &QuadParams) -> Result<RotorSpeeds, DynamicsError> {
    let kf = params.thrust_coeff;
    let kfl = kf * params.arm_length;
    let km = params.moment_coeff;
    let total = u.thrust / kf; // s1+s2+s3+s4
    let dx = u.torque.x / kfl; // s2−s4
    let dy = u.torque.y / kfl; // s3−s1
    let dz = u.torque.z / km; // s1−s2+s3−s4
    let odd = 0.5 * (total + dz); // s1+s3
    let even = 0.5 * (total - dz); // s2+s4
    let squares = [
        0.5 * (odd - dy),
        0.5 * (even + dx),
        0.5 * (odd + dy),
        0.5 * (even - dx),
    ];
    let mut speeds = [0.0; 4];
    for (i, &s) in squares.iter().enumerate() {
        if s < -1e-12 {
            return Err(DynamicsError::InfeasibleAllocation { rotor: i, value: s });
        }
        speeds[i] = s.max(0.0).sqrt();
    }
    Ok(RotorSpeeds(speeds))
}

/// Body-rate derivative ω̇_B = J⁻¹(τ − ω_B × J ω_B + τ_g).
pub fn body_rate_derivative(s: &QuadState, u: &ControlInput, params: &QuadParams) -> Vector3<f64> {
    // τ_g reserved: no rotor-inertia model, so it contributes nothing.
    let j_omega = params.inertia() * s.body_rate;
    params.inertia_inv() * (u.torque - s.body_rate.cross(&j_omega))
}

/// Full equations of motion at a state and input.
pub fn state_derivative(s: &QuadState, u: &ControlInput, params: &QuadParams) -> StateDerivative {
    let accel = Vector3::new(0.0, 0.0, -params.gravity)
        + s.thrust_axis() * (u.thrust / params.mass);
    // q̇ = ½ q ⊗ (0, ω_B), consistent with Ṙ = R [ω_B]×
    let omega_q = Quaternion::from_parts(0.0, s.body_rate);
    let attitude_dot = s.attitude.into_inner() * omega_q * 0.5;
    StateDerivative {
        position_dot: s.velocity,
        velocity_dot: accel,
        attitude_dot,
        body_rate_dot: body_rate_derivative(s, u, params),
    }
}

/// Acceleration, jerk and snap produced by a held input.
///
/// Uses ω̇_I = R ω̇_B exactly: the candidate extra term R [ω_B]× ω_B is
/// R (ω_B × ω_B) = 0.
pub fn flat_derivatives(s: &QuadState, u: &ControlInput, params: &QuadParams) -> FlatDerivatives {
    let z_b = s.thrust_axis();
    let rot = s.rotation();
    let omega_i = rot * s.body_rate;
    let omega_dot_i = rot * body_rate_derivative(s, u, params);
    let ft_m = u.thrust / params.mass;
    FlatDerivatives {
        acceleration: Vector3::new(0.0, 0.0, -params.gravity) + z_b * ft_m,
        jerk: omega_i.cross(&z_b) * ft_m,
        snap: (omega_dot_i.cross(&z_b) + omega_i.cross(&omega_i.cross(&z_b))) * ft_m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rk4_step;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn unit_params() -> QuadParams {
        QuadParams {
            arm_length: 1.0,
            thrust_coeff: 1.0,
            moment_coeff: 1.0,
            ..QuadParams::if750a()
        }
    }

    #[test]
    fn rotation_of_identity_quaternion_is_identity() {
        let r = rotation_matrix(&Quaternion::new(1.0, 0.0, 0.0, 0.0)).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_yaw_maps_body_x_to_inertial_y() {
        let q = UnitQuaternion::from_euler_angles(0.0, 0.0, FRAC_PI_2);
        let r = rotation_matrix(&q.into_inner()).unwrap();
        let mapped = r * Vector3::x();
        assert_relative_eq!(mapped, Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_rejects_non_unit_quaternion() {
        let q = Quaternion::new(1.1, 0.0, 0.0, 0.0);
        assert!(matches!(
            rotation_matrix(&q),
            Err(DynamicsError::NonUnitQuaternion(_))
        ));
    }

    #[test]
    fn euler_identity_is_zero() {
        let e = euler_zyx(&UnitQuaternion::identity());
        assert_eq!((e.roll, e.pitch, e.yaw), (0.0, 0.0, 0.0));
        assert!(!e.gimbal_lock);
    }

    #[test]
    fn euler_pure_roll_quarter_pi() {
        let q = UnitQuaternion::from_euler_angles(FRAC_PI_4, 0.0, 0.0);
        let e = euler_zyx(&q);
        assert_relative_eq!(e.roll, FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(e.pitch, 0.0, epsilon = 1e-12);
        assert_relative_eq!(e.yaw, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_gimbal_lock_sets_yaw_to_zero_and_flags() {
        let q = UnitQuaternion::from_euler_angles(0.3, FRAC_PI_2, 0.0);
        let e = euler_zyx(&q);
        assert!(e.gimbal_lock);
        assert_eq!(e.yaw, 0.0);
        // Reconstruction must still reproduce the rotation.
        let back = nalgebra::Rotation3::from_euler_angles(e.roll, e.pitch, e.yaw);
        assert_relative_eq!(
            back.into_inner(),
            q.to_rotation_matrix().into_inner(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn mixer_zero_speeds_give_zero_wrench() {
        let u = mixer_forward(&RotorSpeeds([0.0; 4]), &unit_params());
        assert_eq!(u, ControlInput::zero());
    }

    #[test]
    fn mixer_symmetric_hover_cancels_torques() {
        let u = mixer_forward(&RotorSpeeds([1.0; 4]), &unit_params());
        assert_relative_eq!(u.thrust, 4.0);
        assert_relative_eq!(u.torque, Vector3::zeros());
    }

    #[test]
    fn mixer_alternating_speeds_spin_yaw() {
        // Hand expansion of the allocation matrix with k_F = k_M = L = 1:
        // speeds (1, 0, 1, 0) load rotors 1 and 3, whose pitch moments
        // cancel and whose drag torques add.
        let u = mixer_forward(&RotorSpeeds([1.0, 0.0, 1.0, 0.0]), &unit_params());
        assert_relative_eq!(u.thrust, 2.0);
        assert_relative_eq!(u.torque, Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn mixer_inverse_of_zero_is_zero() {
        let w = mixer_inverse(&ControlInput::zero(), &unit_params()).unwrap();
        assert_eq!(w.0, [0.0; 4]);
    }

    #[test]
    fn mixer_inverse_hover_round_trips() {
        let params = QuadParams::if750a();
        let hover = ControlInput::new(params.hover_thrust(), Vector3::zeros());
        assert_relative_eq!(hover.thrust, 14.715, epsilon = 1e-12);
        let w = mixer_inverse(&hover, &params).unwrap();
        for i in 1..4 {
            assert_relative_eq!(w.0[i], w.0[0], epsilon = 1e-12);
        }
        let back = mixer_forward(&w, &params);
        assert_relative_eq!(back.thrust, hover.thrust, epsilon = 1e-9);
        assert_relative_eq!(back.torque, hover.torque, epsilon = 1e-9);
    }

    #[test]
    fn mixer_inverse_rejects_torque_without_thrust() {
        let u = ControlInput::new(0.0, Vector3::new(1.0, 0.0, 0.0));
        match mixer_inverse(&u, &unit_params()) {
            Err(DynamicsError::InfeasibleAllocation { value, .. }) => assert!(value < 0.0),
            other => panic!("expected infeasible allocation, got {other:?}"),
        }
    }

    #[test]
    fn hover_thrust_cancels_gravity() {
        let params = QuadParams::if750a();
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 3.0));
        let u = ControlInput::new(14.715, Vector3::zeros());
        let d = state_derivative(&s, &u, &params);
        assert_relative_eq!(d.velocity_dot, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn free_fall_accelerates_at_gravity() {
        let params = QuadParams::if750a();
        let mut s = QuadState::rest_at(Vector3::zeros());
        s.attitude = UnitQuaternion::from_euler_angles(0.4, -0.2, 1.0);
        let d = state_derivative(&s, &ControlInput::zero(), &params);
        assert_relative_eq!(d.velocity_dot, Vector3::new(0.0, 0.0, -9.81), epsilon = 1e-12);
        assert_relative_eq!(d.body_rate_dot, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn pitch_torque_scales_by_inertia() {
        let params = QuadParams::if750a();
        let s = QuadState::rest_at(Vector3::zeros());
        let u = ControlInput::new(0.0, Vector3::new(0.0, -5.130, 0.0));
        let d = state_derivative(&s, &u, &params);
        assert_relative_eq!(
            d.body_rate_dot,
            Vector3::new(0.0, -5.130 / 0.051, 0.0),
            epsilon = 1e-9
        );
    }

    #[test]
    fn flat_derivatives_vanish_at_hover() {
        let params = QuadParams::if750a();
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 3.0));
        let u = ControlInput::new(params.hover_thrust(), Vector3::zeros());
        let fd = flat_derivatives(&s, &u, &params);
        assert_relative_eq!(fd.acceleration, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(fd.jerk, Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(fd.snap, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn zero_thrust_zeroes_jerk_and_snap() {
        let params = QuadParams::if750a();
        let mut s = QuadState::rest_at(Vector3::zeros());
        s.body_rate = Vector3::new(1.0, -2.0, 0.5);
        let u = ControlInput::new(0.0, Vector3::new(0.3, 0.1, 0.0));
        let fd = flat_derivatives(&s, &u, &params);
        assert_relative_eq!(fd.acceleration, Vector3::new(0.0, 0.0, -9.81), epsilon = 1e-12);
        assert_relative_eq!(fd.jerk, Vector3::zeros(), epsilon = 1e-15);
        assert_relative_eq!(fd.snap, Vector3::zeros(), epsilon = 1e-15);
    }

    /// Finite-difference check of the flatness chain against the simulated
    /// trajectory under a held input. Position derivatives are formed from
    /// the integrated velocity samples (v = ṙ exactly in the model), which
    /// avoids the cancellation that direct fourth differences of position
    /// would suffer at dt = 1e-4.
    fn fd_check(s0: &QuadState, u: &ControlInput, params: &QuadParams, tol: f64) {
        let dt = 1e-4;
        // Velocity samples at t = k·dt, k = -2..=2.
        let mut v = Vec::new();
        for k in -2i32..=2 {
            let mut s = s0.clone();
            for _ in 0..k.abs() {
                s = rk4_step(&s, u, params, dt * f64::from(k.signum()));
            }
            v.push(s.velocity);
        }
        let accel_fd = (v[0] - v[1] * 8.0 + v[3] * 8.0 - v[4]) / (12.0 * dt);
        let jerk_fd = (-v[0] + v[1] * 16.0 - v[2] * 30.0 + v[3] * 16.0 - v[4]) / (12.0 * dt * dt);
        let snap_fd = (-v[0] + v[1] * 2.0 - v[3] * 2.0 + v[4]) / (2.0 * dt * dt * dt);
        let fd = flat_derivatives(s0, u, params);
        for (got, want) in [
            (accel_fd, fd.acceleration),
            (jerk_fd, fd.jerk),
            (snap_fd, fd.snap),
        ] {
            let scale = want.norm().max(1.0);
            assert!(
                (got - want).norm() / scale < tol,
                "finite difference {got:?} vs analytic {want:?}"
            );
        }
    }

    #[test]
    fn flat_derivatives_match_finite_differences() {
        let params = QuadParams::if750a();
        let mut s = QuadState::rest_at(Vector3::new(0.5, -0.2, 3.0));
        s.velocity = Vector3::new(0.4, 0.1, -0.3);
        s.attitude = UnitQuaternion::from_euler_angles(0.3, -0.25, 0.7);
        s.body_rate = Vector3::new(0.8, -1.1, 0.4);
        let u = ControlInput::new(18.0, Vector3::new(0.6, -0.4, 0.01));
        fd_check(&s, &u, &params, 1e-3);
    }

    #[test]
    fn angular_velocity_identity_is_exactly_zero() {
        // R [ω]× ω = R (ω × ω) = 0; the cross product of a vector with
        // itself is exact in floating point.
        let omega = Vector3::new(0.123, -4.56, 7.89);
        let q = UnitQuaternion::from_euler_angles(0.3, 0.8, -1.2);
        let term = q.to_rotation_matrix() * omega.cross(&omega);
        assert!(term.norm() < 1e-12);
    }

    #[test]
    fn translational_energy_conserved_in_free_fall() {
        let params = QuadParams::if750a();
        let mut s = QuadState::rest_at(Vector3::new(0.0, 0.0, 50.0));
        s.velocity = Vector3::new(3.0, -1.0, 2.0);
        s.body_rate = Vector3::new(2.0, 1.0, -0.5);
        let energy = |s: &QuadState| {
            0.5 * params.mass * s.velocity.norm_squared()
                + params.mass * params.gravity * s.position.z
        };
        let e0 = energy(&s);
        let u = ControlInput::zero();
        for _ in 0..1000 {
            s = rk4_step(&s, &u, &params, 1e-3);
        }
        assert!((energy(&s) - e0).abs() / e0.abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(w in -1.0f64..1.0, x in -1.0f64..1.0,
                                   y in -1.0f64..1.0, z in -1.0f64..1.0) {
            prop_assume!(Vector4::new(w, x, y, z).norm() > 1e-3);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
            let r = rotation_matrix(&q.into_inner()).unwrap();
            let gram = r.transpose() * r;
            prop_assert!((gram - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn euler_round_trip_reconstructs_rotation(w in -1.0f64..1.0, x in -1.0f64..1.0,
                                                  y in -1.0f64..1.0, z in -1.0f64..1.0) {
            prop_assume!(Vector4::new(w, x, y, z).norm() > 1e-3);
            let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
            let e = euler_zyx(&q);
            let back = nalgebra::Rotation3::from_euler_angles(e.roll, e.pitch, e.yaw);
            let diff = back.into_inner() - q.to_rotation_matrix().into_inner();
            prop_assert!(diff.abs().max() < 1e-9);
        }

        #[test]
        fn mixer_round_trips_on_nonnegative_speeds(s0 in 0.0f64..800.0, s1 in 0.0f64..800.0,
                                                   s2 in 0.0f64..800.0, s3 in 0.0f64..800.0) {
            let params = QuadParams::if750a();
            let w = RotorSpeeds([s0, s1, s2, s3]);
            let u = mixer_forward(&w, &params);
            let back = mixer_inverse(&u, &params).unwrap();
            for i in 0..4 {
                prop_assert!((back.0[i] - w.0[i]).abs() < 1e-9 * (1.0 + w.0[i]));
            }
        }
    }
}
