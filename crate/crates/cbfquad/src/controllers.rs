//! Nominal input generators for the two bundled scenarios: a cascaded PD
//! tracking controller and a constant aggressive-maneuver command.

use nalgebra::{Matrix3, Vector3};

use crate::dynamics::{ControlInput, QuadParams, QuadState};

/// Reference point of a smooth trajectory at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRef {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub yaw: f64,
}

/// Outward spiral that climbs through the top of the tracking scenario's
/// safe box:
///
/// ```text
///     x = 0.025 t cos(0.2 t),  y = 0.025 t sin(0.2 t),  z = 3 + 0.06 t
/// ```
///
/// with analytic first and second derivatives and zero reference yaw.
pub fn spiral_reference(t: f64) -> TrajectoryRef {
    const A: f64 = 0.025;
    const B: f64 = 0.2;
    let (sin, cos) = (B * t).sin_cos();
    TrajectoryRef {
        position: Vector3::new(A * t * cos, A * t * sin, 3.0 + 0.06 * t),
        velocity: Vector3::new(
            A * cos - A * B * t * sin,
            A * sin + A * B * t * cos,
            0.06,
        ),
        acceleration: Vector3::new(
            -2.0 * A * B * sin - A * B * B * t * cos,
            2.0 * A * B * cos - A * B * B * t * sin,
            0.0,
        ),
        yaw: 0.0,
    }
}

/// Gains of the cascaded PD controller.
#[derive(Debug, Clone, PartialEq)]
pub struct PdGains {
    /// Position gain, 1/s².
    pub kp: Vector3<f64>,
    /// Velocity gain, 1/s.
    pub kd: Vector3<f64>,
    /// Attitude gain.
    pub k_att: Vector3<f64>,
    /// Body-rate gain.
    pub k_rate: Vector3<f64>,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: Vector3::new(2.0, 2.0, 4.0),
            kd: Vector3::new(3.0, 3.0, 4.0),
            k_att: Vector3::new(80.0, 80.0, 30.0),
            k_rate: Vector3::new(15.0, 15.0, 10.0),
        }
    }
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Desired attitude whose body z axis carries the commanded specific force
/// and whose body x axis aligns with the reference yaw as far as possible.
fn attitude_from_thrust_yaw(a_cmd: &Vector3<f64>, yaw: f64) -> Matrix3<f64> {
    let b3 = a_cmd.normalize();
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut b2 = b3.cross(&heading);
    if b2.norm() < 1e-6 {
        // Thrust axis parallel to the heading; any perpendicular works.
        b2 = b3.cross(&Vector3::y());
    }
    let b2 = b2.normalize();
    let b1 = b2.cross(&b3);
    Matrix3::from_columns(&[b1, b2, b3])
}

/// Cascaded PD tracking controller: an outer position loop commands an
/// acceleration, which sets the thrust along the current body z axis and a
/// desired attitude; an inner loop tracks that attitude with a
/// rotation-matrix error, valid at large angles. Holds the previous
/// attitude target through the degenerate zero-thrust direction.
#[derive(Debug, Clone)]
pub struct PdTrackingController {
    pub gains: PdGains,
    last_attitude_target: Option<Matrix3<f64>>,
}

impl PdTrackingController {
    pub fn new(gains: PdGains) -> Self {
        Self { gains, last_attitude_target: None }
    }

    pub fn control(
        &mut self,
        s: &QuadState,
        reference: &TrajectoryRef,
        quad: &QuadParams,
    ) -> ControlInput {
        let g = &self.gains;
        let a_des = reference.acceleration
            + g.kp.component_mul(&(reference.position - s.position))
            + g.kd.component_mul(&(reference.velocity - s.velocity));
        let a_cmd = a_des + Vector3::new(0.0, 0.0, quad.gravity);

        let rot = s.rotation();
        let z_b = s.thrust_axis();
        let thrust = (quad.mass * a_cmd.dot(&z_b)).clamp(quad.u_min[0], quad.u_max[0]);

        let target = if a_cmd.norm() < 1e-6 {
            self.last_attitude_target.unwrap_or(rot)
        } else {
            attitude_from_thrust_yaw(&a_cmd, reference.yaw)
        };
        self.last_attitude_target = Some(target);

        // e_R points from the current attitude toward the target.
        let e_att = vee(&(rot.transpose() * target - target.transpose() * rot)) * 0.5;
        let e_rate = -s.body_rate;
        let j = quad.inertia();
        let torque = j * (g.k_att.component_mul(&e_att) + g.k_rate.component_mul(&e_rate))
            + s.body_rate.cross(&(j * s.body_rate));

        ControlInput::new(thrust, torque).clamped(quad)
    }
}

/// Nominal command source for a scenario run.
#[derive(Debug, Clone)]
pub enum NominalController {
    /// PD tracking of the spiral reference.
    SpiralTracking(PdTrackingController),
    /// The same input at every query time.
    Constant(ControlInput),
}

impl NominalController {
    pub fn command(&mut self, t: f64, s: &QuadState, quad: &QuadParams) -> ControlInput {
        match self {
            Self::SpiralTracking(pd) => pd.control(s, &spiral_reference(t), quad),
            Self::Constant(u0) => *u0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::QuadParams;
    use crate::sim::rk4_step;
    use approx::assert_relative_eq;

    #[test]
    fn spiral_starts_at_the_tracking_origin() {
        let r = spiral_reference(0.0);
        assert_relative_eq!(r.position, Vector3::new(0.0, 0.0, 3.0), epsilon = 1e-12);
        assert_eq!(r.yaw, 0.0);
    }

    #[test]
    fn spiral_crosses_the_box_top_at_fifty_seconds() {
        // z = 3 + 0.06 t hits 6 exactly at t = 50.
        assert_relative_eq!(spiral_reference(50.0).position.z, 6.0, epsilon = 1e-12);
        assert_relative_eq!((6.0 - 3.0) / 0.06, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn spiral_lateral_extent_is_bounded() {
        for k in 0..=700 {
            let t = k as f64 * 0.1;
            let p = spiral_reference(t).position;
            assert!(p.x.abs() <= 0.025 * t + 1e-12);
            assert!(p.x.abs() <= 1.75 + 1e-9);
            assert!(p.y.abs() <= 1.75 + 1e-9);
        }
    }

    #[test]
    fn spiral_derivatives_match_finite_differences() {
        let h = 1e-5;
        for &t in &[0.3, 7.7, 23.1, 49.9, 66.0] {
            let plus = spiral_reference(t + h);
            let minus = spiral_reference(t - h);
            let mid = spiral_reference(t);
            let vel_fd = (plus.position - minus.position) / (2.0 * h);
            let acc_fd = (plus.velocity - minus.velocity) / (2.0 * h);
            assert_relative_eq!(vel_fd, mid.velocity, epsilon = 1e-6);
            assert_relative_eq!(acc_fd, mid.acceleration, epsilon = 1e-6);
        }
    }

    #[test]
    fn equilibrium_on_reference_commands_hover() {
        let quad = QuadParams::if750a();
        let mut pd = PdTrackingController::new(PdGains::default());
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 3.0));
        let reference = TrajectoryRef {
            position: s.position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            yaw: 0.0,
        };
        let u = pd.control(&s, &reference, &quad);
        assert_relative_eq!(u.thrust, 14.715, epsilon = 1e-9);
        assert_relative_eq!(u.torque, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn vertical_error_raises_thrust_without_torque() {
        let quad = QuadParams::if750a();
        let mut pd = PdTrackingController::new(PdGains::default());
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 3.0));
        let reference = TrajectoryRef {
            position: Vector3::new(0.0, 0.0, 3.5),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            yaw: 0.0,
        };
        let u = pd.control(&s, &reference, &quad);
        assert!(u.thrust > quad.hover_thrust());
        assert_relative_eq!(u.torque, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn step_offset_decays_within_ten_seconds() {
        let quad = QuadParams::if750a();
        let mut pd = PdTrackingController::new(PdGains::default());
        let target = TrajectoryRef {
            position: Vector3::new(0.0, 0.0, 3.0),
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
            yaw: 0.0,
        };
        let mut s = QuadState::rest_at(Vector3::new(0.5, 0.0, 3.0));
        let dt = 1e-3;
        for step in 0..10_000 {
            if step % 10 == 0 {
                // Controller at 100 Hz, physics at 1 kHz.
            }
            let u = pd.control(&s, &target, &quad);
            s = rk4_step(&s, &u, &quad, dt);
        }
        let err = (s.position - target.position).norm();
        assert!(err < 0.05, "position error {err} after 10 s");
    }

    #[test]
    fn constant_controller_is_bitwise_constant() {
        let quad = QuadParams::if750a();
        let u0 = ControlInput::new(19.670, Vector3::new(0.0, -5.130, 0.0));
        let mut ctrl = NominalController::Constant(u0);
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 9.0));
        let a = ctrl.command(0.0, &s, &quad);
        let b = ctrl.command(7.3, &s, &quad);
        assert_eq!(a, u0);
        assert_eq!(a, b);
        let zero = NominalController::Constant(ControlInput::zero())
            .command(1.0, &s, &quad);
        assert_eq!(zero, ControlInput::zero());
    }
}
