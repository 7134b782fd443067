//! Fixed-step scenario runner: controller → safety filter → zero-order-hold
//! dynamics, with one log record per control tick.
//!
//! The control input is held constant between ticks (which is what makes
//! ḟ_T = 0 in the flatness chain literally true) while the physics runs at
//! a finer RK4 substep.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

use crate::cbf::{check_initial_set, v_chain, CbfParams, InitialSetReport};
use crate::controllers::{NominalController, PdGains, PdTrackingController};
use crate::dynamics::{euler_zyx, state_derivative, ControlInput, QuadParams, QuadState};
use crate::safety_filter::{FilterError, SafetyFilter};

/// Abort when any state component passes this magnitude.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("simulation diverged at t = {t:.3} s")]
    Diverged { t: f64, records: Vec<LogRecord> },
    #[error("initial state is outside the barrier chain sets")]
    InitialSetViolated(InitialSetReport),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Which nominal controller drives the run.
#[derive(Debug, Clone)]
pub enum Scenario {
    Tracking { gains: PdGains },
    ConstantInput { u0: ControlInput },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// RK4 substep, s.
    pub dt_physics: f64,
    /// Zero-order-hold period of the control input, s. Must be an integer
    /// multiple of `dt_physics`.
    pub control_period: f64,
    /// Total simulated time, s.
    pub duration: f64,
    pub initial_state: QuadState,
    pub scenario: Scenario,
    pub cbf: CbfParams,
    pub quad: QuadParams,
    pub filter_enabled: bool,
    /// Diagonal objective weights (w_f, w_τx, w_τy, w_τz) of the filter's
    /// least-change norm. Weighting each input by its actuator range keeps
    /// the filter from trading all of the torque command away before it
    /// touches the (much larger in SI units) thrust command.
    pub filter_weights: Vector4<f64>,
    /// Enforce rotor realizability (no torque without proportional thrust)
    /// as hard rows in the filter's QP.
    pub rotor_limits: bool,
    /// Freeze re-linearization passes per filter call.
    pub freeze_iterations: usize,
    /// Refuse to start outside the barrier chain sets instead of warning.
    pub strict_initial_set: bool,
    /// Seed for randomized harnesses built on top of this config; the run
    /// itself is deterministic.
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt_physics > 0.0) {
            return Err(SimError::InvalidConfig("dt_physics must be positive".into()));
        }
        if self.control_period < self.dt_physics {
            return Err(SimError::InvalidConfig(
                "control_period must be at least dt_physics".into(),
            ));
        }
        let ratio = self.control_period / self.dt_physics;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(SimError::InvalidConfig(
                "control_period must be an integer multiple of dt_physics".into(),
            ));
        }
        if !(self.duration > 0.0) {
            return Err(SimError::InvalidConfig("duration must be positive".into()));
        }
        if !self.initial_state.is_finite() {
            return Err(SimError::InvalidConfig("initial state must be finite".into()));
        }
        if !self.filter_weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return Err(SimError::InvalidConfig(
                "filter weights must be positive and finite".into(),
            ));
        }
        self.quad
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// One control tick: the state at time `t` and the inputs computed there.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Attitude quaternion (w, x, y, z).
    pub quaternion: [f64; 4],
    /// Z-Y-X Euler angles (roll, pitch, yaw), rad.
    pub euler: [f64; 3],
    pub body_rate: Vector3<f64>,
    pub u_nominal: [f64; 4],
    pub u_safe: [f64; 4],
    pub slack_total: f64,
    pub filter_active: bool,
    /// Per-axis minimum of the state-only barrier chain values v_0..v_3 at
    /// the applied input. Not part of the CSV schema.
    pub v_chain_min: [f64; 3],
}

impl LogRecord {
    fn capture(
        t: f64,
        s: &QuadState,
        u_nominal: &ControlInput,
        u_safe: &ControlInput,
        slack_total: f64,
        filter_active: bool,
        v_chain_min: Vector3<f64>,
    ) -> Self {
        let e = euler_zyx(&s.attitude);
        let q = s.attitude.into_inner();
        Self {
            t,
            position: s.position,
            velocity: s.velocity,
            quaternion: [q.w, q.i, q.j, q.k],
            euler: [e.roll, e.pitch, e.yaw],
            body_rate: s.body_rate,
            u_nominal: u_nominal.as_vector().into(),
            u_safe: u_safe.as_vector().into(),
            slack_total,
            filter_active,
            v_chain_min: v_chain_min.into(),
        }
    }
}

/// Classical 4th-order step of the equations of motion with the quaternion
/// renormalized after the step.
pub fn rk4_step(s: &QuadState, u: &ControlInput, quad: &QuadParams, dt: f64) -> QuadState {
    #[derive(Clone)]
    struct Raw {
        r: Vector3<f64>,
        v: Vector3<f64>,
        q: Quaternion<f64>,
        w: Vector3<f64>,
    }
    let advance = |s0: &Raw, k: &crate::dynamics::StateDerivative, h: f64| Raw {
        r: s0.r + k.position_dot * h,
        v: s0.v + k.velocity_dot * h,
        q: s0.q + k.attitude_dot * h,
        w: s0.w + k.body_rate_dot * h,
    };
    let deriv = |raw: &Raw| {
        let state = QuadState {
            position: raw.r,
            velocity: raw.v,
            attitude: UnitQuaternion::from_quaternion(raw.q),
            body_rate: raw.w,
        };
        state_derivative(&state, u, quad)
    };
    let x0 = Raw {
        r: s.position,
        v: s.velocity,
        q: s.attitude.into_inner(),
        w: s.body_rate,
    };
    let k1 = deriv(&x0);
    let k2 = deriv(&advance(&x0, &k1, dt / 2.0));
    let k3 = deriv(&advance(&x0, &k2, dt / 2.0));
    let k4 = deriv(&advance(&x0, &k3, dt));
    let sixth = dt / 6.0;
    let q = x0.q
        + (k1.attitude_dot + k2.attitude_dot * 2.0 + k3.attitude_dot * 2.0 + k4.attitude_dot)
            * sixth;
    QuadState {
        position: x0.r
            + (k1.position_dot + k2.position_dot * 2.0 + k3.position_dot * 2.0 + k4.position_dot)
                * sixth,
        velocity: x0.v
            + (k1.velocity_dot + k2.velocity_dot * 2.0 + k3.velocity_dot * 2.0 + k4.velocity_dot)
                * sixth,
        attitude: UnitQuaternion::from_quaternion(q),
        body_rate: x0.w
            + (k1.body_rate_dot
                + k2.body_rate_dot * 2.0
                + k3.body_rate_dot * 2.0
                + k4.body_rate_dot)
                * sixth,
    }
}

/// Run a scenario config to completion.
pub fn run_scenario(cfg: &SimConfig) -> Result<Vec<LogRecord>, SimError> {
    let mut controller = match &cfg.scenario {
        Scenario::Tracking { gains } => {
            NominalController::SpiralTracking(PdTrackingController::new(gains.clone()))
        }
        Scenario::ConstantInput { u0 } => NominalController::Constant(*u0),
    };
    let quad = cfg.quad.clone();
    run_closed_loop(cfg, &mut |t, s| controller.command(t, s, &quad))
}

/// Closed loop with an arbitrary nominal command source. `run_scenario` is
/// this with the configured controller plugged in; tests drive it with
/// randomized controllers.
pub fn run_closed_loop(
    cfg: &SimConfig,
    nominal: &mut dyn FnMut(f64, &QuadState) -> ControlInput,
) -> Result<Vec<LogRecord>, SimError> {
    cfg.validate()?;
    let n_ticks = (cfg.duration / cfg.control_period).round() as usize;
    let substeps = (cfg.control_period / cfg.dt_physics).round() as usize;
    let mut filter = SafetyFilter::new(cfg.cbf.clone(), cfg.quad.clone());
    filter.weights = cfg.filter_weights;
    filter.rotor_limits = cfg.rotor_limits;
    filter.max_freeze_iters = cfg.freeze_iterations.max(1);

    let mut s = cfg.initial_state.clone();
    let mut records = Vec::with_capacity(n_ticks + 1);
    for k in 0..=n_ticks {
        let t = k as f64 * cfg.control_period;
        let u_nom = nominal(t, &s);
        if k == 0 {
            let report = check_initial_set(&s, &u_nom, &cfg.cbf, &cfg.quad);
            if !report.ok && cfg.strict_initial_set {
                return Err(SimError::InitialSetViolated(report));
            }
        }
        let (u_safe, slack, active, v_min) = if cfg.filter_enabled {
            let (u, diag) = filter.filter(&s, &u_nom)?;
            (u, diag.slack_total, diag.filter_active, diag.v_chain.min_state_only())
        } else {
            let chain = v_chain(&s, &u_nom, &cfg.cbf, &cfg.quad);
            (u_nom, 0.0, false, chain.min_state_only())
        };
        records.push(LogRecord::capture(t, &s, &u_nom, &u_safe, slack, active, v_min));
        if k == n_ticks {
            break;
        }
        for _ in 0..substeps {
            s = rk4_step(&s, &u_safe, &cfg.quad, cfg.dt_physics);
        }
        let worst = s
            .position
            .amax()
            .max(s.velocity.amax())
            .max(s.body_rate.amax());
        if !s.is_finite() || worst > DIVERGENCE_LIMIT {
            return Err(SimError::Diverged { t: t + cfg.control_period, records });
        }
    }
    Ok(records)
}
