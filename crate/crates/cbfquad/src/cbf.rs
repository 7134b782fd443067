//! Pole-placed exponential barrier machinery for an axis-aligned safe box.
//!
//! Position has relative degree four with respect to the thrust/torque
//! input, so each axis gets a chain of auxiliary functions
//!
//! ```text
//!     v_0 = h,    v_{i+1} = v̇_i + p_{i+1} v_i,    p_i > 0
//! ```
//!
//! built on the barrier pair h̄ = r_max − r and h̲ = r − r_min. Keeping
//! v_2, v_3, v_4 non-negative renders every set {v_i ≥ 0} forward invariant
//! (provided the state starts inside all of them), which pins the position
//! to the box. Expanding the recursion turns each v_k into a row of
//! elementary symmetric polynomials of the poles over the derivative stack
//! Λ = [rᵀ ṙᵀ r̈ᵀ r⃛ᵀ r⃜ᵀ]ᵀ, giving the two-sided linear system
//!
//! ```text
//!     Q r_min ⪯ Γ Λ(ξ, u) ⪯ Q r_max
//! ```
//!
//! with Γ ∈ R⁹ˣ¹⁵ and Q ∈ R⁹ˣ³ block-diagonal per axis (the pole matrices
//! are diagonal). The derivative stack is affine in the input except for
//! one f_T·τ product in the snap rows; [`lambda_affine`] freezes the thrust
//! in that product at a reference value so the constraint system handed to
//! the QP stays linear. The freeze is exact whenever the filter leaves the
//! thrust unchanged.

use nalgebra::{SMatrix, SVector, Vector3, Vector4};
use thiserror::Error;

use crate::dynamics::{flat_derivatives, ControlInput, QuadParams, QuadState};

#[derive(Debug, Error)]
pub enum CbfError {
    #[error("invalid barrier parameters: {0}")]
    InvalidParams(String),
    #[error("state or input contains non-finite values")]
    InvalidState,
}

/// Pole gains and box bounds of the barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfParams {
    /// Diagonal entries of the pole matrices P_1..P_4; `pole_gains[i]` holds
    /// (p_{x_{i+1}}, p_{y_{i+1}}, p_{z_{i+1}}).
    pole_gains: [Vector3<f64>; 4],
    /// Lower corner of the safe box, m.
    pub r_min: Vector3<f64>,
    /// Upper corner of the safe box, m.
    pub r_max: Vector3<f64>,
    /// Floor for the frozen thrust in the snap-row torque coupling, N.
    /// Below this the torque columns lose all authority and the QP
    /// degenerates.
    pub thrust_floor: f64,
}

impl CbfParams {
    pub fn new(
        pole_gains: [Vector3<f64>; 4],
        r_min: Vector3<f64>,
        r_max: Vector3<f64>,
    ) -> Result<Self, CbfError> {
        let p = Self { pole_gains, r_min, r_max, thrust_floor: 1e-3 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_thrust_floor(mut self, floor: f64) -> Result<Self, CbfError> {
        self.thrust_floor = floor;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), CbfError> {
        for (i, gains) in self.pole_gains.iter().enumerate() {
            if !gains.iter().all(|p| p.is_finite() && *p > 0.0) {
                return Err(CbfError::InvalidParams(format!(
                    "pole gains must be positive and finite, got P_{} = {:?}",
                    i + 1,
                    gains
                )));
            }
        }
        if self
            .r_min
            .iter()
            .zip(self.r_max.iter())
            .any(|(lo, hi)| !(lo < hi))
        {
            return Err(CbfError::InvalidParams(
                "r_min must be strictly below r_max on every axis".into(),
            ));
        }
        if !(self.thrust_floor > 0.0) {
            return Err(CbfError::InvalidParams("thrust floor must be positive".into()));
        }
        Ok(())
    }

    pub fn pole_gains(&self) -> &[Vector3<f64>; 4] {
        &self.pole_gains
    }

    /// Poles (p_1..p_4) of one axis.
    pub fn axis_gains(&self, axis: usize) -> [f64; 4] {
        [
            self.pole_gains[0][axis],
            self.pole_gains[1][axis],
            self.pole_gains[2][axis],
            self.pole_gains[3][axis],
        ]
    }
}

/// Elementary symmetric polynomial e_k over the given values; e_0 = 1.
///
/// Panics when `k` exceeds the number of values (contract violation).
pub fn elem_sym(values: &[f64], k: usize) -> f64 {
    assert!(
        k <= values.len(),
        "elementary symmetric polynomial order {k} exceeds {} values",
        values.len()
    );
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &p in values {
        for j in (1..=k).rev() {
            e[j] += p * e[j - 1];
        }
    }
    e[k]
}

/// The stacked constraint matrices Γ (9×15) and Q (9×3).
///
/// Rows come in three blocks of three axes: block k ∈ {2, 3, 4} carries the
/// expansion of v_k, with coefficient e_{k−j}(p_1..p_k) on the j-th
/// derivative of the axis and zeros beyond. Q stacks the pole products
/// ∏p_1..p_k, which multiply the box bounds.
pub fn gamma_q_matrices(cbf: &CbfParams) -> (SMatrix<f64, 9, 15>, SMatrix<f64, 9, 3>) {
    let mut gamma = SMatrix::<f64, 9, 15>::zeros();
    let mut q = SMatrix::<f64, 9, 3>::zeros();
    for axis in 0..3 {
        let p = cbf.axis_gains(axis);
        for (block, k) in [2usize, 3, 4].into_iter().enumerate() {
            let row = 3 * block + axis;
            for j in 0..=k {
                gamma[(row, 3 * j + axis)] = elem_sym(&p[..k], k - j);
            }
            q[(row, axis)] = elem_sym(&p[..k], k);
        }
    }
    (gamma, q)
}

/// Affine-in-u decomposition Λ(ξ, u) ≈ Λ₀ + Λ_u u of the derivative stack.
///
/// Position and velocity rows are state-only. Acceleration and jerk rows
/// are linear in f_T. The snap rows split into an f_T-linear drift part and
/// the torque coupling, whose true coefficient f_T/m is frozen at
/// `frozen_thrust`/m to keep the decomposition affine.
pub fn lambda_affine(
    s: &QuadState,
    quad: &QuadParams,
    frozen_thrust: f64,
) -> (SVector<f64, 15>, SMatrix<f64, 15, 4>) {
    let rot = s.rotation();
    let z_b = s.thrust_axis();
    let omega_i = rot * s.body_rate;
    let j_inv = quad.inertia_inv();
    let m = quad.mass;

    let mut l0 = SVector::<f64, 15>::zeros();
    let mut lu = SMatrix::<f64, 15, 4>::zeros();

    l0.fixed_rows_mut::<3>(0).copy_from(&s.position);
    l0.fixed_rows_mut::<3>(3).copy_from(&s.velocity);
    l0.fixed_rows_mut::<3>(6)
        .copy_from(&Vector3::new(0.0, 0.0, -quad.gravity));

    lu.fixed_view_mut::<3, 1>(6, 0).copy_from(&(z_b / m));
    lu.fixed_view_mut::<3, 1>(9, 0)
        .copy_from(&(omega_i.cross(&z_b) / m));

    // Snap drift: torque-free part of ω̇_I crossed into z_B, plus the
    // centripetal term. Both scale linearly with the true f_T.
    let drift_rate = rot * (j_inv * (-s.body_rate.cross(&(quad.inertia() * s.body_rate))));
    let snap_drift = drift_rate.cross(&z_b) + omega_i.cross(&omega_i.cross(&z_b));
    lu.fixed_view_mut::<3, 1>(12, 0).copy_from(&(snap_drift / m));

    // Torque columns of the snap rows, frozen at f̂_T.
    for axis in 0..3 {
        let mut e = Vector3::zeros();
        e[axis] = 1.0;
        let col = (rot * (j_inv * e)).cross(&z_b) * (frozen_thrust / m);
        lu.fixed_view_mut::<3, 1>(12, 1 + axis).copy_from(&col);
    }
    (l0, lu)
}

/// Two-sided affine constraint system ℓ ⪯ A u ⪯ μ plus the input box.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    /// A = Γ Λ_u; rows 0–2 are the v_2 block, 3–5 v_3, 6–8 v_4, axes x, y,
    /// z within each block. The v_2 and v_3 blocks have exactly zero torque
    /// columns: jerk does not depend on τ.
    pub coeff: SMatrix<f64, 9, 4>,
    /// ℓ = Q r_min − Γ Λ₀.
    pub lower: SVector<f64, 9>,
    /// μ = Q r_max − Γ Λ₀.
    pub upper: SVector<f64, 9>,
    pub u_min: Vector4<f64>,
    pub u_max: Vector4<f64>,
    /// Thrust value used in the snap-row torque coupling.
    pub frozen_thrust: f64,
    /// Pole product Q of each row. Dividing a row by this expresses it in
    /// position units with bounds exactly [r_min, r_max]; consumers use it
    /// to weight row violations comparably across chain orders.
    pub pole_products: SVector<f64, 9>,
}

impl ConstraintSet {
    /// Row values A u at an input.
    pub fn row_values(&self, u: &ControlInput) -> SVector<f64, 9> {
        self.coeff * u.as_vector()
    }

    /// True when all nine interval rows hold at `u` within `tol`.
    pub fn satisfied_by(&self, u: &ControlInput, tol: f64) -> bool {
        let v = self.row_values(u);
        (0..9).all(|i| v[i] >= self.lower[i] - tol && v[i] <= self.upper[i] + tol)
    }
}

/// Constraint system with the snap coupling frozen at
/// clamp(u₀.thrust, floor, f_Tmax).
pub fn build_constraints(
    s: &QuadState,
    cbf: &CbfParams,
    quad: &QuadParams,
    u0: &ControlInput,
) -> Result<ConstraintSet, CbfError> {
    if !u0.is_finite() {
        return Err(CbfError::InvalidState);
    }
    build_constraints_frozen(s, cbf, quad, u0.thrust.clamp(cbf.thrust_floor, quad.u_max[0]))
}

/// Constraint system with an explicit freeze point for the snap coupling.
pub fn build_constraints_frozen(
    s: &QuadState,
    cbf: &CbfParams,
    quad: &QuadParams,
    frozen_thrust: f64,
) -> Result<ConstraintSet, CbfError> {
    if !s.is_finite() || !frozen_thrust.is_finite() {
        return Err(CbfError::InvalidState);
    }
    let (l0, lu) = lambda_affine(s, quad, frozen_thrust);
    let (gamma, q) = gamma_q_matrices(cbf);
    let gl0 = gamma * l0;
    let pole_products = SVector::<f64, 9>::from_fn(|row, _| q[(row, row % 3)]);
    Ok(ConstraintSet {
        coeff: gamma * lu,
        lower: q * cbf.r_min - gl0,
        upper: q * cbf.r_max - gl0,
        u_min: quad.u_min,
        u_max: quad.u_max,
        frozen_thrust,
        pole_products,
    })
}

/// Values v_0..v_4 of the barrier chain, per axis and per barrier side.
#[derive(Debug, Clone, PartialEq)]
pub struct VChain {
    /// Chain of h̄ = r_max − r, indexed `[axis][order]`.
    pub upper: [[f64; 5]; 3],
    /// Chain of h̲ = r − r_min.
    pub lower: [[f64; 5]; 3],
}

impl VChain {
    /// Per-axis minimum of the state-only chain values v_0..v_3 over both
    /// barrier sides.
    pub fn min_state_only(&self) -> Vector3<f64> {
        Vector3::from_fn(|axis, _| {
            (0..=3)
                .flat_map(|i| [self.upper[axis][i], self.lower[axis][i]])
                .fold(f64::INFINITY, f64::min)
        })
    }

    /// True when every v_i with i ≤ `max_order` is ≥ −tol on both sides.
    pub fn satisfied_up_to(&self, max_order: usize, tol: f64) -> bool {
        (0..3).all(|axis| {
            (0..=max_order)
                .all(|i| self.upper[axis][i] >= -tol && self.lower[axis][i] >= -tol)
        })
    }
}

/// Evaluate the chain recursion at a state and input.
///
/// Implemented by literally unrolling v_{i+1} = v̇_i + p_{i+1} v_i over the
/// barrier derivative stack: if v_i = Σ c_j h⁽ʲ⁾ then
/// v_{i+1} = Σ (p_{i+1} c_j) h⁽ʲ⁾ + Σ c_j h⁽ʲ⁺¹⁾. This is an independent
/// construction from the Γ/Q assembly in [`gamma_q_matrices`].
pub fn v_chain(s: &QuadState, u: &ControlInput, cbf: &CbfParams, quad: &QuadParams) -> VChain {
    let fd = flat_derivatives(s, u, quad);
    let mut chain = VChain { upper: [[0.0; 5]; 3], lower: [[0.0; 5]; 3] };
    for axis in 0..3 {
        let d = [
            s.position[axis],
            s.velocity[axis],
            fd.acceleration[axis],
            fd.jerk[axis],
            fd.snap[axis],
        ];
        let gains = cbf.axis_gains(axis);
        for (store, h) in [
            (&mut chain.upper[axis], {
                let mut h = [0.0; 5];
                h[0] = cbf.r_max[axis] - d[0];
                for j in 1..5 {
                    h[j] = -d[j];
                }
                h
            }),
            (&mut chain.lower[axis], {
                let mut h = [0.0; 5];
                h[0] = d[0] - cbf.r_min[axis];
                h[1..5].copy_from_slice(&d[1..5]);
                h
            }),
        ] {
            let mut coeffs = vec![1.0];
            store[0] = h[0];
            for (i, &p) in gains.iter().enumerate() {
                let mut next = vec![0.0; coeffs.len() + 1];
                for (j, &c) in coeffs.iter().enumerate() {
                    next[j] += p * c;
                    next[j + 1] += c;
                }
                coeffs = next;
                store[i + 1] = coeffs.iter().zip(h.iter()).map(|(c, hj)| c * hj).sum();
            }
        }
    }
    chain
}

/// One violated membership condition at the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialSetViolation {
    pub axis: usize,
    /// True for the r_max side, false for the r_min side.
    pub upper: bool,
    /// Chain order i of the violated v_i.
    pub order: usize,
    pub value: f64,
}

impl std::fmt::Display for InitialSetViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "v_{}({} bound, axis {}) = {:.6}",
            self.order,
            if self.upper { "upper" } else { "lower" },
            ["x", "y", "z"][self.axis],
            self.value
        )
    }
}

/// Membership report for the sets {v_i ≥ 0}, i = 0..3, at the initial
/// state. The forward-invariance argument needs the state to start inside
/// all of them; the filter only enforces the chain from there on.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSetReport {
    pub chain: VChain,
    pub ok: bool,
}

pub fn check_initial_set(
    s: &QuadState,
    u0: &ControlInput,
    cbf: &CbfParams,
    quad: &QuadParams,
) -> InitialSetReport {
    let chain = v_chain(s, u0, cbf, quad);
    let ok = chain.satisfied_up_to(3, 0.0);
    InitialSetReport { chain, ok }
}

impl InitialSetReport {
    pub fn violations(&self) -> Vec<InitialSetViolation> {
        let mut out = Vec::new();
        for axis in 0..3 {
            for order in 0..=3 {
                for (upper, v) in [
                    (true, self.chain.upper[axis][order]),
                    (false, self.chain.lower[axis][order]),
                ] {
                    if v < 0.0 {
                        out.push(InitialSetViolation { axis, upper, order, value: v });
                    }
                }
            }
        }
        out
    }
}

/// Closed-box membership r_min ⪯ r ⪯ r_max.
pub fn in_safe_region(r: &Vector3<f64>, cbf: &CbfParams) -> bool {
    (0..3).all(|i| r[i] >= cbf.r_min[i] && r[i] <= cbf.r_max[i])
}
