//! The safety filter: project a nominal input onto the barrier constraints.
//!
//! Each call builds the affine constraint system at the current state and
//! solves
//!
//! ```text
//!     u* = argmin (u − u₀)ᵀ W (u − u₀)
//!          s.t.   ℓ ⪯ A u ⪯ μ,   u_min ⪯ u ⪯ u_max
//! ```
//!
//! The snap rows carry a thrust·torque product, linearized by freezing the
//! thrust at clamp(u₀.f_T) — the nominal command, not the previous output.
//! The filter stays stateless, the linearization is exact whenever it
//! leaves the thrust alone, and, crucially, the torque columns keep their
//! authority in the constraint model even while the filter itself cuts
//! thrust (re-freezing at a collapsed thrust would blind every row to the
//! torque and leave a spinning vehicle unregulated). When the rows
//! conflict (the freeze is only an approximation, and actuator limits are
//! physical), they are softened with penalized slacks while the input box
//! stays hard.

use std::time::Instant;

use nalgebra::{DVector, Vector4};
use thiserror::Error;

use crate::cbf::{build_constraints_frozen, v_chain, CbfError, CbfParams, ConstraintSet, VChain};
use crate::dynamics::{ControlInput, QuadParams, QuadState};
use crate::qp::{solve_or_relax, IntervalRow, QpError, QpProblem, SolveStatus};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("state or nominal input contains non-finite values")]
    InvalidState,
    #[error(transparent)]
    Cbf(#[from] CbfError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// What the filter did on one call.
#[derive(Debug, Clone)]
pub struct FilterDiagnostics {
    /// True when ‖u* − u₀‖ > 1e-9.
    pub filter_active: bool,
    /// min(Au − ℓ, μ − Au) per interval row at u*.
    pub row_margins: [f64; 9],
    /// Sum of slack variables (zero unless the QP was relaxed), in
    /// position-equivalent units: each row is normalized by its pole
    /// product before solving.
    pub slack_total: f64,
    /// Barrier chain evaluated at (state, u*).
    pub v_chain: VChain,
    pub status: SolveStatus,
    /// Thrust value the final constraint system was linearized at.
    pub frozen_thrust: f64,
    /// Wall-clock solve time, s.
    pub solve_time: f64,
}

pub struct SafetyFilter {
    pub cbf: CbfParams,
    pub quad: QuadParams,
    /// Diagonal objective weights (w_f, w_τx, w_τy, w_τz). Thrust and
    /// torque are not commensurate units; all-ones matches the plain
    /// Euclidean distance.
    pub weights: Vector4<f64>,
    /// Slack penalty ρ for the relaxation fallback.
    pub slack_penalty: f64,
    /// Freeze re-linearization passes per call. The default of 1 freezes at
    /// the nominal thrust only. More passes chase the returned thrust to a
    /// fixed point, which evaluates the snap rows at the thrust that is
    /// actually flown; only sensible together with `rotor_limits`, which
    /// keeps the torque columns alive at low thrust.
    pub max_freeze_iters: usize,
    /// Add the four rotor-realizability rows (ω̄_i² ≥ 0 through the mixer)
    /// as hard constraints. Couples thrust and torque the way the airframe
    /// does: no torque without proportional collective thrust.
    pub rotor_limits: bool,
}

impl SafetyFilter {
    pub fn new(cbf: CbfParams, quad: QuadParams) -> Self {
        Self {
            cbf,
            quad,
            weights: Vector4::from_element(1.0),
            slack_penalty: 1e6,
            max_freeze_iters: 1,
            rotor_limits: false,
        }
    }

    /// Minimally modified safe input for a nominal command.
    pub fn filter(
        &self,
        s: &QuadState,
        u0: &ControlInput,
    ) -> Result<(ControlInput, FilterDiagnostics), FilterError> {
        if !s.is_finite() || !u0.is_finite() {
            return Err(FilterError::InvalidState);
        }
        let start = Instant::now();
        let mut frozen = u0.thrust.clamp(self.cbf.thrust_floor, self.quad.u_max[0]);

        // Nominal already safe: no projection needed, and the pass-through
        // is exact. The freeze point equals u₀'s own thrust here, so the
        // rows are the true bilinear constraint values.
        let cs0 = build_constraints_frozen(s, &self.cbf, &self.quad, frozen)?;
        let u0_vec = u0.as_vector();
        let in_box = (0..4)
            .all(|i| u0_vec[i] >= self.quad.u_min[i] && u0_vec[i] <= self.quad.u_max[i]);
        let realizable = !self.rotor_limits
            || self
                .rotor_rows()
                .iter()
                .all(|row| row.iter().zip(u0_vec.iter()).map(|(a, u)| a * u).sum::<f64>() >= 0.0);
        if in_box && realizable && cs0.satisfied_by(u0, 0.0) {
            let vals = cs0.row_values(u0);
            let mut row_margins = [0.0; 9];
            for i in 0..9 {
                row_margins[i] = (vals[i] - cs0.lower[i]).min(cs0.upper[i] - vals[i]);
            }
            let diag = FilterDiagnostics {
                filter_active: false,
                row_margins,
                slack_total: 0.0,
                v_chain: v_chain(s, u0, &self.cbf, &self.quad),
                status: SolveStatus::Optimal,
                frozen_thrust: cs0.frozen_thrust,
                solve_time: start.elapsed().as_secs_f64(),
            };
            return Ok((*u0, diag));
        }

        let mut last: Option<(ControlInput, ConstraintSet, crate::qp::QpSolution)> = None;
        let soft: Vec<bool> = (0..9)
            .map(|_| true)
            .chain((0..if self.rotor_limits { 4 } else { 0 }).map(|_| false))
            .collect();
        for _ in 0..self.max_freeze_iters.max(1) {
            let cs = build_constraints_frozen(s, &self.cbf, &self.quad, frozen)?;
            let sol = solve_or_relax(&self.qp_problem(&cs, u0), self.slack_penalty, &soft)?;
            let u_star = ControlInput::from_vector(&Vector4::from_iterator(
                sol.x.iter().take(4).copied(),
            ));
            let next = u_star.thrust.clamp(self.cbf.thrust_floor, self.quad.u_max[0]);
            let converged = (next - frozen).abs() <= 1e-9;
            last = Some((u_star, cs, sol));
            if converged {
                break;
            }
            frozen = next;
        }
        let (u_star, cs, sol) = last.expect("at least one freeze pass runs");

        let vals = cs.row_values(&u_star);
        let mut row_margins = [0.0; 9];
        for i in 0..9 {
            row_margins[i] = (vals[i] - cs.lower[i]).min(cs.upper[i] - vals[i]);
        }
        let diag = FilterDiagnostics {
            filter_active: (u_star.as_vector() - u0.as_vector()).norm() > 1e-9,
            row_margins,
            slack_total: sol.slack.iter().sum(),
            v_chain: v_chain(s, &u_star, &self.cbf, &self.quad),
            status: sol.status,
            frozen_thrust: cs.frozen_thrust,
            solve_time: start.elapsed().as_secs_f64(),
        };
        Ok((u_star, diag))
    }

    /// Rows are divided by their pole products, which expresses every row
    /// in position units. This leaves the hard feasible set unchanged but
    /// makes the relaxation's uniform slack penalty protect imminent
    /// low-order rows far more than the anticipatory high-order ones, whose
    /// frozen linearization is least trustworthy when authority runs out.
    fn qp_problem(&self, cs: &ConstraintSet, u0: &ControlInput) -> QpProblem {
        let mut rows: Vec<IntervalRow> = (0..9)
            .map(|i| {
                let s = cs.pole_products[i];
                IntervalRow {
                    coeffs: DVector::from_iterator(4, (0..4).map(|j| cs.coeff[(i, j)] / s)),
                    lower: cs.lower[i] / s,
                    upper: cs.upper[i] / s,
                }
            })
            .collect();
        if self.rotor_limits {
            for row in self.rotor_rows() {
                rows.push(IntervalRow {
                    coeffs: DVector::from_row_slice(&row),
                    lower: 0.0,
                    upper: f64::INFINITY,
                });
            }
        }
        QpProblem::least_change(
            &DVector::from_iterator(4, self.weights.iter().copied()),
            &DVector::from_iterator(4, u0.as_vector().iter().copied()),
            rows,
            DVector::from_iterator(4, cs.u_min.iter().copied()),
            DVector::from_iterator(4, cs.u_max.iter().copied()),
        )
    }

    /// Squared rotor speeds through the inverse mixer, scaled by 4 k_F:
    /// each must be non-negative for the wrench to be realizable.
    fn rotor_rows(&self) -> [[f64; 4]; 4] {
        let arm = 2.0 / self.quad.arm_length;
        let drag = self.quad.thrust_coeff / self.quad.moment_coeff;
        [
            [1.0, 0.0, -arm, drag],
            [1.0, arm, 0.0, -drag],
            [1.0, 0.0, arm, drag],
            [1.0, -arm, 0.0, -drag],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbf::build_constraints;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn tracking_filter() -> SafetyFilter {
        let cbf = CbfParams::new(
            [
                Vector3::new(1.0, 1.0, 1.0),
                Vector3::new(4.0, 4.0, 5.0),
                Vector3::new(5.0, 5.0, 10.0),
                Vector3::new(5.0, 5.0, 10.0),
            ],
            Vector3::new(-1.0, -1.0, 2.0),
            Vector3::new(1.0, 1.0, 6.0),
        )
        .unwrap();
        SafetyFilter::new(cbf, QuadParams::if750a())
    }

    fn roll_filter() -> SafetyFilter {
        let cbf = CbfParams::new(
            [
                Vector3::new(1.0, 1.0, 1.0),
                Vector3::new(4.0, 4.0, 5.0),
                Vector3::new(5.0, 5.0, 10.0),
                Vector3::new(5.0, 5.0, 10.0),
            ],
            Vector3::new(-4.0, -4.0, 2.0),
            Vector3::new(4.0, 4.0, 13.0),
        )
        .unwrap();
        SafetyFilter::new(cbf, QuadParams::if750a())
    }

    #[test]
    fn safe_nominal_passes_through_exactly() {
        let sf = tracking_filter();
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 3.0));
        let hover = ControlInput::new(sf.quad.hover_thrust(), Vector3::zeros());
        let (u, diag) = sf.filter(&s, &hover).unwrap();
        assert_eq!(u, hover);
        assert!(!diag.filter_active);
        assert_eq!(diag.status, SolveStatus::Optimal);
        assert_eq!(diag.slack_total, 0.0);
    }

    #[test]
    fn aggressive_roll_command_is_regulated_immediately() {
        let sf = roll_filter();
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 9.0));
        let u0 = ControlInput::new(19.670, Vector3::new(0.0, -5.130, 0.0));
        let (u, diag) = sf.filter(&s, &u0).unwrap();
        assert!(diag.filter_active);
        assert!((u.as_vector() - u0.as_vector()).norm() > 1e-3);
        // The modified input must satisfy the box.
        for i in 0..4 {
            assert!(u.as_vector()[i] >= sf.quad.u_min[i] - 1e-9);
            assert!(u.as_vector()[i] <= sf.quad.u_max[i] + 1e-9);
        }
    }

    #[test]
    fn minimality_when_nominal_satisfies_constraints() {
        let sf = tracking_filter();
        let mut s = QuadState::rest_at(Vector3::new(0.2, -0.3, 3.4));
        s.velocity = Vector3::new(0.1, 0.2, -0.05);
        let u0 = ControlInput::new(14.0, Vector3::new(0.02, -0.01, 0.001));
        let cs = build_constraints(&s, &sf.cbf, &sf.quad, &u0).unwrap();
        assert!(cs.satisfied_by(&u0, 0.0), "test premise: nominal is safe");
        let (u, _) = sf.filter(&s, &u0).unwrap();
        assert!((u.as_vector() - u0.as_vector()).norm() < 1e-9);
    }

    #[test]
    fn filtered_input_is_idempotent() {
        let sf = roll_filter();
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 9.0));
        let u0 = ControlInput::new(19.670, Vector3::new(0.0, -5.130, 0.0));
        let (u1, _) = sf.filter(&s, &u0).unwrap();
        let (u2, _) = sf.filter(&s, &u1).unwrap();
        assert!(
            (u2.as_vector() - u1.as_vector()).norm() < 1e-6,
            "refiltering moved the input by {}",
            (u2.as_vector() - u1.as_vector()).norm()
        );
    }

    #[test]
    fn box_bounds_hold_even_for_wild_nominals() {
        let sf = roll_filter();
        let mut s = QuadState::rest_at(Vector3::new(2.0, -3.0, 5.0));
        s.velocity = Vector3::new(2.0, 1.0, -1.5);
        s.body_rate = Vector3::new(3.0, -2.0, 0.5);
        for u0 in [
            ControlInput::new(500.0, Vector3::new(50.0, -50.0, 5.0)),
            ControlInput::new(-20.0, Vector3::new(0.0, 0.0, 0.0)),
            ControlInput::new(39.0, Vector3::new(5.13, 5.13, 0.024)),
        ] {
            let (u, _) = sf.filter(&s, &u0).unwrap();
            for i in 0..4 {
                assert!(u.as_vector()[i] >= sf.quad.u_min[i] - 1e-9);
                assert!(u.as_vector()[i] <= sf.quad.u_max[i] + 1e-9);
            }
        }
    }

    #[test]
    fn objective_scaling_leaves_minimizer_unchanged() {
        let mut sf = roll_filter();
        let s = QuadState::rest_at(Vector3::new(0.0, 0.0, 9.0));
        let u0 = ControlInput::new(19.670, Vector3::new(0.0, -5.130, 0.0));
        let (base, _) = sf.filter(&s, &u0).unwrap();
        sf.weights *= 7.5;
        let (scaled, _) = sf.filter(&s, &u0).unwrap();
        assert_relative_eq!(
            base.as_vector(),
            scaled.as_vector(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn rejects_non_finite_state() {
        let sf = tracking_filter();
        let mut s = QuadState::rest_at(Vector3::new(0.0, 0.0, 3.0));
        s.velocity.x = f64::NAN;
        let hover = ControlInput::new(sf.quad.hover_thrust(), Vector3::zeros());
        assert!(matches!(sf.filter(&s, &hover), Err(FilterError::InvalidState)));
    }
}
