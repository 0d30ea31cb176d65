//! Generic pseudo-arclength continuation with stability tracking, event
//! detection (folds and simple branch points), branch switching, and
//! two-parameter continuation of singular points (fold curves, branch-point
//! curves, cusp detection).
//!
//! The engine is written against the [`Problem`] trait so the scalar
//! bifurcation normal forms and the FEM system share one code path; the
//! normal forms double as closed-form oracles for the engine itself.

mod engine;
mod extended;
pub mod fem_problem;
mod problem;


pub use engine::{
    continue_branch, detect_events, newton_correct, switch_branch, Constraint, Seed,
};
pub use extended::{continue_singular_point, SingularCurve, SingularKind, SingularPoint};
pub use fem_problem::{FemProblem, InterfaceType, ParamId};
pub use problem::{BpSymmetry, Problem, Stability};

use crate::fem::FemError;
use crate::linalg::LinalgError;
use crate::mesh::MeshError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error("corrector did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("singular Jacobian (likely an unflagged bifurcation nearby)")]
    SingularJacobian,
    #[error("every branch-switch predictor reconverged to the parent branch")]
    AllPredictorsFellBack,
    #[error("step size underflow at parameter value {0}")]
    StepSizeUnderflow(f64),
    #[error("event bisection failed: {0}")]
    EventLocation(String),
    #[error("problem not valid for continuation: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Fold,
    SimpleBp,
    CuspCandidate,
    /// Multiple eigenvalues crossed together (near-O(2) double points).
    Unresolved,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Fold => "fold",
            EventKind::SimpleBp => "bp",
            EventKind::CuspCandidate => "cusp-candidate",
            EventKind::Unresolved => "unresolved",
        }
    }
}

/// One accepted continuation point.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub z: Vec<f64>,
    /// All problem parameters at this point.
    pub params: Vec<f64>,
    /// Unit tangent in the weighted (z, active-param) norm.
    pub tangent: Vec<f64>,
    /// Smallest constrained-Hessian eigenvalues (ascending), when tracked.
    pub eigs: Vec<f64>,
    /// Morse index (None when indeterminate or untracked).
    pub index: Option<usize>,
    pub lambda: f64,
    pub energy: f64,
    /// Event marker set on points inserted by event refinement.
    pub event: Option<EventKind>,
}

/// A detected fold or simple branch point with its kernel vector.
#[derive(Debug, Clone)]
pub struct BranchPointRecord {
    pub kind: EventKind,
    pub point: BranchPoint,
    /// Near-null vector of the (bordered) Jacobian in z-space.
    pub kernel: Vec<f64>,
    pub param_value: f64,
    /// Active-parameter values bracketing the detection.
    pub detection_interval: (f64, f64),
    /// Index into `Branch::points` after which the event lies.
    pub after_step: usize,
}

/// An ordered family of continuation points with detected events.
#[derive(Debug, Clone, Default)]
pub struct Branch {
    pub param_name: String,
    pub param_index: usize,
    pub points: Vec<BranchPoint>,
    pub events: Vec<BranchPointRecord>,
    /// Why the run stopped.
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum StopReason {
    #[default]
    MaxSteps,
    ParamBound,
    CorrectorFailure(String),
    CuspCandidate,
    Halted,
}

#[derive(Debug, Clone)]
pub struct ContinuationSettings {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Active-parameter window; the run stops at either bound.
    pub param_range: (f64, f64),
    pub track_stability: bool,
    /// Eigenvalues tracked per step.
    pub n_eigs: usize,
    /// |eigenvalue| below this is treated as indeterminate.
    pub tol_eig: f64,
    /// Arclength tolerance for event bisection.
    pub tol_event: f64,
    /// Predictor offset for branch switching, as a fraction of ds0.
    pub switch_delta_factor: f64,
    /// Distance below which a switched branch counts as the parent.
    pub tol_distinct: f64,
    /// Let the problem adapt its discretization after accepted steps.
    pub allow_adaptation: bool,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            ds0: 0.01,
            ds_min: 1e-5,
            ds_max: 0.1,
            max_steps: 500,
            newton_tol: 1e-8,
            newton_max_iter: 20,
            param_range: (f64::NEG_INFINITY, f64::INFINITY),
            track_stability: true,
            n_eigs: 5,
            tol_eig: 1e-6,
            tol_event: 1e-8,
            switch_delta_factor: 0.1,
            tol_distinct: 1e-6,
            allow_adaptation: false,
        }
    }
}

impl Branch {
    /// Points whose active parameter is closest to `value`.
    pub fn closest_point(&self, value: f64) -> Option<&BranchPoint> {
        self.points.iter().min_by(|a, b| {
            let da = (a.params[self.param_index] - value).abs();
            let db = (b.params[self.param_index] - value).abs();
            da.partial_cmp(&db).unwrap()
        })
    }

    pub fn folds(&self) -> impl Iterator<Item = &BranchPointRecord> {
        self.events.iter().filter(|e| e.kind == EventKind::Fold)
    }

    pub fn simple_bps(&self) -> impl Iterator<Item = &BranchPointRecord> {
        self.events.iter().filter(|e| e.kind == EventKind::SimpleBp)
    }
}
