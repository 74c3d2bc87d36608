//! Numerical sub-Riemannian geometry on finite-dimensional charts.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: anchored bundles with a fibre metric, built-in Carnot models
//!   and JSON-defined custom frames.
//! * [`dynamics`]: horizontal systems, the endpoint map, its differential and
//!   its adjoint.
//! * [`hamiltonian`]: the normal Hamiltonian flow, exponential map and
//!   two-point shooting.
//! * [`controllability`]: Lie brackets, growth vectors and commutator-flow
//!   steering.
//! * [`distance`]: distance by direct optimal control and shooting, extremal
//!   classification and ball-box exponent fits.
//! * [`experiments`]: orbit profiles of Heisenberg and Engel products and the
//!   Gram spectrum diagnostic.
//! * [`verify`]: the invariant suite used by the command-line front end.

pub mod controllability;
pub mod distance;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod hamiltonian;
pub mod io;
pub mod linalg;
pub mod model;
pub mod poly;
pub mod verify;

pub use controllability::{
    bracket_motion, bracket_span, commutator_flow, lie_bracket, steer, steering_cost_certificate,
    CostCertificate, GrowthVector, SteerOptions, SteeringPlan, VectorField, Word,
};
pub use distance::{
    ballbox_fit, classify_extremal, distance_best, distance_direct, distance_shooting, BallBoxFit, DirectOptions,
    DistanceResult, ExtremalCertificate, ExtremalClass, Method,
};
pub use dynamics::{
    action, endpoint, endpoint_adjoint, endpoint_diff, extremal_residual, length, trajectory,
    ControlPath, CostatePath, Dynamics, Trajectory,
};
pub use error::{Error, Result};
pub use experiments::{
    elusive_spectrum, engel_profile, heisenberg_component_distance, orbit_profile, OrbitProfile,
    Quality, SequenceSpec, Verdict,
};
pub use hamiltonian::{
    exp_map, geodesic_shoot, normal_control, normal_hamiltonian, shoot_bvp, symplectic_gradient,
    verify_local_minimality, BvpOptions, BvpSolution, MinimalityReport, PhasePoint,
    PhaseTrajectory,
};
pub use model::{ChartPoint, ControlVector, Covector, Model, ModelSpec};
