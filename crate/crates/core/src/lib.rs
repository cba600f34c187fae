//! Risk-averse planning for constrained MDPs and POMDPs.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: MDP, POMDP and finite-state-controller types, validation,
//!   belief updates and the closed-loop product chain.
//! * [`risk`]: expectation, CVaR and EVaR with their variational inner solves.
//! * [`mdp_solver`]: risk-averse value iteration with Lagrangian duality for
//!   the constraints, plus a brute-force oracle and a convex-program export.
//! * [`pomdp_solver`]: policy iteration over stochastic finite-state controllers.
//! * [`gridworld`]: the rover navigation benchmark.
//! * [`sim`]: Monte Carlo evaluation of synthesized policies.
//! * [`cli`] and [`config`]: the command-line driver behind the `riskplan`
//!   binary and its JSON run configuration.
//! * [`optim`]: the dense simplex and simplex-projection kernels.

pub mod cli;
pub mod config;
pub mod gridworld;
pub mod mdp_solver;
pub mod model;
pub mod optim;
pub mod pomdp_solver;
pub mod risk;
pub mod sim;
