//! Numerical laboratory for the Neumann problem of parabolic Hessian
//! quotient equations `u_t = log(sigma_k/sigma_l)(D^2 u) - log f(x, u)` on
//! planar convex domains.

// `!(x > 0.0)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod discretize;
pub mod elliptic;
pub mod exec;
pub mod exprparse;
pub mod flow;
pub mod geometry;
pub mod linsolve;
pub mod oracle;
pub mod symmfunc;
pub mod verify;
