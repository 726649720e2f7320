//! Robust L-infinity observers and Kalman-type filters for synchronous
//! generator dynamic state estimation.

pub mod estimators;
pub mod harness;
pub mod integrate;
pub mod lipschitz;
pub mod models;
pub mod synthesis;
pub(crate) mod util;
