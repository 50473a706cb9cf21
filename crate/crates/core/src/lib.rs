//! Contextual and distributionally robust state estimation for power
//! networks whose real-time measurements alone leave the state unobservable.

pub mod estimators;
pub mod grid;
pub mod optim;
pub mod powerflow;
pub mod scenario;
