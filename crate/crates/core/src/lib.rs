//! Goal prediction for aircraft around untowered airports, conditioned on
//! the observed track and the aircraft's latest radio call.

pub mod airspace;
pub mod data;
pub mod radio;
pub mod autodiff;
pub mod goalnet;
pub mod trainer;
pub mod sim;
pub mod evaluator;
