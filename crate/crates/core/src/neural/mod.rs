//! Conditioner networks, the map from raw network outputs to valid Möbius
//! parameters, and the Adam optimizer.

mod adam;
mod constraint;
mod net;

pub use adam::OptimizerState;
pub use constraint::ParamConstraint;
pub use net::{Activation, ConditionerNet, Dense, ForwardCache, NetGradients};

use crate::error::Result;
use crate::mobius::MobiusCombination;

/// Runs the conditioner on one feature vector and constrains its output.
pub fn net_forward(net: &ConditionerNet, features: &[f64]) -> Result<MobiusCombination> {
    let raw = net.forward(features)?;
    ParamConstraint::combination(&raw)
}
