pub mod expr;
pub mod linalg;
pub mod ode;
pub mod optim;
pub mod model;
pub mod scaling;
pub mod certifier;
pub mod planar;
pub mod sim;
pub mod cli;
