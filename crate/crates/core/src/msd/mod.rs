//! Procedurally generated planar mass-spring-damper networks and their
//! Hamiltonian quantities.

mod network;
mod physics;

pub use network::{
    generate_network, Edge, GeneratorConfig, GravityField, Interval, MassSpringNetwork,
    NetworkMeta, Node,
};
pub use physics::DEGENERATE_LENGTH;
