pub mod error;
pub mod lie;
pub mod model;
mod smith;
pub mod spectral;
pub mod fields;
pub mod loops;
pub mod gauge;
pub mod ode;
pub mod oracles;
pub mod solver;
pub mod decay;
pub mod cli;
