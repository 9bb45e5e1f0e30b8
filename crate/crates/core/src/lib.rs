pub mod circuit;
pub mod cli;
pub mod cnf;
pub mod encoder;
pub mod explain;
pub mod fixedpoint;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod videoharness;
