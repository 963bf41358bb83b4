//! Knowledge-grounded trajectory selection for a 2D driving simulator.

pub mod corpus;
pub mod dataset;
pub mod geom;
pub mod kgraph;
pub mod planner;
pub mod retrieval;
pub mod seed;
pub mod sim;
pub mod text;
pub mod value;
pub mod verbalizer;
