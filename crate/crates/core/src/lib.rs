pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod generator;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod planner;
pub mod training;
