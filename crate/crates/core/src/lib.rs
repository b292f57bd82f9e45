pub mod annotations;
pub mod bbox;
pub mod boosting;
pub mod channels;
pub mod cli;
pub mod clustering;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod linalg;
pub mod linear_models;
pub mod orientation;
pub mod pipeline;
pub mod synth;
