pub mod cli;
pub mod dataset;
pub mod model;
pub mod nn;
pub mod patches;
pub mod raster;
pub mod seed;
pub mod stats;
pub mod synthetic;
pub mod train;
