pub mod app;
pub mod bootstrap;
pub mod config;
pub mod eskf;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod landmarks;
pub mod odometry;
pub mod simulator;
pub mod state;
