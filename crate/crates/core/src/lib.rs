pub mod collectives;
pub mod commands;
pub mod composition;
pub mod config;
pub mod cost;
pub mod error;
pub mod placement;
pub mod planner;
pub mod profile;
pub mod reference;
pub mod report;
pub mod sim;
pub mod units;
