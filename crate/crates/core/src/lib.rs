pub mod agent;
pub mod envs;
pub mod harness;
pub mod numkit;
pub mod repr;
