pub mod actors;
pub mod audit;
pub mod cli;
pub mod crypto;
pub mod delegation;
pub mod jdl;
pub mod simnet;
pub mod time;
