//! Deterministic engine for a staged multi-agent round protocol.

pub mod abstraction;
pub mod adapter;
pub mod canonical;
pub mod controller;
pub mod env;
pub mod knowledge;
pub mod model;
pub mod replay;
pub mod sim;
pub mod strategy;
pub mod validator;
pub mod workspace;
