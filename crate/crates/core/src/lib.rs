//! Interactive evolution of free-text game concepts. A steady-state genetic
//! algorithm whose fitness comes from human votes and whose variation
//! operators are implemented by a language model.

pub mod config;
pub mod domain;
pub mod http;
pub mod operators;
pub mod engine;
pub mod store;
pub mod publish;
pub mod state;
pub mod campaign;
pub mod analytics;
pub mod sim;
