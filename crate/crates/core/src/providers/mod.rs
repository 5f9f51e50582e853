//! Boundaries to embedding sources and model endpoints, plus a synthetic
//! world that stands in for all of them offline.

pub mod chat;
pub mod embedding;
pub mod http;
pub mod manifest;
pub mod rcvd;
pub mod synthetic;
