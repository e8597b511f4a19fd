pub mod backend;
pub mod geocoder;
pub mod media;
pub mod model;
pub mod parser;
pub mod prompt;
pub mod dataset;
pub mod scoring;
pub mod pipeline;
pub mod session;
pub mod harness;
pub mod config;
pub mod api;
