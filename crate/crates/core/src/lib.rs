pub mod access;
pub mod config;
pub mod error;
pub mod files;
pub mod ids;
pub mod index;
pub mod license;
pub mod model;
pub mod stats;
pub mod store;
pub mod validate;
pub mod export;
pub mod archive;
