pub mod archive;
pub mod canonical;
pub mod conformance;
pub mod manifest;
pub mod mtype;
pub mod pseudo_ric;
pub mod registry;
pub mod router;
pub mod scenario;
pub mod store;
