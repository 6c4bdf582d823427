pub mod bench;
pub mod descriptor;
pub mod ingest;
pub mod polsar;
pub mod query;
pub mod service;
pub mod store;
pub mod synth;
pub mod tsvq;
pub mod vector;
