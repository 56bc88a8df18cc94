pub mod mpc;
pub mod numeric;
pub mod runtime;
pub mod kgstore;
pub mod merge;
pub mod query;
pub mod fixtures;
pub mod embed;
pub mod complete;
pub mod demo;
pub mod selftest;
