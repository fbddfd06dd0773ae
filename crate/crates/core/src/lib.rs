pub mod analytic;
pub mod bitplane;
pub mod config;
pub mod container;
pub mod fault;
pub mod gf;
pub mod inner;
pub mod outer;
pub mod rs;
pub mod selftest;
pub mod sim;
pub mod sweep;
pub mod workload;
