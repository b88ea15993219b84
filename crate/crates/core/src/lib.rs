#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod config;
pub mod error;
pub mod cost;
pub mod relax;
pub mod penalty;
pub mod optimizer;
pub mod evaluation;
