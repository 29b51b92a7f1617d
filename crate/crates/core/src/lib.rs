#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod benchmark;
pub mod closed_loop;
pub mod cost;
pub mod ddpc;
pub mod error;
pub mod hankel;
pub mod lq;
pub mod lti;
pub mod oracle;
pub mod order;
pub mod qp;
pub mod seed;
pub mod slip_study;
pub mod trajectory;
pub mod tuning;
pub mod wheelslip;

pub use error::{Error, Result};
