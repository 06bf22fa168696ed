// `!(x > 0.0)` is used on purpose in validation: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod channel;
pub mod harness;
pub mod inquiry;
pub mod linkmgr;
pub mod power;
pub mod streaming;
pub mod time;
pub mod transport;
