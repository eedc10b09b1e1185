// `!(x > 0.0)` is used on purpose so that NaN fails the check too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod harness;
pub mod localization;
pub mod perception;
pub mod planner;
pub mod seeding;
pub mod sim;
