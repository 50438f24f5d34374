#![allow(dead_code)]

pub mod greedy;
pub mod eigen;
pub mod gradients;
