#![allow(dead_code)]

pub mod accounting;
pub mod gradcheck;
pub mod graph;
pub mod noise;
pub mod selection;
