#![no_std]
extern crate alloc;

pub mod attention;
pub mod error;
pub mod experiment;
pub mod game;
pub mod gaze_models;
pub mod geometry;
pub mod simulation;
pub mod stats;
pub mod synthetic_user;

pub use error::{Error, Result};
