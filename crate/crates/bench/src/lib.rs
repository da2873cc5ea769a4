//! Shared fixtures for the benchmarks.

use conetomo::presets::Preset;
use conetomo::{Acquisition, Ball, Phantom, Vec3};

pub const N: usize = 32;

pub fn ball() -> Ball {
    Ball::new(Vec3::ZERO, N as f64 / 2.0).unwrap()
}

pub fn phantom() -> Phantom {
    conetomo::shepp_logan_3d().scaled(ball().radius).unwrap()
}

pub fn circle() -> Acquisition {
    Preset::Circle { positions: 120, iso_spacing: 1.0 }.build(ball()).unwrap()
}

pub fn parallel() -> Acquisition {
    Preset::Parallel { directions: 300, du: 1.0 }.build(ball()).unwrap()
}
