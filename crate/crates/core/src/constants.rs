//! Physical constants (SI, CODATA 2018 exact or recommended values).

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
pub const C: f64 = 299_792_458.0;
pub const FINE_STRUCTURE: f64 = 7.297_352_569_3e-3;
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
