//! Roller–raceway line contact: Palmgren's load-deflection relation
//! `δ = c · Q^0.9 / l^0.8` with δ in mm, Q in N and roller length l in mm.
//!
//! In force form this is a pure power law `Q = K · δ^(10/9)`.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Classical line-contact constant, mm·N^-0.9·mm^0.8.
pub const PALMGREN_CONSTANT: f64 = 3.84e-5;

/// Load-deflection exponent in force form.
pub const LOAD_EXPONENT: f64 = 10.0 / 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactLaw {
    /// K in `Q = K · δ^(10/9)`, N/mm^(10/9).
    pub stiffness_constant: f64,
}

impl ContactLaw {
    pub fn for_roller_length(roller_length: f64) -> Result<Self, ConfigError> {
        Self::with_constant(roller_length, PALMGREN_CONSTANT)
    }

    /// Law for a roller of `roller_length` mm with a non-default deflection constant.
    pub fn with_constant(roller_length: f64, deflection_constant: f64) -> Result<Self, ConfigError> {
        if !(roller_length.is_finite() && roller_length > 0.0) {
            return Err(ConfigError::invalid("roller_length", "must be finite and > 0"));
        }
        if !(deflection_constant.is_finite() && deflection_constant > 0.0) {
            return Err(ConfigError::invalid("contact_constant", "must be finite and > 0"));
        }
        let stiffness_constant = (roller_length.powf(0.8) / deflection_constant).powf(LOAD_EXPONENT);
        Ok(Self { stiffness_constant })
    }

    /// Contact load in N for an interference of `deflection` mm. Zero when separated.
    pub fn force(&self, deflection: f64) -> f64 {
        if deflection > 0.0 {
            self.stiffness_constant * deflection.powf(LOAD_EXPONENT)
        } else {
            0.0
        }
    }

    /// Interference in mm that carries `load` N (inverse of [`force`](Self::force) for load ≥ 0).
    pub fn deflection(&self, load: f64) -> f64 {
        if load > 0.0 {
            (load / self.stiffness_constant).powf(0.9)
        } else {
            0.0
        }
    }
}

/// Contact law for a roller of `roller_length` mm with the standard constant.
pub fn contact_constant(roller_length: f64) -> Result<ContactLaw, ConfigError> {
    ContactLaw::for_roller_length(roller_length)
}

pub fn contact_force(law: &ContactLaw, deflection: f64) -> f64 {
    law.force(deflection)
}
