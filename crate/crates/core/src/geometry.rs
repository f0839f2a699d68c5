//! Bearing configuration, load schedule, simulation parameters and the
//! derived raceway geometry shared by the simulator and the graph builder.
//!
//! Units: configuration lengths are millimetres, masses kilograms, stiffness
//! N/m and damping N·s/m. Simulator state is SI throughout.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Plain 2-vector, serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, rhs: Vec2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self * rhs.x, self * rhs.y)
    }
}

/// Geometry, inertia and grounding of a 2D cylindrical roller bearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BearingConfig {
    pub n_rollers: usize,
    /// mm
    pub pitch_diameter: f64,
    /// mm
    pub roller_diameter: f64,
    /// mm
    pub roller_length: f64,
    /// Diametral clearance, mm.
    pub radial_clearance: f64,
    /// kg
    pub inner_ring_mass: f64,
    /// kg
    pub outer_ring_mass: f64,
    /// Inner ring to ground, per axis, N/m.
    pub ground_spring_stiffness: f64,
    /// N·s/m
    pub inner_damping: f64,
    /// N·s/m
    pub outer_damping: f64,
    /// Angle of roller 0 in degrees; -90 puts it at bottom dead center.
    pub reference_angle: f64,
    /// Palmgren line-contact constant in `δ = c · Q^0.9 / l^0.8` (mm, N, mm).
    pub contact_constant: f64,
}

impl Default for BearingConfig {
    /// SKF N209-class bearing with 15 rollers.
    fn default() -> Self {
        Self {
            n_rollers: 15,
            pitch_diameter: 65.5,
            roller_diameter: 11.0,
            roller_length: 12.0,
            radial_clearance: 0.0,
            inner_ring_mass: 1.0,
            outer_ring_mass: 0.55,
            ground_spring_stiffness: 5e6,
            inner_damping: 5e4,
            outer_damping: 1e4,
            reference_angle: -90.0,
            contact_constant: crate::contact::PALMGREN_CONSTANT,
        }
    }
}

impl BearingConfig {
    pub fn n209(n_rollers: usize) -> Self {
        Self {
            n_rollers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_rollers < 3 {
            return Err(ConfigError::invalid("n_rollers", "must be at least 3"));
        }
        let positive = [
            ("pitch_diameter", self.pitch_diameter),
            ("roller_diameter", self.roller_diameter),
            ("roller_length", self.roller_length),
            ("inner_ring_mass", self.inner_ring_mass),
            ("outer_ring_mass", self.outer_ring_mass),
            ("ground_spring_stiffness", self.ground_spring_stiffness),
            ("inner_damping", self.inner_damping),
            ("outer_damping", self.outer_damping),
            ("contact_constant", self.contact_constant),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::invalid(name, format!("must be finite and > 0, got {value}")));
            }
        }
        if !(self.radial_clearance.is_finite() && self.radial_clearance >= 0.0) {
            return Err(ConfigError::invalid("radial_clearance", "must be finite and >= 0"));
        }
        if !self.reference_angle.is_finite() {
            return Err(ConfigError::invalid("reference_angle", "must be finite"));
        }
        if self.pitch_diameter <= self.roller_diameter {
            return Err(ConfigError::invalid(
                "pitch_diameter",
                format!(
                    "pitch diameter {} must exceed roller diameter {}",
                    self.pitch_diameter, self.roller_diameter
                ),
            ));
        }
        if self.n_rollers as f64 * self.roller_diameter >= PI * self.pitch_diameter {
            return Err(ConfigError::invalid(
                "n_rollers",
                format!(
                    "{} rollers of diameter {} do not fit on a pitch circle of diameter {}",
                    self.n_rollers, self.roller_diameter, self.pitch_diameter
                ),
            ));
        }
        if self.radial_clearance / 2.0 >= self.roller_diameter / 2.0 {
            return Err(ConfigError::invalid("radial_clearance", "must be smaller than the roller diameter"));
        }
        Ok(())
    }
}

/// Raceway radii and roller angles derived from a [`BearingConfig`]. Lengths in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedGeometry {
    pub inner_raceway_radius: f64,
    pub outer_raceway_radius: f64,
    pub roller_radius: f64,
    /// Half of the diametral clearance, mm.
    pub clearance_gap: f64,
    /// Radians, `reference_angle + k·2π/N`.
    pub roller_angles: Vec<f64>,
    /// Unit vectors along `roller_angles`.
    pub roller_directions: Vec<Vec2>,
}

impl DerivedGeometry {
    pub fn pitch_radius(&self) -> f64 {
        0.5 * (self.inner_raceway_radius + self.outer_raceway_radius)
    }

    pub fn n_rollers(&self) -> usize {
        self.roller_angles.len()
    }
}

/// Raceway geometry for a validated config.
///
/// The inner and outer raceway radii sit half a roller diameter inside and
/// outside the pitch circle; diametral clearance is split evenly between them.
pub fn derived_geometry(config: &BearingConfig) -> Result<DerivedGeometry, ConfigError> {
    config.validate()?;
    let roller_radius = 0.5 * config.roller_diameter;
    let pitch_radius = 0.5 * config.pitch_diameter;
    let quarter_clearance = 0.25 * config.radial_clearance;
    let n = config.n_rollers;
    let reference = config.reference_angle.to_radians();
    let spacing = 2.0 * PI / n as f64;
    let roller_angles: Vec<f64> = (0..n).map(|k| reference + k as f64 * spacing).collect();
    let roller_directions = roller_angles.iter().map(|&a| Vec2::from_angle(a)).collect();
    Ok(DerivedGeometry {
        inner_raceway_radius: pitch_radius - roller_radius - quarter_clearance,
        outer_raceway_radius: pitch_radius + roller_radius + quarter_clearance,
        roller_radius,
        clearance_gap: 0.5 * config.radial_clearance,
        roller_angles,
        roller_directions,
    })
}

/// Index of the roller whose angular position is closest to `angle_deg`;
/// exact half-way ties go to the higher index.
pub fn roller_nearest(config: &BearingConfig, angle_deg: f64) -> usize {
    let n = config.n_rollers as f64;
    let spacing = 360.0 / n;
    let k = ((angle_deg - config.reference_angle) / spacing).round();
    k.rem_euclid(n) as usize
}

/// Step-load schedule applied to the outer ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadSchedule {
    /// N
    pub base_load: f64,
    pub direction: Vec2,
    pub double_at_step: usize,
    pub restore_at_step: usize,
}

impl Default for LoadSchedule {
    fn default() -> Self {
        Self {
            base_load: 13000.0,
            direction: Vec2::new(0.0, -1.0),
            double_at_step: 2500,
            restore_at_step: 5000,
        }
    }
}

impl LoadSchedule {
    pub fn with_base_load(base_load: f64) -> Self {
        Self {
            base_load,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.base_load.is_finite() && self.base_load > 0.0) {
            return Err(ConfigError::invalid("base_load", "must be finite and > 0"));
        }
        if !(0 < self.double_at_step && self.double_at_step < self.restore_at_step) {
            return Err(ConfigError::invalid(
                "double_at_step",
                "require 0 < double_at_step < restore_at_step",
            ));
        }
        if (self.direction.norm() - 1.0).abs() > 1e-12 {
            return Err(ConfigError::invalid("direction", "must be a unit vector"));
        }
        Ok(())
    }
}

/// Integrator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// s
    pub dt: f64,
    pub n_steps: usize,
    pub record_stride: usize,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 4e-5,
            n_steps: 5000,
            record_stride: 1,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ConfigError::invalid("dt", "must be finite and > 0"));
        }
        if self.record_stride == 0 {
            return Err(ConfigError::invalid("record_stride", "must be >= 1"));
        }
        Ok(())
    }
}

/// Planar rigid body: position in m, velocity in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidBody2D {
    pub position: Vec2,
    pub velocity: Vec2,
}

impl RigidBody2D {
    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.velocity.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BearingState {
    pub inner: RigidBody2D,
    pub outer: RigidBody2D,
}

impl BearingState {
    pub fn to_array(&self) -> [f64; 8] {
        let (i, o) = (&self.inner, &self.outer);
        [
            i.position.x, i.position.y, o.position.x, o.position.y,
            i.velocity.x, i.velocity.y, o.velocity.x, o.velocity.y,
        ]
    }

    pub fn from_array(s: &[f64; 8]) -> Self {
        Self {
            inner: RigidBody2D {
                position: Vec2::new(s[0], s[1]),
                velocity: Vec2::new(s[4], s[5]),
            },
            outer: RigidBody2D {
                position: Vec2::new(s[2], s[3]),
                velocity: Vec2::new(s[6], s[7]),
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite() && self.outer.is_finite()
    }
}
