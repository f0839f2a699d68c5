//! 2D dynamic model of a stationary cylindrical roller bearing.
//!
//! Two rigid rings move in the plane. Rollers are massless: each one sits
//! midway between the raceways and splits the ring-to-ring interference
//! evenly between its inner and outer contact. The inner ring is tied to
//! ground by springs on both axes; both rings have viscous dampers to ground.
//! The external load acts on the outer ring.

use serde::{Deserialize, Serialize};

use crate::contact::ContactLaw;
use crate::error::SimError;
use crate::geometry::{derived_geometry, BearingConfig, BearingState, DerivedGeometry, LoadSchedule, SimParams, Vec2};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

const MM_PER_M: f64 = 1e3;
const MAX_POSITION_M: f64 = 1.0;
const MAX_VELOCITY_M_S: f64 = 1e4;

/// Placement of one massless roller for a given ring state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollerKinematics {
    /// mm
    pub center: Vec2,
    /// Ring-to-ring interference along the roller direction, mm.
    pub deflection_total: f64,
    pub radial_unit: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollerContact {
    pub index: usize,
    /// rad
    pub angle: f64,
    /// mm
    pub center: Vec2,
    /// mm
    pub deflection_total: f64,
    /// Force on the inner ring from this roller, N.
    pub q_inner: Vec2,
    /// Force on the outer ring from this roller, N.
    pub q_outer: Vec2,
    /// N
    pub load_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub state: BearingState,
    pub external_force: Vec2,
    pub rollers: Vec<RollerContact>,
    pub net_force_inner: Vec2,
    pub net_force_outer: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub format_version: u32,
    pub config: BearingConfig,
    pub schedule: LoadSchedule,
    pub sim_params: SimParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    /// Short identifier, e.g. `n15_f13000`.
    pub fn id(&self) -> String {
        trajectory_id(self.header.config.n_rollers, self.header.schedule.base_load)
    }

    pub fn record_at(&self, step: usize) -> Option<&StepRecord> {
        self.records
            .binary_search_by_key(&step, |r| r.step)
            .ok()
            .map(|i| &self.records[i])
    }
}

pub fn trajectory_id(n_rollers: usize, base_load: f64) -> String {
    format!("n{}_f{}", n_rollers, base_load.round() as i64)
}

/// Net forces on both rings and the per-roller contact breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceAssembly {
    pub net_inner: Vec2,
    pub net_outer: Vec2,
    pub rollers: Vec<RollerContact>,
}

/// Magnitude and direction of the external load at a step index.
pub fn external_load(step: usize, schedule: &LoadSchedule) -> Vec2 {
    let magnitude = if step >= schedule.double_at_step && step < schedule.restore_at_step {
        2.0 * schedule.base_load
    } else {
        schedule.base_load
    };
    magnitude * schedule.direction
}

/// A validated bearing with its derived geometry and contact law.
#[derive(Debug, Clone)]
pub struct BearingModel {
    pub config: BearingConfig,
    pub geom: DerivedGeometry,
    pub law: ContactLaw,
}

impl BearingModel {
    pub fn new(config: &BearingConfig) -> Result<Self, SimError> {
        let geom = derived_geometry(config)?;
        let law = ContactLaw::with_constant(config.roller_length, config.contact_constant)?;
        Ok(Self {
            config: config.clone(),
            geom,
            law,
        })
    }

    pub fn roller_kinematics(&self, state: &BearingState) -> Result<Vec<RollerKinematics>, SimError> {
        let inner = MM_PER_M * state.inner.position;
        let outer = MM_PER_M * state.outer.position;
        let relative = inner - outer;
        let g = &self.geom;
        g.roller_directions
            .iter()
            .enumerate()
            .map(|(k, &u)| {
                let inner_surface = inner + g.inner_raceway_radius * u;
                let outer_surface = outer + g.outer_raceway_radius * u;
                let center = 0.5 * (inner_surface + outer_surface);
                let deflection_total = (relative.dot(u) - g.clearance_gap).max(0.0);
                if !(deflection_total < g.roller_radius) {
                    return Err(SimError::ModelValidity {
                        roller: k,
                        deflection_mm: deflection_total,
                        roller_radius_mm: g.roller_radius,
                    });
                }
                Ok(RollerKinematics {
                    center,
                    deflection_total,
                    radial_unit: u,
                })
            })
            .collect()
    }

    /// Contact, spring and damper forces for a state under `external` load (N).
    pub fn assemble_forces(&self, state: &BearingState, external: Vec2) -> Result<ForceAssembly, SimError> {
        let kinematics = self.roller_kinematics(state)?;
        let mut contact_on_outer = Vec2::ZERO;
        let rollers: Vec<RollerContact> = kinematics
            .iter()
            .enumerate()
            .map(|(k, kin)| {
                let load = self.law.force(0.5 * kin.deflection_total);
                let q_outer = load * kin.radial_unit;
                contact_on_outer += q_outer;
                RollerContact {
                    index: k,
                    angle: self.geom.roller_angles[k],
                    center: kin.center,
                    deflection_total: kin.deflection_total,
                    q_inner: -q_outer,
                    q_outer,
                    load_magnitude: load,
                }
            })
            .collect();
        let c = &self.config;
        let net_inner = -contact_on_outer
            - c.ground_spring_stiffness * state.inner.position
            - c.inner_damping * state.inner.velocity;
        let net_outer = contact_on_outer + external - c.outer_damping * state.outer.velocity;
        Ok(ForceAssembly {
            net_inner,
            net_outer,
            rollers,
        })
    }

    fn derivative(&self, s: &[f64; 8], external: Vec2) -> Result<[f64; 8], SimError> {
        let state = BearingState::from_array(s);
        let f = self.assemble_forces(&state, external)?;
        let (mi, mo) = (self.config.inner_ring_mass, self.config.outer_ring_mass);
        Ok([
            s[4],
            s[5],
            s[6],
            s[7],
            f.net_inner.x / mi,
            f.net_inner.y / mi,
            f.net_outer.x / mo,
            f.net_outer.y / mo,
        ])
    }

    /// One classical RK4 step. The load is held at its value for `step`.
    pub fn rk4_step(
        &self,
        state: &BearingState,
        step: usize,
        dt: f64,
        schedule: &LoadSchedule,
    ) -> Result<BearingState, SimError> {
        let external = external_load(step, schedule);
        let y0 = state.to_array();
        let k1 = self.derivative(&y0, external)?;
        let k2 = self.derivative(&axpy(&y0, 0.5 * dt, &k1), external)?;
        let k3 = self.derivative(&axpy(&y0, 0.5 * dt, &k2), external)?;
        let k4 = self.derivative(&axpy(&y0, dt, &k3), external)?;
        let mut y = y0;
        for i in 0..8 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_divergence(&y)?;
        Ok(BearingState::from_array(&y))
    }

    pub fn record(&self, step: usize, time: f64, state: BearingState, external: Vec2) -> Result<StepRecord, SimError> {
        let f = self.assemble_forces(&state, external)?;
        Ok(StepRecord {
            step,
            time,
            state,
            external_force: external,
            rollers: f.rollers,
            net_force_inner: f.net_inner,
            net_force_outer: f.net_outer,
        })
    }
}

fn axpy(y: &[f64; 8], a: f64, k: &[f64; 8]) -> [f64; 8] {
    std::array::from_fn(|i| y[i] + a * k[i])
}

fn check_divergence(y: &[f64; 8]) -> Result<(), SimError> {
    for (i, &v) in y.iter().enumerate() {
        let limit = if i < 4 { MAX_POSITION_M } else { MAX_VELOCITY_M_S };
        if !v.is_finite() || v.abs() > limit {
            let what = if i < 4 { "position" } else { "velocity" };
            return Err(SimError::Diverged {
                step: None,
                detail: format!("{what} component {i} = {v:e}"),
            });
        }
    }
    Ok(())
}

/// Step response from rest: records every `record_stride` steps, step 0 included.
pub fn simulate(config: &BearingConfig, schedule: &LoadSchedule, params: &SimParams) -> Result<Trajectory, SimError> {
    schedule.validate()?;
    params.validate()?;
    let model = BearingModel::new(config)?;
    let mut state = BearingState::default();
    let mut records = Vec::with_capacity(params.n_steps / params.record_stride + 1);
    records.push(model.record(0, 0.0, state, external_load(0, schedule))?);
    for step in 0..params.n_steps {
        state = model
            .rk4_step(&state, step, params.dt, schedule)
            .map_err(|e| annotate_step(e, step))?;
        let next = step + 1;
        if next % params.record_stride == 0 {
            let record = model
                .record(next, next as f64 * params.dt, state, external_load(next, schedule))
                .map_err(|e| annotate_step(e, next))?;
            records.push(record);
        }
    }
    Ok(Trajectory {
        header: TrajectoryHeader {
            format_version: TRAJECTORY_FORMAT_VERSION,
            config: config.clone(),
            schedule: schedule.clone(),
            sim_params: params.clone(),
        },
        records,
    })
}

fn annotate_step(err: SimError, step: usize) -> SimError {
    match err {
        SimError::Diverged { detail, .. } => SimError::Diverged {
            step: Some(step),
            detail,
        },
        SimError::ModelValidity { .. } => SimError::Diverged {
            step: Some(step),
            detail: err.to_string(),
        },
        other => other,
    }
}

const EQUILIBRIUM_TOLERANCE_N: f64 = 1e-6;
const EQUILIBRIUM_MAX_ITERATIONS: usize = 200;

/// Ring positions at rest under a constant `external` load (N), found by
/// damped Newton iteration on the four position unknowns with a
/// central-difference Jacobian. Independent of the time integrator.
pub fn static_equilibrium(config: &BearingConfig, external: Vec2) -> Result<BearingState, SimError> {
    let model = BearingModel::new(config)?;
    if external == Vec2::ZERO {
        return Ok(BearingState::default());
    }
    let residual = |x: &[f64; 4]| -> Result<[f64; 4], SimError> {
        let mut state = BearingState::default();
        state.inner.position = Vec2::new(x[0], x[1]);
        state.outer.position = Vec2::new(x[2], x[3]);
        let f = model.assemble_forces(&state, external)?;
        Ok([f.net_inner.x, f.net_inner.y, f.net_outer.x, f.net_outer.y])
    };
    let norm = |r: &[f64; 4]| r.iter().map(|v| v * v).sum::<f64>().sqrt();

    // Contacts pass the whole load to the ground spring; start the outer
    // ring displaced as if a single roller carried it.
    let inner0 = (1.0 / config.ground_spring_stiffness) * external;
    let unit = (1.0 / external.norm()) * external;
    let gap = (2.0 * model.law.deflection(external.norm()) + model.geom.clearance_gap) / MM_PER_M;
    let outer0 = inner0 + gap * unit;
    let mut x = [inner0.x, inner0.y, outer0.x, outer0.y];
    let mut r = residual(&x)?;
    let mut r_norm = norm(&r);

    for _ in 0..EQUILIBRIUM_MAX_ITERATIONS {
        if r_norm < EQUILIBRIUM_TOLERANCE_N {
            let mut state = BearingState::default();
            state.inner.position = Vec2::new(x[0], x[1]);
            state.outer.position = Vec2::new(x[2], x[3]);
            return Ok(state);
        }
        let h = 1e-10;
        let mut jac = [[0.0; 4]; 4];
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (rp, rm) = (residual(&xp)?, residual(&xm)?);
            for i in 0..4 {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let Some(dx) = solve4(jac, r.map(|v| -v)) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: [f64; 4] = std::array::from_fn(|i| x[i] + alpha * dx[i]);
            if let Ok(rt) = residual(&trial) {
                let nt = norm(&rt);
                if nt < r_norm {
                    x = trial;
                    r = rt;
                    r_norm = nt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r_norm < EQUILIBRIUM_TOLERANCE_N {
        let mut state = BearingState::default();
        state.inner.position = Vec2::new(x[0], x[1]);
        state.outer.position = Vec2::new(x[2], x[3]);
        return Ok(state);
    }
    Err(SimError::NoConvergence {
        iterations: EQUILIBRIUM_MAX_ITERATIONS,
        residual: r_norm,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let factor = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}
