//! Closed-loop perching simulation on a horizontal cylinder: 6-DOF flight,
//! compliant frame contact at the grasper palm, grasper snap-through, a
//! finger clamp once curled, and a rigid weld while perched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contact::ContactModel;
use crate::control::{ControllerGains, PositionAttitudeController, Rotorcraft};
use crate::dynamics::{
    derivative, integrate_step, Disturbance, InertialParams, RigidBodyState, SimError, DIVERGENCE_SPEED,
};
use crate::grasper::{GrasperMode, GrasperSpec, GrasperState};
use crate::math::{Rot3, Vec3};
use crate::mission::{descent_velocity, MissionEvent, MissionParams, MissionState, Phase, Signals};

/// Distance to a surface below which the fine step is used (m).
const NEAR_CONTACT: f64 = 0.05;

/// Cylinder with its axis along inertial x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cylinder {
    /// m.
    pub axis_y: f64,
    /// Altitude of the top surface (m, up).
    pub top_altitude: f64,
    /// m.
    pub diameter: f64,
}

impl Cylinder {
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    /// Axis centre in the y-z plane (z down).
    pub fn axis(&self) -> (f64, f64) {
        (self.axis_y, -self.top_altitude + self.radius())
    }
}

/// Finger compliance once curled around the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClampParams {
    /// N/m.
    pub stiffness: f64,
    /// N·s/m.
    pub damping: f64,
    /// N·m/rad.
    pub rot_stiffness: f64,
    /// N·m·s/rad.
    pub rot_damping: f64,
    /// Largest palm–surface gap the closing fingers still capture (m).
    pub capture_gap: f64,
}

impl Default for ClampParams {
    fn default() -> Self {
        ClampParams { stiffness: 2.0e3, damping: 40.0, rot_stiffness: 20.0, rot_damping: 1.0, capture_gap: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamp {
    pub anchor: Vec3,
    /// Outward surface normal at the anchor.
    pub normal: Vec3,
    pub attitude: Rot3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerchWorld {
    pub perch: Cylinder,
    /// Frame compliance against the perch and the ground.
    pub frame_contact: ContactModel,
    /// Grasper palm in the body frame (m).
    pub palm_offset: Vec3,
    /// Half-width of the frame underside that can bear on the perch (m).
    pub frame_span: f64,
    pub clamp: ClampParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactReading {
    pub perch_force: Vec3,
    pub ground_force: Vec3,
    pub clamp_force: Vec3,
    pub torque: Vec3,
    /// Signed palm–perch gap (m, negative in contact).
    pub perch_gap: f64,
    pub ground_gap: f64,
}

impl ContactReading {
    /// Load carried through the grasper.
    pub fn grasp_load(&self) -> f64 {
        (self.perch_force + self.clamp_force).norm()
    }

    pub fn total_force(&self) -> Vec3 {
        self.perch_force + self.ground_force + self.clamp_force
    }

    pub fn disturbance(&self) -> Disturbance {
        Disturbance { force: self.total_force(), torque: self.torque }
    }
}

impl PerchWorld {
    pub fn palm(&self, s: &RigidBodyState) -> (Vec3, Vec3) {
        let r = s.attitude.apply(&self.palm_offset);
        let v = s.velocity + s.attitude.apply(&s.angular_rate.cross(&self.palm_offset));
        (s.position + r, v)
    }

    pub fn contact(&self, s: &RigidBodyState, clamp: Option<&Clamp>) -> ContactReading {
        let (p, v) = self.palm(s);
        let mut out = ContactReading::default();

        // The frame underside bears on the top line of the perch; its lumped
        // compliance is the one calibrated against flat-ground drops.
        let (ay, az) = self.perch.axis();
        let top = az - self.perch.radius();
        let dy = p.y - ay;
        out.perch_gap = if dy.abs() < self.perch.radius() {
            let d = Vec3::new(0.0, dy, p.z - az).norm() - self.perch.radius();
            d.min(top - p.z)
        } else {
            Vec3::new(0.0, dy.abs() - self.perch.radius(), (p.z - az).max(0.0)).norm()
        };
        if p.z > top && dy.abs() < self.frame_span {
            let f = self.frame_contact.force(p.z - top, v.z);
            out.perch_force = Vec3::new(0.0, 0.0, -f);
        }

        out.ground_gap = -p.z;
        if out.ground_gap < 0.0 {
            let f = self.frame_contact.force(-out.ground_gap, v.z);
            out.ground_force = Vec3::new(0.0, 0.0, -f);
        }

        let mut torque_extra = Vec3::zeros();
        if let Some(c) = clamp {
            let u = p - c.anchor;
            let un = u.dot(&c.normal);
            let vn = v.dot(&c.normal);
            let ut = u - un * c.normal;
            let vt = v - vn * c.normal;
            // Fingers resist pull-off and sliding but not further compression.
            let mut f = -self.clamp.stiffness * ut - self.clamp.damping * vt;
            if un > 0.0 {
                f -= (self.clamp.stiffness * un + self.clamp.damping * vn) * c.normal;
            }
            out.clamp_force = f;
            let err = crate::control::attitude_error(&s.attitude, &c.attitude);
            torque_extra = -self.clamp.rot_stiffness * err - self.clamp.rot_damping * s.angular_rate;
        }

        let body_force = s.attitude.transpose().apply(&out.total_force());
        out.torque = self.palm_offset.cross(&body_force) + torque_extra;
        out
    }

    pub fn near_contact(&self, s: &RigidBodyState, clamp: Option<&Clamp>) -> bool {
        let r = self.contact(s, clamp);
        clamp.is_some() || r.perch_gap < NEAR_CONTACT || r.ground_gap < NEAR_CONTACT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerchSetup {
    pub params: InertialParams,
    pub hardware: Rotorcraft,
    pub gains: ControllerGains,
    pub world: PerchWorld,
    pub grasper: GrasperSpec,
    pub mission: MissionParams,
    /// Take-off point (x, y) on the ground (m).
    pub start: [f64; 2],
    /// Lateral error of the perceived perch position (m).
    pub lateral_offset: f64,
    /// Simulated time limit (s).
    pub duration: f64,
    /// Minimum spacing of logged rows (s).
    pub log_interval: f64,
    /// Free-flight step (s).
    pub dt: f64,
    /// Step near or in contact (s).
    pub contact_dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub t: f64,
    pub state: RigidBodyState,
    pub motor_thrusts: [f64; 4],
    pub contact_force: f64,
    pub grasper: GrasperMode,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PerchStats {
    /// Palm speed at first perch contact (m/s).
    pub impact_speed: Option<f64>,
    /// Largest load on the engaged grasper (N).
    pub peak_grasp_load: f64,
    /// Largest perch contact force (N).
    pub peak_contact_force: f64,
    pub capacity: f64,
    pub slipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerchOutcome {
    pub verdict: Phase,
    pub events: Vec<MissionEvent>,
    pub rows: Vec<LogRow>,
    pub stats: PerchStats,
    pub lateral_offset: f64,
}

impl PerchOutcome {
    pub fn phase_sequence(&self) -> Vec<Phase> {
        let mut seq = vec![Phase::Approach];
        seq.extend(self.events.iter().map(|e| e.to));
        seq
    }
}

/// Uniform lateral offsets in `±amplitude`, one per trial.
pub fn lateral_offsets(seed: u64, trials: usize, amplitude: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials).map(|_| if amplitude > 0.0 { rng.gen_range(-amplitude..=amplitude) } else { 0.0 }).collect()
}

pub fn run_perch(setup: &PerchSetup) -> Result<PerchOutcome, SimError> {
    let world = &setup.world;
    let params = &setup.params;
    let capacity = setup.grasper.grasp_capacity(world.perch.diameter * 1e3);
    let mut stats = PerchStats { capacity, ..Default::default() };

    // Rest on the ground at static compression.
    let z0 = world.frame_contact.static_compression(params.weight()) - world.palm_offset.z;
    let mut state = RigidBodyState::at_rest(Vec3::new(setup.start[0], setup.start[1], z0));
    let target = Vec3::new(
        0.0,
        world.perch.axis_y + setup.lateral_offset,
        -world.perch.top_altitude - world.palm_offset.z,
    );
    let mut mission_params = setup.mission;
    mission_params.landing_pad = setup.start;
    let mut mission = MissionState::new(target, mission_params, descent_velocity(&setup.grasper));
    let mut grasper = GrasperState::default();
    let mut controller = PositionAttitudeController::new(setup.gains, *params);
    let mut clamp: Option<Clamp> = None;
    let mut weld: Option<RigidBodyState> = None;
    let mut events = Vec::new();
    let mut rows = Vec::new();
    let mut slip = false;
    let mut t = 0.0;
    let mut dt = setup.dt;
    let mut last_log = f64::NEG_INFINITY;
    let mut motors: [f64; 4];

    while t < setup.duration && !mission.phase.is_terminal() {
        let reading = world.contact(&state, clamp.as_ref());
        let signals = Signals { slip, ground_contact: reading.ground_force.norm() > 0.0 };
        slip = false;
        let out = mission.step(t, &state, &grasper, signals, dt);
        let event = out.event;
        if let Some(e) = event {
            events.push(e);
        }

        if mission.phase.is_perched() && weld.is_none() {
            let mut w = state;
            w.velocity = Vec3::zeros();
            w.angular_rate = Vec3::zeros();
            weld = Some(w);
        } else if !mission.phase.is_perched() && weld.is_some() {
            weld = None;
            clamp = None;
            controller.reset();
        }

        dt = if weld.is_none() && world.near_contact(&state, clamp.as_ref()) { setup.contact_dt } else { setup.dt };

        if let Some(w) = weld {
            // Static load on the weld is the weight alone.
            if params.weight() > capacity {
                slip = true;
                stats.slipped = true;
            }
            state = w;
            motors = [0.0; 4];
        } else {
            let u = controller.update(&state, &out.setpoint, dt);
            let act = if out.setpoint.motors_off {
                Default::default()
            } else {
                setup.hardware.command(&u, &state.attitude).map(|o| o.actuation).unwrap_or_default()
            };
            motors = act.motor_thrusts;
            let c = clamp;
            state = integrate_step(&state, t, dt, |_, s| {
                let dist = act.disturbance + world.contact(s, c.as_ref()).disturbance();
                derivative(s, act.thrust, &act.moment, params, &dist)
            })?;
            let speed = state.velocity.norm();
            if !(speed <= DIVERGENCE_SPEED) {
                return Err(SimError::Diverged { t, speed });
            }
        }
        t += dt;

        let after = world.contact(&state, clamp.as_ref());
        let perch_normal = after.perch_force.norm();
        if perch_normal > 0.0 && stats.impact_speed.is_none() {
            stats.impact_speed = Some(world.palm(&state).1.norm());
        }
        stats.peak_contact_force = stats.peak_contact_force.max(perch_normal);
        // Recoil pressure holds the fingers open until the vehicle is clear.
        if grasper.mode == GrasperMode::Straight && mission.phase == Phase::Descent {
            grasper.apply_contact(perch_normal, &setup.grasper);
        }
        let before = grasper.mode;
        grasper.advance(dt, &setup.grasper);
        grasper.recoil(out.recoil_kpa, dt, &setup.grasper);
        if before == GrasperMode::Activating && grasper.mode == GrasperMode::Curled {
            if after.perch_gap <= world.clamp.capture_gap {
                let (p, _) = world.palm(&state);
                clamp = Some(Clamp { anchor: p, normal: -Vec3::z(), attitude: state.attitude });
                grasper.engaged_object = Some("perch".into());
            } else {
                // Closed on nothing.
                grasper.engaged_object = None;
            }
        }
        if grasper.mode == GrasperMode::Straight {
            clamp = None;
        }
        if clamp.is_some() && weld.is_none() {
            let load = world.contact(&state, clamp.as_ref()).grasp_load();
            stats.peak_grasp_load = stats.peak_grasp_load.max(load);
            if load > capacity {
                slip = true;
                stats.slipped = true;
                clamp = None;
                grasper.engaged_object = None;
            }
        }

        if t - last_log >= setup.log_interval - 1e-12 || event.is_some() {
            rows.push(LogRow {
                t,
                state,
                motor_thrusts: motors,
                contact_force: after.total_force().norm(),
                grasper: grasper.mode,
                phase: mission.phase,
            });
            last_log = t;
        }
    }
    if !mission.phase.is_terminal() {
        let e = if slip {
            mission.step(t, &state, &grasper, Signals { slip: true, ground_contact: false }, 0.0).event
        } else {
            mission.abort(t)
        };
        events.extend(e);
    }
    Ok(PerchOutcome {
        verdict: mission.phase,
        events,
        rows,
        stats,
        lateral_offset: setup.lateral_offset,
    })
}
