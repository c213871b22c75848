//! Motor mixing, thrust-loss compensation and the cascaded position /
//! geometric attitude controller.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::airframe::{drift_force, AirframeError, AirframeModel, FrameConfig};
use crate::dynamics::{Actuation, Disturbance, FlightController, InertialParams, RigidBodyState};
use crate::math::{e3, vee, Mat3, Rot3, Vec3};

pub const MAX_MOTOR_THRUST: f64 = 10.0;
const COMPENSATION_ITERS: usize = 20;
const COMPENSATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationParams {
    /// COM to rotor distance (m).
    pub arm_offset: f64,
    /// Yaw reaction torque per newton of thrust (m).
    pub reaction_coeff: f64,
    pub config: FrameConfig,
}

impl Default for AllocationParams {
    fn default() -> Self {
        AllocationParams { arm_offset: 0.18, reaction_coeff: 0.0245, config: FrameConfig::Plus }
    }
}

impl AllocationParams {
    /// Rotor positions in the body frame. Rotor 1 leads, numbering runs
    /// towards +y.
    pub fn rotor_positions(&self) -> [Vec3; 4] {
        let d = self.arm_offset;
        let phase = match self.config {
            FrameConfig::Plus => 0.0,
            FrameConfig::Cross => std::f64::consts::FRAC_PI_4,
        };
        std::array::from_fn(|i| {
            let a = phase + i as f64 * std::f64::consts::FRAC_PI_2;
            Vec3::new(d * a.cos(), d * a.sin(), 0.0)
        })
    }

    /// Maps per-rotor thrusts to `[f, Mx, My, Mz]`. Rotors 1 and 3 spin so
    /// their reaction torque is about −z.
    pub fn matrix(&self) -> Matrix4<f64> {
        let p = self.rotor_positions();
        let c = self.reaction_coeff;
        let mut a = Matrix4::zeros();
        for (i, r) in p.iter().enumerate() {
            let spin = if i % 2 == 0 { -1.0 } else { 1.0 };
            a[(0, i)] = 1.0;
            a[(1, i)] = -r.y;
            a[(2, i)] = r.x;
            a[(3, i)] = spin * c;
        }
        // Clean the cos/sin rounding so the plus layout is exact.
        a.apply(|v| {
            if v.abs() < 1e-15 {
                *v = 0.0
            }
        });
        a
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.arm_offset > 0.0 && self.reaction_coeff > 0.0) {
            return Err("arm_offset and reaction_coeff must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub thrust: f64,
    pub moment: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub thrusts: [f64; 4],
    /// False when any rotor was clamped.
    pub exact: bool,
}

/// Solves the mixer for per-rotor effective thrusts, clamped to `[0, 10]` N.
pub fn allocate(u: &ControlInput, params: &AllocationParams) -> Allocation {
    let a = params.matrix();
    let inv = a.try_inverse().expect("allocation matrix is invertible for d, c > 0");
    let n = inv * Vector4::new(u.thrust, u.moment.x, u.moment.y, u.moment.z);
    let mut exact = true;
    let thrusts = std::array::from_fn(|i| {
        let v = n[i];
        let c = v.clamp(0.0, MAX_MOTOR_THRUST);
        if c != v {
            exact = false;
        }
        c
    });
    Allocation { thrusts, exact }
}

/// `[f, M]` produced by per-rotor effective thrusts.
pub fn mix(thrusts: &[f64; 4], params: &AllocationParams) -> ControlInput {
    let w = params.matrix() * Vector4::from_column_slice(thrusts);
    ControlInput { thrust: w[0], moment: Vec3::new(w[1], w[2], w[3]) }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensation {
    pub command: f64,
    pub saturated: bool,
    pub iterations: usize,
}

/// Motor thrust whose axial component after arm deflection equals `effective`.
pub fn compensate_thrust_loss(effective: f64, airframe: &AirframeModel) -> Result<Compensation, AirframeError> {
    compensate_scaled(effective, airframe, 1.0)
}

pub fn compensate_scaled(effective: f64, airframe: &AirframeModel, modulus_scale: f64) -> Result<Compensation, AirframeError> {
    if effective < 0.0 {
        return Err(AirframeError::NegativeThrust(effective));
    }
    if effective == 0.0 || airframe.rigid {
        airframe.modulus()?;
        let saturated = effective > MAX_MOTOR_THRUST;
        return Ok(Compensation { command: effective.min(MAX_MOTOR_THRUST), saturated, iterations: 0 });
    }
    let mut f = effective;
    let mut iterations = 0;
    for _ in 0..COMPENSATION_ITERS {
        iterations += 1;
        let coeff = airframe.beam_deflection_scaled(f, modulus_scale)?.thrust_loss_coeff;
        let next = effective / coeff;
        let done = (next - f).abs() < COMPENSATION_TOL;
        f = next;
        if done {
            break;
        }
    }
    if f > MAX_MOTOR_THRUST {
        return Ok(Compensation { command: MAX_MOTOR_THRUST, saturated: true, iterations });
    }
    Ok(Compensation { command: f, saturated: false, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    /// Position error → velocity command (1/s).
    pub kp_pos: f64,
    pub kp_vel: f64,
    pub ki_vel: f64,
    pub kd_vel: f64,
    pub k_r: f64,
    pub k_omega: f64,
    /// Integral term limit, as a force (N).
    pub integral_clamp: f64,
    /// Velocity command limit in position mode (m/s).
    pub max_speed: f64,
    /// Tilt limit on the commanded thrust vector (rad).
    pub max_tilt: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            kp_pos: 1.2,
            kp_vel: 3.0,
            ki_vel: 0.8,
            kd_vel: 0.05,
            k_r: 2.0,
            k_omega: 0.35,
            integral_clamp: 2.0,
            max_speed: 1.0,
            max_tilt: 0.5,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.kp_pos, self.kp_vel, self.ki_vel, self.kd_vel, self.k_r, self.k_omega];
        if all.iter().any(|g| !(*g >= 0.0)) {
            return Err("controller gains must be non-negative".into());
        }
        if !(self.integral_clamp > 0.0 && self.max_speed > 0.0 && self.max_tilt > 0.0) {
            return Err("integral_clamp, max_speed and max_tilt must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AxisRef {
    Position(f64),
    Velocity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub axes: [AxisRef; 3],
    pub yaw: f64,
    /// Acceleration feedforward added to the velocity loop (m/s², z down).
    pub accel_ff: Vec3,
    /// Command zero thrust and zero moment (propellers off).
    pub motors_off: bool,
}

impl Setpoint {
    pub fn hold(position: Vec3, yaw: f64) -> Self {
        Setpoint {
            axes: [AxisRef::Position(position.x), AxisRef::Position(position.y), AxisRef::Position(position.z)],
            yaw,
            accel_ff: Vec3::zeros(),
            motors_off: false,
        }
    }

    pub fn off() -> Self {
        Setpoint { motors_off: true, ..Setpoint::hold(Vec3::zeros(), 0.0) }
    }
}

/// Geometric attitude error `½ (R_dᵀR − RᵀR_d)ᵛ`.
pub fn attitude_error(r: &Rot3, r_d: &Rot3) -> Vec3 {
    let (r, rd) = (r.matrix(), r_d.matrix());
    0.5 * vee(&(rd.transpose() * r - r.transpose() * rd))
}

/// Rotation whose third axis is `b3` with heading as close to `yaw` as possible.
fn desired_attitude(b3: &Vec3, yaw: f64) -> Rot3 {
    let b1c = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut b2 = b3.cross(&b1c);
    if b2.norm() < 1e-9 {
        b2 = b3.cross(&Vec3::new(-yaw.sin(), yaw.cos(), 0.0)).cross(b3);
    }
    let b2 = b2.normalize();
    let b1 = b2.cross(b3);
    Rot3::from_matrix_unchecked(Mat3::from_columns(&[b1, b2, *b3]))
}

/// Cascaded P (position) → PID (velocity) → geometric attitude loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionAttitudeController {
    pub gains: ControllerGains,
    pub params: InertialParams,
    integral: Vec3,
    prev_velocity: Option<Vec3>,
}

impl PositionAttitudeController {
    pub fn new(gains: ControllerGains, params: InertialParams) -> Self {
        PositionAttitudeController { gains, params, integral: Vec3::zeros(), prev_velocity: None }
    }

    pub fn reset(&mut self) {
        self.integral = Vec3::zeros();
        self.prev_velocity = None;
    }

    pub fn integral(&self) -> Vec3 {
        self.integral
    }

    pub fn update(&mut self, state: &RigidBodyState, sp: &Setpoint, dt: f64) -> ControlInput {
        if sp.motors_off {
            self.reset();
            return ControlInput::default();
        }
        let g = self.gains;
        let m = self.params.mass;
        let mut v_cmd = Vec3::zeros();
        let mut pos_mode = [false; 3];
        for i in 0..3 {
            v_cmd[i] = match sp.axes[i] {
                AxisRef::Position(p) => {
                    pos_mode[i] = true;
                    g.kp_pos * (p - state.position[i])
                }
                AxisRef::Velocity(v) => v,
            };
        }
        let horiz = Vec3::new(v_cmd.x, v_cmd.y, 0.0).norm();
        if horiz > g.max_speed && pos_mode[0] && pos_mode[1] {
            let s = g.max_speed / horiz;
            v_cmd.x *= s;
            v_cmd.y *= s;
        }
        if pos_mode[2] {
            v_cmd.z = v_cmd.z.clamp(-g.max_speed, g.max_speed);
        }
        let e_v = v_cmd - state.velocity;
        let accel_meas = match self.prev_velocity {
            Some(pv) if dt > 0.0 => (state.velocity - pv) / dt,
            _ => Vec3::zeros(),
        };
        self.prev_velocity = Some(state.velocity);
        let limit = g.integral_clamp / m;
        if g.ki_vel > 0.0 {
            self.integral += e_v * dt;
            let bound = limit / g.ki_vel;
            self.integral = self.integral.map(|v| v.clamp(-bound, bound));
        }
        let mut a_cmd = sp.accel_ff + g.kp_vel * e_v + g.ki_vel * self.integral - g.kd_vel * accel_meas;
        // Keep the thrust vector inside the tilt cone.
        let gz = self.params.gravity;
        let vertical = gz - a_cmd.z;
        let max_h = vertical.max(0.0) * g.max_tilt.tan();
        let h = Vec3::new(a_cmd.x, a_cmd.y, 0.0).norm();
        if h > max_h {
            a_cmd.x *= max_h / h;
            a_cmd.y *= max_h / h;
        }
        let a_vec = m * a_cmd - m * gz * e3();
        let thrust_dir = -a_vec;
        let norm = thrust_dir.norm();
        // Body z points down, so b3 follows −A (gravity-aligned at hover).
        // No upward demand (free fall): stay level.
        let b3d = if norm > 1e-9 && thrust_dir.z > 1e-9 { thrust_dir / norm } else { e3() };
        let r_d = desired_attitude(&b3d, sp.yaw);
        let r = state.attitude.matrix();
        let thrust = (-a_vec.dot(&(r * e3()))).max(0.0);
        let e_r = attitude_error(&state.attitude, &r_d);
        let omega = state.angular_rate;
        let e_omega = omega;
        let j = self.params.inertia;
        let moment = -g.k_r * e_r - g.k_omega * e_omega + omega.cross(&(j * omega));
        ControlInput { thrust, moment }
    }
}

/// Rotor and frame hardware: turns `[f, M]` into motor commands and back
/// into the wrench the frame actually delivers.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotorcraft {
    pub allocation: AllocationParams,
    pub airframe: AirframeModel,
    /// Per-arm modulus multipliers (1 = nominal).
    pub arm_modulus_scale: [f64; 4],
    /// Compensate for thrust loss in the command path.
    pub compensate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorOutput {
    pub commands: [f64; 4],
    pub saturated: bool,
    pub actuation: Actuation,
}

impl Rotorcraft {
    pub fn new(allocation: AllocationParams, airframe: AirframeModel) -> Self {
        Rotorcraft { allocation, airframe, arm_modulus_scale: [1.0; 4], compensate: true }
    }

    pub fn command(&self, u: &ControlInput, attitude: &Rot3) -> Result<MotorOutput, AirframeError> {
        let alloc = allocate(u, &self.allocation);
        let mut saturated = !alloc.exact;
        let mut commands = alloc.thrusts;
        if self.compensate {
            for i in 0..4 {
                let c = compensate_scaled(alloc.thrusts[i], &self.airframe, self.arm_modulus_scale[i])?;
                saturated |= c.saturated;
                commands[i] = c.command;
            }
        }
        let actuation = self.deliver(&commands, attitude)?;
        Ok(MotorOutput { commands, saturated, actuation })
    }

    /// Wrench from motor commands `F_i` after deflection losses.
    pub fn deliver(&self, commands: &[f64; 4], attitude: &Rot3) -> Result<Actuation, AirframeError> {
        let mut eff = [0.0; 4];
        let mut angles = [0.0; 4];
        for i in 0..4 {
            let d = self.airframe.beam_deflection_scaled(commands[i], self.arm_modulus_scale[i])?;
            eff[i] = commands[i] * d.thrust_loss_coeff;
            angles[i] = d.tip_angle;
        }
        let u = mix(&eff, &self.allocation);
        let drift_body = drift_force(*commands, angles);
        Ok(Actuation {
            thrust: u.thrust,
            moment: u.moment,
            motor_thrusts: *commands,
            disturbance: Disturbance::force(attitude.apply(&drift_body)),
        })
    }
}

/// Controller + hardware tracking a fixed setpoint, with an optional constant
/// inertial disturbance force.
pub struct SetpointTracker {
    pub controller: PositionAttitudeController,
    pub hardware: Rotorcraft,
    pub setpoint: Setpoint,
    pub extra_force: Vec3,
}

impl FlightController for SetpointTracker {
    fn control(&mut self, _t: f64, state: &RigidBodyState, dt: f64) -> Actuation {
        let u = self.controller.update(state, &self.setpoint, dt);
        let mut act = self
            .hardware
            .command(&u, &state.attitude)
            .map(|o| o.actuation)
            .unwrap_or_default();
        act.disturbance.force += self.extra_force;
        act
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, FreeSpace, SimOptions};
    use proptest::prelude::*;

    fn plus_params() -> AllocationParams {
        AllocationParams::default()
    }

    #[test]
    fn plus_matrix_matches_hand_layout() {
        let d = 0.18;
        let c = 0.0245;
        #[rustfmt::skip]
        let expected = Matrix4::new(
            1.0, 1.0, 1.0, 1.0,
            0.0, -d, 0.0, d,
            d, 0.0, -d, 0.0,
            -c, c, -c, c,
        );
        assert!((plus_params().matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn hover_split() {
        let a = allocate(&ControlInput { thrust: 11.18, moment: Vec3::zeros() }, &plus_params());
        for f in a.thrusts {
            assert!((f - 2.795).abs() < 1e-12);
        }
        assert!(a.exact);
    }

    #[test]
    fn pure_roll() {
        let a = allocate(&ControlInput { thrust: 8.0, moment: Vec3::new(0.36, 0.0, 0.0) }, &plus_params());
        let expected = [2.0, 1.0, 2.0, 3.0];
        for (f, e) in a.thrusts.iter().zip(expected) {
            assert!((f - e).abs() < 1e-12, "{:?}", a.thrusts);
        }
    }

    #[test]
    fn clamping_is_reported() {
        let a = allocate(&ControlInput { thrust: 50.0, moment: Vec3::zeros() }, &plus_params());
        assert!(!a.exact);
        assert!(a.thrusts.iter().all(|f| *f == 10.0));
        let a = allocate(&ControlInput { thrust: 1.0, moment: Vec3::new(1.0, 0.0, 0.0) }, &plus_params());
        assert!(!a.exact && a.thrusts[1] == 0.0);
    }

    #[test]
    fn compensation_examples() {
        let air = AirframeModel::soft(207.0, FrameConfig::Plus);
        assert_eq!(compensate_thrust_loss(0.0, &air).unwrap().command, 0.0);
        let target = air.effective_thrust(10.0).unwrap();
        let c = compensate_thrust_loss(target, &air).unwrap();
        assert!((c.command - 10.0).abs() < 1e-3, "{c:?}");
        assert!(c.iterations <= 20);
        // 9.949 N rounds θ to 5.8°; the beam model gives 5.73°, so the
        // inverse lands 1.1e-3 N short of 10.
        let c = compensate_thrust_loss(9.949, &air).unwrap();
        assert!((c.command - 10.0).abs() < 2e-3, "{c:?}");
        let rigid = AirframeModel::rigid(FrameConfig::Plus);
        assert_eq!(compensate_thrust_loss(3.3, &rigid).unwrap().command, 3.3);
        assert!(compensate_thrust_loss(9.99, &air).unwrap().saturated);
    }

    #[test]
    fn equilibrium_command() {
        let p = InertialParams::default();
        let mut ctl = PositionAttitudeController::new(ControllerGains::default(), p);
        let u = ctl.update(&RigidBodyState::default(), &Setpoint::hold(Vec3::zeros(), 0.0), 1e-3);
        assert!((u.thrust - p.weight()).abs() < 1e-12);
        assert!(u.moment.norm() < 1e-12);
    }

    #[test]
    fn motors_off_zeroes_everything() {
        let mut ctl = PositionAttitudeController::new(ControllerGains::default(), InertialParams::default());
        let u = ctl.update(&RigidBodyState::default(), &Setpoint::off(), 1e-3);
        assert_eq!(u, ControlInput::default());
    }

    fn tracker(sp: Setpoint, extra: Vec3) -> SetpointTracker {
        let p = InertialParams::default();
        SetpointTracker {
            controller: PositionAttitudeController::new(ControllerGains::default(), p),
            hardware: Rotorcraft::new(plus_params(), AirframeModel::soft(207.0, FrameConfig::Plus)),
            setpoint: sp,
            extra_force: extra,
        }
    }

    #[test]
    fn hover_hold() {
        let p = InertialParams::default();
        let start = Vec3::new(0.0, 0.0, -1.0);
        let mut t = tracker(Setpoint::hold(start, 0.0), Vec3::zeros());
        let traj = simulate(RigidBodyState::at_rest(start), &p, &mut t, &FreeSpace, SimOptions::new(5.0)).unwrap();
        let worst = traj.samples.iter().map(|s| (s.state.position - start).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn rejects_lateral_drift() {
        let p = InertialParams::default();
        let start = Vec3::new(0.0, 0.0, -1.0);
        let mut t = tracker(Setpoint::hold(start, 0.0), Vec3::new(0.5, 0.0, 0.0));
        let traj = simulate(RigidBodyState::at_rest(start), &p, &mut t, &FreeSpace, SimOptions::new(15.0)).unwrap();
        let e = traj.last().unwrap().state.position - start;
        assert!(e.iter().all(|v| v.abs() < 0.05), "{e:?}");
    }

    #[test]
    fn step_settles() {
        let p = InertialParams::default();
        let start = Vec3::new(0.0, 0.0, -1.0);
        let goal = start + Vec3::new(0.2, 0.0, 0.0);
        let mut t = tracker(Setpoint::hold(goal, 0.0), Vec3::zeros());
        let traj = simulate(RigidBodyState::at_rest(start), &p, &mut t, &FreeSpace, SimOptions::new(20.0)).unwrap();
        let settle = settling_time(&traj, &goal, 0.01);
        assert!(settle < 13.0, "{settle}");
    }

    fn settling_time(traj: &crate::dynamics::Trajectory, goal: &Vec3, band: f64) -> f64 {
        let mut last_out = 0.0;
        for s in &traj.samples {
            if (s.state.position - goal).norm() > band {
                last_out = s.t;
            }
        }
        last_out
    }

    #[test]
    fn hover_is_yaw_equivariant() {
        let p = InertialParams::default();
        let start = Vec3::new(0.1, -0.2, -1.0);
        let goal = Vec3::new(0.3, 0.0, -1.2);
        let run = |yaw: f64| {
            let rz = Rot3::from_yaw(yaw);
            let mut t = tracker(Setpoint::hold(rz.apply(&goal), yaw), Vec3::zeros());
            let s0 = RigidBodyState { attitude: rz, ..RigidBodyState::at_rest(rz.apply(&start)) };
            simulate(s0, &p, &mut t, &FreeSpace, SimOptions::new(3.0)).unwrap()
        };
        let a = run(0.0);
        let yaw = 0.7;
        let b = run(yaw);
        let rz = Rot3::from_yaw(yaw);
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert!((rz.apply(&sa.state.position) - sb.state.position).norm() < 1e-9);
        }
    }

    fn arb_rot() -> impl Strategy<Value = Rot3> {
        proptest::array::uniform3(-3.0..3.0f64).prop_map(|w| Rot3::exp(&Vec3::from(w)))
    }

    proptest! {
        #[test]
        fn allocation_round_trip(f in proptest::array::uniform4(0.0..10.0f64)) {
            let params = plus_params();
            let u = mix(&f, &params);
            let a = allocate(&u, &params);
            let back = mix(&a.thrusts, &params);
            prop_assert!(a.exact);
            prop_assert!((back.thrust - u.thrust).abs() < 1e-12);
            prop_assert!((back.moment - u.moment).norm() < 1e-12);
        }

        #[test]
        fn cross_round_trip(f in proptest::array::uniform4(0.0..10.0f64)) {
            let params = AllocationParams { config: FrameConfig::Cross, ..plus_params() };
            let u = mix(&f, &params);
            let a = allocate(&u, &params);
            for (x, y) in a.thrusts.iter().zip(f) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn compensation_is_monotone(a in 0.0..9.0f64, b in 0.0..9.0f64) {
            let air = AirframeModel::soft(150.0, FrameConfig::Plus);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let cl = compensate_thrust_loss(lo, &air).unwrap().command;
            let ch = compensate_thrust_loss(hi, &air).unwrap().command;
            prop_assert!(cl <= ch);
            prop_assert!(cl >= lo);
            let back = air.effective_thrust(ch).unwrap();
            if ch < MAX_MOTOR_THRUST {
                prop_assert!((back - hi).abs() < 1e-5);
            }
        }

        #[test]
        fn attitude_error_vanishes_only_at_target(r in arb_rot(), d in arb_rot()) {
            prop_assert!(attitude_error(&r, &r).norm() < 1e-12);
            let e = attitude_error(&r, &d);
            let diff = (r.matrix() - d.matrix()).norm();
            // e_R = 0 away from R = R_d only at 180° relative rotations.
            let angle = ((d.transpose().compose(&r).matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            if diff > 1e-3 && angle < 3.0 {
                prop_assert!(e.norm() > 1e-6);
            }
        }
    }
}
