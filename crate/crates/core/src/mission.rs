//! Perching mission sequencer: approach, hover, descent, engagement, perched
//! wait, recovery, takeoff and landing, driven by events and timers.

use serde::{Deserialize, Serialize};

use crate::control::{AxisRef, Setpoint};
use crate::dynamics::{RigidBodyState, GRAVITY};
use crate::grasper::{GrasperMode, GrasperSpec, GrasperState};
use crate::math::{e3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Hover,
    Descent,
    Perched,
    Wait,
    Recovery,
    Takeoff,
    Land,
    Done,
    Failed,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::Approach => "approach",
            Phase::Hover => "hover",
            Phase::Descent => "descent",
            Phase::Perched => "perched",
            Phase::Wait => "wait",
            Phase::Recovery => "recovery",
            Phase::Takeoff => "takeoff",
            Phase::Land => "land",
            Phase::Done => "done",
            Phase::Failed => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }

    /// Phases where the grasp carries the vehicle.
    pub fn is_perched(&self) -> bool {
        matches!(self, Phase::Perched | Phase::Wait | Phase::Recovery)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PositionConverged,
    GrasperEngaged,
    VelocitiesZero,
    WaitElapsed,
    RecoilComplete,
    Landed,
    SlipDetected,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionEvent {
    pub timestamp: f64,
    pub kind: EventKind,
    pub from: Phase,
    pub to: Phase,
}

/// The phase graph. `None` means the event does not apply in that phase.
pub fn next_phase(phase: Phase, kind: EventKind) -> Option<Phase> {
    use EventKind::*;
    use Phase::*;
    match (phase, kind) {
        (p, _) if p.is_terminal() => None,
        (_, Timeout) => Some(Failed),
        (Descent | Perched | Wait | Recovery, SlipDetected) => Some(Failed),
        (Approach, PositionConverged) => Some(Hover),
        (Hover, PositionConverged) => Some(Descent),
        (Descent, GrasperEngaged) => Some(Perched),
        (Perched, VelocitiesZero) => Some(Wait),
        (Wait, WaitElapsed) => Some(Recovery),
        (Recovery, RecoilComplete) => Some(Takeoff),
        (Takeoff, PositionConverged) => Some(Land),
        (Land, Landed) => Some(Done),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MissionError {
    #[error("event {kind:?} at t = {timestamp} is not valid in phase {phase:?}")]
    InvalidTransition { phase: Phase, kind: EventKind, timestamp: f64 },
    #[error("event timestamps must be non-decreasing (t = {0})")]
    NonMonotone(f64),
    #[error("invalid mission parameters: {0}")]
    Invalid(String),
}

/// Phase reached by feeding `events` through the graph from `Approach`.
pub fn replay(events: &[MissionEvent]) -> Result<Phase, MissionError> {
    let mut phase = Phase::Approach;
    let mut last = f64::NEG_INFINITY;
    for e in events {
        if e.timestamp < last {
            return Err(MissionError::NonMonotone(e.timestamp));
        }
        last = e.timestamp;
        phase = next_phase(phase, e.kind).ok_or(MissionError::InvalidTransition {
            phase,
            kind: e.kind,
            timestamp: e.timestamp,
        })?;
    }
    Ok(phase)
}

/// Minimum free-fall height that activates the grasper (m).
pub fn activation_height(spec: &GrasperSpec) -> f64 {
    if spec.finger_count == 2 {
        0.20
    } else if spec.springs_per_finger == 3 {
        0.30
    } else {
        spec.thresholds(1.0, GRAVITY).unit_mass_height
    }
}

pub fn fall_velocity(height: f64, gravity: f64) -> f64 {
    (2.0 * gravity * height.max(0.0)).sqrt()
}

/// Downward speed reference for the descent: free fall from the activation
/// height.
pub fn descent_velocity(spec: &GrasperSpec) -> f64 {
    fall_velocity(activation_height(spec), GRAVITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionParams {
    /// Hover convergence tolerance before descent (m).
    pub eps_x: f64,
    /// Coarser tolerance ending approach and takeoff (m).
    pub approach_radius: f64,
    /// Height of the hover point above the grasp point (m).
    pub hover_offset: f64,
    /// "Velocities almost zero" threshold (m/s).
    pub v_tol: f64,
    /// Time velocities must stay below `v_tol` while perched (s).
    pub settle_time: f64,
    /// s.
    pub wait_time: f64,
    /// Pressure supplied for recoil (kPa).
    pub recoil_supply_kpa: f64,
    /// Hold in `Wait` until [`MissionState::release`] is called.
    pub manual_recovery: bool,
    /// Per-phase time limit (s).
    pub phase_timeout: f64,
    /// Descent time limit (s).
    pub descent_timeout: f64,
    /// Landing descent speed (m/s).
    pub land_speed: f64,
    /// Horizontal error below which the landing descent starts (m).
    pub land_alignment: f64,
    /// Landing pad (x, y), inertial frame (m).
    pub landing_pad: [f64; 2],
}

impl Default for MissionParams {
    fn default() -> Self {
        MissionParams {
            eps_x: 0.05,
            approach_radius: 0.15,
            hover_offset: 0.30,
            v_tol: 0.05,
            settle_time: 0.1,
            wait_time: 2.0,
            recoil_supply_kpa: 100.0,
            manual_recovery: false,
            phase_timeout: 30.0,
            descent_timeout: 3.0,
            land_speed: 0.4,
            land_alignment: 0.1,
            landing_pad: [0.0, 0.0],
        }
    }
}

impl MissionParams {
    pub fn validate(&self) -> Result<(), MissionError> {
        let positive = [
            ("eps_x", self.eps_x),
            ("approach_radius", self.approach_radius),
            ("v_tol", self.v_tol),
            ("phase_timeout", self.phase_timeout),
            ("descent_timeout", self.descent_timeout),
            ("land_speed", self.land_speed),
            ("land_alignment", self.land_alignment),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(MissionError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative =
            [("hover_offset", self.hover_offset), ("settle_time", self.settle_time), ("wait_time", self.wait_time)];
        for (name, v) in non_negative {
            if !(v >= 0.0) {
                return Err(MissionError::Invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.approach_radius < self.eps_x {
            return Err(MissionError::Invalid("approach_radius must be at least eps_x".into()));
        }
        Ok(())
    }
}

/// What the physics reports each step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Signals {
    pub slip: bool,
    pub ground_contact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissionOutput {
    pub setpoint: Setpoint,
    /// Pressure to apply to the grasper recoil line (kPa).
    pub recoil_kpa: f64,
    pub event: Option<MissionEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionState {
    pub phase: Phase,
    /// s.
    pub phase_timer: f64,
    /// Vehicle position at which the grasper meets the object top (m).
    pub target: Vec3,
    pub params: MissionParams,
    /// Descent speed reference (m/s, downward).
    pub descent_speed: f64,
    pub yaw: f64,
    settle: f64,
    released: bool,
}

impl MissionState {
    pub fn new(target: Vec3, params: MissionParams, descent_speed: f64) -> Self {
        MissionState {
            phase: Phase::Approach,
            phase_timer: 0.0,
            target,
            params,
            descent_speed,
            yaw: 0.0,
            settle: 0.0,
            released: false,
        }
    }

    /// Hover point `x_h`, `hover_offset` above the target (z down).
    pub fn hover_point(&self) -> Vec3 {
        self.target - self.params.hover_offset * e3()
    }

    /// Ends a run that hit its time limit.
    pub fn abort(&mut self, t: f64) -> Option<MissionEvent> {
        self.transition(t, EventKind::Timeout)
    }

    /// Operator trigger ending a manual wait.
    pub fn release(&mut self) {
        self.released = true;
    }

    fn transition(&mut self, t: f64, kind: EventKind) -> Option<MissionEvent> {
        let to = next_phase(self.phase, kind)?;
        let e = MissionEvent { timestamp: t, kind, from: self.phase, to };
        self.phase = to;
        self.phase_timer = 0.0;
        self.settle = 0.0;
        Some(e)
    }

    fn timeout(&self) -> f64 {
        match self.phase {
            Phase::Descent => self.params.descent_timeout,
            Phase::Wait if self.params.manual_recovery => f64::INFINITY,
            _ => self.params.phase_timeout,
        }
    }

    fn event(&mut self, vehicle: &RigidBodyState, grasper: &GrasperState, signals: Signals, dt: f64) -> Option<EventKind> {
        let p = &self.params;
        let speed = vehicle.velocity.norm();
        let hover_err = (vehicle.position - self.hover_point()).norm();
        if signals.slip {
            return Some(EventKind::SlipDetected);
        }
        let kind = match self.phase {
            Phase::Approach | Phase::Takeoff if hover_err < p.approach_radius => Some(EventKind::PositionConverged),
            Phase::Hover if hover_err < p.eps_x && speed < p.v_tol => Some(EventKind::PositionConverged),
            Phase::Descent if grasper.is_curled() && grasper.engaged_object.is_some() && speed < p.v_tol => {
                Some(EventKind::GrasperEngaged)
            }
            Phase::Perched => {
                self.settle = if speed < p.v_tol { self.settle + dt } else { 0.0 };
                (self.settle >= p.settle_time).then_some(EventKind::VelocitiesZero)
            }
            Phase::Wait if p.manual_recovery => self.released.then_some(EventKind::WaitElapsed),
            Phase::Wait if self.phase_timer >= p.wait_time - 1e-9 => Some(EventKind::WaitElapsed),
            Phase::Recovery if grasper.mode == GrasperMode::Straight => Some(EventKind::RecoilComplete),
            Phase::Land => {
                self.settle = if signals.ground_contact && speed < p.v_tol { self.settle + dt } else { 0.0 };
                (self.settle >= p.settle_time).then_some(EventKind::Landed)
            }
            _ => None,
        };
        kind.or_else(|| (self.phase_timer > self.timeout()).then_some(EventKind::Timeout))
    }

    fn setpoint(&self, vehicle: &RigidBodyState) -> Setpoint {
        let h = self.hover_point();
        match self.phase {
            Phase::Approach | Phase::Hover | Phase::Takeoff => Setpoint::hold(h, self.yaw),
            Phase::Descent => {
                // Free-fall profile up to the descent speed.
                let g = GRAVITY;
                let ramp = self.phase_timer * g < self.descent_speed;
                let v = (self.phase_timer * g).min(self.descent_speed);
                Setpoint {
                    axes: [AxisRef::Position(h.x), AxisRef::Position(h.y), AxisRef::Velocity(v)],
                    yaw: self.yaw,
                    accel_ff: if ramp { g * e3() } else { Vec3::zeros() },
                    motors_off: false,
                }
            }
            Phase::Land => {
                let [px, py] = self.params.landing_pad;
                let horiz = (vehicle.position.x - px).hypot(vehicle.position.y - py);
                let z = if horiz > self.params.land_alignment {
                    AxisRef::Position(h.z)
                } else {
                    AxisRef::Velocity(self.params.land_speed)
                };
                Setpoint { axes: [AxisRef::Position(px), AxisRef::Position(py), z], ..Setpoint::hold(h, self.yaw) }
            }
            Phase::Perched | Phase::Wait | Phase::Recovery | Phase::Done | Phase::Failed => Setpoint::off(),
        }
    }

    /// Advances timers, fires at most one transition, and returns the
    /// command for the next step.
    pub fn step(
        &mut self,
        t: f64,
        vehicle: &RigidBodyState,
        grasper: &GrasperState,
        signals: Signals,
        dt: f64,
    ) -> MissionOutput {
        let event = if self.phase.is_terminal() {
            None
        } else {
            self.phase_timer += dt;
            self.event(vehicle, grasper, signals, dt).and_then(|k| self.transition(t, k))
        };
        let recoil_kpa = if self.phase == Phase::Recovery { self.params.recoil_supply_kpa } else { 0.0 };
        MissionOutput { setpoint: self.setpoint(vehicle), recoil_kpa, event }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mission() -> MissionState {
        MissionState::new(Vec3::new(0.0, 0.0, -1.0), MissionParams::default(), 2.4)
    }

    fn at(p: Vec3) -> RigidBodyState {
        RigidBodyState::at_rest(p)
    }

    #[test]
    fn hover_converges_into_descent() {
        let mut m = mission();
        let g = GrasperState::default();
        let h = m.hover_point();
        assert!((h.z - (-1.3)).abs() < 1e-12);
        let e = m.step(0.0, &at(h + Vec3::new(0.1, 0.0, 0.0)), &g, Signals::default(), 1e-3).event.unwrap();
        assert_eq!((e.from, e.to), (Phase::Approach, Phase::Hover));
        assert!(m.step(0.001, &at(h + Vec3::new(0.06, 0.0, 0.0)), &g, Signals::default(), 1e-3).event.is_none());
        let e = m.step(0.002, &at(h + Vec3::new(0.03, 0.0, 0.0)), &g, Signals::default(), 1e-3).event.unwrap();
        assert_eq!(e.to, Phase::Descent);
        let out = m.step(0.003, &at(h), &g, Signals::default(), 1e-3);
        assert!((out.setpoint.axes[2] == AxisRef::Velocity(GRAVITY * 1e-3)));
        assert_eq!(out.setpoint.accel_ff, GRAVITY * e3());
        for i in 0..400 {
            m.step(0.004 + i as f64 * 1e-3, &at(h), &g, Signals::default(), 1e-3);
        }
        let out = m.step(0.5, &at(h), &g, Signals::default(), 1e-3);
        assert_eq!(out.setpoint.axes[2], AxisRef::Velocity(2.4));
        assert_eq!(out.setpoint.accel_ff, Vec3::zeros());
    }

    #[test]
    fn descent_speeds() {
        let three = GrasperSpec::new(3, 3).unwrap();
        assert!((descent_velocity(&three) - 2.43).abs() < 0.005);
        let two = GrasperSpec::new(2, 3).unwrap();
        assert!((descent_velocity(&two) - 1.98).abs() < 0.005);
        assert_eq!(fall_velocity(0.0, GRAVITY), 0.0);
    }

    #[test]
    fn perched_turns_motors_off() {
        let mut m = mission();
        m.phase = Phase::Perched;
        let out = m.step(0.0, &at(m.target), &GrasperState::default(), Signals::default(), 1e-3);
        assert!(out.setpoint.motors_off);
    }

    #[test]
    fn descent_times_out() {
        let mut m = mission();
        m.phase = Phase::Descent;
        let mut v = at(m.target);
        v.velocity.z = 1.0;
        let mut last = None;
        for i in 0..4000 {
            if let Some(e) = m.step(i as f64 * 1e-3, &v, &GrasperState::default(), Signals::default(), 1e-3).event {
                last = Some(e);
                break;
            }
        }
        assert_eq!(last.unwrap().kind, EventKind::Timeout);
        assert_eq!(m.phase, Phase::Failed);
    }

    #[test]
    fn manual_recovery_waits_for_release() {
        let mut m = mission();
        m.params.manual_recovery = true;
        m.phase = Phase::Wait;
        let g = GrasperState::default();
        for i in 0..100 {
            assert!(m.step(i as f64, &at(m.target), &g, Signals::default(), 1.0).event.is_none());
        }
        m.release();
        assert_eq!(m.step(100.0, &at(m.target), &g, Signals::default(), 1.0).event.unwrap().to, Phase::Recovery);
    }

    #[test]
    fn replay_rejects_skips() {
        let e = |k, t| MissionEvent { timestamp: t, kind: k, from: Phase::Approach, to: Phase::Approach };
        assert!(replay(&[e(EventKind::GrasperEngaged, 0.0)]).is_err());
        assert!(replay(&[e(EventKind::PositionConverged, 1.0), e(EventKind::PositionConverged, 0.5)]).is_err());
        assert_eq!(replay(&[e(EventKind::Timeout, 0.0)]).unwrap(), Phase::Failed);
    }

    #[test]
    fn params_validate() {
        MissionParams::default().validate().unwrap();
        let p = MissionParams { eps_x: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
    }

    fn kinds() -> impl Strategy<Value = EventKind> {
        prop::sample::select(vec![
            EventKind::PositionConverged,
            EventKind::GrasperEngaged,
            EventKind::VelocitiesZero,
            EventKind::WaitElapsed,
            EventKind::RecoilComplete,
            EventKind::Landed,
            EventKind::SlipDetected,
            EventKind::Timeout,
        ])
    }

    proptest! {
        #[test]
        fn graph_never_skips(seq in prop::collection::vec(kinds(), 0..40)) {
            let order = [Phase::Approach, Phase::Hover, Phase::Descent, Phase::Perched, Phase::Wait,
                Phase::Recovery, Phase::Takeoff, Phase::Land, Phase::Done];
            let idx = |p: Phase| order.iter().position(|q| *q == p);
            let mut phase = Phase::Approach;
            for k in seq {
                if let Some(next) = next_phase(phase, k) {
                    if next != Phase::Failed {
                        prop_assert_eq!(idx(next).unwrap(), idx(phase).unwrap() + 1);
                    }
                    phase = next;
                }
            }
        }
    }
}
