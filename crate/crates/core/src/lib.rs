pub mod math;
pub mod airframe;
pub mod dynamics;
pub mod control;
pub mod contact;
pub mod calibration;
pub mod grasper;
pub mod wrench;
pub mod mission;
pub mod perch;
pub mod scenario;
pub mod runlog;
