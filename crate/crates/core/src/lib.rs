//! Kinematics, constrained task-space control and device-side plumbing for
//! a five-joint desk arm with a potentiometer master.

pub mod batch;
pub mod controller;
pub mod crc;
pub mod kinematics;
pub mod master;
pub mod mathcore;
pub mod port;
pub mod qp;
pub mod serialio;
pub mod simdevice;

pub use controller::{ControlMode, ControllerConfig, KinematicController};
pub use kinematics::{fkm, umirobot_chain, DHChain, DHRow, JointVector, Pose};
pub use mathcore::{Mat, PureQuaternion, Quaternion, UnitQuaternion};
pub use port::{DeviceError, DevicePort};
pub use simdevice::{RobotState, ServoModel, SimRobot};
