//! Abstraction over the thing that moves: the simulator or a serial servo
//! controller.

use thiserror::Error;

use crate::simdevice::RobotState;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("device i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("device protocol: {0}")]
    Protocol(String),
    #[error("device did not answer within {0:?}")]
    Timeout(std::time::Duration),
}

pub trait DevicePort: Send {
    /// Commands joint and gripper targets, lets `dt` seconds pass on the
    /// device side when it is simulated, and returns the latest state.
    fn exchange(&mut self, q: &[f64], gripper: f64, dt: f64) -> Result<RobotState, DeviceError>;

    /// Latest potentiometer reading, for devices that carry a master.
    fn pots(&mut self) -> Option<crate::master::PotReading> {
        None
    }

    fn name(&self) -> &str;
}

impl<T: DevicePort + ?Sized> DevicePort for Box<T> {
    fn exchange(&mut self, q: &[f64], gripper: f64, dt: f64) -> Result<RobotState, DeviceError> {
        (**self).exchange(q, gripper, dt)
    }

    fn pots(&mut self) -> Option<crate::master::PotReading> {
        (**self).pots()
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}
