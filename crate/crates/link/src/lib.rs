//! Leader–follower teleoperation over a reliable byte stream, with a relay
//! gateway, seeded fault injection and a simulated-time harness.

pub mod connection;
pub mod faults;
pub mod follower;
pub mod frame;
pub mod leader;
pub mod queue;
pub mod relay;
pub mod session;
pub mod teleop;

pub use connection::Connection;
pub use faults::{FaultSchedule, LinkFaults, SimLink};
pub use follower::{Follower, FollowerConfig, FollowerStats};
pub use frame::{Payload, Role, TeleopFrame, PROTO_VERSION};
pub use leader::{LeaderSession, ScriptTarget, ScriptedTarget};
pub use relay::{run_relay, RelayConfig, RelayHandle};
pub use session::{serve_follower, FollowerEndpoint, LocalCommand, ServeOptions, TickContext};
