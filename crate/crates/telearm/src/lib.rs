//! Process orchestration for the teleoperation stack: configuration, device
//! back ends, tick logs, the WebSocket UI bridge and the subcommands.

pub mod bridge;
pub mod commands;
pub mod config;
pub mod device;
pub mod ticklog;

pub use commands::AppError;
pub use config::AppConfig;
