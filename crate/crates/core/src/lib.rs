//! Digital-twin synchronization and a prioritized topic bridge, all running on
//! a deterministic simulated network.

pub mod bridge;
pub mod experiment;
pub mod geo;
pub mod lidar2d;
pub mod mmcf;
pub mod msgbus;
pub mod netsim;
pub mod scenario;
pub mod twinsync;
