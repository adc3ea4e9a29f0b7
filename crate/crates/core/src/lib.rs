pub mod bt;
pub mod hqp;
pub mod kinematics;
pub mod scenario;
pub mod sot;
pub mod tasks;
