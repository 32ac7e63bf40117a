//! Lane changing in dense traffic: Frenet kinematics, calibrated human driver
//! models, a yield classifier and an MCTS planner over the resulting POMDP.

pub mod calibration;
pub mod classifier;
pub mod driver;
pub mod error;
pub mod frenet;
pub mod planner;
pub mod seeding;
pub mod sim;

pub use error::{Error, Result};
