pub mod checkpoint;
pub mod error;
pub mod flocking;
pub mod geometry;
pub mod instruction;
pub mod meta;
pub mod net;
pub mod oracle;
pub mod planner;
pub mod scalar;
pub mod seed;
pub mod world;
pub mod runtime;
pub mod sim;

pub use checkpoint::Algo;
pub use error::{Error, Result};
pub use instruction::Instruction;
pub use scalar::Scalar;
pub use world::{Behavior, Situation};

pub type Vec2 = geometry::Vec2<f64>;
pub type Vec3 = geometry::Vec3<f64>;
pub type Arena = world::Arena<f64>;
pub type MotionStatus = world::MotionStatus<f64>;
pub type PreferenceVector = world::PreferenceVector<f64>;
pub type FlockParams = flocking::FlockParams<f64>;
pub type ModelParams = net::ModelParams<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
pub type UserProfile = oracle::UserProfile<f64>;
pub type Scenario = sim::Scenario<f64>;
pub type EpisodeReport = runtime::EpisodeReport<f64>;
