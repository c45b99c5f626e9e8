//! Simulated page flipping with a learned visuo-tactile policy.

pub mod baseline;
pub mod config;
pub mod error;
pub mod eval;
pub mod nn;
pub mod perception;
pub mod physics;
pub mod rng;
pub mod sac;
pub mod scene;

pub use error::{FlipError, Result};
pub use perception::{DepthImage, FtCalibration, Observation, PerceptionParams, ProprioObs, Simulator};
pub use physics::{PhysicsParams, SwipeResult};
pub use scene::{FlipAction, Lambda, PaperSpec, Scenario, SceneConfig, StackState};
pub use baseline::{FlexFlipPolicy, ThicknessTable};
pub use config::RunConfig;
pub use eval::{evaluate, CellResult, EvalMatrix, EvalOptions, Method};
pub use nn::{Agent, ModelConfig};
pub use sac::{train, TrainConfig, TrainOutput};
