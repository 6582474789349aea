pub mod anchor;
pub mod calibration;
pub mod corpus;
pub mod evaluation;
pub mod genpipe;
pub mod metrics;
pub mod prompts;
pub mod providers;
pub mod score;
