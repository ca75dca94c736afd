pub mod autograd;
pub mod error;
pub mod layers;
pub mod params;
pub mod presets;
pub mod data;
pub mod encoder;
pub mod similarity;
pub mod heads;
pub mod eval;
pub mod model;
pub mod trainer;
