pub mod ablation;
pub mod data;
pub mod encoder;
pub mod evaluator;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pairing;
pub mod pipeline;
pub mod psi;
pub mod synthetic;
pub mod tensor;
pub mod trainer;
