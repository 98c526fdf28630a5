pub mod jpeg;
pub mod transform;
pub mod synth;
pub mod tensor;
pub mod network;
pub mod metrics;
pub mod pipeline;
pub mod selftest;
