pub mod data;
pub mod geometry;
pub mod gradcheck;
pub mod model;
pub mod nnops;
pub mod ppm;
pub mod real;
pub mod sampler;
pub mod tensor;
pub mod training;
