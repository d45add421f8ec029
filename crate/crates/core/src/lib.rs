pub mod adam;
pub mod control;
pub mod dataset;
pub mod gradcheck;
pub mod kmeans;
pub mod linalg;
pub mod loss;
pub mod model_file;
pub mod plant;
pub mod rbfn;
pub mod scalar;
pub mod sim;
pub mod train;
pub mod velocity;

pub use scalar::Real;

pub type RbfNetworkF64 = rbfn::RbfNetwork<f64>;
pub type RbfNetworkF32 = rbfn::RbfNetwork<f32>;
pub type SimConfigF64 = sim::SimConfig<f64>;
pub type SimConfigF32 = sim::SimConfig<f32>;
pub type RodStateF64 = sim::RodState<f64>;
pub type ControllerConfigF64 = control::ControllerConfig<f64>;
pub type ControllerConfigF32 = control::ControllerConfig<f32>;
pub type TrainConfigF64 = train::TrainConfig<f64>;
pub type DatasetF64 = dataset::Dataset<f64>;
