pub mod http;
#[cfg(feature = "onnx")]
pub mod onnx_models;
pub mod oracles;
