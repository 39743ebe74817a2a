pub mod deform;
pub mod geom;
pub mod jsonio;
pub mod qp;
pub mod retrieval;
pub mod metrics;
pub mod miqp;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod synth;
