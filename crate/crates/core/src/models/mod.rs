//! Multi-head dense classifiers: a shared tanh trunk followed by one linear
//! head per prediction slot.

mod format;
mod model;
mod spec;

pub use format::{deserialize, header_len, load, save, serialize, serialized_len, MODEL_MAGIC, MODEL_VERSION};
pub use model::{init_model, ForwardResult, Model, Trace};
pub use spec::{count_flops, count_params, dense_layer_flops, ModelSpec};
