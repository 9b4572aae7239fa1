//! Layer specs, parameters, forward evaluation and manual backpropagation.

mod absorb;
pub mod conv;
mod gradcheck;
mod io;
mod model;
mod softmax;
mod spec;

pub use absorb::{absorb_bottleneck, find_bottleneck};
pub use gradcheck::{check_gradients, GradCheck, REL_ERROR_FLOOR};
pub(crate) use io::{Reader, Writer};
pub use io::{FORMAT_VERSION, MODEL_MAGIC};
pub use model::{init_params, ForwardCache, Gradients, Mode, Model, Param};
pub use softmax::{argmax, softmax, softmax_rows};
pub(crate) use softmax::log_softmax;
pub use spec::{param_count, Activation, ImageShape, LayerSpec, NetworkSpec, Shape};
