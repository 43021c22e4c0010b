//! Dense 64-bit neural-network kernels with hand-written backward passes.

pub mod gradcheck;
pub mod mlp;
pub mod ops;
pub mod optim;
pub mod params;
pub mod policy;

pub use gradcheck::finite_diff_check;
pub use mlp::{dueling_aggregate, Mlp, QNetwork};
pub use ops::{ActivationConfig, Mode};
pub use optim::{lr_schedule, sgd_update, Adam, Optimizer, OptimizerKind};
pub use params::ParamSet;
pub use policy::{backward, forward, forward_dense, forward_eval, ForwardTrace, PolicyArch, PolicyGrads, PolicyParameters};
