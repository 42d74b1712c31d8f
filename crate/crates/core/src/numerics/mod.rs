//! Dense linear algebra, stable reductions and the differentiation tape.

pub mod gradcheck;
pub mod lse;
pub mod mat;
pub mod tape;

pub use gradcheck::grad_check;
pub use lse::{logsumexp, logsumexp_running, LogSumExpAcc};
pub use mat::{axpy, dot, inf_norm, logistic, matvec, max_abs_diff, softplus, Mat64};
pub use tape::{softmax, CustomOp, Gradients, NodeRef, Tape, Var};
