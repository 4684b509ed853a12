//! Small differentiable building blocks with hand-written gradients.

mod adam;
pub mod checkpoint;
pub(crate) mod dense;
mod gradcheck;
mod param;
mod real;
mod schedule;
mod softmax;

pub use adam::{Adam, AdamConfig};
pub use dense::{dense_backward, dense_forward, Dense, DenseGrads};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use param::{Param, Parameterized};
pub use real::{axpy, convert, dot, Real};
pub use schedule::Schedule;
pub use softmax::{log_softmax, softmax, softmax_backward};
