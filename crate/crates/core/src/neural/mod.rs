//! Minimal differentiable substrate: parameter storage, a reverse-mode
//! computation graph over vectors, dense and gated-recurrent layers, the
//! Adam optimiser and the binary checkpoint format.
//!
//! Everything is generic over [`Real`] so that gradient checks can run in
//! `f64` while the models train in `f32`.

mod checkpoint;
mod graph;
mod layers;
mod optim;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Graph, NodeId};
pub use layers::{Activation, Dense, GruCell, Mlp};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamStore, Tensor};

pub trait Real: Float + AddAssign + SubAssign + MulAssign + Sum + Send + Sync + Debug + Display + Default + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    // ln(1 + e^x) without overflow
    if x > T::of(20.0) {
        x
    } else if x < T::of(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn to_real<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::of(x)).collect()
}

pub fn to_f64<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}
