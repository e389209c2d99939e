//! Numerical geometry of Fourier integral operators whose canonical relations
//! are flat two-sided cusps.
//!
//! Everything is built on truncated Taylor jets ([`jet`]): canonical-relation
//! charts ([`phase`]), fold/cusp classification ([`singularity`]), symplectic
//! certificates ([`symplectic`]), composition into the diagonal plus an open
//! umbrella ([`composition`]), symbol blow-up ([`symbol`]), a discretized
//! model Radon transform ([`radon`]) and caustic ray tracing ([`caustics`]).

pub mod caustics;
pub mod composition;
pub mod error;
pub mod export;
pub mod jet;
pub mod linalg;
pub mod ode;
pub mod phase;
pub mod radon;
pub mod singularity;
pub mod symbol;
pub mod symplectic;

pub use error::{Error, JetError, Result};
pub use jet::{Jet, SmoothMap, SmoothMapHandle};

/// Order-preserving parallel map when the `parallel` feature is on.
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
