//! Order-preserving map over independent work items.
//!
//! The evaluation matrix is embarrassingly parallel; this helper runs it
//! on rayon when the `parallel` feature is enabled (the default) and
//! falls back to a plain sequential loop otherwise.  Results come back in
//! input order either way, so downstream reductions are deterministic.

/// Execution strategy for [`run_cells`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// One item after another on the calling thread.
    Sequential,
    /// Rayon work-stealing when compiled in, sequential otherwise.
    #[default]
    Parallel,
}

impl Mode {
    /// The strategy that will actually run, given compile-time features.
    pub fn effective(self) -> Mode {
        match self {
            Mode::Sequential => Mode::Sequential,
            Mode::Parallel if cfg!(feature = "parallel") => Mode::Parallel,
            Mode::Parallel => Mode::Sequential,
        }
    }
}

/// Applies `f` to every item, returning results in input order.
pub fn run_cells<T, R, F>(items: &[T], mode: Mode, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode.effective() {
        Mode::Sequential => items.iter().map(f).collect(),
        Mode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            unreachable!("effective() never returns Parallel without the feature")
        }
    }
}
