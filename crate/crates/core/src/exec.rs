//! Ordered parallel map over particles.

use rayon::prelude::*;

/// Whether per-particle work may run on the rayon pool. Results are always
/// collected in index order, so both settings give identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Exec {
    pub parallel: bool,
}

impl Exec {
    pub const SERIAL: Exec = Exec { parallel: false };
    pub const PARALLEL: Exec = Exec { parallel: true };

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        if self.parallel {
            items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
        } else {
            items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
        }
    }

    pub fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        if self.parallel {
            items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
        } else {
            items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
        }
    }
}
