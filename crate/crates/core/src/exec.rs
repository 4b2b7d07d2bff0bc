//! Data-parallel helpers.
//!
//! Hot loops (per-file parsing, excerpt scoring, per-category statistics,
//! distance matrices) go through [`Exec`]. With the `parallel` feature the
//! parallel variant runs on rayon; without it both variants run sequentially,
//! so results never depend on the feature set.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fill `out` in chunks; `f` receives the chunk and its start offset.
    pub fn fill_chunks<T, F>(self, out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(&mut [T], usize) + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => out
                .par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(c, i * chunk)),
            _ => out
                .chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(c, i * chunk)),
        }
    }

    /// Run `f` on a bounded worker pool. `limit` caps concurrent calls for
    /// I/O-bound work such as provider requests.
    pub fn map_bounded<T, R, F>(self, items: &[T], limit: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if limit > 1 => {
                match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                    Err(e) => {
                        log::warn!("falling back to sequential execution: {e}");
                        items.iter().map(f).collect()
                    }
                }
            }
            _ => {
                let _ = limit;
                items.iter().map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        let c = Exec::Parallel.map_bounded(&xs, 4, |x| x + 1);
        assert_eq!(c[999], 1000);
    }

    #[test]
    fn fill_chunks_covers_everything() {
        let mut out = vec![0usize; 103];
        Exec::Parallel.fill_chunks(&mut out, 10, |c, off| {
            for (i, v) in c.iter_mut().enumerate() {
                *v = off + i;
            }
        });
        assert!(out.iter().enumerate().all(|(i, v)| i == *v));
    }
}
