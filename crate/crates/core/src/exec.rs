//! Execution backend for the data-parallel inner loops.
//!
//! Every hot loop in the crate (characteristic sweeps of the kernel solver,
//! spatial updates of the upwind scheme, least-squares row assembly, batch
//! property suites) goes through [`Exec`]. With the `parallel` feature the
//! `Parallel` variant dispatches to rayon; without it both variants run the
//! same sequential code. Results never depend on the variant: every parallel
//! map writes to its own output slot and reductions are done sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when this backend will actually fan out to a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..len).map(f).collect()`, possibly in parallel.
    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Applies `f(index, item)` to every element of `items`.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }

    /// Fills `out[i] = f(i)` over fixed-size chunks; used by the per-step
    /// spatial updates where per-element task overhead would dominate.
    pub fn fill_chunked<F>(self, out: &mut [f64], chunk: usize, f: F)
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        #[cfg(not(feature = "parallel"))]
        let _ = chunk;
        #[cfg(feature = "parallel")]
        if self.is_parallel() && out.len() > chunk.max(1) {
            let chunk = chunk.max(1);
            out.par_chunks_mut(chunk).enumerate().for_each(|(c, block)| {
                let base = c * chunk;
                for (k, v) in block.iter_mut().enumerate() {
                    *v = f(base + k);
                }
            });
            return;
        }
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backends_agree() {
        let f = |i: usize| ((i as f64) * 0.37).sin();
        assert_eq!(Exec::Sequential.map(1000, f), Exec::Parallel.map(1000, f));

        let mut a = vec![0.0; 777];
        let mut b = vec![0.0; 777];
        Exec::Sequential.fill_chunked(&mut a, 64, f);
        Exec::Parallel.fill_chunked(&mut b, 64, f);
        assert_eq!(a, b);

        let mut v: Vec<usize> = vec![0; 50];
        Exec::Parallel.for_each_mut(&mut v, |i, x| *x = i * i);
        assert_eq!(v[7], 49);
    }
}
