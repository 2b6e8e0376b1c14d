//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature disabled, [`Exec::Parallel`] runs
//! sequentially. Reductions always happen in index order so results are
//! bit-identical across modes.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Evaluates `f(0..n)` and collects the results in index order.
pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Calls `f(k, chunk_k)` on consecutive chunks of `data` of length `chunk`.
pub fn for_each_chunk_mut<T, F>(exec: Exec, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, c)| f(k, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(k, c)| f(k, c));
}

/// Like [`for_each_chunk_mut`], returning one value per chunk (in order).
pub fn map_chunks_mut<T, R, F>(exec: Exec, data: &mut [T], chunk: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync + Send,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return data
            .par_chunks_mut(chunk)
            .enumerate()
            .map(|(k, c)| f(k, c))
            .collect();
    }
    let _ = exec;
    data.chunks_mut(chunk)
        .enumerate()
        .map(|(k, c)| f(k, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |k: usize| (k as f64).sqrt();
        assert_eq!(
            map_indexed(Exec::Sequential, 100, f),
            map_indexed(Exec::Parallel, 100, f)
        );
        let mut a = vec![1.0; 12];
        let mut b = a.clone();
        let s1 = map_chunks_mut(Exec::Sequential, &mut a, 4, |k, c| {
            c.iter_mut().for_each(|x| *x *= k as f64);
            c.iter().sum::<f64>()
        });
        let s2 = map_chunks_mut(Exec::Parallel, &mut b, 4, |k, c| {
            c.iter_mut().for_each(|x| *x *= k as f64);
            c.iter().sum::<f64>()
        });
        assert_eq!(a, b);
        assert_eq!(s1, s2);
    }
}
