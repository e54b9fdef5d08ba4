//! Order-preserving map over independent work units.
//!
//! With the `parallel` feature the work is spread over rayon's pool; without
//! it the same closure runs sequentially. Results come back in index order
//! either way, so reductions over them are independent of scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v = map_indexed(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
        let s = map_slice(&[3, 1, 2], |x| x + 1);
        assert_eq!(s, vec![4, 2, 3]);
    }
}
