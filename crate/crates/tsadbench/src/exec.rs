//! Execution strategy for independent work units.
//!
//! `map_vec` runs a closure over every item and collects results in input
//! order. With the `parallel` feature (the default) the work is distributed
//! on the rayon pool; without it the sequential fallback below is used.
//! Output order is identical either way, so builds differ only in wall time.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_vec<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_vec<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Sequential reference used by the bench suite regardless of features.
pub fn map_vec_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_input_order() {
        let xs: Vec<usize> = (0..257).collect();
        let ys = map_vec(xs.clone(), |x| x * 2);
        assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        let zs = map_vec_seq(xs.clone(), |x| x * 2);
        assert_eq!(ys, zs);
    }
}
