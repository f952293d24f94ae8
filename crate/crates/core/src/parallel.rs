//! Data-parallel helpers with a sequential fallback.
//!
//! Results are always returned in input order, so reductions over them are
//! deterministic regardless of scheduling.

/// How per-item work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Rayon's thread pool when the `parallel` feature is on, otherwise sequential.
    #[default]
    Auto,
    Sequential,
}

pub fn map<T, R, F>(items: &[T], schedule: Schedule, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match schedule {
        #[cfg(feature = "parallel")]
        Schedule::Auto => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(&xs, Schedule::Auto, |x| x * x);
        let b = map(&xs, Schedule::Sequential, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(a[999], 999 * 999);
    }
}
