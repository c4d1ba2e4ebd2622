//! Order-preserving map over work items, on a rayon pool or on the calling
//! thread. Without the `parallel` feature every executor is sequential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExecutionMode {
    Sequential,
    /// At most `threads` items in flight.
    Parallel {
        threads: usize,
    },
}

pub struct Executor {
    mode: ExecutionMode,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn new(mode: ExecutionMode) -> Result<Self> {
        match mode {
            ExecutionMode::Parallel { threads: 0 } => {
                return Err(Error::Config("thread count must be at least 1".into()))
            }
            ExecutionMode::Parallel { threads: 1 } => return Self::new(ExecutionMode::Sequential),
            _ => {}
        }
        #[cfg(feature = "parallel")]
        {
            let pool = match mode {
                ExecutionMode::Sequential => None,
                ExecutionMode::Parallel { threads } => Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .thread_name(|i| format!("tabprompt-worker-{i}"))
                        .build()
                        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
                ),
            };
            Ok(Executor { mode, pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            if let ExecutionMode::Parallel { threads } = mode {
                log::debug!("built without the parallel feature; ignoring threads = {threads}");
            }
            Ok(Executor {
                mode: ExecutionMode::Sequential,
            })
        }
    }

    pub fn sequential() -> Self {
        Self::new(ExecutionMode::Sequential).expect("sequential executor")
    }

    /// `concurrency_limit` of 1 or less runs on the calling thread.
    pub fn with_limit(concurrency_limit: usize) -> Result<Self> {
        if concurrency_limit <= 1 {
            Ok(Self::sequential())
        } else {
            Self::new(ExecutionMode::Parallel {
                threads: concurrency_limit,
            })
        }
    }

    pub fn mode(&self) -> ExecutionMode {
        self.mode
    }

    /// Applies `f` to every item. Output order matches input order whatever
    /// order the items finish in.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..500).collect();
        let f = |x: &u64| x.wrapping_mul(2_654_435_761) % 1000;
        let seq = Executor::sequential().map(&items, f);
        let par = Executor::with_limit(4).unwrap().map(&items, f);
        assert_eq!(seq, par);
        assert_eq!(seq[3], f(&3));
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(Executor::new(ExecutionMode::Parallel { threads: 0 }).is_err());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn limit_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let items: Vec<u32> = (0..64).collect();
        Executor::with_limit(3).unwrap().map(&items, |_| {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(2));
            live.fetch_sub(1, Ordering::SeqCst);
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
