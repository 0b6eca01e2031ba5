//! Source training, per-batch target adaptation with replay and mixup, and the
//! continual and full-target drivers.

mod continual;
mod mixup;
mod optim;
mod source;

pub use continual::{
    adapt_full, adapt_on_batch, run_continual, step_continual, BatchOutcome, ContinualConfig,
    ContinualState, MetricsRecord,
};
pub use mixup::{make_virtual_batch, sample_lambda, VirtualBatch};
pub use optim::{lr_schedule, sgd_step, OptimConfig, OptimState};
pub use source::{train_source, SourceConfig};

/// Contiguous minibatch ranges over `0..n`. A trailing single-row chunk is
/// merged into the previous one so every minibatch can be batch-normalized.
pub fn minibatch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let size = size.max(1);
    let mut out: Vec<_> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("len > 1").end = last.end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::minibatch_ranges;

    #[test]
    fn trailing_singleton_is_merged() {
        assert_eq!(minibatch_ranges(65, 32), vec![0..32, 32..65]);
        assert_eq!(minibatch_ranges(45, 32), vec![0..32, 32..45]);
        assert_eq!(minibatch_ranges(25, 32), vec![0..25]);
        assert_eq!(minibatch_ranges(64, 32), vec![0..32, 32..64]);
    }
}
