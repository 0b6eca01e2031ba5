mod common;

use common::buffers::run_sequence;
use conda_core::buffer::{update_buffer, Buffer, Relabel};
use conda_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_hundred_sequences_against_oracle() {
    let t0 = std::time::Instant::now();
    for seed in 0..200 {
        let a = run_sequence(seed);
        assert_eq!(a, run_sequence(seed), "seed {seed}: not deterministic");
    }
    assert!(t0.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn capacity_below_class_count_is_rejected() {
    assert!(Buffer::new(3, 4, 2).is_err());
    assert!(Buffer::new(0, 4, 2).is_ok());
    assert_eq!(Buffer::new(9, 4, 2).unwrap().slots_per_class(), 2);
}

proptest! {
    #[test]
    fn size_never_exceeds_capacity(seed in any::<u64>(), n in 0usize..30, slots in 0usize..5, c in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buf = Buffer::with_slots(slots, c, 1).unwrap();
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let confs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let b1 = update_buffer(&buf, &x, &preds, &confs, &Relabel::default(), &mut rng).unwrap();
        let relabel = Relabel {
            labels: (0..b1.len()).map(|_| rng.random_range(0..c)).collect(),
            confidences: vec![1.0; b1.len()],
        };
        let b2 = update_buffer(&b1, &x, &preds, &confs, &relabel, &mut rng).unwrap();
        prop_assert!(b1.len() <= slots * c && b2.len() <= slots * c);
        // no slot stays free while an eligible sample exists
        for k in 0..c {
            let incoming = preds.iter().filter(|&&p| p == k).count();
            let survivors = relabel.labels.iter().filter(|&&l| l == k).count();
            prop_assert_eq!(b2.class_entries(k).len(), slots.min(incoming + survivors));
        }
    }
}
