//! Seeded random update sequences for the replay buffer.

use std::collections::HashSet;

use super::buffer_oracle;
use conda_core::buffer::{update_buffer, Buffer, Relabel};
use conda_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Step {
    batch: Vec<Vec<f64>>,
    preds: Vec<usize>,
    confs: Vec<f64>,
    relabel: Relabel,
}

/// Confidences come from a coarse grid so ties occur.
fn random_step(rng: &mut ChaCha8Rng, buf: &Buffer, next_id: &mut f64) -> Step {
    let c = buf.num_classes();
    let n = rng.random_range(0..=12);
    let batch = (0..n)
        .map(|_| {
            *next_id += 1.0;
            vec![*next_id, rng.random_range(-1.0..1.0)]
        })
        .collect();
    Step {
        batch,
        preds: (0..n).map(|_| rng.random_range(0..c)).collect(),
        confs: (0..n)
            .map(|_| rng.random_range(1..=8) as f64 / 8.0)
            .collect(),
        relabel: Relabel {
            labels: (0..buf.len()).map(|_| rng.random_range(0..c)).collect(),
            confidences: vec![0.5; buf.len()],
        },
    }
}

/// Runs a seeded random sequence of updates, checking every state against the
/// procedure oracle and the buffer invariants.
pub fn run_sequence(seed: u64) -> Vec<Buffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=4);
    let slots = rng.random_range(0..=3);
    let mut buf = Buffer::with_slots(slots, c, 2).unwrap();
    let mut states = vec![buf.clone()];
    let mut next_id = 0.0;
    let mut seen: HashSet<u64> = HashSet::new();
    let steps = rng.random_range(1..=8);
    for _ in 0..steps {
        let s = random_step(&mut rng, &buf, &mut next_id);
        let x = if s.batch.is_empty() {
            Matrix::zeros(0, 2)
        } else {
            Matrix::from_rows(&s.batch).unwrap()
        };
        seen.extend(s.batch.iter().map(|r| r[0].to_bits()));

        let mut draw_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let mut oracle_rng = draw_rng.clone();
        let next = update_buffer(&buf, &x, &s.preds, &s.confs, &s.relabel, &mut draw_rng).unwrap();
        let want = buffer_oracle(
            &buf,
            &s.batch,
            &s.preds,
            &s.confs,
            &s.relabel,
            &mut oracle_rng,
        );
        assert_eq!(
            next.classes(),
            want.as_slice(),
            "seed {seed}: oracle mismatch"
        );

        // slot bounds
        for k in 0..c {
            assert!(next.class_entries(k).len() <= slots);
            assert!(next.class_entries(k).iter().all(|e| e.predicted_label == k));
        }
        // admission keeps exactly the top confidences of each predicted class
        for k in 0..c {
            let mut all: Vec<f64> = (0..s.preds.len())
                .filter(|&i| s.preds[i] == k)
                .map(|i| s.confs[i])
                .collect();
            all.sort_by(|a, b| b.total_cmp(a));
            all.truncate(slots);
            let admitted: Vec<f64> = next
                .class_entries(k)
                .iter()
                .filter(|e| e.inserted_at == next.state_index())
                .map(|e| e.confidence)
                .collect();
            assert_eq!(admitted, all, "seed {seed}: class {k}");
        }
        // survivors come from the previous state, under their new label
        let prev_ids: Vec<(u64, usize)> = buf
            .entries()
            .zip(&s.relabel.labels)
            .map(|(e, &l)| (e.sample[0].to_bits(), l))
            .collect();
        for e in next
            .entries()
            .filter(|e| e.inserted_at < next.state_index())
        {
            assert!(prev_ids.contains(&(e.sample[0].to_bits(), e.predicted_label)));
        }
        // every stored sample was presented earlier
        assert!(next
            .entries()
            .all(|e| seen.contains(&e.sample[0].to_bits())));
        assert_eq!(next.state_index(), buf.state_index() + 1);
        buf = next;
        states.push(buf.clone());
    }
    states
}
