use proptest::prelude::*;

use ntm::eval::ErrorAggregate;
use ntm::ntm::addressing::{address_stages, read, write};
use ntm::ntm::HeadControls;
use ntm::task::{sample_vector, vector_split, Split};
use ntm::{Tape, Tensor};

fn distribution(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn assert_distribution(w: &Tensor, tol: f64) {
    for &v in w.data() {
        assert!((0.0..=1.0).contains(&v), "entry {v} outside [0, 1]");
    }
    assert!((w.sum() - 1.0).abs() <= tol, "sum {}", w.sum());
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_offsets(
        xs in prop::collection::vec(-30.0f64..30.0, 1..16),
        c in -50.0f64..50.0,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(xs.clone()));
        let y = tape.softmax(x);
        let shifted = tape.constant(Tensor::vector(xs.iter().map(|v| v + c).collect()));
        let z = tape.softmax(shifted);
        assert_distribution(tape.value(y), 1e-12);
        for (a, b) in tape.value(y).data().iter().zip(tape.value(z).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_preserves_mass(
        w in prop::collection::vec(0.0f64..1.0, 3..40),
        s in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let mut tape = Tape::new();
        let wv = tape.constant(Tensor::vector(w.clone()));
        let sv = tape.constant(Tensor::vector(distribution(&s)));
        let out = tape.circular_convolve(wv, sv).unwrap();
        let before: f64 = w.iter().sum();
        prop_assert!((tape.value(out).sum() - before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn addressing_yields_distributions(
        n in 3usize..12,
        m in 1usize..6,
        seed in prop::collection::vec(-1.0f64..1.0, 12 * 6 + 6 + 12),
        beta in 0.0f64..50.0,
        g in 0.0f64..1.0,
        shift in prop::collection::vec(-4.0f64..4.0, 3),
        gamma in 1.0f64..20.0,
    ) {
        let mut tape = Tape::new();
        let memory = tape.constant(Tensor::matrix(n, m, seed[..n * m].to_vec()).unwrap());
        let key = tape.constant(Tensor::vector(seed[72..72 + m].to_vec()));
        let previous = tape.constant(Tensor::vector(distribution(&seed[78..78 + n])));
        let head = HeadControls {
            key,
            strength: tape.constant(Tensor::scalar(beta)),
            gate: tape.constant(Tensor::scalar(g)),
            shift: tape.constant(Tensor::vector(distribution(&shift))),
            sharpen: tape.constant(Tensor::scalar(gamma)),
            erase: None,
            add: None,
        };
        let st = address_stages(&mut tape, memory, previous, &head).unwrap();
        for v in [st.content, st.gated, st.shifted, st.sharpened] {
            assert_distribution(tape.value(v), 1e-9);
        }
    }

    #[test]
    fn read_is_convex_combination(
        w in prop::collection::vec(-3.0f64..3.0, 4),
        rows in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let mut tape = Tape::new();
        let mem = tape.constant(Tensor::matrix(4, 2, rows.clone()).unwrap());
        let wv = tape.constant(Tensor::vector(distribution(&w)));
        let r = read(&mut tape, mem, wv).unwrap();
        for (j, &v) in tape.value(r).data().iter().enumerate() {
            let col: Vec<f64> = (0..4).map(|i| rows[i * 2 + j]).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn zero_weighting_write_leaves_memory(rows in prop::collection::vec(-1.0f64..1.0, 6)) {
        let mut tape = Tape::new();
        let mem = Tensor::matrix(3, 2, rows).unwrap();
        let m = tape.constant(mem.clone());
        let w = tape.constant(Tensor::zeros(&[3]));
        let e = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let a = tape.constant(Tensor::vector(vec![5.0, -5.0]));
        let out = write(&mut tape, m, w, e, a).unwrap();
        prop_assert_eq!(tape.value(out), &mem);
    }

    #[test]
    fn sampled_vectors_respect_split(seed in any::<u64>(), half in 1usize..5) {
        let bits = 2 * half;
        let mut rng = ntm::rng::seeded(seed);
        for split in [Split::Train, Split::Test] {
            for _ in 0..20 {
                let v = sample_vector(&mut rng, bits, split);
                prop_assert_eq!(v.len(), bits);
                prop_assert_eq!(vector_split(&v).unwrap(), split);
            }
        }
    }

    #[test]
    fn merge_is_order_insensitive(
        errors in prop::collection::vec(0u64..40, 0..200),
        cut_a in 0usize..200,
        cut_b in 0usize..200,
    ) {
        let (lo, hi) = (cut_a.min(cut_b).min(errors.len()), cut_a.max(cut_b).min(errors.len()));
        let parts: Vec<ErrorAggregate> = [&errors[..lo], &errors[lo..hi], &errors[hi..]]
            .iter()
            .map(|p| ErrorAggregate::from_errors(p, 8))
            .collect();
        let whole = ErrorAggregate::from_errors(&errors, 8);
        let left = parts[0].merge(&parts[1]).merge(&parts[2]);
        let right = parts[2].merge(&parts[0].merge(&parts[1]));
        prop_assert_eq!(left.finish(), whole.finish());
        prop_assert_eq!(right.finish(), whole.finish());
    }
}
