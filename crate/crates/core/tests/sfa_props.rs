mod common;

use common::{brute_force_alphas, close, random_probs, random_sfa, CAVIAR, DRIVING};
use nesya::bench::enumerative_acceptance;
use nesya::logic::{Interpretation, Trace};
use nesya::sfa::{parse_sfa, validate_and_compile, write_sfa, Sfa};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, max_vars: usize, max_states: usize, max_len: usize) -> (Sfa, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sfa = random_sfa(&mut rng, max_vars, max_states);
    let len = rng.random_range(0..=max_len);
    let ps = (0..len).map(|_| random_probs(&mut rng, sfa.vocab().len())).collect();
    (sfa, ps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn forward_matches_trace_enumeration(seed in any::<u64>()) {
        let (sfa, ps) = instance(seed, 4, 5, 5);
        let c = validate_and_compile(&sfa).unwrap();
        let alphas = c.forward(&ps).unwrap();
        let oracle = brute_force_alphas(&sfa, &ps);
        for (a, o) in alphas.iter().zip(&oracle) {
            for (x, y) in a.as_slice().iter().zip(o) {
                prop_assert!((x - y).abs() < 1e-9, "{:?} vs {:?}", a, o);
            }
        }
    }

    #[test]
    fn rows_are_stochastic_and_mass_is_preserved(seed in any::<u64>()) {
        let (sfa, ps) = instance(seed, 6, 6, 12);
        let c = validate_and_compile(&sfa).unwrap();
        for p in &ps {
            let t = c.transition_matrix(p, false).unwrap();
            for q in 0..c.n_states() {
                prop_assert!((t.row(q).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        for alpha in c.forward(&ps).unwrap() {
            prop_assert!((alpha.total() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn boolean_inputs_follow_the_boolean_run(seed in any::<u64>()) {
        let (sfa, ps) = instance(seed, 6, 6, 8);
        let n = sfa.vocab().len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let steps: Vec<Interpretation> = ps
            .iter()
            .map(|_| Interpretation::from_bits(rng.random::<u64>() & ((1 << n) - 1), n))
            .collect();
        let ps01: Vec<Vec<f64>> = steps
            .iter()
            .map(|w| w.to_bools().into_iter().map(|b| b as u8 as f64).collect())
            .collect();
        let c = validate_and_compile(&sfa).unwrap();
        let expected = sfa.accepts(&Trace::new(steps).unwrap()).unwrap();
        prop_assert_eq!(c.acceptance(&ps01).unwrap(), expected as u8 as f64);
    }

    #[test]
    fn engines_agree(seed in any::<u64>()) {
        let (sfa, ps) = instance(seed, 8, 5, 10);
        let c = validate_and_compile(&sfa).unwrap();
        let compiled = c.acceptance(&ps).unwrap();
        let enumerated = enumerative_acceptance(&sfa, &ps).unwrap();
        prop_assert!((compiled - enumerated).abs() < 1e-9);
    }

    #[test]
    fn batch_matches_single_sequences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sfa = random_sfa(&mut rng, 5, 5);
        let n = sfa.vocab().len();
        let batch: Vec<Vec<Vec<f64>>> = (0..rng.random_range(1..6))
            .map(|_| (0..rng.random_range(0..4)).map(|_| random_probs(&mut rng, n)).collect())
            .collect();
        let c = validate_and_compile(&sfa).unwrap();
        let got = c.acceptance_batch(&batch).unwrap();
        for (seq, g) in batch.iter().zip(got) {
            prop_assert_eq!(g, c.acceptance(seq).unwrap());
        }
    }

    #[test]
    fn spec_file_round_trip(seed in any::<u64>()) {
        let (sfa, _) = instance(seed, 4, 4, 0);
        let text = write_sfa(&sfa);
        prop_assert_eq!(parse_sfa(&text).unwrap(), sfa);
    }
}

#[test]
fn acceptance_gradients_match_central_differences() {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let sfa = random_sfa(&mut rng, 4, 4);
        let n = sfa.vocab().len();
        let len = rng.random_range(1..=5);
        let ps: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..n).map(|_| rng.random_range(0.05..0.95)).collect())
            .collect();
        let c = validate_and_compile(&sfa).unwrap();
        let mut upstream = vec![vec![0.0; c.n_states()]; len];
        upstream[len - 1] = (0..c.n_states()).map(|q| sfa.is_accepting(q) as u8 as f64).collect();
        let grads = c.forward_backward_grad(&ps, &upstream).unwrap();
        for t in 0..len {
            for i in 0..n {
                let (mut up, mut down) = (ps.clone(), ps.clone());
                up[t][i] += h;
                down[t][i] -= h;
                let fd = (c.acceptance(&up).unwrap() - c.acceptance(&down).unwrap()) / (2.0 * h);
                assert!(close(grads[t][i], fd, 1e-5, 1e-8), "step {t} var {i}: {} vs {fd}", grads[t][i]);
            }
        }
    }
}

#[test]
fn all_or_no_accepting_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = parse_sfa(DRIVING).unwrap();
    let ps: Vec<Vec<f64>> = (0..6).map(|_| random_probs(&mut rng, 3)).collect();
    for (accepting, expected) in [(vec![0, 1, 2], 1.0), (vec![], 0.0)] {
        let sfa = Sfa::new(
            base.vocab().clone(),
            base.states().to_vec(),
            0,
            &accepting,
            base.transitions().to_vec(),
        )
        .unwrap();
        let c = validate_and_compile(&sfa).unwrap();
        assert!((c.acceptance(&ps).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn running_example_gradient_on_second_step() {
    let c = validate_and_compile(&parse_sfa(DRIVING).unwrap()).unwrap();
    let ps = vec![vec![0.8, 0.3, 0.6], vec![0.7, 0.9, 0.3]];
    let grads = c
        .forward_backward_grad(&ps, &[vec![0.0; 3], vec![1.0, 1.0, 0.0]])
        .unwrap();
    let h = 1e-6;
    for i in 0..3 {
        let (mut up, mut down) = (ps.clone(), ps.clone());
        up[1][i] += h;
        down[1][i] -= h;
        let fd = (c.acceptance(&up).unwrap() - c.acceptance(&down).unwrap()) / (2.0 * h);
        assert!(close(grads[1][i], fd, 1e-5, 1e-8));
    }
}

#[test]
fn event_automaton_is_completed_with_self_loops() {
    let sfa = parse_sfa(CAVIAR).unwrap();
    let c = validate_and_compile(&sfa).unwrap();
    assert_eq!(c.completed_states(), &[0, 1, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ps: Vec<Vec<f64>> = (0..4).map(|_| random_probs(&mut rng, 5)).collect();
    let oracle = brute_force_alphas(&sfa, &ps);
    for (a, o) in c.forward(&ps).unwrap().iter().zip(&oracle) {
        for (x, y) in a.as_slice().iter().zip(o) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
