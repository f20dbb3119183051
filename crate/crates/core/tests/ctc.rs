mod common;

use common::{ctc_by_paths, fd_max_error, random_log_probs};
use polyasr::autodiff::{ParamStore, Tensor};
use polyasr::ctc::{ctc_loss, ctc_loss_node, required_frames, CtcLattice, PrefixScoreState};
use polyasr::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random `(log_probs, target)` with `T ≤ 6`, `V ≤ 3`, `L ≤ 3`, target feasible.
fn instance(rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
    loop {
        let t = rng.random_range(1..=6);
        let v = rng.random_range(1..=3);
        let l = rng.random_range(1..=3);
        let target: Vec<usize> = (0..l).map(|_| rng.random_range(1..=v)).collect();
        if required_frames(&target) <= t {
            return (random_log_probs(rng, t, v + 1, 3.0), target);
        }
    }
}

#[test]
fn loss_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let (lp, target) = instance(&mut rng);
        let want = -ctc_by_paths(&lp)[&target];
        let got = ctc_loss(&lp, &target).unwrap().nll;
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn forward_and_backward_agree_and_occupancy_is_normalised() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let (lp, target) = instance(&mut rng);
        let lat = CtcLattice::build(&lp, &target).unwrap();
        let f = lat.forward_log_likelihood();
        assert!((f - lat.backward_log_likelihood(&lp)).abs() < 1e-10);
        for t in 0..lat.frames() {
            let occ: f64 = lat.occupancy(t).iter().sum();
            assert!((occ - 1.0).abs() < 1e-8, "frame {t}: {occ}");
            for s in 0..lat.states() {
                assert!(lat.alpha(t, s) <= 1e-12 && lat.beta(t, s) <= 1e-12);
            }
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..40 {
        let (lp, target) = instance(&mut rng);
        let mut store = ParamStore::new();
        store.insert("lp", lp);
        let (err, _) = fd_max_error(&store, 1e-3, |g, p| {
            ctc_loss_node(g, p.get("lp").unwrap(), &target).unwrap()
        });
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn infeasible_target_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let lp = random_log_probs(&mut rng, 3, 3, 1.0);
    // "aa" needs a blank between the repeats: 3 frames, and "aab" needs 4.
    assert!(ctc_loss(&lp, &[1, 1]).is_ok());
    match ctc_loss(&lp, &[1, 1, 2]) {
        Err(Error::CtcInfeasible { required, frames, .. }) => {
            assert_eq!((required, frames), (4, 3))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn prefix_scores_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let t = rng.random_range(1..=6);
        let lp = random_log_probs(&mut rng, t, 3, 2.0);
        let seqs = ctc_by_paths(&lp);
        let mut state = PrefixScoreState::initial(&lp).unwrap();
        let mut prefix = Vec::new();
        let mut log_prefix = 0.0;
        for _ in 0..rng.random_range(1..=3) {
            let label = rng.random_range(1..=2);
            let (ratio, next) = state.extend(label, &lp).unwrap();
            prefix.push(label);
            log_prefix += ratio;
            state = next;
            let mass: f64 = seqs
                .iter()
                .filter(|(s, _)| s.starts_with(&prefix))
                .map(|(_, p)| p.exp())
                .sum();
            let whole = seqs.get(&prefix).map_or(0.0, |p| p.exp());
            assert!((state.log_prefix_prob().exp() - mass).abs() < 1e-10);
            assert!((log_prefix.exp() - mass).abs() < 1e-10);
            assert!((state.log_sequence_prob().exp() - whole).abs() < 1e-10);
        }
    }
}

proptest! {
    #[test]
    fn nll_is_non_negative_and_gradient_rows_sum_to_minus_one(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lp, target) = instance(&mut rng);
        let loss = ctc_loss(&lp, &target).unwrap();
        prop_assert!(loss.nll >= -1e-12);
        for t in 0..lp.rows() {
            let s: f64 = loss.grad.row(t).iter().sum();
            prop_assert!((s + 1.0).abs() < 1e-8);
        }
    }
}
