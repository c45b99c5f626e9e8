mod common;

use proptest::prelude::*;

use common::{critic_loss64, Batch, Net64};
use flipbench_core::eval::compute_pph;
use flipbench_core::nn::{Agent, EncoderInput, ModelConfig, Tape};
use flipbench_core::perception::Simulator;
use flipbench_core::physics::{apply_outcome, attempt_flip, PhysicsParams};
use flipbench_core::rng::stream;
use flipbench_core::sac::critic_loss;
use flipbench_core::scene::{new_scene, page_number, FlipAction, PaperSpec, Scenario, SceneConfig, ACTION_COUNT};

fn scenario() -> impl Strategy<Value = Scenario> {
    prop::sample::select(Scenario::ALL.to_vec())
}

fn paper() -> impl Strategy<Value = PaperSpec> {
    prop::sample::select(PaperSpec::presets().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_index_round_trips(i in 0..ACTION_COUNT) {
        let a = FlipAction::from_joint_index(i).unwrap();
        prop_assert_eq!(a.joint_index(), i);
        prop_assert_eq!(FlipAction::from_bins(a.bins()).unwrap(), a);
        prop_assert!((-6.0..=6.0).contains(&a.decode_x()));
        prop_assert!((0.0..=3.0).contains(&a.decode_theta()));
    }

    #[test]
    fn page_parity_holds_along_random_attempts(
        s in scenario(),
        p in paper(),
        tilt in 0.0f64..80.0,
        seed in any::<u64>(),
        actions in prop::collection::vec(0..ACTION_COUNT, 1..40),
    ) {
        let cfg = SceneConfig::new(s, p, tilt, seed);
        let physics = PhysicsParams::default();
        let mut state = new_scene(&cfg).unwrap();
        let mut rng = stream(seed);
        for i in actions {
            if state.is_empty() {
                break;
            }
            let a = FlipAction::from_joint_index(i).unwrap();
            let before = state.remaining();
            let o = attempt_flip(&state, &a, &cfg, &physics, &mut rng).unwrap();
            prop_assert!(o.layers <= before);
            state = apply_outcome(&state, o).unwrap();
            prop_assert_eq!(page_number(&state), 1 + 2 * state.flipped_count() as u64);
            prop_assert_eq!(state.remaining() + state.flipped_count(), state.initial_count());
        }
    }

    #[test]
    fn observations_are_finite_and_normalized(
        s in scenario(),
        p in paper(),
        tilt in prop::sample::select(vec![0.0, 30.0, 60.0]),
        seed in any::<u64>(),
    ) {
        let sim = Simulator::with_defaults();
        let cfg = SceneConfig::new(s, p, tilt, seed);
        let state = new_scene(&cfg).unwrap();
        let o = sim.observe(&state, &cfg, &mut stream(seed)).unwrap();
        prop_assert!(o.is_finite());
        for v in o.proprio.values {
            prop_assert!((-0.5..=1.5).contains(&v), "{v}");
        }
    }

    #[test]
    fn pph_is_linear_in_success_rate(sr in 0.0f64..=1.0, t in 0.1f64..100.0) {
        let pph = compute_pph(sr, t).unwrap();
        prop_assert!((pph - sr * 3600.0 / t).abs() < 1e-9);
        prop_assert!(compute_pph(sr, -t).is_err());
    }

    #[test]
    fn critic_loss_matches_double_precision_oracle(seed in 0u64..1000, target in 0u8..2) {
        let model = ModelConfig::default();
        let agent = Agent::new(model, seed, 0.1).unwrap();
        let proprio: Vec<f32> = (0..12).map(|i| ((seed + i) % 7) as f32 / 7.0).collect();
        let pooled = vec![0.295f32, 0.29];
        let actions = vec![[6, 6, 2, 0], [(seed % 13) as usize, 3, 1, 1]];
        let input = EncoderInput::from_parts(pooled.clone(), proprio.clone()).unwrap();
        let tape = Tape::new();
        let (loss, _) = critic_loss(&tape, &agent.critic.q1, &input, &actions, &[f32::from(target); 2], model, &mut Vec::new()).unwrap();
        let got = f64::from(tape.value(loss).unwrap().data()[0]);
        let batch = Batch {
            pooled: pooled.iter().map(|&v| f64::from(v)).collect(),
            proprio: proprio.chunks(6).map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect(),
            actions,
            targets: vec![f64::from(target); 2],
            min_q: Vec::new(),
        };
        let (want, _) = critic_loss64(&Net64::from_network(&agent.critic.q1), &batch, false);
        prop_assert!((got - want).abs() <= 1e-5 * want.abs().max(1.0), "{got} vs {want}");
    }
}
