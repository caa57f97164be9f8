use super::check::{dead_parameters, policy_gradcheck, sample_sequence};
use super::*;
use crate::diffcore::Tape;

fn zero_params<F: Real>(p: &mut dyn ActorCritic<F>) {
    let store = p.params_mut();
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = F::zero());
    }
}

#[test]
fn split_observation_examples() {
    let obs: Vec<f64> = (0..10).map(f64::from).collect();
    let (v, p, x) = split_observation(&obs).unwrap();
    assert_eq!(v, [0.0, 1.0, 2.0, 3.0]);
    assert_eq!(p, [4.0, 5.0]);
    assert_eq!(x, [6.0, 7.0, 8.0, 9.0]);
    let joined: Vec<f64> = v.iter().chain(&p).chain(&x).copied().collect();
    assert_eq!(joined, obs);
    let (v, p, x) = split_observation(&[0.0; 10]).unwrap();
    assert!(v.iter().chain(&p).chain(&x).all(|&a| a == 0.0));
    assert!(split_observation(&[0.0; 9]).is_err());
}

#[test]
fn parameter_counts_within_budget() {
    for kind in ArchKind::ALL {
        let spec = ArchitectureSpec::default_for(kind);
        let a = spec.build::<f32>(0).param_count();
        let b = spec.build::<f32>(99).param_count();
        assert_eq!(a, b, "count must not depend on the seed");
        let dev = param_deviation(a, kind.target_param_count());
        assert!(dev.abs() <= 0.15, "{kind}: {a} params ({:+.1}%)", dev * 100.0);
    }
    let mut store = ParamStore::<f32>::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    layers::Linear::new(&mut store, &mut rng, "d", 10, 20, 1.0, true);
    assert_eq!(count_parameters(&store), 220);
}

#[test]
fn initial_states() {
    let insect = ArchitectureSpec::default_for(ArchKind::Insect).build::<f64>(0);
    let s = insect.initial_state(3);
    assert_eq!(s.prev_mode_probs().unwrap().row(2), &[1.0 / 6.0; 6]);
    assert!(s.heading_state().unwrap().data().iter().all(|&v| v == 0.0));
    assert!(s.command_state().unwrap().data().iter().all(|&v| v == 0.0));
    assert!(s.prev_command().unwrap().data().iter().all(|&v| v == 0.0));
    let mlp = ArchitectureSpec::default_for(ArchKind::Mlp).build::<f64>(0);
    assert!(mlp.initial_state(3).is_empty());
    let gru = ArchitectureSpec::default_for(ArchKind::Gru).build::<f64>(0);
    let h = gru.initial_state(2);
    assert_eq!(h.hidden().unwrap().shape(), &[2, 256]);
    assert!(h.hidden().unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn insect_structural_invariants_hold_along_a_trajectory() {
    let policy = ArchitectureSpec::default_for(ArchKind::Insect).build::<f64>(3);
    let seq = sample_sequence(4, 12, 3).unwrap();
    let mut state = policy.initial_state(4);
    for obs in &seq {
        let mut tape = Tape::new();
        let bound = tape.bind(policy.params());
        let o = tape.constant(observation_batch(obs));
        let s = state.to_tape(&mut tape);
        let (out, next) = policy.step(&mut tape, &bound, o, &s).unwrap();
        for r in 0..4 {
            for probs in [out.mode_probs.unwrap(), out.arbiter_weights.unwrap()] {
                let row = tape.value(probs).row(r);
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            let code = tape.value(out.memory_code.unwrap()).row(r);
            assert_eq!(code.len(), 512);
            assert!(code.iter().filter(|&&v| v != 0.0).count() <= 32);
            assert!(tape.value(out.command.unwrap()).row(r).iter().all(|v| v.abs() <= 1.0));
            assert!(tape.value(out.memory_readout.unwrap()).row(r).iter().all(|v| v.abs() < 1.0));
            for &a in &out.proposals {
                assert!(tape.value(a).row(r).iter().all(|v| v.abs() < 1.0));
            }
        }
        state = RecurrentState::from_tape(ArchKind::Insect, &tape, &next);
    }
}

#[test]
fn equal_priorities_give_uniform_arbitration() {
    let mut policy = ModularPolicy::<f64>::new(ModularWidths::default(), 5);
    let store = policy.params_mut();
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains(".priority.1.") {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let seq = sample_sequence(2, 1, 5).unwrap();
    let mut tape = Tape::new();
    let bound = tape.bind(policy.params());
    let o = tape.constant(observation_batch(&seq[0]));
    let s = policy.initial_state(2).to_tape(&mut tape);
    let (out, _) = policy.step(&mut tape, &bound, o, &s).unwrap();
    assert!(tape.value(out.arbiter_weights.unwrap()).data().iter().all(|&a| (a - 0.25).abs() < 1e-15));
    // The action head starts as identity/zero, so the mean is the proposal average.
    let mean = tape.value(out.mean);
    for r in 0..2 {
        for c in 0..2 {
            let avg = out.proposals.iter().map(|&p| tape.value(p).row(r)[c]).sum::<f64>() / 4.0;
            assert!((mean.row(r)[c] - avg).abs() < 1e-15);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    for kind in ArchKind::ALL {
        let policy = ArchitectureSpec::default_for(kind).build::<f32>(11);
        let seq = sample_sequence(3, 2, 11).unwrap();
        let s0 = policy.initial_state(3);
        let (a, sa) = forward(policy.as_ref(), &seq[1], &s0).unwrap();
        let (b, sb) = forward(policy.as_ref(), &seq[1], &s0).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}

#[test]
fn zero_parameter_baselines_output_zero() {
    let seq = sample_sequence(2, 1, 1).unwrap();
    for kind in [ArchKind::Gru, ArchKind::Mlp] {
        let mut policy = ArchitectureSpec::default_for(kind).build::<f64>(0);
        zero_params(policy.as_mut());
        let (out, _) = forward(policy.as_ref(), &seq[0], &policy.initial_state(2)).unwrap();
        for o in out {
            assert_eq!(o.action_mean, [0.0, 0.0]);
            assert_eq!(o.value, 0.0);
            assert!(o.mode_probs.is_none() && o.arbiter_weights.is_none() && o.command.is_none());
        }
    }
}

#[test]
fn gru_hidden_state_evolves_and_mlp_is_stateless() {
    let seq = sample_sequence(1, 1, 2).unwrap();
    let gru = ArchitectureSpec::default_for(ArchKind::Gru).build::<f64>(2);
    let (o1, s1) = forward(gru.as_ref(), &seq[0], &gru.initial_state(1)).unwrap();
    let (o2, _) = forward(gru.as_ref(), &seq[0], &s1).unwrap();
    assert_ne!(o1[0].action_mean, o2[0].action_mean);

    let mlp = ArchitectureSpec::default_for(ArchKind::Mlp).build::<f64>(2);
    let fake = RecurrentState { kind: ArchKind::Mlp, tensors: vec![] };
    let (a, _) = forward(mlp.as_ref(), &seq[0], &fake).unwrap();
    let other = sample_sequence(1, 5, 9).unwrap();
    let _ = forward(mlp.as_ref(), &other[4], &fake).unwrap();
    let (b, _) = forward(mlp.as_ref(), &seq[0], &mlp.initial_state(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_parameter_receives_gradient() {
    for kind in ArchKind::ALL {
        let dead = dead_parameters(&ArchitectureSpec::default_for(kind), 4, 3).unwrap();
        assert!(dead.is_empty(), "{kind}: no gradient reaches {dead:?}");
    }
}

#[test]
fn full_policies_match_finite_differences() {
    for kind in ArchKind::ALL {
        let report = policy_gradcheck(&ArchitectureSpec::default_for(kind), 1, 3, Some(3)).unwrap();
        assert!(report.passed(), "{report}");
    }
}

#[test]
fn architecture_spec_parses_from_toml() {
    let spec: ArchitectureSpec = toml::from_str("kind = \"gru\"\nhidden = 128\n").unwrap();
    assert_eq!(spec, ArchitectureSpec::Gru(GruWidths { hidden: 128, ..GruWidths::default() }));
    assert!(toml::from_str::<ArchitectureSpec>("kind = \"gru\"\nbogus = 1\n").is_err());
    assert_eq!("MLP".parse::<ArchKind>().unwrap(), ArchKind::Mlp);
    assert!("transformer".parse::<ArchKind>().is_err());
}
