use pcis_core::fixtures::{four_state, peeling_chain};
use pcis_core::oracle::*;
use pcis_core::verify::*;
use pcis_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tabular_operator(model: &FiniteMdpModel, horizon: usize, epsilon: f64) -> ConservativeOperator {
    let map = model.feature_map();
    let params = ConfidenceParams::uniform(epsilon, 0.9, horizon, map.dimension()).unwrap();
    ConservativeOperator::new(map, model.grid(), params).unwrap()
}

fn sampled(model: &FiniteMdpModel, count: usize, seed: u64) -> TransitionDataset {
    sample_transitions(model, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn conservative_on_random_models() {
    let s = coverage_sweep(300, 0.9, &mut ChaCha8Rng::seed_from_u64(2024)).unwrap();
    assert!(s.rate() >= s.lower_acceptance(), "{s:?}");
    assert!(s.nonempty > 0, "sweep must not be vacuous");
}

#[test]
fn ample_data_recovers_exact_operator() {
    let m = four_state();
    let op = tabular_operator(&m, 2, 0.2);
    let data = sampled(&m, 200_000, 5);
    let omega = m.safe_mask();
    let r = op.apply_exact(&omega, &data.split_stagewise(2)).unwrap();
    assert_eq!(r.q_set.bits(), exact_q_operator(&m, omega.bits(), 2, 0.2).as_slice());
}

#[test]
fn certification_accepts_exact_pcis_with_ample_data_only() {
    let m = four_state();
    let op = tabular_operator(&m, 2, 0.2).with_penalty_mode(PenaltyMode::Fixed(0.0));
    let tent = LatticeMask::from_bits(vec![true, false, true, false]);
    assert!(is_exact_fixed_point(&m, &tent, 2, 0.2));
    let cert = TransitionDataset::from_transitions(DataOrigin::Certification, sampled(&m, 200_000, 6).transitions().to_vec());
    let out = op.certify(&cert, &tent).unwrap();
    assert!(out.accepted);
    assert!(is_exact_fixed_point(&m, &tent, 2, 0.2));
    let empty = TransitionDataset::new(DataOrigin::Certification);
    assert!(!op.certify(&empty, &tent).unwrap().accepted);
}

#[test]
fn con_inv_peels_one_state_per_iteration() {
    let k = 8;
    let m = peeling_chain(k);
    let op = tabular_operator(&m, 1, 0.3);
    let out = op.con_inv_dataset(&sampled(&m, 50_000, 3), &m.safe_mask()).unwrap();
    assert_eq!(out.fixed_point.count(), 0);
    assert_eq!(out.cardinalities, (0..=k).rev().collect::<Vec<_>>());
    assert!(out.iterations <= m.grid().len() + 1);
}

#[test]
fn lipschitz_penalty_shifts_lower_bound_exactly() {
    let b = StateBox::new(vec![0.0], vec![1.0]).unwrap();
    let map = FeatureMap::fourier(b.clone(), 2, 1, false).unwrap();
    let grid = LatticeGrid::new(b, vec![1001]).unwrap();
    let params = ConfidenceParams::uniform(0.5, 0.9, 1, map.dimension()).unwrap();
    let with = ConservativeOperator::new(map.clone(), grid.clone(), params.clone()).unwrap().with_beta_mode(BetaMode::Fixed(0.0));
    let without = with.clone().with_penalty_mode(PenaltyMode::Fixed(0.0));
    let expected = map.dimension() as f64 * map.lipschitz_bound() * grid.delta_x();
    assert!((with.penalty() - expected).abs() < 1e-15);
    assert!(expected > 0.0);
    // x′ = x/2 keeps every successor inside; the fit is close to 1 but not clipped everywhere.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<Transition> = (0..400)
        .map(|_| {
            use rand::Rng;
            let x: f64 = rng.random();
            let next = if rng.random::<f64>() < 0.6 { x / 2.0 } else { 2.0 };
            Transition::new(vec![x], rng.random_range(0..2), vec![next])
        })
        .collect();
    let omega = LatticeMask::full(grid.len());
    let a = with.apply(&omega, &[&data]).unwrap();
    let b = without.apply(&omega, &[&data]).unwrap();
    let mut compared = 0;
    for i in 0..grid.len() {
        let (va, vb) = (a.value_table.get(0, i), b.value_table.get(0, i));
        assert!(va <= vb);
        if va > 0.0 && vb < 1.0 {
            assert!((vb - va - expected).abs() < 1e-12);
            compared += 1;
        }
    }
    assert!(compared > 100);
}

#[test]
fn exact_variant_rejects_continuous_maps() {
    let b = StateBox::new(vec![0.0], vec![1.0]).unwrap();
    let map = FeatureMap::fourier(b.clone(), 1, 1, false).unwrap();
    let grid = LatticeGrid::new(b, vec![3]).unwrap();
    let params = ConfidenceParams::uniform(0.1, 0.9, 1, map.dimension()).unwrap();
    let op = ConservativeOperator::new(map, grid, params).unwrap();
    assert!(matches!(op.apply_exact(&LatticeMask::full(3), &[&[]]), Err(Error::InvalidArgument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_outputs_are_bounded_and_contained(seed in any::<u64>(), n in 1usize..4, eps in 0.0f64..=1.0, per in 0usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&RandomModelSpec::default(), &mut rng);
        let op = tabular_operator(&m, n, eps);
        let data = sample_transitions(&m, per * n, &mut rng);
        let omega = m.safe_mask();
        let r = op.apply(&omega, &data.split_stagewise(n)).unwrap();
        prop_assert!(r.q_set.is_subset_of(&omega));
        for j in 0..=n {
            for &v in r.value_table.stage(j) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        for i in r.q_set.indices() {
            prop_assert!(r.action_maps.bits(0, i) != 0, "thresholded points keep a safe action");
        }
    }

    #[test]
    fn con_inv_is_monotone_and_stable(seed in any::<u64>(), n in 1usize..4, eps in 0.0f64..0.6, per in 0usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&RandomModelSpec::default(), &mut rng);
        let op = tabular_operator(&m, n, eps);
        let data = sample_transitions(&m, per * n, &mut rng);
        let prepared = op.prepare_dataset(&data).unwrap();
        let out = op.con_inv(&prepared, &m.safe_mask()).unwrap();
        prop_assert!(out.cardinalities.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(out.iterations <= m.grid().len() + 1);
        prop_assert!(out.fixed_point.is_subset_of(&m.safe_mask()));
        let again = op.evaluate(&prepared, &out.fixed_point).unwrap();
        prop_assert_eq!(again.q_set, out.fixed_point);
    }

    #[test]
    fn operator_is_monotone_in_reference_set(seed in any::<u64>(), n in 1usize..4, eps in 0.0f64..0.6, per in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_model(&RandomModelSpec::default(), &mut rng);
        let op = tabular_operator(&m, n, eps);
        let prepared = op.prepare_dataset(&sample_transitions(&m, per * n, &mut rng)).unwrap();
        let big = m.safe_mask();
        let small = LatticeMask::from_bits(big.bits().iter().enumerate().map(|(i, &b)| b && i % 2 == 1).collect());
        let (rs, rb) = (op.evaluate(&prepared, &small).unwrap(), op.evaluate(&prepared, &big).unwrap());
        prop_assert!(rs.q_set.is_subset_of(&rb.q_set));
    }
}
