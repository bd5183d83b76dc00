use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use minn_core::channel::{ChannelRealization, ChannelSet, FadingParams};
use minn_core::datasets::{LabeledImageSet, Split};
use minn_core::metasurface::{RisSpec, SimSpec, Surface};
use minn_core::minn::{
    evaluate, grad_check_suite, grad_check_variant, power_normalize, power_normalize_backward, AnnealSchedule,
    ArchConfig, CsiMode, GradFault, MinnModel, MsKind, MsMode, TrainConfig, Trainer, Variant, GRADCHECK_TOL,
};
use minn_core::neuralnet::AdamConfig;
use minn_core::numerics::{CVector, C64};
use minn_core::Error;

fn small_arch(input_dim: usize, classes: usize) -> ArchConfig {
    ArchConfig {
        input_dim,
        classes,
        encoder_hidden: vec![16],
        decoder_hidden: vec![16],
        controller_hidden: vec![8],
        csi_projection: 8,
    }
}

fn channel_pool(n: usize, n_r: usize, n_t: usize, n_m: usize, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (0..n)
        .map(|_| ChannelRealization::random_unit(n_r, n_t, n_m, &mut rng))
        .collect();
    ChannelSet::new(r, seed, FadingParams::free_space(0.01, [3.0, 13.0, 7.0])).unwrap()
}

fn ris_model(variant: Variant, input_dim: usize, classes: usize, seed: u64) -> MinnModel {
    let mut m = MinnModel::new(
        variant,
        Surface::Ris(RisSpec::new(4).unwrap()),
        2,
        3,
        small_arch(input_dim, classes),
        1.0,
        1e-3,
    )
    .unwrap();
    m.init(&mut ChaCha8Rng::seed_from_u64(seed));
    m
}

fn fixed_ris() -> Variant {
    Variant::new(MsKind::Ris, MsMode::Fixed, CsiMode::Agnostic)
}

fn random_images(n: usize, dim: usize, classes: u8, seed: u64) -> LabeledImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(0.0..1.0));
    let labels = (0..n).map(|i| (i % classes as usize) as u8).collect();
    LabeledImageSet::new(x, labels, Split::Test).unwrap()
}

#[test]
fn gradients_match_finite_differences_for_every_variant() {
    let reports = grad_check_suite(7, None).unwrap();
    let variants: std::collections::HashSet<_> = reports.iter().map(|r| r.variant.clone()).collect();
    assert_eq!(variants.len(), 16);
    for r in &reports {
        assert!(r.passed, "{} / {}: {:.3e}", r.variant, r.block, r.rel_error);
        assert!(r.rel_error < GRADCHECK_TOL);
    }
    let sim3 = reports
        .iter()
        .filter(|r| r.variant == "sim-fixed-agnostic (M=3)" && r.block.starts_with("phases"))
        .count();
    assert_eq!(sim3, 3);
}

#[test]
fn injected_fault_is_caught() {
    let v = Variant::new(MsKind::Sim, MsMode::Reconfigurable, CsiMode::Aware);
    let reports = grad_check_variant(v, 2, 3, Some(GradFault::FlipResponseSign)).unwrap();
    let ctrl = reports.iter().find(|r| r.block == "controller").unwrap();
    assert!(!ctrl.passed, "{}", ctrl.rel_error);
    let fixed = Variant::new(MsKind::Ris, MsMode::Fixed, CsiMode::Agnostic);
    let reports = grad_check_variant(fixed, 1, 3, Some(GradFault::FlipResponseSign)).unwrap();
    assert!(reports.iter().any(|r| !r.passed));
}

#[test]
fn transmitted_power_matches_budget() {
    let model = ris_model(fixed_ris(), 5, 3, 1);
    let pool = channel_pool(4, 3, 2, 4, 2);
    let x = random_images(8, 5, 3, 3);
    let chans: Vec<_> = (0..8).map(|i| pool.get(i % 4)).collect();
    let (_, cache) = model.forward(x.images(), &chans, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for s in &cache.signals {
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }
    let mut scaled = model.clone();
    scaled.set_power(0.25);
    let (_, cache) = scaled.forward(x.images(), &chans, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((cache.signals[0].norm_sqr() - 0.25).abs() < 1e-12);
}

#[test]
fn zero_signal_is_rejected() {
    let z = CVector::zeros(3);
    assert!(matches!(power_normalize(&z, 1.0), Err(Error::DegenerateInput(_))));
    let nan = CVector::from_vec(vec![C64::new(f64::NAN, 0.0)]);
    assert!(matches!(power_normalize(&nan, 1.0), Err(Error::DegenerateInput(_))));
}

#[test]
fn forward_is_deterministic_given_seed() {
    let model = ris_model(Variant::new(MsKind::Ris, MsMode::Reconfigurable, CsiMode::Aware), 5, 3, 4);
    let pool = channel_pool(3, 3, 2, 4, 5);
    let x = random_images(3, 5, 3, 6);
    let chans: Vec<_> = (0..3).map(|i| pool.get(i)).collect();
    let a = model.forward(x.images(), &chans, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().0;
    let b = model.forward(x.images(), &chans, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().0;
    assert_eq!(a, b);
    for row in a.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn untrained_model_is_near_chance() {
    let model = ris_model(fixed_ris(), 5, 10, 11);
    let pool = channel_pool(16, 3, 2, 4, 12);
    let x = random_images(2000, 5, 10, 13);
    let acc = evaluate(&model, &x, &pool, 1).unwrap();
    assert!((0.05..=0.2).contains(&acc), "{acc}");
    assert_eq!(acc, evaluate(&model, &x, &pool, 1).unwrap());
}

#[test]
fn stale_cache_and_shape_mismatch() {
    let mut model = ris_model(fixed_ris(), 5, 3, 1);
    let pool = channel_pool(2, 3, 2, 4, 2);
    let x = random_images(2, 5, 3, 3);
    let chans: Vec<_> = (0..2).map(|i| pool.get(i)).collect();
    let (probs, cache) = model.forward(x.images(), &chans, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let p = model.params();
    model.set_params(&p).unwrap();
    assert!(matches!(model.backward(&cache, probs.view()), Err(Error::Contract(_))));

    let wrong = channel_pool(2, 4, 2, 4, 2);
    let chans: Vec<_> = (0..2).map(|i| wrong.get(i)).collect();
    assert!(matches!(
        model.forward(x.images(), &chans, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        MinnModel::new(fixed_ris(), Surface::None, 2, 3, small_arch(5, 3), 1.0, 0.0),
        Err(Error::Contract(_))
    ));
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let model = ris_model(fixed_ris(), 5, 3, 21);
    let before = model.params();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        optimizer: AdamConfig { learning_rate: 0.0, weight_decay: 0.0, ..AdamConfig::default() },
        seed: 1,
    };
    let mut t = Trainer::new(model, cfg).unwrap();
    t.train_epoch(&random_images(32, 5, 3, 1), &channel_pool(4, 3, 2, 4, 1)).unwrap();
    assert_eq!(t.model.params(), before);
}

#[test]
fn overfits_single_sample() {
    let mut model = MinnModel::new(
        Variant::new(MsKind::Sim, MsMode::Fixed, CsiMode::Aware),
        Surface::sim(SimSpec::with_defaults(2, 2, 0.01)).unwrap(),
        2,
        3,
        small_arch(5, 3),
        1.0,
        0.0,
    )
    .unwrap();
    model.init(&mut ChaCha8Rng::seed_from_u64(31));
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 1,
        optimizer: AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() },
        seed: 2,
    };
    let sample = random_images(1, 5, 3, 4);
    let pool = channel_pool(1, 3, 2, 4, 5);
    let mut t = Trainer::new(model, cfg).unwrap();
    let mut loss = f64::INFINITY;
    for _ in 0..500 {
        loss = t.train_epoch(&sample, &pool).unwrap();
    }
    assert!(loss < 0.01, "{loss}");
}

#[test]
fn separable_toy_through_fixed_ris() {
    // Two classes: the first half of the pixels lit or the second half.
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let make = |n: usize, rng: &mut ChaCha8Rng| {
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x = Array2::from_shape_fn((n, 8), |(i, j)| {
            let on = (j < 4) == (labels[i] == 0);
            if on {
                rng.random_range(0.6..1.0)
            } else {
                rng.random_range(0.0..0.2)
            }
        });
        LabeledImageSet::new(x, labels, Split::Train).unwrap()
    };
    let train = make(400, &mut rng);
    let test = make(400, &mut rng);
    let pool = channel_pool(32, 3, 2, 4, 41);
    let aware = Variant::new(MsKind::Ris, MsMode::Fixed, CsiMode::Aware);
    let mut model = MinnModel::new(aware, Surface::Ris(RisSpec::new(4).unwrap()), 2, 3, small_arch(8, 2), 1.0, 1e-3)
        .unwrap();
    model.init(&mut ChaCha8Rng::seed_from_u64(42));
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        optimizer: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
        seed: 43,
    };
    let mut t = Trainer::new(model, cfg).unwrap();
    for _ in 0..30 {
        t.train_epoch(&train, &pool).unwrap();
    }
    let acc = evaluate(&t.model, &test, &pool, 44).unwrap();
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn evaluation_rejects_empty_inputs() {
    let model = ris_model(fixed_ris(), 5, 3, 1);
    let pool = channel_pool(2, 3, 2, 4, 2);
    let empty = LabeledImageSet::new(Array2::zeros((0, 5)), vec![], Split::Test).unwrap();
    assert!(matches!(evaluate(&model, &empty, &pool, 0), Err(Error::Config(_))));
}

#[test]
fn annealing_schedule_staircase() {
    let s = AnnealSchedule {
        start_dbm: 30.0,
        floor_dbm: -20.0,
        step_db: 5.0,
        epochs_per_step: 5,
        pretrain_epochs: 0,
    };
    assert_eq!(s.levels(), 11);
    assert_eq!(s.total_epochs(), 55);
    assert_eq!(s.power_dbm(0), 30.0);
    assert_eq!(s.power_dbm(4), 30.0);
    assert_eq!(s.power_dbm(5), 25.0);
    assert_eq!(s.power_dbm(54), -20.0);
    assert_eq!(s.power_dbm(500), -20.0);
    let pre = AnnealSchedule { pretrain_epochs: 3, ..s.clone() };
    assert_eq!(pre.power_dbm(2), 30.0);
    assert_eq!(pre.power_dbm(8), 25.0);
    assert!(AnnealSchedule { step_db: 0.0, ..s }.validate().is_err());
}

#[test]
fn checkpoint_round_trip() {
    let model = ris_model(Variant::new(MsKind::Ris, MsMode::Reconfigurable, CsiMode::Aware), 5, 3, 50);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save_checkpoint(&path).unwrap();
    let back = MinnModel::load_checkpoint(&path).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.variant(), model.variant());
    let sim = MinnModel::new(
        Variant::new(MsKind::Sim, MsMode::Fixed, CsiMode::Agnostic),
        Surface::sim(SimSpec::with_defaults(3, 2, 0.01)).unwrap(),
        2,
        3,
        small_arch(5, 3),
        1.0,
        0.0,
    )
    .unwrap();
    sim.save_checkpoint(&path).unwrap();
    assert_eq!(MinnModel::load_checkpoint(&path).unwrap().surface(), sim.surface());
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::all() {
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
    }
    assert_eq!(Variant::all().len(), 12);
    assert!(matches!("sim-fixed".parse::<Variant>(), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalisation_meets_budget(re in proptest::collection::vec(-5.0f64..5.0, 1..8), p in 1e-6f64..1e3) {
        let u: CVector = re.iter().enumerate().map(|(i, &r)| C64::new(r, 0.3 * i as f64 - 1.0)).collect();
        let s = power_normalize(&u, p).unwrap();
        prop_assert!((s.norm_sqr() - p).abs() <= 1e-12 * p);
    }

    #[test]
    fn normalisation_gradient_is_orthogonal_to_signal(
        re in proptest::collection::vec(-2.0f64..2.0, 2..6),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: CVector = re.iter().map(|&r| C64::new(r, rng.random_range(-1.0..1.0))).collect();
        let c = CVector::random(u.len(), &mut rng);
        let g = power_normalize_backward(&u, 2.0, &c);
        // Scaling u leaves s unchanged, so the radial derivative vanishes.
        let radial: f64 = u.iter().zip(g.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        prop_assert!(radial.abs() < 1e-10 * (1.0 + g.norm() * u.norm()));
    }
}
