use dlsr_core::data::{synthetic_dataset, SourceImage};
use dlsr_core::error::Error;
use dlsr_core::genotype::{DerivedNet, Genotype};
use dlsr_core::params::ParamGroup;
use dlsr_core::search_space::Operation;
use dlsr_core::train::{load_body, super_resolve, TrainConfig, TrainSession, TAIL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(scale: usize) -> Genotype {
    Genotype::repeated([Operation::Conv3x3, Operation::SepConv3x3, Operation::DilConv3x3], 8, 2, scale)
}

fn sources(count: usize, size: usize, scale: usize, seed: u64) -> Vec<SourceImage> {
    synthetic_dataset(count, size, size, seed)
        .iter()
        .enumerate()
        .map(|(i, im)| SourceImage::new(format!("img{}", i), im, scale).unwrap())
        .collect()
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        total_steps: 20,
        batch_size: 2,
        lr_halve_every: 8,
        hr_patch: Some(16),
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn overfit_single_image_decreases_per_window() {
    let cfg = TrainConfig {
        total_steps: 200,
        batch_size: 1,
        hr_patch: Some(24),
        augment: false,
        lr_init: 2e-3,
        lr_halve_every: 1000,
        ..TrainConfig::default()
    };
    let mut s = TrainSession::new(&tiny(2), cfg, sources(1, 24, 2, 3)).unwrap();
    let mut losses = Vec::new();
    while !s.is_finished() {
        losses.push(s.advance().unwrap().loss.total);
    }
    let windows: Vec<f64> = losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= 0.99 * pair[0], "{:?}", windows);
    }
}

#[test]
fn schedule_is_applied() {
    let mut s = TrainSession::new(&tiny(2), config(1), sources(3, 32, 2, 1)).unwrap();
    let lrs: Vec<f64> = (0..10).map(|_| s.advance().unwrap().lr).collect();
    assert_eq!(lrs[7], 3e-4);
    assert_eq!(lrs[8], 1.5e-4);
    assert_eq!(s.optimizer.config.lr, 1.5e-4);
}

#[test]
fn derived_net_has_no_arch_params() {
    let s = TrainSession::new(&tiny(2), config(1), sources(3, 32, 2, 1)).unwrap();
    assert_eq!(s.store.scalar_count(ParamGroup::Architecture), 0);
    assert!(s.store.iter().all(|(_, p)| !p.name.starts_with("arch.")));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let images = sources(3, 32, 2, 1);
    let mut a = TrainSession::new(&tiny(2), config(5), images.clone()).unwrap();
    for _ in 0..6 {
        a.advance().unwrap();
    }
    let (state, params) = (a.state(), a.params());
    let mut b = TrainSession::new(&tiny(2), config(5), images).unwrap();
    b.load_params(&params).unwrap();
    b.restore(state).unwrap();
    for _ in 0..12 {
        let (x, y) = (a.advance().unwrap(), b.advance().unwrap());
        assert_eq!(x.loss.total.to_bits(), y.loss.total.to_bits());
        assert_eq!(x, y);
    }
}

#[test]
fn cross_scale_init_keeps_body_and_reinits_tail() {
    let x2 = TrainSession::new(&tiny(2), config(1), sources(3, 32, 2, 1)).unwrap();
    let mut x4 = TrainSession::new(&tiny(4), config(2), sources(3, 32, 4, 1)).unwrap();
    let fresh_tail = x4.store.get(x4.store.find("upsampler.weight").unwrap()).clone();
    assert!(x4.load_params(&x2.params()).is_err());
    let copied = load_body(&mut x4.store, &x2.params(), true).unwrap();
    assert!(copied.iter().all(|n| !n.starts_with(TAIL)));
    assert_eq!(copied.len() + 2, x4.store.len());
    for (name, value) in x2.params() {
        let now = x4.store.get(x4.store.find(&name).unwrap());
        if name.starts_with(TAIL) {
            assert_ne!(now.shape(), value.shape());
        } else {
            assert_eq!(now, &value, "{}", name);
        }
    }
    assert_eq!(x4.store.get(x4.store.find("upsampler.weight").unwrap()), &fresh_tail);
}

#[test]
fn incompatible_body_is_rejected_with_layer_name() {
    let wide = Genotype::repeated([Operation::Conv3x3; 3], 12, 2, 2);
    let narrow = TrainSession::new(&tiny(2), config(1), sources(3, 32, 2, 1)).unwrap();
    let mut other = TrainSession::new(&wide, config(1), sources(3, 32, 2, 1)).unwrap();
    match load_body(&mut other.store, &narrow.params(), true) {
        Err(Error::ShapeMismatch(msg)) => assert!(msg.contains("stem.weight"), "{}", msg),
        other => panic!("expected a shape mismatch, got {:?}", other),
    }
    let mut missing = narrow.params();
    missing.retain(|(n, _)| n != "cells.1.fuse.bias");
    let mut again = TrainSession::new(&tiny(2), config(1), sources(3, 32, 2, 1)).unwrap();
    match again.load_params(&missing) {
        Err(Error::ShapeMismatch(msg)) => assert!(msg.contains("cells.1.fuse.bias"), "{}", msg),
        other => panic!("expected a missing layer, got {:?}", other),
    }
}

#[test]
fn super_resolve_shape_and_range() {
    let mut store = dlsr_core::params::ParamStore::new();
    let net = DerivedNet::new(&tiny(3), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let lr = synthetic_dataset(1, 7, 9, 4).remove(0);
    let sr = super_resolve(&net, &store, &lr).unwrap();
    assert_eq!((sr.channels, sr.height, sr.width), (3, 21, 27));
    assert!(sr.data.iter().all(|v| (0.0..=1.0).contains(v)));
}
