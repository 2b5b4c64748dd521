use dlsr_core::autograd::{GradTarget, Gradients, Graph, Var};
use dlsr_core::data::{synthetic_dataset, Batch, BatchStream, SourceImage};
use dlsr_core::error::Error;
use dlsr_core::losses::{total_loss, LogKernel, LossWeights};
use dlsr_core::optim::{Adam, AdamConfig};
use dlsr_core::params::{ParamGroup, ParamStore};
use dlsr_core::search::{arch_gradient, theta_step, SearchConfig, SearchSession};
use dlsr_core::search_space::{Supernet, SupernetConfig};
use dlsr_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sources(count: usize, seed: u64) -> Vec<SourceImage> {
    synthetic_dataset(count, 32, 32, seed)
        .iter()
        .enumerate()
        .map(|(i, im)| SourceImage::new(format!("img{}", i), im, 2).unwrap())
        .collect()
}

fn tiny_config(seed: u64) -> SearchConfig {
    SearchConfig {
        total_steps: 12,
        warmup_steps: 4,
        batch_size: 2,
        hr_patch: 16,
        snapshot_steps: vec![6, 12],
        seed,
        ..SearchConfig::default()
    }
}

fn net_config() -> SupernetConfig {
    SupernetConfig::new(4, 2, 2)
}

fn snapshot(store: &ParamStore, group: ParamGroup) -> Vec<(String, Tensor)> {
    store
        .iter()
        .filter(|(_, p)| p.group == group)
        .map(|(_, p)| (p.name.clone(), p.value.clone()))
        .collect()
}

fn bits(values: &[(String, Tensor)]) -> Vec<u64> {
    values.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn warmup_changes_weights_only() {
    let mut s = SearchSession::new(tiny_config(3), &net_config(), sources(6, 1)).unwrap();
    let arch0 = snapshot(&s.store, ParamGroup::Architecture);
    let w0 = snapshot(&s.store, ParamGroup::Weights);
    for _ in 0..4 {
        let r = s.advance().unwrap();
        assert!(r.warmup && r.valid.is_none());
    }
    assert_eq!(bits(&arch0), bits(&snapshot(&s.store, ParamGroup::Architecture)));
    assert_ne!(bits(&w0), bits(&snapshot(&s.store, ParamGroup::Weights)));
    let r = s.advance().unwrap();
    assert!(!r.warmup && r.valid.is_some());
    assert_ne!(bits(&arch0), bits(&snapshot(&s.store, ParamGroup::Architecture)));
}

fn setup() -> (ParamStore, Supernet, Batch, Batch) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = Supernet::new(&net_config(), &mut store, &mut rng).unwrap();
    let mut arch = net.arch_params(&store);
    for row in arch.alpha.iter_mut() {
        for v in row.iter_mut() {
            *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
    }
    for row in arch.beta.iter_mut() {
        for v in row.iter_mut() {
            *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
    }
    net.set_arch_params(&mut store, &arch).unwrap();
    let images = sources(4, 5);
    let mut a = BatchStream::new(images.len(), 2, 16, true, 1).unwrap();
    let mut b = BatchStream::new(images.len(), 2, 16, true, 2).unwrap();
    let tb = a.next_batch(&images).unwrap();
    let vb = b.next_batch(&images).unwrap();
    (store, net, tb, vb)
}

fn separate_gradient(store: &ParamStore, net: &Supernet, batch: &Batch, w: &LossWeights) -> Gradients {
    let mut g = Graph::new(store, GradTarget::Architecture);
    let lr = g.input(batch.lr.clone());
    let hr = g.input(batch.hr.clone());
    let sr = net.forward(&mut g, lr).unwrap();
    let alpha: Vec<Var> = net.alpha.iter().map(|&id| g.param(id)).collect();
    let (loss, _) = total_loss(&mut g, sr, hr, &alpha, net.config().channels, w, &LogKernel::default()).unwrap();
    g.backward(loss)
}

fn assert_grads_close(store: &ParamStore, a: &Gradients, b: &Gradients) {
    for id in store.ids_in(ParamGroup::Architecture) {
        let (x, y) = (a.param(id).unwrap(), b.param(id).unwrap());
        let scale = y.data().iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        assert!(x.max_abs_diff(y) <= 1e-9 * scale.max(1.0), "{}", store.name(id));
    }
    for id in store.ids_in(ParamGroup::Weights) {
        assert!(a.param(id).is_none(), "{} has a gradient", store.name(id));
    }
}

#[test]
fn mixed_gradient_matches_two_pass_oracle() {
    let (store, net, tb, vb) = setup();
    for lambda in [1.0, 0.35] {
        let w = LossWeights { lambda_val: lambda, ..LossWeights::default() };
        let (mixed, _, _) = arch_gradient(&store, &net, &tb, &vb, &w, &LogKernel::default()).unwrap();
        let mut oracle = separate_gradient(&store, &net, &tb, &w);
        oracle.accumulate(&separate_gradient(&store, &net, &vb, &w), lambda);
        assert_grads_close(&store, &mixed, &oracle);
    }
}

#[test]
fn zero_lambda_uses_training_loss_only() {
    let (store, net, tb, vb) = setup();
    let w = LossWeights { lambda_val: 0.0, ..LossWeights::default() };
    let (mixed, _, _) = arch_gradient(&store, &net, &tb, &vb, &w, &LogKernel::default()).unwrap();
    let oracle = separate_gradient(&store, &net, &tb, &w);
    assert_grads_close(&store, &mixed, &oracle);
}

#[test]
fn theta_steps_overfit_one_batch() {
    let (mut store, net, tb, _) = setup();
    let w = LossWeights::default();
    let mut opt = Adam::new(&store, ParamGroup::Weights, AdamConfig { lr: 3e-3, ..AdamConfig::default() });
    let arch = snapshot(&store, ParamGroup::Architecture);
    let first = theta_step(&mut store, &net, &tb, &w, &LogKernel::default(), &mut opt, 1).unwrap();
    let mut last = first.clone();
    for step in 2..=60 {
        last = theta_step(&mut store, &net, &tb, &w, &LogKernel::default(), &mut opt, step).unwrap();
    }
    assert!(last.l1 < 0.5 * first.l1, "{} -> {}", first.l1, last.l1);
    assert_eq!(bits(&arch), bits(&snapshot(&store, ParamGroup::Architecture)));
}

#[test]
fn same_seed_is_bitwise_reproducible() {
    let run = |seed| {
        let mut s = SearchSession::new(tiny_config(seed), &net_config(), sources(6, 1)).unwrap();
        let mut records = Vec::new();
        while !s.is_finished() {
            records.push(s.advance().unwrap());
        }
        (records, bits(&snapshot(&s.store, ParamGroup::Weights)), s.snapshots().to_vec())
    };
    let (a, b) = (run(9), run(9));
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_eq!(a.2.iter().map(|s| s.step).collect::<Vec<_>>(), vec![6, 12]);
    for snap in &a.2 {
        snap.genotype.validate().unwrap();
    }
    assert_ne!(a.1, run(10).1);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let mut a = SearchSession::new(tiny_config(4), &net_config(), sources(6, 1)).unwrap();
    for _ in 0..5 {
        a.advance().unwrap();
    }
    let state = a.state();
    let params: Vec<(String, Tensor)> = a.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
    let mut b = SearchSession::new(tiny_config(4), &net_config(), sources(6, 1)).unwrap();
    b.load_params(&params).unwrap();
    b.restore(state).unwrap();
    while !a.is_finished() {
        assert_eq!(a.advance().unwrap(), b.advance().unwrap());
    }
    assert!(b.is_finished());
    assert_eq!(a.snapshots(), b.snapshots());
}

#[test]
fn non_finite_weights_are_reported() {
    let mut s = SearchSession::new(tiny_config(2), &net_config(), sources(6, 1)).unwrap();
    let id = s.store.find("stem.weight").unwrap();
    s.store.get_mut(id).data_mut()[0] = f64::NAN;
    match s.advance() {
        Err(Error::NonFinite { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected a non-finite error, got {:?}", other.map(|r| r.step)),
    }
}

#[test]
fn load_params_rejects_bad_shapes() {
    let mut s = SearchSession::new(tiny_config(2), &net_config(), sources(6, 1)).unwrap();
    assert!(s.load_params(&[("stem.weight".into(), Tensor::zeros(&[1]))]).is_err());
    assert!(s.load_params(&[("nope".into(), Tensor::zeros(&[1]))]).is_err());
}
