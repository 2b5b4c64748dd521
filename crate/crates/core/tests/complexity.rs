use std::collections::BTreeMap;

use dlsr_core::complexity::{genotype_complexity, op_multiadds, op_params, supernet_complexity, ComplexityReport, HD_720P};
use dlsr_core::genotype::{DerivedNet, Genotype};
use dlsr_core::params::ParamStore;
use dlsr_core::search_space::{DistillRatio, Operation, Supernet, SupernetConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Scalar count per layer prefix, read off the instantiated parameters.
fn enumerate(store: &ParamStore, report: &ComplexityReport) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for (_, p) in store.iter() {
        let layer = report
            .per_layer
            .iter()
            .filter(|l| p.name == l.name || p.name.starts_with(&format!("{}.", l.name)))
            .max_by_key(|l| l.name.len())
            .unwrap_or_else(|| panic!("{} has no report entry", p.name));
        *counts.entry(layer.name.clone()).or_default() += p.value.len() as u64;
    }
    counts
}

fn assert_matches_enumeration(store: &ParamStore, report: &ComplexityReport) {
    let counts = enumerate(store, report);
    assert_eq!(counts.len(), report.per_layer.len());
    for l in &report.per_layer {
        assert_eq!(counts[&l.name], l.params, "{}", l.name);
    }
    let total: usize = store.iter().map(|(_, p)| p.value.len()).sum();
    assert_eq!(total as u64, report.total_params);
}

#[test]
fn table_values_at_fifty_channels() {
    let params_k = [2.5, 22.5, 62.5, 122.5, 5.9, 7.5, 9.9, 2.95, 3.75];
    let madds_g = [0.576, 5.184, 14.400, 28.224, 1.359, 1.728, 2.281, 0.680, 0.864];
    for (i, op) in Operation::ALL.iter().enumerate() {
        let p = op_params(&op.spec(), 50) as f64 / 1e3;
        let m = op_multiadds(&op.spec(), 50, HD_720P, 2).unwrap() as f64 / 1e9;
        assert!((p - params_k[i]).abs() < 1e-9, "{} params {}", op, p);
        assert!(((m * 1e3).round() / 1e3 - madds_g[i]).abs() < 1e-9, "{} multiadds {}", op, m);
    }
}

#[test]
fn derived_network_matches_enumeration() {
    let genotypes = [
        Genotype::repeated([Operation::Conv1x1, Operation::SepConv3x3, Operation::SepConv7x7], 8, 4, 2),
        Genotype::repeated([Operation::DilConv5x5, Operation::Conv7x7, Operation::DilConv3x3], 12, 3, 4),
        Genotype {
            connections: vec![vec![0], vec![0, 1], vec![0, 2]],
            ..Genotype::repeated([Operation::Conv5x5, Operation::SepConv5x5, Operation::Conv3x3], 8, 3, 3)
        },
    ];
    for g in &genotypes {
        let mut store = ParamStore::new();
        DerivedNet::new(g, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let report = genotype_complexity(g, &g.network_config(), (96, 96)).unwrap();
        assert_matches_enumeration(&store, &report);
    }
}

#[test]
fn supernet_matches_enumeration() {
    let cfg = SupernetConfig::new(8, 3, 2);
    let mut store = ParamStore::new();
    Supernet::new(&cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let report = supernet_complexity(&cfg, (32, 32)).unwrap();
    assert_matches_enumeration(&store, &report);
}

#[test]
fn single_channel_single_cell_hand_count() {
    let cfg = SupernetConfig {
        channels: 1,
        num_cells: 1,
        scale: 2,
        distill_ratio: DistillRatio { numerator: 1, denominator: 1 },
        esa_reduction: 1,
        final_distill_kernel: 3,
    };
    let g = Genotype::repeated([Operation::Conv1x1; 3], 1, 1, 2);
    // stem 28, aggregate 2, three 1x1 distills 6, ops 3, 3x3 distill 10,
    // fuse 5, attention 2+2+10+10+10+10+2, fusion 2+10, upsampler 120
    let report = genotype_complexity(&g, &cfg, (16, 16)).unwrap();
    assert_eq!(report.total_params, 232);
    let mut store = ParamStore::new();
    DerivedNet::with_config(&g, &cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_matches_enumeration(&store, &report);
}
