//! The level schedule's predicted counts and bytes against instrumented
//! federated runs.

use fedhe::cost::{comm_estimate, simulate_iteration};
use fedhe::federation::{FedConfig, Federation, TopologyKind};
use fedhe::mhe::backend::Backend;
use fedhe::mhe::params::ChainSpec;
use fedhe::mhe::real::RealBackend;
use fedhe::mhe::reference::ReferenceBackend;
use fedhe::netsim::{NetConfig, WirePhase};
use fedhe::nn::spec::{LayerKind, LayerSpec, Loss, NetworkSpec};
use fedhe::nn::{Network, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn data(n: usize, d: usize, out: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = rng.gen_range(0..out);
            Sample { x, y: (0..out).map(|k| f64::from(u8::from(k == c))).collect() }
        })
        .collect()
}

fn check<B: Backend>(be: &B, net: &Network, parties: usize, topology: TopologyKind) {
    let d = net.logical_input();
    let out = net.output_width();
    let shards = (0..parties).map(|i| data(7, d, out, 40 + i as u64)).collect();
    let cfg = FedConfig { parties, topology, seed: 3, normalize: false, net: NetConfig::default() };
    let mut fed = Federation::prepare(be, net, &cfg, shards).unwrap();
    let before = fed.stats().total.bytes;
    fed.train(2, None, None).unwrap();
    let it = simulate_iteration(net, be.max_level(), be.refresh_level(), parties, net.local_batch);
    for m in &fed.metrics {
        let c = m.counts;
        assert_eq!(
            (c.rotations, c.mul_ct, c.mul_pt, c.bootstraps),
            (it.total.rotations, it.total.mul_ct, it.total.mul_pt, it.total.bootstraps),
            "{:?}",
            net.dims
        );
    }
    assert!(it.total.bootstraps > 0 && it.total.mul_ct > 0);
    let est = comm_estimate(be.params().ring_dim, be.max_level(), be.refresh_level(), net, parties);
    let measured = (fed.stats().total.bytes - before) / 2;
    let phase = |p: WirePhase| fed.stats().per_phase.get(&p).map_or(0, |t| t.bytes) / 2;
    assert_eq!(phase(WirePhase::Map), est.map);
    assert_eq!(phase(WirePhase::Combine), est.combine);
    assert_eq!(phase(WirePhase::Bootstrap), est.bootstrap);
    assert_eq!(phase(WirePhase::Reduce), est.reduce);
    assert_eq!(measured, est.total());
}

#[test]
fn mlp_schedules_match_reference_runs() {
    for (d, widths, act, deg, levels) in [
        (4, vec![4, 2], "sigmoid", 3, 7),
        (4, vec![4, 2], "sigmoid", 3, 4),
        (8, vec![4, 8, 2], "smooth_relu", 5, 6),
        (3, vec![8, 4, 2], "tanh", 7, 9),
        (4, vec![4, 2], "identity", 1, 3),
    ] {
        let net = Network::compile(&NetworkSpec::mlp(d, &widths, act, deg, 0.5, 2, 2)).unwrap();
        for parties in [1, 3, 4] {
            let be = ReferenceBackend::new(ChainSpec::toy(7, levels).build().unwrap(), parties).unwrap();
            check(&be, &net, parties, TopologyKind::Tree);
        }
    }
}

#[test]
fn conv_schedules_match_reference_runs() {
    for pool in [false, true] {
        let mut layers = vec![LayerSpec { kind: LayerKind::Cv, kernel: Some(2), stride: Some(2), filters: Some(2), ..LayerSpec::fc(1, "sigmoid", 3) }];
        if pool {
            layers.push(LayerSpec { kind: LayerKind::AvgPool, kernel: Some(2), ..LayerSpec::fc(1, "sigmoid", 3) });
        }
        layers.push(LayerSpec::fc(2, "sigmoid", 3));
        let spec = NetworkSpec { input_dim: 64, input_shape: Some((8, 8)), layers, loss: Loss::L2, learning_rate: 0.5, local_batch: 1, global_iters: 2 };
        let net = Network::compile(&spec).unwrap();
        let be = ReferenceBackend::new(ChainSpec::toy(11, 7).build().unwrap(), 2).unwrap();
        check(&be, &net, 2, TopologyKind::Star);
    }
}

#[test]
fn schedule_matches_a_real_backend_run() {
    let net = Network::compile(&NetworkSpec::mlp(4, &[4, 2], "sigmoid", 3, 0.5, 1, 1)).unwrap();
    let be = RealBackend::new(ChainSpec::toy(5, 5).build().unwrap(), 3, 11).unwrap();
    check(&be, &net, 3, TopologyKind::Full);
}
