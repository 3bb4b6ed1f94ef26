use exformer_core::autodiff::Graph;
use exformer_core::embedder::EmbedderConfig;
use exformer_core::model::{ExformerConfig, FusionMode};
use exformer_core::signal::{synth_speaker_utterance, Waveform};
use exformer_core::tensor::Tensor;
use exformer_core::{Embedder64, Exformer64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(mode: FusionMode) -> ExformerConfig {
    ExformerConfig {
        feature_dim: 8,
        chunk_len: 4,
        n_blocks: 2,
        layers_per_path: 1,
        n_heads: 2,
        ff_dim: 16,
        embed_dim: 6,
        fusion_mode: mode,
        ..ExformerConfig::default()
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

#[test]
fn every_fusion_layer_receives_gradient() {
    for mode in FusionMode::ALL {
        let model = Exformer64::new(small(mode), 1).unwrap();
        let mut g = Graph::new();
        let x = g.constant(random(&[400], 2));
        let z = g.constant(random(&[6], 3));
        let out = model.forward(&mut g, model.weights(), x, z).unwrap();
        let sq = g.square(out.target);
        let loss = g.sum_all(sq);
        g.backward(loss);
        let grads = g.param_grads(&model.store);
        for lin in &model.fusion {
            let gw = grads[lin.weight.index()]
                .as_ref()
                .expect("fusion weight has no gradient");
            assert!(gw.sum_squares() > 0.0, "{mode}: zero fusion gradient");
        }
    }
}

#[test]
fn shared_fusion_uses_one_layer() {
    let cfg = ExformerConfig {
        share_fusion: true,
        ..small(FusionMode::Add)
    };
    let model = Exformer64::new(cfg, 1).unwrap();
    assert_eq!(model.fusion.len(), 1);
    assert_eq!(
        Exformer64::new(small(FusionMode::Add), 1)
            .unwrap()
            .fusion
            .len(),
        2
    );
}

#[test]
fn zeroed_residual_branches_make_the_block_an_identity() {
    let cfg = ExformerConfig {
        positional_encoding: false,
        ..small(FusionMode::Add)
    };
    let mut model = Exformer64::new(cfg, 4).unwrap();
    let layers: Vec<_> = model
        .blocks
        .iter()
        .flat_map(|b| b.intra.iter().chain(&b.inter))
        .cloned()
        .collect();
    for l in &layers {
        l.out_proj.zero(&mut model.store);
        l.ff_out.zero(&mut model.store);
    }
    let mut g = Graph::new();
    let x = random(&[3, 4, 8], 5);
    let xv = g.constant(x.clone());
    let y = model
        .dual_path_block(&mut g, model.weights(), xv, 0)
        .unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn intra_path_treats_chunks_independently() {
    let model = Exformer64::new(small(FusionMode::Mult), 6).unwrap();
    let x = random(&[3, 4, 8], 7);
    let perm = [2usize, 0, 1];
    let swapped = Tensor::from_fn(&[3, 4, 8], |i| x.data()[perm[i / 32] * 32 + i % 32]);
    let mut g = Graph::new();
    let a = g.constant(x);
    let b = g.constant(swapped);
    let ya = model.intra(&mut g, model.weights(), a, 0);
    let yb = model.intra(&mut g, model.weights(), b, 0);
    let (ya, yb) = (g.value(ya).data().to_vec(), g.value(yb).data().to_vec());
    for i in 0..ya.len() {
        let j = perm[i / 32] * 32 + i % 32;
        assert!((yb[i] - ya[j]).abs() < 1e-12);
    }
}

#[test]
fn extraction_is_finite_in_double_precision() {
    let emb = Embedder64::new(
        EmbedderConfig {
            n_blstm_layers: 1,
            hidden_units: 8,
            embed_dim: 6,
            ..EmbedderConfig::default()
        },
        2,
    )
    .unwrap();
    let model = Exformer64::new(small(FusionMode::Concat), 3).unwrap();
    let enroll = synth_speaker_utterance(1, 0.5, 1).unwrap();
    let mix = Waveform::new(
        (0..777).map(|i| (i as f32 * 0.05).sin() * 0.4).collect(),
        8000,
    )
    .unwrap();
    let (t, r) = model.extract(&emb, &mix, &enroll).unwrap();
    assert_eq!((t.len(), r.len()), (777, 777));
    assert!(t.samples().iter().chain(r.samples()).all(|v| v.is_finite()));
    assert!(model
        .extract(&emb, &Waveform::zeros(15, 8000).unwrap(), &enroll)
        .is_err());
}
