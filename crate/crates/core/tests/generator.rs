use storyrewrite::corpus::{build_vocab, StoryPair, Vocab};
use storyrewrite::generator::{
    generator_instances, train_generator, GeneratorArch, GeneratorModel, GeneratorTrainConfig, SamplerConfig,
};
use storyrewrite::seed::rng;
use storyrewrite::skeleton::Skeleton;
use storyrewrite::synthetic::templated_corpus;

fn setup() -> (Vec<StoryPair>, Vocab, GeneratorArch) {
    let (pairs, _) = templated_corpus(6, 21);
    let vocab = build_vocab(&pairs, 1).unwrap();
    let arch = GeneratorArch {
        dim: 16,
        layers: 2,
        heads: 2,
        ff_dim: 32,
        max_len: 80,
        max_context_len: 56,
    };
    (pairs, vocab, arch)
}

#[test]
fn later_tokens_never_change_earlier_distributions() {
    let (pairs, vocab, arch) = setup();
    let model = GeneratorModel::new(arch, &vocab, 5).unwrap();
    let inst = &generator_instances(&pairs, &vocab, &arch, None).unwrap()[0];
    let mut seq = inst.context.clone();
    seq.ids.extend_from_slice(&inst.target);
    let base = model.token_distributions(&seq);
    let mut r = rng(9);
    use rand::Rng;
    for t in [0, 3, inst.context.len() - 1, seq.len() - 2] {
        let mut changed = seq.clone();
        for id in changed.ids.iter_mut().skip(t + 1) {
            *id = r.random_range(10..vocab.len() as u32);
        }
        let d = model.token_distributions(&changed);
        for row in 0..=t {
            assert_eq!(d.row(row), base.row(row), "position {row} moved after perturbing past {t}");
        }
    }
}

#[test]
fn uniform_model_costs_m_ln_v() {
    let (pairs, vocab, arch) = setup();
    let mut model = GeneratorModel::new(arch, &vocab, 1).unwrap();
    let (w, b) = model.output_layer_mut();
    w.fill(0.0);
    b.fill(0.0);
    let inst = &generator_instances(&pairs, &vocab, &arch, None).unwrap()[1];
    let m = inst.target.len() as f64;
    let loss = model.generation_loss(&inst.context, &inst.target).unwrap();
    let expected = m * (vocab.len() as f64).ln();
    assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
}

#[test]
fn loss_is_additive_over_target_positions() {
    let (pairs, vocab, arch) = setup();
    let model = GeneratorModel::new(arch, &vocab, 2).unwrap();
    let inst = &generator_instances(&pairs, &vocab, &arch, None).unwrap()[2];
    let full = model.generation_loss(&inst.context, &inst.target).unwrap();
    let m = inst.target.len();
    let head = model.generation_loss(&inst.context, &inst.target[..m - 1]).unwrap();
    let mut seq = inst.context.clone();
    seq.ids.extend_from_slice(&inst.target[..m - 1]);
    let dist = model.token_distributions(&seq);
    let last = -dist[[seq.len() - 1, inst.target[m - 1] as usize]].ln();
    assert!((full - head - last).abs() < 1e-9);
}

#[test]
fn immediate_eoe_gives_empty_ending() {
    let (pairs, vocab, arch) = setup();
    let mut model = GeneratorModel::new(arch, &vocab, 3).unwrap();
    let (_, b) = model.output_layer_mut();
    b[[0, Vocab::EOE as usize]] = 1e3;
    let cfg = SamplerConfig {
        k: 5,
        ..Default::default()
    };
    let out = model.generate_ending(&pairs[0], &Skeleton::all_blank(), &vocab, &cfg).unwrap();
    assert!(out.is_empty());
}

#[test]
fn generation_stops_at_length_cap() {
    let (pairs, vocab, arch) = setup();
    let mut model = GeneratorModel::new(arch, &vocab, 4).unwrap();
    let (_, b) = model.output_layer_mut();
    b[[0, Vocab::EOE as usize]] = -1e3;
    for cap in [1, 7, 20] {
        let cfg = SamplerConfig {
            k: 10,
            temperature: 1.3,
            seed: cap as u64,
            max_ending_length: cap,
        };
        let out = model.generate_ending(&pairs[1], &Skeleton::all_blank(), &vocab, &cfg).unwrap();
        assert_eq!(out.len(), cap);
        assert!(out.iter().all(|t| !t.starts_with('[')), "{out:?}");
    }
}

#[test]
fn augmentation_gives_eight_instances_per_pair() {
    let (pairs, vocab, arch) = setup();
    let aug = GeneratorTrainConfig::default().augment_config().unwrap();
    let plain = generator_instances(&pairs[..1], &vocab, &arch, None).unwrap();
    let with = generator_instances(&pairs[..1], &vocab, &arch, Some(&aug)).unwrap();
    assert_eq!(plain.len(), 2);
    assert_eq!(with.len(), 8);
}

#[test]
fn same_seed_same_loss_curve() {
    let (pairs, vocab, arch) = setup();
    let cfg = GeneratorTrainConfig {
        epochs: 2,
        warmup_steps: 2,
        learning_rate: 1e-3,
        batch_size: 4,
        ..Default::default()
    };
    let (a, ra) = train_generator(&pairs, &pairs[..2], &vocab, arch, &cfg).unwrap();
    let (b, rb) = train_generator(&pairs, &pairs[..2], &vocab, arch, &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.params.values, b.params.values);
    assert!(train_generator(&[], &[], &vocab, arch, &cfg).is_err());
}
