use diffchain::chain::persist::{load_adapter, load_model, round_to_f32, save_adapter, save_model};
use diffchain::diffusion::optim::Params;
use diffchain::diffusion::{
    attach_lora, finetune, pretrain, EpsModel, ModelConfig, NoiseSchedule, TrainConfig,
};
use diffchain::glyphgen::{generate_set, LabeledSet, Role};
use diffchain::guidance::{self, sample_image_with, Branch, GuidancePolicy, SamplerOptions};

fn tiny_model(sched: &NoiseSchedule) -> EpsModel {
    let cfg = ModelConfig {
        hidden: vec![24, 24],
        ..ModelConfig::default()
    };
    let mut model = EpsModel::new(cfg, 11).unwrap();
    let base = generate_set(Role::Base, 64, 11).unwrap();
    let train = TrainConfig {
        epochs: 1,
        batch: 16,
        ..TrainConfig::pretrain()
    };
    pretrain(&mut model, &base, &train, sched).unwrap();
    round_to_f32(&mut model);
    model
}

fn finetune_cfg(p: f64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch: 16,
        cond_drop_prob: p,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn tuned(model: &EpsModel, set: &LabeledSet, cfg: &TrainConfig, sched: &NoiseSchedule) -> Vec<f64> {
    let mut adapter = attach_lora(model, 4, 8.0, 9).unwrap();
    finetune(model, &mut adapter, set, cfg, sched).unwrap();
    adapter.to_flat()
}

#[test]
fn guidance_endpoints_match_single_branches_after_finetuning() {
    let sched = NoiseSchedule::default();
    let model = tiny_model(&sched);
    let set = generate_set(Role::Target, 32, 2).unwrap();
    let mut adapter = attach_lora(&model, 4, 8.0, 1).unwrap();
    finetune(&model, &mut adapter, &set, &finetune_cfg(0.2), &sched).unwrap();

    let mut policy = GuidancePolicy::fixed(1.0);
    policy.t_sample = 10;
    let sample = |policy: &GuidancePolicy, branch| {
        sample_image_with(
            &model,
            Some(&adapter),
            5,
            policy,
            &sched,
            77,
            branch,
            SamplerOptions::default(),
        )
        .unwrap()
        .0
    };
    assert_eq!(
        sample(&policy, Branch::Guided),
        sample(&policy, Branch::Conditional)
    );
    policy.s0 = 0.0;
    assert_eq!(
        sample(&policy, Branch::Guided),
        sample(&policy, Branch::Unconditional)
    );
}

#[test]
fn zero_drop_matches_plain_finetuning() {
    let sched = NoiseSchedule::default();
    let model = tiny_model(&sched);
    let set = generate_set(Role::Target, 48, 3).unwrap();
    let baseline = TrainConfig {
        epochs: 2,
        batch: 16,
        seed: 4,
        ..TrainConfig::default()
    };
    assert_eq!(baseline.cond_drop_prob, 0.0);
    let a = tuned(&model, &set, &baseline, &sched);
    let b = tuned(&model, &set, &finetune_cfg(0.0), &sched);
    assert_eq!(a, b);
    let c = tuned(&model, &set, &finetune_cfg(0.2), &sched);
    assert_ne!(a, c);
}

#[test]
fn full_drop_ignores_training_labels() {
    let sched = NoiseSchedule::default();
    let model = tiny_model(&sched);
    let set = generate_set(Role::Target, 48, 3).unwrap();
    let mut relabeled = set.clone();
    for (i, s) in relabeled.samples.iter_mut().enumerate() {
        s.label = i % 8;
    }
    let cfg = finetune_cfg(1.0);
    assert_eq!(
        tuned(&model, &set, &cfg, &sched),
        tuned(&model, &relabeled, &cfg, &sched)
    );
}

#[test]
fn reloaded_checkpoints_sample_identically() {
    let sched = NoiseSchedule::default();
    let model = tiny_model(&sched);
    let set = generate_set(Role::Target, 32, 6).unwrap();
    let mut adapter = attach_lora(&model, 4, 8.0, 2).unwrap();
    finetune(&model, &mut adapter, &set, &finetune_cfg(0.0), &sched).unwrap();
    round_to_f32(&mut adapter);

    let dir = tempfile::tempdir().unwrap();
    save_model(&dir.path().join("m.rdt"), &model).unwrap();
    save_adapter(&dir.path().join("a.rdt"), &adapter).unwrap();
    let model2 = load_model(&dir.path().join("m.rdt")).unwrap();
    let adapter2 = load_adapter(&dir.path().join("a.rdt"), &model2).unwrap();
    assert_eq!(model2.to_flat(), model.to_flat());
    assert_eq!(adapter2.to_flat(), adapter.to_flat());

    let mut policy = GuidancePolicy::exp_schedule(7.5, 2.0);
    policy.t_sample = 8;
    let prompts = set.labels();
    let gen = |m: &EpsModel, a| {
        guidance::generate_set(
            m,
            Some(a),
            &prompts,
            &policy,
            &sched,
            3,
            1,
            1,
            SamplerOptions::default(),
        )
        .unwrap()
    };
    let (s1, t1) = gen(&model, &adapter);
    let (s2, t2) = gen(&model2, &adapter2);
    assert_eq!(s1, s2);
    assert_eq!(t1, t2);
    assert_eq!(s1.labels(), prompts);
}
