use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use structok::data::{synth_sized, Structure, StructureKind};
use structok::model::{TokenizerConfig, TokenizerModel};
use structok::training::{evaluate_rmse, train, TrainConfig};

fn one_structure() -> Structure {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let cloud = synth_sized(&mut rng, 50, None).unwrap();
    Structure { name: "one".into(), kind: StructureKind::Synthetic, cloud }
}

fn overfit_config(steps: u64) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        batch_size: 1,
        effective_batch: 1,
        augment_rotations: false,
        validate_every: 0,
        lr_start: 3e-3,
        lr_end: 0.0,
        deterministic: true,
        ..TrainConfig::default()
    }
}

#[test]
fn single_structure_overfit() {
    let s = one_structure();
    let model = TokenizerModel::new(TokenizerConfig::desk()).unwrap();
    let before = evaluate_rmse(&model, std::slice::from_ref(&s)).unwrap();
    let (model, log) = train(model, vec![s.clone()], vec![], overfit_config(2000)).unwrap();
    let after = evaluate_rmse(&model, std::slice::from_ref(&s)).unwrap();
    eprintln!("overfit rmse {before:.3} -> {after:.4}");
    assert!(after < 0.1, "rmse {after} after 2000 steps");

    let head: f64 = log[..20].iter().map(|r| r.train_loss).sum::<f64>() / 20.0;
    let tail: f64 = log[180..200].iter().map(|r| r.train_loss).sum::<f64>() / 20.0;
    assert!(tail < 0.5 * head, "loss {head} -> {tail} over the first 200 steps");
}
