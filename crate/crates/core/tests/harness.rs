mod common;

use common::{tiny_config, tiny_samples};
use fcd_autograd::Binding;
use fcd_core::dataset::{generate_synthetic, load_manifest, write_taxonomy, Split, SynthConfig};
use fcd_core::harness::{evaluate, evaluate_with, train, train_manifest, Checkpoint, EvalOptions, RenderMode};
use fcd_core::model::Batch;
use fcd_core::taxonomy::{default_taxonomy, Mode};
use fcd_core::CoreError;

#[test]
fn seeded_runs_repeat_exactly() {
    let samples = tiny_samples(4, 64);
    let tax = default_taxonomy(Mode::Scd);
    let a = train(&tiny_config(), &tax, &samples, &[]).unwrap();
    let b = train(&tiny_config(), &tax, &samples, &[]).unwrap();
    let (la, lb) = (a.report.losses(), b.report.losses());
    assert_eq!(la.len(), 4);
    for (x, y) in la.iter().zip(&lb) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn zero_lambda_matches_main_loss_only() {
    let samples = tiny_samples(4, 64);
    let tax = default_taxonomy(Mode::Scd);
    let mut zero = tiny_config();
    zero.loss.lambda_aux = 0.0;
    let mut main_only = zero.clone();
    main_only.aux_loss = false;
    let a = train(&zero, &tax, &samples, &[]).unwrap().report;
    let b = train(&main_only, &tax, &samples, &[]).unwrap().report;
    assert_eq!(a.losses(), b.losses());
    assert!(a.steps.iter().any(|s| s.aux > 0.0));
}

#[test]
fn flips_change_the_trace_but_stay_deterministic() {
    let samples = tiny_samples(4, 64);
    let tax = default_taxonomy(Mode::Scd);
    let mut cfg = tiny_config();
    cfg.flips = true;
    let a = train(&cfg, &tax, &samples, &[]).unwrap().report.losses();
    assert_eq!(a, train(&cfg, &tax, &samples, &[]).unwrap().report.losses());
    assert_ne!(a, train(&tiny_config(), &tax, &samples, &[]).unwrap().report.losses());
}

#[test]
fn max_steps_caps_the_run() {
    let samples = tiny_samples(4, 64);
    let mut cfg = tiny_config();
    cfg.epochs = 10;
    cfg.max_steps = Some(3);
    let out = train(&cfg, &default_taxonomy(Mode::Scd), &samples, &[]).unwrap();
    assert_eq!(out.report.steps.len(), 3);
    assert!(out.report.epochs.last().unwrap().val.is_some());
    assert_eq!(out.report.steps[0].lr, cfg.lr);
}

#[test]
fn divergence_is_reported() {
    let samples = tiny_samples(2, 64);
    let mut cfg = tiny_config();
    cfg.lr = 1e300;
    cfg.epochs = 5;
    match train(&cfg, &default_taxonomy(Mode::Scd), &samples, &[]) {
        Err(CoreError::Diverged { step, .. }) => assert!(step >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.report.losses())),
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let samples = tiny_samples(2, 64);
    let tax = default_taxonomy(Mode::Scd);
    let out = train(&tiny_config(), &tax, &samples, &[]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes().unwrap(), std::fs::read(&path).unwrap());
    assert_eq!(loaded.best, out.best.best);

    let refs: Vec<_> = samples.iter().collect();
    let batch = Batch::from_samples(&refs).unwrap();
    let logits = |c: &Checkpoint| {
        let net = c.to_network().unwrap();
        let b = Binding::inference(&net.store);
        net.forward_batch(&b, &batch, true).unwrap().logits.value().clone()
    };
    assert!(logits(&out.best).max_abs_diff(&logits(&loaded)) <= 1e-6);
}

#[test]
fn evaluate_checks_taxonomy_and_supports_oracle_mode() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        n_samples: 2,
        n_test: 2,
        patch_size: 64,
        ..SynthConfig::default()
    };
    let train_split = generate_synthetic(&synth, dir.path()).unwrap();
    let test_split = load_manifest(dir.path(), Split::Test).unwrap().0;
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    let out = train_manifest(&cfg, &train_split, None).unwrap();

    let oracle = EvalOptions {
        oracle: true,
        ..EvalOptions::default()
    };
    let r = evaluate(&out.best, &test_split, &oracle).unwrap().report;
    for v in [
        r.precision,
        r.recall,
        r.f1,
        r.iou,
        r.oa,
        r.fscd.unwrap(),
        r.sek.unwrap(),
        r.scd_iou_mean.unwrap(),
    ] {
        assert_eq!(v, 1.0);
    }
    let json = serde_json::to_value(&r).unwrap();
    for key in ["precision", "recall", "f1", "iou", "oa", "fscd", "sek", "scd_iou_mean"] {
        assert!(json[key].is_number(), "{key} missing");
    }

    let render = dir.path().join("render");
    let opts = EvalOptions {
        render: Some((render.clone(), RenderMode::BcdDiff)),
        ..EvalOptions::default()
    };
    evaluate(&out.best, &test_split, &opts).unwrap();
    assert_eq!(std::fs::read_dir(&render).unwrap().count(), 2);

    write_taxonomy(dir.path(), &default_taxonomy(Mode::Bcd)).unwrap();
    let bcd = load_manifest(dir.path(), Split::Test).unwrap().0;
    assert!(matches!(
        evaluate(&out.best, &bcd, &oracle),
        Err(CoreError::TaxonomyMismatch(_))
    ));
}

#[test]
fn evaluation_merges_across_batches() {
    let samples = tiny_samples(3, 64);
    let tax = default_taxonomy(Mode::Scd);
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    let net = train(&cfg, &tax, &samples, &[]).unwrap().best.to_network().unwrap();
    let whole = evaluate_with(&net, &samples, &EvalOptions::default()).unwrap();
    let split = evaluate_with(
        &net,
        &samples,
        &EvalOptions {
            batch_size: 1,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert_eq!(whole.confusion, split.confusion);
}
