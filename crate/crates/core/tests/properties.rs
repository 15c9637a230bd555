use fcd_autograd::{Binding, ParamStore, Tensor, Var};
use fcd_core::cmla::{Cmla, CmlaConfig};
use fcd_core::harness::{CosineSchedule, TrainConfig};
use fcd_core::metrics::{binary_metrics, scd_metrics, ConfusionMatrix};
use fcd_core::model::layers::Init;
use fcd_core::objective::{aux_loss, hard_mask, main_loss, LossConfig};
use fcd_core::taxonomy::{default_taxonomy, Mode, IGNORE_LABEL};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const K: usize = 6;

fn labels(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop_oneof![9 => 0u8..K as u8, 1 => Just(IGNORE_LABEL)], n)
}

/// Predictions and ground truth of equal length; ground truth may be ignored.
fn pairs() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1usize..200).prop_flat_map(|n| (prop::collection::vec(0u8..K as u8, n), labels(n)))
}

fn cm(pred: &[u8], gt: &[u8]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(K);
    cm.accumulate_slices(pred, gt, pred.len()).unwrap();
    cm
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metrics_ignore_pixel_order((pred, gt) in pairs(), seed in any::<u64>()) {
        prop_assume!(gt.iter().any(|&g| g != IGNORE_LABEL));
        let mut idx: Vec<usize> = (0..pred.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p2: Vec<u8> = idx.iter().map(|&i| pred[i]).collect();
        let g2: Vec<u8> = idx.iter().map(|&i| gt[i]).collect();
        let (a, b) = (cm(&pred, &gt), cm(&p2, &g2));
        prop_assert_eq!(binary_metrics(&a).unwrap(), binary_metrics(&b).unwrap());
        prop_assert_eq!(scd_metrics(&a).unwrap(), scd_metrics(&b).unwrap());
    }

    #[test]
    fn binarizing_commutes_with_counting((pred, gt) in pairs()) {
        prop_assume!(gt.iter().any(|&g| g != IGNORE_LABEL));
        let bin = |v: &[u8]| v.iter().map(|&c| if c == IGNORE_LABEL { c } else { u8::from(c > 0) }).collect::<Vec<_>>();
        let mut pre = ConfusionMatrix::new(2);
        pre.accumulate_slices(&bin(&pred), &bin(&gt), pred.len()).unwrap();
        let full = cm(&pred, &gt);
        prop_assert_eq!(full.binarize(), pre.clone());
        prop_assert_eq!(binary_metrics(&full).unwrap(), binary_metrics(&pre).unwrap());
    }

    #[test]
    fn metrics_stay_in_range((pred, gt) in pairs()) {
        prop_assume!(gt.iter().any(|&g| g != IGNORE_LABEL));
        let c = cm(&pred, &gt);
        prop_assert_eq!(c.total() as usize, gt.iter().filter(|&&g| g != IGNORE_LABEL).count());
        let b = binary_metrics(&c).unwrap();
        for v in [b.precision, b.recall, b.f1, b.iou, b.oa] {
            prop_assert!(in_unit(v), "{v}");
        }
        if b.precision + b.recall > 0.0 {
            let h = 2.0 * b.precision * b.recall / (b.precision + b.recall);
            prop_assert!((b.f1 - h).abs() <= 1e-9);
        }
        let s = scd_metrics(&c).unwrap();
        prop_assert!(in_unit(s.fscd) && in_unit(s.scd_iou_mean));
        prop_assert!((-1.0..=1.0).contains(&s.sek), "{}", s.sek);
    }

    #[test]
    fn merge_is_order_free((p1, g1) in pairs(), (p2, g2) in pairs()) {
        let (a, b) = (cm(&p1, &g1), cm(&p2, &g2));
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b;
        ba.merge(&a).unwrap();
        prop_assert_eq!(&ab, &ba);
        let joined = cm(&[p1, p2].concat(), &[g1, g2].concat());
        prop_assert_eq!(ab, joined);
    }
}

/// `(1, K, 4, 4)` logits and matching labels.
fn loss_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (prop::collection::vec(-8.0f64..8.0, K * 16), labels(16))
}

fn logits(v: &[f64]) -> Var {
    Var::leaf(Tensor::new(&[1, K, 4, 4], v.to_vec()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn losses_are_finite_and_nonnegative((z, y) in loss_inputs(), tau in 0.05f64..0.95) {
        let cfg = LossConfig { tau, ..LossConfig::default() };
        let main = main_loss(&logits(&z), &y, &cfg).unwrap().loss.value().item();
        prop_assert!(main.is_finite() && main >= 0.0, "{main}");
        let mask = hard_mask(&Tensor::new(&[1, K, 4, 4], z.clone()).unwrap(), &y, &cfg).unwrap();
        let aux = aux_loss(&logits(&z), &y, &mask, &cfg).unwrap().value().item();
        prop_assert!(aux.is_finite() && aux >= 0.0, "{aux}");
    }

    #[test]
    fn ignored_pixels_are_never_hard((z, y) in loss_inputs(), tau in 0.05f64..1.0) {
        let cfg = LossConfig { tau, ..LossConfig::default() };
        let mask = hard_mask(&Tensor::new(&[1, K, 4, 4], z).unwrap(), &y, &cfg).unwrap();
        for (m, l) in mask.mask.iter().zip(&y) {
            prop_assert!(!(*m && *l == IGNORE_LABEL));
        }
    }

    #[test]
    fn aux_ignores_scores_outside_mask(
        (z, y) in loss_inputs(),
        s in prop::collection::vec(-8.0f64..8.0, K * 16),
        noise in prop::collection::vec(-20.0f64..20.0, K * 16),
    ) {
        let cfg = LossConfig { tau: 0.6, ..LossConfig::default() };
        let mask = hard_mask(&Tensor::new(&[1, K, 4, 4], z).unwrap(), &y, &cfg).unwrap();
        let perturbed: Vec<f64> = s
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.mask[i % 16] { v } else { v + noise[i] })
            .collect();
        let a = aux_loss(&logits(&s), &y, &mask, &cfg).unwrap().value().item();
        let b = aux_loss(&logits(&perturbed), &y, &mask, &cfg).unwrap().value().item();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // |scores| <= gamma = 10, so the pre-activation stays below 33; beyond about 37
    // an f64 sigmoid rounds to exactly 1
    #[test]
    fn gate_is_open_interval_and_bounds_scaling(
        w in prop::collection::vec(-0.5f64..0.5, K),
        bias in -3.0f64..3.0,
        z in prop::collection::vec(-5.0f64..5.0, 2 * 8 * 9),
    ) {
        let mut store = ParamStore::new();
        let cfg = CmlaConfig { dim: 16, ..CmlaConfig::default() };
        let cmla = Cmla::new(&mut Init::new(&mut store, 1), &cfg, 8, K).unwrap();
        *store.value_mut(cmla.gate.weight) = Tensor::new(&[1, K, 1, 1], w).unwrap();
        *store.value_mut(cmla.gate.bias.unwrap()) = Tensor::new(&[1], vec![bias]).unwrap();
        let b = Binding::inference(&store);
        let z = Var::constant(Tensor::new(&[2, 8, 3, 3], z).unwrap());
        let protos = Var::constant(Tensor::from_fn(&[K, 16], |i| if i % 16 == i / 16 { 1.0 } else { 0.0 }));
        let s = cmla.score_map(&b, &z, &protos).unwrap();
        let (zg, g) = cmla.apply_gate(&b, &z, &s).unwrap();
        prop_assert!(g.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        for (a, x) in zg.value().data().iter().zip(z.value().data()) {
            prop_assert!(a.abs() >= x.abs() && a.abs() <= 2.0 * x.abs());
        }
    }

    #[test]
    fn cosine_schedule_decays_monotonically(base in 1e-6f64..1.0, total in 2usize..500) {
        let s = CosineSchedule::new(base, total);
        prop_assert_eq!(s.lr(0), base);
        prop_assert!(s.lr(total - 1) <= base * 1e-12);
        for i in 1..total {
            prop_assert!(s.lr(i) <= s.lr(i - 1));
        }
    }

    #[test]
    fn config_text_round_trips(
        lr in 1e-8f64..1.0,
        epochs in 1usize..1000,
        batch in 1usize..64,
        seed in any::<u64>(),
        tau in 0.01f64..0.99,
        lambda in 0.0f64..4.0,
        max_steps in prop::option::of(1usize..10_000),
        flips in any::<bool>(),
    ) {
        let mut c = TrainConfig {
            lr,
            epochs,
            batch_size: batch,
            seed,
            max_steps,
            flips,
            ..TrainConfig::default()
        };
        c.loss.tau = tau;
        c.loss.lambda_aux = lambda;
        let back = TrainConfig::parse(&c.render()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.render(), c.render());
    }
}

#[test]
fn taxonomy_is_deterministic() {
    for mode in [Mode::Bcd, Mode::Scd] {
        assert_eq!(default_taxonomy(mode), default_taxonomy(mode));
    }
}
