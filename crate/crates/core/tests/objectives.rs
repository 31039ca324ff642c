mod common;

use std::f64::consts::LN_2;

use common::*;
use gan_translate::objectives::*;
use gan_translate::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cls<'a>(logits: &'a [f64], labels: &'a [usize]) -> ClassLogits<'a> {
    ClassLogits { logits, labels }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn zero_logit_identities() {
    let z = [0.0; 8];
    let labels = [0, 1, 1, 0, 1, 0, 0, 1];
    let c = [0.0; 16];
    assert!((gan_d_loss(&z, &z).unwrap().value - 2.0 * LN_2).abs() < 1e-6);
    assert!((gan_g_loss(&z).unwrap().value - LN_2).abs() < 1e-6);
    let d = ac_d_loss(&z, &z, cls(&c, &labels), cls(&c, &labels), false).unwrap();
    assert!((d.value - 3.0 * LN_2).abs() < 1e-6);
    let d = ac_d_loss(&z, &z, cls(&c, &labels), cls(&c, &labels), true).unwrap();
    assert!((d.value - 4.0 * LN_2).abs() < 1e-6);
    assert!((ac_g_loss(&z, cls(&c, &labels)).unwrap().value - 2.0 * LN_2).abs() < 1e-6);
}

#[test]
fn limit_cases_go_to_zero() {
    let d = gan_d_loss(&[60.0, 80.0], &[-70.0, -90.0]).unwrap();
    assert!(d.value < 1e-25);
    assert!(gan_g_loss(&[100.0]).unwrap().value < 1e-40);
    let g = ac_g_loss(&[100.0], cls(&[-100.0, 100.0], &[1])).unwrap();
    assert!(g.value < 1e-40);
}

#[test]
fn encoder_loss_examples() {
    let z = [0.3, -0.7, 0.1];
    assert_eq!(encoder_loss(&z, &z).unwrap().value, 0.0);
    assert_eq!(encoder_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap().value, 0.5);
}

/// Fixed inputs with values computed once by the double-double reference.
#[test]
fn frozen_reference_values() {
    let real = [1.5, -0.25, 3.0];
    let fake = [-2.0, 0.75];
    let labels = [1, 0];
    let class_fake = [0.5, -1.0, 2.0, 0.25];
    assert!(close(gan_d_loss(&real, &fake).unwrap().value, FROZEN_GAN_D, 1e-12));
    assert!(close(gan_g_loss(&fake).unwrap().value, FROZEN_GAN_G, 1e-12));
    assert!(close(ac_g_loss(&fake, cls(&class_fake, &labels)).unwrap().value, FROZEN_AC_G, 1e-12));
    assert!(close(
        encoder_loss(&[0.9, -0.4, 0.0], &[0.1, 0.2, -0.3]).unwrap().value,
        FROZEN_MSE,
        1e-12
    ));
}

const FROZEN_GAN_D: f64 = 0.990_546_191_724_048_8;
const FROZEN_GAN_G: f64 = 1.256_899_508_578_936_3;
const FROZEN_AC_G: f64 = 2.187_718_222_789_356_1;
const FROZEN_MSE: f64 = 0.363_333_333_333_333_34;

#[test]
fn frozen_values_agree_with_reference() {
    assert!(close(oracle_gan_d(&[1.5, -0.25, 3.0], &[-2.0, 0.75]), FROZEN_GAN_D, 1e-14));
    assert!(close(oracle_gan_g(&[-2.0, 0.75]), FROZEN_GAN_G, 1e-14));
    assert!(close(
        oracle_gan_g(&[-2.0, 0.75]) + oracle_cross_entropy(&[0.5, -1.0, 2.0, 0.25], &[1, 0]),
        FROZEN_AC_G,
        1e-14
    ));
    assert!(close(oracle_mse(&[0.9, -0.4, 0.0], &[0.1, 0.2, -0.3]), FROZEN_MSE, 1e-14));
}

fn random_logits(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

#[test]
fn losses_match_extended_precision_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let b = rng.gen_range(1..=8);
        let k = rng.gen_range(2..=5);
        let real = random_logits(&mut rng, b, 20.0);
        let fake = random_logits(&mut rng, b, 20.0);
        let cr = random_logits(&mut rng, b * k, 20.0);
        let cf = random_logits(&mut rng, b * k, 20.0);
        let yr: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        let yf: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();

        let want_d = oracle_gan_d(&real, &fake);
        let want_g = oracle_gan_g(&fake);
        let ce_r = oracle_cross_entropy(&cr, &yr);
        let ce_f = oracle_cross_entropy(&cf, &yf);
        let tol = 1e-10;
        assert!(close(gan_d_loss(&real, &fake).unwrap().value, want_d, tol), "case {case}");
        assert!(close(gan_g_loss(&fake).unwrap().value, want_g, tol), "case {case}");
        let d = ac_d_loss(&real, &fake, cls(&cr, &yr), cls(&cf, &yf), false).unwrap();
        assert!(close(d.value, want_d + ce_r, tol), "case {case}");
        let d = ac_d_loss(&real, &fake, cls(&cr, &yr), cls(&cf, &yf), true).unwrap();
        assert!(close(d.value, want_d + ce_r + ce_f, tol), "case {case}");
        let g = ac_g_loss(&fake, cls(&cf, &yf)).unwrap();
        assert!(close(g.value, want_g + ce_f, tol), "case {case}");

        let zt = random_logits(&mut rng, b * 3, 1.0);
        let zp = random_logits(&mut rng, b * 3, 1.0);
        let mse = encoder_loss(&zt, &zp).unwrap().value;
        assert!((mse - oracle_mse(&zt, &zp)).abs() <= 1e-12, "case {case}");
    }
}

#[test]
fn huge_logits_stay_finite() {
    let big = [1e4, -1e4, 5e3];
    let labels = [0, 1, 1];
    let c = [1e4, -1e4, -1e4, 1e4, 3e3, -2e3];
    assert!(gan_d_loss(&big, &big).unwrap().value.is_finite());
    assert!(gan_g_loss(&big).unwrap().value.is_finite());
    let d = ac_d_objective(&big, &big, cls(&c, &labels), cls(&c, &labels), true).unwrap();
    assert!(d.loss.value.is_finite());
    let all = [d.grads.source_real, d.grads.source_fake, d.grads.class_real, d.grads.class_fake].concat();
    assert!(all.iter().all(|g| g.is_finite()));
    let g = ac_g_objective(&big, cls(&c, &labels)).unwrap();
    assert!(g.loss.value.is_finite());
    // -log sigmoid(-1e4) is exactly 1e4 in f64.
    assert_eq!(gan_g_loss(&[-1e4]).unwrap().value, 1e4);
}

#[test]
fn decomposition_into_named_components() {
    let real = [0.3, -1.2];
    let fake = [2.0, -0.5];
    let labels = [1, 0];
    let c = [0.1, 0.9, -0.4, 1.3];
    let d = ac_d_loss(&real, &fake, cls(&c, &labels), cls(&c, &labels), false).unwrap();
    let base = gan_d_loss(&real, &fake).unwrap();
    let (ce, _) = cross_entropy_objective(cls(&c, &labels)).unwrap();
    assert_eq!(d.component("class_real"), Some(ce.value));
    assert_eq!(d.component("source_real"), base.component("source_real"));
    assert_eq!(d.component("source_fake"), base.component("source_fake"));
    assert!(d.component("class_fake").is_none());
    assert_eq!(d.value, d.components.iter().map(|(_, v)| v).sum::<f64>());
    assert!((d.value - base.value - ce.value).abs() < 1e-15);

    let g = ac_g_loss(&fake, cls(&c, &labels)).unwrap();
    let base = gan_g_loss(&fake).unwrap();
    assert_eq!(g.component("class_fake"), Some(ce.value));
    assert!((g.value - base.value - ce.value).abs() < 1e-15);
}

#[test]
fn contract_and_domain_errors() {
    assert!(matches!(gan_d_loss(&[], &[0.0]), Err(Error::Contract(_))));
    assert!(matches!(gan_d_loss(&[0.0], &[]), Err(Error::Contract(_))));
    assert!(matches!(gan_g_loss(&[]), Err(Error::Contract(_))));
    assert!(matches!(encoder_loss(&[0.0, 1.0], &[0.0]), Err(Error::Contract(_))));
    assert!(matches!(encoder_loss(&[], &[]), Err(Error::Contract(_))));
    let c = [0.0; 4];
    assert!(matches!(
        ac_g_loss(&[0.0, 0.0], cls(&c, &[0, 2])),
        Err(Error::Domain(_))
    ));
    assert!(matches!(
        ac_d_loss(&[0.0, 0.0], &[0.0, 0.0], cls(&c, &[0, 1]), cls(&c, &[5, 0]), false),
        Err(Error::Domain(_))
    ));
}

/// Central-difference check of a loss gradient over one logit group.
fn check_group(what: &str, x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) {
    let numeric = numeric_grad(x, f);
    assert_grads_close(what, analytic, &numeric);
}

#[test]
fn objective_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..120 {
        let b = rng.gen_range(1..=4);
        let k = rng.gen_range(2..=(8 / b).max(2));
        let real = random_logits(&mut rng, b, 4.0);
        let fake = random_logits(&mut rng, b, 4.0);
        let cr = random_logits(&mut rng, b * k, 4.0);
        let cf = random_logits(&mut rng, b * k, 4.0);
        let yr: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        let yf: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        let flag = case % 2 == 1;
        let tag = format!("case {case}");

        let d = ac_d_objective(&real, &fake, cls(&cr, &yr), cls(&cf, &yf), flag).unwrap();
        let dloss = |r: &[f64], f: &[f64], a: &[f64], bb: &[f64]| {
            ac_d_loss(r, f, cls(a, &yr), cls(bb, &yf), flag).unwrap().value
        };
        check_group(&format!("{tag} D real"), &real, &d.grads.source_real, |x| dloss(x, &fake, &cr, &cf));
        check_group(&format!("{tag} D fake"), &fake, &d.grads.source_fake, |x| dloss(&real, x, &cr, &cf));
        check_group(&format!("{tag} D class real"), &cr, &d.grads.class_real, |x| dloss(&real, &fake, x, &cf));
        let want_cf = if flag { d.grads.class_fake.clone() } else { vec![0.0; cf.len()] };
        assert_eq!(d.grads.class_fake.is_empty(), !flag);
        check_group(&format!("{tag} D class fake"), &cf, &want_cf, |x| dloss(&real, &fake, &cr, x));

        let g = ac_g_objective(&fake, cls(&cf, &yf)).unwrap();
        check_group(&format!("{tag} G fake"), &fake, &g.grads.source_fake, |x| {
            ac_g_loss(x, cls(&cf, &yf)).unwrap().value
        });
        check_group(&format!("{tag} G class"), &cf, &g.grads.class_fake, |x| {
            ac_g_loss(&fake, cls(x, &yf)).unwrap().value
        });

        let gd = gan_d_objective(&real, &fake).unwrap();
        check_group(&format!("{tag} gan D"), &real, &gd.grads.source_real, |x| gan_d_loss(x, &fake).unwrap().value);
        let gg = gan_g_objective(&fake).unwrap();
        check_group(&format!("{tag} gan G"), &fake, &gg.grads.source_fake, |x| gan_g_loss(x).unwrap().value);

        let n = rng.gen_range(1..=8);
        let zt = random_logits(&mut rng, n, 1.0);
        let zp = random_logits(&mut rng, n, 1.0);
        let (_, ge) = encoder_objective(&zt, &zp).unwrap();
        check_group(&format!("{tag} mse"), &zp, &ge, |x| encoder_loss(&zt, x).unwrap().value);

        let (_, gc) = cross_entropy_objective(cls(&cr, &yr)).unwrap();
        check_group(&format!("{tag} ce"), &cr, &gc, |x| cross_entropy_objective(cls(x, &yr)).unwrap().0.value);
    }
}

fn logit_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e4f64..1e4, 1..=max_len)
}

proptest! {
    #[test]
    fn gan_losses_are_finite_and_nonnegative(real in logit_vec(8), fake in logit_vec(8)) {
        let d = gan_d_loss(&real, &fake).unwrap();
        let g = gan_g_loss(&fake).unwrap();
        prop_assert!(d.value.is_finite() && d.value >= 0.0);
        prop_assert!(g.value.is_finite() && g.value >= 0.0);
    }

    #[test]
    fn ac_losses_are_finite_and_nonnegative(
        rows in prop::collection::vec((prop::collection::vec(-1e4f64..1e4, 3), 0usize..3, -1e4f64..1e4), 1..8),
        flag in any::<bool>(),
    ) {
        let logits: Vec<f64> = rows.iter().flat_map(|r| r.0.clone()).collect();
        let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let source: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let d = ac_d_loss(&source, &source, cls(&logits, &labels), cls(&logits, &labels), flag).unwrap();
        let g = ac_g_loss(&source, cls(&logits, &labels)).unwrap();
        prop_assert!(d.value.is_finite() && d.value >= 0.0);
        prop_assert!(g.value.is_finite() && g.value >= 0.0);
        let sum: f64 = d.components.iter().map(|(_, v)| v).sum();
        prop_assert_eq!(sum, d.value);
    }

    #[test]
    fn encoder_loss_is_nonnegative(pairs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..32)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let v = encoder_loss(&a, &b).unwrap().value;
        prop_assert!(v >= 0.0 && v <= 4.0);
    }
}
