//! Hand-written backward passes against central finite differences in f64.

mod common;

use common::*;
use gan_translate::config::{LabelMode, RunConfig};
use gan_translate::model::{Architecture, Discriminator, Encoder, Generator};
use gan_translate::nn::{BufferAccess, Builder, Init, Layer, ParamStore, Sequential};
use gan_translate::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 100;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so piecewise-linear activations are
/// differentiable within one finite-difference step.
fn off_kink_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn randomize(params: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Net {
    seq: Sequential,
    params: ParamStore<f64>,
    buffers: ParamStore<f64>,
}

impl Net {
    fn build(rng: &mut ChaCha8Rng, f: impl FnOnce(&mut Builder<'_, f64, ChaCha8Rng>)) -> Net {
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut brng = ChaCha8Rng::seed_from_u64(rng.gen());
        let seq = {
            let mut b = Builder::new(&mut params, &mut buffers, &mut brng, Init::Normal { std: 0.5 });
            f(&mut b);
            b.finish()
        };
        randomize(&mut params, rng, 1.0);
        Net { seq, params, buffers }
    }

    fn output(&self, params: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        self.seq
            .forward_train(params, BufferAccess::Read(&self.buffers), x.clone(), false)
            .0
    }

    /// Checks input and parameter gradients of `sum(y * w)` for random `w`.
    fn check(&self, what: &str, x: &Tensor<f64>, rng: &mut ChaCha8Rng) {
        let (y, tape) = self
            .seq
            .forward_train(&self.params, BufferAccess::Read(&self.buffers), x.clone(), true);
        let w = random_tensor(y.shape(), rng);
        let mut grads = self.params.zeros_like();
        let dx = self
            .seq
            .backward(&self.params, tape, w.clone(), Some(&mut grads), true)
            .expect("input gradient");

        let numeric = numeric_grad(x.data(), |v| {
            let xi = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
            dot(self.output(&self.params, &xi).data(), w.data())
        });
        assert_grads_close(&format!("{what}: input"), dx.data(), &numeric);

        for (i, g) in grads.iter().enumerate() {
            let base = self.params.get(i).data().to_vec();
            let mut probe = self.params.clone();
            let numeric = numeric_grad(&base, |v| {
                probe.get_mut(i).data_mut().copy_from_slice(v);
                dot(self.output(&probe, x).data(), w.data())
            });
            assert_grads_close(&format!("{what}: {}", self.params.name(i)), g.data(), &numeric);
        }
    }
}

#[test]
fn linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..CASES {
        let (b, i, o) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
        let net = Net::build(&mut rng, |bl| {
            bl.linear("fc", i, o);
        });
        let x = random_tensor(&[b, i], &mut rng);
        net.check(&format!("linear case {case}"), &x, &mut rng);
    }
}

#[test]
fn conv_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..CASES {
        let k: usize = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=3);
        let pad = rng.gen_range(0..k);
        let (c, o, b) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let lo = k.saturating_sub(2 * pad).max(1);
        let (h, w) = (rng.gen_range(lo..=8), rng.gen_range(lo..=8));
        let net = Net::build(&mut rng, |bl| {
            bl.conv("conv", c, o, k, stride, pad);
        });
        let x = random_tensor(&[c, b, h, w], &mut rng);
        net.check(&format!("conv case {case} k{k} s{stride} p{pad} {h}x{w}"), &x, &mut rng);
    }
}

#[test]
fn transposed_conv_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..CASES {
        let k: usize = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=3);
        let pad = rng.gen_range(0..=(k - 1) / 2);
        let (c, o, b) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let net = Net::build(&mut rng, |bl| {
            bl.deconv("deconv", c, o, k, stride, pad);
        });
        let x = random_tensor(&[c, b, h, w], &mut rng);
        net.check(&format!("deconv case {case} k{k} s{stride} p{pad} {h}x{w}"), &x, &mut rng);
    }
}

#[test]
fn batch_norm_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..CASES {
        let (c, b) = (rng.gen_range(1..=4), rng.gen_range(2..=4));
        let (h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let net = Net::build(&mut rng, |bl| {
            bl.batch_norm("bn", c, 0.9);
        });
        let x = random_tensor(&[c, b, h, w], &mut rng);
        net.check(&format!("batch norm case {case}"), &x, &mut rng);
    }
}

#[test]
fn activation_and_reshape_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layers = [
        Layer::Relu,
        Layer::LeakyRelu { slope: 0.2 },
        Layer::Tanh,
        Layer::Flatten,
    ];
    for case in 0..CASES {
        let layer = layers[case % layers.len()].clone();
        let (c, b, h, w) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let net = Net::build(&mut rng, |bl| {
            bl.push(layer.clone());
        });
        let x = off_kink_tensor(&[c, b, h, w], &mut rng);
        net.check(&format!("{layer:?} case {case}"), &x, &mut rng);

        let net = Net::build(&mut rng, |bl| {
            bl.push(Layer::Unflatten { c, h, w });
        });
        let x = random_tensor(&[b, c * h * w], &mut rng);
        net.check(&format!("unflatten case {case}"), &x, &mut rng);
    }
}

fn tiny_config(rng: &mut ChaCha8Rng) -> RunConfig {
    RunConfig {
        z_dim: rng.gen_range(1..=4),
        num_domains: rng.gen_range(2..=3),
        image_size: if rng.gen_bool(0.5) { 4 } else { 8 },
        channels: if rng.gen_bool(0.5) { 1 } else { 3 },
        base_channels: 2,
        label_mode: if rng.gen_bool(0.5) { LabelMode::OneHot } else { LabelMode::Embedding },
        embed_dim: 3,
        ..RunConfig::default()
    }
}

/// Checks a sample of coordinates of every parameter tensor.
fn check_params(what: &str, params: &ParamStore<f64>, grads: &[Tensor<f64>], rng: &mut ChaCha8Rng, loss: impl Fn(&ParamStore<f64>) -> f64) {
    for (i, g) in grads.iter().enumerate() {
        let n = g.numel();
        let picks = rand::seq::index::sample(rng, n, n.min(8)).into_vec();
        let mut probe = params.clone();
        let base: Vec<f64> = picks.iter().map(|&j| params.get(i).data()[j]).collect();
        let numeric = numeric_grad(&base, |v| {
            for (&j, &val) in picks.iter().zip(v) {
                probe.get_mut(i).data_mut()[j] = val;
            }
            let out = loss(&probe);
            for (&j, &val) in picks.iter().zip(&base) {
                probe.get_mut(i).data_mut()[j] = val;
            }
            out
        });
        let analytic: Vec<f64> = picks.iter().map(|&j| g.data()[j]).collect();
        assert_grads_close(&format!("{what}: {}", params.name(i)), &analytic, &numeric);
    }
}

#[test]
fn generator_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..20 {
        let config = tiny_config(&mut rng);
        let arch = Architecture::from_config(&config).unwrap();
        let mut g = Generator::<f64>::new(&arch, &mut rng);
        randomize(&mut g.params, &mut rng, 0.5);
        let b = rng.gen_range(2..=4);
        let z = random_tensor(&[b, arch.z_dim], &mut rng);
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..arch.num_domains)).collect();
        let (y, tape) = g.forward_train(&z, &labels, false, true).unwrap();
        let w = random_tensor(y.shape(), &mut rng);
        let mut grads = g.zero_grads();
        g.backward(tape, &w, &mut grads);
        let probe = g.clone();
        check_params(&format!("generator case {case}"), &g.params, &grads, &mut rng, |p| {
            let mut net = probe.clone();
            net.params = p.clone();
            dot(net.forward_train(&z, &labels, false, false).unwrap().0.data(), w.data())
        });
    }
}

#[test]
fn discriminator_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20 {
        let config = tiny_config(&mut rng);
        let arch = Architecture::from_config(&config).unwrap();
        let mut d = Discriminator::<f64>::new(&arch, &mut rng, false);
        randomize(&mut d.params, &mut rng, 0.5);
        let b = rng.gen_range(2..=4);
        let x = random_tensor(&arch.image_shape(b), &mut rng);
        let (out, tape) = d.forward_train(&x, false, true).unwrap();
        let ws: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wc = random_tensor(out.class_logits.shape(), &mut rng);
        let mut grads = d.zero_grads();
        let dx = d.backward(tape, &ws, &wc, Some(&mut grads), true).unwrap();
        let score = |net: &mut Discriminator<f64>, x: &Tensor<f64>| {
            let (o, _) = net.forward_train(x, false, false).unwrap();
            dot(&o.source_logits, &ws) + dot(o.class_logits.data(), wc.data())
        };
        let mut probe = d.clone();
        let numeric = numeric_grad(x.data(), |v| {
            score(&mut probe, &Tensor::from_vec(x.shape(), v.to_vec()).unwrap())
        });
        assert_grads_close(&format!("discriminator case {case}: input"), dx.data(), &numeric);
        check_params(&format!("discriminator case {case}"), &d.params, &grads, &mut rng, |p| {
            let mut net = d.clone();
            net.params = p.clone();
            score(&mut net, &x)
        });
    }
}

#[test]
fn encoder_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..20 {
        let config = tiny_config(&mut rng);
        let arch = Architecture::from_config(&config).unwrap();
        let mut e = Encoder::<f64>::new(&arch, &mut rng, false);
        randomize(&mut e.params, &mut rng, 0.5);
        let b = rng.gen_range(2..=4);
        let x = random_tensor(&arch.image_shape(b), &mut rng);
        let (z, tape) = e.forward_train(&x, true).unwrap();
        let w = random_tensor(z.shape(), &mut rng);
        let mut grads = e.zero_grads();
        e.backward(tape, &w, &mut grads);
        check_params(&format!("encoder case {case}"), &e.params, &grads, &mut rng, |p| {
            let mut net = e.clone();
            net.params = p.clone();
            dot(net.forward_train(&x, false).unwrap().0.data(), w.data())
        });
    }
}
