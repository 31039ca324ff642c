//! Quantitative checks of a trained run: an independent domain classifier,
//! latent round-trip error, domain-flip rates, and attribute preservation
//! measured on image foregrounds.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{LabeledDataset, Provenance, ShapeKind};
use crate::error::{Error, Result};
use crate::inference::{roundtrip, translate_with};
use crate::model::{Decoder, DomainLabel, LatentEncoder};
use crate::nn::{BufferAccess, Builder, Init, Layer, ParamStore, Sequential};
use crate::objectives::{cross_entropy_objective, ClassLogits};
use crate::tensor::Tensor;
use crate::trainer::{adam_step, rng_stream, sample_labels, sample_latent, AdamHyper, AdamState, Checkpoint};

const EVAL_BATCH: usize = 64;
const CLASSIFIER_STREAM: u64 = 10;
const EVAL_STREAM: u64 = 11;

/// Assigns a domain to each image of a `[B, C, H, W]` batch.
pub trait DomainJudge {
    fn classify(&self, images: &Tensor<f32>) -> Result<Vec<usize>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of each domain held out to measure accuracy.
    pub holdout_fraction: f64,
    pub target_accuracy: f64,
    /// Steps between held-out checks.
    pub check_interval: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            max_steps: 2000,
            batch_size: 64,
            lr: 1e-3,
            holdout_fraction: 0.2,
            target_accuracy: 0.99,
            check_interval: 100,
            seed: 1234,
        }
    }
}

/// Small two-block convolutional classifier. Shares nothing with the GAN.
#[derive(Clone, Debug)]
pub struct DomainClassifier {
    net: Sequential,
    pub params: ParamStore,
    buffers: ParamStore,
    pub num_domains: usize,
    pub heldout_accuracy: f64,
    /// Set when the accuracy target was not reached within the step budget.
    pub below_target: bool,
}

impl DomainClassifier {
    fn new<R: Rng + ?Sized>(channels: usize, image_size: usize, num_domains: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let mut b = Builder::new(&mut params, &mut buffers, rng, Init::Normal { std: 0.05 });
        b.conv("c1", channels, 16, 4, 2, 1);
        b.push(Layer::LeakyRelu { slope: 0.2 });
        b.conv("c2", 16, 32, 4, 2, 1);
        b.push(Layer::LeakyRelu { slope: 0.2 });
        b.push(Layer::Flatten);
        let side = (image_size / 4).max(1);
        b.linear("out", 32 * side * side, num_domains);
        let net = b.finish();
        DomainClassifier {
            net,
            params,
            buffers,
            num_domains,
            heldout_accuracy: 0.0,
            below_target: true,
        }
    }

    pub fn logits(&self, images: &Tensor<f32>) -> Tensor<f32> {
        self.net.forward_eval(&self.params, &self.buffers, images.swap01())
    }

    fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        let idx: Vec<usize> = (0..ds.len()).collect();
        let mut correct = 0;
        for chunk in idx.chunks(EVAL_BATCH) {
            let (x, labels) = ds.batch(chunk)?;
            let pred = self.classify(&x)?;
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        Ok(correct as f64 / ds.len() as f64)
    }
}

impl DomainJudge for DomainClassifier {
    fn classify(&self, images: &Tensor<f32>) -> Result<Vec<usize>> {
        let logits = self.logits(images);
        Ok((0..logits.dim0()).map(|i| argmax(logits.row(i))).collect())
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains the judge on one split of `dataset` and measures it on the other.
/// Training stops at the first check where held-out accuracy reaches the
/// target, or when the step budget runs out (flagged, not an error).
pub fn train_domain_classifier(dataset: &LabeledDataset, config: &ClassifierConfig) -> Result<DomainClassifier> {
    dataset.require_all_domains()?;
    let mut rng = rng_stream(config.seed, CLASSIFIER_STREAM);
    let (train, heldout) = dataset.split(config.holdout_fraction, &mut rng);
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::Config(format!(
            "dataset of {} images is too small for a held-out split",
            dataset.len()
        )));
    }
    let mut clf = DomainClassifier::new(dataset.channels, dataset.image_size, dataset.num_domains, &mut rng);
    let mut adam = AdamState::new(&clf.params);
    let hp = AdamHyper {
        lr: config.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let batch = config.batch_size.min(train.len());
    for step in 1..=config.max_steps as u64 {
        let idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..train.len())).collect();
        let (x, labels) = train.batch(&idx)?;
        let (logits, tape) = clf
            .net
            .forward_train(&clf.params, BufferAccess::Write(&mut clf.buffers), x.swap01(), true);
        let l64: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        let (_, grad) = cross_entropy_objective(ClassLogits {
            logits: &l64,
            labels: &labels,
        })?;
        let dy = Tensor::from_vec(logits.shape(), grad.iter().map(|&g| g as f32).collect())?;
        let mut grads = clf.params.zeros_like();
        clf.net.backward(&clf.params, tape, dy, Some(&mut grads), false);
        adam_step(&mut clf.params, &grads, &mut adam, hp, "classifier", step)?;
        if step % config.check_interval as u64 == 0 || step == config.max_steps as u64 {
            clf.heldout_accuracy = clf.accuracy(&heldout)?;
            if clf.heldout_accuracy >= config.target_accuracy {
                clf.below_target = false;
                break;
            }
        }
    }
    if config.max_steps == 0 {
        clf.heldout_accuracy = clf.accuracy(&heldout)?;
        clf.below_target = clf.heldout_accuracy < config.target_accuracy;
    }
    if clf.below_target {
        warn!(
            "domain classifier reached {:.4} held-out accuracy, below the {:.2} target",
            clf.heldout_accuracy, config.target_accuracy
        );
    }
    Ok(clf)
}

/// Fraction of `n` fresh samples `G(z, c)` that the judge assigns to `c`.
pub fn generated_sample_class_accuracy<D, J, R>(decoder: &D, judge: &J, n: usize, rng: &mut R) -> Result<f64>
where
    D: Decoder + ?Sized,
    J: DomainJudge + ?Sized,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let mut correct = 0;
    let mut done = 0;
    while done < n {
        let b = EVAL_BATCH.min(n - done);
        let z = sample_latent(b, decoder.z_dim(), rng)?;
        let labels = sample_labels(b, decoder.num_domains(), rng);
        let pred = judge.classify(&decoder.decode(&z, &labels)?)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        done += b;
    }
    Ok(correct as f64 / n as f64)
}

/// Fraction of `images` translated into `target` that the judge assigns to
/// `target`.
pub fn domain_flip_rate<E, D, J>(encoder: &E, decoder: &D, judge: &J, images: &Tensor<f32>, target: DomainLabel) -> Result<f64>
where
    E: LatentEncoder + ?Sized,
    D: Decoder + ?Sized,
    J: DomainJudge + ?Sized,
{
    if images.numel() == 0 || images.dim0() == 0 {
        return Err(Error::Contract("flip rate needs a non-empty test set".into()));
    }
    let mut hits = 0;
    for chunk in batches(images)? {
        let y = translate_with(encoder, decoder, &chunk, target)?;
        hits += judge.classify(&y)?.iter().filter(|&&p| p == target.id()).count();
    }
    Ok(hits as f64 / images.dim0() as f64)
}

fn batches(images: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let all = images.unstack();
    all.chunks(EVAL_BATCH)
        .map(|c| Tensor::stack(&c.iter().collect::<Vec<_>>()))
        .collect()
}

/// Mean over `n` draws of `(z, c)` of the per-component squared error of
/// `E(G(z, c))` against `z`.
pub fn latent_roundtrip_mse<D, E, R>(decoder: &D, encoder: &E, n: usize, rng: &mut R) -> Result<f64>
where
    D: Decoder + ?Sized,
    E: LatentEncoder + ?Sized,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let mut sum = 0.0;
    let mut done = 0;
    while done < n {
        let b = EVAL_BATCH.min(n - done);
        let z = sample_latent(b, decoder.z_dim(), rng)?;
        let labels = sample_labels(b, decoder.num_domains(), rng);
        let z_hat = encoder.encode(&decoder.decode(&z, &labels)?)?;
        if z_hat.shape() != z.shape() {
            return Err(Error::Contract(format!(
                "encoder returned {:?} for latents of shape {:?}",
                z_hat.shape(),
                z.shape()
            )));
        }
        sum += z
            .data()
            .iter()
            .zip(z_hat.data())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum::<f64>();
        done += b;
    }
    Ok(sum / (n * decoder.z_dim()) as f64)
}

fn median(mut v: Vec<f32>) -> f32 {
    v.sort_by(f32::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-pixel foreground weight `sum_c |x_c - median_c|` of a `[C, H, W]` image.
fn foreground_weights(x: &Tensor<f32>) -> Vec<f64> {
    let s = x.shape();
    let (c, plane) = (s[0], s[1] * s[2]);
    let d = x.data();
    let mut w = vec![0.0f64; plane];
    for ch in 0..c {
        let p = &d[ch * plane..(ch + 1) * plane];
        let bg = median(p.to_vec());
        for (wi, &v) in w.iter_mut().zip(p) {
            *wi += (v - bg).abs() as f64;
        }
    }
    w
}

/// Centroid of the deviation from the median background of a `[C, H, W]`
/// image, in pixel coordinates with pixel `(x, y)` centered at
/// `(x + 0.5, y + 0.5)`. `None` when the image has no foreground mass.
pub fn foreground_centroid(x: &Tensor<f32>) -> Option<(f64, f64)> {
    let w = x.shape()[2];
    let weights = foreground_weights(x);
    let mass: f64 = weights.iter().sum();
    if mass <= 1e-9 {
        return None;
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, &m) in weights.iter().enumerate() {
        sx += m * ((i % w) as f64 + 0.5);
        sy += m * ((i / w) as f64 + 0.5);
    }
    Some((sx / mass, sy / mass))
}

/// Size attribute (radius, or half side) recovered from the second moment
/// of the foreground about its centroid, for a known shape kind.
pub fn estimate_size(x: &Tensor<f32>, kind: ShapeKind) -> Option<f64> {
    let (cx, cy) = foreground_centroid(x)?;
    let w = x.shape()[2];
    let weights = foreground_weights(x);
    let mass: f64 = weights.iter().sum();
    let m2 = weights
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let dx = (i % w) as f64 + 0.5 - cx;
            let dy = (i / w) as f64 + 0.5 - cy;
            m * (dx * dx + dy * dy)
        })
        .sum::<f64>()
        / mass;
    // Disc of radius r: E[d^2] = r^2 / 2. Square of half side a: 2 a^2 / 3.
    Some(match kind {
        ShapeKind::Circle => (2.0 * m2).sqrt(),
        ShapeKind::Square => (1.5 * m2).sqrt(),
    })
}

/// Mean absolute error between `x` and its a->b->a round trip.
pub fn cycle_l1<E, D>(encoder: &E, decoder: &D, x: &Tensor<f32>, source: DomainLabel, target: DomainLabel) -> Result<f64>
where
    E: LatentEncoder + ?Sized,
    D: Decoder + ?Sized,
{
    let mut sum = 0.0;
    for chunk in batches(x)? {
        let (_, back) = roundtrip(encoder, decoder, &chunk, source, target)?;
        sum += chunk
            .data()
            .iter()
            .zip(back.data())
            .map(|(&a, &b)| (a - b).abs() as f64)
            .sum::<f64>();
    }
    Ok(sum / x.numel() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub p95: f64,
    /// Pairs that entered the statistics.
    pub count: usize,
    /// Pairs skipped because one image had no foreground.
    pub undefined: usize,
}

impl ErrorSummary {
    fn from_values(mut v: Vec<f64>, undefined: usize) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        // Nearest-rank percentile.
        let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
        Some(ErrorSummary {
            mean,
            p95: v[rank - 1],
            count: v.len(),
            undefined,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Fresh `G(z, c)` samples for the generation accuracy.
    pub n_generated: usize,
    /// Latent draws for the round-trip error.
    pub n_latent: usize,
    /// Cap on held-out images per domain used for translation metrics.
    pub max_test_per_domain: usize,
    pub classifier: ClassifierConfig,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_generated: 1000,
            n_latent: 1000,
            max_test_per_domain: 500,
            classifier: ClassifierConfig::default(),
            seed: 99,
        }
    }
}

/// Every metric of a run. Translation metrics are `None` when the checkpoint
/// has no encoder; `omitted` then lists them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub generated_sample_class_accuracy: f64,
    pub classifier_heldout_accuracy: f64,
    pub classifier_below_target: bool,
    /// Keyed `"a->b"`.
    pub translation_domain_flip_rate: Option<BTreeMap<String, f64>>,
    pub latent_roundtrip_mse: Option<f64>,
    /// Input vs output centroid distance for translation to the other domain.
    pub centroid_error_px: Option<ErrorSummary>,
    /// Same, for translation back into the source domain.
    pub centroid_error_self_px: Option<ErrorSummary>,
    /// Size attribute difference across domains (shapes datasets only).
    pub size_error_px: Option<ErrorSummary>,
    pub cycle_l1: Option<f64>,
    pub test_images_per_domain: Vec<usize>,
    pub omitted: Vec<String>,
    pub config: RunConfig,
    pub dataset: Provenance,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes the report as one JSON object.
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn shape_kinds(provenance: &Provenance) -> bool {
    match provenance {
        Provenance::Synthetic { .. } => true,
        Provenance::Derived { from, .. } => shape_kinds(from),
        Provenance::Folder { .. } => false,
    }
}

/// Trains a judge on `dataset` (which must not be the GAN's training data)
/// and computes every metric the checkpoint allows.
pub fn evaluate_run(ckpt: &Checkpoint, dataset: &LabeledDataset, options: &EvalOptions) -> Result<EvalReport> {
    let cfg = &ckpt.config;
    if dataset.num_domains != cfg.num_domains || dataset.channels != cfg.channels || dataset.image_size != cfg.image_size {
        return Err(Error::Config("evaluation dataset does not match the run's image format".into()));
    }
    info!("training the domain classifier on {} images", dataset.len());
    let judge = train_domain_classifier(dataset, &options.classifier)?;
    let mut rng = rng_stream(options.seed, EVAL_STREAM);
    let g = &ckpt.generator;
    let generated = generated_sample_class_accuracy(g, &judge, options.n_generated, &mut rng)?;

    let k = cfg.num_domains;
    let (_, heldout) = dataset.split(options.classifier.holdout_fraction, &mut rng_stream(options.classifier.seed, CLASSIFIER_STREAM));
    let test: Vec<Vec<usize>> = (0..k)
        .map(|d| heldout.indices_of(d).into_iter().take(options.max_test_per_domain).collect())
        .collect();

    let mut report = EvalReport {
        generated_sample_class_accuracy: generated,
        classifier_heldout_accuracy: judge.heldout_accuracy,
        classifier_below_target: judge.below_target,
        translation_domain_flip_rate: None,
        latent_roundtrip_mse: None,
        centroid_error_px: None,
        centroid_error_self_px: None,
        size_error_px: None,
        cycle_l1: None,
        test_images_per_domain: test.iter().map(Vec::len).collect(),
        omitted: Vec::new(),
        config: cfg.clone(),
        dataset: dataset.provenance.clone(),
    };
    let Some(e) = &ckpt.encoder else {
        report.omitted = [
            "translation_domain_flip_rate",
            "latent_roundtrip_mse",
            "centroid_error_px",
            "centroid_error_self_px",
            "size_error_px",
            "cycle_l1",
        ]
        .map(String::from)
        .to_vec();
        return Ok(report);
    };
    report.latent_roundtrip_mse = Some(latent_roundtrip_mse(g, e, options.n_latent, &mut rng)?);

    let with_sizes = shape_kinds(&dataset.provenance) && k == 2;
    let mut flips = BTreeMap::new();
    let (mut cross, mut same, mut sizes) = (Vec::new(), Vec::new(), Vec::new());
    let (mut undef_cross, mut undef_same, mut undef_size) = (0, 0, 0);
    let (mut cycle_sum, mut cycle_n) = (0.0, 0usize);
    for a in 0..k {
        if test[a].is_empty() {
            continue;
        }
        let (x, _) = heldout.batch(&test[a])?;
        let src = DomainLabel::new(a, k)?;
        let inputs = x.unstack();
        let centroids_in: Vec<_> = inputs.iter().map(foreground_centroid).collect();
        let own = translate_with(e, g, &x, src)?.unstack();
        for (ci, y) in centroids_in.iter().zip(&own) {
            match (ci, foreground_centroid(y)) {
                (Some(p), Some(q)) => same.push(((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()),
                _ => undef_same += 1,
            }
        }
        for b in (0..k).filter(|&b| b != a) {
            let tgt = DomainLabel::new(b, k)?;
            flips.insert(format!("{a}->{b}"), domain_flip_rate(e, g, &judge, &x, tgt)?);
            cycle_sum += cycle_l1(e, g, &x, src, tgt)? * x.numel() as f64;
            cycle_n += x.numel();
            let out = translate_with(e, g, &x, tgt)?.unstack();
            for ((xi, ci), y) in inputs.iter().zip(&centroids_in).zip(&out) {
                match (ci, foreground_centroid(y)) {
                    (Some(p), Some(q)) => cross.push(((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()),
                    _ => undef_cross += 1,
                }
                if with_sizes {
                    let kinds = (ShapeKind::for_domain(a)?, ShapeKind::for_domain(b)?);
                    match (estimate_size(xi, kinds.0), estimate_size(y, kinds.1)) {
                        (Some(s0), Some(s1)) => sizes.push((s0 - s1).abs()),
                        _ => undef_size += 1,
                    }
                }
            }
        }
    }
    report.translation_domain_flip_rate = Some(flips);
    report.centroid_error_px = ErrorSummary::from_values(cross, undef_cross);
    report.centroid_error_self_px = ErrorSummary::from_values(same, undef_same);
    report.size_error_px = ErrorSummary::from_values(sizes, undef_size);
    report.cycle_l1 = (cycle_n > 0).then(|| cycle_sum / cycle_n as f64);
    if !with_sizes {
        report.omitted.push("size_error_px".into());
    }
    Ok(report)
}
