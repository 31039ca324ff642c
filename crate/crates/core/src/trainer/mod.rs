//! The two training steps.
//!
//! Step 1 alternates discriminator and generator updates of the AC-GAN over
//! the labeled dataset. Step 2 freezes the generator (inference-mode
//! normalization, no gradients) and fits the encoder to recover `z` from
//! `G(z, c)` on freshly sampled latents and uniformly drawn labels.
//!
//! All randomness comes from ChaCha8 streams derived from the config seed:
//! one for initialization, one for training draws (latents, labels,
//! augmentation), one for the fixed grid latents, and one per epoch for the
//! data order. The training stream's position is part of the checkpoint, so
//! a resumed run continues the exact sequence of draws.

pub mod adam;
pub mod checkpoint;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};

use crate::config::RunConfig;
use crate::data::{augment, AugmentSettings, LabeledDataset};
use crate::error::{Error, Result};
use crate::inference::{domain_grid, write_sample_grid};
use crate::model::{Decoder, Encoder};
use crate::objectives::{ac_d_objective, ac_g_objective, encoder_objective, ClassLogits, LossValue};
use crate::tensor::Tensor;

pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const TRAIN_STREAM: u64 = 1;
pub(crate) const STEP2_STREAM: u64 = 2;
pub(crate) const GRID_STREAM: u64 = 3;
const EPOCH_STREAM_BASE: u64 = 1 << 32;

/// Latent rows in the periodic sample grids.
pub const GRID_ROWS: usize = 8;

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` latent codes with i.i.d. `U(-1, 1)` components, as `[n, z_dim]`.
pub fn sample_latent<R: Rng + ?Sized>(n: usize, z_dim: usize, rng: &mut R) -> Result<Tensor<f32>> {
    if n == 0 || z_dim == 0 {
        return Err(Error::Contract(format!("cannot sample {n} latents of dimension {z_dim}")));
    }
    let data = (0..n * z_dim).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
    Tensor::from_vec(&[n, z_dim], data)
}

/// `n` labels drawn uniformly from `0..k`.
pub fn sample_labels<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..k)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Step1,
    Step2,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Step1 => "step1",
            Phase::Step2 => "step2",
        }
    }
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub phase: Phase,
    /// 1-based iteration index within the phase.
    pub step: u64,
    pub losses: BTreeMap<String, f64>,
    pub accuracies: BTreeMap<String, f64>,
    pub wall_ms: f64,
}

impl StepMetrics {
    pub fn new(phase: Phase, step: u64) -> Self {
        StepMetrics {
            phase,
            step,
            losses: BTreeMap::new(),
            accuracies: BTreeMap::new(),
            wall_ms: 0.0,
        }
    }

    fn add_loss(&mut self, prefix: &str, loss: &LossValue) {
        self.losses.insert(prefix.to_string(), loss.value);
        for (name, v) in &loss.components {
            self.losses.insert(format!("{prefix}.{name}"), *v);
        }
    }

    pub fn loss(&self, key: &str) -> Option<f64> {
        self.losses.get(key).copied()
    }
}

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn step1_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("step1")
    }

    pub fn step2_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("step2")
    }

    pub fn grids_dir(&self) -> PathBuf {
        self.root.join("grids")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("eval_report.json")
    }
}

struct MetricsLog(Option<BufWriter<File>>);

impl MetricsLog {
    fn open(run: Option<&RunDir>) -> Result<Self> {
        let Some(run) = run else { return Ok(MetricsLog(None)) };
        fs::create_dir_all(&run.root)?;
        let f = OpenOptions::new().create(true).append(true).open(run.metrics_path())?;
        Ok(MetricsLog(Some(BufWriter::new(f))))
    }

    fn write(&mut self, m: &StepMetrics) -> Result<()> {
        if let Some(w) = &mut self.0 {
            serde_json::to_writer(&mut *w, m)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.0 {
            w.flush()?;
        }
        Ok(())
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn class_grad(v: &[f64], batch: usize, k: usize) -> Tensor<f32> {
    if v.is_empty() {
        Tensor::zeros(&[batch, k])
    } else {
        Tensor::from_vec(&[batch, k], to_f32(v)).expect("class grad shape")
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

fn check_finite(loss: &LossValue, phase: Phase, step: u64, what: &str) -> Result<()> {
    if loss.value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            phase: phase.as_str(),
            step,
            message: format!("{what} loss is {}", loss.value),
        })
    }
}

/// One step-1 iteration: `d_steps_per_g_step` discriminator updates, then
/// one generator update. Reported D losses and accuracies come from the last
/// D update, evaluated before that update is applied.
pub fn train_step1_iteration(ckpt: &mut Checkpoint, real: &Tensor<f32>, labels: &[usize]) -> Result<StepMetrics> {
    let batch = labels.len();
    if batch != ckpt.config.batch_size || real.dim0() != batch {
        return Err(Error::Contract(format!(
            "step-1 batch has {} images and {batch} labels, expected {}",
            real.dim0(),
            ckpt.config.batch_size
        )));
    }
    let step = ckpt.step1_iters + 1;
    let mut metrics = StepMetrics::new(Phase::Step1, step);
    for _ in 0..ckpt.config.d_steps_per_g_step {
        discriminator_update(ckpt, real, labels, &mut metrics)?;
    }
    generator_update(ckpt, batch, &mut metrics)?;
    ckpt.step1_iters = step;
    Ok(metrics)
}

/// One discriminator update on a real batch and a freshly generated fake
/// batch. Changes only D, its optimizer state and the training RNG.
pub fn discriminator_update(
    ckpt: &mut Checkpoint,
    real: &Tensor<f32>,
    labels: &[usize],
    metrics: &mut StepMetrics,
) -> Result<()> {
    let cfg = &ckpt.config;
    let (batch, k, step) = (labels.len(), cfg.num_domains, ckpt.step1_iters + 1);
    let Checkpoint {
        generator: g,
        discriminator: d,
        adam_d,
        rng,
        ..
    } = ckpt;
    let z = sample_latent(batch, cfg.z_dim, rng)?;
    let fake_labels = sample_labels(batch, k, rng);
    // Batch statistics, but G's running statistics stay untouched.
    let (fake, _) = g.forward_train(&z, &fake_labels, false, false)?;
    let (out_r, tape_r) = d.forward_train(real, true, true)?;
    let (out_f, tape_f) = d.forward_train(&fake, true, true)?;
    let (src_r, src_f) = (to_f64(&out_r.source_logits), to_f64(&out_f.source_logits));
    let (cls_r, cls_f) = (to_f64(out_r.class_logits.data()), to_f64(out_f.class_logits.data()));
    let obj = ac_d_objective(
        &src_r,
        &src_f,
        ClassLogits {
            logits: &cls_r,
            labels,
        },
        ClassLogits {
            logits: &cls_f,
            labels: &fake_labels,
        },
        cfg.ac_on_fake_for_d,
    )?;
    check_finite(&obj.loss, Phase::Step1, step, "discriminator")?;
    let n = batch as f64;
    metrics.accuracies.insert("real".into(), src_r.iter().filter(|&&l| l > 0.0).count() as f64 / n);
    metrics.accuracies.insert("fake".into(), src_f.iter().filter(|&&l| l < 0.0).count() as f64 / n);
    let correct = (0..batch).filter(|&i| argmax(out_r.class_logits.row(i)) == labels[i]).count();
    metrics.accuracies.insert("class".into(), correct as f64 / n);
    metrics.add_loss("d", &obj.loss);

    let mut grads = d.zero_grads();
    d.backward(
        tape_r,
        &to_f32(&obj.grads.source_real),
        &class_grad(&obj.grads.class_real, batch, k),
        Some(&mut grads),
        false,
    );
    d.backward(
        tape_f,
        &to_f32(&obj.grads.source_fake),
        &class_grad(&obj.grads.class_fake, batch, k),
        Some(&mut grads),
        false,
    );
    adam_step(&mut d.params, &grads, adam_d, AdamHyper::from_config(cfg), "step1", step)
}

/// One generator update through the current discriminator. Changes only G
/// (including its label table and running statistics), its optimizer state
/// and the training RNG.
pub fn generator_update(ckpt: &mut Checkpoint, batch: usize, metrics: &mut StepMetrics) -> Result<()> {
    let cfg = &ckpt.config;
    let (k, step) = (cfg.num_domains, ckpt.step1_iters + 1);
    let Checkpoint {
        generator: g,
        discriminator: d,
        adam_g,
        rng,
        ..
    } = ckpt;
    let z = sample_latent(batch, cfg.z_dim, rng)?;
    let gen_labels = sample_labels(batch, k, rng);
    let (fake, g_tape) = g.forward_train(&z, &gen_labels, true, true)?;
    // D scores with batch statistics but must not fold them into its buffers.
    let (out, d_tape) = d.forward_train(&fake, false, true)?;
    let src = to_f64(&out.source_logits);
    let cls = to_f64(out.class_logits.data());
    let obj = ac_g_objective(
        &src,
        ClassLogits {
            logits: &cls,
            labels: &gen_labels,
        },
    )?;
    check_finite(&obj.loss, Phase::Step1, step, "generator")?;
    metrics.add_loss("g", &obj.loss);
    let d_images = d
        .backward(
            d_tape,
            &to_f32(&obj.grads.source_fake),
            &class_grad(&obj.grads.class_fake, batch, k),
            None,
            true,
        )
        .expect("image gradient requested");
    let mut grads = g.zero_grads();
    g.backward(g_tape, &d_images, &mut grads);
    adam_step(&mut g.params, &grads, adam_g, AdamHyper::from_config(cfg), "step1", step)
}

fn check_dataset(dataset: &LabeledDataset, cfg: &RunConfig) -> Result<()> {
    if dataset.num_domains != cfg.num_domains || dataset.channels != cfg.channels || dataset.image_size != cfg.image_size {
        return Err(Error::Config(format!(
            "dataset has {} domains of {}x{}x{} images but the config expects {} domains of {}x{}x{}",
            dataset.num_domains,
            dataset.channels,
            dataset.image_size,
            dataset.image_size,
            cfg.num_domains,
            cfg.channels,
            cfg.image_size,
            cfg.image_size
        )));
    }
    dataset.require_all_domains()
}

/// Number of full batches per epoch (the remainder is dropped).
pub fn iters_per_epoch(dataset_len: usize, batch_size: usize) -> usize {
    dataset_len / batch_size
}

/// Data order for one epoch, a pure function of (seed, epoch).
pub fn epoch_permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_stream(seed, EPOCH_STREAM_BASE + epoch));
    idx
}

/// The augmented real batch for the checkpoint's next iteration.
fn next_batch(ckpt: &mut Checkpoint, dataset: &LabeledDataset, aug: &AugmentSettings) -> Result<(Tensor<f32>, Vec<usize>)> {
    let b = ckpt.config.batch_size;
    let ipe = iters_per_epoch(dataset.len(), b) as u64;
    let (epoch, pos) = (ckpt.step1_iters / ipe, (ckpt.step1_iters % ipe) as usize);
    let perm = epoch_permutation(ckpt.config.seed, epoch, dataset.len());
    let indices = &perm[pos * b..(pos + 1) * b];
    let images: Vec<Tensor<f32>> = indices
        .iter()
        .map(|&i| augment(&dataset.items[i].image, aug, &mut ckpt.rng))
        .collect();
    let refs: Vec<&Tensor<f32>> = images.iter().collect();
    let labels = indices.iter().map(|&i| dataset.items[i].label).collect();
    Ok((Tensor::stack(&refs)?, labels))
}

fn write_grid(ckpt: &Checkpoint, run: &RunDir, grid_z: &Tensor<f32>) -> Result<()> {
    let images = domain_grid(&ckpt.generator, grid_z)?;
    let path = run.grids_dir().join(format!("step1_{:07}.png", ckpt.step1_iters));
    write_sample_grid(&images, ckpt.config.num_domains, &path)
}

/// Step 1 from a fresh initialization.
pub fn run_step1(dataset: &LabeledDataset, config: &RunConfig, run: Option<&RunDir>) -> Result<Checkpoint> {
    config.validate()?;
    check_dataset(dataset, config)?;
    let mut ckpt = Checkpoint::init(config)?;
    continue_step1(&mut ckpt, dataset, run, None)?;
    Ok(ckpt)
}

/// Runs step-1 iterations until `step1_epochs` epochs are done, or until
/// `stop_at` total iterations if that comes first. Returns the metrics of the
/// iterations run. With a run directory, metrics are appended to its log,
/// grids are written every `grid_interval` iterations, and the step-1
/// checkpoint is refreshed every epoch and at the end.
pub fn continue_step1(
    ckpt: &mut Checkpoint,
    dataset: &LabeledDataset,
    run: Option<&RunDir>,
    stop_at: Option<u64>,
) -> Result<Vec<StepMetrics>> {
    let cfg = ckpt.config.clone();
    check_dataset(dataset, &cfg)?;
    let ipe = iters_per_epoch(dataset.len(), cfg.batch_size) as u64;
    if ipe == 0 && cfg.step1_epochs > 0 {
        return Err(Error::Config(format!(
            "dataset of {} images is smaller than one batch of {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    let total = cfg.step1_epochs as u64 * ipe;
    let end = stop_at.map_or(total, |s| s.min(total));
    let aug = AugmentSettings::from_config(&cfg);
    let grid_z = sample_latent(GRID_ROWS, cfg.z_dim, &mut rng_stream(cfg.seed, GRID_STREAM))?;
    let mut log = MetricsLog::open(run)?;
    let mut out = Vec::new();
    if ckpt.step1_iters < end {
        info!(
            "step 1: iterations {}..{end} ({ipe} per epoch, {} images)",
            ckpt.step1_iters + 1,
            dataset.len()
        );
    }
    while ckpt.step1_iters < end {
        let start = Instant::now();
        let (real, labels) = next_batch(ckpt, dataset, &aug)?;
        let mut m = train_step1_iteration(ckpt, &real, &labels)?;
        m.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        log.write(&m)?;
        let step = ckpt.step1_iters;
        if let Some(run) = run {
            if cfg.grid_interval > 0 && step % cfg.grid_interval as u64 == 0 {
                write_grid(ckpt, run, &grid_z)?;
            }
            if step % ipe == 0 && step < end {
                log.flush()?;
                save_checkpoint(ckpt, &run.step1_checkpoint())?;
            }
        }
        if step % ipe == 0 {
            info!(
                "step 1 epoch {}: L_D {:.4}  L_G {:.4}  acc real {:.2} fake {:.2} class {:.2}",
                step / ipe,
                m.loss("d").unwrap_or(f64::NAN),
                m.loss("g").unwrap_or(f64::NAN),
                m.accuracies["real"],
                m.accuracies["fake"],
                m.accuracies["class"],
            );
        }
        out.push(m);
    }
    log.flush()?;
    if let Some(run) = run {
        save_checkpoint(ckpt, &run.step1_checkpoint())?;
    }
    Ok(out)
}

/// One step-2 iteration against a frozen decoder. Only `encoder` and its
/// optimizer state change.
pub fn train_step2_iteration<D: Decoder + ?Sized>(
    decoder: &D,
    encoder: &mut Encoder,
    adam: &mut AdamState,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    step: u64,
) -> Result<StepMetrics> {
    let batch = config.batch_size;
    let z = sample_latent(batch, decoder.z_dim(), rng)?;
    let labels = sample_labels(batch, decoder.num_domains(), rng);
    let x = decoder.decode(&z, &labels)?;
    let (z_hat, tape) = encoder.forward_train(&x, true)?;
    let (loss, grad) = encoder_objective(&to_f64(z.data()), &to_f64(z_hat.data()))?;
    check_finite(&loss, Phase::Step2, step, "encoder")?;
    let dz = Tensor::from_vec(z_hat.shape(), to_f32(&grad))?;
    let mut grads = encoder.zero_grads();
    encoder.backward(tape, &dz, &mut grads);
    adam_step(&mut encoder.params, &grads, adam, AdamHyper::from_config(config), "step2", step)?;
    let mut m = StepMetrics::new(Phase::Step2, step);
    m.add_loss("e", &loss);
    Ok(m)
}

/// Step 2 on a step-1 checkpoint. `config` may change training knobs (steps,
/// learning rate, intervals) but not the architecture.
pub fn run_step2(mut ckpt: Checkpoint, config: &RunConfig, run: Option<&RunDir>) -> Result<Checkpoint> {
    config.validate()?;
    if let Some(why) = ckpt.config.architecture_mismatch(config) {
        return Err(Error::Config(format!("step-2 config does not match the step-1 checkpoint: {why}")));
    }
    ckpt.config = config.clone();
    continue_step2(&mut ckpt, run, None)?;
    Ok(ckpt)
}

/// Step 1 then step 2 checkpoint directories, loading whichever is newest.
pub fn load_latest(run: &RunDir) -> Result<Checkpoint> {
    let step2 = run.step2_checkpoint();
    if step2.join(checkpoint::MANIFEST_FILE).is_file() {
        return load_checkpoint(&step2);
    }
    load_checkpoint(&run.step1_checkpoint())
}

/// Runs step-2 iterations until `step2_steps`, or `stop_at` if earlier.
/// Creates the encoder on first use.
pub fn continue_step2(ckpt: &mut Checkpoint, run: Option<&RunDir>, stop_at: Option<u64>) -> Result<Vec<StepMetrics>> {
    let cfg = ckpt.config.clone();
    if ckpt.step1_iters == 0 {
        warn!("step 2 is running on an untrained generator");
    }
    if ckpt.encoder.is_none() {
        let e = Checkpoint::initial_encoder(&cfg)?;
        ckpt.adam_e = Some(AdamState::new(&e.params));
        ckpt.encoder = Some(e);
        ckpt.rng = rng_stream(cfg.seed, STEP2_STREAM);
        ckpt.step2_iters = 0;
    }
    let total = cfg.step2_steps as u64;
    let end = stop_at.map_or(total, |s| s.min(total));
    let mut log = MetricsLog::open(run)?;
    let mut out = Vec::new();
    if ckpt.step2_iters < end {
        info!("step 2: iterations {}..{end}", ckpt.step2_iters + 1);
    }
    while ckpt.step2_iters < end {
        let start = Instant::now();
        let step = ckpt.step2_iters + 1;
        let Checkpoint {
            generator,
            encoder,
            adam_e,
            rng,
            ..
        } = &mut *ckpt;
        let encoder = encoder.as_mut().expect("encoder initialized");
        let adam = adam_e.as_mut().expect("encoder optimizer initialized");
        let mut m = train_step2_iteration(&*generator, encoder, adam, &cfg, rng, step)?;
        ckpt.step2_iters = step;
        m.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        log.write(&m)?;
        if let Some(run) = run {
            let every = cfg.step2_checkpoint_interval as u64;
            if every > 0 && step % every == 0 && step < end {
                log.flush()?;
                save_checkpoint(ckpt, &run.step2_checkpoint())?;
            }
        }
        if step % 500 == 0 {
            info!("step 2 iteration {step}: mse {:.5}", m.loss("e").unwrap_or(f64::NAN));
        }
        out.push(m);
    }
    log.flush()?;
    if let Some(run) = run {
        save_checkpoint(ckpt, &run.step2_checkpoint())?;
    }
    Ok(out)
}

/// Reads `metrics.jsonl`.
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
