//! Translation `x -> G(E(x), c_target)`, sample grids and image-file batch
//! translation.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::imageio::{image_to_tensor, save_tensor_image, square_resize};
use crate::error::{Error, Result};
use crate::model::{Decoder, DomainLabel, Encoder, Generator, LatentEncoder};
use crate::tensor::Tensor;

/// Images per forward pass in directory mode.
const FILE_BATCH: usize = 64;

/// Translates a `[B, C, H, W]` batch into domain `target` with any encoder and
/// decoder pair.
pub fn translate_with<E, D>(encoder: &E, decoder: &D, x: &Tensor<f32>, target: DomainLabel) -> Result<Tensor<f32>>
where
    E: LatentEncoder + ?Sized,
    D: Decoder + ?Sized,
{
    if target.num_domains() != decoder.num_domains() {
        return Err(Error::Contract(format!(
            "label is over {} domains but the generator has {}",
            target.num_domains(),
            decoder.num_domains()
        )));
    }
    let z = encoder.encode(x)?;
    decoder.decode(&z, &vec![target.id(); x.dim0()])
}

/// Translation with trained networks; their architectures must agree.
pub fn translate(encoder: &Encoder, generator: &Generator, x: &Tensor<f32>, target: DomainLabel) -> Result<Tensor<f32>> {
    if encoder.arch != generator.arch {
        return Err(Error::Contract(format!(
            "encoder and generator were built for different configs ({:?} vs {:?})",
            encoder.arch, generator.arch
        )));
    }
    translate_with(encoder, generator, x, target)
}

/// `(x_ab, x_aba)`: translation to `target` and back to `source`.
pub fn roundtrip<E, D>(
    encoder: &E,
    decoder: &D,
    x: &Tensor<f32>,
    source: DomainLabel,
    target: DomainLabel,
) -> Result<(Tensor<f32>, Tensor<f32>)>
where
    E: LatentEncoder + ?Sized,
    D: Decoder + ?Sized,
{
    let x_ab = translate_with(encoder, decoder, x, target)?;
    let x_aba = translate_with(encoder, decoder, &x_ab, source)?;
    Ok((x_ab, x_aba))
}

/// Every row of `z` rendered under every domain: row-major images with one
/// column per domain, so each row shows one latent across domains.
pub fn domain_grid<D: Decoder + ?Sized>(decoder: &D, z: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let n = z.dim0();
    let k = decoder.num_domains();
    let per_domain: Vec<Vec<Tensor<f32>>> = (0..k)
        .map(|d| Ok(decoder.decode(z, &vec![d; n])?.unstack()))
        .collect::<Result<_>>()?;
    Ok((0..n)
        .flat_map(|i| per_domain.iter().map(move |imgs| imgs[i].clone()))
        .collect())
}

/// Interleaves inputs and outputs so that, counting columns from 1, inputs
/// sit in odd columns and their outputs right after them.
pub fn pair_images(inputs: &[Tensor<f32>], outputs: &[Tensor<f32>]) -> Vec<Tensor<f32>> {
    inputs
        .iter()
        .zip(outputs)
        .flat_map(|(a, b)| [a.clone(), b.clone()])
        .collect()
}

/// Tiles `[C, H, W]` images row-major into a grid with `columns` columns and
/// writes it as an 8-bit image. Unused cells are black.
pub fn write_sample_grid(images: &[Tensor<f32>], columns: usize, path: &Path) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::Contract("sample grid needs at least one image".into()))?;
    if columns == 0 {
        return Err(Error::Contract("sample grid needs at least one column".into()));
    }
    let shape = first.shape().to_vec();
    if let Some(bad) = images.iter().find(|t| t.shape() != shape.as_slice()) {
        return Err(Error::Contract(format!(
            "grid images differ in shape: {:?} vs {shape:?}",
            bad.shape()
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let rows = images.len().div_ceil(columns);
    let (gh, gw) = (rows * h, columns * w);
    let mut canvas = vec![-1.0f32; c * gh * gw];
    for (n, img) in images.iter().enumerate() {
        let (r, col) = (n / columns, n % columns);
        let src = img.data();
        for ch in 0..c {
            for y in 0..h {
                let dst = ch * gh * gw + (r * h + y) * gw + col * w;
                canvas[dst..dst + w].copy_from_slice(&src[(ch * h + y) * w..(ch * h + y + 1) * w]);
            }
        }
    }
    save_tensor_image(&Tensor::from_vec(&[c, gh, gw], canvas)?, path)
}

/// `name.png` translated into domain `k` becomes `name_d{k}.png`.
pub fn translated_file_name(input: &Path, target: usize) -> String {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    format!("{stem}_d{target}.png")
}

/// Loads an image file as a `[1, C, S, S]` batch: center square crop,
/// resized to the model's input size.
pub fn load_input(path: &Path, image_size: usize, channels: usize) -> Result<Tensor<f32>> {
    let img = image::open(path)?;
    let t = image_to_tensor(&square_resize(&img, image_size), channels);
    Tensor::stack(&[&t])
}

/// Translates one image file and writes the result to `output`.
pub fn translate_file(encoder: &Encoder, generator: &Generator, input: &Path, target: DomainLabel, output: &Path) -> Result<()> {
    let arch = &generator.arch;
    let x = load_input(input, arch.image_size, arch.channels)?;
    let y = translate(encoder, generator, &x, target)?;
    save_tensor_image(&y.unstack()[0], output)
}

/// Translates every image in `input_dir` (sorted by name) and writes
/// `<stem>_d{k}.png` files into `output_dir`. Returns the written paths.
pub fn translate_directory(
    encoder: &Encoder,
    generator: &Generator,
    input_dir: &Path,
    target: DomainLabel,
    output_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let arch = &generator.arch;
    let mut files: Vec<PathBuf> = fs::read_dir(input_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Missing {
            path: input_dir.to_path_buf(),
            what: "input images".into(),
        });
    }
    fs::create_dir_all(output_dir)?;
    let mut written = Vec::with_capacity(files.len());
    for chunk in files.chunks(FILE_BATCH) {
        let inputs: Vec<Tensor<f32>> = chunk
            .iter()
            .map(|p| Ok(load_input(p, arch.image_size, arch.channels)?.unstack().remove(0)))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<f32>> = inputs.iter().collect();
        let y = translate(encoder, generator, &Tensor::stack(&refs)?, target)?;
        for (p, img) in chunk.iter().zip(y.unstack()) {
            let out = output_dir.join(translated_file_name(p, target.id()));
            save_tensor_image(&img, &out)?;
            written.push(out);
        }
    }
    Ok(written)
}
