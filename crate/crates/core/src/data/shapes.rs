//! Synthetic two-domain dataset: anti-aliased circles (domain 0) and squares
//! (domain 1) on a flat gray background.
//!
//! Position, size, color and background are drawn from the same
//! distributions in both domains, so the only domain signal is geometry.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::imageio::{from_u8, load_tensor_image, save_tensor_image};
use super::{LabeledDataset, Provenance, Sample, SampleAttributes};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SHAPES_DOMAINS: usize = 2;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
}

impl ShapeKind {
    pub fn for_domain(domain: usize) -> Result<Self> {
        match domain {
            0 => Ok(ShapeKind::Circle),
            1 => Ok(ShapeKind::Square),
            d => Err(Error::Domain(format!("shapes dataset has domains 0 and 1, got {d}"))),
        }
    }

    fn contains(self, dx: f64, dy: f64, size: f64) -> bool {
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= size * size,
            ShapeKind::Square => dx.abs() <= size && dy.abs() <= size,
        }
    }

    /// Area of a shape of the given size in square pixels.
    pub fn area(self, size: f64) -> f64 {
        match self {
            ShapeKind::Circle => std::f64::consts::PI * size * size,
            ShapeKind::Square => 4.0 * size * size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapesSpec {
    pub image_size: usize,
    pub n_per_domain: usize,
    /// Minimum clearance between the shape's extent and the image border.
    pub margin: f64,
    /// Radius (circles) or half side (squares), in pixels.
    pub size_range: [f64; 2],
    /// Foreground colors as 8-bit RGB, shared by both domains.
    pub palette: Vec<[u8; 3]>,
    /// Background gray level range, in `[0, 1]`.
    pub background_range: [f64; 2],
    pub seed: u64,
}

impl Default for ShapesSpec {
    fn default() -> Self {
        ShapesSpec {
            image_size: 32,
            n_per_domain: 5000,
            margin: 6.0,
            size_range: [6.0, 10.0],
            palette: vec![
                [230, 40, 40],
                [40, 200, 60],
                [50, 90, 235],
                [240, 220, 40],
                [225, 60, 220],
                [40, 215, 225],
                [245, 140, 30],
            ],
            background_range: [0.1, 0.35],
            seed: 0,
        }
    }
}

impl ShapesSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.size_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("invalid size range [{lo}, {hi}]")));
        }
        if self.margin < 0.0 || 2.0 * (self.margin + hi) > self.image_size as f64 {
            return Err(Error::Config(format!(
                "shapes of size up to {hi} with margin {} do not fit in {} pixels",
                self.margin, self.image_size
            )));
        }
        if self.palette.len() < 6 {
            return Err(Error::Config(format!(
                "palette needs at least 6 colors, got {}",
                self.palette.len()
            )));
        }
        let [b0, b1] = self.background_range;
        if !(0.0 <= b0 && b0 <= b1 && b1 <= 1.0) {
            return Err(Error::Config(format!("invalid background range [{b0}, {b1}]")));
        }
        if self.n_per_domain == 0 {
            return Err(Error::Config("`n_per_domain` must be at least 1".into()));
        }
        Ok(())
    }

    /// Legal range of a center coordinate for a shape of the given size.
    pub fn center_range(&self, size: f64) -> (f64, f64) {
        (self.margin + size, self.image_size as f64 - self.margin - size)
    }
}

/// Rasterizes one sample of the given domain. Draws size, center, color and
/// background, in that order, regardless of domain.
pub fn generate_shapes_sample<R: Rng + ?Sized>(
    domain: usize,
    spec: &ShapesSpec,
    rng: &mut R,
) -> Result<(Tensor<f32>, SampleAttributes)> {
    let kind = ShapeKind::for_domain(domain)?;
    spec.validate()?;
    let size = rng.gen_range(spec.size_range[0]..=spec.size_range[1]);
    let (lo, hi) = spec.center_range(size);
    let center_x = rng.gen_range(lo..=hi);
    let center_y = rng.gen_range(lo..=hi);
    let color_index = rng.gen_range(0..spec.palette.len());
    let background = rng.gen_range(spec.background_range[0]..=spec.background_range[1]);
    let attrs = SampleAttributes {
        center_x,
        center_y,
        size,
        color_index,
    };
    Ok((render_shape(kind, &attrs, background, spec), attrs))
}

/// Renders a shape with the given attributes on a gray `background` in
/// `[0, 1]`, with `SUPERSAMPLE^2` samples per pixel, quantized to 8 bits.
pub fn render_shape(kind: ShapeKind, a: &SampleAttributes, background: f64, spec: &ShapesSpec) -> Tensor<f32> {
    let s = spec.image_size;
    let plane = s * s;
    let color = spec.palette[a.color_index];
    let mut data = vec![0.0f32; 3 * plane];
    let n_sub = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for py in 0..s {
        for px in 0..s {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    if kind.contains(x - a.center_x, y - a.center_y, a.size) {
                        hits += 1;
                    }
                }
            }
            let cov = hits as f64 / n_sub;
            for ch in 0..3 {
                let fg = color[ch] as f64 / 255.0;
                let v = background * (1.0 - cov) + fg * cov;
                let q = (v * 255.0).round().clamp(0.0, 255.0) as u8;
                data[ch * plane + py * s + px] = from_u8(q);
            }
        }
    }
    Tensor::from_vec(&[3, s, s], data).expect("render buffer")
}

/// `n_per_domain` samples of each domain, interleaved, from one seeded stream.
pub fn build_shapes_dataset(spec: &ShapesSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut items = Vec::with_capacity(spec.n_per_domain * SHAPES_DOMAINS);
    for _ in 0..spec.n_per_domain {
        for domain in 0..SHAPES_DOMAINS {
            let (image, attrs) = generate_shapes_sample(domain, spec, &mut rng)?;
            items.push(Sample {
                image,
                label: domain,
                attributes: Some(attrs),
            });
        }
    }
    LabeledDataset::new(
        items,
        SHAPES_DOMAINS,
        3,
        spec.image_size,
        Provenance::Synthetic { spec: spec.clone() },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    filename: String,
    domain: usize,
    center_x: f64,
    center_y: f64,
    size: f64,
    color_index: usize,
}

pub const INDEX_FILE: &str = "index.csv";
pub const SPEC_FILE: &str = "spec.json";

/// Writes one PNG per sample plus `index.csv` and `spec.json`.
pub fn save_shapes_dataset(ds: &LabeledDataset, spec: &ShapesSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = csv::Writer::from_path(dir.join(INDEX_FILE))?;
    for (i, s) in ds.items.iter().enumerate() {
        let attrs = s
            .attributes
            .ok_or_else(|| Error::Data(format!("item {i} has no attributes")))?;
        let filename = format!("{i:06}_d{}.png", s.label);
        save_tensor_image(&s.image, &dir.join(&filename))?;
        index.serialize(IndexRow {
            filename,
            domain: s.label,
            center_x: attrs.center_x,
            center_y: attrs.center_y,
            size: attrs.size,
            color_index: attrs.color_index,
        })?;
    }
    index.flush()?;
    fs::write(dir.join(SPEC_FILE), serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

/// Reads a directory written by [`save_shapes_dataset`].
pub fn load_shapes_dataset(dir: &Path) -> Result<(LabeledDataset, ShapesSpec)> {
    let spec_path = dir.join(SPEC_FILE);
    let spec: ShapesSpec = serde_json::from_slice(&fs::read(&spec_path).map_err(|_| Error::Missing {
        path: spec_path.clone(),
        what: "synthetic dataset spec".into(),
    })?)?;
    let mut reader = csv::Reader::from_path(dir.join(INDEX_FILE))?;
    let mut items = Vec::new();
    for row in reader.deserialize() {
        let row: IndexRow = row?;
        let image = load_tensor_image(&dir.join(&row.filename), 3)?;
        items.push(Sample {
            image,
            label: row.domain,
            attributes: Some(SampleAttributes {
                center_x: row.center_x,
                center_y: row.center_y,
                size: row.size,
                color_index: row.color_index,
            }),
        });
    }
    let ds = LabeledDataset::new(
        items,
        SHAPES_DOMAINS,
        3,
        spec.image_size,
        Provenance::Synthetic { spec: spec.clone() },
    )?;
    Ok((ds, spec))
}
