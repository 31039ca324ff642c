//! Labeled datasets from one directory of images per domain.

use std::fs;
use std::path::Path;

use log::warn;

use super::imageio::{image_to_tensor, square_resize};
use super::{LabeledDataset, Provenance, Sample};
use crate::error::{Error, Result};

const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Loads `root/<subdir>` for each `(subdir, domain)` in `domains`, in sorted
/// file order. Images are center-cropped to a square and resized. Files that
/// fail to decode are skipped with a warning and counted in the provenance.
pub fn load_image_folder(
    root: &Path,
    domains: &[(String, usize)],
    image_size: usize,
    channels: usize,
) -> Result<LabeledDataset> {
    if !root.is_dir() {
        return Err(Error::Missing {
            path: root.to_path_buf(),
            what: "image folder".into(),
        });
    }
    let num_domains = domains.iter().map(|(_, d)| d + 1).max().unwrap_or(0);
    let mut items = Vec::new();
    let mut skipped = 0;
    for (sub, domain) in domains {
        let dir = root.join(sub);
        if !dir.is_dir() {
            return Err(Error::Missing {
                path: dir,
                what: format!("directory for domain {domain}"),
            });
        }
        let mut files: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        let before = items.len();
        for path in files {
            match image::open(&path) {
                Ok(img) => items.push(Sample {
                    image: image_to_tensor(&square_resize(&img, image_size), channels),
                    label: *domain,
                    attributes: None,
                }),
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    skipped += 1;
                }
            }
        }
        if items.len() == before {
            return Err(Error::Config(format!(
                "no readable images for domain {domain} in {}",
                dir.display()
            )));
        }
    }
    LabeledDataset::new(
        items,
        num_domains,
        channels,
        image_size,
        Provenance::Folder {
            root: root.to_path_buf(),
            domains: domains.iter().map(|(s, _)| s.clone()).collect(),
            skipped,
        },
    )
}
