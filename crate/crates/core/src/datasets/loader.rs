use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, ImageBuffer, Rgb, RgbImage};

use super::{DomainDataset, LabeledExample, Raster};
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Resize every image to `(height, width)`; images are kept as-is otherwise.
    pub resize: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadIssue {
    /// A file could not be decoded and was skipped.
    Unreadable { path: PathBuf, message: String },
    /// A class directory yielded no images and was left out of the vocabulary.
    EmptyClass { class_name: String },
}

/// Problems met while loading; none of them abort the load.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub issues: Vec<LoadIssue>,
    pub loaded: usize,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(entries)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn decode(path: &Path, opts: &LoadOptions) -> Result<Raster> {
    let mut img = image::open(path)?.to_rgb8();
    if let Some((h, w)) = opts.resize {
        if img.height() as usize != h || img.width() as usize != w {
            img = imageops::resize(&img, w as u32, h as u32, imageops::FilterType::Triangle);
        }
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Raster::new(h, w, 3, data)
}

/// Loads `root/<domain_name>/<class_name>/*.{png,jpg,jpeg}`.
///
/// The vocabulary is the sorted list of class directories that yielded at
/// least one image; examples are ordered by `(class_name, file name)`.
/// Undecodable files are skipped and listed in the report.
pub fn load_domain_directory(
    root: &Path,
    domain_name: &str,
    opts: &LoadOptions,
) -> Result<(DomainDataset, LoadReport)> {
    let dir = root.join(domain_name);
    if !dir.is_dir() {
        return Err(Error::NotFound(dir));
    }
    let mut report = LoadReport::default();
    let mut vocabulary = Vec::new();
    let mut examples = Vec::new();
    for class_dir in sorted_entries(&dir)?.into_iter().filter(|p| p.is_dir()) {
        let class_name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| {
                Error::validation(format!("non UTF-8 class directory {}", class_dir.display()))
            })?
            .to_string();
        let mut n = 0;
        for file in sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| p.is_file() && has_image_extension(p))
        {
            match decode(&file, opts) {
                Ok(image) => {
                    examples.push(LabeledExample {
                        image,
                        class_name: class_name.clone(),
                        domain_name: domain_name.to_string(),
                    });
                    n += 1;
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    report.issues.push(LoadIssue::Unreadable {
                        path: file,
                        message: e.to_string(),
                    });
                }
            }
        }
        if n == 0 {
            log::warn!("class directory {} has no readable images", class_dir.display());
            report.issues.push(LoadIssue::EmptyClass { class_name });
        } else {
            vocabulary.push(class_name);
        }
    }
    report.loaded = examples.len();
    Ok((DomainDataset::new(domain_name, examples, vocabulary)?, report))
}

fn to_rgb8(r: &Raster) -> RgbImage {
    let (h, w, c) = r.shape();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |k: usize| {
            let k = if c == 1 { 0 } else { k };
            (r.pixel(y as usize, x as usize, k) * 255.0).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    })
}

/// Writes a dataset as `root/<domain>/<class>/<ordinal>.png`, ordinals
/// counting per class in dataset order.
pub fn save_domain_directory(dataset: &DomainDataset, root: &Path) -> Result<()> {
    let domain_dir = root.join(dataset.domain_name());
    for (class, members) in dataset
        .class_vocabulary()
        .iter()
        .zip(dataset.indices_by_class())
    {
        let class_dir = domain_dir.join(class);
        fs::create_dir_all(&class_dir)?;
        for (ordinal, &i) in members.iter().enumerate() {
            to_rgb8(dataset.image(i)).save(class_dir.join(format!("{ordinal:05}.png")))?;
        }
    }
    Ok(())
}
