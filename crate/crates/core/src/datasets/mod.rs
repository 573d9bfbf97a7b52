//! Multi-domain image datasets, class-split manifests and the labelled /
//! unlabelled views consumed by training.

mod loader;
mod manifest;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub use loader::{load_domain_directory, save_domain_directory, LoadIssue, LoadOptions, LoadReport};
pub use manifest::{build_split_manifest, Role, SplitManifest, SplitProportions};
pub use synthetic::{
    class_names, generate_synthetic_benchmark, render_example, render_unlabelled_images,
    SyntheticBenchmarkConfig, DEFAULT_DOMAINS,
};

/// An `H×W×C` raster, row-major with interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height < 16 || width < 16 {
            return Err(Error::validation(format!(
                "raster {height}x{width} is smaller than 16x16"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::validation(format!(
                "raster must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::validation(format!(
                "raster buffer has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::validation(format!(
                "raster value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Exact 90° counter-clockwise rotation.
    pub fn rotate90(&self) -> Raster {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; self.data.len()];
        // new raster is w×h; new(y', x') = old(x', w-1-y')
        for ny in 0..w {
            for nx in 0..h {
                let (oy, ox) = (nx, w - 1 - ny);
                let src = (oy * w + ox) * c;
                let dst = (ny * h + nx) * c;
                out[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Raster {
            height: w,
            width: h,
            channels: c,
            data: out,
        }
    }

    /// `quarter_turns` successive [`rotate90`](Self::rotate90) applications.
    pub fn rotated(&self, quarter_turns: usize) -> Raster {
        let mut r = self.clone();
        for _ in 0..quarter_turns % 4 {
            r = r.rotate90();
        }
        r
    }

    /// Little-endian `f32` bytes of the pixel buffer.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: Raster,
    pub class_name: String,
    pub domain_name: String,
}

/// Labelled images from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    domain_name: String,
    examples: Vec<LabeledExample>,
    class_vocabulary: Vec<String>,
    labels: Vec<usize>,
}

impl DomainDataset {
    /// Builds a dataset and checks that every example belongs to `domain_name`,
    /// uses a vocabulary class, and that no vocabulary class is empty.
    pub fn new(
        domain_name: impl Into<String>,
        examples: Vec<LabeledExample>,
        class_vocabulary: Vec<String>,
    ) -> Result<Self> {
        let domain_name = domain_name.into();
        let index: BTreeMap<&str, usize> = class_vocabulary
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        if index.len() != class_vocabulary.len() {
            return Err(Error::validation("class vocabulary has duplicates"));
        }
        let mut counts = vec![0usize; class_vocabulary.len()];
        let mut labels = Vec::with_capacity(examples.len());
        for ex in &examples {
            if ex.domain_name != domain_name {
                return Err(Error::validation(format!(
                    "example from domain {:?} in dataset {:?}",
                    ex.domain_name, domain_name
                )));
            }
            let Some(&label) = index.get(ex.class_name.as_str()) else {
                return Err(Error::validation(format!(
                    "class {:?} not in vocabulary",
                    ex.class_name
                )));
            };
            counts[label] += 1;
            labels.push(label);
        }
        if let Some(i) = counts.iter().position(|&n| n == 0) {
            return Err(Error::validation(format!(
                "class {:?} has no examples",
                class_vocabulary[i]
            )));
        }
        Ok(Self {
            domain_name,
            examples,
            class_vocabulary,
            labels,
        })
    }

    pub fn domain_name(&self) -> &str {
        &self.domain_name
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn class_vocabulary(&self) -> &[String] {
        &self.class_vocabulary
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_vocabulary.len()
    }

    /// Vocabulary index of example `i`.
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &Raster {
        &self.examples[i].image
    }

    /// Example indices grouped by vocabulary index, each group in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_vocabulary.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Restriction to the given classes; the vocabulary keeps this dataset's order.
    pub fn restrict(&self, classes: &BTreeSet<String>) -> Result<Self> {
        let vocab: Vec<String> = self
            .class_vocabulary
            .iter()
            .filter(|c| classes.contains(*c))
            .cloned()
            .collect();
        let examples = self
            .examples
            .iter()
            .filter(|e| classes.contains(&e.class_name))
            .cloned()
            .collect();
        Self::new(self.domain_name.clone(), examples, vocab)
    }
}

/// Unlabelled target-domain images.
///
/// The generating class names may be kept for diagnostics such as cluster
/// purity; they are reachable only through [`UnlabelledDataset::diagnostics`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabelledDataset {
    domain_name: String,
    images: Vec<Raster>,
    hidden_class_names: Option<Vec<String>>,
}

/// Read-only view of the labels hidden inside an [`UnlabelledDataset`].
pub struct Diagnostics<'a> {
    hidden: Option<&'a [String]>,
}

impl Diagnostics<'_> {
    pub fn hidden_class_names(&self) -> Option<&[String]> {
        self.hidden
    }
}

impl UnlabelledDataset {
    pub fn new(
        domain_name: impl Into<String>,
        images: Vec<Raster>,
        hidden_class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if let Some(h) = &hidden_class_names {
            if h.len() != images.len() {
                return Err(Error::validation("hidden labels do not match image count"));
            }
        }
        Ok(Self {
            domain_name: domain_name.into(),
            images,
            hidden_class_names,
        })
    }

    pub fn domain_name(&self) -> &str {
        &self.domain_name
    }

    pub fn images(&self) -> &[Raster] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Diagnostics-only access to the generating labels. Training code never calls this.
    pub fn diagnostics(&self) -> Diagnostics<'_> {
        Diagnostics {
            hidden: self.hidden_class_names.as_deref(),
        }
    }

    /// Appends more images (e.g. to enlarge the unlabelled pool).
    pub fn extend(&mut self, other: UnlabelledDataset) -> Result<()> {
        if other.domain_name != self.domain_name {
            return Err(Error::validation("cannot merge unlabelled sets across domains"));
        }
        match (&mut self.hidden_class_names, other.hidden_class_names) {
            (Some(a), Some(b)) => a.extend(b),
            (None, None) => {}
            _ => self.hidden_class_names = None,
        }
        self.images.extend(other.images);
        Ok(())
    }
}

/// The three role-restricted views of one source/target pairing.
#[derive(Debug, Clone)]
pub struct SplitViews {
    pub train: DomainDataset,
    pub unlabelled: UnlabelledDataset,
    pub test: DomainDataset,
}

/// Cuts the source domain to the train classes and the target domain to the
/// unlabelled (labels stripped) and test classes.
pub fn apply_split(
    datasets: &BTreeMap<String, DomainDataset>,
    manifest: &SplitManifest,
    source_domain: &str,
    target_domain: &str,
) -> Result<SplitViews> {
    if source_domain == target_domain {
        return Err(Error::validation(format!(
            "source and target domain are both {source_domain:?}"
        )));
    }
    let source = datasets
        .get(source_domain)
        .ok_or_else(|| Error::validation(format!("unknown source domain {source_domain:?}")))?;
    let target = datasets
        .get(target_domain)
        .ok_or_else(|| Error::validation(format!("unknown target domain {target_domain:?}")))?;

    for ds in [source, target] {
        let have: BTreeSet<&str> = ds.class_vocabulary().iter().map(String::as_str).collect();
        let missing: Vec<&str> = manifest
            .assignments()
            .keys()
            .map(String::as_str)
            .filter(|c| !have.contains(c))
            .collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!(
                "manifest classes missing from domain {:?}: {}",
                ds.domain_name(),
                missing.join(", ")
            )));
        }
    }

    let train = source.restrict(&manifest.classes_with(Role::Train))?;
    let test = target.restrict(&manifest.classes_with(Role::Test))?;
    let unl_classes = manifest.classes_with(Role::Unlabelled);
    let (images, hidden): (Vec<_>, Vec<_>) = target
        .examples()
        .iter()
        .filter(|e| unl_classes.contains(&e.class_name))
        .map(|e| (e.image.clone(), e.class_name.clone()))
        .unzip();
    let unlabelled = UnlabelledDataset::new(target_domain, images, Some(hidden))?;
    Ok(SplitViews {
        train,
        unlabelled,
        test,
    })
}
