//! Open-vocabulary retrieval and zero-shot semantic occupancy from a fitted
//! grid.
//!
//! Similarities are cosines between L2-normalized vectors unless
//! [`SimilarityMode::RawDot`] is requested. A voxel with a zero feature has
//! cosine −1 to every query.

pub mod metrics;

use crate::binio::*;
use crate::camera::FramePoseTrack;
use crate::grid::{GridGeometry, VoxelGrid};
use crate::reducer::Reducer;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub use metrics::{
    average_precision, classification_accuracy, evaluate_labels, iou_miou, mean_average_precision, visible_mask,
    ClassScore, IouReport, SegmentationReport,
};

/// Label of unoccupied voxels.
pub const FREE_LABEL: u16 = u16::MAX;
/// Default density threshold separating free from occupied voxels.
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabClass {
    pub name: String,
    pub prompts: Vec<Prompt>,
}

/// Named classes, each described by one or more prompt embeddings. The
/// `free` class is implicit and decided by the density threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabRecord")]
pub struct Vocabulary {
    classes: Vec<VocabClass>,
}

#[derive(Deserialize)]
struct VocabRecord {
    classes: Vec<VocabClass>,
}

impl TryFrom<VocabRecord> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabRecord) -> Result<Self> {
        Vocabulary::new(r.classes)
    }
}

impl Vocabulary {
    pub fn new(classes: Vec<VocabClass>) -> Result<Self> {
        let Some(first) = classes.first() else {
            return Err(Error::Config("vocabulary has no classes".into()));
        };
        if classes.len() >= FREE_LABEL as usize {
            return Err(Error::Config("too many classes".into()));
        }
        let dim = first.prompts.first().map(|p| p.embedding.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Config(format!("class '{}' has no usable prompt", first.name)));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.prompts.is_empty() {
                return Err(Error::Config(format!("class '{}' has no prompts", c.name)));
            }
            if classes[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate class name '{}'", c.name)));
            }
            if c.name == "free" {
                return Err(Error::Config("'free' is reserved for unoccupied voxels".into()));
            }
            for p in &c.prompts {
                if p.embedding.len() != dim {
                    return Err(Error::Config(format!(
                        "prompt '{}' of class '{}' has {} dims, expected {dim}",
                        p.text,
                        c.name,
                        p.embedding.len()
                    )));
                }
                if p.embedding.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config(format!("prompt '{}' has non-finite entries", p.text)));
                }
            }
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> &[VocabClass] {
        &self.classes
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].prompts[0].embedding.len()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Every prompt embedding in class order.
    pub fn prompt_embeddings(&self) -> Vec<Vec<f64>> {
        self.classes.iter().flat_map(|c| c.prompts.iter().map(|p| p.embedding.clone())).collect()
    }

    /// Vocabulary with every embedding encoded into the reduced space.
    pub fn reduced(&self, reducer: &Reducer) -> Result<Self> {
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let prompts = c
                    .prompts
                    .iter()
                    .map(|p| Ok(Prompt { text: p.text.clone(), embedding: reducer.encode(&p.embedding)? }))
                    .collect::<Result<_>>()?;
                Ok(VocabClass { name: c.name.clone(), prompts })
            })
            .collect::<Result<_>>()?;
        Self::new(classes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    #[default]
    Cosine,
    RawDot,
}

fn unit_or_zero(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn similarity(mode: SimilarityMode, feature: &[f64], query: &[f64]) -> f64 {
    let dot: f64 = feature.iter().zip(query).map(|(a, b)| a * b).sum();
    match mode {
        SimilarityMode::RawDot => dot,
        SimilarityMode::Cosine => {
            let n = feature.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                -1.0
            } else {
                (dot / n).clamp(-1.0, 1.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrieveOptions {
    pub mode: SimilarityMode,
    /// Voxels below this density get the lowest possible score.
    pub density_filter: Option<f64>,
    /// Produce a binary mask of voxels scoring at least this value.
    pub mask_threshold: Option<f64>,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        Self { mode: SimilarityMode::Cosine, density_filter: None, mask_threshold: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    /// One score per voxel, in grid index order.
    pub scores: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

pub fn retrieve(grid: &VoxelGrid, query: &[f64], opts: &RetrieveOptions) -> Result<RetrievalResult> {
    if query.len() != grid.feature_dim() {
        return Err(Error::Config(format!(
            "query has {} dims, grid features have {}",
            query.len(),
            grid.feature_dim()
        )));
    }
    if query.iter().all(|&v| v == 0.0) || query.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("query must be finite with nonzero norm".into()));
    }
    let q = match opts.mode {
        SimilarityMode::Cosine => unit_or_zero(query),
        SimilarityMode::RawDot => query.to_vec(),
    };
    let floor = match opts.mode {
        SimilarityMode::Cosine => -1.0,
        SimilarityMode::RawDot => f64::NEG_INFINITY,
    };
    let scores: Vec<f64> = (0..grid.voxel_count())
        .map(|i| match opts.density_filter {
            Some(tau) if grid.densities()[i] < tau => floor,
            _ => similarity(opts.mode, grid.feature(i), &q),
        })
        .collect();
    let mask = opts.mask_threshold.map(|th| scores.iter().map(|&s| s >= th).collect());
    Ok(RetrievalResult { scores, mask })
}

/// Per-voxel class labels ([`FREE_LABEL`] for free) and best similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGrid {
    geometry: GridGeometry,
    class_names: Vec<String>,
    labels: Vec<u16>,
    scores: Vec<f64>,
}

const SEM_MAGIC: &[u8; 4] = b"OCCS";
const SEM_VERSION: u32 = 1;

impl SemanticGrid {
    pub fn new(geometry: GridGeometry, class_names: Vec<String>, labels: Vec<u16>, scores: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        let n = geometry.voxel_count();
        if labels.len() != n || scores.len() != n {
            return Err(Error::Config(format!("semantic grid needs {n} labels and scores")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != FREE_LABEL && l as usize >= class_names.len()) {
            return Err(Error::Config(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        Ok(Self { geometry, class_names, labels, scores })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_occupied(&self, voxel: usize) -> bool {
        self.labels[voxel] != FREE_LABEL
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != FREE_LABEL).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Magic, version, `X Y Z`, class count, corners, class names as
    /// length-prefixed UTF-8, then `u16` labels and `f32` scores.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SEM_MAGIC)?;
        write_u32(w, SEM_VERSION)?;
        for &n in &self.geometry.resolution {
            write_u32(w, n as u32)?;
        }
        write_u32(w, self.class_names.len() as u32)?;
        for &v in self.geometry.min_corner.iter().chain(&self.geometry.max_corner) {
            write_f64(w, v)?;
        }
        for name in &self.class_names {
            write_u32(w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.labels.len() * 2);
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        w.write_all(&buf)?;
        write_f32_slice(w, &self.scores)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, SEM_MAGIC)?;
        let version = read_u32(r)?;
        if version != SEM_VERSION {
            return Err(Error::Format(format!("unsupported semantic grid version {version}")));
        }
        let resolution = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
        let classes = read_u32(r)? as usize;
        let min_corner = [read_f64(r)?, read_f64(r)?, read_f64(r)?];
        let max_corner = [read_f64(r)?, read_f64(r)?, read_f64(r)?];
        let geometry =
            GridGeometry::new(min_corner, max_corner, resolution).map_err(|e| Error::Format(e.to_string()))?;
        if classes >= FREE_LABEL as usize {
            return Err(Error::Format(format!("implausible class count {classes}")));
        }
        let mut class_names = Vec::with_capacity(classes);
        for _ in 0..classes {
            let len = read_u32(r)? as usize;
            if len > 4096 {
                return Err(Error::Format("class name too long".into()));
            }
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            class_names.push(String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?);
        }
        let n = geometry.voxel_count();
        let mut raw = vec![0u8; n * 2];
        r.read_exact(&mut raw)?;
        let labels = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let scores = read_f32_vec(r, n)?;
        expect_eof(r)?;
        Self::new(geometry, class_names, labels, scores).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Labels each voxel: free when its density is below `tau`, otherwise the
/// class of the single most similar prompt. Ties go to the lowest class
/// index.
pub fn segment(grid: &VoxelGrid, vocab: &Vocabulary, tau: f64, mode: SimilarityMode) -> Result<SemanticGrid> {
    if vocab.dim() != grid.feature_dim() {
        return Err(Error::Config(format!(
            "vocabulary has {} dims, grid features have {}",
            vocab.dim(),
            grid.feature_dim()
        )));
    }
    let prompts: Vec<(u16, Vec<f64>)> = vocab
        .classes()
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            c.prompts.iter().map(move |p| {
                let e = match mode {
                    SimilarityMode::Cosine => unit_or_zero(&p.embedding),
                    SimilarityMode::RawDot => p.embedding.clone(),
                };
                (ci as u16, e)
            })
        })
        .collect();
    let n = grid.voxel_count();
    let mut labels = vec![FREE_LABEL; n];
    let mut scores = vec![0.0; n];
    for i in 0..n {
        let f = grid.feature(i);
        let mut best = (0u16, f64::NEG_INFINITY);
        for (class, e) in &prompts {
            let s = similarity(mode, f, e);
            if s > best.1 {
                best = (*class, s);
            }
        }
        scores[i] = best.1;
        if grid.densities()[i] >= tau {
            labels[i] = best.0;
        }
    }
    SemanticGrid::new(grid.geometry().clone(), vocab.class_names(), labels, scores)
}

/// Occupied voxels with density at or above `tau`.
pub fn occupancy(grid: &VoxelGrid, tau: f64) -> Vec<bool> {
    grid.densities().iter().map(|&d| d >= tau).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRetrieval {
    pub name: String,
    pub ap: Option<f64>,
    pub ap_visible: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub classes: Vec<ClassRetrieval>,
    pub map: Option<f64>,
    pub map_visible: Option<f64>,
}

/// One query per class over the ground-truth occupied voxels: a voxel's
/// score is its best similarity to any of the class's prompts, and the
/// positives are the voxels of that class. The visible variant keeps only
/// voxels whose centers project into at least one camera.
pub fn retrieval_benchmark(
    grid: &VoxelGrid,
    vocab: &Vocabulary,
    gt: &SemanticGrid,
    track: &FramePoseTrack,
    mode: SimilarityMode,
) -> Result<RetrievalReport> {
    if gt.geometry() != grid.geometry() {
        return Err(Error::Config("ground truth and grid geometries differ".into()));
    }
    let points: Vec<usize> = (0..gt.labels().len()).filter(|&i| gt.is_occupied(i)).collect();
    let centers: Vec<_> = points.iter().map(|&i| grid.geometry().center_of(i)).collect();
    let visible = visible_mask(&centers, track);
    let mut classes = Vec::new();
    for class in vocab.classes() {
        let mut best = vec![f64::NEG_INFINITY; points.len()];
        for p in &class.prompts {
            let r = retrieve(grid, &p.embedding, &RetrieveOptions { mode, ..Default::default() })?;
            for (b, &i) in best.iter_mut().zip(&points) {
                *b = b.max(r.scores[i]);
            }
        }
        let gt_index = gt.class_names().iter().position(|n| n == &class.name);
        let labels: Vec<bool> = points.iter().map(|&i| gt_index == Some(gt.labels()[i] as usize)).collect();
        let ap = average_precision(&best, &labels)?;
        let (vs, vl): (Vec<f64>, Vec<bool>) =
            best.iter().zip(&labels).zip(&visible).filter(|(_, &v)| v).map(|((&s, &l), _)| (s, l)).unzip();
        let ap_visible = average_precision(&vs, &vl)?;
        classes.push(ClassRetrieval { name: class.name.clone(), ap, ap_visible });
    }
    let map = mean_average_precision(&classes.iter().map(|c| c.ap).collect::<Vec<_>>());
    let map_visible = mean_average_precision(&classes.iter().map(|c| c.ap_visible).collect::<Vec<_>>());
    Ok(RetrievalReport { classes, map, map_visible })
}
