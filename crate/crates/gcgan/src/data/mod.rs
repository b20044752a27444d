//! Synthetic parametric-face dataset, external ingestion and triplet assembly.

pub mod png_io;
pub mod render;

pub use render::{landmarks_of, render_face, IMG_SIZE};

use crate::nn::tensor::Tensor;
use crate::rng::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("parameter out of range: {0}")]
    ParamRange(String),
    #[error("landmark vector error: {0}")]
    Landmarks(String),
    #[error("need at least {need} identities, got {got}")]
    TooFewIdentities { need: usize, got: usize },
    #[error("identity {0} has fewer than 2 emotions")]
    TooFewEmotions(u32),
    #[error("missing image file {0}")]
    MissingFile(String),
    #[error("line {line}: expected {want} fields, got {got}")]
    RowLength { line: usize, want: usize, got: usize },
    #[error("line {line}: {what}")]
    BadField { line: usize, what: String },
    #[error("line {line}: coordinate outside image bounds")]
    CoordOutOfBounds { line: usize },
    #[error("bad landmark csv header")]
    BadHeader,
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// Eight identity knobs, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub face_width: f32,
    pub face_height: f32,
    pub eye_spacing: f32,
    pub eye_size: f32,
    pub nose_length: f32,
    pub mouth_width: f32,
    pub brow_thickness: f32,
    pub base_hue: f32,
}

impl IdentityParams {
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [
            ("face_width", self.face_width),
            ("face_height", self.face_height),
            ("eye_spacing", self.eye_spacing),
            ("eye_size", self.eye_size),
            ("nose_length", self.nose_length),
            ("mouth_width", self.mouth_width),
            ("brow_thickness", self.brow_thickness),
            ("base_hue", self.base_hue),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(DataError::ParamRange(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    pub fn sample(rng: &mut Rng) -> Self {
        IdentityParams {
            face_width: rng.uniform() as f32,
            face_height: rng.uniform() as f32,
            eye_spacing: rng.uniform() as f32,
            eye_size: rng.uniform() as f32,
            nose_length: rng.uniform() as f32,
            mouth_width: rng.uniform() as f32,
            brow_thickness: rng.uniform() as f32,
            base_hue: rng.uniform() as f32,
        }
    }
}

/// Continuous expression state: mouth openness and eye openness in [0, 1],
/// mouth curvature and brow raise in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpressionParams {
    pub mouth_open: f32,
    pub mouth_curve: f32,
    pub eye_open: f32,
    pub brow_raise: f32,
}

impl ExpressionParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let unit = [("mouth_open", self.mouth_open), ("eye_open", self.eye_open)];
        let sym = [("mouth_curve", self.mouth_curve), ("brow_raise", self.brow_raise)];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(DataError::ParamRange(format!("{name} = {v}")));
            }
        }
        for (name, v) in sym {
            if !(-1.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(DataError::ParamRange(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

pub const N_EMOTIONS: usize = 6;
pub const EMOTION_NAMES: [&str; N_EMOTIONS] =
    ["neutral", "smile", "surprise", "disgust", "squint", "scream"];

/// Fixed expression prototypes behind the six emotion labels. Disgust and
/// squint are deliberately the closest pair, mirroring how those two
/// expressions share most of their geometry.
pub const EMOTION_PROTOTYPES: [ExpressionParams; N_EMOTIONS] = [
    ExpressionParams { mouth_open: 0.05, mouth_curve: 0.00, eye_open: 0.55, brow_raise: 0.00 },
    ExpressionParams { mouth_open: 0.25, mouth_curve: 0.85, eye_open: 0.50, brow_raise: 0.15 },
    ExpressionParams { mouth_open: 0.80, mouth_curve: 0.05, eye_open: 0.95, brow_raise: 0.80 },
    ExpressionParams { mouth_open: 0.28, mouth_curve: -0.50, eye_open: 0.26, brow_raise: -0.42 },
    ExpressionParams { mouth_open: 0.14, mouth_curve: -0.32, eye_open: 0.14, brow_raise: -0.30 },
    ExpressionParams { mouth_open: 1.00, mouth_curve: -0.15, eye_open: 0.75, brow_raise: 0.55 },
];

/// Per-field jitter scale at jitter = 1.
const JITTER_SCALE: [f32; 4] = [0.10, 0.25, 0.12, 0.25];

/// 136 interleaved xy coordinates in [-1, 1], iBUG-68 point order.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkVector(Vec<f32>);

impl LandmarkVector {
    pub const DIM: usize = 136;

    pub fn new(coords: Vec<f32>) -> Result<Self, DataError> {
        if coords.len() != Self::DIM {
            return Err(DataError::Landmarks(format!(
                "expected {} coordinates, got {}",
                Self::DIM,
                coords.len()
            )));
        }
        for (i, &v) in coords.iter().enumerate() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(DataError::Landmarks(format!("coordinate {i} = {v}")));
            }
        }
        Ok(LandmarkVector(coords))
    }

    pub fn coords(&self) -> &[f32] {
        &self.0
    }

    pub fn point(&self, i: usize) -> (f32, f32) {
        (self.0[2 * i], self.0[2 * i + 1])
    }

    pub fn squared_distance(&self, other: &LandmarkVector) -> f32 {
        self.0
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// One dataset record: image, its landmarks, identity and emotion label,
/// plus the generating parameters when the sample is synthetic.
#[derive(Debug, Clone)]
pub struct FaceSample {
    pub image: Tensor<f32>,
    pub landmarks: LandmarkVector,
    pub identity: u32,
    pub emotion: u8,
    pub params: Option<(IdentityParams, ExpressionParams)>,
}

/// Training unit: input sample index, same-identity target sample index
/// (supplying target landmarks, label and the ground-truth image), and an
/// independently drawn reference landmark vector for the contrastive pair.
#[derive(Debug, Clone)]
pub struct TrainingTriplet {
    pub input: usize,
    pub target: usize,
    pub ref_landmarks: LandmarkVector,
    pub ref_emotion: u8,
}

/// Deterministic synthetic dataset: `n_identities` x 6 emotions.
pub fn make_dataset(
    n_identities: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<FaceSample>, DataError> {
    if n_identities < 2 {
        return Err(DataError::TooFewIdentities {
            need: 2,
            got: n_identities,
        });
    }
    let specs: Vec<(u32, u8, IdentityParams, ExpressionParams)> = (0..n_identities)
        .flat_map(|i| {
            let id = IdentityParams::sample(&mut Rng::derived(seed, &[0x1d, i as u64]));
            (0..N_EMOTIONS).map(move |e| {
                let mut rng = Rng::derived(seed, &[0xe0, i as u64, e as u64]);
                let proto = EMOTION_PROTOTYPES[e];
                let j = jitter as f32;
                let ex = ExpressionParams {
                    mouth_open: (proto.mouth_open
                        + j * JITTER_SCALE[0] * rng.uniform_in(-1.0, 1.0) as f32)
                        .clamp(0.0, 1.0),
                    mouth_curve: (proto.mouth_curve
                        + j * JITTER_SCALE[1] * rng.uniform_in(-1.0, 1.0) as f32)
                        .clamp(-1.0, 1.0),
                    eye_open: (proto.eye_open
                        + j * JITTER_SCALE[2] * rng.uniform_in(-1.0, 1.0) as f32)
                        .clamp(0.0, 1.0),
                    brow_raise: (proto.brow_raise
                        + j * JITTER_SCALE[3] * rng.uniform_in(-1.0, 1.0) as f32)
                        .clamp(-1.0, 1.0),
                };
                (i as u32, e as u8, id, ex)
            })
        })
        .collect();
    specs
        .par_iter()
        .map(|(identity, emotion, id, ex)| {
            Ok(FaceSample {
                image: render_face(id, ex)?,
                landmarks: landmarks_of(id, ex)?,
                identity: *identity,
                emotion: *emotion,
                params: Some((*id, *ex)),
            })
        })
        .collect()
}

/// Person-independent split: identity sets are disjoint,
/// |train| = round(fraction * n) clamped to [1, n-1].
pub fn split_by_identity(
    samples: &[FaceSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>), DataError> {
    let mut ids: Vec<u32> = samples.iter().map(|s| s.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(DataError::TooFewIdentities {
            need: 2,
            got: ids.len(),
        });
    }
    let mut rng = Rng::derived(seed, &[0x5b17]);
    rng.shuffle(&mut ids);
    let n_train = ((train_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn indices_for_ids(samples: &[FaceSample], ids: &[u32]) -> Vec<usize> {
    let set: std::collections::BTreeSet<u32> = ids.iter().copied().collect();
    samples
        .iter()
        .enumerate()
        .filter(|(_, s)| set.contains(&s.identity))
        .map(|(i, _)| i)
        .collect()
}

/// All ordered same-identity emotion pairs for every training identity, each
/// paired with a reference landmark vector drawn uniformly from the training
/// samples (its label rides along for the contrastive sign).
pub fn assemble_triplets(
    samples: &[FaceSample],
    train_ids: &[u32],
    seed: u64,
) -> Result<Vec<TrainingTriplet>, DataError> {
    let train_idx = indices_for_ids(samples, train_ids);
    let mut by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &train_idx {
        by_identity.entry(samples[i].identity).or_default().push(i);
    }
    let mut rng = Rng::derived(seed, &[0x731]);
    let mut triplets = Vec::new();
    for (&identity, members) in &by_identity {
        let mut emotions: Vec<u8> = members.iter().map(|&i| samples[i].emotion).collect();
        emotions.sort_unstable();
        emotions.dedup();
        if emotions.len() < 2 {
            return Err(DataError::TooFewEmotions(identity));
        }
        for &a in members {
            for &b in members {
                if samples[a].emotion == samples[b].emotion {
                    continue;
                }
                let r = train_idx[rng.below(train_idx.len())];
                triplets.push(TrainingTriplet {
                    input: a,
                    target: b,
                    ref_landmarks: samples[r].landmarks.clone(),
                    ref_emotion: samples[r].emotion,
                });
            }
        }
    }
    Ok(triplets)
}

/// Pixel-unit coordinate to [-1, 1]: 0 maps to -1, extent-1 maps to +1.
pub fn normalize_coord(v: f64, extent: usize) -> f32 {
    (v / (extent as f64 - 1.0) * 2.0 - 1.0) as f32
}

pub fn normalize_pixel(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Inverse of `normalize_pixel` with round-half-to-even quantization.
pub fn denormalize_pixel(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round_ties_even().clamp(0.0, 255.0) as u8
}

pub const CSV_FIELDS: usize = 3 + LandmarkVector::DIM;

/// Reads `file,identity,emotion,x1,y1,...,x68,y68` rows with pixel-unit
/// coordinates, loading and normalizing the named images from `image_dir`.
pub fn ingest_external(image_dir: &Path, landmark_csv: &Path) -> Result<Vec<FaceSample>, DataError> {
    let text = std::fs::read_to_string(landmark_csv)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::BadHeader)?;
    validate_header(header)?;
    let mut out = Vec::new();
    for (lineno, line) in lines {
        let line_no = lineno + 1; // 1-based for messages
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CSV_FIELDS {
            return Err(DataError::RowLength {
                line: line_no,
                want: CSV_FIELDS,
                got: fields.len(),
            });
        }
        let file = fields[0].trim();
        let identity: u32 = fields[1].trim().parse().map_err(|_| DataError::BadField {
            line: line_no,
            what: format!("identity {:?}", fields[1]),
        })?;
        let emotion: u8 = fields[2].trim().parse().map_err(|_| DataError::BadField {
            line: line_no,
            what: format!("emotion {:?}", fields[2]),
        })?;
        if emotion as usize >= N_EMOTIONS {
            return Err(DataError::BadField {
                line: line_no,
                what: format!("emotion label {emotion} out of range"),
            });
        }
        let path = image_dir.join(file);
        if !path.is_file() {
            return Err(DataError::MissingFile(path.display().to_string()));
        }
        let (image, w, h) = png_io::read_image_normalized(&path)?;
        let mut coords = Vec::with_capacity(LandmarkVector::DIM);
        for (k, f) in fields[3..].iter().enumerate() {
            let v: f64 = f.trim().parse().map_err(|_| DataError::BadField {
                line: line_no,
                what: format!("coordinate {:?}", f),
            })?;
            let extent = if k % 2 == 0 { w } else { h };
            if v < 0.0 || v > extent as f64 - 1.0 {
                return Err(DataError::CoordOutOfBounds { line: line_no });
            }
            coords.push(normalize_coord(v, extent));
        }
        out.push(FaceSample {
            image,
            landmarks: LandmarkVector::new(coords)
                .map_err(|e| DataError::BadField { line: line_no, what: e.to_string() })?,
            identity,
            emotion,
            params: None,
        });
    }
    Ok(out)
}

fn validate_header(header: &str) -> Result<(), DataError> {
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != CSV_FIELDS
        || fields[0].trim() != "file"
        || fields[1].trim() != "identity"
        || fields[2].trim() != "emotion"
        || fields[3].trim() != "x1"
        || fields[CSV_FIELDS - 1].trim() != "y68"
    {
        return Err(DataError::BadHeader);
    }
    Ok(())
}

pub fn csv_header() -> String {
    let mut h = String::from("file,identity,emotion");
    for i in 1..=68 {
        h.push_str(&format!(",x{i},y{i}"));
    }
    h
}

/// Reproducibility record for a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub n_identities: usize,
    pub jitter: f64,
    pub seed: u64,
    pub split_seed: u64,
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| DataError::Manifest(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))
    }

    /// Rebuild the dataset this manifest describes (generation is a pure
    /// function of its fields).
    pub fn rebuild(&self) -> Result<Vec<FaceSample>, DataError> {
        make_dataset(self.n_identities, self.jitter, self.seed)
    }
}
