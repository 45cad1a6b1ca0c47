//! Latent-feature export for external visualization and alignment checks.
//!
//! Each labeled sample yields one feature row per source: the 2D-pose
//! encoder output, the 3D-pose encoder output of the ground-truth pose,
//! and optionally the 3D-pose encoder output of the model's own predicted
//! pose. Rows are grouped per sample so related features stay adjacent in
//! the CSV. The mean row-wise L1 distance between the 2D and 3D features
//! quantifies how well the two encoders share a latent space.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{NormStats, PoseSample};
use crate::error::{Error, Result};
use crate::graph::{Phase, Tape};
use crate::model::{ArchKind, Model};
use crate::rng::{stream, Stream};
use crate::scalar::{to_f64, Real};
use crate::tensor::Tensor;

/// Which network produced a feature row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    /// 2D-pose encoder output of the input keypoints.
    Pose2d,
    /// 3D-pose encoder output of the ground-truth pose.
    Pose3d,
    /// 3D-pose encoder output of the model's predicted pose.
    Pose3dReencoded,
}

impl FeatureSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::Pose2d => "2d",
            FeatureSource::Pose3d => "3d",
            FeatureSource::Pose3dReencoded => "3d-reencoded",
        }
    }
}

/// One exported latent feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    /// Index of the sample in the input dataset.
    pub sample: usize,
    pub source: FeatureSource,
    pub values: Vec<f64>,
}

/// Run the encoders in evaluation mode over a labeled dataset and collect
/// per-sample feature rows: 2D, 3D, and (optionally) the re-encoded
/// prediction. The model is left untouched.
pub fn extract_features<R: Real>(
    model: &mut Model<R>,
    samples: &[PoseSample<R>],
    norm: &NormStats<R>,
    include_reencoded: bool,
) -> Result<Vec<FeatureRow>> {
    if samples.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let joints = samples[0].n_joints();
    if joints != model.joints {
        return Err(Error::Config(format!(
            "model expects {} joints but the dataset has {joints}",
            model.joints
        )));
    }
    if let Some(i) = samples.iter().position(|s| !s.is_labeled()) {
        return Err(Error::Config(format!(
            "feature export needs labeled samples; sample {i} has no 3D pose"
        )));
    }
    let sources_per_sample = if include_reencoded { 3 } else { 2 };
    let mut out = Vec::with_capacity(samples.len() * sources_per_sample);
    let mut rng = stream(0, Stream::Harness); // unused in eval phase
    for (chunk_idx, chunk) in samples.chunks(256).enumerate() {
        let rows2d: Vec<Vec<R>> = chunk.iter().map(|s| norm.normalize2d(&s.flat2d())).collect();
        let rows3d: Vec<Vec<R>> = chunk
            .iter()
            .map(|s| norm.normalize3d(&s.flat3d().expect("labeled")))
            .collect();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x2 = tape.leaf(Tensor::from_rows(&rows2d));
        let x3 = tape.leaf(Tensor::from_rows(&rows3d));
        let f2d = model.encode2d(&mut tape, &bound, x2, Phase::Eval, &mut rng)?;
        let h3d = model.encode3d(&mut tape, &bound, x3, Phase::Eval, &mut rng)?;
        let reenc = if include_reencoded {
            let pred = match model.arch {
                ArchKind::Full => {
                    model.generate(&mut tape, &bound, x2, Some(f2d), Phase::Eval, &mut rng)?
                }
                ArchKind::Baseline => {
                    model.generate(&mut tape, &bound, x2, None, Phase::Eval, &mut rng)?
                }
            };
            Some(model.encode3d(&mut tape, &bound, pred, Phase::Eval, &mut rng)?)
        } else {
            None
        };
        for i in 0..chunk.len() {
            let sample = chunk_idx * 256 + i;
            for (source, id) in [(FeatureSource::Pose2d, f2d), (FeatureSource::Pose3d, h3d)]
                .into_iter()
                .chain(reenc.map(|id| (FeatureSource::Pose3dReencoded, id)))
            {
                out.push(FeatureRow {
                    sample,
                    source,
                    values: tape.value(id).row(i).iter().map(|v| to_f64(*v)).collect(),
                });
            }
        }
    }
    Ok(out)
}

/// Write feature rows as CSV: `sample,source,f0,...,f{w-1}`.
pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Err(Error::Config("no feature rows to write".into()));
    };
    let width = first.values.len();
    let mut out = String::new();
    out.push_str("sample,source");
    for k in 0..width {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{},{}", row.sample, row.source.as_str());
        for v in &row.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Mean row-wise L1 distance between the 2D-pose feature and the
/// ground-truth 3D-pose feature over a labeled dataset. Training with the
/// perceptual loss should drive this down relative to an untrained model.
pub fn mean_feature_l1<R: Real>(
    model: &mut Model<R>,
    samples: &[PoseSample<R>],
    norm: &NormStats<R>,
) -> Result<f64> {
    let rows = extract_features(model, samples, norm, false)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for pair in rows.chunks(2) {
        debug_assert_eq!(pair[0].source, FeatureSource::Pose2d);
        debug_assert_eq!(pair[1].source, FeatureSource::Pose3d);
        sum += pair[0]
            .values
            .iter()
            .zip(&pair[1].values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        count += 1;
    }
    Ok(sum / count as f64)
}
