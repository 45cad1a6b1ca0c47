//! Pose samples, dataset I/O, normalization, and protocol splits.
//!
//! Datasets are JSON Lines files, one pose per line. 2D poses are image
//! coordinates; 3D poses are root-relative millimeters and are re-centered
//! on load so the root sits exactly at the origin.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, to_f64, Real};

/// Pinhole camera: world point `p` maps to camera frame as `R p + t`
/// (millimeters), then to the image as `(f·x/z, f·y/z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<R: Real> {
    pub focal: R,
    /// Row-major 3×3 world-to-camera rotation.
    pub rotation: [R; 9],
    /// Translation in millimeters.
    pub translation: [R; 3],
}

impl<R: Real> Camera<R> {
    /// Check RᵀR = I within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                // (RᵀR)_ij = Σ_k R_ki R_kj
                let mut s = R::zero();
                for k in 0..3 {
                    s = s + r[k * 3 + i] * r[k * 3 + j];
                }
                let want = if i == j { R::one() } else { R::zero() };
                if (s - want).abs() > real(1e-9) {
                    return Err(Error::Degenerate(format!(
                        "camera rotation is not orthonormal: (RtR)[{i},{j}] = {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// World point to camera frame.
    pub fn to_camera(&self, p: [R; 3]) -> [R; 3] {
        let r = &self.rotation;
        [
            r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + self.translation[0],
            r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + self.translation[1],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + self.translation[2],
        ]
    }
}

/// One pose observation. `pose3d` is absent for unlabeled samples; the
/// camera is kept only when known (synthetic data stores it so projection
/// can be replayed).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample<R: Real> {
    pub subject: String,
    pub action: String,
    pub pose2d: Vec<[R; 2]>,
    pub pose3d: Option<Vec<[R; 3]>>,
    pub camera: Option<Camera<R>>,
}

impl<R: Real> PoseSample<R> {
    pub fn n_joints(&self) -> usize {
        self.pose2d.len()
    }

    pub fn is_labeled(&self) -> bool {
        self.pose3d.is_some()
    }

    /// Flattened 2D coordinates, length 2J.
    pub fn flat2d(&self) -> Vec<R> {
        self.pose2d.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    /// Flattened 3D coordinates, length 3J; `None` when unlabeled.
    pub fn flat3d(&self) -> Option<Vec<R>> {
        self.pose3d
            .as_ref()
            .map(|js| js.iter().flat_map(|p| [p[0], p[1], p[2]]).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct CameraRec {
    focal: f64,
    rotation: Vec<f64>,
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SampleRec {
    subject: String,
    action: String,
    pose2d: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pose3d: Option<Vec<[f64; 3]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    camera: Option<CameraRec>,
}

/// Translate a 3D pose so the root joint sits at the origin.
pub fn root_center<R: Real>(pose3d: &[[R; 3]], root: usize) -> Vec<[R; 3]> {
    let r = pose3d[root];
    pose3d
        .iter()
        .map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]])
        .collect()
}

/// Load a JSONL dataset. 3D poses are root-centered using `root` as the
/// root joint index. Every line must parse, carry finite coordinates, and
/// agree with the first line's joint count.
pub fn load_dataset<R: Real>(path: &Path, root: usize) -> Result<Vec<PoseSample<R>>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
    let reader = BufReader::new(file);
    let mut samples: Vec<PoseSample<R>> = Vec::new();
    let mut joints: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt_err = |msg: String| Error::Format {
            path: path.display().to_string(),
            line: lineno,
            msg,
        };
        let rec: SampleRec =
            serde_json::from_str(&line).map_err(|e| fmt_err(e.to_string()))?;
        let j = rec.pose2d.len();
        match joints {
            None => {
                if j == 0 {
                    return Err(fmt_err("pose2d has no joints".into()));
                }
                if root >= j {
                    return Err(fmt_err(format!(
                        "root index {root} out of range for {j} joints"
                    )));
                }
                joints = Some(j);
            }
            Some(expect) if expect != j => {
                return Err(fmt_err(format!(
                    "expected {expect} joints as in the first record, got {j}"
                )))
            }
            _ => {}
        }
        if let Some(p3) = &rec.pose3d {
            if p3.len() != j {
                return Err(fmt_err(format!(
                    "pose3d has {} joints but pose2d has {j}",
                    p3.len()
                )));
            }
        }
        let finite2d = rec.pose2d.iter().all(|p| p.iter().all(|v| v.is_finite()));
        let finite3d = rec
            .pose3d
            .as_ref()
            .is_none_or(|p3| p3.iter().all(|p| p.iter().all(|v| v.is_finite())));
        if !finite2d || !finite3d {
            return Err(fmt_err("non-finite coordinate".into()));
        }
        let camera = match rec.camera {
            None => None,
            Some(c) => {
                if c.rotation.len() != 9 {
                    return Err(fmt_err(format!(
                        "camera rotation has {} entries, expected 9",
                        c.rotation.len()
                    )));
                }
                let mut rot = [R::zero(); 9];
                for (dst, &src) in rot.iter_mut().zip(&c.rotation) {
                    *dst = real(src);
                }
                let cam = Camera {
                    focal: real(c.focal),
                    rotation: rot,
                    translation: [
                        real(c.translation[0]),
                        real(c.translation[1]),
                        real(c.translation[2]),
                    ],
                };
                cam.validate().map_err(|e| fmt_err(e.to_string()))?;
                Some(cam)
            }
        };
        let pose3d = rec.pose3d.map(|p3| {
            let p3: Vec<[R; 3]> = p3
                .iter()
                .map(|p| [real(p[0]), real(p[1]), real(p[2])])
                .collect();
            root_center(&p3, root)
        });
        samples.push(PoseSample {
            subject: rec.subject,
            action: rec.action,
            pose2d: rec
                .pose2d
                .iter()
                .map(|p| [real(p[0]), real(p[1])])
                .collect(),
            pose3d,
            camera,
        });
    }
    Ok(samples)
}

/// Write samples as JSONL, one record per line.
pub fn save_dataset<R: Real>(path: &Path, samples: &[PoseSample<R>]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for s in samples {
        let rec = SampleRec {
            subject: s.subject.clone(),
            action: s.action.clone(),
            pose2d: s
                .pose2d
                .iter()
                .map(|p| [to_f64(p[0]), to_f64(p[1])])
                .collect(),
            pose3d: s.pose3d.as_ref().map(|p3| {
                p3.iter()
                    .map(|p| [to_f64(p[0]), to_f64(p[1]), to_f64(p[2])])
                    .collect()
            }),
            camera: s.camera.as_ref().map(|c| CameraRec {
                focal: to_f64(c.focal),
                rotation: c.rotation.iter().map(|&v| to_f64(v)).collect(),
                translation: [
                    to_f64(c.translation[0]),
                    to_f64(c.translation[1]),
                    to_f64(c.translation[2]),
                ],
            }),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-coordinate standardization statistics. 2D stats cover all 2J input
/// coordinates; 3D stats cover all 3J root-relative coordinates. Population
/// (1/N) variance; stds are clamped to 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<R: Real> {
    pub mean2d: Vec<R>,
    pub std2d: Vec<R>,
    pub mean3d: Vec<R>,
    pub std3d: Vec<R>,
}

/// Compute standardization statistics from the labeled samples of a
/// training split. Only labeled samples contribute — to both the 2D and 3D
/// statistics — so supervised and semi-supervised runs over the same
/// labeled set preprocess identically.
pub fn compute_norm_stats<R: Real>(samples: &[PoseSample<R>]) -> Result<NormStats<R>> {
    let labeled: Vec<&PoseSample<R>> = samples.iter().filter(|s| s.is_labeled()).collect();
    if labeled.len() < 2 {
        return Err(Error::Config(format!(
            "normalization statistics need at least 2 labeled samples, got {}",
            labeled.len()
        )));
    }
    let j = labeled[0].n_joints();
    let (mut mean2d, mut std2d) = moments(labeled.iter().map(|s| s.flat2d()), 2 * j);
    let (mut mean3d, mut std3d) = moments(
        labeled.iter().map(|s| s.flat3d().expect("labeled")),
        3 * j,
    );
    let clamped = clamp_stds(&mut std2d) + clamp_stds(&mut std3d);
    if clamped > 0 {
        log::warn!("{clamped} zero-variance coordinates clamped to std 1e-8");
    }
    // Keep exactly-zero means exactly zero (root coordinates).
    for m in mean2d.iter_mut().chain(mean3d.iter_mut()) {
        if m.abs() < real(1e-300) {
            *m = R::zero();
        }
    }
    Ok(NormStats {
        mean2d,
        std2d,
        mean3d,
        std3d,
    })
}

fn moments<R: Real, I: Iterator<Item = Vec<R>> + Clone>(rows: I, width: usize) -> (Vec<R>, Vec<R>) {
    let mut mean = vec![R::zero(); width];
    let mut count = 0usize;
    for row in rows.clone() {
        for (m, v) in mean.iter_mut().zip(&row) {
            *m = *m + *v;
        }
        count += 1;
    }
    let inv_n = R::one() / real::<R>(count as f64);
    for m in mean.iter_mut() {
        *m = *m * inv_n;
    }
    let mut var = vec![R::zero(); width];
    for row in rows {
        for ((v, m), x) in var.iter_mut().zip(&mean).zip(&row) {
            let d = *x - *m;
            *v = *v + d * d;
        }
    }
    let std = var.iter().map(|&v| (v * inv_n).sqrt()).collect();
    (mean, std)
}

fn clamp_stds<R: Real>(stds: &mut [R]) -> usize {
    let floor = real::<R>(1e-8);
    let mut clamped = 0;
    for s in stds.iter_mut() {
        if *s <= floor {
            *s = floor;
            clamped += 1;
        }
    }
    clamped
}

impl<R: Real> NormStats<R> {
    pub fn n_joints(&self) -> usize {
        self.mean2d.len() / 2
    }

    pub fn normalize2d(&self, flat: &[R]) -> Vec<R> {
        standardize(flat, &self.mean2d, &self.std2d)
    }

    pub fn normalize3d(&self, flat: &[R]) -> Vec<R> {
        standardize(flat, &self.mean3d, &self.std3d)
    }

    /// Standardized 3J vector back to root-relative millimeters.
    pub fn denormalize3d(&self, flat_std: &[R]) -> Vec<[R; 3]> {
        assert_eq!(flat_std.len(), self.mean3d.len(), "3J vector expected");
        let mut out = Vec::with_capacity(flat_std.len() / 3);
        for j in 0..flat_std.len() / 3 {
            let mut p = [R::zero(); 3];
            for (k, pk) in p.iter_mut().enumerate() {
                let i = 3 * j + k;
                *pk = flat_std[i] * self.std3d[i] + self.mean3d[i];
            }
            out.push(p);
        }
        out
    }

    /// Standardize a sample's coordinates (3D only when labeled).
    pub fn normalize(&self, sample: &PoseSample<R>) -> PoseSample<R> {
        let flat2 = self.normalize2d(&sample.flat2d());
        let pose2d = flat2.chunks(2).map(|c| [c[0], c[1]]).collect();
        let pose3d = sample.flat3d().map(|f3| {
            self.normalize3d(&f3)
                .chunks(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect()
        });
        PoseSample {
            subject: sample.subject.clone(),
            action: sample.action.clone(),
            pose2d,
            pose3d,
            camera: sample.camera.clone(),
        }
    }
}

fn standardize<R: Real>(flat: &[R], mean: &[R], std: &[R]) -> Vec<R> {
    assert_eq!(flat.len(), mean.len(), "coordinate count mismatch");
    flat.iter()
        .zip(mean)
        .zip(std)
        .map(|((&x, &m), &s)| (x - m) / s)
        .collect()
}

/// Partition samples by action membership: `train_actions` go to the train
/// split, everything else to the test split. Both splits must end up
/// non-empty.
#[allow(clippy::type_complexity)]
pub fn split_cross_action<R: Real>(
    samples: Vec<PoseSample<R>>,
    train_actions: &BTreeSet<String>,
) -> Result<(Vec<PoseSample<R>>, Vec<PoseSample<R>>)> {
    let available: BTreeSet<String> = samples.iter().map(|s| s.action.clone()).collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if train_actions.contains(&s.action) {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "cross-action split needs samples on both sides; train actions {:?}, available actions {:?}",
            train_actions, available
        )));
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream, Stream};
    use proptest::prelude::*;

    fn sample(action: &str, j: usize, base: f64) -> PoseSample<f64> {
        PoseSample {
            subject: "S1".into(),
            action: action.into(),
            pose2d: (0..j).map(|k| [base + k as f64, base - k as f64]).collect(),
            pose3d: Some(root_center(
                &(0..j)
                    .map(|k| [base + k as f64, 2.0 * base, base * k as f64])
                    .collect::<Vec<_>>(),
                0,
            )),
            camera: None,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let samples = vec![sample("walk", 4, 1.0), sample("sit", 4, -2.0)];
        save_dataset(&path, &samples).unwrap();
        let back: Vec<PoseSample<f64>> = load_dataset(&path, 0).unwrap();
        assert_eq!(samples, back);
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact_on_full_precision_floats() {
        // Coordinates with all 17 significant digits in play; equality here
        // depends on serde_json's correctly rounded float parsing (the
        // `float_roundtrip` feature), so this pins that requirement.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut rng = stream(21, Stream::Harness);
        let samples: Vec<PoseSample<f64>> = (0..50)
            .map(|_| {
                let p3: Vec<[f64; 3]> = (0..4)
                    .map(|_| {
                        [
                            normal::<f64>(&mut rng) * 137.0,
                            normal::<f64>(&mut rng) / 3.0,
                            normal::<f64>(&mut rng) * 1e-3,
                        ]
                    })
                    .collect();
                PoseSample {
                    subject: "S1".into(),
                    action: "jitter".into(),
                    pose2d: p3.iter().map(|p| [p[0] / 7.0, p[1] * 9.81]).collect(),
                    pose3d: Some(root_center(&p3, 0)),
                    camera: None,
                }
            })
            .collect();
        save_dataset(&path, &samples).unwrap();
        let back: Vec<PoseSample<f64>> = load_dataset(&path, 0).unwrap();
        assert_eq!(samples, back);
        // And a second generation must be byte-identical, not merely equal.
        let path2 = dir.path().join("d2.jsonl");
        save_dataset(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn unlabeled_record_loads_without_pose3d() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            r#"{"subject":"S1","action":"walk","pose2d":[[1,2],[3,4]]}"#,
        )
        .unwrap();
        let samples: Vec<PoseSample<f64>> = load_dataset(&path, 0).unwrap();
        assert_eq!(samples.len(), 1);
        assert!(!samples[0].is_labeled());
    }

    #[test]
    fn inconsistent_joint_count_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"subject":"S1","action":"walk","pose2d":[[1,2],[3,4]]}"#,
                "\n",
                r#"{"subject":"S1","action":"walk","pose2d":[[1,2],[3,4],[5,6]]}"#,
            ),
        )
        .unwrap();
        let err = load_dataset::<f64>(&path, 0).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn malformed_line_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(&path, "{not json}\n").unwrap();
        let err = load_dataset::<f64>(&path, 0).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn loaded_pose3d_is_root_centered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        fs::write(
            &path,
            r#"{"subject":"S1","action":"walk","pose2d":[[0,0],[1,1]],"pose3d":[[10,20,30],[13,24,30]]}"#,
        )
        .unwrap();
        let samples: Vec<PoseSample<f64>> = load_dataset(&path, 0).unwrap();
        let p3 = samples[0].pose3d.as_ref().unwrap();
        assert_eq!(p3[0], [0.0, 0.0, 0.0]);
        assert_eq!(p3[1], [3.0, 4.0, 0.0]);
    }

    #[test]
    fn root_center_shifts_every_joint() {
        let pose = vec![[10.0, 20.0, 30.0], [11.0, 22.0, 33.0]];
        let centered = root_center(&pose, 0);
        assert_eq!(centered[0], [0.0, 0.0, 0.0]);
        assert_eq!(centered[1], [1.0, 2.0, 3.0]);
        // idempotent
        assert_eq!(root_center(&centered, 0), centered);
    }

    #[test]
    fn symmetric_samples_have_zero_mean2d() {
        let mut a = sample("walk", 3, 5.0);
        let mut b = sample("walk", 3, 5.0);
        for (pa, pb) in a.pose2d.iter_mut().zip(b.pose2d.iter_mut()) {
            pb[0] = -pa[0];
            pb[1] = -pa[1];
        }
        let stats = compute_norm_stats(&[a, b]).unwrap();
        for &m in &stats.mean2d {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_data_recomputes_to_unit_moments() {
        let mut rng = stream(11, Stream::Harness);
        let j = 5;
        let samples: Vec<PoseSample<f64>> = (0..1000)
            .map(|_| {
                let p3: Vec<[f64; 3]> = (0..j)
                    .map(|_| {
                        [
                            normal::<f64>(&mut rng) * 120.0 + 40.0,
                            normal::<f64>(&mut rng) * 90.0 - 10.0,
                            normal::<f64>(&mut rng) * 60.0,
                        ]
                    })
                    .collect();
                PoseSample {
                    subject: "S1".into(),
                    action: "walk".into(),
                    pose2d: (0..j)
                        .map(|_| {
                            [
                                normal::<f64>(&mut rng) * 30.0 + 300.0,
                                normal::<f64>(&mut rng) * 20.0 + 200.0,
                            ]
                        })
                        .collect(),
                    pose3d: Some(root_center(&p3, 0)),
                    camera: None,
                }
            })
            .collect();
        let stats = compute_norm_stats(&samples).unwrap();
        let normalized: Vec<PoseSample<f64>> =
            samples.iter().map(|s| stats.normalize(s)).collect();
        let check = compute_norm_stats(&normalized).unwrap();
        for (i, (&m, &s)) in check.mean2d.iter().zip(&check.std2d).enumerate() {
            assert!(m.abs() < 1e-9, "mean2d[{i}] = {m}");
            assert!((s - 1.0).abs() < 1e-9, "std2d[{i}] = {s}");
        }
        // Root coordinates are identically zero: submitted to the clamp,
        // their std stays at the floor rather than 1.
        for (i, (&m, &s)) in check.mean3d.iter().zip(&check.std3d).enumerate() {
            assert!(m.abs() < 1e-9, "mean3d[{i}] = {m}");
            if i < 3 {
                assert_eq!(s, 1e-8);
            } else {
                assert!((s - 1.0).abs() < 1e-9, "std3d[{i}] = {s}");
            }
        }
    }

    #[test]
    fn split_cross_action_partitions_by_action() {
        let samples = vec![
            sample("A", 3, 0.0),
            sample("B", 3, 1.0),
            sample("C", 3, 2.0),
            sample("B", 3, 3.0),
        ];
        let train_actions: BTreeSet<String> = ["A".to_string()].into();
        let (train, test) = split_cross_action(samples, &train_actions).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 3);
        assert!(test.iter().all(|s| s.action != "A"));
    }

    #[test]
    fn split_with_all_actions_in_train_errors() {
        let samples = vec![sample("A", 3, 0.0), sample("B", 3, 1.0)];
        let train_actions: BTreeSet<String> =
            ["A".to_string(), "B".to_string()].into();
        let err = split_cross_action(samples, &train_actions)
            .unwrap_err()
            .to_string();
        assert!(err.contains("\"A\"") && err.contains("\"B\""), "{err}");
    }

    proptest! {
        #[test]
        fn normalize_denormalize_is_identity(coords in prop::collection::vec(-2000.0f64..2000.0, 9)) {
            let mut p3: Vec<[f64;3]> = coords.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            p3 = root_center(&p3, 0);
            let mk = |scale: f64| PoseSample::<f64> {
                subject: "S".into(),
                action: "a".into(),
                pose2d: p3.iter().map(|p| [p[0] * scale, p[1] * scale]).collect(),
                pose3d: Some(p3.iter().map(|p| [p[0] * scale, p[1], p[2] - scale]).collect()),
                camera: None,
            };
            let samples = vec![mk(1.0), mk(-0.5), mk(2.0)];
            let stats = compute_norm_stats(&samples).unwrap();
            for s in &samples {
                let flat = s.flat3d().unwrap();
                let back = stats.denormalize3d(&stats.normalize3d(&flat));
                for (orig, got) in s.pose3d.as_ref().unwrap().iter().zip(&back) {
                    for k in 0..3 {
                        prop_assert!((orig[k] - got[k]).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn root_center_preserves_pairwise_distances(coords in prop::collection::vec(-500.0f64..500.0, 12)) {
            let p3: Vec<[f64;3]> = coords.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let centered = root_center(&p3, 1);
            for a in 0..p3.len() {
                for b in 0..p3.len() {
                    let d0: f64 = (0..3).map(|k| (p3[a][k] - p3[b][k]).powi(2)).sum::<f64>().sqrt();
                    let d1: f64 = (0..3).map(|k| (centered[a][k] - centered[b][k]).powi(2)).sum::<f64>().sqrt();
                    prop_assert!((d0 - d1).abs() < 1e-12);
                }
            }
        }
    }
}
