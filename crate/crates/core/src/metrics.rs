//! Evaluation protocols.
//!
//! * `mpjpe_p1` — root-align both poses, then mean per-joint distance.
//! * `mpjpe_p2` — find the least-squares similarity transform (rotation,
//!   uniform scale, translation; no mirror) from prediction to ground
//!   truth, then mean per-joint distance.
//! * `pck` / `auc` — fraction of joints under an error threshold, and its
//!   mean over a threshold grid.
//! * `evaluate` — run a model over a labeled dataset and aggregate all of
//!   the above, with a per-action breakdown.
//!
//! All distances are in millimeters on denormalized poses.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{root_center, NormStats, PoseSample};
use crate::error::{Error, Result};
use crate::mat3::{self, Mat3};
use crate::model::Model;
use crate::scalar::{real, to_f64, Real};
use crate::tensor::Tensor;

/// p ↦ scale · R · p + translation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform<R: Real> {
    pub rotation: Mat3<R>,
    pub scale: R,
    pub translation: [R; 3],
}

impl<R: Real> SimilarityTransform<R> {
    pub fn apply(&self, p: [R; 3]) -> [R; 3] {
        let r = mat3::apply(&self.rotation, p);
        [
            self.scale * r[0] + self.translation[0],
            self.scale * r[1] + self.translation[1],
            self.scale * r[2] + self.translation[2],
        ]
    }
}

fn check_pair<R: Real>(op: &'static str, pred: &[[R; 3]], gt: &[[R; 3]]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape(
            op,
            format!("two equal non-empty joint lists, got {}", pred.len()),
            format!("{}", gt.len()),
        ));
    }
    Ok(())
}

fn dist<R: Real>(a: [R; 3], b: [R; 3]) -> R {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Protocol #1: root-center both poses, mean per-joint distance (mm).
pub fn mpjpe_p1<R: Real>(pred: &[[R; 3]], gt: &[[R; 3]], root: usize) -> Result<R> {
    check_pair("mpjpe_p1", pred, gt)?;
    if root >= pred.len() {
        return Err(Error::Config(format!(
            "root index {root} out of range for {} joints",
            pred.len()
        )));
    }
    let p = root_center(pred, root);
    let g = root_center(gt, root);
    let mut total = R::zero();
    for (a, b) in p.iter().zip(&g) {
        total = total + dist(*a, *b);
    }
    Ok(total / real(p.len() as f64))
}

/// Singular value decomposition of a 3×3 matrix by one-sided Jacobi
/// rotations: `a = U · diag(sigma) · Vᵀ` with `sigma` descending and U, V
/// orthonormal (not necessarily det +1; the caller corrects reflections).
fn svd3<R: Real>(a: &Mat3<R>) -> (Mat3<R>, [R; 3], Mat3<R>) {
    // Columns of the working copy and of V.
    let mut w = [
        [a[0], a[3], a[6]],
        [a[1], a[4], a[7]],
        [a[2], a[5], a[8]],
    ];
    let mut v = [
        [R::one(), R::zero(), R::zero()],
        [R::zero(), R::one(), R::zero()],
        [R::zero(), R::zero(), R::one()],
    ];
    let tol = real::<R>(1e-14);
    for _sweep in 0..60 {
        let mut off = R::zero();
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let mut alpha = R::zero();
            let mut beta = R::zero();
            let mut gamma = R::zero();
            for (wp, wq) in w[p].into_iter().zip(w[q]) {
                alpha = alpha + wp * wp;
                beta = beta + wq * wq;
                gamma = gamma + wp * wq;
            }
            let denom = (alpha * beta).sqrt();
            if denom > R::zero() {
                off = off.max(gamma.abs() / denom);
            }
            if gamma.abs() <= tol * denom || denom == R::zero() {
                continue;
            }
            let zeta = (beta - alpha) / (gamma + gamma);
            let t = {
                let abs_t = R::one() / (zeta.abs() + (R::one() + zeta * zeta).sqrt());
                if zeta < R::zero() {
                    -abs_t
                } else {
                    abs_t
                }
            };
            let c = R::one() / (R::one() + t * t).sqrt();
            let s = c * t;
            for k in 0..3 {
                let (wp, wq) = (w[p][k], w[q][k]);
                w[p][k] = c * wp - s * wq;
                w[q][k] = s * wp + c * wq;
                let (vp, vq) = (v[p][k], v[q][k]);
                v[p][k] = c * vp - s * vq;
                v[q][k] = s * vp + c * vq;
            }
        }
        if off <= tol {
            break;
        }
    }
    let norm = |c: &[R; 3]| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    let unsorted = [norm(&w[0]), norm(&w[1]), norm(&w[2])];
    // Sort columns by descending singular value.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| to_f64(unsorted[j]).partial_cmp(&to_f64(unsorted[i])).unwrap());
    let w = [w[order[0]], w[order[1]], w[order[2]]];
    let vcols = [v[order[0]], v[order[1]], v[order[2]]];
    let sigma = [unsorted[order[0]], unsorted[order[1]], unsorted[order[2]]];

    // Left singular vectors: normalized columns, completed orthonormally
    // where the matrix is rank-deficient.
    let tiny = real::<R>(1e-300);
    let scale0 = sigma[0].max(tiny);
    let mut u = [[R::zero(); 3]; 3];
    if sigma[0] > tiny {
        for k in 0..3 {
            u[0][k] = w[0][k] / sigma[0];
        }
    } else {
        u[0] = [R::one(), R::zero(), R::zero()];
    }
    if sigma[1] > scale0 * real(1e-13) {
        for k in 0..3 {
            u[1][k] = w[1][k] / sigma[1];
        }
    } else {
        // Any unit vector orthogonal to u0.
        let pick = if u[0][0].abs() < real(0.9) {
            [R::one(), R::zero(), R::zero()]
        } else {
            [R::zero(), R::one(), R::zero()]
        };
        let d = u[0][0] * pick[0] + u[0][1] * pick[1] + u[0][2] * pick[2];
        let mut c = [
            pick[0] - d * u[0][0],
            pick[1] - d * u[0][1],
            pick[2] - d * u[0][2],
        ];
        let n = norm(&c);
        for x in c.iter_mut() {
            *x = *x / n;
        }
        u[1] = c;
    }
    if sigma[2] > scale0 * real(1e-13) {
        for k in 0..3 {
            u[2][k] = w[2][k] / sigma[2];
        }
    } else {
        u[2] = mat3::cross(u[0], u[1]);
    }

    // Columns back to row-major matrices.
    let col_major = |cols: &[[R; 3]; 3]| -> Mat3<R> {
        [
            cols[0][0], cols[1][0], cols[2][0],
            cols[0][1], cols[1][1], cols[2][1],
            cols[0][2], cols[1][2], cols[2][2],
        ]
    };
    (col_major(&u), sigma, col_major(&vcols))
}

/// Least-squares similarity alignment of `pred` onto `gt` (Umeyama):
/// minimizes Σ‖gt − (s·R·pred + t)‖² over rotations (det +1), positive
/// scale, and translation.
pub fn procrustes_align<R: Real>(pred: &[[R; 3]], gt: &[[R; 3]]) -> Result<SimilarityTransform<R>> {
    check_pair("procrustes_align", pred, gt)?;
    let n = pred.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "alignment needs at least 3 joints, got {n}"
        )));
    }
    let nr = real::<R>(n as f64);
    let mut mu_p = [R::zero(); 3];
    let mut mu_g = [R::zero(); 3];
    for i in 0..n {
        for k in 0..3 {
            mu_p[k] = mu_p[k] + pred[i][k] / nr;
            mu_g[k] = mu_g[k] + gt[i][k] / nr;
        }
    }
    let mut var_p = R::zero();
    let mut cov = [R::zero(); 9]; // (1/n) Σ (g−μg)(p−μp)ᵀ, row index from g
    for i in 0..n {
        let pc = [pred[i][0] - mu_p[0], pred[i][1] - mu_p[1], pred[i][2] - mu_p[2]];
        let gc = [gt[i][0] - mu_g[0], gt[i][1] - mu_g[1], gt[i][2] - mu_g[2]];
        var_p = var_p + (pc[0] * pc[0] + pc[1] * pc[1] + pc[2] * pc[2]) / nr;
        for r in 0..3 {
            for c in 0..3 {
                cov[r * 3 + c] = cov[r * 3 + c] + gc[r] * pc[c] / nr;
            }
        }
    }
    if var_p < real(1e-12) {
        return Err(Error::Degenerate(
            "predicted joints coincide; alignment is undefined".into(),
        ));
    }
    let (u, d, v) = svd3(&cov);
    if d[1] <= d[0] * real(1e-9) {
        return Err(Error::Degenerate(
            "joints are collinear or coincident; rotation is underdetermined".into(),
        ));
    }
    let flip = mat3::det(&u) * mat3::det(&v) < R::zero();
    let s3 = if flip { -R::one() } else { R::one() };
    // R = U · diag(1,1,s3) · Vᵀ
    let mut u_adj = u;
    for r in 0..3 {
        u_adj[r * 3 + 2] = u_adj[r * 3 + 2] * s3;
    }
    let rotation = mat3::mul(&u_adj, &mat3::transpose(&v));
    let defect = mat3::orthonormality_defect(&rotation);
    if defect > real(1e-9) {
        return Err(Error::Degenerate(format!(
            "alignment produced a non-orthonormal rotation (defect {})",
            to_f64(defect)
        )));
    }
    let scale = (d[0] + d[1] + s3 * d[2]) / var_p;
    if scale <= R::zero() {
        return Err(Error::Degenerate(
            "optimal alignment scale is not positive".into(),
        ));
    }
    let rp = mat3::apply(&rotation, mu_p);
    let translation = [
        mu_g[0] - scale * rp[0],
        mu_g[1] - scale * rp[1],
        mu_g[2] - scale * rp[2],
    ];
    Ok(SimilarityTransform {
        rotation,
        scale,
        translation,
    })
}

/// Protocol #2: mean per-joint distance (mm) after the optimal similarity
/// alignment of `pred` onto `gt`.
pub fn mpjpe_p2<R: Real>(pred: &[[R; 3]], gt: &[[R; 3]]) -> Result<R> {
    let t = procrustes_align(pred, gt)?;
    let mut total = R::zero();
    for (p, g) in pred.iter().zip(gt) {
        total = total + dist(t.apply(*p), *g);
    }
    Ok(total / real(pred.len() as f64))
}

/// Fraction of joints (over all pose pairs) with error strictly below the
/// threshold. Poses must already be aligned (e.g. root-centered).
pub fn pck<R: Real>(preds: &[Vec<[R; 3]>], gts: &[Vec<[R; 3]>], threshold_mm: R) -> Result<R> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::shape(
            "pck",
            "two equal-length non-empty pose lists".to_string(),
            format!("{} vs {}", preds.len(), gts.len()),
        ));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        check_pair("pck", p, g)?;
        for (a, b) in p.iter().zip(g) {
            if dist(*a, *b) < threshold_mm {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(real::<R>(correct as f64) / real(total as f64))
}

/// Mean PCK over a threshold grid.
pub fn auc<R: Real>(preds: &[Vec<[R; 3]>], gts: &[Vec<[R; 3]>], thresholds: &[R]) -> Result<R> {
    if thresholds.is_empty() {
        return Err(Error::Config("AUC threshold grid is empty".into()));
    }
    let mut total = R::zero();
    for &t in thresholds {
        total = total + pck(preds, gts, t)?;
    }
    Ok(total / real(thresholds.len() as f64))
}

/// Default AUC grid: 0–150 mm in 5 mm steps (31 points).
pub fn default_auc_grid<R: Real>() -> Vec<R> {
    (0..=30).map(|i| real::<R>(i as f64 * 5.0)).collect()
}

#[derive(Debug, Clone)]
pub struct EvalOptions<R: Real> {
    pub root: usize,
    pub pck_threshold_mm: R,
    pub auc_grid: Vec<R>,
}

impl<R: Real> Default for EvalOptions<R> {
    fn default() -> Self {
        EvalOptions {
            root: 0,
            pck_threshold_mm: real(150.0),
            auc_grid: default_auc_grid(),
        }
    }
}

/// Per-action MPJPE rows plus the dataset-level metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_p1: f64,
    pub mpjpe_p2: f64,
    pub pck: f64,
    pub auc: f64,
    pub per_action: BTreeMap<String, ActionRow>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionRow {
    pub mpjpe_p1: f64,
    pub mpjpe_p2: f64,
    pub count: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// Aligned plain-text table, one row per action plus an overall row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .per_action
            .keys()
            .map(|k| k.len())
            .chain(["overall".len(), "action".len()])
            .max()
            .unwrap_or(7);
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>10}  {:>10}  {:>7}",
            "action", "mpjpe_p1", "mpjpe_p2", "count"
        );
        for (name, row) in &self.per_action {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:>10.3}  {:>10.3}  {:>7}",
                name, row.mpjpe_p1, row.mpjpe_p2, row.count
            );
        }
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>10.3}  {:>10.3}  {:>7}",
            "overall", self.mpjpe_p1, self.mpjpe_p2, self.n_samples
        );
        let _ = writeln!(out, "pck@threshold = {:.4}   auc = {:.4}", self.pck, self.auc);
        out
    }
}

/// Run the 2D→3D forward path over a labeled dataset and return the
/// denormalized, root-centered predictions in mm.
pub fn predict_poses<R: Real>(
    model: &mut Model<R>,
    samples: &[PoseSample<R>],
    norm: &NormStats<R>,
) -> Result<Vec<Vec<[R; 3]>>> {
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
    let mut out = Vec::with_capacity(samples.len());
    // Fixed chunking keeps memory bounded; eval rows are independent, so
    // the chunk size does not affect the values.
    for chunk in samples.chunks(256) {
        let rows: Vec<Vec<R>> = chunk.iter().map(|s| norm.normalize2d(&s.flat2d())).collect();
        let x = Tensor::from_rows(&rows);
        let pred = model.lift(&x)?;
        for i in 0..chunk.len() {
            out.push(norm.denormalize3d(pred.row(i)));
        }
    }
    Ok(out)
}

/// Aggregate metrics for predicted poses against labeled samples.
pub fn report_from_poses<R: Real>(
    preds: &[Vec<[R; 3]>],
    samples: &[PoseSample<R>],
    opts: &EvalOptions<R>,
) -> Result<EvalReport> {
    if preds.len() != samples.len() || preds.is_empty() {
        return Err(Error::shape(
            "report_from_poses",
            "equal non-empty prediction and sample lists".to_string(),
            format!("{} vs {}", preds.len(), samples.len()),
        ));
    }
    let mut centered_preds = Vec::with_capacity(preds.len());
    let mut centered_gts = Vec::with_capacity(preds.len());
    struct Acc {
        p1: f64,
        p2: f64,
        count: usize,
    }
    let mut actions: BTreeMap<String, Acc> = BTreeMap::new();
    let mut sum_p1 = 0.0;
    let mut sum_p2 = 0.0;
    for (pred, sample) in preds.iter().zip(samples) {
        let gt = sample.pose3d.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "evaluation needs 3D labels; sample for action {} is unlabeled",
                sample.action
            ))
        })?;
        let p1 = to_f64(mpjpe_p1(pred, gt, opts.root)?);
        let pc = root_center(pred, opts.root);
        let gc = root_center(gt, opts.root);
        let p2 = to_f64(mpjpe_p2(&pc, &gc)?);
        sum_p1 += p1;
        sum_p2 += p2;
        let acc = actions.entry(sample.action.clone()).or_insert(Acc {
            p1: 0.0,
            p2: 0.0,
            count: 0,
        });
        acc.p1 += p1;
        acc.p2 += p2;
        acc.count += 1;
        centered_preds.push(pc);
        centered_gts.push(gc);
    }
    let n = preds.len() as f64;
    let pck_v = to_f64(pck(&centered_preds, &centered_gts, opts.pck_threshold_mm)?);
    let auc_v = to_f64(auc(&centered_preds, &centered_gts, &opts.auc_grid)?);
    Ok(EvalReport {
        mpjpe_p1: sum_p1 / n,
        mpjpe_p2: sum_p2 / n,
        pck: pck_v,
        auc: auc_v,
        per_action: actions
            .into_iter()
            .map(|(k, a)| {
                (
                    k,
                    ActionRow {
                        mpjpe_p1: a.p1 / a.count as f64,
                        mpjpe_p2: a.p2 / a.count as f64,
                        count: a.count,
                    },
                )
            })
            .collect(),
        n_samples: preds.len(),
    })
}

/// Full evaluation: forward pass, denormalization, and metric aggregation.
pub fn evaluate<R: Real>(
    model: &mut Model<R>,
    samples: &[PoseSample<R>],
    norm: &NormStats<R>,
    opts: &EvalOptions<R>,
) -> Result<EvalReport> {
    let preds = predict_poses(model, samples, norm)?;
    report_from_poses(&preds, samples, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream, uniform, Stream};
    use nalgebra as na;

    fn random_pose(rng: &mut crate::rng::Rng, joints: usize, scale: f64) -> Vec<[f64; 3]> {
        (0..joints)
            .map(|_| {
                [
                    normal::<f64>(rng) * scale,
                    normal::<f64>(rng) * scale,
                    normal::<f64>(rng) * scale,
                ]
            })
            .collect()
    }

    fn random_rotation(rng: &mut crate::rng::Rng) -> Mat3<f64> {
        let axis = loop {
            let v = [normal::<f64>(rng), normal::<f64>(rng), normal::<f64>(rng)];
            if let Some(u) = mat3::normalize3(v) {
                break u;
            }
        };
        let angle = uniform::<f64>(rng) * std::f64::consts::TAU;
        mat3::axis_angle(axis, angle)
    }

    #[test]
    fn p1_hand_value() {
        let pred = vec![[10.0, 20.0, 30.0], [13.0, 24.0, 30.0]];
        let gt = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        // After root-centering, joint 1 differs by (3,4,0) → (0 + 5)/2.
        let v: f64 = mpjpe_p1(&pred, &gt, 0).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }

    #[test]
    fn p1_equals_zero_on_identical_poses() {
        let mut rng = stream(1, Stream::Harness);
        let pose = random_pose(&mut rng, 16, 100.0);
        assert_eq!(mpjpe_p1(&pose, &pose, 0).unwrap(), 0.0);
    }

    #[test]
    fn p1_matches_independent_oracle_and_ignores_translations() {
        let mut rng = stream(2, Stream::Harness);
        for _ in 0..100 {
            let pred = random_pose(&mut rng, 12, 50.0);
            let gt = random_pose(&mut rng, 12, 50.0);
            let v = mpjpe_p1(&pred, &gt, 3).unwrap();
            // Oracle: direct formula on differences of root-relative joints.
            let mut acc = 0.0;
            for j in 0..12 {
                let mut sq = 0.0;
                for k in 0..3 {
                    let d = (pred[j][k] - pred[3][k]) - (gt[j][k] - gt[3][k]);
                    sq += d * d;
                }
                acc += sq.sqrt();
            }
            assert!((v - acc / 12.0).abs() < 1e-12);
            // Translation invariance.
            let shift = |p: &[[f64; 3]], d: [f64; 3]| -> Vec<[f64; 3]> {
                p.iter().map(|q| [q[0] + d[0], q[1] + d[1], q[2] + d[2]]).collect()
            };
            let v2 = mpjpe_p1(&shift(&pred, [5.0, -3.0, 9.0]), &shift(&gt, [-7.0, 2.0, 1.0]), 3)
                .unwrap();
            assert!((v - v2).abs() < 1e-9);
        }
    }

    #[test]
    fn svd3_reconstructs_random_matrices() {
        let mut rng = stream(3, Stream::Harness);
        for trial in 0..200 {
            let mut a = [0.0f64; 9];
            for v in a.iter_mut() {
                *v = normal::<f64>(&mut rng) * 3.0;
            }
            if trial % 5 == 0 {
                // Force rank deficiency: third row = sum of first two.
                for c in 0..3 {
                    a[6 + c] = a[c] + a[3 + c];
                }
            }
            let (u, s, v) = svd3(&a);
            assert!(mat3::orthonormality_defect(&u) < 1e-9, "U not orthonormal");
            assert!(mat3::orthonormality_defect(&v) < 1e-9, "V not orthonormal");
            assert!(s[0] >= s[1] && s[1] >= s[2] && s[2] >= 0.0, "order {s:?}");
            // Rebuild and compare.
            let mut usv = [0.0f64; 9];
            for r in 0..3 {
                for c in 0..3 {
                    for k in 0..3 {
                        usv[r * 3 + c] += u[r * 3 + k] * s[k] * v[c * 3 + k];
                    }
                }
            }
            for i in 0..9 {
                assert!((usv[i] - a[i]).abs() < 1e-10, "entry {i}: {} vs {}", usv[i], a[i]);
            }
            // Singular values against nalgebra.
            let m = na::Matrix3::from_row_slice(&a);
            let na_s = m.svd(false, false).singular_values;
            for k in 0..3 {
                assert!((s[k] - na_s[k]).abs() < 1e-9, "sigma {k}");
            }
        }
    }

    #[test]
    fn procrustes_recovers_an_exact_similarity_transform() {
        let mut rng = stream(4, Stream::Harness);
        for _ in 0..50 {
            let gt = random_pose(&mut rng, 16, 200.0);
            let rot = random_rotation(&mut rng);
            let scale = 0.25 + uniform::<f64>(&mut rng) * 4.0;
            let t = [
                normal::<f64>(&mut rng) * 50.0,
                normal::<f64>(&mut rng) * 50.0,
                normal::<f64>(&mut rng) * 50.0,
            ];
            // pred = s⁻¹·R⁻¹·(gt − t): aligning pred onto gt must undo this.
            let inv_rot = mat3::transpose(&rot);
            let pred: Vec<[f64; 3]> = gt
                .iter()
                .map(|g| {
                    let d = [g[0] - t[0], g[1] - t[1], g[2] - t[2]];
                    let r = mat3::apply(&inv_rot, d);
                    [r[0] / scale, r[1] / scale, r[2] / scale]
                })
                .collect();
            let align = procrustes_align(&pred, &gt).unwrap();
            assert!((align.scale - scale).abs() / scale < 1e-9);
            assert!(mat3::orthonormality_defect(&align.rotation) < 1e-9);
            assert!((mat3::det(&align.rotation) - 1.0).abs() < 1e-9);
            let resid = mpjpe_p2(&pred, &gt).unwrap();
            assert!(resid < 1e-9, "residual {resid}");
        }
    }

    #[test]
    fn procrustes_on_identical_poses_is_identity() {
        let mut rng = stream(5, Stream::Harness);
        let pose = random_pose(&mut rng, 16, 100.0);
        let t = procrustes_align(&pose, &pose).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-9);
        assert!(mat3::orthonormality_defect(&t.rotation) < 1e-9);
        for (i, &v) in t.rotation.iter().enumerate() {
            let want = if i % 4 == 0 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-9);
        }
        for &v in &t.translation {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn procrustes_beats_random_search() {
        let mut rng = stream(6, Stream::Harness);
        let pred = random_pose(&mut rng, 16, 100.0);
        let gt = random_pose(&mut rng, 16, 100.0);
        let best = procrustes_align(&pred, &gt).unwrap();
        let sq_resid = |t: &SimilarityTransform<f64>| -> f64 {
            pred.iter()
                .zip(&gt)
                .map(|(p, g)| {
                    let a = t.apply(*p);
                    (a[0] - g[0]).powi(2) + (a[1] - g[1]).powi(2) + (a[2] - g[2]).powi(2)
                })
                .sum()
        };
        let best_resid = sq_resid(&best);
        for _ in 0..10_000 {
            let cand = SimilarityTransform {
                rotation: random_rotation(&mut rng),
                scale: 0.1 + uniform::<f64>(&mut rng) * 3.0,
                translation: [
                    normal::<f64>(&mut rng) * 30.0,
                    normal::<f64>(&mut rng) * 30.0,
                    normal::<f64>(&mut rng) * 30.0,
                ],
            };
            assert!(sq_resid(&cand) >= best_resid - 1e-9);
        }
    }

    #[test]
    fn p2_never_exceeds_p1_on_root_centered_pairs() {
        let mut rng = stream(7, Stream::Harness);
        for _ in 0..300 {
            let pred = root_center(&random_pose(&mut rng, 16, 80.0), 0);
            let gt = root_center(&random_pose(&mut rng, 16, 80.0), 0);
            let p1 = mpjpe_p1(&pred, &gt, 0).unwrap();
            let p2 = mpjpe_p2(&pred, &gt).unwrap();
            assert!(p2 <= p1 + 1e-9, "p2 {p2} > p1 {p1}");
        }
    }

    #[test]
    fn p2_matches_a_brute_force_umeyama_with_nalgebra() {
        let mut rng = stream(8, Stream::Harness);
        for _ in 0..100 {
            let pred = random_pose(&mut rng, 10, 60.0);
            let gt = random_pose(&mut rng, 10, 60.0);
            let mine = mpjpe_p2(&pred, &gt).unwrap();

            // Independent implementation on nalgebra types.
            let n = pred.len();
            let to_mat = |p: &[[f64; 3]]| {
                na::Matrix3xX::from_columns(
                    &p.iter().map(|q| na::Vector3::new(q[0], q[1], q[2])).collect::<Vec<_>>(),
                )
            };
            let x = to_mat(&pred);
            let y = to_mat(&gt);
            let mu_x = x.column_mean();
            let mu_y = y.column_mean();
            let xc = x.clone() - na::Matrix3xX::from_columns(&vec![mu_x; n]);
            let yc = y.clone() - na::Matrix3xX::from_columns(&vec![mu_y; n]);
            let sigma = &yc * xc.transpose() / n as f64;
            let var_x = xc.column_iter().map(|c| c.norm_squared()).sum::<f64>() / n as f64;
            let svd = sigma.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut s = na::Matrix3::identity();
            if (u.determinant() * vt.determinant()) < 0.0 {
                s[(2, 2)] = -1.0;
            }
            let r = u * s * vt;
            let scale = (na::Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_x;
            let t = mu_y - scale * r * mu_x;
            let mut total = 0.0;
            for j in 0..n {
                let aligned = scale * r * x.column(j) + t;
                total += (aligned - y.column(j)).norm();
            }
            let oracle = total / n as f64;
            assert!((mine - oracle).abs() < 1e-9, "{mine} vs {oracle}");
        }
    }

    #[test]
    fn p2_is_invariant_to_similarity_transforms_of_pred() {
        let mut rng = stream(9, Stream::Harness);
        let pred = random_pose(&mut rng, 16, 90.0);
        let gt = random_pose(&mut rng, 16, 90.0);
        let base = mpjpe_p2(&pred, &gt).unwrap();
        for _ in 0..20 {
            let t = SimilarityTransform {
                rotation: random_rotation(&mut rng),
                scale: 0.2 + uniform::<f64>(&mut rng) * 5.0,
                translation: [
                    normal::<f64>(&mut rng) * 100.0,
                    normal::<f64>(&mut rng) * 100.0,
                    normal::<f64>(&mut rng) * 100.0,
                ],
            };
            let moved: Vec<[f64; 3]> = pred.iter().map(|p| t.apply(*p)).collect();
            let v = mpjpe_p2(&moved, &gt).unwrap();
            assert!((v - base).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_alignments_are_rejected() {
        // Coincident points.
        let flat = vec![[1.0, 2.0, 3.0]; 5];
        let gt = vec![[0.0, 0.0, 0.0]; 5];
        assert!(matches!(
            procrustes_align(&flat, &gt),
            Err(Error::Degenerate(_))
        ));
        // Collinear points.
        let line: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        let mut rng = stream(10, Stream::Harness);
        let target = random_pose(&mut rng, 5, 10.0);
        assert!(matches!(
            procrustes_align(&line, &target),
            Err(Error::Degenerate(_))
        ));
        // Too few joints.
        let two = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(procrustes_align(&two, &two).is_err());
    }

    #[test]
    fn pck_hand_values_and_limits() {
        // Two joints with errors 100 and 200 mm.
        let preds = vec![vec![[100.0, 0.0, 0.0], [0.0, 200.0, 0.0]]];
        let gts = vec![vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]];
        assert_eq!(pck(&preds, &gts, 150.0).unwrap(), 0.5);
        assert_eq!(pck(&preds, &gts, 0.0).unwrap(), 0.0);
        assert_eq!(pck(&preds, &gts, f64::INFINITY).unwrap(), 1.0);
        // Strictness: an error exactly at the threshold is incorrect.
        assert_eq!(pck(&preds, &gts, 100.0).unwrap(), 0.0);
        assert_eq!(pck(&preds, &gts, 100.0 + 1e-9).unwrap(), 0.5);
    }

    #[test]
    fn auc_hand_value_and_empty_grid() {
        let preds = vec![vec![[100.0, 0.0, 0.0], [0.0, 200.0, 0.0]]];
        let gts = vec![vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]];
        let v: f64 = auc(&preds, &gts, &[0.0, 75.0, 150.0]).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
        assert!(matches!(
            auc(&preds, &gts, &[]),
            Err(Error::Config(_))
        ));
        assert_eq!(default_auc_grid::<f64>().len(), 31);
        assert_eq!(default_auc_grid::<f64>()[30], 150.0);
    }

    #[test]
    fn pck_is_monotone_in_threshold() {
        let mut rng = stream(11, Stream::Harness);
        let preds: Vec<Vec<[f64; 3]>> =
            (0..20).map(|_| random_pose(&mut rng, 16, 100.0)).collect();
        let gts: Vec<Vec<[f64; 3]>> =
            (0..20).map(|_| random_pose(&mut rng, 16, 100.0)).collect();
        let mut last = 0.0;
        for i in 0..40 {
            let v = pck(&preds, &gts, i as f64 * 10.0).unwrap();
            assert!(v >= last);
            last = v;
        }
        let grid: Vec<f64> = (0..=30).map(|i| i as f64 * 5.0).collect();
        let a = auc(&preds, &gts, &grid).unwrap();
        let lo = pck(&preds, &gts, grid[0]).unwrap();
        let hi = pck(&preds, &gts, grid[30]).unwrap();
        assert!(a >= lo && a <= hi);
    }

    fn labeled_sample(action: &str, pose: Vec<[f64; 3]>) -> PoseSample<f64> {
        PoseSample {
            subject: "S1".into(),
            action: action.into(),
            pose2d: pose.iter().map(|p| [p[0], p[1]]).collect(),
            pose3d: Some(pose),
            camera: None,
        }
    }

    #[test]
    fn perfect_predictions_give_zero_error_and_full_pck() {
        let mut rng = stream(12, Stream::Harness);
        let samples: Vec<PoseSample<f64>> = (0..10)
            .map(|i| {
                labeled_sample(
                    if i % 2 == 0 { "walk" } else { "sit" },
                    root_center(&random_pose(&mut rng, 16, 120.0), 0),
                )
            })
            .collect();
        let preds: Vec<Vec<[f64; 3]>> =
            samples.iter().map(|s| s.pose3d.clone().unwrap()).collect();
        let report = report_from_poses(&preds, &samples, &EvalOptions::default()).unwrap();
        assert!(report.mpjpe_p1 < 1e-9);
        assert!(report.mpjpe_p2 < 1e-9);
        assert_eq!(report.pck, 1.0);
        // Threshold 0 in the AUC grid keeps a perfect score below 1.
        assert!((report.auc - 30.0 / 31.0).abs() < 1e-12);
        assert_eq!(report.n_samples, 10);
        assert_eq!(report.per_action.len(), 2);
    }

    #[test]
    fn per_action_rows_average_to_the_overall_value() {
        let mut rng = stream(13, Stream::Harness);
        let samples: Vec<PoseSample<f64>> = (0..30)
            .map(|i| {
                labeled_sample(
                    ["a", "b", "c"][i % 3],
                    root_center(&random_pose(&mut rng, 16, 150.0), 0),
                )
            })
            .collect();
        let preds: Vec<Vec<[f64; 3]>> = (0..30)
            .map(|_| root_center(&random_pose(&mut rng, 16, 150.0), 0))
            .collect();
        let report = report_from_poses(&preds, &samples, &EvalOptions::default()).unwrap();
        let total: usize = report.per_action.values().map(|r| r.count).sum();
        assert_eq!(total, report.n_samples);
        let weighted_p1: f64 = report
            .per_action
            .values()
            .map(|r| r.mpjpe_p1 * r.count as f64)
            .sum::<f64>()
            / total as f64;
        assert!((weighted_p1 - report.mpjpe_p1).abs() < 1e-9);
        let weighted_p2: f64 = report
            .per_action
            .values()
            .map(|r| r.mpjpe_p2 * r.count as f64)
            .sum::<f64>()
            / total as f64;
        assert!((weighted_p2 - report.mpjpe_p2).abs() < 1e-9);
    }

    #[test]
    fn unlabeled_samples_are_rejected() {
        let mut rng = stream(14, Stream::Harness);
        let mut s = labeled_sample("a", root_center(&random_pose(&mut rng, 16, 100.0), 0));
        s.pose3d = None;
        let preds = vec![random_pose(&mut rng, 16, 100.0)];
        let err = report_from_poses(&preds, &[s], &EvalOptions::default()).unwrap_err();
        assert!(err.to_string().contains("unlabeled"), "{err}");
    }

    #[test]
    fn evaluation_through_a_model_is_deterministic() {
        use crate::model::{ArchKind, Model};
        use crate::skeleton::JointSet;
        let mut wrng = stream(15, Stream::Weights);
        let mut model: Model<f64> =
            Model::new(4, 8, 0.5, JointSet::Custom, ArchKind::Full, &mut wrng).unwrap();
        let mut rng = stream(16, Stream::Harness);
        let samples: Vec<PoseSample<f64>> = (0..7)
            .map(|_| {
                let p3 = root_center(&random_pose(&mut rng, 4, 100.0), 0);
                PoseSample {
                    subject: "S1".into(),
                    action: "a".into(),
                    pose2d: p3.iter().map(|p| [p[0], p[1]]).collect(),
                    pose3d: Some(p3),
                    camera: None,
                }
            })
            .collect();
        let norm = crate::data::compute_norm_stats(&samples).unwrap();
        let opts = EvalOptions::default();
        let r1 = evaluate(&mut model, &samples, &norm, &opts).unwrap();
        let r2 = evaluate(&mut model, &samples, &norm, &opts).unwrap();
        assert_eq!(r1.mpjpe_p1, r2.mpjpe_p1);
        assert_eq!(r1.mpjpe_p2, r2.mpjpe_p2);
        assert_eq!(r1.pck, r2.pck);
        assert_eq!(r1.auc, r2.auc);
        assert!(r1.mpjpe_p1.is_finite());
        let json: EvalReport = serde_json::from_str(&serde_json::to_string(&r1).unwrap()).unwrap();
        assert_eq!(json.n_samples, r1.n_samples);
        let table = r1.to_table();
        assert!(table.contains("overall"));
        assert!(table.contains("mpjpe_p1"));
    }
}
