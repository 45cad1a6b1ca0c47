//! Synthetic pose generation: forward kinematics on a skeleton, pinhole
//! projection from a ring of cameras, and action-clustered datasets with
//! exact 2D-3D-camera consistency.

use crate::data::{Camera, PoseSample};
use crate::error::{Error, Result};
use crate::mat3::{self, Mat3};
use crate::rng::{normal, uniform, Rng};
use crate::scalar::{real, Real};
use crate::skeleton::Skeleton;

/// Place each joint by composing local rotations down the parent chain and
/// walking the rest-pose bone offsets. The root sits at the origin; its
/// rotation orients the whole body.
pub fn forward_kinematics<R: Real>(
    skeleton: &Skeleton<R>,
    rotations: &[Mat3<R>],
) -> Result<Vec<[R; 3]>> {
    let n = skeleton.n_joints();
    if rotations.len() != n {
        return Err(Error::shape(
            "forward_kinematics",
            format!("{n} rotations"),
            format!("{} rotations", rotations.len()),
        ));
    }
    for (j, r) in rotations.iter().enumerate() {
        let defect = mat3::orthonormality_defect(r);
        if defect > real(1e-9) {
            return Err(Error::Degenerate(format!(
                "rotation of joint {j} is not orthonormal (defect {defect})"
            )));
        }
    }
    let dirs = skeleton.rest_directions.as_ref().ok_or_else(|| {
        Error::Config("skeleton has no rest directions; synthesis needs them".into())
    })?;

    let mut global = vec![mat3::identity::<R>(); n];
    let mut pos = vec![[R::zero(); 3]; n];
    for j in skeleton.topo_order() {
        match skeleton.parents[j] {
            None => {
                global[j] = rotations[j];
            }
            Some(p) => {
                global[j] = mat3::mul(&global[p], &rotations[j]);
                let len = skeleton.bone_lengths[j];
                let d = dirs[j];
                let offset = mat3::apply(&global[j], [d[0] * len, d[1] * len, d[2] * len]);
                pos[j] = [
                    pos[p][0] + offset[0],
                    pos[p][1] + offset[1],
                    pos[p][2] + offset[2],
                ];
            }
        }
    }
    Ok(pos)
}

/// Project world-frame joints through a camera. Every joint must sit in
/// front of the camera.
pub fn project_pinhole<R: Real>(pose3d: &[[R; 3]], camera: &Camera<R>) -> Result<Vec<[R; 2]>> {
    camera.validate()?;
    let mut out = Vec::with_capacity(pose3d.len());
    for (j, &p) in pose3d.iter().enumerate() {
        let c = camera.to_camera(p);
        if c[2] <= R::zero() {
            return Err(Error::Degenerate(format!(
                "joint {j} has nonpositive camera depth {}",
                c[2]
            )));
        }
        out.push([camera.focal * c[0] / c[2], camera.focal * c[1] / c[2]]);
    }
    Ok(out)
}

/// Knobs for `synth_dataset`. Angles are degrees; distances millimeters.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    pub n_actions: usize,
    pub n_subjects: usize,
    /// Max rotation of each action's base pose away from rest.
    pub base_angle_deg: f64,
    /// Max per-sample rotation away from the action base pose.
    pub jitter_deg: f64,
    pub focal: f64,
    pub min_dist_mm: f64,
    pub max_dist_mm: f64,
    pub max_elev_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 0,
            n_actions: 8,
            n_subjects: 5,
            base_angle_deg: 40.0,
            jitter_deg: 20.0,
            focal: 1000.0,
            min_dist_mm: 4000.0,
            max_dist_mm: 6000.0,
            max_elev_deg: 15.0,
        }
    }
}

fn random_rotation<R: Real>(rng: &mut Rng, max_angle_rad: R) -> Mat3<R> {
    let axis = loop {
        let v = [normal::<R>(rng), normal::<R>(rng), normal::<R>(rng)];
        if let Some(u) = mat3::normalize3(v) {
            break u;
        }
    };
    let angle = (uniform::<R>(rng) * real(2.0) - R::one()) * max_angle_rad;
    mat3::axis_angle(axis, angle)
}

/// World-to-camera look-at rotation for a camera at `eye` watching the
/// origin, with world +y as up.
fn look_at<R: Real>(eye: [R; 3]) -> Result<(Mat3<R>, [R; 3])> {
    let fwd = mat3::normalize3([-eye[0], -eye[1], -eye[2]])
        .ok_or_else(|| Error::Degenerate("camera at the origin".into()))?;
    let up = [R::zero(), R::one(), R::zero()];
    let right = mat3::normalize3(mat3::cross(up, fwd))
        .ok_or_else(|| Error::Degenerate("camera looking straight up or down".into()))?;
    let down = mat3::cross(fwd, right);
    let rotation = [
        right[0], right[1], right[2], //
        down[0], down[1], down[2], //
        fwd[0], fwd[1], fwd[2],
    ];
    // t = -R eye puts the eye at the camera-frame origin.
    let re = mat3::apply(&rotation, eye);
    Ok((rotation, [-re[0], -re[1], -re[2]]))
}

/// Generate `cfg.n` fully labeled samples. Poses cluster into
/// `cfg.n_actions` named actions (a fixed base pose per action plus
/// per-sample jitter); cameras sit on an azimuth ring around the subject.
/// Stored 3D poses are root-relative camera-frame millimeters, and each
/// sample's camera replays its 2D exactly:
/// `project_pinhole(pose3d, camera) == pose2d`.
pub fn synth_dataset<R: Real>(
    skeleton: &Skeleton<R>,
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> Result<Vec<PoseSample<R>>> {
    skeleton.validate()?;
    if cfg.n_actions == 0 || cfg.n_subjects == 0 {
        return Err(Error::Config(
            "synthesis needs at least one action and one subject".into(),
        ));
    }
    if !(cfg.min_dist_mm > 0.0 && cfg.max_dist_mm >= cfg.min_dist_mm) {
        return Err(Error::Config(format!(
            "camera distance range [{}, {}] is invalid",
            cfg.min_dist_mm, cfg.max_dist_mm
        )));
    }
    let n_joints = skeleton.n_joints();
    let deg = std::f64::consts::PI / 180.0;
    let base_rad = real::<R>(cfg.base_angle_deg * deg);
    let jitter_rad = real::<R>(cfg.jitter_deg * deg);

    // One base pose per action, drawn up front so the action vocabulary
    // does not depend on n.
    let bases: Vec<Vec<Mat3<R>>> = (0..cfg.n_actions)
        .map(|_| {
            (0..n_joints)
                .map(|_| random_rotation(rng, base_rad))
                .collect()
        })
        .collect();

    let mut samples = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let action_id = i % cfg.n_actions;
        let mut placed = false;
        for _attempt in 0..100 {
            let rotations: Vec<Mat3<R>> = bases[action_id]
                .iter()
                .map(|b| mat3::mul(b, &random_rotation(rng, jitter_rad)))
                .collect();
            let world = forward_kinematics(skeleton, &rotations)?;

            let azim = real::<R>(uniform::<f64>(rng) * 360.0 * deg);
            let elev = real::<R>((uniform::<f64>(rng) * 2.0 - 1.0) * cfg.max_elev_deg * deg);
            let dist =
                real::<R>(cfg.min_dist_mm + uniform::<f64>(rng) * (cfg.max_dist_mm - cfg.min_dist_mm));
            let eye = [
                dist * elev.cos() * azim.sin(),
                dist * elev.sin(),
                dist * elev.cos() * azim.cos(),
            ];
            let (rotation, translation) = look_at(eye)?;
            let world_cam = Camera {
                focal: real(cfg.focal),
                rotation,
                translation,
            };
            let pose2d = match project_pinhole(&world, &world_cam) {
                Ok(p) => p,
                Err(_) => continue, // behind the camera; redraw pose and camera
            };

            // Store camera-frame joints relative to the root, and fold the
            // camera into one that reproduces the projection from exactly
            // those coordinates: identity rotation, translation = camera
            // position of the root.
            let cam_joints: Vec<[R; 3]> = world.iter().map(|&p| world_cam.to_camera(p)).collect();
            let root_cam = cam_joints[skeleton.root];
            let pose3d: Vec<[R; 3]> = cam_joints
                .iter()
                .map(|p| [p[0] - root_cam[0], p[1] - root_cam[1], p[2] - root_cam[2]])
                .collect();
            let camera = Camera {
                focal: real(cfg.focal),
                rotation: mat3::identity(),
                translation: root_cam,
            };
            samples.push(PoseSample {
                subject: format!("S{}", 1 + i % cfg.n_subjects),
                action: format!("act{action_id:02}"),
                pose2d,
                pose3d: Some(pose3d),
                camera: Some(camera),
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Degenerate(format!(
                "sample {i}: no camera with all joints in front after 100 draws \
                 (distances {}..{} mm)",
                cfg.min_dist_mm, cfg.max_dist_mm
            )));
        }
    }
    Ok(samples)
}

/// Drop the 3D labels and cameras from a slice of samples (for building
/// unlabeled pools out of synthetic data).
pub fn strip_labels<R: Real>(samples: &[PoseSample<R>]) -> Vec<PoseSample<R>> {
    samples
        .iter()
        .map(|s| PoseSample {
            subject: s.subject.clone(),
            action: s.action.clone(),
            pose2d: s.pose2d.clone(),
            pose3d: None,
            camera: None,
        })
        .collect()
}
