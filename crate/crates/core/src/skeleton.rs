//! Kinematic trees: joint topology, bone lengths, and rest directions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, to_f64, Real};

/// Which joint layout a model was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointSet {
    H36m16,
    H36m17,
    Custom,
}

impl JointSet {
    pub fn code(self) -> u8 {
        match self {
            JointSet::H36m16 => 0,
            JointSet::H36m17 => 1,
            JointSet::Custom => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(JointSet::H36m16),
            1 => Ok(JointSet::H36m17),
            2 => Ok(JointSet::Custom),
            other => Err(Error::Checkpoint(format!("unknown joint set code {other}"))),
        }
    }
}

/// A rooted kinematic tree. Per-joint arrays are indexed by joint id; the
/// root's bone length is zero and its rest direction is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<R: Real> {
    pub joint_names: Vec<String>,
    /// Parent joint of each joint; `None` exactly at the root.
    pub parents: Vec<Option<usize>>,
    pub root: usize,
    /// Length of the bone from the parent, in millimeters.
    pub bone_lengths: Vec<R>,
    /// Unit direction of each bone from its parent in the rest pose, when
    /// the skeleton carries one (synthesis needs it; metrics do not).
    pub rest_directions: Option<Vec<[R; 3]>>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    joint_names: Vec<String>,
    parents: Vec<i64>,
    root_index: usize,
    bone_lengths: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rest_directions: Option<Vec<[f64; 3]>>,
}

impl<R: Real> Skeleton<R> {
    pub fn n_joints(&self) -> usize {
        self.joint_names.len()
    }

    /// Joint ids ordered parents-before-children, starting at the root.
    pub fn topo_order(&self) -> Vec<usize> {
        let n = self.n_joints();
        let mut order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        order.push(self.root);
        placed[self.root] = true;
        while order.len() < n {
            let before = order.len();
            for j in 0..n {
                if !placed[j] {
                    if let Some(p) = self.parents[j] {
                        if placed[p] {
                            order.push(j);
                            placed[j] = true;
                        }
                    }
                }
            }
            assert!(order.len() > before, "validate() rejects disconnected trees");
        }
        order
    }

    /// Check the tree structure and per-joint arrays.
    pub fn validate(&self) -> Result<()> {
        let n = self.joint_names.len();
        if n == 0 {
            return Err(Error::Config("skeleton has no joints".into()));
        }
        for (label, len) in [
            ("parents", self.parents.len()),
            ("bone_lengths", self.bone_lengths.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!(
                    "skeleton {label} has {len} entries for {n} joints"
                )));
            }
        }
        if let Some(dirs) = &self.rest_directions {
            if dirs.len() != n {
                return Err(Error::Config(format!(
                    "skeleton rest_directions has {} entries for {n} joints",
                    dirs.len()
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.joint_names {
            if name.is_empty() || !seen.insert(name) {
                return Err(Error::Config(format!(
                    "joint names must be unique and non-empty, offending name {name:?}"
                )));
            }
        }
        if self.root >= n || self.parents[self.root].is_some() {
            return Err(Error::Config(format!(
                "root joint {} must exist and have no parent",
                self.root
            )));
        }
        for (j, p) in self.parents.iter().enumerate() {
            match p {
                None if j != self.root => {
                    return Err(Error::Config(format!(
                        "joint {j} has no parent but is not the root"
                    )))
                }
                Some(p) if *p >= n => {
                    return Err(Error::Config(format!(
                        "joint {j} has out-of-range parent {p}"
                    )))
                }
                _ => {}
            }
        }
        // Every joint must reach the root without cycles.
        for j in 0..n {
            let mut cur = j;
            let mut hops = 0;
            while let Some(p) = self.parents[cur] {
                cur = p;
                hops += 1;
                if hops > n {
                    return Err(Error::Config(format!(
                        "parent chain of joint {j} cycles"
                    )));
                }
            }
            if cur != self.root {
                return Err(Error::Config(format!(
                    "joint {j} is not connected to the root"
                )));
            }
        }
        for j in 0..n {
            if j == self.root {
                continue;
            }
            if self.bone_lengths[j] <= R::zero() {
                return Err(Error::Config(format!(
                    "bone length of joint {j} must be positive, got {}",
                    self.bone_lengths[j]
                )));
            }
            if let Some(dirs) = &self.rest_directions {
                let d = dirs[j];
                let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if (norm - R::one()).abs() > real(1e-6) {
                    return Err(Error::Config(format!(
                        "rest direction of joint {j} must be unit length, got norm {norm}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: SkeletonFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        let n = file.joint_names.len();
        if file.parents.len() != n {
            return Err(Error::Config(format!(
                "skeleton file has {} parents for {n} joints",
                file.parents.len()
            )));
        }
        let mut parents = Vec::with_capacity(n);
        for (j, &p) in file.parents.iter().enumerate() {
            parents.push(match p {
                -1 => None,
                p if p >= 0 && (p as usize) < n => Some(p as usize),
                p => {
                    return Err(Error::Config(format!(
                        "joint {j} has invalid parent index {p}"
                    )))
                }
            });
        }
        let skeleton = Skeleton {
            joint_names: file.joint_names,
            parents,
            root: file.root_index,
            bone_lengths: file.bone_lengths.iter().map(|&v| real(v)).collect(),
            rest_directions: file.rest_directions.map(|dirs| {
                dirs.iter()
                    .map(|d| [real(d[0]), real(d[1]), real(d[2])])
                    .collect()
            }),
        };
        skeleton.validate()?;
        Ok(skeleton)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let file = SkeletonFile {
            joint_names: self.joint_names.clone(),
            parents: self
                .parents
                .iter()
                .map(|p| p.map_or(-1, |v| v as i64))
                .collect(),
            root_index: self.root,
            bone_lengths: self.bone_lengths.iter().map(|&v| to_f64(v)).collect(),
            rest_directions: self.rest_directions.as_ref().map(|dirs| {
                dirs.iter()
                    .map(|d| [to_f64(d[0]), to_f64(d[1]), to_f64(d[2])])
                    .collect()
            }),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// 16-joint layout: pelvis root, two legs, spine-thorax-head column,
    /// and two arms hanging off the thorax.
    pub fn h36m16() -> Self {
        let table: [(&str, i64, f64, [f64; 3]); 16] = [
            ("hip", -1, 0.0, [0.0, 0.0, 0.0]),
            ("r_hip", 0, 130.0, [-1.0, 0.0, 0.0]),
            ("r_knee", 1, 450.0, [0.0, -1.0, 0.0]),
            ("r_ankle", 2, 450.0, [0.0, -1.0, 0.0]),
            ("l_hip", 0, 130.0, [1.0, 0.0, 0.0]),
            ("l_knee", 4, 450.0, [0.0, -1.0, 0.0]),
            ("l_ankle", 5, 450.0, [0.0, -1.0, 0.0]),
            ("spine", 0, 230.0, [0.0, 1.0, 0.0]),
            ("thorax", 7, 260.0, [0.0, 1.0, 0.0]),
            ("head", 8, 180.0, [0.0, 1.0, 0.0]),
            ("l_shoulder", 8, 160.0, [1.0, 0.0, 0.0]),
            ("l_elbow", 10, 280.0, [1.0, 0.0, 0.0]),
            ("l_wrist", 11, 250.0, [1.0, 0.0, 0.0]),
            ("r_shoulder", 8, 160.0, [-1.0, 0.0, 0.0]),
            ("r_elbow", 13, 280.0, [-1.0, 0.0, 0.0]),
            ("r_wrist", 14, 250.0, [-1.0, 0.0, 0.0]),
        ];
        Self::from_table(&table)
    }

    /// 17-joint layout: the 16-joint layout with a nose joint between the
    /// thorax and the head.
    pub fn h36m17() -> Self {
        let f = std::f64::consts::FRAC_1_SQRT_2;
        let table: [(&str, i64, f64, [f64; 3]); 17] = [
            ("hip", -1, 0.0, [0.0, 0.0, 0.0]),
            ("r_hip", 0, 130.0, [-1.0, 0.0, 0.0]),
            ("r_knee", 1, 450.0, [0.0, -1.0, 0.0]),
            ("r_ankle", 2, 450.0, [0.0, -1.0, 0.0]),
            ("l_hip", 0, 130.0, [1.0, 0.0, 0.0]),
            ("l_knee", 4, 450.0, [0.0, -1.0, 0.0]),
            ("l_ankle", 5, 450.0, [0.0, -1.0, 0.0]),
            ("spine", 0, 230.0, [0.0, 1.0, 0.0]),
            ("thorax", 7, 260.0, [0.0, 1.0, 0.0]),
            ("nose", 8, 140.0, [0.0, f, f]),
            ("head", 9, 110.0, [0.0, f, -f]),
            ("l_shoulder", 8, 160.0, [1.0, 0.0, 0.0]),
            ("l_elbow", 11, 280.0, [1.0, 0.0, 0.0]),
            ("l_wrist", 12, 250.0, [1.0, 0.0, 0.0]),
            ("r_shoulder", 8, 160.0, [-1.0, 0.0, 0.0]),
            ("r_elbow", 14, 280.0, [-1.0, 0.0, 0.0]),
            ("r_wrist", 15, 250.0, [-1.0, 0.0, 0.0]),
        ];
        Self::from_table(&table)
    }

    pub fn builtin(set: JointSet) -> Result<Self> {
        match set {
            JointSet::H36m16 => Ok(Self::h36m16()),
            JointSet::H36m17 => Ok(Self::h36m17()),
            JointSet::Custom => Err(Error::Config(
                "custom joint sets need an explicit skeleton file".into(),
            )),
        }
    }

    fn from_table(table: &[(&str, i64, f64, [f64; 3])]) -> Self {
        let skeleton = Skeleton {
            joint_names: table.iter().map(|r| r.0.to_string()).collect(),
            parents: table
                .iter()
                .map(|r| if r.1 < 0 { None } else { Some(r.1 as usize) })
                .collect(),
            root: table.iter().position(|r| r.1 < 0).expect("a root row"),
            bone_lengths: table.iter().map(|r| real(r.2)).collect(),
            rest_directions: Some(
                table
                    .iter()
                    .map(|r| [real(r.3[0]), real(r.3[1]), real(r.3[2])])
                    .collect(),
            ),
        };
        skeleton.validate().expect("built-in skeletons are valid");
        skeleton
    }
}
