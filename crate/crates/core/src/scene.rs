//! Tabletop world model: objects, workspace, goal composition and the
//! templated scene description.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, obb_overlap, Obb};

/// Wall and floor thickness used for container collision shapes.
pub const CONTAINER_WALL: f64 = 0.01;
/// Margin removed from every box before overlap tests.
pub const CONTACT_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("reading scene file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing scene: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("goal {axis} = {value:.4} outside workspace [{min:.4}, {max:.4}]")]
    OutOfWorkspace {
        axis: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectFlag {
    Graspable,
    Container,
    Obstacle,
    Surface,
}

/// `(x, y, z, roll, pitch, yaw)`, serialized as a six-element array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl From<[f64; 6]> for Pose {
    fn from(a: [f64; 6]) -> Self {
        Pose {
            x: a[0],
            y: a[1],
            z: a[2],
            roll: a[3],
            pitch: a[4],
            yaw: a[5],
        }
    }
}

impl From<Pose> for [f64; 6] {
    fn from(p: Pose) -> Self {
        [p.x, p.y, p.z, p.roll, p.pitch, p.yaw]
    }
}

impl Pose {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    /// Box center in the robot base frame.
    pub position: [f64; 3],
    /// Counter-clockwise angle of the length side from +x.
    pub yaw: f64,
    /// `(length, width, height)`
    pub extents: [f64; 3],
    #[serde(default)]
    pub flags: BTreeSet<ObjectFlag>,
}

impl SceneObject {
    pub fn has(&self, flag: ObjectFlag) -> bool {
        self.flags.contains(&flag)
    }

    pub fn obb(&self) -> Obb {
        Obb::new(self.position, self.extents, self.yaw)
    }

    pub fn top(&self) -> f64 {
        self.position[2] + self.extents[2] / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.position[2] - self.extents[2] / 2.0
    }

    /// Half of the larger horizontal extent.
    pub fn radius(&self) -> f64 {
        self.extents[0].max(self.extents[1]) / 2.0
    }

    /// Boxes used for collision tests. Containers are open-topped: a floor
    /// slab plus four walls.
    pub fn collision_shapes(&self) -> Vec<Obb> {
        if !self.has(ObjectFlag::Container) {
            return vec![self.obb().shrunk(CONTACT_MARGIN)];
        }
        let [l, w, h] = self.extents;
        let t = CONTAINER_WALL.min(l / 4.0).min(w / 4.0).min(h / 2.0);
        let (s, c) = self.yaw.sin_cos();
        let local = |u: f64, v: f64, z: f64| {
            [
                self.position[0] + u * c - v * s,
                self.position[1] + u * s + v * c,
                self.position[2] + z,
            ]
        };
        let shapes = [
            Obb::new(local(0.0, 0.0, -h / 2.0 + t / 2.0), [l, w, t], self.yaw),
            Obb::new(local(l / 2.0 - t / 2.0, 0.0, 0.0), [t, w, h], self.yaw),
            Obb::new(local(-l / 2.0 + t / 2.0, 0.0, 0.0), [t, w, h], self.yaw),
            Obb::new(local(0.0, w / 2.0 - t / 2.0, 0.0), [l, t, h], self.yaw),
            Obb::new(local(0.0, -w / 2.0 + t / 2.0, 0.0), [l, t, h], self.yaw),
        ];
        shapes.into_iter().map(|b| b.shrunk(CONTACT_MARGIN)).collect()
    }

    /// Footprint inside the walls and the height of the floor top.
    pub fn container_interior(&self) -> Option<(Obb, f64)> {
        if !self.has(ObjectFlag::Container) {
            return None;
        }
        let [l, w, h] = self.extents;
        let t = CONTAINER_WALL.min(l / 4.0).min(w / 4.0).min(h / 2.0);
        let inner = Obb::new(self.position, [l - 2.0 * t, w - 2.0 * t, h], self.yaw);
        Some((inner, self.bottom() + t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Workspace {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }

    pub fn check(&self, p: [f64; 3]) -> Result<(), SceneError> {
        const AXES: [&str; 3] = ["x", "y", "z"];
        for i in 0..3 {
            if p[i] < self.min[i] - 1e-9 || p[i] > self.max[i] + 1e-9 {
                return Err(SceneError::OutOfWorkspace {
                    axis: AXES[i],
                    value: p[i],
                    min: self.min[i],
                    max: self.max[i],
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub table_height: f64,
    pub workspace: Workspace,
    pub ee_home: Pose,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn object(&self, label: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.label == label)
    }

    pub fn object_mut(&mut self, label: &str) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.label == label)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |m: String| Err(SceneError::Invalid(m));
        let mut seen = HashSet::new();
        for o in &self.objects {
            if o.label.trim().is_empty() {
                return invalid("object with empty label".into());
            }
            if !seen.insert(o.label.as_str()) {
                return invalid(format!("duplicate label {:?}", o.label));
            }
            if o.extents.iter().any(|e| e.is_nan() || *e <= 0.0) {
                return invalid(format!("{}: extents must be positive", o.label));
            }
            if !self.workspace.contains(o.position) {
                return invalid(format!("{}: position outside workspace", o.label));
            }
            if o.bottom() < self.table_height - 1e-9 {
                return invalid(format!("{}: below the table", o.label));
            }
        }
        if !self.workspace.contains(self.ee_home.position()) {
            return invalid("ee_home outside workspace".into());
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                let hit = a
                    .collision_shapes()
                    .iter()
                    .any(|sa| b.collision_shapes().iter().any(|sb| obb_overlap(sa, sb)));
                if hit {
                    return invalid(format!("{} and {} interpenetrate", a.label, b.label));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPose {
    pub pose: Pose,
}

/// Goal at the target's xy, raised by `delta_z`, yawed by `delta_yaw`, with
/// roll and pitch pinned to the end-effector's start orientation.
pub fn compose_goal(
    target: &SceneObject,
    delta_z: f64,
    delta_yaw: f64,
    fixed_rp: (f64, f64),
    workspace: &Workspace,
) -> Result<GoalPose, SceneError> {
    let [x, y, z] = target.position;
    let pose = Pose {
        x,
        y,
        z: z + delta_z,
        roll: fixed_rp.0,
        pitch: fixed_rp.1,
        yaw: normalize_angle(target.yaw + delta_yaw),
    };
    workspace.check(pose.position())?;
    Ok(GoalPose { pose })
}

/// Three-decimal formatting without a negative zero.
pub fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

pub fn describe_scene(scene: &Scene) -> String {
    if scene.objects.is_empty() {
        return "the table is empty.".into();
    }
    let mut objs: Vec<&SceneObject> = scene.objects.iter().collect();
    objs.sort_by(|a, b| a.label.cmp(&b.label));
    objs.iter()
        .map(|o| {
            format!(
                "there is a {} located at ({}, {}, {}) and oriented with yaw {} rad.",
                o.label,
                fmt3(o.position[0]),
                fmt3(o.position[1]),
                fmt3(o.position[2]),
                fmt3(o.yaw)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    pub(crate) fn object(label: &str, position: [f64; 3], yaw: f64, extents: [f64; 3]) -> SceneObject {
        SceneObject {
            label: label.into(),
            position,
            yaw,
            extents,
            flags: [ObjectFlag::Graspable].into_iter().collect(),
        }
    }

    fn workspace() -> Workspace {
        Workspace {
            min: [0.0, -0.5, 0.0],
            max: [0.9, 0.5, 0.6],
        }
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene {
            table_height: 0.0,
            workspace: workspace(),
            ee_home: Pose::from([0.4, 0.0, 0.4, PI, 0.0, 0.0]),
            objects,
        }
    }

    #[test]
    fn compose_goal_examples() {
        let sponge = object("sponge", [0.4, -0.1, 0.02], 0.3, [0.1, 0.06, 0.04]);
        let g = compose_goal(&sponge, 0.15, FRAC_PI_2, (PI, 0.0), &workspace()).unwrap();
        assert_eq!((g.pose.x, g.pose.y), (0.4, -0.1));
        assert!((g.pose.z - 0.17).abs() < 1e-12);
        assert!((g.pose.yaw - 1.8708).abs() < 1e-4);
        assert_eq!((g.pose.roll, g.pose.pitch), (PI, 0.0));

        let g = compose_goal(&sponge, 0.0, 0.0, (PI, 0.0), &workspace()).unwrap();
        assert_eq!(g.pose.position(), sponge.position);
        assert_eq!(g.pose.yaw, 0.3);

        let g = compose_goal(&sponge, 0.0, TAU, (PI, 0.0), &workspace()).unwrap();
        assert!((g.pose.yaw - 0.3).abs() < 1e-12);

        let err = compose_goal(&sponge, 1.0, 0.0, (PI, 0.0), &workspace()).unwrap_err();
        assert!(matches!(err, SceneError::OutOfWorkspace { axis: "z", .. }));
    }

    #[test]
    fn describe_scene_examples() {
        let sponge = object("sponge", [0.40, -0.10, 0.02], 0.30, [0.1, 0.06, 0.04]);
        assert_eq!(
            describe_scene(&scene(vec![sponge.clone()])),
            "there is a sponge located at (0.400, -0.100, 0.020) and oriented with yaw 0.300 rad."
        );
        assert_eq!(describe_scene(&scene(vec![])), "the table is empty.");
        let apple = object("apple", [0.6, 0.2, 0.035], -0.0001, [0.07, 0.07, 0.07]);
        let text = describe_scene(&scene(vec![sponge, apple]));
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("there is a apple"));
        assert!(lines[0].ends_with("yaw 0.000 rad."));
        assert!(lines[1].starts_with("there is a sponge"));
    }

    #[test]
    fn validation_rejects_bad_scenes() {
        let a = object("a", [0.4, 0.0, 0.02], 0.0, [0.1, 0.1, 0.04]);
        assert!(scene(vec![a.clone()]).validate().is_ok());
        assert!(scene(vec![a.clone(), a.clone()]).validate().is_err());
        let mut b = a.clone();
        b.label = "b".into();
        b.position[0] = 0.45;
        assert!(scene(vec![a.clone(), b.clone()]).validate().is_err());
        b.position[0] = 0.5;
        assert!(scene(vec![a.clone(), b]).validate().is_ok());
        let mut flat = a.clone();
        flat.extents[2] = 0.0;
        assert!(scene(vec![flat]).validate().is_err());
        let mut sunk = a;
        sunk.position[2] = 0.0;
        assert!(scene(vec![sunk]).validate().is_err());
    }

    #[test]
    fn object_inside_container_is_not_interpenetration() {
        let mut bowl = object("bowl", [0.5, 0.0, 0.03], 0.0, [0.16, 0.16, 0.06]);
        bowl.flags = [ObjectFlag::Container].into_iter().collect();
        let apple = object("apple", [0.5, 0.0, 0.045], 0.0, [0.07, 0.07, 0.07]);
        assert!(scene(vec![bowl, apple]).validate().is_ok());
    }

    #[test]
    fn scene_file_roundtrip() {
        let text = r#"{
            "table_height": 0.0,
            "workspace": {"min": [0.0, -0.5, 0.0], "max": [0.9, 0.5, 0.6]},
            "ee_home": [0.4, 0.0, 0.4, 3.14159, 0.0, 0.0],
            "objects": [{"label": "sponge", "position": [0.4, -0.1, 0.02], "yaw": 0.3,
                         "extents": [0.1, 0.06, 0.04], "flags": ["graspable"]}]
        }"#;
        let s = Scene::from_json(text).unwrap();
        assert_eq!(s.objects[0].label, "sponge");
        let again = Scene::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn yaw_normalization_range() {
        let w = Workspace {
            min: [-1.0; 3],
            max: [1.0; 3],
        };
        let o = object("o", [0.0, 0.0, 0.0], 0.0, [0.1; 3]);
        for k in -50..50 {
            let g = compose_goal(&o, 0.0, k as f64 * 0.37, (0.0, 0.0), &w).unwrap();
            assert!(g.pose.yaw > -PI && g.pose.yaw <= PI);
        }
    }
}
