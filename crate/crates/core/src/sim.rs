//! Kinematic tabletop simulator.
//!
//! The end-effector tracks reference samples exactly. Grasps happen on the
//! closing edge of the gripper command, releases on the opening edge, and
//! contacts between the moving bodies (palm plus any held object) and the
//! rest of the scene are detected with swept boxes between consecutive
//! samples. Collisions are recorded, never resolved.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmp::{Dof, Trajectory, TrajectorySample};
use crate::geometry::{footprints_overlap, gjk_intersect, normalize_angle, Obb, SweptObb};
use crate::scene::{ObjectFlag, Pose, Scene, SceneError, CONTACT_MARGIN};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trajectory starts at {got:?}, end-effector is at {expected:?}")]
    StartMismatch { expected: [f64; 4], got: [f64; 4] },
    #[error("cannot evaluate subtask template {0}")]
    UnknownTemplate(String),
    #[error("unknown object {0}")]
    UnknownObject(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub grasp_xy_tolerance: f64,
    /// Object top may sit this far below the TCP.
    pub grasp_below: f64,
    /// Object top may sit this far above the TCP.
    pub grasp_above: f64,
    pub grasp_alignment: f64,
    pub elongation_ratio: f64,
    pub gripper_threshold: f64,
    /// Palm box `(along yaw, along closing direction, height)`.
    pub palm_extents: [f64; 3],
    /// Gap between the TCP and the bottom of the palm box.
    pub palm_offset: f64,
    pub start_tolerance: f64,
    pub carry_xy_tolerance: f64,
    pub wipe_coverage_deg: f64,
    pub wipe_radius_factor: f64,
    /// Samples closer than this fraction of the target radius carry no angle.
    pub wipe_inner_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grasp_xy_tolerance: 0.03,
            grasp_below: 0.05,
            grasp_above: 0.02,
            grasp_alignment: FRAC_PI_4,
            elongation_ratio: 1.5,
            gripper_threshold: 0.5,
            palm_extents: [0.04, 0.08, 0.10],
            palm_offset: 0.04,
            start_tolerance: 1e-6,
            carry_xy_tolerance: 0.05,
            wipe_coverage_deg: 270.0,
            wipe_radius_factor: 1.5,
            wipe_inner_factor: 0.1,
        }
    }
}

/// Pose of a held object relative to the TCP, expressed in the TCP yaw frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub label: String,
    pub offset: [f64; 3],
    pub yaw_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub scene: Scene,
    pub ee_pose: Pose,
    pub gripper_closed: bool,
    pub held: Option<Grasp>,
    pub time: f64,
}

impl SimState {
    pub fn new(scene: Scene) -> Self {
        let ee_pose = scene.ee_home;
        Self {
            scene,
            ee_pose,
            gripper_closed: false,
            held: None,
            time: 0.0,
        }
    }

    pub fn held_label(&self) -> Option<&str> {
        self.held.as_ref().map(|g| g.label.as_str())
    }

    /// Gripper DOF value matching the current command.
    pub fn gripper_value(&self) -> f64 {
        if self.gripper_closed {
            1.0
        } else {
            0.0
        }
    }

    fn place_held(&mut self) {
        let Some(grasp) = self.held.clone() else { return };
        let ee = self.ee_pose;
        let (s, c) = ee.yaw.sin_cos();
        let [u, v, w] = grasp.offset;
        if let Some(obj) = self.scene.object_mut(&grasp.label) {
            obj.position = [ee.x + u * c - v * s, ee.y + u * s + v * c, ee.z + w];
            obj.yaw = normalize_angle(ee.yaw + grasp.yaw_offset);
        }
    }

    /// Boxes that move with the end-effector.
    pub fn moving_shapes(&self, config: &SimConfig) -> Vec<Obb> {
        let ee = self.ee_pose;
        let [_, _, h] = config.palm_extents;
        let palm = Obb::new(
            [ee.x, ee.y, ee.z + config.palm_offset + h / 2.0],
            config.palm_extents,
            ee.yaw,
        )
        .shrunk(CONTACT_MARGIN);
        let mut shapes = vec![palm];
        if let Some(obj) = self.held_label().and_then(|l| self.scene.object(l)) {
            shapes.extend(obj.collision_shapes());
        }
        shapes
    }

    /// Static shapes of every object not currently held, tagged by label.
    pub fn static_shapes(&self) -> Vec<(String, Vec<Obb>)> {
        let held = self.held_label();
        self.scene
            .objects
            .iter()
            .filter(|o| Some(o.label.as_str()) != held)
            .map(|o| (o.label.clone(), o.collision_shapes()))
            .collect()
    }

    /// Labels currently in contact with the moving bodies (static check).
    pub fn contacts_now(&self, config: &SimConfig) -> BTreeSet<String> {
        let moving = self.moving_shapes(config);
        self.static_shapes()
            .into_iter()
            .filter(|(_, shapes)| {
                shapes
                    .iter()
                    .any(|s| moving.iter().any(|m| crate::geometry::obb_overlap(m, s)))
            })
            .map(|(l, _)| l)
            .collect()
    }

    /// Move the end-effector (and held object) to a sample's pose.
    pub fn set_ee_from_sample(&mut self, sample: &TrajectorySample) {
        self.ee_pose.x = sample.pose[Dof::X.index()];
        self.ee_pose.y = sample.pose[Dof::Y.index()];
        self.ee_pose.z = sample.pose[Dof::Z.index()];
        self.ee_pose.yaw = sample.pose[Dof::Yaw.index()];
        self.place_held();
    }
}

/// Immutable copy of the simulator state taken at a subtask boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    state: SimState,
}

pub fn snapshot(state: &SimState) -> Snapshot {
    Snapshot {
        state: state.clone(),
    }
}

pub fn restore(snapshot: &Snapshot) -> SimState {
    snapshot.state.clone()
}

impl Snapshot {
    pub fn state(&self) -> &SimState {
        &self.state
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "snake_case")]
pub enum Support {
    Table,
    Object(String),
    Container(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    GraspAttempt,
    GraspSuccess { label: String },
    Release { label: String, support: Support },
    Collision { with_label: String },
    GoalReached,
    OutOfWorkspace { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub sample: usize,
    pub time: f64,
    pub phase: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub events: Vec<Event>,
    pub executed: Trajectory,
    pub final_state: SimState,
    pub out_of_workspace: bool,
}

impl ExecutionReport {
    pub fn collisions(&self) -> impl Iterator<Item = (&str, f64)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Collision { with_label } => Some((with_label.as_str(), e.phase)),
            _ => None,
        })
    }

    pub fn grasped(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match &e.kind {
            EventKind::GraspSuccess { label } => Some(label.as_str()),
            _ => None,
        })
    }

    pub fn release_of(&self, label: &str) -> Option<&Support> {
        self.events.iter().find_map(|e| match &e.kind {
            EventKind::Release { label: l, support } if l == label => Some(support),
            _ => None,
        })
    }
}

/// Graspable object under the TCP whose geometry admits a grasp with the
/// gripper closing across `commanded_yaw`.
pub fn check_grasp(state: &SimState, commanded_yaw: f64, config: &SimConfig) -> Option<String> {
    let ee = state.ee_pose;
    // closing direction of the jaws
    let closing = (-commanded_yaw.sin(), commanded_yaw.cos());
    let held = state.held_label();
    let mut best: Option<(f64, &str)> = None;
    for obj in &state.scene.objects {
        if !obj.has(ObjectFlag::Graspable) || Some(obj.label.as_str()) == held {
            continue;
        }
        let dxy = (obj.position[0] - ee.x).hypot(obj.position[1] - ee.y);
        if dxy > config.grasp_xy_tolerance {
            continue;
        }
        let top = obj.top();
        if top < ee.z - config.grasp_below || top > ee.z + config.grasp_above {
            continue;
        }
        let [l, w, _] = obj.extents;
        if l.max(w) / l.min(w) >= config.elongation_ratio {
            let (s, c) = obj.yaw.sin_cos();
            let minor = if l >= w { (-s, c) } else { (c, s) };
            let cos = (minor.0 * closing.0 + minor.1 * closing.1).abs().min(1.0);
            if cos.acos() > config.grasp_alignment + 1e-12 {
                continue;
            }
        }
        let better = match best {
            None => true,
            Some((d, label)) => dxy < d || (dxy == d && obj.label.as_str() < label),
        };
        if better {
            best = Some((dxy, obj.label.as_str()));
        }
    }
    best.map(|(_, l)| l.to_string())
}

/// Drop an object straight down onto the highest support beneath it.
pub fn settle(scene: &mut Scene, label: &str) -> Result<Support, SimError> {
    let obj = scene
        .object(label)
        .ok_or_else(|| SimError::UnknownObject(label.to_string()))?
        .clone();
    let footprint = obj.obb();
    let bottom = obj.bottom();
    let mut best = (scene.table_height, Support::Table);
    for other in scene.objects.iter().filter(|o| o.label != label) {
        let ob = other.obb();
        if !footprints_overlap(&footprint, &ob) {
            continue;
        }
        let candidate = match other.container_interior() {
            Some((inner, floor)) if inner.contains_xy(obj.position[0], obj.position[1]) => {
                (floor, Support::Container(other.label.clone()))
            }
            _ => (other.top(), Support::Object(other.label.clone())),
        };
        if candidate.0 <= bottom + 1e-6 && candidate.0 > best.0 {
            best = candidate;
        }
    }
    let o = scene.object_mut(label).expect("checked above");
    o.position[2] = best.0 + o.extents[2] / 2.0;
    Ok(best.1)
}

/// Step the end-effector along `trajectory` and record what happens.
pub fn execute_trajectory(
    state: &SimState,
    trajectory: &Trajectory,
    config: &SimConfig,
) -> Result<ExecutionReport, SimError> {
    let mut sim = state.clone();
    let mut events = Vec::new();
    let Some(first) = trajectory.samples.first() else {
        return Ok(ExecutionReport {
            events,
            executed: trajectory.clone(),
            final_state: sim,
            out_of_workspace: false,
        });
    };
    let ee = sim.ee_pose;
    let expected = [ee.x, ee.y, ee.z, ee.yaw];
    let got = [first.pose[0], first.pose[1], first.pose[2], first.pose[3]];
    if expected
        .iter()
        .zip(&got)
        .any(|(a, b)| (a - b).abs() > config.start_tolerance)
    {
        return Err(SimError::StartMismatch { expected, got });
    }
    sim.set_ee_from_sample(first);
    let mut contacts = BTreeSet::new();
    for label in sim.contacts_now(config) {
        events.push(Event {
            sample: 0,
            time: first.time,
            phase: first.phase,
            kind: EventKind::Collision {
                with_label: label.clone(),
            },
        });
        contacts.insert(label);
    }
    let mut grasped = false;
    let mut executed = vec![first.clone()];
    let mut out_of_workspace = false;
    for (k, sample) in trajectory.samples.iter().enumerate().skip(1) {
        let tcp = [sample.pose[0], sample.pose[1], sample.pose[2]];
        if let Err(e) = sim.scene.workspace.check(tcp) {
            events.push(Event {
                sample: k,
                time: sample.time,
                phase: sample.phase,
                kind: EventKind::OutOfWorkspace {
                    detail: e.to_string(),
                },
            });
            out_of_workspace = true;
            break;
        }
        let before = sim.moving_shapes(config);
        sim.set_ee_from_sample(sample);
        let after = sim.moving_shapes(config);

        let mut touching = BTreeSet::new();
        for (label, shapes) in sim.static_shapes() {
            let hit = before.iter().zip(&after).any(|(from, to)| {
                let swept = SweptObb { from: *from, to: *to };
                shapes.iter().any(|s| gjk_intersect(&swept, s))
            });
            if hit {
                if !contacts.contains(&label) {
                    events.push(Event {
                        sample: k,
                        time: sample.time,
                        phase: sample.phase,
                        kind: EventKind::Collision {
                            with_label: label.clone(),
                        },
                    });
                }
                touching.insert(label);
            }
        }
        contacts = touching;

        let command_closed = sample.pose[Dof::Gripper.index()] >= config.gripper_threshold;
        if command_closed && !sim.gripper_closed {
            sim.gripper_closed = true;
            events.push(Event {
                sample: k,
                time: sample.time,
                phase: sample.phase,
                kind: EventKind::GraspAttempt,
            });
            if !grasped && sim.held.is_none() {
                if let Some(label) = check_grasp(&sim, sim.ee_pose.yaw, config) {
                    let obj = sim.scene.object(&label).expect("grasp target exists");
                    let ee = sim.ee_pose;
                    let (s, c) = ee.yaw.sin_cos();
                    let (dx, dy) = (obj.position[0] - ee.x, obj.position[1] - ee.y);
                    sim.held = Some(Grasp {
                        label: label.clone(),
                        offset: [dx * c + dy * s, -dx * s + dy * c, obj.position[2] - ee.z],
                        yaw_offset: normalize_angle(obj.yaw - ee.yaw),
                    });
                    grasped = true;
                    events.push(Event {
                        sample: k,
                        time: sample.time,
                        phase: sample.phase,
                        kind: EventKind::GraspSuccess { label },
                    });
                }
            }
        } else if !command_closed && sim.gripper_closed {
            sim.gripper_closed = false;
            if let Some(grasp) = sim.held.take() {
                let support = settle(&mut sim.scene, &grasp.label)?;
                events.push(Event {
                    sample: k,
                    time: sample.time,
                    phase: sample.phase,
                    kind: EventKind::Release {
                        label: grasp.label,
                        support,
                    },
                });
            }
        }
        executed.push(sample.clone());
    }
    let last = executed.last().expect("at least the first sample");
    if !out_of_workspace {
        events.push(Event {
            sample: executed.len() - 1,
            time: last.time,
            phase: last.phase,
            kind: EventKind::GoalReached,
        });
    }
    sim.time = state.time + last.time;
    Ok(ExecutionReport {
        events,
        executed: Trajectory {
            dt: trajectory.dt,
            samples: executed,
        },
        final_state: sim,
        out_of_workspace,
    })
}

/// What a subtask asks of the world, with object labels already resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum SubtaskGoal {
    Reach { object: String },
    Carry { object: String, destination: String },
    Wiping { object: String },
    Release { object: String },
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Collision,
    OutOfWorkspace,
    GraspMissed,
    NotHeld,
    CarryMiss,
    NotReleased,
    UnstableRest,
    NoImplement,
    WipeCoverage,
    ParseError,
    ShapeError,
    TransportError,
    ResolutionError,
    GoalError,
    DmpError,
    SimError,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::Collision => "collision",
            FailureReason::OutOfWorkspace => "out_of_workspace",
            FailureReason::GraspMissed => "grasp_missed",
            FailureReason::NotHeld => "not_held",
            FailureReason::CarryMiss => "carry_miss",
            FailureReason::NotReleased => "not_released",
            FailureReason::UnstableRest => "unstable_rest",
            FailureReason::NoImplement => "no_implement",
            FailureReason::WipeCoverage => "wipe_coverage",
            FailureReason::ParseError => "parse_error",
            FailureReason::ShapeError => "shape_error",
            FailureReason::TransportError => "transport_error",
            FailureReason::ResolutionError => "resolution_error",
            FailureReason::GoalError => "goal_error",
            FailureReason::DmpError => "dmp_error",
            FailureReason::SimError => "sim_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure { reason: FailureReason, detail: String },
}

impl Outcome {
    pub fn failure(reason: FailureReason, detail: impl Into<String>) -> Self {
        Outcome::Failure {
            reason,
            detail: detail.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

/// Degrees of the circle around `center` swept by the xy path while it stays
/// inside the annulus `[r_in, r_out]`.
pub fn angular_coverage(trajectory: &Trajectory, center: [f64; 2], r_in: f64, r_out: f64) -> f64 {
    const BINS: usize = 360;
    let mut covered = [false; BINS];
    let angle = |s: &TrajectorySample| {
        let (dx, dy) = (s.pose[0] - center[0], s.pose[1] - center[1]);
        let r = dx.hypot(dy);
        (r >= r_in && r <= r_out).then(|| dy.atan2(dx).to_degrees().rem_euclid(360.0))
    };
    for pair in trajectory.samples.windows(2) {
        let (Some(a), Some(b)) = (angle(&pair[0]), angle(&pair[1])) else {
            continue;
        };
        let mut delta = b - a;
        if delta > 180.0 {
            delta -= 360.0;
        } else if delta < -180.0 {
            delta += 360.0;
        }
        let (lo, span) = if delta >= 0.0 { (a, delta) } else { (b, -delta) };
        let start = lo.floor() as usize;
        let end = (lo + span).floor() as usize;
        for bin in start..=end {
            covered[bin % BINS] = true;
        }
    }
    covered.iter().filter(|c| **c).count() as f64
}

pub fn evaluate_subtask(
    before: &Snapshot,
    after: &SimState,
    goal: &SubtaskGoal,
    report: &ExecutionReport,
    config: &SimConfig,
) -> Result<Outcome, SimError> {
    if let Some((label, phase)) = report.collisions().next() {
        return Ok(Outcome::failure(
            FailureReason::Collision,
            format!("collided with {label} at phase {phase:.3}"),
        ));
    }
    if report.out_of_workspace {
        return Ok(Outcome::failure(
            FailureReason::OutOfWorkspace,
            "trajectory left the workspace",
        ));
    }
    let object = |label: &str| {
        after
            .scene
            .object(label)
            .ok_or_else(|| SimError::UnknownObject(label.to_string()))
    };
    let outcome = match goal {
        SubtaskGoal::Done => return Err(SimError::UnknownTemplate("done".into())),
        SubtaskGoal::Reach { object: target } => {
            object(target)?;
            if report.grasped() == Some(target.as_str()) && after.held_label() == Some(target) {
                Outcome::Success
            } else {
                let ee = after.ee_pose;
                let o = object(target)?;
                Outcome::failure(
                    FailureReason::GraspMissed,
                    format!(
                        "did not grasp {target}; end-effector ended {:.3} m from it in xy and {:.3} m above its top",
                        (o.position[0] - ee.x).hypot(o.position[1] - ee.y),
                        ee.z - o.top()
                    ),
                )
            }
        }
        SubtaskGoal::Carry {
            object: held,
            destination,
        } => {
            let dest = object(destination)?;
            let o = object(held)?;
            if after.held_label() != Some(held.as_str()) {
                Outcome::failure(FailureReason::NotHeld, format!("{held} is not held"))
            } else {
                let d = (o.position[0] - dest.position[0]).hypot(o.position[1] - dest.position[1]);
                if d <= config.carry_xy_tolerance {
                    Outcome::Success
                } else {
                    Outcome::failure(
                        FailureReason::CarryMiss,
                        format!("{held} ended {d:.3} m from {destination}"),
                    )
                }
            }
        }
        SubtaskGoal::Release { object: target } => {
            object(target)?;
            match report.release_of(target) {
                None => Outcome::failure(
                    FailureReason::NotReleased,
                    format!("{target} was not released"),
                ),
                Some(_) if after.held_label() == Some(target) => Outcome::failure(
                    FailureReason::NotReleased,
                    format!("{target} is still held"),
                ),
                Some(Support::Table) | Some(Support::Container(_)) => Outcome::Success,
                Some(Support::Object(on)) => {
                    if object(on)?.has(ObjectFlag::Surface) {
                        Outcome::Success
                    } else {
                        Outcome::failure(
                            FailureReason::UnstableRest,
                            format!("{target} came to rest on {on}"),
                        )
                    }
                }
            }
        }
        SubtaskGoal::Wiping { object: target } => {
            let t = object(target)?;
            let implement = before.state().held_label().zip(after.held_label());
            match implement {
                Some((a, b)) if a == b && a != target => {
                    let r = t.radius();
                    let coverage = angular_coverage(
                        &report.executed,
                        [t.position[0], t.position[1]],
                        config.wipe_inner_factor * r,
                        config.wipe_radius_factor * r,
                    );
                    if coverage >= config.wipe_coverage_deg {
                        Outcome::Success
                    } else {
                        Outcome::failure(
                            FailureReason::WipeCoverage,
                            format!("wiping covered {coverage:.0} degrees around {target}"),
                        )
                    }
                }
                _ => Outcome::failure(
                    FailureReason::NoImplement,
                    format!("not holding a wiping implement over {target}"),
                ),
            }
        }
    };
    Ok(outcome)
}
