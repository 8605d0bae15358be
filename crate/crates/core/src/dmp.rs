//! Dynamic movement primitives.
//!
//! Each controlled degree of freedom follows a critically damped spring
//! toward its goal, shaped by a forcing term built from normalized basis
//! activations and gated by a canonical decay `z = exp(-γ·t̃³)` with
//! `t̃ = min(t/T, 1)`:
//!
//! ```text
//! T²·ξ̈ = α·(β·(g − ξ) − T·ξ̇) + α·β·k·f(z)
//! f(z) = z · Σ wᵢ ψᵢ(t̃) / Σ ψᵢ(t̃)
//! ```
//!
//! `k` is the forcing gain: the equilibrium shift produced by a unit
//! forcing value, in the units of the controlled DOF. Setting
//! `k = 1/(α·β)` recovers the unscaled form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default spring gain.
pub const DEFAULT_ALPHA: f64 = 25.0;
/// Default damper ratio (α/4, critical damping).
pub const DEFAULT_BETA: f64 = 6.25;
/// Default canonical decay rate.
pub const DEFAULT_DECAY_RATE: f64 = 6.0;
/// Default subtask duration in seconds.
pub const DEFAULT_DURATION: f64 = 5.0;
/// Default number of basis functions.
pub const DEFAULT_BASIS_COUNT: usize = 11;
/// Default forcing gain for Cartesian position and yaw DOFs (m or rad per unit weight).
pub const DEFAULT_POSITION_GAIN: f64 = 0.25;
/// Default forcing gain for the gripper DOF.
pub const DEFAULT_GRIPPER_GAIN: f64 = 5.0;
/// Goal tolerance for positional DOFs at the end of a rollout.
pub const GOAL_EPSILON: f64 = 1e-3;

const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DmpError {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("phase {0} outside [0, 1]")]
    PhaseDomain(f64),
    #[error("basis activations sum to {0}, below the degeneracy floor")]
    DegenerateBasis(f64),
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("invalid dmp parameters: {0}")]
    InvalidSpec(String),
    #[error("numerical blowup in {term}")]
    Blowup { term: &'static str },
    #[error("rollout failed at sample {sample} on dof {dof}: {source}")]
    Rollout {
        sample: usize,
        dof: &'static str,
        #[source]
        source: Box<DmpError>,
    },
}

pub type Result<T> = std::result::Result<T, DmpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Gaussian,
    Step,
}

/// Uniformly spaced basis over the phase interval `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub kind: BasisKind,
    pub count: usize,
    pub centers: Vec<f64>,
    /// `h = 1/σ²`; only present for gaussian bases.
    pub width_gain: Option<f64>,
}

pub fn make_basis(kind: BasisKind, count: usize) -> Result<BasisSet> {
    if count < 2 {
        return Err(DmpError::InvalidBasis(format!(
            "need at least 2 basis functions, got {count}"
        )));
    }
    let last = (count - 1) as f64;
    let centers = (0..count).map(|i| i as f64 / last).collect();
    let width_gain = match kind {
        BasisKind::Gaussian => Some((4.0 * last).powi(2)),
        BasisKind::Step => None,
    };
    Ok(BasisSet {
        kind,
        count,
        centers,
        width_gain,
    })
}

impl BasisSet {
    /// Segment `[lo, hi)` owned by step basis `index`; the last segment is closed.
    pub fn segment(&self, index: usize) -> (f64, f64) {
        let n = self.count as f64;
        (index as f64 / n, (index + 1) as f64 / n)
    }

    fn segment_of(&self, phase: f64) -> usize {
        ((phase * self.count as f64).floor() as usize).min(self.count - 1)
    }

    pub fn eval(&self, phase: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.count];
        self.eval_into(phase, &mut out)?;
        Ok(out)
    }

    fn eval_into(&self, phase: f64, out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&phase) {
            return Err(DmpError::PhaseDomain(phase));
        }
        match self.kind {
            BasisKind::Gaussian => {
                let h = self.width_gain.unwrap_or(0.0);
                for (a, c) in out.iter_mut().zip(&self.centers) {
                    *a = (-h * (phase - c).powi(2)).exp();
                }
            }
            BasisKind::Step => {
                out.iter_mut().for_each(|a| *a = 0.0);
                out[self.segment_of(phase)] = 1.0;
            }
        }
        Ok(())
    }
}

pub fn eval_basis(basis: &BasisSet, phase: f64) -> Result<Vec<f64>> {
    basis.eval(phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalState {
    pub time: f64,
    pub phase: f64,
    pub decay: f64,
}

pub fn canonical(time: f64, duration: f64, decay_rate: f64) -> CanonicalState {
    debug_assert!(duration > 0.0 && decay_rate > 0.0 && time >= 0.0);
    let phase = (time / duration).min(1.0);
    CanonicalState {
        time,
        phase,
        decay: (-decay_rate * phase.powi(3)).exp(),
    }
}

pub fn forcing(weights: &[f64], basis: &BasisSet, canonical: &CanonicalState) -> Result<f64> {
    if weights.len() != basis.count {
        return Err(DmpError::WeightCount {
            expected: basis.count,
            got: weights.len(),
        });
    }
    match basis.kind {
        BasisKind::Step => Ok(canonical.decay * weights[basis.segment_of(canonical.phase.clamp(0.0, 1.0))]),
        BasisKind::Gaussian => {
            let h = basis.width_gain.unwrap_or(0.0);
            let phase = canonical.phase;
            if !(0.0..=1.0).contains(&phase) {
                return Err(DmpError::PhaseDomain(phase));
            }
            let (mut num, mut den) = (0.0, 0.0);
            for (w, c) in weights.iter().zip(&basis.centers) {
                let psi = (-h * (phase - c).powi(2)).exp();
                num += w * psi;
                den += psi;
            }
            if den < DENOMINATOR_FLOOR {
                return Err(DmpError::DegenerateBasis(den));
            }
            Ok(canonical.decay * num / den)
        }
    }
}

/// Full parameterization of one DMP dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpSpec {
    pub alpha: f64,
    pub beta: f64,
    pub duration: f64,
    pub decay_rate: f64,
    pub forcing_gain: f64,
    pub basis: BasisSet,
    pub weights: Vec<f64>,
    pub goal: f64,
    pub start: f64,
    pub start_velocity: f64,
}

impl DmpSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("duration", self.duration),
            ("decay_rate", self.decay_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DmpError::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if self.weights.len() != self.basis.count {
            return Err(DmpError::WeightCount {
                expected: self.basis.count,
                got: self.weights.len(),
            });
        }
        for (name, v) in [
            ("forcing_gain", self.forcing_gain),
            ("goal", self.goal),
            ("start", self.start),
            ("start_velocity", self.start_velocity),
        ] {
            if !v.is_finite() {
                return Err(DmpError::InvalidSpec(format!("{name} is not finite")));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> DofState {
        DofState {
            position: self.start,
            velocity: self.start_velocity,
            acceleration: 0.0,
        }
    }

    fn acceleration(&self, position: f64, velocity: f64, time: f64) -> Result<f64> {
        let c = canonical(time, self.duration, self.decay_rate);
        let f = forcing(&self.weights, &self.basis, &c)?;
        let t = self.duration;
        let spring = self.alpha * (self.beta * (self.goal - position) - t * velocity);
        if !spring.is_finite() {
            return Err(DmpError::Blowup { term: "spring-damper" });
        }
        let push = self.alpha * self.beta * self.forcing_gain * f;
        if !push.is_finite() {
            return Err(DmpError::Blowup { term: "forcing" });
        }
        let acc = (spring + push) / (t * t);
        if !acc.is_finite() {
            return Err(DmpError::Blowup { term: "acceleration" });
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofState {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Velocity first, then position with the new velocity.
    SemiImplicitEuler,
    #[default]
    Rk4,
}

/// Advance one DOF from `time` to `time + dt`.
pub fn step_dof(
    state: DofState,
    spec: &DmpSpec,
    time: f64,
    dt: f64,
    integrator: Integrator,
) -> Result<DofState> {
    if !(dt > 0.0 && dt <= spec.duration / 50.0) {
        return Err(DmpError::InvalidSpec(format!(
            "dt {dt} must lie in (0, duration/50]"
        )));
    }
    let (x, v) = (state.position, state.velocity);
    let (position, velocity) = match integrator {
        Integrator::SemiImplicitEuler => {
            let a = spec.acceleration(x, v, time)?;
            let v1 = v + a * dt;
            (x + v1 * dt, v1)
        }
        Integrator::Rk4 => {
            let half = 0.5 * dt;
            let a1 = spec.acceleration(x, v, time)?;
            let (x2, v2) = (x + half * v, v + half * a1);
            let a2 = spec.acceleration(x2, v2, time + half)?;
            let (x3, v3) = (x + half * v2, v + half * a2);
            let a3 = spec.acceleration(x3, v3, time + half)?;
            let (x4, v4) = (x + dt * v3, v + dt * a3);
            let a4 = spec.acceleration(x4, v4, time + dt)?;
            (
                x + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4),
                v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
            )
        }
    };
    if !position.is_finite() {
        return Err(DmpError::Blowup { term: "position" });
    }
    if !velocity.is_finite() {
        return Err(DmpError::Blowup { term: "velocity" });
    }
    let acceleration = spec.acceleration(position, velocity, time + dt)?;
    Ok(DofState {
        position,
        velocity,
        acceleration,
    })
}

/// The five controlled dimensions, in weight-matrix row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dof {
    X,
    Y,
    Z,
    Yaw,
    Gripper,
}

impl Dof {
    pub const ALL: [Dof; 5] = [Dof::X, Dof::Y, Dof::Z, Dof::Yaw, Dof::Gripper];

    pub fn name(self) -> &'static str {
        match self {
            Dof::X => "x",
            Dof::Y => "y",
            Dof::Z => "z",
            Dof::Yaw => "yaw",
            Dof::Gripper => "gripper",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_positional(self) -> bool {
        !matches!(self, Dof::Gripper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub dt: f64,
    pub integrator: Integrator,
    /// Hard stop at `settle_factor · T`.
    pub settle_factor: f64,
    /// Early stop once every |ξ̇| falls below this after `t = T`.
    pub settle_velocity: f64,
}

impl RolloutConfig {
    pub fn for_duration(duration: f64) -> Self {
        Self {
            dt: duration / 1000.0,
            integrator: Integrator::Rk4,
            settle_factor: 1.5,
            settle_velocity: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub phase: f64,
    /// `[x, y, z, yaw, gripper]`
    pub pose: [f64; 5],
    pub velocity: [f64; 5],
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
}

pub fn rollout(specs: &[DmpSpec; 5], config: &RolloutConfig) -> Result<Trajectory> {
    let duration = specs[0].duration;
    let decay_rate = specs[0].decay_rate;
    for (dof, spec) in Dof::ALL.iter().zip(specs) {
        spec.validate()?;
        if spec.duration != duration || spec.decay_rate != decay_rate {
            return Err(DmpError::InvalidSpec(
                "all dofs must share duration and decay rate".into(),
            ));
        }
        let want = if dof.is_positional() {
            BasisKind::Gaussian
        } else {
            BasisKind::Step
        };
        if spec.basis.kind != want {
            return Err(DmpError::InvalidSpec(format!(
                "dof {} expects a {:?} basis",
                dof.name(),
                want
            )));
        }
    }
    let dt = config.dt;
    let max_steps = (config.settle_factor * duration / dt).round() as usize;
    let mut states: [DofState; 5] = std::array::from_fn(|i| specs[i].initial_state());
    let sample = |k: usize, states: &[DofState; 5]| {
        let time = k as f64 * dt;
        let c = canonical(time, duration, decay_rate);
        TrajectorySample {
            time,
            phase: c.phase,
            pose: std::array::from_fn(|i| states[i].position),
            velocity: std::array::from_fn(|i| states[i].velocity),
            decay: c.decay,
        }
    };
    let mut samples = Vec::with_capacity(max_steps + 1);
    samples.push(sample(0, &states));
    for k in 0..max_steps {
        let time = k as f64 * dt;
        for (i, dof) in Dof::ALL.iter().enumerate() {
            states[i] = step_dof(states[i], &specs[i], time, dt, config.integrator).map_err(
                |e| DmpError::Rollout {
                    sample: k + 1,
                    dof: dof.name(),
                    source: Box::new(e),
                },
            )?;
        }
        samples.push(sample(k + 1, &states));
        let t_next = (k + 1) as f64 * dt;
        if t_next >= duration
            && states
                .iter()
                .all(|s| s.velocity.abs() < config.settle_velocity)
        {
            break;
        }
    }
    Ok(Trajectory { dt, samples })
}

/// Shared parameters for the five DOFs of one motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmpParams {
    pub alpha: f64,
    pub beta: f64,
    pub duration: f64,
    pub decay_rate: f64,
    pub basis_count: usize,
    pub position_gain: f64,
    pub gripper_gain: f64,
}

impl Default for DmpParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            duration: DEFAULT_DURATION,
            decay_rate: DEFAULT_DECAY_RATE,
            basis_count: DEFAULT_BASIS_COUNT,
            position_gain: DEFAULT_POSITION_GAIN,
            gripper_gain: DEFAULT_GRIPPER_GAIN,
        }
    }
}

/// Specs for `[x, y, z, yaw, gripper]` starting at rest. `weights` holds one
/// row per DOF.
pub fn build_specs(
    params: &DmpParams,
    start: [f64; 5],
    goal: [f64; 5],
    weights: &[Vec<f64>],
) -> Result<[DmpSpec; 5]> {
    if weights.len() != 5 {
        return Err(DmpError::InvalidSpec(format!("expected 5 weight rows, got {}", weights.len())));
    }
    let gaussian = make_basis(BasisKind::Gaussian, params.basis_count)?;
    let step = make_basis(BasisKind::Step, params.basis_count)?;
    let specs: [DmpSpec; 5] = std::array::from_fn(|i| {
        let positional = Dof::ALL[i].is_positional();
        DmpSpec {
            alpha: params.alpha,
            beta: params.beta,
            duration: params.duration,
            decay_rate: params.decay_rate,
            forcing_gain: if positional { params.position_gain } else { params.gripper_gain },
            basis: if positional { gaussian.clone() } else { step.clone() },
            weights: weights[i].clone(),
            goal: goal[i],
            start: start[i],
            start_velocity: 0.0,
        }
    });
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Phase of the first sample whose gripper value reaches `threshold`.
pub fn gripper_crossing_phase(trajectory: &Trajectory, threshold: f64) -> Option<f64> {
    trajectory
        .samples
        .iter()
        .find(|s| s.pose[Dof::Gripper.index()] >= threshold)
        .map(|s| s.phase)
}

impl Trajectory {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn last(&self) -> Option<&TrajectorySample> {
        self.samples.last()
    }

    /// Largest absolute distance between the final positional DOFs and their goals.
    pub fn goal_error(&self, specs: &[DmpSpec; 5]) -> f64 {
        let Some(last) = self.last() else {
            return f64::INFINITY;
        };
        Dof::ALL
            .iter()
            .filter(|d| d.is_positional())
            .map(|d| (last.pose[d.index()] - specs[d.index()].goal).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,z,yaw,grip,z_canonical\n");
        for s in &self.samples {
            let mut row: Vec<String> = vec![sig9(s.time)];
            row.extend(s.pose.iter().map(|v| sig9(*v)));
            row.push(sig9(s.decay));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Nine significant digits, `%g`-style.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.8e}", v);
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let (mantissa, e) = sci.split_once('e').unwrap_or((&sci, "0"));
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{e}")
    }
}
