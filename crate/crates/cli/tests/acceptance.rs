//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Scripted backend only; no network.
//!
//! `LMP_UPDATE_GOLDEN=1` rewrites the per-scenario prompt golden files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lmp_core::dmp::{canonical, forcing, gripper_crossing_phase, make_basis, Dof, GOAL_EPSILON};
use lmp_core::geometry::obb_overlap;
use lmp_core::sim::{execute_trajectory, EventKind, SimConfig, SimState};
use lmp_core::{build_specs, rollout, BasisKind, DmpParams, RolloutConfig, Scene};
use lmp_pipeline::TaskReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<String, String>;

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn random_weights(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..4).map(|_| (0..11).map(|_| rng.random_range(-0.9..=0.9)).collect()).collect();
    rows.push((0..11).map(|_| rng.random_range(-1.0..=1.0)).collect());
    rows
}

fn goal_convergence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = DmpParams::default();
    let cfg = RolloutConfig::for_duration(params.duration);
    let started = Instant::now();
    let n = 500;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let mut pose = || -> [f64; 5] {
            [
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(0.0..0.6),
                rng.random_range(-3.1..3.1),
                rng.random_range(0.0..=1.0),
            ]
        };
        let (start, goal) = (pose(), pose());
        let specs = build_specs(&params, start, goal, &random_weights(&mut rng)).map_err(|e| e.to_string())?;
        let traj = rollout(&specs, &cfg).map_err(|e| e.to_string())?;
        let end = traj.last().ok_or("empty rollout")?;
        for d in Dof::ALL.iter().filter(|d| d.is_positional()) {
            worst = worst.max((end.pose[d.index()] - goal[d.index()]).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!("{n} instances, max positional error {worst:.2e}, {secs:.1} s");
    if worst <= GOAL_EPSILON && secs < 30.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn analytic_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params = DmpParams::default();
    let t_total = params.duration;
    let cfg = RolloutConfig::for_duration(t_total);
    // critically damped: x(t) = g + (x0 - g)(1 + wt)e^(-wt), w = sqrt(alpha*beta)/T
    let w = (params.alpha * params.beta).sqrt() / t_total;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let start: [f64; 5] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        let goal: [f64; 5] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        let zeros = vec![vec![0.0; 11]; 5];
        let specs = build_specs(&params, start, goal, &zeros).map_err(|e| e.to_string())?;
        let traj = rollout(&specs, &cfg).map_err(|e| e.to_string())?;
        for s in &traj.samples {
            for d in 0..5 {
                let exact = goal[d] + (start[d] - goal[d]) * (1.0 + w * s.time) * (-w * s.time).exp();
                worst = worst.max((s.pose[d] - exact).abs());
            }
        }
    }
    let detail = format!("20 pairs at dt = T/1000, max error {worst:.2e}");
    if worst <= 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn forcing_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut violations = 0;
    for kind in [BasisKind::Gaussian, BasisKind::Step] {
        let basis = make_basis(kind, 11).map_err(|e| e.to_string())?;
        for _ in 0..10_000 {
            let t = rng.random_range(0.0..10.0);
            let dt = rng.random_range(0.0..1.0);
            let weights: Vec<f64> = (0..11).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let c = canonical(t, 5.0, 6.0);
            let later = canonical(t + dt, 5.0, 6.0);
            let f = forcing(&weights, &basis, &c).map_err(|e| e.to_string())?;
            let wmax = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
            if f.abs() > c.decay * wmax + 1e-12 || later.decay > c.decay || !(0.0..=1.0).contains(&c.decay) {
                violations += 1;
            }
        }
    }
    if violations == 0 {
        Ok("2 x 10^4 samples, no violations".into())
    } else {
        Err(format!("{violations} violations"))
    }
}

fn gripper_crossings() -> Check {
    let params = DmpParams::default();
    let cfg = RolloutConfig::for_duration(params.duration);
    let crossing = |w: Vec<f64>| -> Result<f64, String> {
        let mut rows = vec![vec![0.0; 11]; 4];
        rows.push(w);
        let specs = build_specs(&params, [0.0; 5], [0.0, 0.0, 0.0, 0.0, 1.0], &rows).map_err(|e| e.to_string())?;
        let traj = rollout(&specs, &cfg).map_err(|e| e.to_string())?;
        gripper_crossing_phase(&traj, 0.5).ok_or_else(|| "no crossing".to_string())
    };
    let a = crossing(vec![-1.0, -1.0, -0.5, -0.5, -0.5, -0.5, -0.5, 0.5, 0.2, 0.0, 0.0])?;
    let mut late = vec![-1.0; 11];
    late[10] = 1.0;
    let b = crossing(late)?;
    let detail = format!("crossings at phase {a:.3} and {b:.3}");
    if (0.65..=0.9).contains(&a) && (0.9..=1.0).contains(&b) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn obstacle_scene(rng: &mut ChaCha8Rng, start: [f64; 3], goal: [f64; 3]) -> Scene {
    let objects: Vec<Value> = (0..3)
        .map(|i| {
            let f: f64 = rng.random_range(0.2..0.8);
            let ext = [
                rng.random_range(0.03..0.15),
                rng.random_range(0.03..0.15),
                rng.random_range(0.05..0.35),
            ];
            json!({
                "label": format!("obstacle{i}"),
                "position": [
                    start[0] + f * (goal[0] - start[0]) + rng.random_range(-0.08..0.08),
                    start[1] + f * (goal[1] - start[1]) + rng.random_range(-0.08..0.08),
                    ext[2] / 2.0,
                ],
                "yaw": rng.random_range(-3.1..3.1),
                "extents": ext,
                "flags": ["obstacle"],
            })
        })
        .collect();
    serde_json::from_value(json!({
        "table_height": 0.0,
        "workspace": {"min": [-2.0, -2.0, -1.0], "max": [2.0, 2.0, 2.0]},
        "ee_home": [start[0], start[1], start[2], 0.0, 0.0, 0.0],
        "objects": objects,
    }))
    .expect("generated scene")
}

fn collision_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let params = DmpParams::default();
    let coarse = RolloutConfig::for_duration(params.duration);
    let fine = RolloutConfig {
        dt: coarse.dt / 10.0,
        ..coarse
    };
    let sim = SimConfig::default();
    let mut disagreements = Vec::new();
    let mut scenes_with_contact = 0;
    for scene_index in 0..100 {
        let start = [rng.random_range(0.2..0.4), rng.random_range(-0.3..0.3), rng.random_range(0.05..0.3)];
        let goal = [rng.random_range(0.5..0.8), rng.random_range(-0.3..0.3), rng.random_range(0.05..0.3)];
        let scene = obstacle_scene(&mut rng, start, goal);
        let mut weights = random_weights(&mut rng);
        weights[4] = vec![-1.0; 11];
        let yaw = rng.random_range(-1.0..1.0);
        let specs = build_specs(
            &params,
            [start[0], start[1], start[2], 0.0, 0.0],
            [goal[0], goal[1], goal[2], yaw, 0.0],
            &weights,
        )
        .map_err(|e| e.to_string())?;
        let state = SimState::new(scene);

        // runtime check: swept boxes between consecutive samples
        let traj = rollout(&specs, &coarse).map_err(|e| e.to_string())?;
        let report = execute_trajectory(&state, &traj, &sim).map_err(|e| e.to_string())?;
        let mut swept: BTreeMap<String, usize> = BTreeMap::new();
        for e in &report.events {
            if let EventKind::Collision { with_label } = &e.kind {
                swept.entry(with_label.clone()).or_insert(e.sample);
            }
        }

        // oracle: static box tests on a rollout ten times denser
        let dense = rollout(&specs, &fine).map_err(|e| e.to_string())?;
        let last = 10 * (traj.len() - 1);
        let mut brute: BTreeMap<String, usize> = BTreeMap::new();
        let mut probe = state.clone();
        for (i, s) in dense.samples.iter().enumerate().take(last + 1) {
            probe.set_ee_from_sample(s);
            let moving = probe.moving_shapes(&sim);
            for (label, shapes) in probe.static_shapes() {
                if shapes.iter().any(|o| moving.iter().any(|m| obb_overlap(m, o))) {
                    brute.entry(label).or_insert(i.div_ceil(10));
                }
            }
        }
        if !brute.is_empty() {
            scenes_with_contact += 1;
        }
        if swept != brute {
            disagreements.push(format!("scene {scene_index}: swept {swept:?} dense {brute:?}"));
        }
    }
    if disagreements.is_empty() {
        Ok(format!("100 scenes ({scenes_with_contact} with contact), zero disagreements"))
    } else {
        Err(format!("{} disagreements: {}", disagreements.len(), disagreements.join("; ")))
    }
}

struct Scenario {
    name: String,
    dir: PathBuf,
    task: String,
    expected_completed: Vec<String>,
    feedback_rounds: usize,
}

fn scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .expect("scenarios directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.join("scenario.json").exists())
        .collect();
    dirs.sort();
    for dir in dirs {
        let meta: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("scenario.json")).expect("scenario.json"))
                .expect("scenario json");
        out.push(Scenario {
            name: dir.file_name().unwrap().to_string_lossy().into_owned(),
            task: meta["task"].as_str().expect("task").to_string(),
            expected_completed: serde_json::from_value(meta["expected_completed"].clone()).expect("completed"),
            feedback_rounds: meta["feedback_rounds"].as_u64().expect("feedback_rounds") as usize,
            dir,
        });
    }
    out
}

/// Run the CLI on a scenario; returns the exit code and report bytes.
fn cli_run(s: &Scenario, fixtures: &str, out: &Path) -> Result<(i32, Vec<u8>), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_lmp"))
        .args(["run", "--scene"])
        .arg(s.dir.join("scene.json"))
        .args(["--task", &s.task, "--judge", "scripted", "--fixtures"])
        .arg(s.dir.join(fixtures))
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    let bytes = std::fs::read(out.join("report.json")).map_err(|e| format!("{}: {e}", s.name))?;
    Ok((o.status.code().unwrap_or(-1), bytes))
}

fn parse_report(bytes: &[u8]) -> Result<TaskReport, String> {
    serde_json::from_slice(bytes).map_err(|e| e.to_string())
}

/// First and second runs of every scenario, keyed by name.
struct Runs {
    first: BTreeMap<String, (i32, Vec<u8>)>,
    second: BTreeMap<String, (i32, Vec<u8>)>,
}

fn run_all(list: &[Scenario], root: &Path) -> Result<Runs, String> {
    let mut runs = Runs {
        first: BTreeMap::new(),
        second: BTreeMap::new(),
    };
    for s in list {
        runs.first.insert(s.name.clone(), cli_run(s, "fixtures.json", &root.join(&s.name).join("a"))?);
        runs.second.insert(s.name.clone(), cli_run(s, "fixtures.json", &root.join(&s.name).join("b"))?);
    }
    Ok(runs)
}

fn end_to_end(list: &[Scenario], runs: &Runs, root: &Path) -> Check {
    if list.len() < 8 {
        return Err(format!("only {} scenarios", list.len()));
    }
    let mut problems = Vec::new();
    let mut obstacle_variants = 0;
    for s in list {
        let (code, bytes) = &runs.first[&s.name];
        let report = parse_report(bytes)?;
        if *code != 0 || !report.succeeded() {
            problems.push(format!("{}: exit {code}, status {:?}", s.name, report.status));
        }
        if report.completed != s.expected_completed {
            problems.push(format!("{}: completed {:?}", s.name, report.completed));
        }
        if s.dir.join("fixtures_zero.json").exists() {
            obstacle_variants += 1;
            let (code, bytes) = cli_run(s, "fixtures_zero.json", &root.join(&s.name).join("zero"))?;
            let zero = parse_report(&bytes)?;
            let collided = zero
                .steps
                .iter()
                .flat_map(|st| &st.attempts)
                .any(|a| a.events.iter().any(|e| matches!(e.kind, EventKind::Collision { .. })));
            if code == 0 || zero.succeeded() || !collided {
                problems.push(format!("{}: zero weights did not fail by collision", s.name));
            }
        }
    }
    if obstacle_variants < 2 {
        problems.push(format!("only {obstacle_variants} obstacle variants"));
    }
    if problems.is_empty() {
        Ok(format!(
            "{} scenarios succeed; {obstacle_variants} obstacle variants fail with zero weights",
            list.len()
        ))
    } else {
        Err(problems.join("; "))
    }
}

fn refinement(list: &[Scenario], runs: &Runs) -> Check {
    let s = list.iter().find(|s| s.name == "refine_carry").ok_or("no refine_carry scenario")?;
    let report = parse_report(&runs.first[&s.name].1)?;
    let step = report
        .steps
        .iter()
        .find(|st| st.attempts.len() > 1)
        .ok_or("no step with a retry")?;
    let first = &step.attempts[0];
    let collided = matches!(&first.outcome, lmp_core::sim::Outcome::Failure { reason, .. } if reason.as_str() == "collision");
    let rounds = report.feedback_rounds();
    let ok = collided
        && first.feedback.is_some()
        && step.attempts.len() == 2
        && step.attempts[1].outcome == lmp_core::sim::Outcome::Success
        && step.attempts[1].feedback.is_none()
        && rounds == 1
        && rounds == s.feedback_rounds
        && report.succeeded();
    let detail = format!("attempts {}, feedback rounds {rounds}", step.attempts.len());
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dump_prompts(report: &TaskReport) -> String {
    let mut out = String::new();
    let mut push = |label: String, exchange: &lmp_pipeline::Exchange| {
        out.push_str(&format!("######## {label}\n"));
        for m in &exchange.messages {
            out.push_str(&format!("===== {} =====\n{}\n", m.role.as_str(), m.content));
        }
    };
    for step in &report.steps {
        push(format!("step {} decomposer", step.index), &step.decomposer);
        for (k, a) in step.attempts.iter().enumerate() {
            for (j, e) in a.exchanges.iter().enumerate() {
                push(format!("step {} attempt {k} generator {j}", step.index), e);
            }
        }
    }
    out
}

fn prompt_goldens(list: &[Scenario], runs: &Runs) -> Check {
    let update = std::env::var_os("LMP_UPDATE_GOLDEN").is_some();
    let mut problems = Vec::new();
    let mut renderings = 0;
    for s in list {
        let report = parse_report(&runs.first[&s.name].1)?;
        let actual = dump_prompts(&report);
        renderings += actual.matches("######## ").count();
        let path = s.dir.join("prompts.golden.txt");
        if update {
            std::fs::write(&path, &actual).map_err(|e| e.to_string())?;
            continue;
        }
        match std::fs::read_to_string(&path) {
            Ok(expected) if expected == actual => {}
            Ok(expected) => {
                let line = expected.lines().zip(actual.lines()).position(|(a, b)| a != b).unwrap_or(0);
                problems.push(format!("{} differs at line {}", s.name, line + 1));
            }
            Err(e) => problems.push(format!("{}: {e}", s.name)),
        }
    }
    if problems.is_empty() {
        Ok(format!("{renderings} prompt renderings match across {} scenarios", list.len()))
    } else {
        Err(problems.join("; "))
    }
}

fn determinism(list: &[Scenario], runs: &Runs) -> Check {
    let differing: Vec<&str> = list
        .iter()
        .filter(|s| runs.first[&s.name].1 != runs.second[&s.name].1)
        .map(|s| s.name.as_str())
        .collect();
    if differing.is_empty() {
        Ok(format!("{} scenarios, byte-identical reports across two runs", list.len()))
    } else {
        Err(format!("reports differ: {}", differing.join(", ")))
    }
}

fn main() {
    let mut results: Vec<(&str, Check)> = vec![
        ("goal convergence", goal_convergence()),
        ("analytic oracle", analytic_oracle()),
        ("forcing bound and decay monotonicity", forcing_invariants()),
        ("gripper crossing", gripper_crossings()),
        ("collision oracle equivalence", collision_equivalence()),
    ];
    let list = scenarios();
    let root = tempfile::tempdir().expect("temp dir");
    match run_all(&list, root.path()) {
        Ok(runs) => {
            results.push(("scripted end-to-end suite", end_to_end(&list, &runs, root.path())));
            results.push(("refinement loop", refinement(&list, &runs)));
            results.push(("prompt golden files", prompt_goldens(&list, &runs)));
            results.push(("determinism", determinism(&list, &runs)));
        }
        Err(e) => {
            for name in ["scripted end-to-end suite", "refinement loop", "prompt golden files", "determinism"] {
                results.push((name, Err(e.clone())));
            }
        }
    }
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
