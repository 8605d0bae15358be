//! SVG and CSV export of the motions recorded in a report.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use lmp_core::dmp::{rollout, Dof, Trajectory};
use lmp_core::scene::Scene;
use lmp_core::sim::{execute_trajectory, SimState};
use lmp_pipeline::TaskReport;

use crate::commands::attempt_stem;

const SIZE: f64 = 480.0;
const PAD: f64 = 30.0;

/// A motion re-executed from a report, with the scene it started in.
pub struct PlottedAttempt {
    pub stem: String,
    pub scene: Scene,
    pub trajectory: Trajectory,
}

/// Re-run every attempt of a report in order.
pub fn reconstruct(report: &TaskReport) -> Vec<PlottedAttempt> {
    let mut state = SimState::new(report.initial_scene.clone());
    let mut out = Vec::new();
    for step in &report.steps {
        let start = state.clone();
        for (k, attempt) in step.attempts.iter().enumerate() {
            let (Some(specs), Some(cfg)) = (&attempt.specs, &attempt.rollout) else { continue };
            let Ok(trajectory) = rollout(specs, cfg) else { continue };
            let Ok(exec) = execute_trajectory(&start, &trajectory, &report.config.sim) else { continue };
            out.push(PlottedAttempt {
                stem: attempt_stem(step.index, k),
                scene: start.scene.clone(),
                trajectory: exec.executed,
            });
            if attempt.feedback.is_none() {
                state = exec.final_state;
            }
        }
    }
    out
}

fn points(pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.map(|(a, b)| format!("{a:.2},{b:.2}")).collect::<Vec<_>>().join(" ")
}

/// Top-down view: +y to the right, +x downward.
pub fn topdown_svg(scene: &Scene, trajectory: &Trajectory) -> String {
    let ws = &scene.workspace;
    let (x0, x1, y0, y1) = (ws.min[0], ws.max[0], ws.min[1], ws.max[1]);
    let scale = (SIZE - 2.0 * PAD) / (x1 - x0).max(y1 - y0);
    let px = |x: f64, y: f64| (PAD + (y - y0) * scale, PAD + (x - x0) * scale);
    let (w, h) = (2.0 * PAD + (y1 - y0) * scale, 2.0 * PAD + (x1 - x0) * scale);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}" data-x-range="{x0} {x1}" data-y-range="{y0} {y1}">"#
    );
    let (a, b) = px(x0, y0);
    let _ = writeln!(
        s,
        r##"<rect class="workspace" x="{a:.2}" y="{b:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#888"/>"##,
        (y1 - y0) * scale,
        (x1 - x0) * scale
    );
    for o in &scene.objects {
        let corners = o.obb().footprint();
        let _ = writeln!(
            s,
            r##"<polygon class="object" data-label="{}" points="{}" fill="#cde" stroke="#357"/>"##,
            o.label,
            points(corners.iter().map(|c| px(c[0], c[1])))
        );
        let (cx, cy) = px(o.position[0], o.position[1]);
        let _ = writeln!(s, r#"<text x="{cx:.2}" y="{cy:.2}" font-size="10" text-anchor="middle">{}</text>"#, o.label);
    }
    let path = points(trajectory.samples.iter().map(|t| px(t.pose[0], t.pose[1])));
    let _ = writeln!(s, r##"<polyline class="path" points="{path}" fill="none" stroke="#c30"/>"##);
    s.push_str("</svg>\n");
    s
}

/// One stacked panel per DOF against time.
pub fn dofs_svg(trajectory: &Trajectory) -> String {
    let panel = 90.0;
    let width = 600.0;
    let t_end = trajectory.samples.last().map_or(1.0, |s| s.time.max(1e-9));
    let mut s = String::new();
    let height = Dof::ALL.len() as f64 * panel;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" data-t-range="0 {t_end}">"#
    );
    for (i, dof) in Dof::ALL.iter().enumerate() {
        let values: Vec<f64> = trajectory.samples.iter().map(|t| t.pose[dof.index()]).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi - lo > 1e-9 { hi - lo } else { 1.0 };
        let top = i as f64 * panel;
        let py = |v: f64| top + panel - 15.0 - (v - lo) / span * (panel - 30.0);
        let px = |t: f64| 50.0 + t / t_end * (width - 60.0);
        let _ = writeln!(s, r#"<text x="4" y="{:.2}" font-size="11">{}</text>"#, top + 14.0, dof.name());
        let line = points(trajectory.samples.iter().zip(&values).map(|(t, v)| (px(t.time), py(*v))));
        let _ = writeln!(
            s,
            r##"<polyline class="dof" data-dof="{}" data-range="{lo} {hi}" points="{line}" fill="none" stroke="#235"/>"##,
            dof.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn export(report: &TaskReport, out: &Path) -> io::Result<()> {
    std::fs::create_dir_all(out)?;
    for a in reconstruct(report) {
        std::fs::write(out.join(format!("{}_topdown.svg", a.stem)), topdown_svg(&a.scene, &a.trajectory))?;
        std::fs::write(out.join(format!("{}_dofs.svg", a.stem)), dofs_svg(&a.trajectory))?;
        std::fs::write(out.join(format!("{}.csv", a.stem)), a.trajectory.to_csv())?;
    }
    Ok(())
}
