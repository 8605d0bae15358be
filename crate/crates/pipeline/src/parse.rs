//! Parsing of decomposer answers and generator JSON.

use std::sync::LazyLock;

use lmp_core::sim::SubtaskGoal;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::PipelineError;

pub const POSITION_WEIGHT_LIMIT: f64 = 0.9;
pub const GRIPPER_WEIGHT_LIMIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "template", rename_all = "snake_case")]
pub enum Template {
    Reach {
        object: String,
    },
    Carry {
        object: String,
        destination: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        avoidance_note: Option<String>,
    },
    Wiping {
        object: String,
    },
    Release {
        object: String,
    },
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    #[serde(flatten)]
    pub template: Template,
    /// The answer text as the model wrote it.
    pub raw: String,
}

impl Subtask {
    pub fn is_done(&self) -> bool {
        self.template == Template::Done
    }

    /// Object whose pose anchors the motion goal.
    pub fn goal_object(&self) -> Option<&str> {
        match &self.template {
            Template::Reach { object } | Template::Wiping { object } | Template::Release { object } => {
                Some(object)
            }
            Template::Carry { destination, .. } => Some(destination),
            Template::Done => None,
        }
    }

    pub fn goal(&self) -> SubtaskGoal {
        match &self.template {
            Template::Reach { object } => SubtaskGoal::Reach { object: object.clone() },
            Template::Carry {
                object, destination, ..
            } => SubtaskGoal::Carry {
                object: object.clone(),
                destination: destination.clone(),
            },
            Template::Wiping { object } => SubtaskGoal::Wiping { object: object.clone() },
            Template::Release { object } => SubtaskGoal::Release { object: object.clone() },
            Template::Done => SubtaskGoal::Done,
        }
    }
}

static ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<answer>(.*?)</answer>").unwrap());
static THINK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<think>.*?</think>").unwrap());
static SINGLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)^(REACH|WIPING|WIPE|RELEASE)\s*\(\s*([^()]+?)\s*\)\s*\.?$").unwrap()
});
static CARRY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)^CARRY\s*\(\s*([^()]+?)\s*\)\s*to\s*\(\s*([^()]+?)\s*\)\s*(?:,\s*(.*?))?\s*\.?$").unwrap()
});
static DONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^done\.?$").unwrap());

/// Answer text with any `<answer>` wrapper removed.
pub fn extract_answer(text: &str) -> String {
    match ANSWER.captures(text) {
        Some(c) => c[1].trim().to_string(),
        None => THINK.replace_all(text, "").trim().to_string(),
    }
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Resolve a model-written object name: exact label, then case-insensitive
/// label, then a unique label whose words contain the name's words or the
/// other way round (`red apple` finds `apple_red`, `pineapple` does not find
/// `apple`).
pub fn resolve_object(name: &str, labels: &[String]) -> Result<String, PipelineError> {
    let err = |candidates: Vec<String>| PipelineError::Resolution {
        name: name.to_string(),
        candidates,
    };
    let name = name.trim();
    if let Some(l) = labels.iter().find(|l| *l == name) {
        return Ok(l.clone());
    }
    let lower = name.to_lowercase();
    if let Some(l) = labels.iter().find(|l| l.to_lowercase() == lower) {
        return Ok(l.clone());
    }
    let name_words = words(name);
    let hits: Vec<String> = labels
        .iter()
        .filter(|l| {
            let label_words = words(l);
            let within = |a: &[String], b: &[String]| !a.is_empty() && a.iter().all(|w| b.contains(w));
            within(&name_words, &label_words) || within(&label_words, &name_words)
        })
        .cloned()
        .collect();
    match hits.len() {
        1 => Ok(hits[0].clone()),
        0 => Err(err(labels.to_vec())),
        _ => Err(err(hits)),
    }
}

/// Parse a decomposer response. `labels` holds every nameable object.
pub fn parse_subtask(answer: &str, labels: &[String]) -> Result<Subtask, PipelineError> {
    let raw = extract_answer(answer);
    // the answer may span lines; the template sits on the first non-empty one
    let line = raw.replace(['\n', '\r'], " ");
    let line = line.trim();
    let template = if DONE.is_match(line) {
        Template::Done
    } else if let Some(c) = CARRY.captures(line) {
        Template::Carry {
            object: resolve_object(&c[1], labels)?,
            destination: resolve_object(&c[2], labels)?,
            avoidance_note: c
                .get(3)
                .map(|m| m.as_str().trim().to_string())
                .filter(|s| !s.is_empty()),
        }
    } else if let Some(c) = SINGLE.captures(line) {
        let object = resolve_object(&c[2], labels)?;
        match c[1].to_ascii_uppercase().as_str() {
            "REACH" => Template::Reach { object },
            "RELEASE" => Template::Release { object },
            _ => Template::Wiping { object },
        }
    } else {
        return Err(PipelineError::Parse {
            detail: "no subtask template matched".into(),
            raw: answer.to_string(),
        });
    };
    Ok(Subtask { template, raw })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    pub weights: Vec<Vec<f64>>,
    /// Yaw offset Δψ in radians.
    pub angle: f64,
    /// Goal height offset Δz in meters.
    pub height: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl GeneratorOutput {
    pub fn zeros(dims: usize, count: usize) -> Self {
        Self {
            weights: vec![vec![0.0; count]; dims],
            angle: 0.0,
            height: 0.0,
            warnings: Vec::new(),
        }
    }

    /// JSON object in the shape the generator is asked to produce.
    pub fn to_prompt_json(&self) -> String {
        let rows: Vec<String> = self
            .weights
            .iter()
            .map(|r| format!("    {}", serde_json::to_string(r).expect("finite weights")))
            .collect();
        format!(
            "{{\n  \"weights\": [\n{}\n  ],\n  \"angle\": {},\n  \"height\": {}\n}}",
            rows.join(",\n"),
            Value::from(self.angle),
            Value::from(self.height)
        )
    }
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn number(v: &Value, what: &str, raw: &str) -> Result<f64, PipelineError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| PipelineError::Parse {
        detail: format!("{what} must be a finite number"),
        raw: raw.to_string(),
    })
}

/// Parse and validate generator JSON into a `dims x count` weight matrix.
/// Rows for positional DOFs are clamped to ±0.9; the fifth row, the gripper,
/// to ±1.
pub fn parse_generator_output(text: &str, dims: usize, count: usize) -> Result<GeneratorOutput, PipelineError> {
    let body = strip_fences(text);
    let value: Value = serde_json::from_str(body).map_err(|e| PipelineError::Parse {
        detail: e.to_string(),
        raw: text.to_string(),
    })?;
    let shape = |detail: String| PipelineError::Shape {
        rows: dims,
        cols: count,
        detail,
    };
    let rows = value
        .get("weights")
        .and_then(Value::as_array)
        .ok_or_else(|| shape("missing \"weights\" array".into()))?;
    if rows.len() != dims {
        return Err(shape(format!("got {} rows", rows.len())));
    }
    let mut warnings = Vec::new();
    let mut weights = Vec::with_capacity(dims);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| shape(format!("row {i} is not an array")))?;
        if row.len() != count {
            return Err(shape(format!("row {i} has {} entries", row.len())));
        }
        let limit = if i == 4 { GRIPPER_WEIGHT_LIMIT } else { POSITION_WEIGHT_LIMIT };
        let mut out = Vec::with_capacity(count);
        for (j, w) in row.iter().enumerate() {
            let w = number(w, &format!("weights[{i}][{j}]"), text)?;
            let c = w.clamp(-limit, limit);
            if c != w {
                warnings.push(format!("weights[{i}][{j}] = {w} clamped to {c}"));
            }
            out.push(c);
        }
        weights.push(out);
    }
    let field = |key: &str| match value.get(key) {
        Some(v) => number(v, key, text),
        None => Err(PipelineError::Parse {
            detail: format!("missing \"{key}\""),
            raw: text.to_string(),
        }),
    };
    Ok(GeneratorOutput {
        weights,
        angle: field("angle")?,
        height: field("height")?,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reach_inside_answer_tags() {
        let s = parse_subtask(
            "<think>the sponge is closest</think><answer>REACH(sponge)</answer>",
            &labels(&["sponge", "plate"]),
        )
        .unwrap();
        assert_eq!(s.template, Template::Reach { object: "sponge".into() });
        assert_eq!(s.raw, "REACH(sponge)");
    }

    #[test]
    fn carry_with_avoidance_note() {
        let text = "CARRY(sponge) to (plate), Potential collision with cup, avoid by lifting upward and shifting left.";
        let s = parse_subtask(text, &labels(&["sponge", "plate", "cup"])).unwrap();
        assert_eq!(
            s.template,
            Template::Carry {
                object: "sponge".into(),
                destination: "plate".into(),
                avoidance_note: Some("Potential collision with cup, avoid by lifting upward and shifting left".into()),
            }
        );
        assert_eq!(s.raw, text);
    }

    #[test]
    fn unknown_object_is_a_resolution_error() {
        let e = parse_subtask("REACH(spatula)", &labels(&["sponge"])).unwrap_err();
        assert!(matches!(e, PipelineError::Resolution { .. }));
    }

    #[test]
    fn case_and_word_resolution() {
        let l = labels(&["red_apple", "green_pear", "bowl"]);
        assert_eq!(resolve_object("BOWL", &l).unwrap(), "bowl");
        assert_eq!(resolve_object("apple", &l).unwrap(), "red_apple");
        assert_eq!(resolve_object("the bowl", &l).unwrap(), "bowl");
        assert_eq!(resolve_object("Red Apple", &l).unwrap(), "red_apple");
        assert!(resolve_object("pineapple", &l).is_err());
        let amb = labels(&["red_apple", "green_apple"]);
        match resolve_object("apple", &amb) {
            Err(PipelineError::Resolution { candidates, .. }) => assert_eq!(candidates.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn done_and_templates_case_insensitive() {
        let l = labels(&["plate"]);
        assert!(parse_subtask("<answer>\n  done\n</answer>", &l).unwrap().is_done());
        assert!(parse_subtask("DONE", &l).unwrap().is_done());
        assert_eq!(
            parse_subtask("wiping(Plate)", &l).unwrap().template,
            Template::Wiping { object: "plate".into() }
        );
        assert_eq!(
            parse_subtask("Release(plate).", &l).unwrap().template,
            Template::Release { object: "plate".into() }
        );
        assert!(matches!(
            parse_subtask("pick up the plate", &l),
            Err(PipelineError::Parse { .. })
        ));
    }

    /// The two-row example shipped in the generator instructions, with the
    /// stray `s` after one number removed so that it is valid JSON.
    const EXAMPLE: &str = r#"{
  "weights": [
      [0.1, -0.2, 0.3, -0.4, 0.0, 0.2, -0.1, 0.3, -0.2, 0.1],
      [-0.1, 0.5, 1.0, 2.0, 2.0, 2.0, 1.0, 0.1, 0.2, -0.1]
  ],
  "angle": 0.0,
  "height": 0.0
}"#;

    #[test]
    fn instruction_example_parses() {
        let g = parse_generator_output(EXAMPLE, 2, 10).unwrap();
        assert_eq!(g.weights[0], vec![0.1, -0.2, 0.3, -0.4, 0.0, 0.2, -0.1, 0.3, -0.2, 0.1]);
        assert_eq!(g.weights[1], vec![-0.1, 0.5, 0.9, 0.9, 0.9, 0.9, 0.9, 0.1, 0.2, -0.1]);
        assert_eq!(g.warnings.len(), 5);
        assert_eq!((g.angle, g.height), (0.0, 0.0));
        assert!(matches!(
            parse_generator_output(EXAMPLE, 5, 11),
            Err(PipelineError::Shape { rows: 5, cols: 11, .. })
        ));
    }

    #[test]
    fn clamps_by_row() {
        let mut rows = vec![vec![0.0; 11]; 5];
        rows[0][2] = 1.5;
        rows[4][0] = -1.0;
        rows[4][1] = -3.0;
        let text = serde_json::json!({"weights": rows, "angle": 0.5, "height": 0.02}).to_string();
        let g = parse_generator_output(&text, 5, 11).unwrap();
        assert_eq!(g.weights[0][2], 0.9);
        assert_eq!(g.weights[4][0], -1.0);
        assert_eq!(g.weights[4][1], -1.0);
        assert_eq!(g.warnings.len(), 2);
        assert_eq!((g.angle, g.height), (0.5, 0.02));
    }

    #[test]
    fn fenced_json_is_accepted() {
        let fenced = format!("```json\n{}\n```", GeneratorOutput::zeros(5, 11).to_prompt_json());
        let g = parse_generator_output(&fenced, 5, 11).unwrap();
        assert_eq!(g, GeneratorOutput::zeros(5, 11));
    }

    #[test]
    fn malformed_and_missing_fields() {
        assert!(matches!(parse_generator_output("{weights: }", 5, 11), Err(PipelineError::Parse { .. })));
        let no_angle = serde_json::json!({"weights": vec![vec![0.0; 11]; 5], "height": 0.0}).to_string();
        assert!(matches!(parse_generator_output(&no_angle, 5, 11), Err(PipelineError::Parse { .. })));
    }

    #[test]
    fn prompt_json_roundtrip() {
        let mut g = GeneratorOutput::zeros(5, 11);
        g.weights[2][0] = 0.6;
        g.angle = -1.25;
        let back = parse_generator_output(&g.to_prompt_json(), 5, 11).unwrap();
        assert_eq!(back, g);
    }
}
