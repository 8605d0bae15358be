//! Prompt templates and their rendering.
//!
//! Templates use `<NAME>` markers (decomposer) and `${.name}` markers
//! (generator). Substitution is a single pass, so substituted text is never
//! re-scanned for markers.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use lmp_core::perception::{object_list_text, DetectedObject};
use lmp_core::scene::fmt3;
use lmp_llm::ChatMessage;
use regex::{Captures, Regex};

use crate::parse::{GeneratorOutput, Subtask};

pub const DECOMPOSER_SYSTEM: &str = include_str!("../prompts/decomposer_system.txt");
pub const DECOMPOSER_USER: &str = include_str!("../prompts/decomposer_user.txt");
pub const GENERATOR_SYSTEM: &str = include_str!("../prompts/generator_system.txt");
pub const GENERATOR_SCENE: &str = include_str!("../prompts/generator_scene.txt");
pub const GENERATOR_TASK: &str = include_str!("../prompts/generator_task.txt");
pub const GENERATOR_FOLLOWUP: &str = include_str!("../prompts/generator_followup.txt");

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\{\.(\w+)\}|<(OVERALL_TASK|OBJ_LIST|PRIOR_TASKS)>").unwrap());

/// Fill markers from `fields`. Markers without a value are left in place.
pub fn render(template: &str, fields: &BTreeMap<&str, String>) -> String {
    let out = MARKER.replace_all(template, |c: &Captures| {
        let key = c.get(1).or_else(|| c.get(2)).expect("one group matches").as_str();
        fields.get(key).cloned().unwrap_or_else(|| c[0].to_string())
    });
    out.trim_end_matches('\n').to_string()
}

fn unescape_braces(s: &str) -> String {
    s.replace("{{", "{").replace("}}", "}")
}

pub fn render_decomposer_prompt(task: &str, objects_text: &str, completed: &[Subtask]) -> Vec<ChatMessage> {
    let prior = if completed.is_empty() {
        "none".to_string()
    } else {
        completed.iter().map(|s| s.raw.as_str()).collect::<Vec<_>>().join("\n")
    };
    let objects = if objects_text.is_empty() { "none" } else { objects_text };
    let fields = BTreeMap::from([
        ("OVERALL_TASK", task.to_string()),
        ("OBJ_LIST", objects.to_string()),
        ("PRIOR_TASKS", prior),
    ]);
    vec![
        ChatMessage::system(render(DECOMPOSER_SYSTEM, &fields)),
        ChatMessage::user(render(DECOMPOSER_USER, &fields)),
    ]
}

/// Values shown to the generator about the robot and scene.
#[derive(Debug, Clone)]
pub struct SceneFields {
    pub tcp_position: [f64; 3],
    pub goal_object: String,
    pub detections: Vec<DetectedObject>,
}

/// One earlier attempt at the current subtask, for the follow-up prompt.
#[derive(Debug, Clone)]
pub struct FeedbackContext {
    pub past: GeneratorOutput,
    /// Every correction so far for this subtask, oldest first.
    pub history: Vec<String>,
    pub action_plan: String,
}

fn triple(v: [f64; 3]) -> String {
    format!("({}, {}, {})", fmt3(v[0]), fmt3(v[1]), fmt3(v[2]))
}

pub fn generator_system_prompt(dimensions: usize, num_functions: usize) -> String {
    let fields = BTreeMap::from([
        ("total_weights", (dimensions * num_functions).to_string()),
        ("dimensions", dimensions.to_string()),
        ("num_functions", num_functions.to_string()),
    ]);
    unescape_braces(&render(GENERATOR_SYSTEM, &fields))
}

/// Text handed to the generator as the current task.
pub fn task_description(task: &str, subtask: &Subtask) -> String {
    let raw = subtask.raw.trim_end_matches('.');
    format!("the overall task is to {task}; the current subtask is {raw}")
}

pub fn render_generator_prompts(
    task: &str,
    subtask: &Subtask,
    scene: &SceneFields,
    dimensions: usize,
    num_functions: usize,
    feedback: Option<&FeedbackContext>,
) -> Vec<ChatMessage> {
    let movable = object_list_text(&scene.detections);
    let scene_fields = BTreeMap::from([
        ("dimensions", dimensions.to_string()),
        ("robot_base_position", triple([0.0; 3])),
        ("robot_base_orientation", triple([0.0; 3])),
        ("initial_tcp_position", triple(scene.tcp_position)),
        ("goal_obj_name", scene.goal_object.clone()),
        ("initial_tcp_velocities", triple([0.0; 3])),
        ("movable_objects", movable.clone()),
    ]);
    let task_fields = BTreeMap::from([("task", task_description(task, subtask))]);
    let mut messages = vec![
        ChatMessage::system(generator_system_prompt(dimensions, num_functions)),
        ChatMessage::user(render(GENERATOR_SCENE, &scene_fields)),
        ChatMessage::user(render(GENERATOR_TASK, &task_fields)),
    ];
    if let Some(fb) = feedback {
        let history = fb
            .history
            .iter()
            .enumerate()
            .map(|(i, h)| format!("{}. {h}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        let fields = BTreeMap::from([
            ("past_weights", fb.past.to_prompt_json()),
            ("history", history),
            ("movable_objects", movable),
            ("action_plan", fb.action_plan.clone()),
        ]);
        messages.push(ChatMessage::user(render(GENERATOR_FOLLOWUP, &fields)));
    }
    messages
}

/// Extra turn asking the generator to fix unparseable output.
pub fn reprompt_messages(mut messages: Vec<ChatMessage>, response: &str, error: &str) -> Vec<ChatMessage> {
    messages.push(ChatMessage::assistant(if response.is_empty() { "(empty)" } else { response }));
    messages.push(ChatMessage::user(format!(
        "Your previous response could not be used: {error}. Reply again with only the JSON object."
    )));
    messages
}
