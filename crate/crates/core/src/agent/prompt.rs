//! Prompt payload assembly. Every builder is a pure function of its inputs.

use std::collections::{BTreeMap, VecDeque};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CallKind;
use crate::geometry::ViewDir;
use crate::tdm::{render_text, TodoList};
use crate::world::{PanoramaObservation, TaskFamily, TaskSpec, View};

pub const PROMPT_VERSION: &str = "navloop-prompts/1";
/// First line of the checklist text block.
pub const CHECKLIST_HEADING: &str = "Checklist:";

const NAVIGATE: &str = include_str!("prompts/navigate.txt");
const RECOVER: &str = include_str!("prompts/recover.txt");
const VERIFY: &str = include_str!("prompts/verify.txt");
const VISION: &str = include_str!("prompts/vision.txt");
const INIT: &str = include_str!("prompts/init.txt");
const TODO_RULES: &str = include_str!("prompts/todo_rules.txt");
const NO_TODO_RULES: &str = include_str!("prompts/no_todo_rules.txt");
const ACTIONS: &str = include_str!("prompts/actions.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub caption: String,
    /// Base64 of an 8-bit grayscale PNG.
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub text_blocks: Vec<String>,
    pub images: Vec<EncodedImage>,
    pub metadata: BTreeMap<String, String>,
}

impl PromptPayload {
    pub fn kind(&self) -> Option<&str> {
        self.metadata.get("call").map(String::as_str)
    }

    /// The checklist as rendered into the prompt, if one was included.
    pub fn checklist_text(&self) -> Option<&str> {
        self.text_blocks
            .iter()
            .find_map(|b| b.strip_prefix(CHECKLIST_HEADING).map(|s| s.trim_start_matches('\n')))
    }

    /// Hex sha256 over the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("payload serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Waypoint captions and keyed view references, both as sliding windows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    captions: VecDeque<String>,
    views: VecDeque<String>,
}

impl History {
    pub const MAX_CAPTIONS: usize = 20;
    pub const MAX_VIEWS: usize = 8;

    pub fn push_caption(&mut self, caption: impl Into<String>) {
        if self.captions.len() == Self::MAX_CAPTIONS {
            self.captions.pop_front();
        }
        self.captions.push_back(caption.into());
    }

    pub fn push_view(&mut self, key: impl Into<String>) {
        if self.views.len() == Self::MAX_VIEWS {
            self.views.pop_front();
        }
        self.views.push_back(key.into());
    }

    pub fn captions(&self) -> impl Iterator<Item = &str> {
        self.captions.iter().map(String::as_str)
    }

    pub fn views(&self) -> impl Iterator<Item = &str> {
        self.views.iter().map(String::as_str)
    }

    fn render(&self) -> String {
        if self.captions.is_empty() {
            return "History: none yet, this is the first waypoint.".into();
        }
        let mut s = String::from("History (oldest first):\n");
        for c in &self.captions {
            s.push_str("- ");
            s.push_str(c);
            s.push('\n');
        }
        if !self.views.is_empty() {
            let keys: Vec<&str> = self.views.iter().map(String::as_str).collect();
            s.push_str(&format!("Key observations: {}\n", keys.join(", ")));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PromptOptions<'a> {
    /// Label names used to caption image columns.
    pub labels: &'a BTreeMap<u32, String>,
    pub allow_backtrack: bool,
    pub allow_stairs: bool,
    pub round: usize,
    pub steps_taken: usize,
}

/// One egocentric frame from a failed excursion.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryFrame {
    pub key: String,
    pub view: View,
}

/// 8-bit grayscale depth image: 0 at the camera, 255 at or beyond max range
/// and for pixels with no return.
pub fn depth_png(view: &View) -> Vec<u8> {
    let img = view.depth_image();
    let px: Vec<u8> = img
        .data
        .iter()
        .map(|d| {
            if d.is_finite() {
                (255.0 * (d / view.max_range).clamp(0.0, 1.0)).round() as u8
            } else {
                255
            }
        })
        .collect();
    let mut out = vec![];
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("png header");
        w.write_image_data(&px).expect("png body");
    }
    out
}

/// Column runs of one view, e.g. `columns 0-17: wall at 1.9-2.4 m`.
fn column_caption(view: &View, labels: &BTreeMap<u32, String>) -> String {
    let mut runs: Vec<String> = vec![];
    let n = view.depth_cols.len();
    let mut a = 0;
    while a < n {
        let (lab, fin) = (view.label_cols[a], view.depth_cols[a].is_finite());
        let mut b = a;
        while b + 1 < n && view.label_cols[b + 1] == lab && view.depth_cols[b + 1].is_finite() == fin {
            b += 1;
        }
        if fin {
            let ds = &view.depth_cols[a..=b];
            let lo = ds.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let name = labels.get(&lab).map_or("surface", String::as_str);
            runs.push(format!("columns {a}-{b}: {name} at {lo:.1}-{hi:.1} m"));
        } else {
            runs.push(format!("columns {a}-{b}: nothing within {:.0} m", view.max_range));
        }
        a = b + 1;
    }
    runs.join("; ")
}

fn encode(view: &View, title: &str, labels: &BTreeMap<u32, String>) -> EncodedImage {
    EncodedImage {
        caption: format!("{title}: {}", column_caption(view, labels)),
        png_base64: base64::engine::general_purpose::STANDARD.encode(depth_png(view)),
    }
}

fn panorama_images(pano: &PanoramaObservation, labels: &BTreeMap<u32, String>) -> Vec<EncodedImage> {
    let mut dirs = ViewDir::HORIZONTAL.to_vec();
    dirs.push(ViewDir::Down);
    dirs.into_iter()
        .filter_map(|d| pano.view(d).map(|v| encode(v, &format!("{d} view"), labels)))
        .collect()
}

fn task_block(task: &TaskSpec) -> String {
    let kind = match task.family {
        TaskFamily::Vln => "follow the route instruction",
        TaskFamily::ObjectNav => "find an object of the named category",
        TaskFamily::Eqa => "answer the question about the scene",
        TaskFamily::AerialVLN => "fly to the described destination",
    };
    let mut s = format!("Task ({}, {kind}): {}", task.family.as_str(), task.instruction);
    if let Some(b) = task.goal_bearing {
        s.push_str(&format!(
            "\nThe destination lies along ({:.3}, {:.3}, {:.3}) in your starting frame (forward, left, up).",
            b[0], b[1], b[2]
        ));
    }
    s
}

fn checklist_block(todo: &TodoList) -> String {
    format!("{CHECKLIST_HEADING}\n{}", render_text(todo))
}

fn fill_rules(template: &str, todo: Option<&TodoList>, opts: &PromptOptions) -> String {
    let rules = if todo.is_some() { TODO_RULES } else { NO_TODO_RULES };
    let actions: Vec<&str> = ACTIONS
        .lines()
        .filter_map(|l| l.split_once(": "))
        .filter(|(tag, _)| match *tag {
            "backtrack" => opts.allow_backtrack,
            "go_stair" => opts.allow_stairs,
            _ => true,
        })
        .map(|(_, text)| text)
        .collect();
    let actions: Vec<String> = actions.iter().map(|a| format!("- {a}")).collect();
    template
        .replace("{{TODO_RULES}}", rules.trim_end())
        .replace("{{ACTIONS}}", &actions.join("\n"))
}

fn metadata(kind: CallKind, task: &TaskSpec, opts: &PromptOptions) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("call".to_string(), kind.as_str().to_string()),
        ("family".to_string(), task.family.as_str().to_string()),
        ("prompt_version".to_string(), PROMPT_VERSION.to_string()),
        ("round".to_string(), opts.round.to_string()),
        ("step".to_string(), opts.steps_taken.to_string()),
    ])
}

pub fn build_init_prompt(task: &TaskSpec, pano: &PanoramaObservation, opts: &PromptOptions) -> PromptPayload {
    PromptPayload {
        text_blocks: vec![INIT.trim_end().to_string(), task_block(task)],
        images: panorama_images(pano, opts.labels),
        metadata: metadata(CallKind::Init, task, opts),
    }
}

pub fn build_lang_prompt(
    task: &TaskSpec,
    pano: &PanoramaObservation,
    history: &History,
    todo: Option<&TodoList>,
    opts: &PromptOptions,
) -> PromptPayload {
    let mut text_blocks = vec![fill_rules(NAVIGATE, todo, opts).trim_end().to_string(), task_block(task)];
    if let Some(t) = todo {
        text_blocks.push(checklist_block(t));
    }
    text_blocks.push(history.render().trim_end().to_string());
    PromptPayload {
        text_blocks,
        images: panorama_images(pano, opts.labels),
        metadata: metadata(CallKind::Navigate, task, opts),
    }
}

/// Re-decision prompt after a backtrack. The evidence blocks appear in a fixed
/// order: waypoint views, failed direction, failed frames.
#[allow(clippy::too_many_arguments)]
pub fn build_recovery_prompt(
    task: &TaskSpec,
    waypoint_id: u64,
    waypoint_pano: &PanoramaObservation,
    failed_dir: ViewDir,
    failed_frames: &[RecoveryFrame],
    todo: Option<&TodoList>,
    opts: &PromptOptions,
) -> PromptPayload {
    let mut text_blocks = vec![fill_rules(RECOVER, todo, opts).trim_end().to_string(), task_block(task)];
    if let Some(t) = todo {
        text_blocks.push(checklist_block(t));
    }
    let n_pano = panorama_images(waypoint_pano, opts.labels).len();
    text_blocks.push(format!(
        "Evidence 1: the views at waypoint {waypoint_id}, images 1-{n_pano}."
    ));
    text_blocks.push(format!("Evidence 2: the direction that failed was {failed_dir}."));
    let keys: Vec<&str> = failed_frames.iter().map(|f| f.key.as_str()).collect();
    text_blocks.push(format!(
        "Evidence 3: {} frames seen while following {failed_dir}, oldest first, images {}-{}: {}.",
        failed_frames.len(),
        n_pano + 1,
        n_pano + failed_frames.len(),
        keys.join(", ")
    ));
    let mut images = panorama_images(waypoint_pano, opts.labels);
    images.extend(
        failed_frames
            .iter()
            .map(|f| encode(&f.view, &format!("frame {}", f.key), opts.labels)),
    );
    PromptPayload {
        text_blocks,
        images,
        metadata: metadata(CallKind::Recover, task, opts),
    }
}

pub fn build_verify_prompt(
    task: &TaskSpec,
    pano: &PanoramaObservation,
    answer: Option<&str>,
    todo: Option<&TodoList>,
    opts: &PromptOptions,
) -> PromptPayload {
    let mut text_blocks = vec![VERIFY.trim_end().to_string(), task_block(task)];
    if let Some(t) = todo {
        text_blocks.push(checklist_block(t));
    }
    text_blocks.push(match answer {
        Some(a) => format!("Proposed: stop here and answer {}.", serde_json::to_string(a).expect("string")),
        None => "Proposed: stop here.".to_string(),
    });
    PromptPayload {
        text_blocks,
        images: panorama_images(pano, opts.labels),
        metadata: metadata(CallKind::Verify, task, opts),
    }
}

/// `reasoning` is the direction rationale from the preceding language call.
pub fn build_vis_prompt(task: &TaskSpec, view: &View, reasoning: &str, opts: &PromptOptions) -> PromptPayload {
    let instr = VISION
        .replace("{{WIDTH}}", &view.width().to_string())
        .replace("{{HEIGHT}}", &view.height().to_string());
    let mut md = metadata(CallKind::Vision, task, opts);
    md.insert("view".into(), view.dir.as_str().into());
    PromptPayload {
        text_blocks: vec![
            instr.trim_end().to_string(),
            task_block(task),
            format!("Why this view was chosen: {reasoning}"),
        ],
        images: vec![encode(view, &format!("{} view", view.dir), opts.labels)],
        metadata: md,
    }
}
