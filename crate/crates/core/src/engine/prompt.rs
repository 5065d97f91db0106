//! Multimodal prompt representation and the stage-specific builders.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Mode;
use crate::memory::{FailureLesson, ShortTermMemory};
use crate::percept::render::SceneImage;
use crate::percept::{AnnotatedScene, MarkerSet};
use crate::skills::ParamSpec;

/// Asks for free-form reasoning before the answer block.
pub const REASONING_INSTRUCTION: &str =
    "Think step by step first: describe what you see, relate it to the task and to the execution history, then give the answer block.";
/// Replaces the reasoning instruction when reasoning is disabled.
pub const ANSWER_ONLY_INSTRUCTION: &str = "Reply with the answer block only.";
/// Heading under which lessons are injected.
pub const LESSON_HEADER: &str = "Lessons from earlier mistakes:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Subtask and skill selection.
    Skill,
    /// Parameter selection for the chosen skill.
    Parameter,
    /// Offline failure analysis during lesson curation.
    Analysis,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Skill => "skill",
            Stage::Parameter => "parameter",
            Stage::Analysis => "analysis",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PromptPart {
    Text(String),
    Image(SceneImage),
}

/// Ordered text and image parts sent to a backend as one user turn.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub stage: Stage,
    pub parts: Vec<PromptPart>,
}

impl Prompt {
    pub fn new(stage: Stage) -> Self {
        Self { stage, parts: Vec::new() }
    }

    pub fn text(&mut self, s: impl Into<String>) -> &mut Self {
        let s = s.into();
        // merge adjacent text so the byte layout is independent of how it was assembled
        if let Some(PromptPart::Text(prev)) = self.parts.last_mut() {
            prev.push_str(&s);
        } else {
            self.parts.push(PromptPart::Text(s));
        }
        self
    }

    pub fn image(&mut self, img: SceneImage) -> &mut Self {
        self.parts.push(PromptPart::Image(img));
        self
    }

    /// All text parts joined, with `[image]` placeholders.
    pub fn flat_text(&self) -> String {
        let mut out = String::new();
        for p in &self.parts {
            match p {
                PromptPart::Text(t) => out.push_str(t),
                PromptPart::Image(_) => out.push_str("[image]\n"),
            }
        }
        out
    }

    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, PromptPart::Image(_))).count()
    }

    pub fn images(&self) -> impl Iterator<Item = &SceneImage> {
        self.parts.iter().filter_map(|p| match p {
            PromptPart::Image(i) => Some(i),
            PromptPart::Text(_) => None,
        })
    }

    /// Hash over the stage, text bytes and image contents.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.stage.as_str().as_bytes());
        for p in &self.parts {
            match p {
                PromptPart::Text(t) => {
                    h.update(b"T");
                    h.update((t.len() as u64).to_le_bytes());
                    h.update(t.as_bytes());
                }
                PromptPart::Image(i) => {
                    h.update(b"I");
                    h.update(i.hash().as_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

const PREAMBLE: &str = "You are the decision module of a mobile manipulator robot working in a multi-floor building. \
At every step you choose one subtask and one skill; the skill's argument is chosen in a follow-up question.\n\n";

/// Everything the skill-selection prompt is built from.
pub struct Stage1Inputs<'a> {
    pub instruction: &'a str,
    pub location: &'a str,
    pub skills: &'a str,
    pub scene: &'a AnnotatedScene,
    pub stm: &'a ShortTermMemory,
    pub stm_images: usize,
    pub lessons: &'a [FailureLesson],
    pub mode: Mode,
    pub max_chars: usize,
}

fn push_lessons(p: &mut Prompt, lessons: &[FailureLesson], mode: Mode) {
    if !mode.uses_ltm() || lessons.is_empty() {
        return;
    }
    p.text(format!("{LESSON_HEADER}\n"));
    for l in lessons {
        p.text(l.render());
    }
    p.text("\n");
}

fn push_instruction(p: &mut Prompt, mode: Mode) {
    p.text(if mode.reasoning() { REASONING_INSTRUCTION } else { ANSWER_ONLY_INSTRUCTION });
    p.text("\n");
}

/// Skill-selection prompt. When it would exceed `max_chars` the oldest
/// history lines are dropped; the current scene is always kept.
pub fn build_stage1_prompt(inp: &Stage1Inputs) -> Prompt {
    let build = |stm_chars: Option<usize>| {
        let frag = inp.stm.render(inp.stm_images, stm_chars);
        let mut p = Prompt::new(Stage::Skill);
        p.text(PREAMBLE);
        p.text(format!("Task: {}\nRobot location: {}\n\nSkills:\n{}\n\n", inp.instruction, inp.location, inp.skills));
        p.text(format!("Execution history:\n{}", frag.text));
        if inp.mode.images() && !frag.images.is_empty() {
            let steps: Vec<String> = frag.images.iter().map(|(s, _)| s.to_string()).collect();
            p.text(format!("Scenes of steps {} follow in order.\n", steps.join(", ")));
            for (_, img) in &frag.images {
                p.image(img.clone());
            }
        }
        p.text("\n");
        push_lessons(&mut p, inp.lessons, inp.mode);
        if inp.mode.images() {
            p.text("Current scene (top-down view, visible things tagged obj N):\n");
            p.image(inp.scene.image.clone());
        } else {
            p.text("Current scene (text description):\n");
        }
        p.text(inp.scene.text.clone());
        p.text("\nIf the task is already complete, answer with skill: done.\n");
        push_instruction(&mut p, inp.mode);
        p.text("Answer format:\n```answer\nsubtask: <one sentence>\nskill: <skill name>\n```\n");
        (p, frag.text.len())
    };
    let (p, stm_len) = build(None);
    let total = p.flat_text().len();
    if total <= inp.max_chars {
        return p;
    }
    let fixed = total - stm_len;
    build(Some(inp.max_chars.saturating_sub(fixed))).0
}

/// Everything the parameter prompt is built from.
pub struct Stage2Inputs<'a> {
    pub instruction: &'a str,
    pub location: &'a str,
    pub subtask: &'a str,
    pub skill: &'a str,
    pub param: &'a ParamSpec,
    pub index: usize,
    pub count: usize,
    /// `name=value` of parameters chosen earlier in this step.
    pub chosen: &'a [String],
    pub scene: &'a AnnotatedScene,
    pub markers: &'a MarkerSet,
    /// Untagged raster used when markers are disabled.
    pub plain_image: Option<&'a SceneImage>,
    /// Option lines without ids, used when markers are disabled.
    pub plain_options: &'a [String],
    pub lessons: &'a [FailureLesson],
    pub mode: Mode,
}

pub fn build_stage2_prompt(inp: &Stage2Inputs) -> Prompt {
    let mut p = Prompt::new(Stage::Parameter);
    p.text(format!(
        "You are choosing the argument of a robot skill.\nTask: {}\nRobot location: {}\nSubtask: {}\nSkill: {}\nArgument: {} ({} of {})\n",
        inp.instruction,
        inp.location,
        inp.subtask,
        inp.skill,
        inp.param.name,
        inp.index + 1,
        inp.count
    ));
    if !inp.chosen.is_empty() {
        p.text(format!("Already chosen: {}\n", inp.chosen.join(", ")));
    }
    p.text("\n");
    push_lessons(&mut p, inp.lessons, inp.mode);
    if inp.mode.markers() {
        if inp.mode.images() {
            p.text("Options are tagged with their marker ids in the image:\n");
            p.image(inp.scene.image.clone());
        } else {
            p.text("Options:\n");
        }
        p.text(format!("{}\n\n", inp.markers.text_table()));
        push_instruction(&mut p, inp.mode);
        p.text("Answer format:\n```answer\nmarker: <id>\n```\n");
    } else {
        if let (true, Some(img)) = (inp.mode.images(), inp.plain_image) {
            p.text("Current view:\n");
            p.image(img.clone());
        }
        p.text("Visible options:\n");
        for o in inp.plain_options {
            p.text(format!("- {o}\n"));
        }
        p.text("\nDescribe the option to use in words; a detector will locate it.\n");
        push_instruction(&mut p, inp.mode);
        p.text("Answer format:\n```answer\ndescription: <short description>\n```\n");
    }
    p
}

/// Suffix appended for the single retry after an unparsable response.
pub fn format_reminder(err: &str, stage: Stage, mode: Mode) -> String {
    let block = match (stage, mode.markers()) {
        (Stage::Skill, _) => "```answer\nsubtask: <one sentence>\nskill: <skill name>\n```",
        (_, true) => "```answer\nmarker: <id>\n```",
        (_, false) => "```answer\ndescription: <short description>\n```",
    };
    format!("\nYour previous reply could not be used ({err}). End your reply with exactly this block:\n{block}\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    #[test]
    fn adjacent_text_is_merged() {
        let mut a = Prompt::new(Stage::Skill);
        a.text("ab").text("cd");
        let mut b = Prompt::new(Stage::Skill);
        b.text("abcd");
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.parts.len(), 1);
    }

    #[test]
    fn images_change_the_hash() {
        let mut a = Prompt::new(Stage::Skill);
        a.text("x").image(SceneImage::new(RgbImage::new(2, 2)));
        let mut b = Prompt::new(Stage::Skill);
        b.text("x").image(SceneImage::new(RgbImage::from_pixel(2, 2, image::Rgb([1, 1, 1]))));
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.image_count(), 1);
        assert_eq!(a.flat_text(), "x[image]\n");
    }
}
