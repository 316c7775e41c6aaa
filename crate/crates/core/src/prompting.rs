//! Prompt construction and reply parsing.
//!
//! A prompt is the task description with two placeholders filled in:
//! `{examples}` receives the rendered example set and `{state}` the query
//! state. Example lines follow a fixed grammar so that they can be parsed
//! back, which the mock model relies on.

use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::experience::{Example, ExampleSet};
use crate::netsim::Case;

pub const EXAMPLES_PLACEHOLDER: &str = "{examples}";
pub const STATE_PLACEHOLDER: &str = "{state}";

pub const TASK_GOAL: &str = "Task goal: You have a decision-making task for base station power control, and you need to select between 4 power levels from 1 to 4.";
pub const TASK_DEFINITION_USERS: &str =
    "Task definition: You have to consider the specific user number of each case, which is the “BS user number”.";
pub const TASK_DEFINITION_DISTANCE: &str = "Task definition: You have to consider the average distance between the BS and its users of each case, which is the “average user distance”.";
pub const EXAMPLES_INTRO: &str = "Following are some examples:";
pub const QUERY_USERS: &str = "Now I will give you a new condition to solve, the current BS user number is {state}.";
pub const QUERY_DISTANCE: &str =
    "Now I will give you a new condition to solve, the current average user distance is {state} m.";
pub const TASK_RULES: &str = "Rules: Now please select from “level 1”, “level 2”, “level 3”, and “level 4” based on the above examples.";

pub const GOOD_HEADER: &str = "Good examples:";
pub const BAD_HEADER: &str = "Bad examples to avoid:";

/// Appended to the prompt when a reply could not be parsed.
pub const RETRY_CLARIFICATION: &str = "Reply with exactly one of: level 1, level 2, level 3, level 4.";

pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template must contain exactly one {placeholder} placeholder, found {found}")]
    Placeholder { placeholder: &'static str, found: usize },
    #[error("malformed example line: {0:?}")]
    ExampleLine(String),
    #[error("malformed prompt: {0}")]
    Prompt(String),
    #[error("no power level found in reply {0:?}")]
    NoLevel(String),
    #[error("level {level} outside 1..=4 in reply {reply:?}")]
    LevelOutOfRange { level: u64, reply: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    /// Accepts any text with exactly one `{examples}` and one `{state}`.
    pub fn from_text(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        for placeholder in [EXAMPLES_PLACEHOLDER, STATE_PLACEHOLDER] {
            let found = text.matches(placeholder).count();
            if found != 1 {
                return Err(PromptError::Placeholder { placeholder, found });
            }
        }
        Ok(Self { text })
    }

    /// The built-in task description. The continuous case only swaps the
    /// state label.
    pub fn default_for(case: Case) -> Self {
        let (definition, query) = match case {
            Case::Discrete => (TASK_DEFINITION_USERS, QUERY_USERS),
            Case::Continuous => (TASK_DEFINITION_DISTANCE, QUERY_DISTANCE),
        };
        let text = [TASK_GOAL, definition, EXAMPLES_INTRO, EXAMPLES_PLACEHOLDER, query, TASK_RULES].join("\n");
        Self { text }
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub text: String,
    pub example_count: usize,
    pub state_text: String,
    pub bs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAction {
    pub level: u8,
    pub raw: String,
}

/// How a state value appears in prompts: integer user counts, or distances
/// rounded to 0.1 m.
pub fn render_state(state: f64, case: Case) -> String {
    match case {
        Case::Discrete => format!("{}", state.round() as i64),
        Case::Continuous => format!("{state:.1}"),
    }
}

pub fn render_example(ex: &Example, case: Case) -> String {
    let state = match case {
        Case::Discrete => format!("BS user number: {}", render_state(ex.state, case)),
        Case::Continuous => format!("average user distance: {} m", render_state(ex.state, case)),
    };
    format!(
        "- {state}, chosen power: level {}, reward: {:.2}, data-rate constraint: {}",
        ex.action,
        ex.reward,
        if ex.constraint_ok { "met" } else { "violated" }
    )
}

/// An example line read back from a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedExample {
    pub case: Case,
    pub state: f64,
    pub state_text: String,
    pub action: u8,
    pub reward: f64,
    pub constraint_ok: bool,
}

fn example_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^- (?:BS user number: (?P<users>-?\d+)|average user distance: (?P<dist>-?\d+(?:\.\d+)?) m), chosen power: level (?P<level>\d+), reward: (?P<reward>-?\d+\.\d+), data-rate constraint: (?P<ok>met|violated)$",
        )
        .unwrap()
    })
}

pub fn parse_example_line(line: &str) -> Result<ParsedExample, PromptError> {
    let bad = || PromptError::ExampleLine(line.to_string());
    let caps = example_line_re().captures(line.trim_end()).ok_or_else(bad)?;
    let (case, state_text) = match (caps.name("users"), caps.name("dist")) {
        (Some(m), _) => (Case::Discrete, m.as_str()),
        (_, Some(m)) => (Case::Continuous, m.as_str()),
        _ => return Err(bad()),
    };
    Ok(ParsedExample {
        case,
        state: state_text.parse().map_err(|_| bad())?,
        state_text: state_text.to_string(),
        action: caps["level"].parse().map_err(|_| bad())?,
        reward: caps["reward"].parse().map_err(|_| bad())?,
        constraint_ok: &caps["ok"] == "met",
    })
}

fn render_example_block(set: &ExampleSet, case: Case) -> String {
    let mut block = String::new();
    block.push_str(GOOD_HEADER);
    for ex in &set.recommended {
        let _ = write!(block, "\n{}", render_example(ex, case));
    }
    let _ = write!(block, "\n{BAD_HEADER}");
    for ex in &set.inadvisable {
        let _ = write!(block, "\n{}", render_example(ex, case));
    }
    block
}

/// Fills the template with the example set and the query state.
pub fn build_prompt(
    template: &PromptTemplate,
    set: &ExampleSet,
    state: f64,
    case: Case,
    bs: usize,
) -> Result<PromptBundle, PromptError> {
    // Re-check in case the template was built by hand.
    let template = PromptTemplate::from_text(template.text.clone())?;
    let state_text = render_state(state, case);
    let text = template
        .text
        .replace(EXAMPLES_PLACEHOLDER, &render_example_block(set, case))
        .replace(STATE_PLACEHOLDER, &state_text);
    Ok(PromptBundle { text, example_count: set.len(), state_text, bs })
}

/// The prompt as sent on a given attempt; retries carry the clarification line.
pub fn prompt_for_attempt(bundle: &PromptBundle, attempt: u32) -> String {
    if attempt == 0 {
        bundle.text.clone()
    } else {
        format!("{}\n{RETRY_CLARIFICATION}", bundle.text)
    }
}

fn level_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\blevel\s*(\d+)").unwrap())
}

/// Takes the last `level <n>` mention in the reply.
pub fn parse_action(reply: &str) -> Result<ParsedAction, PromptError> {
    let last = level_re()
        .captures_iter(reply)
        .last()
        .ok_or_else(|| PromptError::NoLevel(reply.to_string()))?;
    let digits = &last[1];
    let level: u64 = digits.parse().unwrap_or(u64::MAX);
    if !(MIN_LEVEL as u64..=MAX_LEVEL as u64).contains(&level) {
        return Err(PromptError::LevelOutOfRange { level, reply: reply.to_string() });
    }
    Ok(ParsedAction { level: level as u8, raw: reply.to_string() })
}

/// Structured view of a prompt produced by [`build_prompt`] with the default
/// templates.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptView {
    pub case: Case,
    pub target: f64,
    pub target_text: String,
    pub good: Vec<ParsedExample>,
    pub bad: Vec<ParsedExample>,
}

fn query_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"the current (?:BS user number is (?P<users>-?\d+)\.|average user distance is (?P<dist>-?\d+(?:\.\d+)?) m\.)",
        )
        .unwrap()
    })
}

pub fn parse_prompt(text: &str) -> Result<PromptView, PromptError> {
    let caps = query_re()
        .captures(text)
        .ok_or_else(|| PromptError::Prompt("no query state".to_string()))?;
    let (case, target_text) = match (caps.name("users"), caps.name("dist")) {
        (Some(m), _) => (Case::Discrete, m.as_str().to_string()),
        (_, Some(m)) => (Case::Continuous, m.as_str().to_string()),
        _ => unreachable!("query regex has two alternatives"),
    };
    let target = target_text
        .parse()
        .map_err(|_| PromptError::Prompt(format!("bad query state {target_text:?}")))?;

    enum Section {
        None,
        Good,
        Bad,
    }
    let mut section = Section::None;
    let mut seen_good = false;
    let mut seen_bad = false;
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for line in text.lines() {
        if line == GOOD_HEADER {
            section = Section::Good;
            seen_good = true;
        } else if line == BAD_HEADER {
            section = Section::Bad;
            seen_bad = true;
        } else if line.starts_with("- ") {
            let ex = parse_example_line(line)?;
            if ex.case != case {
                return Err(PromptError::Prompt(format!("example state kind differs from query: {line:?}")));
            }
            match section {
                Section::Good => good.push(ex),
                Section::Bad => bad.push(ex),
                Section::None => return Err(PromptError::Prompt(format!("example outside a section: {line:?}"))),
            }
        } else {
            section = Section::None;
        }
    }
    if !seen_good || !seen_bad {
        return Err(PromptError::Prompt("missing example section headers".to_string()));
    }
    Ok(PromptView { case, target, target_text, good, bad })
}
