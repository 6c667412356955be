//! Hierarchical prompt templates and their deterministic rendering.
//!
//! A template has four sections rendered in fixed order: Character, Skills,
//! Constraints, Structured Input. Templates are data, parsed from UTF-8
//! files with `## SECTION` delimiters and `{field}` placeholders; the crate
//! ships editable defaults. Rendering is a pure function of (context,
//! template): no clock, locale, or environment enters the output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::model::Timestamp;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template never references required field '{0}'")]
    MissingPlaceholder(String),
    #[error("template references unknown field '{0}'")]
    UnknownPlaceholder(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("summary context must have at least one entry")]
    EmptyEntries,
    #[error("invalid prompt context: {0}")]
    InvalidContext(String),
    #[error("failed to read template {path}: {message}")]
    Io { path: String, message: String },
}

/// Parsed four-section template. `structured_input` holds ordered
/// (field name, value template) pairs with unique names.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalPrompt {
    pub character: String,
    pub skills: Vec<String>,
    pub constraints: Vec<String>,
    pub structured_input: Vec<(String, String)>,
}

impl HierarchicalPrompt {
    /// Parse the on-disk template format: sections delimited by lines
    /// `## CHARACTER`, `## SKILLS`, `## CONSTRAINTS`, `## STRUCTURED_INPUT`.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for line in text.lines() {
            let trimmed = line.trim_end();
            if let Some(name) = trimmed.strip_prefix("## ") {
                let name = name.trim();
                if !matches!(
                    name,
                    "CHARACTER" | "SKILLS" | "CONSTRAINTS" | "STRUCTURED_INPUT"
                ) {
                    return Err(PromptError::InvalidTemplate(format!(
                        "unknown section '{name}'"
                    )));
                }
                if sections.contains_key(name) {
                    return Err(PromptError::InvalidTemplate(format!(
                        "duplicate section '{name}'"
                    )));
                }
                sections.insert(name, Vec::new());
                current = Some(name);
                continue;
            }
            match current {
                Some(name) => sections.get_mut(name).unwrap().push(trimmed),
                None if trimmed.is_empty() => {}
                None => {
                    return Err(PromptError::InvalidTemplate(
                        "content before the first section header".into(),
                    ))
                }
            }
        }

        let section = |name: &str| -> Result<Vec<&str>, PromptError> {
            sections
                .get(name)
                .cloned()
                .ok_or_else(|| PromptError::InvalidTemplate(format!("missing section '{name}'")))
        };
        let items = |lines: Vec<&str>| -> Vec<String> {
            lines
                .into_iter()
                .filter(|l| !l.is_empty())
                .map(|l| l.strip_prefix("- ").unwrap_or(l).to_string())
                .collect()
        };

        let character = section("CHARACTER")?
            .into_iter()
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if character.is_empty() {
            return Err(PromptError::InvalidTemplate(
                "empty CHARACTER section".into(),
            ));
        }
        let skills = items(section("SKILLS")?);
        let constraints = items(section("CONSTRAINTS")?);

        let mut structured_input = Vec::new();
        for line in section("STRUCTURED_INPUT")? {
            if line.is_empty() {
                continue;
            }
            let (name, value) = line.split_once(':').ok_or_else(|| {
                PromptError::InvalidTemplate(format!(
                    "structured input line '{line}' lacks 'name: value'"
                ))
            })?;
            let name = name.trim().to_string();
            if structured_input.iter().any(|(n, _)| *n == name) {
                return Err(PromptError::InvalidTemplate(format!(
                    "duplicate structured input field '{name}'"
                )));
            }
            structured_input.push((name, value.trim().to_string()));
        }

        Ok(HierarchicalPrompt {
            character,
            skills,
            constraints,
            structured_input,
        })
    }

    pub fn parse_file(path: &Path) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

/// Window context for one differential caption: the two frame positions,
/// their timestamps, and the previous caption text.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffPromptContext {
    pub prev_frame_index: usize,
    pub cur_frame_index: usize,
    pub prev_timestamp: Timestamp,
    pub cur_timestamp: Timestamp,
    pub prev_differential_caption: String,
}

impl DiffPromptContext {
    fn validate(&self) -> Result<(), PromptError> {
        if self.cur_frame_index <= self.prev_frame_index {
            return Err(PromptError::InvalidContext(format!(
                "current frame index {} must exceed previous {}",
                self.cur_frame_index, self.prev_frame_index
            )));
        }
        if self.cur_timestamp <= self.prev_timestamp {
            return Err(PromptError::InvalidContext(format!(
                "current timestamp {} must exceed previous {}",
                self.cur_timestamp, self.prev_timestamp
            )));
        }
        Ok(())
    }
}

/// Timestamped caption entries for the summary stage, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryPromptContext {
    pub entries: Vec<(Timestamp, String)>,
}

impl SummaryPromptContext {
    pub fn new(entries: Vec<(Timestamp, String)>) -> Result<Self, PromptError> {
        if entries.is_empty() {
            return Err(PromptError::EmptyEntries);
        }
        if !entries.windows(2).all(|pair| pair[0].0 < pair[1].0) {
            return Err(PromptError::InvalidContext(
                "summary entries must be strictly increasing in time".into(),
            ));
        }
        Ok(SummaryPromptContext { entries })
    }
}

fn substitute(
    text: &str,
    fields: &BTreeMap<&str, String>,
    used: &mut Vec<String>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let Some(close) = rest[open..].find('}') else {
            return Err(PromptError::InvalidTemplate(format!(
                "unterminated placeholder in '{text}'"
            )));
        };
        let name = &rest[open + 1..open + close];
        match fields.get(name) {
            Some(value) => {
                out.push_str(value);
                used.push(name.to_string());
            }
            None => return Err(PromptError::UnknownPlaceholder(name.to_string())),
        }
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Render the four sections with placeholder substitution. Every field in
/// `fields` must be referenced somewhere in the template, and every
/// placeholder must be a known field; both directions are errors.
fn render(
    template: &HierarchicalPrompt,
    fields: &BTreeMap<&str, String>,
) -> Result<String, PromptError> {
    let mut used = Vec::new();
    let mut out = String::new();

    out.push_str("# Character\n");
    out.push_str(&substitute(&template.character, fields, &mut used)?);
    out.push_str("\n\n# Skills\n");
    for skill in &template.skills {
        out.push_str("- ");
        out.push_str(&substitute(skill, fields, &mut used)?);
        out.push('\n');
    }
    out.push_str("\n# Constraints\n");
    for constraint in &template.constraints {
        out.push_str("- ");
        out.push_str(&substitute(constraint, fields, &mut used)?);
        out.push('\n');
    }
    out.push_str("\n# Structured Input\n");
    for (name, value) in &template.structured_input {
        out.push_str(name);
        out.push_str(": ");
        out.push_str(&substitute(value, fields, &mut used)?);
        out.push('\n');
    }

    for field in fields.keys() {
        if !used.iter().any(|u| u == field) {
            return Err(PromptError::MissingPlaceholder((*field).to_string()));
        }
    }
    Ok(out)
}

/// Prompt for describing the change between two adjacent keyframes.
pub fn render_differential_prompt(
    ctx: &DiffPromptContext,
    template: &HierarchicalPrompt,
) -> Result<String, PromptError> {
    ctx.validate()?;
    let fields = BTreeMap::from([
        ("prev_frame_index", ctx.prev_frame_index.to_string()),
        ("cur_frame_index", ctx.cur_frame_index.to_string()),
        ("prev_timestamp", ctx.prev_timestamp.render_seconds()),
        ("cur_timestamp", ctx.cur_timestamp.render_seconds()),
        (
            "prev_differential_caption",
            ctx.prev_differential_caption.clone(),
        ),
    ]);
    render(template, &fields)
}

/// Prompt fusing all timestamped differential captions into one caption.
/// Entries render one per line as `- [<seconds>] <text>`.
pub fn render_summary_prompt(
    ctx: &SummaryPromptContext,
    template: &HierarchicalPrompt,
) -> Result<String, PromptError> {
    if ctx.entries.is_empty() {
        return Err(PromptError::EmptyEntries);
    }
    if !ctx.entries.windows(2).all(|pair| pair[0].0 < pair[1].0) {
        return Err(PromptError::InvalidContext(
            "summary entries must be strictly increasing in time".into(),
        ));
    }
    let mut block = String::new();
    for (timestamp, text) in &ctx.entries {
        block.push_str("\n- [");
        block.push_str(&timestamp.render_seconds());
        block.push_str("] ");
        block.push_str(text);
    }
    let fields = BTreeMap::from([("differential_captions", block)]);
    render(template, &fields)
}

/// Standalone description prompt for the first keyframe; carries no
/// previous-frame fields.
pub fn render_first_frame_prompt(
    frame_index: usize,
    timestamp: Timestamp,
    template: &HierarchicalPrompt,
) -> Result<String, PromptError> {
    let fields = BTreeMap::from([
        ("frame_index", frame_index.to_string()),
        ("timestamp", timestamp.render_seconds()),
    ]);
    render(template, &fields)
}

/// Caption prompt for a vertical keyframe montage.
pub fn render_fast_prompt(
    frame_count: usize,
    template: &HierarchicalPrompt,
) -> Result<String, PromptError> {
    let fields = BTreeMap::from([("frame_count", frame_count.to_string())]);
    render(template, &fields)
}

/// Prompt asking for a short user-style generation prompt condensed from a
/// dense caption.
pub fn render_condense_prompt(
    dense_caption: &str,
    template: &HierarchicalPrompt,
) -> Result<String, PromptError> {
    let fields = BTreeMap::from([("dense_caption", dense_caption.to_string())]);
    render(template, &fields)
}

/// The five templates the pipeline renders with. Each can be overridden by
/// a file in a template directory; anything absent falls back to the
/// built-in default.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub differential: HierarchicalPrompt,
    pub first_frame: HierarchicalPrompt,
    pub summary: HierarchicalPrompt,
    pub fast: HierarchicalPrompt,
    pub condense: HierarchicalPrompt,
}

const DEFAULT_DIFFERENTIAL: &str = include_str!("../templates/differential.txt");
const DEFAULT_FIRST_FRAME: &str = include_str!("../templates/first_frame.txt");
const DEFAULT_SUMMARY: &str = include_str!("../templates/summary.txt");
const DEFAULT_FAST: &str = include_str!("../templates/fast.txt");
const DEFAULT_CONDENSE: &str = include_str!("../templates/condense.txt");

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            differential: HierarchicalPrompt::parse(DEFAULT_DIFFERENTIAL)
                .expect("builtin differential template"),
            first_frame: HierarchicalPrompt::parse(DEFAULT_FIRST_FRAME)
                .expect("builtin first_frame template"),
            summary: HierarchicalPrompt::parse(DEFAULT_SUMMARY).expect("builtin summary template"),
            fast: HierarchicalPrompt::parse(DEFAULT_FAST).expect("builtin fast template"),
            condense: HierarchicalPrompt::parse(DEFAULT_CONDENSE)
                .expect("builtin condense template"),
        }
    }

    /// Load overrides from a directory holding any of `differential.txt`,
    /// `first_frame.txt`, `summary.txt`, `fast.txt`, `condense.txt`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        let load = |name: &str, slot: &mut HierarchicalPrompt| -> Result<(), PromptError> {
            let path = dir.join(name);
            if path.exists() {
                *slot = HierarchicalPrompt::parse_file(&path)?;
            }
            Ok(())
        };
        load("differential.txt", &mut set.differential)?;
        load("first_frame.txt", &mut set.first_frame)?;
        load("summary.txt", &mut set.summary)?;
        load("fast.txt", &mut set.fast)?;
        load("condense.txt", &mut set.condense)?;
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diff_ctx() -> DiffPromptContext {
        DiffPromptContext {
            prev_frame_index: 1,
            cur_frame_index: 2,
            prev_timestamp: Timestamp::from_secs(2),
            cur_timestamp: Timestamp::from_secs(4),
            prev_differential_caption: "A man stands.".into(),
        }
    }

    #[test]
    fn differential_rendering_is_deterministic_and_verbatim() {
        let templates = TemplateSet::builtin();
        let a = render_differential_prompt(&diff_ctx(), &templates.differential).unwrap();
        let b = render_differential_prompt(&diff_ctx(), &templates.differential).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("A man stands."));
        assert!(a.contains("2.000"));
        assert!(a.contains("4.000"));
    }

    #[test]
    fn section_order_is_fixed_for_all_prompt_kinds() {
        let templates = TemplateSet::builtin();
        let rendered = [
            render_differential_prompt(&diff_ctx(), &templates.differential).unwrap(),
            render_first_frame_prompt(0, Timestamp::ZERO, &templates.first_frame).unwrap(),
            render_summary_prompt(
                &SummaryPromptContext::new(vec![(Timestamp::ZERO, "x".into())]).unwrap(),
                &templates.summary,
            )
            .unwrap(),
            render_fast_prompt(4, &templates.fast).unwrap(),
            render_condense_prompt("dense", &templates.condense).unwrap(),
        ];
        for prompt in rendered {
            let character = prompt.find("# Character").unwrap();
            let skills = prompt.find("# Skills").unwrap();
            let constraints = prompt.find("# Constraints").unwrap();
            let structured = prompt.find("# Structured Input").unwrap();
            assert!(character < skills && skills < constraints && constraints < structured);
        }
    }

    #[test]
    fn first_frame_prompt_has_no_previous_frame_fields() {
        let templates = TemplateSet::builtin();
        let prompt = render_first_frame_prompt(0, Timestamp::ZERO, &templates.first_frame).unwrap();
        assert!(!prompt.to_lowercase().contains("previous"));
        let again = render_first_frame_prompt(0, Timestamp::ZERO, &templates.first_frame).unwrap();
        assert_eq!(prompt, again);
    }

    #[test]
    fn summary_single_entry_renders_one_block() {
        let templates = TemplateSet::builtin();
        let ctx = SummaryPromptContext::new(vec![(Timestamp::from_secs(3), "only entry".into())])
            .unwrap();
        let prompt = render_summary_prompt(&ctx, &templates.summary).unwrap();
        assert_eq!(prompt.matches("- [").count(), 1);
        assert!(prompt.contains("- [3.000] only entry"));
    }

    #[test]
    fn summary_rejects_unordered_and_empty_entries() {
        assert!(matches!(
            SummaryPromptContext::new(vec![]),
            Err(PromptError::EmptyEntries)
        ));
        let shuffled = SummaryPromptContext::new(vec![
            (Timestamp::from_secs(4), "b".into()),
            (Timestamp::from_secs(2), "a".into()),
        ]);
        assert!(matches!(shuffled, Err(PromptError::InvalidContext(_))));
    }

    #[test]
    fn context_invariants_are_enforced() {
        let mut ctx = diff_ctx();
        ctx.cur_frame_index = 1;
        let templates = TemplateSet::builtin();
        assert!(matches!(
            render_differential_prompt(&ctx, &templates.differential),
            Err(PromptError::InvalidContext(_))
        ));
    }

    #[test]
    fn template_missing_a_required_field_is_an_error() {
        let text = "## CHARACTER\nc\n## SKILLS\n## CONSTRAINTS\n## STRUCTURED_INPUT\nindex: {frame_index}\n";
        let template = HierarchicalPrompt::parse(text).unwrap();
        // No {timestamp} placeholder anywhere.
        assert!(matches!(
            render_first_frame_prompt(0, Timestamp::ZERO, &template),
            Err(PromptError::MissingPlaceholder(f)) if f == "timestamp"
        ));
    }

    #[test]
    fn unknown_placeholder_is_an_error() {
        let text = "## CHARACTER\nc {mystery}\n## SKILLS\n## CONSTRAINTS\n## STRUCTURED_INPUT\nindex: {frame_index}\ntime: {timestamp}\n";
        let template = HierarchicalPrompt::parse(text).unwrap();
        assert!(matches!(
            render_first_frame_prompt(0, Timestamp::ZERO, &template),
            Err(PromptError::UnknownPlaceholder(f)) if f == "mystery"
        ));
    }

    #[test]
    fn rendering_ignores_locale_and_environment() {
        let templates = TemplateSet::builtin();
        let before = render_differential_prompt(&diff_ctx(), &templates.differential).unwrap();
        std::env::set_var("LC_ALL", "de_DE.UTF-8");
        std::env::set_var("LANG", "de_DE.UTF-8");
        let after = render_differential_prompt(&diff_ctx(), &templates.differential).unwrap();
        std::env::remove_var("LC_ALL");
        std::env::remove_var("LANG");
        assert_eq!(before, after);
    }

    #[test]
    fn duplicate_structured_field_names_are_rejected() {
        let text = "## CHARACTER\nc\n## SKILLS\n## CONSTRAINTS\n## STRUCTURED_INPUT\na: 1\na: 2\n";
        assert!(matches!(
            HierarchicalPrompt::parse(text),
            Err(PromptError::InvalidTemplate(_))
        ));
    }
}
