//! Prompt templates as plain text files. A template directory may
//! override any subset of the eight slots; missing files fall back to the
//! built-in defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nerval::prompt::PromptTemplates;

/// File names recognized inside a template directory, in slot order.
pub const TEMPLATE_FILES: [&str; 8] = [
    "system.txt",
    "user.txt",
    "exemplar.txt",
    "target.txt",
    "task_token.txt",
    "task_span.txt",
    "format_token.txt",
    "format_span.txt",
];

/// Loads templates from `dir`, or the defaults when `dir` is `None`.
/// Each file replaces one slot; one trailing newline is stripped so that
/// editor-terminated files render exactly like the defaults.
pub fn load(dir: Option<&Path>) -> Result<PromptTemplates> {
    let mut templates = PromptTemplates::default();
    let Some(dir) = dir else {
        return Ok(templates);
    };
    if !dir.is_dir() {
        bail!("template directory {} does not exist", dir.display());
    }
    {
        let slots: [&mut String; 8] = [
            &mut templates.system,
            &mut templates.user,
            &mut templates.exemplar,
            &mut templates.target,
            &mut templates.task_token,
            &mut templates.task_span,
            &mut templates.format_token,
            &mut templates.format_span,
        ];
        for (name, slot) in TEMPLATE_FILES.iter().zip(slots) {
            let path = dir.join(name);
            if path.is_file() {
                let mut text = std::fs::read_to_string(&path)
                    .with_context(|| format!("cannot read template {}", path.display()))?;
                if text.ends_with('\n') {
                    text.pop();
                    if text.ends_with('\r') {
                        text.pop();
                    }
                }
                *slot = text;
            }
        }
    }
    Ok(templates)
}
