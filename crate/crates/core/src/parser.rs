//! Drain-style template mining over a fixed-depth prefix tree.
//!
//! The tree is keyed first by token count, then by up to `depth − 2` leading
//! tokens. Tokens that contain a digit are routed through the `<*>` child
//! during descent only. Each leaf holds a list of template groups; a line
//! joins the most similar group when the positional token-equality ratio
//! reaches `sim_threshold`, otherwise it starts a new group.

use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WILDCARD: &str = "<*>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingRule {
    pub pattern: String,
    #[serde(default = "wildcard")]
    pub replacement: String,
}

fn wildcard() -> String {
    WILDCARD.to_string()
}

impl MaskingRule {
    pub fn new(pattern: impl Into<String>) -> Self {
        MaskingRule {
            pattern: pattern.into(),
            replacement: wildcard(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParserConfig {
    pub depth: usize,
    pub sim_threshold: f64,
    pub max_children: usize,
    pub masking_rules: Vec<MaskingRule>,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            depth: 4,
            sim_threshold: 0.4,
            max_children: 100,
            masking_rules: Vec::new(),
        }
    }
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(Error::config(format!("parser depth must be ≥ 3, got {}", self.depth)));
        }
        if !(self.sim_threshold > 0.0 && self.sim_threshold <= 1.0) {
            return Err(Error::config(format!(
                "similarity threshold must lie in (0, 1], got {}",
                self.sim_threshold
            )));
        }
        if self.max_children == 0 {
            return Err(Error::config("max_children must be at least 1"));
        }
        Ok(())
    }
}

/// Masking rules compiled once; an invalid pattern fails here, not per line.
#[derive(Debug, Clone, Default)]
pub struct Masker {
    rules: Vec<(Regex, String)>,
}

impl Masker {
    pub fn new(rules: &[MaskingRule]) -> Result<Self> {
        let rules = rules
            .iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|re| (re, r.replacement.clone()))
                    .map_err(|e| Error::config(format!("masking rule `{}`: {e}", r.pattern)))
            })
            .collect::<Result<_>>()?;
        Ok(Masker { rules })
    }

    /// Applies every rule in declared order.
    pub fn apply(&self, content: &str) -> String {
        let mut out = content.to_string();
        for (re, rep) in &self.rules {
            if re.is_match(&out) {
                out = re.replace_all(&out, rep.as_str()).into_owned();
            }
        }
        out
    }
}

pub fn preprocess_line(content: &str, masker: &Masker) -> String {
    masker.apply(content)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: usize,
    pub tokens: Vec<String>,
}

impl Template {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome {
    pub template_id: usize,
    pub parameters: Vec<String>,
}

#[derive(Debug, Default)]
struct Node {
    children: HashMap<String, Node>,
    groups: Vec<usize>,
}

fn has_digit(token: &str) -> bool {
    token.bytes().any(|b| b.is_ascii_digit())
}

/// The parse tree plus the mined templates.
#[derive(Debug)]
pub struct Drain {
    config: ParserConfig,
    roots: HashMap<usize, Node>,
    templates: Vec<Vec<String>>,
}

impl Drain {
    pub fn new(config: ParserConfig) -> Result<Self> {
        config.validate()?;
        Ok(Drain {
            config,
            roots: HashMap::new(),
            templates: Vec::new(),
        })
    }

    pub fn config(&self) -> &ParserConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    fn prefix_depth(&self) -> usize {
        self.config.depth - 2
    }

    /// Assigns `content` (already masked) to a template, creating or
    /// generalising one as needed.
    pub fn parse(&mut self, content: &str) -> Result<ParseOutcome> {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(Error::Parse {
                line: None,
                msg: "empty log content".into(),
            });
        }
        let id = match self.search(&tokens) {
            Some(id) => {
                let tpl = &mut self.templates[id];
                for (t, l) in tpl.iter_mut().zip(&tokens) {
                    if t != l {
                        *t = WILDCARD.to_string();
                    }
                }
                id
            }
            None => {
                let id = self.templates.len();
                self.templates
                    .push(tokens.iter().map(|t| t.to_string()).collect());
                self.insert(&tokens, id);
                id
            }
        };
        let parameters = self.templates[id]
            .iter()
            .zip(&tokens)
            .filter(|(t, _)| *t == WILDCARD)
            .map(|(_, l)| l.to_string())
            .collect();
        Ok(ParseOutcome {
            template_id: id,
            parameters,
        })
    }

    /// Read-only lookup: the template a line would join, if any.
    pub fn match_line(&self, content: &str) -> Option<usize> {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            return None;
        }
        self.search(&tokens)
    }

    fn search(&self, tokens: &[&str]) -> Option<usize> {
        let mut node = self.roots.get(&tokens.len())?;
        for token in tokens.iter().take(self.prefix_depth()) {
            node = match node.children.get(*token) {
                Some(child) => child,
                None => node.children.get(WILDCARD)?,
            };
        }
        let mut best: Option<(usize, usize, usize)> = None; // (equal, wildcards, id)
        for &id in &node.groups {
            let tpl = &self.templates[id];
            let equal = tpl.iter().zip(tokens).filter(|(t, l)| t.as_str() == **l).count();
            let wildcards = tpl.iter().filter(|t| *t == WILDCARD).count();
            let better = match best {
                None => true,
                Some((be, bw, _)) => equal > be || (equal == be && wildcards > bw),
            };
            if better {
                best = Some((equal, wildcards, id));
            }
        }
        let (equal, _, id) = best?;
        let sim = equal as f64 / tokens.len() as f64;
        (sim >= self.config.sim_threshold).then_some(id)
    }

    fn insert(&mut self, tokens: &[&str], id: usize) {
        let max_children = self.config.max_children;
        let depth = self.prefix_depth();
        let mut node = self.roots.entry(tokens.len()).or_default();
        for token in tokens.iter().take(depth) {
            let key = if node.children.contains_key(*token) {
                token.to_string()
            } else if has_digit(token) {
                WILDCARD.to_string()
            } else if node.children.contains_key(WILDCARD) {
                if node.children.len() < max_children {
                    token.to_string()
                } else {
                    WILDCARD.to_string()
                }
            } else if node.children.len() + 1 < max_children {
                token.to_string()
            } else {
                WILDCARD.to_string()
            };
            node = node.children.entry(key).or_default();
        }
        node.groups.push(id);
    }

    /// All templates, sorted by id (ids are dense from 0 in first-seen order).
    pub fn export_templates(&self) -> Vec<Template> {
        self.templates
            .iter()
            .enumerate()
            .map(|(template_id, tokens)| Template {
                template_id,
                tokens: tokens.clone(),
            })
            .collect()
    }
}

/// Masking followed by tree parsing.
#[derive(Debug)]
pub struct TemplateMiner {
    masker: Masker,
    drain: Drain,
}

impl TemplateMiner {
    pub fn new(config: ParserConfig) -> Result<Self> {
        let masker = Masker::new(&config.masking_rules)?;
        Ok(TemplateMiner {
            masker,
            drain: Drain::new(config)?,
        })
    }

    /// `None` when the line is empty after masking.
    pub fn process(&mut self, raw: &str) -> Result<Option<ParseOutcome>> {
        let masked = self.masker.apply(raw);
        if masked.trim().is_empty() {
            return Ok(None);
        }
        self.drain.parse(&masked).map(Some)
    }

    pub fn drain(&self) -> &Drain {
        &self.drain
    }

    pub fn export_templates(&self) -> Vec<Template> {
        self.drain.export_templates()
    }
}

/// Masking rules for common identifiers. Reasonable defaults, not tuned per dataset.
pub fn default_masking_rules() -> Vec<MaskingRule> {
    [
        r"blk_-?\d+",
        r"(/|)([0-9]+\.){3}[0-9]+(:[0-9]+|)(:|)",
        r"0x[0-9a-fA-F]+",
        r"\b[0-9a-fA-F]{16,}\b",
    ]
    .into_iter()
    .map(MaskingRule::new)
    // keep the separator captured before a bare number
    .chain(std::iter::once(MaskingRule {
        pattern: r"(^|\s)[-+]?\d+(\.\d+)?\b".into(),
        replacement: "${1}<*>".into(),
    }))
    .collect()
}

/// One input log line as produced by the dataset adapters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLogLine {
    pub line_no: usize,
    pub timestamp: i64,
    pub content: String,
    pub label: Option<u8>,
    pub session_key: Option<String>,
}

/// A parsed line: the `events.jsonl` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub line_no: usize,
    pub timestamp: i64,
    pub template_id: usize,
    pub label: Option<u8>,
    pub session_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedStream {
    pub templates: Vec<Template>,
    pub events: Vec<Event>,
    /// Lines that were empty after masking.
    pub dropped: usize,
}

/// Mines templates over `lines` in order.
pub fn parse_lines(lines: &[RawLogLine], config: &ParserConfig) -> Result<ParsedStream> {
    let mut miner = TemplateMiner::new(config.clone())?;
    let mut events = Vec::with_capacity(lines.len());
    let mut dropped = 0;
    for line in lines {
        if line.timestamp < 0 {
            return Err(Error::parse_at(line.line_no, "negative timestamp"));
        }
        match miner.process(&line.content)? {
            Some(out) => events.push(Event {
                line_no: line.line_no,
                timestamp: line.timestamp,
                template_id: out.template_id,
                label: line.label,
                session_key: line.session_key.clone(),
            }),
            None => {
                log::warn!("line {} is empty after masking; dropped", line.line_no);
                dropped += 1;
            }
        }
    }
    Ok(ParsedStream {
        templates: miner.export_templates(),
        events,
        dropped,
    })
}
