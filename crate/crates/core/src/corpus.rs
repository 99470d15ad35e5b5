//! Corpus ingestion and preprocessing: filtering, refinement, numeric
//! calibration and paragraph segmentation.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_RULES: &str = include_str!("../default_rules.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub subject: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub doc_id: String,
    pub subject: String,
    pub paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_subjects: usize,
    pub num_documents: usize,
    pub num_tokens: usize,
}

impl RawDocument {
    pub fn new(doc_id: impl Into<String>, subject: impl Into<String>, text: impl Into<String>) -> Self {
        RawDocument {
            doc_id: doc_id.into(),
            subject: subject.into(),
            text: text.into(),
        }
    }

    fn with_text(&self, text: String) -> RawDocument {
        RawDocument {
            doc_id: self.doc_id.clone(),
            subject: self.subject.clone(),
            text,
        }
    }
}

/// A list of paragraph predicates. A paragraph matches when any pattern does.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    patterns: Vec<Regex>,
}

pub type FilterRuleSet = RuleSet;
pub type RefineRuleSet = RuleSet;

impl RuleSet {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let patterns = patterns
            .iter()
            .map(|p| {
                Regex::new(p.as_ref()).map_err(|source| ForgeError::Rule {
                    pattern: p.as_ref().to_string(),
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RuleSet { patterns })
    }

    pub fn matches(&self, paragraph: &str) -> bool {
        self.patterns.iter().any(|re| re.is_match(paragraph))
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub rejoin_breaks: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { rejoin_breaks: true }
    }
}

/// The three rule groups loaded from one pattern file.
#[derive(Debug, Clone)]
pub struct Rules {
    pub filter: FilterRuleSet,
    pub refine: RefineRuleSet,
    pub calibration: CalibrationOptions,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    #[serde(default)]
    filter: PatternList,
    #[serde(default)]
    refine: PatternList,
    #[serde(default)]
    calibration: Option<CalibrationOptions>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternList {
    #[serde(default)]
    patterns: Vec<String>,
}

impl Rules {
    pub fn parse(source: &str) -> Result<Self> {
        let file: RulesFile = toml::from_str(source).map_err(|e| ForgeError::Config(format!("rules file: {e}")))?;
        Ok(Rules {
            filter: RuleSet::new(&file.filter.patterns)?,
            refine: RuleSet::new(&file.refine.patterns)?,
            calibration: file.calibration.unwrap_or_default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        Rules::parse(&source)
    }

    pub fn empty() -> Self {
        Rules {
            filter: RuleSet::default(),
            refine: RuleSet::default(),
            calibration: CalibrationOptions::default(),
        }
    }
}

impl Default for Rules {
    fn default() -> Self {
        Rules::parse(DEFAULT_RULES).expect("built-in rules parse")
    }
}

/// Trimmed, non-empty blocks of text separated by blank lines.
fn blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                out.push(text[s..end].trim());
            }
        } else {
            start.get_or_insert(offset);
            end = offset + line.len();
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push(text[s..end].trim());
    }
    out
}

fn drop_matching(doc: &RawDocument, rules: &RuleSet) -> Result<RawDocument> {
    let all = blocks(&doc.text);
    let kept: Vec<&str> = all.iter().copied().filter(|b| !rules.matches(b)).collect();
    if kept.is_empty() {
        return Err(ForgeError::DocumentEmptied {
            doc_id: doc.doc_id.clone(),
        });
    }
    if kept.len() == all.len() {
        return Ok(doc.clone());
    }
    Ok(doc.with_text(kept.join("\n\n")))
}

/// Removes publication information, reference lists and similar paragraphs.
pub fn filter_document(doc: &RawDocument, rules: &FilterRuleSet) -> Result<RawDocument> {
    drop_matching(doc, rules)
}

/// Removes tables of contents and section headings.
pub fn refine_document(doc: &RawDocument, rules: &RefineRuleSet) -> Result<RawDocument> {
    drop_matching(doc, rules)
}

static SPLIT_BY_SPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([0-9]\.?) (\.?[0-9])").unwrap());
static SPLIT_BY_BREAK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([0-9])[ \t]*\r?\n(?:[ \t]*\r?\n)+[ \t]*(\.?[0-9])").unwrap());

fn rejoin_all(re: &Regex, text: &str) -> String {
    let mut current = text.to_string();
    // matches consume their digits, so "1 2 3" needs a second sweep
    loop {
        let next = re
            .replace_all(&current, |caps: &Captures| {
                let (left, right) = (&caps[1], &caps[2]);
                if left.ends_with('.') && right.starts_with('.') {
                    caps[0].to_string()
                } else {
                    format!("{left}{right}")
                }
            })
            .into_owned();
        if next == current {
            return next;
        }
        current = next;
    }
}

pub fn calibrate_numerics(doc: &RawDocument) -> RawDocument {
    calibrate_numerics_with(doc, CalibrationOptions::default())
}

/// Glues numbers split by a single space ("3. 5" -> "3.5") and, when enabled,
/// numbers split across a paragraph break.
pub fn calibrate_numerics_with(doc: &RawDocument, options: CalibrationOptions) -> RawDocument {
    let mut text = rejoin_all(&SPLIT_BY_SPACE, &doc.text);
    if options.rejoin_breaks {
        text = rejoin_all(&SPLIT_BY_BREAK, &text);
        text = rejoin_all(&SPLIT_BY_SPACE, &text);
    }
    doc.with_text(text)
}

pub fn segment_paragraphs(doc: &RawDocument) -> Result<CleanDocument> {
    let paragraphs: Vec<Paragraph> = blocks(&doc.text)
        .into_iter()
        .enumerate()
        .map(|(index, text)| Paragraph {
            index,
            text: text.to_string(),
        })
        .collect();
    if paragraphs.is_empty() {
        return Err(ForgeError::DocumentEmptied {
            doc_id: doc.doc_id.clone(),
        });
    }
    Ok(CleanDocument {
        doc_id: doc.doc_id.clone(),
        subject: doc.subject.clone(),
        paragraphs,
    })
}

/// filter -> refine -> calibrate -> segment
pub fn preprocess(doc: &RawDocument, rules: &Rules) -> Result<CleanDocument> {
    let doc = filter_document(doc, &rules.filter)?;
    let doc = refine_document(&doc, &rules.refine)?;
    let doc = calibrate_numerics_with(&doc, rules.calibration);
    segment_paragraphs(&doc)
}

pub fn corpus_stats(docs: &[CleanDocument], tokenizer: &dyn Tokenizer) -> CorpusStats {
    let subjects: BTreeSet<&str> = docs.iter().map(|d| d.subject.as_str()).collect();
    let num_tokens = docs
        .iter()
        .flat_map(|d| &d.paragraphs)
        .map(|p| tokenizer.count(&p.text))
        .sum();
    CorpusStats {
        num_subjects: subjects.len(),
        num_documents: docs.len(),
        num_tokens,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub doc_id: String,
    pub subject: String,
}

/// Reads the manifest (a JSON array of `{file, doc_id, subject}`) and the
/// documents it lists. Relative paths resolve against the manifest directory.
pub fn load_manifest(path: &Path) -> Result<Vec<RawDocument>> {
    let source = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&source).map_err(|e| ForgeError::json(format!("manifest {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut docs = Vec::with_capacity(entries.len());
    for entry in entries {
        if entry.doc_id.is_empty() {
            return Err(ForgeError::Input(format!("{}: empty doc_id", path.display())));
        }
        if !seen.insert(entry.doc_id.clone()) {
            return Err(ForgeError::Input(format!("duplicate doc_id `{}`", entry.doc_id)));
        }
        let file = base.join(&entry.file);
        let text = fs::read_to_string(&file).map_err(|e| ForgeError::io(&file, e))?;
        if text.trim().is_empty() {
            return Err(ForgeError::DocumentEmptied { doc_id: entry.doc_id });
        }
        docs.push(RawDocument::new(entry.doc_id, entry.subject, text));
    }
    Ok(docs)
}

/// One line of the clean-corpus JSON Lines file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParagraphRecord {
    pub doc_id: String,
    pub subject: String,
    pub index: usize,
    pub text: String,
}

pub fn write_corpus_jsonl<W: Write>(docs: &[CleanDocument], mut out: W) -> std::io::Result<()> {
    for doc in docs {
        for p in &doc.paragraphs {
            let record = ParagraphRecord {
                doc_id: doc.doc_id.clone(),
                subject: doc.subject.clone(),
                index: p.index,
                text: p.text.clone(),
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Regroups paragraph records into documents, keeping first-appearance order.
pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<CleanDocument>> {
    let file = fs::File::open(path).map_err(|e| ForgeError::io(path, e))?;
    let mut docs: Vec<CleanDocument> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ForgeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ParagraphRecord = serde_json::from_str(&line)
            .map_err(|e| ForgeError::json(format!("{}:{}", path.display(), lineno + 1), e))?;
        match docs.last_mut() {
            Some(doc) if doc.doc_id == rec.doc_id => {
                if rec.index != doc.paragraphs.len() {
                    return Err(ForgeError::Input(format!(
                        "{}:{}: paragraph index {} out of sequence",
                        path.display(),
                        lineno + 1,
                        rec.index
                    )));
                }
                doc.paragraphs.push(Paragraph {
                    index: rec.index,
                    text: rec.text,
                });
            }
            _ => {
                if docs.iter().any(|d| d.doc_id == rec.doc_id) || rec.index != 0 {
                    return Err(ForgeError::Input(format!(
                        "{}:{}: document `{}` is not contiguous",
                        path.display(),
                        lineno + 1,
                        rec.doc_id
                    )));
                }
                docs.push(CleanDocument {
                    doc_id: rec.doc_id,
                    subject: rec.subject,
                    paragraphs: vec![Paragraph {
                        index: rec.index,
                        text: rec.text,
                    }],
                });
            }
        }
    }
    Ok(docs)
}
