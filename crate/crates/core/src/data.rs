//! Emphasis dataset: tokens, instances and the line-oriented file format.
//!
//! ```text
//! # id=<instance_id>
//! <token_index>\t<surface>\t<pos>\t<annotations>
//! ...
//! <blank line>
//! # id=<next_id>
//! ```
//!
//! `<annotations>` is either nine `|`-separated 0/1 flags (one per
//! annotator) or a single decimal in `[0, 1]` for pre-aggregated data.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CoreError, Result};

pub const ANNOTATORS: usize = 9;

/// Universal part-of-speech tags. A missing tag (`-`) reads as `X`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosTag {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl PosTag {
    pub const ALL: [PosTag; 17] = [
        PosTag::Adj,
        PosTag::Adp,
        PosTag::Adv,
        PosTag::Aux,
        PosTag::Cconj,
        PosTag::Det,
        PosTag::Intj,
        PosTag::Noun,
        PosTag::Num,
        PosTag::Part,
        PosTag::Pron,
        PosTag::Propn,
        PosTag::Punct,
        PosTag::Sconj,
        PosTag::Sym,
        PosTag::Verb,
        PosTag::X,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        if s == "-" {
            return Some(PosTag::X);
        }
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Adj => "ADJ",
            PosTag::Adp => "ADP",
            PosTag::Adv => "ADV",
            PosTag::Aux => "AUX",
            PosTag::Cconj => "CCONJ",
            PosTag::Det => "DET",
            PosTag::Intj => "INTJ",
            PosTag::Noun => "NOUN",
            PosTag::Num => "NUM",
            PosTag::Part => "PART",
            PosTag::Pron => "PRON",
            PosTag::Propn => "PROPN",
            PosTag::Punct => "PUNCT",
            PosTag::Sconj => "SCONJ",
            PosTag::Sym => "SYM",
            PosTag::Verb => "VERB",
            PosTag::X => "X",
        }
    }

    /// Position in the one-hot encoding.
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub surface: String,
    pub pos: PosTag,
    /// One flag per annotator, when the raw annotations are known.
    pub annotations: Option<[bool; ANNOTATORS]>,
    pub gold_prob: f64,
}

impl Token {
    pub fn with_annotations(surface: impl Into<String>, pos: PosTag, flags: [bool; ANNOTATORS]) -> Self {
        let ones = flags.iter().filter(|&&f| f).count();
        Self {
            surface: surface.into(),
            pos,
            annotations: Some(flags),
            gold_prob: ones as f64 / ANNOTATORS as f64,
        }
    }

    pub fn with_prob(surface: impl Into<String>, pos: PosTag, gold_prob: f64) -> Self {
        Self {
            surface: surface.into(),
            pos,
            annotations: None,
            gold_prob,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<Token>,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn gold(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.gold_prob).collect()
    }

    /// The instance text with single spaces between tokens.
    pub fn text(&self) -> String {
        let words: Vec<&str> = self.tokens.iter().map(|t| t.surface.as_str()).collect();
        words.join(" ")
    }
}

fn parse_annotations(field: &str, line: usize) -> Result<(Option<[bool; ANNOTATORS]>, f64)> {
    if field.contains('|') {
        let parts: Vec<&str> = field.split('|').collect();
        if parts.len() != ANNOTATORS {
            return Err(CoreError::parse(
                line,
                format!("expected {ANNOTATORS} annotation flags, found {}", parts.len()),
            ));
        }
        let mut flags = [false; ANNOTATORS];
        for (f, p) in flags.iter_mut().zip(&parts) {
            *f = match *p {
                "0" => false,
                "1" => true,
                other => return Err(CoreError::parse(line, format!("annotation flag {other:?} is not 0 or 1"))),
            };
        }
        let ones = flags.iter().filter(|&&f| f).count();
        Ok((Some(flags), ones as f64 / ANNOTATORS as f64))
    } else {
        let p: f64 = field
            .parse()
            .map_err(|_| CoreError::parse(line, format!("annotation {field:?} is neither flags nor a probability")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(CoreError::parse(line, format!("probability {p} outside [0, 1]")));
        }
        Ok((None, p))
    }
}

/// Parses dataset text. Line numbers in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<Instance>> {
    let mut instances: Vec<Instance> = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<Instance> = None;
    let mut after_blank = true;

    let finish = |cur: Option<Instance>, out: &mut Vec<Instance>, line: usize| -> Result<()> {
        if let Some(inst) = cur {
            if inst.tokens.is_empty() {
                return Err(CoreError::parse(line, format!("instance {:?} has no tokens", inst.id)));
            }
            out.push(inst);
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            if after_blank {
                return Err(CoreError::parse(line, "unexpected blank line"));
            }
            finish(current.take(), &mut instances, line)?;
            after_blank = true;
            continue;
        }
        if let Some(id) = raw.strip_prefix("# id=") {
            if current.is_some() || !after_blank {
                return Err(CoreError::parse(line, "instance header must follow a blank line"));
            }
            if id.is_empty() || id.contains('\t') {
                return Err(CoreError::parse(line, "empty or malformed instance id"));
            }
            if !seen.insert(id.to_owned()) {
                return Err(CoreError::parse(line, format!("duplicate instance id {id:?}")));
            }
            current = Some(Instance {
                id: id.to_owned(),
                tokens: Vec::new(),
            });
            after_blank = false;
            continue;
        }
        let Some(inst) = current.as_mut() else {
            return Err(CoreError::parse(line, "token line outside an instance"));
        };
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(CoreError::parse(line, format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| CoreError::parse(line, format!("bad token index {:?}", fields[0])))?;
        if index != inst.tokens.len() {
            return Err(CoreError::parse(
                line,
                format!("token index {index} where {} was expected", inst.tokens.len()),
            ));
        }
        let surface = fields[1];
        if surface.is_empty() || surface.contains(char::is_whitespace) {
            return Err(CoreError::parse(line, "token surface must be non-empty and contain no whitespace"));
        }
        let pos = PosTag::parse(fields[2]).ok_or_else(|| CoreError::parse(line, format!("unknown POS tag {:?}", fields[2])))?;
        let (annotations, gold_prob) = parse_annotations(fields[3], line)?;
        inst.tokens.push(Token {
            surface: surface.to_owned(),
            pos,
            annotations,
            gold_prob,
        });
    }
    let last = text.lines().count();
    finish(current, &mut instances, last)?;
    Ok(instances)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Instance>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_dataset(&text).map_err(|e| match e {
        CoreError::Parse { line, msg } => CoreError::Data(format!("{}:{line}: {msg}", path.display())),
        other => other,
    })
}

/// Canonical text form; `parse_dataset(&write_dataset(x)) == x`.
pub fn write_dataset(instances: &[Instance]) -> String {
    let mut out = String::new();
    for (n, inst) in instances.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "# id={}", inst.id);
        for (i, t) in inst.tokens.iter().enumerate() {
            let ann = match &t.annotations {
                Some(flags) => flags.iter().map(|&f| if f { "1" } else { "0" }).collect::<Vec<_>>().join("|"),
                None => format!("{}", t.gold_prob),
            };
            let _ = writeln!(out, "{i}\t{}\t{}\t{ann}", t.surface, t.pos.as_str());
        }
    }
    out
}
