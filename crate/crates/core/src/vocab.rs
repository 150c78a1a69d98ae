//! Closed vocabularies for forms, PoS tags and dependency labels.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::treebank::{AnnotatedSentence, TreebankError};

pub const ROOT: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const PAD: usize = 3;
pub const UNK: usize = 4;
pub const NULL: usize = 5;

/// Symbols occupying ids 0..6 of the form and PoS tables.
pub const RESERVED: [&str; 6] = ["<root>", "<cls>", "<sep>", "<pad>", "<unk>", "<null>"];

/// Bidirectional string/id map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl SymbolTable {
    fn with_reserved() -> Self {
        let mut t = SymbolTable::default();
        for s in RESERVED {
            t.push(s);
        }
        t
    }

    fn push(&mut self, s: &str) -> usize {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.symbols.len();
        self.symbols.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.ids.get(s).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i))
    }
}

/// Sorts by descending count, then lexicographically.
fn ranked<'a>(counts: HashMap<&'a str, usize>) -> Vec<(&'a str, usize)> {
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub forms: SymbolTable,
    pub upos: SymbolTable,
    pub deprels: SymbolTable,
}

impl Vocabulary {
    /// Builds deterministic tables. Forms seen fewer than `min_freq` times map to UNK;
    /// every PoS tag and label is kept.
    pub fn build(sentences: &[AnnotatedSentence], min_freq: usize) -> Vocabulary {
        let min_freq = min_freq.max(1);
        let mut forms = HashMap::new();
        let mut upos = HashMap::new();
        let mut deprels = HashMap::new();
        for t in sentences.iter().flat_map(|s| &s.tokens) {
            *forms.entry(t.form.as_str()).or_insert(0) += 1;
            *upos.entry(t.upos.as_str()).or_insert(0) += 1;
            *deprels.entry(t.deprel.as_str()).or_insert(0) += 1;
        }
        let mut form_table = SymbolTable::with_reserved();
        for (f, c) in ranked(forms) {
            if c >= min_freq {
                form_table.push(f);
            }
        }
        let mut upos_table = SymbolTable::with_reserved();
        for (p, _) in ranked(upos) {
            upos_table.push(p);
        }
        let mut deprel_table = SymbolTable::default();
        for (l, _) in ranked(deprels) {
            deprel_table.push(l);
        }
        Vocabulary {
            forms: form_table,
            upos: upos_table,
            deprels: deprel_table,
        }
    }

    pub fn form_id(&self, form: &str) -> usize {
        self.forms.get(form).unwrap_or(UNK)
    }

    pub fn upos_id(&self, tag: &str) -> usize {
        self.upos.get(tag).unwrap_or(UNK)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.deprels.get(label)
    }

    pub fn label(&self, id: usize) -> &str {
        self.deprels.symbol(id).unwrap_or("_")
    }

    pub fn num_labels(&self) -> usize {
        self.deprels.len()
    }

    /// Line-oriented `token<TAB>id` text with `[forms]`, `[upos]` and `[deprels]` sections.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, table) in [("forms", &self.forms), ("upos", &self.upos), ("deprels", &self.deprels)] {
            let _ = writeln!(out, "[{name}]");
            for (s, id) in table.iter() {
                let _ = writeln!(out, "{s}\t{id}");
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vocabulary, TreebankError> {
        let mut tables: [SymbolTable; 3] = Default::default();
        let mut section: Option<usize> = None;
        for (idx, line) in text.lines().enumerate() {
            let err = |message: String| TreebankError::Parse { line: idx + 1, message };
            if line.is_empty() {
                continue;
            }
            if !line.contains('\t') {
                section = Some(match line {
                    "[forms]" => 0,
                    "[upos]" => 1,
                    "[deprels]" => 2,
                    other => return Err(err(format!("unknown vocabulary section {other:?}"))),
                });
                continue;
            }
            let sec = section.ok_or_else(|| err("entry before any section header".into()))?;
            let (tok, id) = line.rsplit_once('\t').expect("contains a tab");
            let id: usize = id.parse().map_err(|_| err(format!("invalid id {id:?}")))?;
            if id != tables[sec].len() {
                return Err(err(format!("id {id} out of order")));
            }
            tables[sec].push(tok);
        }
        let [forms, upos, deprels] = tables;
        for (name, t) in [("forms", &forms), ("upos", &upos)] {
            if t.len() < RESERVED.len() || RESERVED.iter().enumerate().any(|(i, r)| t.symbol(i) != Some(r)) {
                return Err(TreebankError::Parse {
                    line: 0,
                    message: format!("{name} table lacks the reserved symbols"),
                });
            }
        }
        Ok(Vocabulary { forms, upos, deprels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TreebankError> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|source| TreebankError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocabulary, TreebankError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TreebankError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Vocabulary::from_text(&text)
    }
}
