//! CoNLL-U reading and writing.
//!
//! Only the columns the parser consumes are interpreted (ID, FORM, UPOS, HEAD,
//! DEPREL). LEMMA, XPOS, FEATS, DEPS and MISC are carried through unchanged so
//! that a parsed file can be written back with predicted heads substituted.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreebankError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sentence {sentence} (ending line {line}): {message}")]
    Invalid {
        sentence: String,
        line: usize,
        message: String,
    },
}

/// How punctuation tokens are recognised.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PunctuationRule {
    /// UD treebanks: the UPOS column is one of the given tags.
    Upos(Vec<String>),
    /// Stanford-converted treebanks: the gold DEPREL equals the given label.
    Deprel(String),
}

impl Default for PunctuationRule {
    fn default() -> Self {
        PunctuationRule::Upos(vec!["PUNCT".to_string()])
    }
}

impl PunctuationRule {
    pub fn stanford() -> Self {
        PunctuationRule::Deprel("punct".to_string())
    }

    pub fn is_punct(&self, upos: &str, deprel: &str) -> bool {
        match self {
            PunctuationRule::Upos(tags) => tags.iter().any(|t| t == upos),
            PunctuationRule::Deprel(label) => deprel == label,
        }
    }
}

/// One syntactic word of a sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenRecord {
    /// 1-based position in the sentence.
    pub id: usize,
    pub form: String,
    pub upos: String,
    /// Head position; 0 is the artificial root.
    pub head: usize,
    pub deprel: String,
    pub is_punct: bool,
    /// LEMMA, XPOS, FEATS, DEPS, MISC, verbatim.
    pub passthrough: [String; 5],
}

impl TokenRecord {
    pub fn new(id: usize, form: &str, upos: &str, head: usize, deprel: &str) -> Self {
        TokenRecord {
            id,
            form: form.to_string(),
            upos: upos.to_string(),
            head,
            deprel: deprel.to_string(),
            is_punct: false,
            passthrough: Default::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnnotatedSentence {
    /// Comment lines, including the leading `#`.
    pub comments: Vec<String>,
    pub tokens: Vec<TokenRecord>,
}

impl AnnotatedSentence {
    /// Builds a sentence from parallel form/upos/head/deprel slices.
    pub fn from_columns(forms: &[&str], upos: &[&str], heads: &[usize], deprels: &[&str]) -> Self {
        let tokens = (0..forms.len())
            .map(|i| TokenRecord::new(i + 1, forms[i], upos[i], heads[i], deprels[i]))
            .collect();
        AnnotatedSentence {
            comments: Vec::new(),
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Head per position, with a placeholder 0 at index 0 for the root.
    pub fn heads(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.tokens.iter().map(|t| t.head))
            .collect()
    }

    /// The `sent_id` comment value, if any.
    pub fn sent_id(&self) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            c.strip_prefix('#')
                .map(str::trim_start)
                .and_then(|c| c.strip_prefix("sent_id"))
                .and_then(|c| c.trim_start().strip_prefix('='))
                .map(str::trim)
        })
    }

    pub fn apply_punctuation(&mut self, rule: &PunctuationRule) {
        for t in &mut self.tokens {
            t.is_punct = rule.is_punct(&t.upos, &t.deprel);
        }
    }

    /// Copy of this sentence with heads and labels replaced by a prediction.
    pub fn with_analysis(&self, heads: &[usize], deprels: &[String]) -> AnnotatedSentence {
        assert_eq!(heads.len(), self.tokens.len());
        assert_eq!(deprels.len(), self.tokens.len());
        let mut out = self.clone();
        for (t, (h, l)) in out.tokens.iter_mut().zip(heads.iter().zip(deprels)) {
            t.head = *h;
            t.deprel = l.clone();
        }
        out
    }

    /// Checks that the heads form a single-rooted tree over all tokens.
    pub fn validate(&self) -> Result<(), String> {
        validate_heads(&self.heads())
    }
}

/// Validates a head vector (index 0 is the root placeholder).
pub fn validate_heads(heads: &[usize]) -> Result<(), String> {
    let n = heads.len().saturating_sub(1);
    let mut roots = 0;
    for dep in 1..=n {
        let h = heads[dep];
        if h > n {
            return Err(format!("token {dep} has head {h} outside the sentence"));
        }
        if h == dep {
            return Err(format!("token {dep} is its own head"));
        }
        if h == 0 {
            roots += 1;
        }
    }
    if n > 0 && roots != 1 {
        return Err(format!("expected exactly one root, found {roots}"));
    }
    // DFS from the root over the child lists.
    let mut children = vec![Vec::new(); n + 1];
    for dep in 1..=n {
        children[heads[dep]].push(dep);
    }
    let mut seen = vec![false; n + 1];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(node) = stack.pop() {
        for &c in &children[node] {
            if !seen[c] {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    if let Some(dep) = (1..=n).find(|&d| !seen[d]) {
        return Err(format!("token {dep} is not reachable from the root (cycle)"));
    }
    Ok(())
}

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>, TreebankError> {
    read_conllu_with(path, &PunctuationRule::default())
}

pub fn read_conllu_with(
    path: impl AsRef<Path>,
    rule: &PunctuationRule,
) -> Result<Vec<AnnotatedSentence>, TreebankError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TreebankError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_conllu(&text, rule)
}

pub fn parse_conllu(text: &str, rule: &PunctuationRule) -> Result<Vec<AnnotatedSentence>, TreebankError> {
    parse_sentences(text, rule, true)
}

/// Reads raw input for parsing: HEAD and DEPREL may be `_` and trees are not validated.
pub fn parse_conllu_input(text: &str) -> Result<Vec<AnnotatedSentence>, TreebankError> {
    parse_sentences(text, &PunctuationRule::default(), false)
}

pub fn read_conllu_input(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSentence>, TreebankError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TreebankError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_conllu_input(&text)
}

fn parse_sentences(text: &str, rule: &PunctuationRule, annotated: bool) -> Result<Vec<AnnotatedSentence>, TreebankError> {
    let mut sentences = Vec::new();
    let mut current = AnnotatedSentence::default();
    let mut open = false;

    let finish = |sent: AnnotatedSentence, line: usize, out: &mut Vec<AnnotatedSentence>| {
        if let Err(message) = if annotated { sent.validate() } else { Ok(()) } {
            let name = sent
                .sent_id()
                .map(str::to_string)
                .unwrap_or_else(|| format!("#{}", out.len() + 1));
            return Err(TreebankError::Invalid {
                sentence: name,
                line,
                message,
            });
        }
        out.push(sent);
        Ok(())
    };

    let mut last_line = 0;
    for (idx, raw) in text.split('\n').enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if open {
                finish(std::mem::take(&mut current), lineno, &mut sentences)?;
                open = false;
            }
            continue;
        }
        open = true;
        if line.starts_with('#') {
            current.comments.push(line.to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(TreebankError::Parse {
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        // Multi-word token ranges and empty nodes.
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| TreebankError::Parse {
            line: lineno,
            message: format!("invalid token id {:?}", cols[0]),
        })?;
        if id != current.tokens.len() + 1 {
            return Err(TreebankError::Parse {
                line: lineno,
                message: format!("token id {id} out of sequence (expected {})", current.tokens.len() + 1),
            });
        }
        let head: usize = if !annotated && cols[6] == "_" {
            0
        } else {
            cols[6].parse().map_err(|_| TreebankError::Parse {
                line: lineno,
                message: format!("invalid head {:?}", cols[6]),
            })?
        };
        let mut token = TokenRecord {
            id,
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
            deprel: cols[7].to_string(),
            is_punct: false,
            passthrough: [
                cols[2].to_string(),
                cols[4].to_string(),
                cols[5].to_string(),
                cols[8].to_string(),
                cols[9].to_string(),
            ],
        };
        token.is_punct = rule.is_punct(&token.upos, &token.deprel);
        current.tokens.push(token);
    }
    if open {
        finish(current, last_line, &mut sentences)?;
    }
    Ok(sentences)
}

/// Serializes sentences as CoNLL-U text (LF line endings, blank line after each sentence).
pub fn to_conllu_string(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for sent in sentences {
        for c in &sent.comments {
            out.push_str(c);
            out.push('\n');
        }
        for t in &sent.tokens {
            let [lemma, xpos, feats, deps, misc] = &t.passthrough;
            let col = |s: &str| if s.is_empty() { "_".to_string() } else { s.to_string() };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.id,
                col(&t.form),
                col(lemma),
                col(&t.upos),
                col(xpos),
                col(feats),
                t.head,
                col(&t.deprel),
                col(deps),
                col(misc)
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_conllu(sentences: &[AnnotatedSentence], path: impl AsRef<Path>) -> Result<(), TreebankError> {
    let path = path.as_ref();
    fs::write(path, to_conllu_string(sentences)).map_err(|source| TreebankError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Collects the distinct deprels of a corpus in first-seen order.
pub fn label_inventory(sentences: &[AnnotatedSentence]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in sentences.iter().flat_map(|s| &s.tokens) {
        if seen.insert(t.deprel.as_str()) {
            out.push(t.deprel.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: usize, form: &str, upos: &str, head: usize, rel: &str) -> String {
        format!("{id}\t{form}\t_\t{upos}\t_\t_\t{head}\t{rel}\t_\t_\n")
    }

    #[test]
    fn reads_minimal_sentence() {
        let text = format!("# sent_id = s1\n{}{}\n", line(1, "Hey", "INTJ", 2, "discourse"), line(2, "there", "ADV", 0, "root"));
        let sents = parse_conllu(&text, &PunctuationRule::default()).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].heads(), vec![0, 2, 0]);
        assert_eq!(sents[0].sent_id(), Some("s1"));
    }

    #[test]
    fn nine_columns_is_a_parse_error_at_that_line() {
        let text = "# c\n1\ta\t_\tX\t_\t_\t0\troot\t_\n\n";
        match parse_conllu(text, &PunctuationRule::default()) {
            Err(TreebankError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let text = format!("{}{}{}\n", line(1, "a", "X", 2, "x"), line(2, "b", "X", 1, "x"), line(3, "c", "X", 0, "root"));
        assert!(matches!(
            parse_conllu(&text, &PunctuationRule::default()),
            Err(TreebankError::Invalid { .. })
        ));
        // pure two-cycle without any root
        let text = format!("{}{}\n", line(1, "a", "X", 2, "x"), line(2, "b", "X", 1, "x"));
        assert!(parse_conllu(&text, &PunctuationRule::default()).is_err());
    }

    #[test]
    fn multi_root_is_rejected() {
        let text = format!("{}{}\n", line(1, "a", "X", 0, "root"), line(2, "b", "X", 0, "root"));
        let err = parse_conllu(&text, &PunctuationRule::default()).unwrap_err();
        assert!(err.to_string().contains("exactly one root"), "{err}");
    }

    #[test]
    fn skips_multiword_ranges_and_empty_nodes() {
        let text = format!(
            "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n{}{}2.1\tx\t_\tX\t_\t_\t_\t_\t_\t_\n\n",
            line(1, "de", "ADP", 2, "case"),
            line(2, "el", "DET", 0, "root")
        );
        let sents = parse_conllu(&text, &PunctuationRule::default()).unwrap();
        assert_eq!(sents[0].len(), 2);
    }

    #[test]
    fn punctuation_rules() {
        let text = format!("{}{}\n", line(1, "go", "VERB", 0, "root"), line(2, ".", "PUNCT", 1, "punct"));
        let ud = parse_conllu(&text, &PunctuationRule::default()).unwrap();
        assert_eq!(ud[0].tokens.iter().map(|t| t.is_punct).collect::<Vec<_>>(), vec![false, true]);
        let text = format!("{}{}\n", line(1, "go", "VB", 0, "root"), line(2, ".", ".", 1, "punct"));
        let wsj = parse_conllu(&text, &PunctuationRule::stanford()).unwrap();
        assert!(wsj[0].tokens[1].is_punct);
        let ud = parse_conllu(&text, &PunctuationRule::default()).unwrap();
        assert!(!ud[0].tokens[1].is_punct);
    }

    #[test]
    fn comments_survive_byte_exact_and_predictions_substitute() {
        let text = format!(
            "# text = Hey  there\n#weird comment\t with tab\n{}{}\n",
            line(1, "Hey", "INTJ", 2, "discourse"),
            line(2, "there", "ADV", 0, "root")
        );
        let sents = parse_conllu(&text, &PunctuationRule::default()).unwrap();
        assert_eq!(to_conllu_string(&sents), text);
        let pred = sents[0].with_analysis(&[0, 1], &["root".into(), "advmod".into()]);
        let again = parse_conllu(&to_conllu_string(&[pred]), &PunctuationRule::default()).unwrap();
        assert_eq!(again[0].heads(), vec![0, 0, 1]);
        assert_eq!(again[0].tokens[1].deprel, "advmod");
        assert_eq!(again[0].comments, sents[0].comments);
    }

    #[test]
    fn write_reports_path_on_failure() {
        let err = write_conllu(&[], "/nonexistent-dir/x.conllu").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.conllu"));
    }

    #[test]
    fn raw_input_may_leave_heads_blank() {
        let text = "1\tDogs\t_\tNOUN\t_\t_\t_\t_\t_\t_\n2\tbark\t_\tVERB\t_\t_\t_\t_\t_\t_\n\n";
        assert!(parse_conllu(text, &PunctuationRule::default()).is_err());
        let sents = parse_conllu_input(text).unwrap();
        assert_eq!(sents[0].len(), 2);
        assert_eq!(sents[0].tokens[1].form, "bark");
    }
}
