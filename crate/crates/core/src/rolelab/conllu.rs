//! Minimal CoNLL-U reader.
//!
//! Only the columns the role patterns need are kept. Multiword-token ranges
//! (`1-2`) and empty nodes (`1.1`) are skipped.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConlluError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub feats: String,
    /// Head position; 0 marks the root.
    pub head: usize,
    pub deprel: String,
}

impl Token {
    /// Relation label without its subtype (`nsubj:pass` -> `nsubj`).
    pub fn base_deprel(&self) -> &str {
        self.deprel.split(':').next().unwrap_or("")
    }

    pub fn has_feature(&self, name: &str, value: &str) -> bool {
        self.feats
            .split('|')
            .filter_map(|kv| kv.split_once('='))
            .any(|(k, v)| k == name && v.split(',').any(|x| x == value))
    }
}

/// One dependency-parsed sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepGraph {
    /// Value of the `# sent_id = ...` comment, if present.
    pub sent_id: Option<String>,
    pub text: Option<String>,
    pub tokens: Vec<Token>,
}

impl DepGraph {
    /// Token with 1-based `id`.
    pub fn token(&self, id: usize) -> &Token {
        &self.tokens[id - 1]
    }

    pub fn dependents(&self, head: usize) -> impl Iterator<Item = &Token> + '_ {
        self.tokens.iter().filter(move |t| t.head == head)
    }

    pub fn root(&self) -> Option<&Token> {
        self.tokens.iter().find(|t| t.head == 0)
    }

    /// Splits a `story:line` sentence id into its parts.
    pub fn story_line(&self) -> Option<(String, usize)> {
        let id = self.sent_id.as_deref()?;
        let (story, line) = id.rsplit_once(':')?;
        // allow `story:line.k` for lines split into several sentences
        let line = line.split(['.', '-']).next()?.parse().ok()?;
        Some((story.to_string(), line))
    }

    /// Checks single root, head range, and acyclicity.
    pub fn check(&self) -> Result<(), String> {
        let n = self.tokens.len();
        let roots = self.tokens.iter().filter(|t| t.head == 0).count();
        if roots != 1 {
            return Err(format!("expected exactly one root, found {roots}"));
        }
        for t in &self.tokens {
            if t.head > n {
                return Err(format!("token {} has head {} outside the sentence", t.id, t.head));
            }
            let mut cur = t.head;
            let mut steps = 0;
            while cur != 0 {
                cur = self.tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(format!("cycle through token {}", t.id));
                }
            }
        }
        Ok(())
    }
}

/// Parses CoNLL-U text into one graph per sentence block.
pub fn parse_conllu<R: BufRead>(reader: R, path: &Path) -> Result<Vec<DepGraph>, ConlluError> {
    let err = |line: usize, message: String| ConlluError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut graphs = Vec::new();
    let mut current = DepGraph {
        sent_id: None,
        text: None,
        tokens: Vec::new(),
    };
    let mut block_start = 1;
    let flush = |g: &mut DepGraph, start: usize, graphs: &mut Vec<DepGraph>| -> Result<(), ConlluError> {
        let done = std::mem::replace(
            g,
            DepGraph {
                sent_id: None,
                text: None,
                tokens: Vec::new(),
            },
        );
        if !done.tokens.is_empty() {
            done.check().map_err(|m| err(start, m))?;
            graphs.push(done);
        }
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| ConlluError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut current, block_start, &mut graphs)?;
            block_start = line_no + 1;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                match key.trim() {
                    "sent_id" => current.sent_id = Some(value.trim().to_string()),
                    "text" => current.text = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(
                line_no,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| err(line_no, format!("token id `{}` is not an integer", cols[0])))?;
        if id != current.tokens.len() + 1 {
            return Err(err(line_no, format!("token id {id} out of sequence")));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| err(line_no, format!("head `{}` is not an integer", cols[6])))?;
        current.tokens.push(Token {
            id,
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            feats: cols[5].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    flush(&mut current, block_start, &mut graphs)?;
    Ok(graphs)
}

pub fn parse_conllu_file(path: &Path) -> Result<Vec<DepGraph>, ConlluError> {
    let file = std::fs::File::open(path).map_err(|source| ConlluError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_conllu(std::io::BufReader::new(file), path)
}

/// Serializes graphs back to CoNLL-U, filling unused columns with `_`.
pub fn write_conllu(graphs: &[DepGraph]) -> String {
    let mut out = String::new();
    for g in graphs {
        if let Some(id) = &g.sent_id {
            out.push_str(&format!("# sent_id = {id}\n"));
        }
        if let Some(text) = &g.text {
            out.push_str(&format!("# text = {text}\n"));
        }
        for t in &g.tokens {
            let feats = if t.feats.is_empty() { "_" } else { &t.feats };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t_\t{}\t{}\t{}\t_\t_\n",
                t.id, t.form, t.lemma, t.upos, feats, t.head, t.deprel
            ));
        }
        out.push('\n');
    }
    out
}
