//! Corpus ingestion and serialization.
//!
//! Items file: one JSON object per line, `{"item": string, "text": string}`.
//! Users file: one JSON object per line,
//! `{"user": string, "items": [string,...], "intents": [string,...]?}`,
//! histories in chronological order.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RecallError, Result};

pub const DEFAULT_MAX_TOKENS: usize = 30;
pub const DEFAULT_MAX_HISTORY: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ItemLine {
    item: String,
    text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UserLine {
    user: String,
    items: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    intents: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct Item {
    pub id: String,
    /// Lowercased alphanumeric tokens, clipped to `max_tokens`.
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct User {
    pub id: String,
    /// Indices into `Corpus::items`, chronological.
    pub history: Vec<usize>,
    /// Per-interaction intent labels, aligned with `history`.
    pub intents: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub items: Vec<Item>,
    pub users: Vec<User>,
}

/// Counts of records adjusted or discarded during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub unknown_item_refs: usize,
    pub dropped_items: usize,
    pub dropped_users: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub max_tokens: usize,
    pub max_history: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_tokens: DEFAULT_MAX_TOKENS,
            max_history: DEFAULT_MAX_HISTORY,
        }
    }
}

/// Lowercase and split on non-alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn load_corpus<P: AsRef<Path>>(
    items_path: P,
    users_path: P,
    opts: LoadOptions,
) -> Result<(Corpus, LoadReport)> {
    let mut report = LoadReport::default();

    let mut items = Vec::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in read_lines(items_path.as_ref())?.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ItemLine = serde_json::from_str(&line).map_err(|e| RecallError::Parse {
            line: lineno + 1,
            msg: format!("items file: {e}"),
        })?;
        if item_index.contains_key(&rec.item) {
            return Err(RecallError::Parse {
                line: lineno + 1,
                msg: format!("duplicate item id '{}'", rec.item),
            });
        }
        let mut tokens = tokenize(&rec.text);
        tokens.truncate(opts.max_tokens);
        if tokens.is_empty() {
            report.dropped_items += 1;
            continue;
        }
        item_index.insert(rec.item.clone(), items.len());
        items.push(Item {
            id: rec.item,
            tokens,
        });
    }

    let mut users = Vec::new();
    let mut seen_users: HashSet<String> = HashSet::new();
    for (lineno, line) in read_lines(users_path.as_ref())?.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UserLine = serde_json::from_str(&line).map_err(|e| RecallError::Parse {
            line: lineno + 1,
            msg: format!("users file: {e}"),
        })?;
        if !seen_users.insert(rec.user.clone()) {
            return Err(RecallError::Parse {
                line: lineno + 1,
                msg: format!("duplicate user id '{}'", rec.user),
            });
        }
        if let Some(intents) = &rec.intents {
            if intents.len() != rec.items.len() {
                return Err(RecallError::Parse {
                    line: lineno + 1,
                    msg: format!(
                        "user '{}' has {} intents for {} items",
                        rec.user,
                        intents.len(),
                        rec.items.len()
                    ),
                });
            }
        }
        let mut history = Vec::with_capacity(rec.items.len());
        let mut intents = rec.intents.as_ref().map(|_| Vec::new());
        for (pos, item_id) in rec.items.iter().enumerate() {
            match item_index.get(item_id) {
                Some(&idx) => {
                    history.push(idx);
                    if let (Some(out), Some(src)) = (&mut intents, &rec.intents) {
                        out.push(src[pos].clone());
                    }
                }
                None => report.unknown_item_refs += 1,
            }
        }
        if history.is_empty() {
            report.dropped_users += 1;
            continue;
        }
        if history.len() > opts.max_history {
            let start = history.len() - opts.max_history;
            history.drain(..start);
            if let Some(out) = &mut intents {
                out.drain(..start);
            }
        }
        users.push(User {
            id: rec.user,
            history,
            intents,
        });
    }

    if items.is_empty() || users.is_empty() {
        return Err(RecallError::Domain(format!(
            "empty corpus: {} items, {} users after ingestion",
            items.len(),
            users.len()
        )));
    }
    if report.unknown_item_refs > 0 || report.dropped_items > 0 || report.dropped_users > 0 {
        log::warn!(
            "corpus ingestion dropped {} unknown item refs, {} empty items, {} empty users",
            report.unknown_item_refs,
            report.dropped_items,
            report.dropped_users
        );
    }
    Ok((Corpus { items, users }, report))
}

/// Writes the two corpus files; item text is the token sequence joined by
/// spaces, so write-then-load is lossless for token sequences.
pub fn write_corpus<P: AsRef<Path>>(corpus: &Corpus, items_path: P, users_path: P) -> Result<()> {
    let mut iw = BufWriter::new(File::create(items_path)?);
    for item in &corpus.items {
        let line = serde_json::to_string(&ItemLine {
            item: item.id.clone(),
            text: item.tokens.join(" "),
        })
        .expect("item serialization");
        writeln!(iw, "{line}")?;
    }
    iw.flush()?;

    let mut uw = BufWriter::new(File::create(users_path)?);
    for user in &corpus.users {
        let line = serde_json::to_string(&UserLine {
            user: user.id.clone(),
            items: user
                .history
                .iter()
                .map(|&i| corpus.items[i].id.clone())
                .collect(),
            intents: user.intents.clone(),
        })
        .expect("user serialization");
        writeln!(uw, "{line}")?;
    }
    uw.flush()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = File::open(path).map_err(|e| {
        RecallError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(BufReader::new(file).lines())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn one_item_one_user() {
        let items = write_tmp(r#"{"item":"a","text":"Hello World"}"#);
        let users = write_tmp(r#"{"user":"u1","items":["a"]}"#);
        let (corpus, report) =
            load_corpus(items.path(), users.path(), LoadOptions::default()).unwrap();
        assert_eq!(corpus.items.len(), 1);
        assert_eq!(corpus.users.len(), 1);
        assert_eq!(corpus.items[0].tokens, vec!["hello", "world"]);
        assert_eq!(report, LoadReport::default());
    }

    #[test]
    fn unknown_item_reference_dropped_with_count() {
        let items = write_tmp(r#"{"item":"a","text":"x"}"#);
        let users = write_tmp(r#"{"user":"u1","items":["a","missing"]}"#);
        let (corpus, report) =
            load_corpus(items.path(), users.path(), LoadOptions::default()).unwrap();
        assert_eq!(corpus.users[0].history, vec![0]);
        assert_eq!(report.unknown_item_refs, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let items = write_tmp("{\"item\":\"a\",\"text\":\"x\"}\nnot json\n");
        let users = write_tmp(r#"{"user":"u1","items":["a"]}"#);
        let err = load_corpus(items.path(), users.path(), LoadOptions::default()).unwrap_err();
        match err {
            RecallError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn intent_length_mismatch_rejected() {
        let items = write_tmp(r#"{"item":"a","text":"x"}"#);
        let users = write_tmp(r#"{"user":"u1","items":["a"],"intents":["t","t"]}"#);
        assert!(load_corpus(items.path(), users.path(), LoadOptions::default()).is_err());
    }

    #[test]
    fn empty_corpus_is_domain_error() {
        let items = write_tmp("");
        let users = write_tmp(r#"{"user":"u1","items":["a"]}"#);
        assert!(matches!(
            load_corpus(items.path(), users.path(), LoadOptions::default()),
            Err(RecallError::Domain(_))
        ));
    }

    #[test]
    fn history_clipped_to_most_recent() {
        let items = write_tmp(
            "{\"item\":\"a\",\"text\":\"x\"}\n{\"item\":\"b\",\"text\":\"y\"}\n{\"item\":\"c\",\"text\":\"z\"}\n",
        );
        let users = write_tmp(r#"{"user":"u1","items":["a","b","c"]}"#);
        let opts = LoadOptions {
            max_history: 2,
            ..LoadOptions::default()
        };
        let (corpus, _) = load_corpus(items.path(), users.path(), opts).unwrap();
        assert_eq!(corpus.users[0].history, vec![1, 2]);
    }
}
