//! Conversation threads, corpus files, and train/test splitting.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"root":{"id":"t1","ts":0,"text":"...","author":"u1"},
//!  "replies":[{"id":"r1","parent":"t1","ts":40,"text":"...","author":"u2"}]}
//! ```

mod synthetic;

pub use synthetic::{
    generate_synthetic, synthetic_lexicon, Archetype, Branching, Shape, SyntheticConfig, TextShape,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numcore::{stream_rng, Tensor};

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tweet {
    pub id: String,
    pub parent_id: Option<String>,
    pub timestamp: i64,
    pub tokens: Vec<String>,
    pub author_id: String,
}

/// Root post plus its replies in chronological order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConversationThread {
    root: Tweet,
    replies: Vec<Tweet>,
}

impl ConversationThread {
    /// Validates the reply tree and orders replies chronologically.
    ///
    /// Ties on timestamp are broken by depth (parents first) and then by id.
    pub fn new(root: Tweet, mut replies: Vec<Tweet>) -> Result<Self> {
        let fail = |msg: String| Error::Thread {
            thread: root.id.clone(),
            msg,
        };
        if root.parent_id.is_some() {
            return Err(fail("root tweet must not have a parent".into()));
        }
        let mut by_id: HashMap<&str, &Tweet> = HashMap::new();
        by_id.insert(&root.id, &root);
        for r in &replies {
            if by_id.insert(&r.id, r).is_some() {
                return Err(fail(format!("duplicate tweet id '{}'", r.id)));
            }
        }
        let mut depth: HashMap<String, usize> = HashMap::new();
        for r in &replies {
            let mut hops = 0;
            let mut cur = r;
            loop {
                let Some(pid) = cur.parent_id.as_deref() else {
                    break;
                };
                let parent = by_id.get(pid).ok_or_else(|| {
                    fail(format!("reply '{}' cites missing parent '{pid}'", cur.id))
                })?;
                if parent.timestamp > cur.timestamp {
                    return Err(fail(format!(
                        "reply '{}' is older than its parent '{pid}'",
                        cur.id
                    )));
                }
                hops += 1;
                if hops > replies.len() {
                    return Err(fail(format!("cyclic parent links through '{}'", r.id)));
                }
                cur = parent;
            }
            if cur.id != root.id {
                return Err(fail(format!(
                    "reply '{}' does not descend from the root",
                    r.id
                )));
            }
            depth.insert(r.id.clone(), hops);
        }
        replies.sort_by(|a, b| {
            (a.timestamp, depth[&a.id], &a.id).cmp(&(b.timestamp, depth[&b.id], &b.id))
        });
        Ok(Self { root, replies })
    }

    pub fn id(&self) -> &str {
        &self.root.id
    }

    pub fn root(&self) -> &Tweet {
        &self.root
    }

    pub fn replies(&self) -> &[Tweet] {
        &self.replies
    }

    /// Reply count `q`.
    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    /// The thread as it looked after its first `k` replies.
    pub fn prefix(&self, k: usize) -> ConversationThread {
        ConversationThread {
            root: self.root.clone(),
            replies: self.replies[..k.min(self.len())].to_vec(),
        }
    }

    /// Root followed by replies in chronological order.
    pub fn nodes(&self) -> impl Iterator<Item = &Tweet> {
        std::iter::once(&self.root).chain(&self.replies)
    }
}

/// Symmetric 0/1 adjacency over `[root, replies...]`.
pub fn thread_adjacency(thread: &ConversationThread) -> Tensor {
    let size = thread.len() + 1;
    let index: HashMap<&str, usize> = thread
        .nodes()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let mut data = vec![0.0; size * size];
    for (i, reply) in thread.replies().iter().enumerate() {
        let child = i + 1;
        let parent = index[reply.parent_id.as_deref().expect("replies have parents")];
        data[child * size + parent] = 1.0;
        data[parent * size + child] = 1.0;
    }
    Tensor::matrix(size, size, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Ingested,
    Synthetic,
}

/// Generator-side labels for one synthetic thread.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreadTruth {
    pub archetype: String,
    /// Target per-reply scores `h_1..h_q`.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    threads: Vec<ConversationThread>,
    provenance: Provenance,
    sidecar: Option<BTreeMap<String, ThreadTruth>>,
}

impl Corpus {
    pub fn new(threads: Vec<ConversationThread>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &threads {
            if !seen.insert(t.id().to_string()) {
                return Err(Error::Thread {
                    thread: t.id().into(),
                    msg: "duplicate thread id in corpus".into(),
                });
            }
        }
        Ok(Self {
            threads,
            provenance,
            sidecar: None,
        })
    }

    pub fn with_sidecar(mut self, truth: BTreeMap<String, ThreadTruth>) -> Self {
        self.sidecar = Some(truth);
        self
    }

    pub fn threads(&self) -> &[ConversationThread] {
        &self.threads
    }

    /// Thread count `s`.
    pub fn len(&self) -> usize {
        self.threads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threads.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Ground truth for evaluation code; the model path never reads it.
    pub fn sidecar(&self) -> Option<&BTreeMap<String, ThreadTruth>> {
        self.sidecar.as_ref()
    }

    pub fn truth(&self, thread_id: &str) -> Option<&ThreadTruth> {
        self.sidecar.as_ref()?.get(thread_id)
    }

    pub fn get(&self, thread_id: &str) -> Option<&ConversationThread> {
        self.threads.iter().find(|t| t.id() == thread_id)
    }

    fn subset(&self, idx: &[usize]) -> Corpus {
        let threads: Vec<_> = idx.iter().map(|&i| self.threads[i].clone()).collect();
        let sidecar = self.sidecar.as_ref().map(|s| {
            threads
                .iter()
                .filter_map(|t| s.get(t.id()).map(|v| (t.id().to_string(), v.clone())))
                .collect()
        });
        Corpus {
            threads,
            provenance: self.provenance,
            sidecar,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RootRecord {
    id: String,
    ts: i64,
    text: String,
    author: String,
}

#[derive(Serialize, Deserialize)]
struct ReplyRecord {
    id: String,
    parent: String,
    ts: i64,
    text: String,
    author: String,
}

#[derive(Serialize, Deserialize)]
struct ThreadRecord {
    root: RootRecord,
    replies: Vec<ReplyRecord>,
}

/// Parses one corpus line into a validated thread.
pub fn parse_thread_line(line: &str, line_no: usize) -> Result<ConversationThread> {
    let rec: ThreadRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })?;
    let root = Tweet {
        id: rec.root.id,
        parent_id: None,
        timestamp: rec.root.ts,
        tokens: tokenize(&rec.root.text),
        author_id: rec.root.author,
    };
    let replies = rec
        .replies
        .into_iter()
        .map(|r| Tweet {
            id: r.id,
            parent_id: Some(r.parent),
            timestamp: r.ts,
            tokens: tokenize(&r.text),
            author_id: r.author,
        })
        .collect();
    ConversationThread::new(root, replies)
}

pub fn read_corpus(reader: impl BufRead) -> Result<Corpus> {
    let mut threads = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        threads.push(parse_thread_line(&line, i + 1)?);
    }
    Corpus::new(threads, Provenance::Ingested)
}

/// Reads a corpus file (and its `.truth.csv` sidecar when present).
pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let corpus = read_corpus(std::io::BufReader::new(file))?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let truth = read_sidecar(std::io::BufReader::new(std::fs::File::open(sidecar)?))?;
        return Ok(Corpus {
            provenance: Provenance::Synthetic,
            ..corpus
        }
        .with_sidecar(truth));
    }
    Ok(corpus)
}

/// `corpus.jsonl` -> `corpus.truth.csv`.
pub fn sidecar_path(corpus_path: &Path) -> std::path::PathBuf {
    corpus_path.with_extension("truth.csv")
}

pub fn thread_to_line(thread: &ConversationThread) -> String {
    let rec = ThreadRecord {
        root: RootRecord {
            id: thread.root.id.clone(),
            ts: thread.root.timestamp,
            text: thread.root.tokens.join(" "),
            author: thread.root.author_id.clone(),
        },
        replies: thread
            .replies
            .iter()
            .map(|r| ReplyRecord {
                id: r.id.clone(),
                parent: r.parent_id.clone().unwrap_or_default(),
                ts: r.timestamp,
                text: r.tokens.join(" "),
                author: r.author_id.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&rec).expect("thread records serialize")
}

pub fn write_corpus(corpus: &Corpus, mut out: impl Write) -> Result<()> {
    for t in corpus.threads() {
        writeln!(out, "{}", thread_to_line(t))?;
    }
    Ok(())
}

/// Writes the corpus and, if it has one, its ground-truth sidecar.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_corpus(
        corpus,
        std::io::BufWriter::new(std::fs::File::create(path)?),
    )?;
    if let Some(truth) = corpus.sidecar() {
        write_sidecar(
            truth,
            std::io::BufWriter::new(std::fs::File::create(sidecar_path(path))?),
        )?;
    }
    Ok(())
}

/// `thread_id,archetype,h_1,...,h_n` per line.
pub fn write_sidecar(truth: &BTreeMap<String, ThreadTruth>, mut out: impl Write) -> Result<()> {
    for (id, t) in truth {
        write!(out, "{id},{}", t.archetype)?;
        for h in &t.scores {
            write!(out, ",{h}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_sidecar(reader: impl BufRead) -> Result<BTreeMap<String, ThreadTruth>> {
    let mut truth = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(id), Some(arch)) = (fields.next(), fields.next()) else {
            return Err(Error::Parse {
                line: i + 1,
                msg: "expected thread_id,archetype,...".into(),
            });
        };
        let scores = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        truth.insert(
            id.to_string(),
            ThreadTruth {
                archetype: arch.to_string(),
                scores,
            },
        );
    }
    Ok(truth)
}

/// Deterministic shuffled split; stratified by archetype when the corpus
/// carries ground truth.
pub fn split_train_test(corpus: &Corpus, ratio: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(contract(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::Config(format!(
            "cannot split a corpus of {} thread(s)",
            corpus.len()
        )));
    }
    let mut rng = stream_rng(seed, "split");
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in corpus.threads().iter().enumerate() {
        let key = corpus
            .truth(t.id())
            .map(|tr| tr.archetype.clone())
            .unwrap_or_default();
        groups.entry(key).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for idx in groups.values_mut() {
        idx.shuffle(&mut rng);
        let cut = (ratio * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    if train.is_empty() || test.is_empty() {
        // Tiny strata can round everything to one side; fall back to a global cut.
        let mut all: Vec<usize> = (0..corpus.len()).collect();
        all.shuffle(&mut rng);
        let cut = ((ratio * all.len() as f64).round() as usize).clamp(1, all.len() - 1);
        train = all[..cut].to_vec();
        test = all[cut..].to_vec();
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((corpus.subset(&train), corpus.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tweet(id: &str, parent: Option<&str>, ts: i64) -> Tweet {
        Tweet {
            id: id.into(),
            parent_id: parent.map(Into::into),
            timestamp: ts,
            tokens: vec!["x".into()],
            author_id: "a".into(),
        }
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("Hello, WORLD!it's"),
            vec!["hello", "world", "it", "s"]
        );
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn replies_sorted_with_tie_break() {
        let root = tweet("root", None, 0);
        let t = ConversationThread::new(
            root,
            vec![
                tweet("b", Some("root"), 5),
                tweet("a", Some("root"), 5),
                tweet("c", Some("root"), 1),
            ],
        )
        .unwrap();
        let ids: Vec<_> = t.replies().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn parent_precedes_child_on_equal_timestamps() {
        let t = ConversationThread::new(
            tweet("root", None, 0),
            vec![tweet("z", Some("root"), 5), tweet("a", Some("z"), 5)],
        )
        .unwrap();
        assert_eq!(t.replies()[0].id, "z");
    }

    #[test]
    fn dangling_parent_names_thread_and_id() {
        let err =
            ConversationThread::new(tweet("t9", None, 0), vec![tweet("r1", Some("missing"), 3)])
                .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t9") && msg.contains("missing"), "{msg}");
    }

    #[test]
    fn cycle_rejected() {
        let err = ConversationThread::new(
            tweet("t", None, 0),
            vec![tweet("a", Some("b"), 1), tweet("b", Some("a"), 1)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("cyclic"));
    }

    #[test]
    fn adjacency_examples() {
        let single =
            ConversationThread::new(tweet("r", None, 0), vec![tweet("a", Some("r"), 1)]).unwrap();
        assert_eq!(thread_adjacency(&single).data(), &[0.0, 1.0, 1.0, 0.0]);

        let chain = ConversationThread::new(
            tweet("r", None, 0),
            vec![tweet("a", Some("r"), 1), tweet("b", Some("a"), 2)],
        )
        .unwrap();
        assert_eq!(
            thread_adjacency(&chain).data(),
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]
        );

        let star = ConversationThread::new(
            tweet("r", None, 0),
            vec![
                tweet("a", Some("r"), 1),
                tweet("b", Some("r"), 2),
                tweet("c", Some("r"), 3),
            ],
        )
        .unwrap();
        let a = thread_adjacency(&star);
        let row_sums: Vec<f64> = a.data().chunks(4).map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, [3.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn empty_and_root_only_input() {
        let c = read_corpus("".as_bytes()).unwrap();
        assert_eq!(c.len(), 0);
        let line = r#"{"root":{"id":"t","ts":0,"text":"Hi there","author":"u"},"replies":[]}"#;
        let c = read_corpus(line.as_bytes()).unwrap();
        assert_eq!(c.threads()[0].len(), 0);
        assert_eq!(c.threads()[0].root().tokens, ["hi", "there"]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{\"root\":{\"id\":\"t\",\"ts\":0,\"text\":\"\",\"author\":\"u\"},\"replies\":[]}\n{oops\n";
        match read_corpus(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn split_counts() {
        let threads = (0..10)
            .map(|i| ConversationThread::new(tweet(&format!("t{i}"), None, 0), vec![]).unwrap())
            .collect();
        let c = Corpus::new(threads, Provenance::Ingested).unwrap();
        let (train, test) = split_train_test(&c, 0.8, 3).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let (train2, _) = split_train_test(&c, 0.8, 3).unwrap();
        let ids = |c: &Corpus| {
            c.threads()
                .iter()
                .map(|t| t.id().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&train), ids(&train2));
        assert!(split_train_test(&c, 1.0, 3).is_err());
        let one = Corpus::new(vec![c.threads()[0].clone()], Provenance::Ingested).unwrap();
        assert!(split_train_test(&one, 0.5, 1).is_err());
    }
}
