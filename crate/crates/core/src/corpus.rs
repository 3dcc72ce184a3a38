//! Corpus curation: metadata dedup and paragraph chunking.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde_json::Value as Json;
use thiserror::Error;

use crate::canon::Obj;
use crate::tree_format::{format_date, parse_date};

pub const DEFAULT_SOFT_LIMIT: usize = 4500;
pub const DEFAULT_MAX_CHUNKS: usize = 4;
pub const METADATA_FILE: &str = "metadata.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{file}:{line}: {message}")]
    Metadata { file: String, line: usize, message: String },
    #[error("duplicate guideline id {0:?}")]
    DuplicateId(String),
    #[error("guideline {0:?} has no document text")]
    MissingText(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuidelineMeta {
    pub guideline_id: String,
    pub source_org: String,
    pub disease_or_drug: String,
    pub age_group: String,
    pub race: String,
    pub gender: String,
    pub publication_date: NaiveDate,
}

impl GuidelineMeta {
    pub fn from_json(v: &Json) -> Result<Self, String> {
        let obj = v.as_object().ok_or("expected an object")?;
        let field = |k: &str| {
            obj.get(k)
                .and_then(Json::as_str)
                .map(str::to_string)
                .ok_or_else(|| format!("missing string field {k:?}"))
        };
        let date = field("publication_date")?;
        let publication_date = parse_date(&date).ok_or_else(|| format!("malformed publication_date {date:?}"))?;
        let guideline_id = field("guideline_id")?;
        if guideline_id.is_empty() {
            return Err("empty guideline_id".into());
        }
        Ok(GuidelineMeta {
            guideline_id,
            source_org: field("source_org")?,
            disease_or_drug: field("disease_or_drug")?,
            age_group: field("age_group")?,
            race: field("race")?,
            gender: field("gender")?,
            publication_date,
        })
    }

    pub fn to_json(&self) -> Json {
        Obj::new()
            .field("guideline_id", self.guideline_id.clone())
            .field("source_org", self.source_org.clone())
            .field("disease_or_drug", self.disease_or_drug.clone())
            .field("age_group", self.age_group.clone())
            .field("race", self.race.clone())
            .field("gender", self.gender.clone())
            .field("publication_date", format_date(self.publication_date))
            .build()
    }

    pub fn dedup_key(&self) -> [String; 4] {
        let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        [
            norm(&self.disease_or_drug),
            norm(&self.age_group),
            norm(&self.race),
            norm(&self.gender),
        ]
    }
}

pub fn parse_metadata(text: &str, file: &str) -> Result<Vec<GuidelineMeta>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| CorpusError::Metadata {
            file: file.to_string(),
            line: n + 1,
            message,
        };
        let json: Json = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        out.push(GuidelineMeta::from_json(&json).map_err(err)?);
    }
    let mut seen = std::collections::HashSet::new();
    for m in &out {
        if !seen.insert(m.guideline_id.as_str()) {
            return Err(CorpusError::DuplicateId(m.guideline_id.clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub meta: GuidelineMeta,
    pub text: String,
}

/// Reads `metadata.jsonl` and one `<guideline_id>.txt` per record.
/// A directory without a metadata file is an empty corpus.
pub fn load_corpus(dir: &Path) -> Result<Vec<Document>, CorpusError> {
    let meta_path = dir.join(METADATA_FILE);
    if !meta_path.exists() {
        return Ok(Vec::new());
    }
    let io = |p: &Path, e| CorpusError::Io(p.display().to_string(), e);
    let text = fs::read_to_string(&meta_path).map_err(|e| io(&meta_path, e))?;
    let metas = parse_metadata(&text, &meta_path.display().to_string())?;
    metas
        .into_iter()
        .map(|meta| {
            let path = dir.join(format!("{}.txt", meta.guideline_id));
            if !path.exists() {
                return Err(CorpusError::MissingText(meta.guideline_id.clone()));
            }
            let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            Ok(Document { meta, text })
        })
        .collect()
}

/// Keeps the most recent record per dedup key; ties go to the greatest id.
/// Survivors keep their input order.
pub fn dedup_guidelines(metas: &[GuidelineMeta]) -> Vec<GuidelineMeta> {
    let mut best: HashMap<[String; 4], usize> = HashMap::new();
    for (i, m) in metas.iter().enumerate() {
        let rank = |j: usize| (metas[j].publication_date, metas[j].guideline_id.as_str());
        best.entry(m.dedup_key())
            .and_modify(|b| {
                if rank(i) > rank(*b) {
                    *b = i;
                }
            })
            .or_insert(i);
    }
    let keep: std::collections::BTreeSet<usize> = best.into_values().collect();
    keep.into_iter().map(|i| metas[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub chunk_id: String,
    pub text: String,
    pub word_count: usize,
    pub overflow: bool,
    /// Byte range of `text` within the source document.
    pub span: (usize, usize),
}

impl Chunk {
    pub fn to_json(&self) -> Json {
        Obj::new()
            .field("chunk_id", self.chunk_id.clone())
            .field("text", self.text.clone())
            .field("word_count", self.word_count as u64)
            .field("overflow", self.overflow)
            .build()
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn separator() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\r?\n(?:[ \t]*\r?\n)+").expect("static regex"))
}

/// Byte spans of blank-line-separated paragraphs, whitespace-only ones dropped.
pub fn paragraph_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut push = |s: usize, e: usize| {
        if !text[s..e].trim().is_empty() {
            spans.push((s, e));
        }
    };
    for m in separator().find_iter(text) {
        push(start, m.start());
        start = m.end();
    }
    push(start, text.len());
    spans
}

/// Greedy paragraph packing under a soft word limit.
///
/// A chunk is flagged `overflow` when it exceeds the limit, which can only
/// happen for the final chunk or for a single oversize paragraph.
pub fn chunk_document(guideline_id: &str, text: &str, soft_limit: usize, max_chunks: usize) -> Vec<Chunk> {
    let max_chunks = max_chunks.max(1);
    let mut groups: Vec<(usize, usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize, usize)> = None;
    for (s, e) in paragraph_spans(text) {
        let words = word_count(&text[s..e]);
        current = Some(match current {
            None => (s, e, words),
            Some((cs, _, cw)) if groups.len() + 1 >= max_chunks || cw + words <= soft_limit => (cs, e, cw + words),
            Some(done) => {
                groups.push(done);
                (s, e, words)
            }
        });
    }
    groups.extend(current);
    groups
        .into_iter()
        .enumerate()
        .map(|(k, (s, e, words))| Chunk {
            chunk_id: format!("{guideline_id}#{k}"),
            text: text[s..e].to_string(),
            word_count: words,
            overflow: words > soft_limit,
            span: (s, e),
        })
        .collect()
}

/// Rebuilds the document from its chunks and the original separators.
pub fn reassemble(text: &str, chunks: &[Chunk]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for c in chunks {
        out.push_str(&text[cursor..c.span.0]);
        out.push_str(&c.text);
        cursor = c.span.1;
    }
    out.push_str(&text[cursor..]);
    out
}

/// Stage counts for a curation pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CurationSummary {
    pub documents: usize,
    pub deduplicated: usize,
    pub chunks: usize,
    pub by_guideline: BTreeMap<String, usize>,
}

/// Dedups the corpus and chunks every surviving document.
pub fn curate(docs: &[Document], soft_limit: usize, max_chunks: usize) -> (Vec<Document>, Vec<Chunk>, CurationSummary) {
    let metas: Vec<_> = docs.iter().map(|d| d.meta.clone()).collect();
    let survivors: Vec<Document> = dedup_guidelines(&metas)
        .into_iter()
        .map(|m| docs.iter().find(|d| d.meta == m).expect("survivor from input").clone())
        .collect();
    let mut chunks = Vec::new();
    let mut summary = CurationSummary {
        documents: docs.len(),
        deduplicated: survivors.len(),
        ..Default::default()
    };
    for d in &survivors {
        let cs = chunk_document(&d.meta.guideline_id, &d.text, soft_limit, max_chunks);
        summary.by_guideline.insert(d.meta.guideline_id.clone(), cs.len());
        chunks.extend(cs);
    }
    summary.chunks = chunks.len();
    (survivors, chunks, summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, disease: &str, date: &str) -> GuidelineMeta {
        GuidelineMeta {
            guideline_id: id.into(),
            source_org: "cdc".into(),
            disease_or_drug: disease.into(),
            age_group: "adult".into(),
            race: "any".into(),
            gender: "any".into(),
            publication_date: parse_date(date).unwrap(),
        }
    }

    fn paragraphs(n: usize, words: usize) -> String {
        let para = vec!["word"; words].join(" ");
        vec![para; n].join("\n\n")
    }

    #[test]
    fn greedy_examples() {
        let text = paragraphs(3, 2000);
        let counts: Vec<_> = chunk_document("g", &text, 4500, 4).iter().map(|c| c.word_count).collect();
        assert_eq!(counts, [4000, 2000]);

        let chunks = chunk_document("g", &paragraphs(1, 10_000), 4500, 4);
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].overflow);

        let chunks = chunk_document("g", &paragraphs(9, 2000), 4500, 4);
        let shape: Vec<_> = chunks.iter().map(|c| (c.word_count, c.overflow)).collect();
        assert_eq!(shape, [(4000, false), (4000, false), (4000, false), (6000, true)]);
        assert_eq!(chunks[3].chunk_id, "g#3");
    }

    #[test]
    fn reassembly_restores_text() {
        let text = "\n  intro line\nsame para\n\n\n second  \n \t\nthird\n";
        let chunks = chunk_document("g", text, 3, 4);
        assert_eq!(chunks.len(), 2);
        assert_eq!(reassemble(text, &chunks), text);
        for c in &chunks {
            assert_eq!(c.word_count, word_count(&c.text));
        }
    }

    #[test]
    fn oversize_paragraph_mid_document() {
        let text = format!("{}\n\nshort tail", paragraphs(1, 50));
        let chunks = chunk_document("g", &text, 10, 4);
        let shape: Vec<_> = chunks.iter().map(|c| (c.word_count, c.overflow)).collect();
        assert_eq!(shape, [(50, true), (2, false)]);
    }

    #[test]
    fn dedup_rules() {
        let out = dedup_guidelines(&[meta("a", "Asthma", "2019-01-01"), meta("b", "asthma ", "2022-06-01")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].guideline_id, "b");

        let out = dedup_guidelines(&[meta("a", "asthma", "2019-01-01"), meta("b", "copd", "2019-01-01")]);
        assert_eq!(out.len(), 2);

        let out = dedup_guidelines(&[meta("cdc-002", "x", "2020-01-01"), meta("cdc-001", "X", "2020-01-01")]);
        assert_eq!(out[0].guideline_id, "cdc-002");
    }

    #[test]
    fn dedup_preserves_order_and_is_idempotent() {
        let input = vec![
            meta("c", "copd", "2018-01-01"),
            meta("a", "asthma", "2019-01-01"),
            meta("d", "copd", "2021-01-01"),
            meta("b", "diabetes", "2015-01-01"),
        ];
        let once = dedup_guidelines(&input);
        let ids: Vec<_> = once.iter().map(|m| m.guideline_id.as_str()).collect();
        assert_eq!(ids, ["a", "d", "b"]);
        assert_eq!(dedup_guidelines(&once), once);
    }

    #[test]
    fn metadata_parsing() {
        let good = r#"{"guideline_id":"g1","source_org":"cdc","disease_or_drug":"x","age_group":"adult","race":"any","gender":"any","publication_date":"2020-02-29"}"#;
        let metas = parse_metadata(good, "m").unwrap();
        assert_eq!(metas[0].to_json(), serde_json::from_str::<Json>(good).unwrap());
        let bad = good.replace("2020-02-29", "2021-02-29");
        assert!(matches!(parse_metadata(&bad, "m"), Err(CorpusError::Metadata { line: 1, .. })));
        let dup = format!("{good}\n{good}");
        assert!(matches!(parse_metadata(&dup, "m"), Err(CorpusError::DuplicateId(_))));
    }
}
