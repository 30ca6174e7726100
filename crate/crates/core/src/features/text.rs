use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, View};
use crate::archive::Archive;
use crate::corpus::Corpus;
use crate::decomp::{self, CsrMatrix, Projector};
use crate::error::{PersError, Result};
use crate::textprep::{self, NormalizerConfig};

/// user_id → concatenated, normalized document, in corpus order.
pub type Documents = IndexMap<String, String>;

/// Normalize each post and join them with single spaces.
pub fn build_user_documents(corpus: &Corpus, config: &NormalizerConfig) -> Documents {
    corpus
        .users
        .par_iter()
        .map(|u| {
            let posts: Vec<String> = u
                .posts
                .iter()
                .filter_map(|p| textprep::preprocess_or_drop(p, config))
                .filter(|p| !p.is_empty())
                .collect();
            (u.user_id.clone(), posts.join(" "))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

const ATOMIC_WORDS: [&str; 3] = [
    textprep::URL_PLACEHOLDER,
    textprep::HASHTAG_PLACEHOLDER,
    textprep::DATETIME_PLACEHOLDER,
];

fn emoji_token_len(s: &str) -> Option<usize> {
    let b = s.as_bytes();
    if b.first() != Some(&b':') {
        return None;
    }
    let end = b[1..]
        .iter()
        .position(|&c| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == b'_'))?
        + 1;
    (end > 1 && b[end] == b':').then_some(end + 1)
}

/// Lowercased word tokens split on whitespace and punctuation. Placeholders
/// (`<type>`, `@USER`, `HTTPURL`, `HASHTAG`, `DATETIME`) and `:emoji_name:`
/// tokens are kept whole and verbatim.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            if let Some(tail) = rest.strip_prefix(textprep::TYPE_PLACEHOLDER) {
                tokens.push(textprep::TYPE_PLACEHOLDER.to_string());
                rest = tail;
                continue;
            }
            if let Some(tail) = rest.strip_prefix(textprep::USER_PLACEHOLDER) {
                if !tail.starts_with(|c: char| c.is_alphanumeric() || c == '_') {
                    tokens.push(textprep::USER_PLACEHOLDER.to_string());
                    rest = tail;
                    continue;
                }
            }
            if let Some(n) = emoji_token_len(rest) {
                tokens.push(rest[..n].to_string());
                rest = &rest[n..];
                continue;
            }
            let c = rest.chars().next().expect("non-empty");
            if c.is_alphanumeric() {
                let end = rest.find(|c: char| !c.is_alphanumeric()).unwrap_or(rest.len());
                let word = &rest[..end];
                if ATOMIC_WORDS.contains(&word) {
                    tokens.push(word.to_string());
                } else {
                    tokens.push(word.to_lowercase());
                }
                rest = &rest[end..];
            } else {
                rest = &rest[c.len_utf8()..];
            }
        }
    }
    tokens
}

/// Raw term counts over the vocabulary; out-of-vocabulary terms are ignored.
pub fn term_counts(vocab: &Vocabulary, document: &str) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for tok in tokenize(document) {
        if let Some(&idx) = vocab.index.get(&tok) {
            *counts.entry(idx).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextFeaturizerConfig {
    pub k: usize,
    pub min_df: usize,
    pub max_df_ratio: f64,
}

impl Default for TextFeaturizerConfig {
    fn default() -> Self {
        TextFeaturizerConfig {
            k: 100,
            min_df: 2,
            max_df_ratio: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub document_frequency: Vec<usize>,
    pub n_docs: usize,
    pub min_df: usize,
    pub max_df_ratio: f64,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    format: String,
    version: u32,
    n_docs: usize,
    min_df: usize,
    max_df_ratio: f64,
    terms: Vec<String>,
    document_frequency: Vec<usize>,
}

impl Vocabulary {
    /// Terms with `min_df ≤ df ≤ max_df_ratio · n_docs`, indexed in
    /// lexicographic order.
    pub fn fit<'a>(documents: impl IntoIterator<Item = &'a str>, min_df: usize, max_df_ratio: f64) -> Result<Self> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0;
        for doc in documents {
            n_docs += 1;
            let mut toks = tokenize(doc);
            toks.sort_unstable();
            toks.dedup();
            for t in toks {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        let max_df = max_df_ratio * n_docs as f64;
        let (terms, document_frequency): (Vec<String>, Vec<usize>) = df
            .into_iter()
            .filter(|(_, d)| *d >= min_df && (*d as f64) <= max_df)
            .unzip();
        if terms.is_empty() {
            return Err(PersError::EmptyVocabulary);
        }
        Ok(Self::from_parts(terms, document_frequency, n_docs, min_df, max_df_ratio))
    }

    fn from_parts(terms: Vec<String>, document_frequency: Vec<usize>, n_docs: usize, min_df: usize, max_df_ratio: f64) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            terms,
            document_frequency,
            n_docs,
            min_df,
            max_df_ratio,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Smoothed inverse document frequency, `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, idx: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.document_frequency[idx] as f64)).ln() + 1.0
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = VocabularyFile {
            format: "pers-vocabulary".into(),
            version: 1,
            n_docs: self.n_docs,
            min_df: self.min_df,
            max_df_ratio: self.max_df_ratio,
            terms: self.terms.clone(),
            document_frequency: self.document_frequency.clone(),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let f: VocabularyFile = serde_json::from_slice(bytes)?;
        if f.format != "pers-vocabulary" || f.version != 1 || f.terms.len() != f.document_frequency.len() {
            return Err(PersError::Format("unsupported or inconsistent vocabulary file".into()));
        }
        Ok(Self::from_parts(f.terms, f.document_frequency, f.n_docs, f.min_df, f.max_df_ratio))
    }
}

/// Raw-count TF times smoothed IDF, L2-normalized per row. Rows of
/// documents with no known terms are all zero.
pub fn tfidf_matrix<'a>(vocab: &Vocabulary, documents: impl IntoIterator<Item = &'a str>) -> CsrMatrix {
    let docs: Vec<&str> = documents.into_iter().collect();
    let rows: Vec<Vec<(usize, f64)>> = docs
        .par_iter()
        .map(|doc| {
            let weighted: Vec<(usize, f64)> = term_counts(vocab, doc)
                .into_iter()
                .map(|(idx, c)| (idx, c as f64 * vocab.idf(idx)))
                .collect();
            let norm = weighted.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                weighted.into_iter().map(|(i, v)| (i, v / norm)).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    CsrMatrix::from_rows(vocab.len(), rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeaturizer {
    pub config: TextFeaturizerConfig,
    pub vocabulary: Vocabulary,
    pub projector: Projector,
}

pub fn fit_text_featurizer(documents: &Documents, config: TextFeaturizerConfig, seed: u64) -> Result<TextFeaturizer> {
    if documents.len() < 2 {
        return Err(PersError::InsufficientData(format!(
            "text featurizer needs at least 2 documents, got {}",
            documents.len()
        )));
    }
    let vocabulary = Vocabulary::fit(documents.values().map(String::as_str), config.min_df, config.max_df_ratio)?;
    if config.k == 0 || config.k > documents.len().min(vocabulary.len()) {
        return Err(PersError::Dimension(format!(
            "LSA dimension {} exceeds min(documents {}, vocabulary {})",
            config.k,
            documents.len(),
            vocabulary.len()
        )));
    }
    let tfidf = tfidf_matrix(&vocabulary, documents.values().map(String::as_str));
    let projector = decomp::truncated_svd(&tfidf, config.k, seed)?;
    Ok(TextFeaturizer {
        config,
        vocabulary,
        projector,
    })
}

impl TextFeaturizer {
    pub fn dim(&self) -> usize {
        self.projector.k()
    }

    /// Rows follow the iteration order of `documents`.
    pub fn apply(&self, documents: &Documents) -> Result<FeatureMatrix> {
        let tfidf = tfidf_matrix(&self.vocabulary, documents.values().map(String::as_str));
        let data = decomp::project_operator(&self.projector, &tfidf)?;
        let n = documents.len();
        FeatureMatrix::new(data, documents.keys().cloned().collect(), View::Text, vec![true; n])
    }

    pub fn store(&self, prefix: &str, archive: &mut Archive) -> Result<()> {
        archive.insert_json(format!("{prefix}/config.json"), &self.config)?;
        archive.insert(format!("{prefix}/vocabulary.json"), self.vocabulary.to_json()?);
        archive.insert(format!("{prefix}/projector.bin"), self.projector.to_bytes());
        Ok(())
    }

    pub fn load(prefix: &str, archive: &Archive) -> Result<Self> {
        Ok(TextFeaturizer {
            config: archive.get_json(&format!("{prefix}/config.json"))?,
            vocabulary: Vocabulary::from_json(archive.get(&format!("{prefix}/vocabulary.json"))?)?,
            projector: Projector::from_bytes(archive.get(&format!("{prefix}/projector.bin"))?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_mbti_code, Corpus, Source, UserRecord};

    fn docs(pairs: &[(&str, &str)]) -> Documents {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn tokenizer_keeps_placeholders() {
        assert_eq!(
            tokenize("I'm an <type>! @USER said HTTPURL, HASHTAG at DATETIME :party_popper: Hello-World"),
            vec![
                "i", "m", "an", "<type>", "@USER", "said", "HTTPURL", "HASHTAG", "at", "DATETIME", ":party_popper:",
                "hello", "world"
            ]
        );
        assert_eq!(tokenize("@USERS httpurl"), vec!["users", "httpurl"]);
        assert!(tokenize("  ... ").is_empty());
    }

    #[test]
    fn documents_concatenate_normalized_posts() {
        let users = vec![
            UserRecord {
                user_id: "u1".into(),
                source: Source::Twitter,
                label: parse_mbti_code("ENTP").unwrap(),
                posts: vec!["a b".into(), "c".into()],
                image_ids: vec![],
            },
            UserRecord {
                user_id: "u2".into(),
                source: Source::Twitter,
                label: parse_mbti_code("INFJ").unwrap(),
                posts: vec!["proud ENTP here".into(), "@x".into()],
                image_ids: vec![],
            },
        ];
        let c = Corpus::new(users.clone()).unwrap();
        let cfg = NormalizerConfig::default();
        let d = build_user_documents(&c, &cfg);
        assert_eq!(d["u1"], "a b c");
        assert_eq!(d["u2"], "proud <type> here @USER");
        let rev = Corpus::new(users.into_iter().rev().collect()).unwrap();
        let d2 = build_user_documents(&rev, &cfg);
        assert_eq!(d2.keys().collect::<Vec<_>>(), vec!["u2", "u1"]);
        assert_eq!(d2["u1"], d["u1"]);
    }

    #[test]
    fn tfidf_hand_values() {
        let d = docs(&[("d1", "a b"), ("d2", "a c")]);
        let v = Vocabulary::fit(d.values().map(String::as_str), 1, 1.0).unwrap();
        assert_eq!(v.terms, vec!["a", "b", "c"]);
        assert!((v.idf(0) - 1.0).abs() < 1e-15);
        assert!((v.idf(1) - (1.5f64.ln() + 1.0)).abs() < 1e-15);
        assert!((v.idf(1) - 1.4055).abs() < 1e-4);
        let m = tfidf_matrix(&v, d.values().map(String::as_str)).to_dense();
        assert!((m[[0, 0]] - 0.580).abs() < 1e-3);
        assert!((m[[0, 1]] - 0.815).abs() < 1e-3);
        assert_eq!(m[[0, 2]], 0.0);
        for row in m.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn pruning_and_idf_floor() {
        let d = docs(&[("1", "x y z"), ("2", "x y"), ("3", "x q")]);
        let v = Vocabulary::fit(d.values().map(String::as_str), 2, 1.0).unwrap();
        assert_eq!(v.terms, vec!["x", "y"]);
        assert_eq!(v.idf(0), 1.0);
        let v = Vocabulary::fit(d.values().map(String::as_str), 1, 0.95).unwrap();
        assert!(v.index_of("x").is_none());
        assert!(matches!(
            Vocabulary::fit(d.values().map(String::as_str), 5, 1.0),
            Err(PersError::EmptyVocabulary)
        ));
    }

    #[test]
    fn oov_handling() {
        let d = docs(&[("1", "alpha beta"), ("2", "alpha gamma"), ("3", "beta gamma delta")]);
        let f = fit_text_featurizer(&d, TextFeaturizerConfig { k: 2, min_df: 1, max_df_ratio: 1.0 }, 3).unwrap();
        let oov = docs(&[("z", "zzz qqq")]);
        let m = f.apply(&oov).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0));
        let before = term_counts(&f.vocabulary, "alpha beta beta");
        let after = term_counts(&f.vocabulary, "alpha beta beta unseenword");
        assert_eq!(before, after);
    }

    #[test]
    fn apply_reproduces_fit_projection() {
        let d = docs(&[
            ("1", "cats purr softly"),
            ("2", "dogs bark loudly"),
            ("3", "cats and dogs"),
            ("4", "purr bark purr"),
        ]);
        let f = fit_text_featurizer(&d, TextFeaturizerConfig { k: 3, min_df: 1, max_df_ratio: 1.0 }, 1).unwrap();
        let tfidf = tfidf_matrix(&f.vocabulary, d.values().map(String::as_str));
        let direct = decomp::project_operator(&f.projector, &tfidf).unwrap();
        let m = f.apply(&d).unwrap();
        assert!((&m.data - &direct).iter().all(|v| v.abs() < 1e-10));
        assert_eq!(m.ncols(), 3);
        assert_eq!(f.apply(&d).unwrap(), m);
        assert_eq!(m.row_ids, vec!["1", "2", "3", "4"]);
    }

    #[test]
    fn fit_errors() {
        let one = docs(&[("1", "a b")]);
        assert!(matches!(
            fit_text_featurizer(&one, TextFeaturizerConfig::default(), 0),
            Err(PersError::InsufficientData(_))
        ));
        let two = docs(&[("1", "a b"), ("2", "a c")]);
        let cfg = TextFeaturizerConfig { k: 5, min_df: 1, max_df_ratio: 1.0 };
        assert!(matches!(fit_text_featurizer(&two, cfg, 0), Err(PersError::Dimension(_))));
    }

    #[test]
    fn archive_round_trip() {
        let d = docs(&[("1", "a b c"), ("2", "a c d"), ("3", "b d e")]);
        let f = fit_text_featurizer(&d, TextFeaturizerConfig { k: 2, min_df: 1, max_df_ratio: 1.0 }, 1).unwrap();
        let mut a = Archive::new();
        f.store("text", &mut a).unwrap();
        let back = TextFeaturizer::load("text", &Archive::from_bytes(&a.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, f);
    }
}
