//! Users, labels, ingestion, filtering, stratified splitting and dataset
//! statistics.

mod label;
mod split;
mod stats;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PersError, Result};
use crate::features::ImageConceptStore;

pub use label::{parse_mbti_code, Dimension, MbtiLabel};
pub use split::{stratified_split, SplitAssignment};
pub use stats::{corpus_stats, DimensionStats, SourceStats, StatsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Twitter,
    Facebook,
    #[serde(alias = "personalitycafe")]
    Percafe,
    Synthetic,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Twitter, Source::Facebook, Source::Percafe, Source::Synthetic];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Twitter => "twitter",
            Source::Facebook => "facebook",
            Source::Percafe => "percafe",
            Source::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub source: Source,
    pub label: MbtiLabel,
    pub posts: Vec<String>,
    #[serde(default)]
    pub image_ids: Vec<String>,
}

/// An ingested set of users. Immutable once built; every operation on it
/// returns a new value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub users: Vec<UserRecord>,
    pub image_store_path: Option<PathBuf>,
}

impl Corpus {
    /// Build a corpus, enforcing unique ids and non-empty post lists.
    pub fn new(users: Vec<UserRecord>) -> Result<Self> {
        validate_users(&users)?;
        Ok(Corpus {
            users,
            image_store_path: None,
        })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.users.iter().map(|u| u.user_id.clone()).collect()
    }

    pub fn get(&self, user_id: &str) -> Option<&UserRecord> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    /// Users whose id is in `ids`, in the order given by `ids`.
    pub fn subset(&self, ids: &[String]) -> Result<Corpus> {
        let index: std::collections::HashMap<&str, &UserRecord> =
            self.users.iter().map(|u| (u.user_id.as_str(), u)).collect();
        let users = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|u| (*u).clone())
                    .ok_or_else(|| PersError::Alignment(format!("unknown user id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            users,
            image_store_path: self.image_store_path.clone(),
        })
    }

    pub fn labels(&self) -> Vec<MbtiLabel> {
        self.users.iter().map(|u| u.label).collect()
    }

    /// Serialize to the JSONL users format.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| PersError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for u in &self.users {
            serde_json::to_writer(&mut w, u)?;
            w.write_all(b"\n").map_err(|e| PersError::io(path, e))?;
        }
        w.flush().map_err(|e| PersError::io(path, e))
    }
}

fn validate_users(users: &[UserRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(users.len());
    for u in users {
        if u.user_id.is_empty() {
            return Err(PersError::Schema("empty user_id".into()));
        }
        if !seen.insert(u.user_id.as_str()) {
            return Err(PersError::Schema(format!("duplicate user_id {:?}", u.user_id)));
        }
        if u.posts.is_empty() {
            return Err(PersError::Schema(format!("user {:?} has no posts", u.user_id)));
        }
    }
    Ok(())
}

fn read_users(path: &Path) -> Result<Vec<UserRecord>> {
    if !path.exists() {
        return Err(PersError::MissingArtifact(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| PersError::io(path, e))?;
    let mut users = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PersError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: UserRecord = serde_json::from_str(&line)
            .map_err(|e| PersError::Schema(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        users.push(record);
    }
    Ok(users)
}

/// Read a users JSONL file and, when given, the image store it references.
/// Every referenced image id must resolve in the store.
pub fn ingest_corpus_with_store(
    users_path: &Path,
    images_path: Option<&Path>,
) -> Result<(Corpus, Option<ImageConceptStore>)> {
    let users = read_users(users_path)?;
    validate_users(&users)?;
    let store = match images_path {
        Some(p) => {
            let store = ImageConceptStore::load(p)?;
            for u in &users {
                for id in &u.image_ids {
                    if !store.contains(id) {
                        return Err(PersError::DanglingImageRef {
                            user_id: u.user_id.clone(),
                            image_id: id.clone(),
                        });
                    }
                }
            }
            Some(store)
        }
        None => None,
    };
    let corpus = Corpus {
        users,
        image_store_path: images_path.map(Path::to_path_buf),
    };
    Ok((corpus, store))
}

pub fn ingest_corpus(users_path: &Path, images_path: Option<&Path>) -> Result<Corpus> {
    ingest_corpus_with_store(users_path, images_path).map(|(c, _)| c)
}

/// Keep the users with at least `min_posts` posts, preserving order.
pub fn filter_min_posts(corpus: &Corpus, min_posts: usize) -> Corpus {
    let min_posts = min_posts.max(1);
    Corpus {
        users: corpus
            .users
            .iter()
            .filter(|u| u.posts.len() >= min_posts)
            .cloned()
            .collect(),
        image_store_path: corpus.image_store_path.clone(),
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn user(id: &str, code: &str, n_posts: usize) -> UserRecord {
        UserRecord {
            user_id: id.to_string(),
            source: Source::Synthetic,
            label: parse_mbti_code(code).unwrap(),
            posts: (0..n_posts).map(|i| format!("post {i}")).collect(),
            image_ids: vec![],
        }
    }
}
