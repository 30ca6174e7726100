//! Seeded synthetic corpora with planted, tunable per-dimension signal.
//!
//! Text: every post carries a few topical slots per dimension. A slot draws a
//! token from the vocabulary of the user's own pole with probability
//! `(1 + s) / 2` and from the opposite pole otherwise, so `s = 0` plants
//! nothing. Images: each image's concept vector is exponential noise plus a
//! bump on the concept block of one pole per dimension, chosen the same way,
//! normalized to sum to one.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_mbti_code, Corpus, Dimension, MbtiLabel, Source, UserRecord};
use crate::error::{PersError, Result};
use crate::features::ImageConceptStore;
use crate::rng::rng_from;

/// User counts per type (INFP, INFJ, INTP, INTJ, ENFP, ENTP, ISFP, ISTP, ENTJ,
/// ISTJ, ENFJ, ISFJ, ESTP, ESFJ, ESFP, ESTJ) for the three harvested sources.
const TYPE_ORDER: [&str; 16] = [
    "INFP", "INFJ", "INTP", "INTJ", "ENFP", "ENTP", "ISFP", "ISTP", "ENTJ", "ISTJ", "ENFJ", "ISFJ", "ESTP", "ESFJ",
    "ESFP", "ESTJ",
];
const TWITTER_COUNTS: [u32; 16] = [5334, 4177, 1121, 3544, 3496, 122, 413, 508, 389, 739, 323, 456, 200, 52, 311, 120];
const FACEBOOK_COUNTS: [u32; 16] = [1665, 1498, 814, 521, 2381, 671, 161, 131, 412, 162, 1468, 535, 63, 666, 316, 266];
const PERCAFE_COUNTS: [u32; 16] = [713, 664, 508, 487, 353, 256, 137, 127, 113, 98, 96, 85, 50, 43, 43, 27];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDistribution {
    Uniform,
    Twitter,
    Facebook,
    Percafe,
    /// Explicit probabilities keyed by type code; must sum to 1.
    Custom(BTreeMap<String, f64>),
}

impl LabelDistribution {
    /// Probability per label, indexed like [`MbtiLabel::all`].
    pub fn probabilities(&self) -> Result<Vec<(MbtiLabel, f64)>> {
        let from_counts = |counts: &[u32; 16]| -> Result<Vec<(MbtiLabel, f64)>> {
            let total: u32 = counts.iter().sum();
            TYPE_ORDER
                .iter()
                .zip(counts)
                .map(|(c, &n)| Ok((parse_mbti_code(c)?, f64::from(n) / f64::from(total))))
                .collect()
        };
        let mut probs = match self {
            LabelDistribution::Uniform => MbtiLabel::all().iter().map(|&l| (l, 1.0 / 16.0)).collect(),
            LabelDistribution::Twitter => from_counts(&TWITTER_COUNTS)?,
            LabelDistribution::Facebook => from_counts(&FACEBOOK_COUNTS)?,
            LabelDistribution::Percafe => from_counts(&PERCAFE_COUNTS)?,
            LabelDistribution::Custom(map) => {
                let mut out = Vec::with_capacity(map.len());
                for (code, &p) in map {
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(PersError::Config(format!("probability for {code} must be >= 0, got {p}")));
                    }
                    out.push((parse_mbti_code(code)?, p));
                }
                let sum: f64 = out.iter().map(|(_, p)| p).sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(PersError::Config(format!("label distribution sums to {sum}, not 1")));
                }
                out
            }
        };
        probs.sort_by_key(|(l, _)| *l);
        Ok(probs)
    }

    /// Probability of the first pole of `dim`.
    pub fn first_pole_rate(&self, dim: Dimension) -> Result<f64> {
        Ok(self
            .probabilities()?
            .iter()
            .filter(|(l, _)| l.pole(dim))
            .map(|(_, p)| p)
            .sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub posts_per_user: usize,
    pub topical_slots: usize,
    pub noise_slots: usize,
    pub signal_vocab: usize,
    pub noise_vocab: usize,
    /// Inclusive range of images per user.
    pub images_per_user: (usize, usize),
    pub n_concepts: usize,
    pub bump_width: usize,
    pub bump_height: f64,
    /// Signal strength per dimension in EI, SN, TF, JP order.
    pub text_strength: [f64; 4],
    pub image_strength: [f64; 4],
    pub decoy_rate: f64,
    pub label_distribution: LabelDistribution,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 500,
            posts_per_user: 20,
            topical_slots: 2,
            noise_slots: 10,
            signal_vocab: 20,
            noise_vocab: 400,
            images_per_user: (0, 6),
            n_concepts: 300,
            bump_width: 5,
            bump_height: 2.0,
            text_strength: [0.5; 4],
            image_strength: [0.5; 4],
            decoy_rate: 0.3,
            label_distribution: LabelDistribution::Uniform,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Both views carry signal of `strength` on every dimension.
    pub fn planted(n_users: usize, strength: f64, seed: u64) -> Self {
        SynthConfig {
            n_users,
            text_strength: [strength; 4],
            image_strength: [strength; 4],
            seed,
            ..SynthConfig::default()
        }
    }

    pub fn zero_signal(n_users: usize, seed: u64) -> Self {
        Self::planted(n_users, 0.0, seed)
    }

    /// Text signals EI only, images signal SN only.
    pub fn complementary(n_users: usize, strength: f64, seed: u64) -> Self {
        SynthConfig {
            n_users,
            text_strength: [strength, 0.0, 0.0, 0.0],
            image_strength: [0.0, strength, 0.0, 0.0],
            seed,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(PersError::Config(m));
        if self.n_users < 2 {
            return cfg(format!("n_users must be at least 2, got {}", self.n_users));
        }
        if self.posts_per_user == 0 || self.topical_slots + self.noise_slots == 0 {
            return cfg("posts need at least one token slot".into());
        }
        if self.signal_vocab == 0 || self.noise_vocab == 0 {
            return cfg("vocabularies must be non-empty".into());
        }
        let (lo, hi) = self.images_per_user;
        if lo > hi {
            return cfg(format!("images_per_user range ({lo}, {hi}) is empty"));
        }
        if self.bump_width == 0 || self.n_concepts < 8 * self.bump_width {
            return cfg(format!(
                "n_concepts ({}) must hold 8 bump blocks of width {}",
                self.n_concepts, self.bump_width
            ));
        }
        if !(self.bump_height >= 0.0 && self.bump_height.is_finite()) {
            return cfg("bump_height must be finite and >= 0".into());
        }
        for s in self.text_strength.iter().chain(&self.image_strength) {
            if !(0.0..=1.0).contains(s) {
                return cfg(format!("signal strengths must lie in [0, 1], got {s}"));
            }
        }
        if !(0.0..=1.0).contains(&self.decoy_rate) {
            return cfg(format!("decoy_rate must lie in [0, 1], got {}", self.decoy_rate));
        }
        self.label_distribution.probabilities()?;
        Ok(())
    }
}

fn signal_token(dim: Dimension, first: bool, idx: usize) -> String {
    let (a, b) = dim.poles();
    let pole = if first { a } else { b };
    format!("sig{}{idx:02}", pole.to_ascii_lowercase())
}

const DECOY_MENTIONS: [&str; 4] = ["@friend", "@newsdesk", "@mia_k", "@the_team"];
const DECOY_URLS: [&str; 3] = ["https://example.com/p/", "http://t.co/x", "www.example.org/page"];
const DECOY_DATES: [&str; 4] = ["2021-05-17", "17/05/2021", "3:45 pm", "March 3, 2020"];
const DECOY_EMOJI: [&str; 4] = ["\u{1F389}", "\u{2764}\u{FE0F}", "\u{1F44D}", "\u{1F602}"];

fn decoy(rng: &mut ChaCha8Rng, label: MbtiLabel) -> String {
    match rng.random_range(0..7) {
        0 => {
            let code = label.code();
            match rng.random_range(0..3) {
                0 => format!("as an {code}"),
                1 => code.to_lowercase(),
                _ => format!("#{code}"),
            }
        }
        1 => format!("{}{}", DECOY_MENTIONS[rng.random_range(0..4)], rng.random_range(0..100)),
        2 => format!("{}{}", DECOY_URLS[rng.random_range(0..3)], rng.random_range(0..1000)),
        3 => format!("#topic{}", rng.random_range(0..50)),
        4 => DECOY_DATES[rng.random_range(0..4)].to_string(),
        5 => DECOY_EMOJI[rng.random_range(0..4)].to_string(),
        _ => "caf\u{e9}".to_string(),
    }
}

fn user_posts(cfg: &SynthConfig, label: MbtiLabel, rng: &mut ChaCha8Rng) -> Vec<String> {
    (0..cfg.posts_per_user)
        .map(|_| {
            let mut tokens: Vec<String> = Vec::with_capacity(4 * cfg.topical_slots + cfg.noise_slots + 1);
            for dim in Dimension::ALL {
                let agree = (1.0 + cfg.text_strength[dim.index()]) / 2.0;
                for _ in 0..cfg.topical_slots {
                    let own = rng.random_bool(agree);
                    let pole = if own { label.pole(dim) } else { !label.pole(dim) };
                    tokens.push(signal_token(dim, pole, rng.random_range(0..cfg.signal_vocab)));
                }
            }
            for _ in 0..cfg.noise_slots {
                tokens.push(format!("w{:04}", rng.random_range(0..cfg.noise_vocab)));
            }
            tokens.shuffle(rng);
            if rng.random_bool(cfg.decoy_rate) {
                let at = rng.random_range(0..=tokens.len());
                tokens.insert(at, decoy(rng, label));
            }
            tokens.join(" ")
        })
        .collect()
}

fn bump_block(cfg: &SynthConfig, dim: Dimension, first: bool) -> std::ops::Range<usize> {
    let block = 2 * dim.index() + usize::from(!first);
    block * cfg.bump_width..(block + 1) * cfg.bump_width
}

fn image_vector(cfg: &SynthConfig, label: MbtiLabel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..cfg.n_concepts).map(|_| Exp1.sample(rng)).collect();
    for dim in Dimension::ALL {
        let agree = (1.0 + cfg.image_strength[dim.index()]) / 2.0;
        let own = rng.random_bool(agree);
        let pole = if own { label.pole(dim) } else { !label.pole(dim) };
        for c in bump_block(cfg, dim, pole) {
            v[c] += cfg.bump_height;
        }
    }
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

/// Generate a corpus and its image store. Each user draws from its own
/// derived stream, so output is independent of scheduling.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<(Corpus, ImageConceptStore)> {
    cfg.validate()?;
    let probs = cfg.label_distribution.probabilities()?;
    let weights = WeightedIndex::new(probs.iter().map(|(_, p)| *p))
        .map_err(|e| PersError::Config(format!("label distribution: {e}")))?;
    let width = (cfg.n_users - 1).to_string().len().max(4);
    let users: Vec<(UserRecord, Vec<(String, Vec<f64>)>)> = (0..cfg.n_users)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(cfg.seed, &[i as u64]);
            let label = probs[weights.sample(&mut rng)].0;
            let posts = user_posts(cfg, label, &mut rng);
            let n_images = rng.random_range(cfg.images_per_user.0..=cfg.images_per_user.1);
            let user_id = format!("syn{i:0width$}");
            let images: Vec<(String, Vec<f64>)> = (0..n_images)
                .map(|k| (format!("{user_id}_img{k}"), image_vector(cfg, label, &mut rng)))
                .collect();
            let record = UserRecord {
                user_id,
                source: Source::Synthetic,
                label,
                posts,
                image_ids: images.iter().map(|(id, _)| id.clone()).collect(),
            };
            (record, images)
        })
        .collect();
    let mut store = ImageConceptStore::new(cfg.n_concepts);
    let mut records = Vec::with_capacity(users.len());
    for (record, images) in users {
        for (id, v) in images {
            store.insert(id, v)?;
        }
        records.push(record);
    }
    Ok((Corpus::new(records)?, store))
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

fn binomial_pmf(n: usize, q: f64) -> Vec<f64> {
    (0..=n)
        .map(|c| {
            let lq = if c == 0 { 0.0 } else { c as f64 * q.ln() };
            let lr = if c == n { 0.0 } else { (n - c) as f64 * (1.0 - q).ln() };
            (ln_choose(n, c) + lq + lr).exp()
        })
        .collect()
}

/// Accuracy of the ideal observer that sees which pole every topical slot
/// and every image bump came from, for one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesAccuracy {
    pub dimension: Dimension,
    pub text: f64,
    pub image: f64,
    pub joint: f64,
}

/// Exact ideal-observer accuracies under the generative model. Real
/// classifiers see noisier evidence (bumps sit on random noise, tokens are
/// mixed into documents), so these are upper bounds.
pub fn bayes_accuracy(cfg: &SynthConfig) -> Result<Vec<BayesAccuracy>> {
    cfg.validate()?;
    let m_text = cfg.posts_per_user * cfg.topical_slots;
    let (lo, hi) = cfg.images_per_user;
    let p_m = 1.0 / (hi - lo + 1) as f64;
    Dimension::ALL
        .iter()
        .map(|&dim| {
            let prior = cfg.label_distribution.first_pole_rate(dim)?;
            let qt = (1.0 + cfg.text_strength[dim.index()]) / 2.0;
            let qi = (1.0 + cfg.image_strength[dim.index()]) / 2.0;
            let t_a = binomial_pmf(m_text, qt);
            let t_b = binomial_pmf(m_text, 1.0 - qt);
            let none = [1.0];
            let mut acc = [0.0f64; 3];
            for m in lo..=hi {
                let i_a = binomial_pmf(m, qi);
                let i_b = binomial_pmf(m, 1.0 - qi);
                for (k, (ta, tb, ia, ib)) in [
                    (&t_a[..], &t_b[..], &none[..], &none[..]),
                    (&none[..], &none[..], &i_a[..], &i_b[..]),
                    (&t_a[..], &t_b[..], &i_a[..], &i_b[..]),
                ]
                .into_iter()
                .enumerate()
                {
                    let mut s = 0.0;
                    for (a1, b1) in ta.iter().zip(tb) {
                        for (a2, b2) in ia.iter().zip(ib) {
                            s += (prior * a1 * a2).max((1.0 - prior) * b1 * b2);
                        }
                    }
                    acc[k] += p_m * s;
                }
            }
            Ok(BayesAccuracy {
                dimension: dim,
                text: acc[0],
                image: acc[1],
                joint: acc[2],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub users: PathBuf,
    pub images: PathBuf,
}

/// Write `users.jsonl` and `images.csv` into `dir`.
pub fn write_synth(corpus: &Corpus, store: &ImageConceptStore, dir: &Path) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir).map_err(|e| PersError::io(dir, e))?;
    let files = SynthFiles {
        users: dir.join("users.jsonl"),
        images: dir.join("images.csv"),
    };
    corpus.write_jsonl(&files.users)?;
    store.write_csv(&files.images)?;
    Ok(files)
}

/// Generator metadata written next to the corpus.
pub fn write_summary(cfg: &SynthConfig, path: &Path) -> Result<()> {
    let summary = serde_json::json!({
        "config": cfg,
        "bayes_accuracy": bayes_accuracy(cfg)?,
    });
    let mut f = std::fs::File::create(path).map_err(|e| PersError::io(path, e))?;
    let mut s = serde_json::to_string_pretty(&summary)?;
    s.push('\n');
    f.write_all(s.as_bytes()).map_err(|e| PersError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_stats;
    use crate::textprep::{is_type_code, preprocess_post, NormalizerConfig};

    #[test]
    fn presets_match_source_marginals() {
        let t = LabelDistribution::Twitter;
        assert!((t.first_pole_rate(Dimension::EI).unwrap() - 0.2353).abs() < 1e-4);
        assert!((t.first_pole_rate(Dimension::SN).unwrap() - 0.1314).abs() < 1e-4);
        let f = LabelDistribution::Facebook;
        assert!((f.first_pole_rate(Dimension::EI).unwrap() - 0.5322).abs() < 1e-4);
        let p = LabelDistribution::Percafe;
        assert!((p.first_pole_rate(Dimension::TF).unwrap() - 0.4384).abs() < 1e-4);
        for d in [LabelDistribution::Uniform, t, f, p] {
            let s: f64 = d.probabilities().unwrap().iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let bad = LabelDistribution::Custom([("INTJ".to_string(), 0.5)].into());
        assert!(matches!(bad.probabilities(), Err(PersError::Config(_))));
        let bad = LabelDistribution::Custom([("XXXX".to_string(), 1.0)].into());
        assert!(bad.probabilities().is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig {
            n_users: 40,
            ..SynthConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (c1, s1) = generate_corpus(&cfg).unwrap();
        let (c2, s2) = generate_corpus(&cfg).unwrap();
        let a = write_synth(&c1, &s1, &dir.path().join("a")).unwrap();
        let b = write_synth(&c2, &s2, &dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(&a.users).unwrap(), std::fs::read(&b.users).unwrap());
        assert_eq!(std::fs::read(&a.images).unwrap(), std::fs::read(&b.images).unwrap());
        let (c3, _) = generate_corpus(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn generated_files_ingest_back() {
        let cfg = SynthConfig {
            n_users: 25,
            ..SynthConfig::default()
        };
        let (c, s) = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_synth(&c, &s, dir.path()).unwrap();
        let (back, store) = crate::corpus::ingest_corpus_with_store(&files.users, Some(&files.images)).unwrap();
        assert_eq!(back.users, c.users);
        let store = store.unwrap();
        assert_eq!(store.len(), s.len());
        for u in &back.users {
            for id in &u.image_ids {
                let (x, y) = (store.get(id).unwrap(), s.get(id).unwrap());
                assert!(x.iter().zip(y).all(|(a, b)| a == b));
            }
        }
    }

    #[test]
    fn image_vectors_are_distributions() {
        let (c, s) = generate_corpus(&SynthConfig {
            n_users: 30,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(c.users.iter().all(|u| u.image_ids.len() <= 6));
        for u in &c.users {
            for id in &u.image_ids {
                let v = s.get(id).unwrap();
                assert_eq!(v.len(), 300);
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(v.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn twitter_proportions_at_scale() {
        let cfg = SynthConfig {
            n_users: 2000,
            posts_per_user: 1,
            images_per_user: (0, 0),
            label_distribution: LabelDistribution::Twitter,
            seed: 4,
            ..SynthConfig::default()
        };
        let (c, _) = generate_corpus(&cfg).unwrap();
        let st = corpus_stats(&c);
        let ei = &st.dimensions[0];
        assert!((ei.first_pct.unwrap() - 23.53).abs() < 2.0, "{:?}", ei);
    }

    #[test]
    fn decoys_never_survive_preprocessing() {
        let (c, _) = generate_corpus(&SynthConfig {
            n_users: 60,
            decoy_rate: 1.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let norm = NormalizerConfig::default();
        let mut saw_code = false;
        for u in &c.users {
            for p in &u.posts {
                saw_code |= p.split(|ch: char| !ch.is_ascii_alphanumeric()).any(is_type_code);
                let out = preprocess_post(p, &norm);
                assert!(out.is_ascii());
                assert!(!out.split(|ch: char| !ch.is_ascii_alphanumeric()).any(is_type_code), "{out}");
            }
        }
        assert!(saw_code);
    }

    #[test]
    fn bayes_accuracy_behaves() {
        let zero = bayes_accuracy(&SynthConfig::zero_signal(100, 0)).unwrap();
        for b in &zero {
            assert!((b.joint - 0.5).abs() < 1e-9 && (b.text - 0.5).abs() < 1e-9);
        }
        let strong = bayes_accuracy(&SynthConfig::planted(100, 0.8, 0)).unwrap();
        for b in &strong {
            assert!(b.text > 0.99 && b.joint >= b.text - 1e-12 && b.joint >= b.image - 1e-12);
        }
        let comp = bayes_accuracy(&SynthConfig::complementary(100, 0.8, 0)).unwrap();
        assert!(comp[0].text > 0.99 && (comp[0].image - 0.5).abs() < 1e-9);
        assert!(comp[1].image > 0.85 && (comp[1].text - 0.5).abs() < 1e-9);
        // skewed prior: the ideal observer never does worse than the majority rate
        let tw = SynthConfig {
            label_distribution: LabelDistribution::Twitter,
            ..SynthConfig::zero_signal(100, 0)
        };
        assert!((bayes_accuracy(&tw).unwrap()[0].joint - (1.0 - 0.2353)).abs() < 1e-3);
        let pmf = binomial_pmf(10, 0.3);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((pmf[3] - 0.266_827_932).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let bad = [
            SynthConfig { n_users: 1, ..SynthConfig::default() },
            SynthConfig { text_strength: [1.5, 0.0, 0.0, 0.0], ..SynthConfig::default() },
            SynthConfig { images_per_user: (3, 2), ..SynthConfig::default() },
            SynthConfig { n_concepts: 10, ..SynthConfig::default() },
        ];
        for c in bad {
            assert!(matches!(generate_corpus(&c), Err(PersError::Config(_))));
        }
        let toml_like: SynthConfig = serde_json::from_str(r#"{"n_users": 10, "label_distribution": "twitter"}"#).unwrap();
        assert_eq!(toml_like.n_users, 10);
        assert_eq!(toml_like.label_distribution, LabelDistribution::Twitter);
    }
}
