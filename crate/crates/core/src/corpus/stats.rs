use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Corpus, Dimension, Source};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub users: usize,
    pub posts: usize,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub dimension: Dimension,
    pub first_pole: String,
    pub second_pole: String,
    pub first_count: usize,
    pub second_count: usize,
    /// `None` when the corpus is empty.
    pub first_pct: Option<f64>,
    pub second_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_users: usize,
    pub per_source: BTreeMap<Source, SourceStats>,
    pub total: SourceStats,
    pub dimensions: Vec<DimensionStats>,
    /// Observed types only.
    pub type_histogram: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let mut per_source: BTreeMap<Source, SourceStats> = BTreeMap::new();
    let mut total = SourceStats::default();
    let mut first = [0usize; 4];
    let mut type_histogram: BTreeMap<String, usize> = BTreeMap::new();
    for u in &corpus.users {
        let s = per_source.entry(u.source).or_default();
        s.users += 1;
        s.posts += u.posts.len();
        s.images += u.image_ids.len();
        total.users += 1;
        total.posts += u.posts.len();
        total.images += u.image_ids.len();
        for d in Dimension::ALL {
            if u.label.pole(d) {
                first[d.index()] += 1;
            }
        }
        *type_histogram.entry(u.label.code()).or_default() += 1;
    }
    let n = corpus.len();
    let pct = |k: usize| (n > 0).then(|| 100.0 * k as f64 / n as f64);
    let dimensions = Dimension::ALL
        .iter()
        .map(|&d| {
            let (a, b) = d.pole_names();
            let fc = first[d.index()];
            DimensionStats {
                dimension: d,
                first_pole: a.to_string(),
                second_pole: b.to_string(),
                first_count: fc,
                second_count: n - fc,
                first_pct: pct(fc),
                second_pct: pct(n - fc),
            }
        })
        .collect();
    StatsReport {
        n_users: n,
        per_source,
        total,
        dimensions,
        type_histogram,
    }
}

impl StatsReport {
    /// Aligned plain-text rendering: source counts, pole proportions and the
    /// type histogram sorted by frequency.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt_pct = |p: Option<f64>| p.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}%"));
        let _ = writeln!(out, "{:<14}{:>10}{:>12}{:>10}", "source", "#users", "#posts", "#images");
        for (src, s) in &self.per_source {
            let _ = writeln!(out, "{:<14}{:>10}{:>12}{:>10}", src.as_str(), s.users, s.posts, s.images);
        }
        let t = &self.total;
        let _ = writeln!(out, "{:<14}{:>10}{:>12}{:>10}", "total", t.users, t.posts, t.images);
        out.push('\n');
        for d in &self.dimensions {
            let _ = writeln!(out, "#{:<13}{:>8}{:>10}", d.first_pole, d.first_count, fmt_pct(d.first_pct));
            let _ = writeln!(out, "#{:<13}{:>8}{:>10}", d.second_pole, d.second_count, fmt_pct(d.second_pct));
        }
        out.push('\n');
        let mut types: Vec<(&String, &usize)> = self.type_histogram.iter().collect();
        types.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        for (code, count) in types {
            let _ = writeln!(out, "{code:<6}{count:>8}");
        }
        out
    }
}
