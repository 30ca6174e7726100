//! Deterministic normalization of social-media posts: type-mention masking,
//! social-token placeholders, emoji textualization and non-ASCII removal.

mod emoji;

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::{PersError, Result};

pub use emoji::EmojiTable;

pub const TYPE_PLACEHOLDER: &str = "<type>";
pub const USER_PLACEHOLDER: &str = "@USER";
pub const URL_PLACEHOLDER: &str = "HTTPURL";
pub const HASHTAG_PLACEHOLDER: &str = "HASHTAG";
pub const DATETIME_PLACEHOLDER: &str = "DATETIME";

const BUNDLED_PATTERNS: &str = include_str!("../../data/datetime_patterns.txt");

static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(^|[^\w@#])@[\w<>]+").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:https?://|\bwww\.)\S+").unwrap());
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(^|[^\w@#&])#[\w<>]+").unwrap());

#[derive(Debug, Clone)]
pub struct NormalizerConfig {
    pub emoji_table: EmojiTable,
    pub datetime_patterns: Vec<Regex>,
    pub mask_token: String,
    /// Drop posts that contained a type mention instead of masking them.
    pub drop_self_reports: bool,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            emoji_table: EmojiTable::bundled(),
            datetime_patterns: parse_patterns(BUNDLED_PATTERNS).expect("bundled patterns are valid"),
            mask_token: TYPE_PLACEHOLDER.to_string(),
            drop_self_reports: false,
        }
    }
}

impl NormalizerConfig {
    /// Bundled defaults, with either resource replaced from a file.
    pub fn from_files(emoji_table: Option<&Path>, datetime_patterns: Option<&Path>) -> Result<Self> {
        let mut cfg = NormalizerConfig::default();
        if let Some(p) = emoji_table {
            cfg.emoji_table = EmojiTable::load(p)?;
        }
        if let Some(p) = datetime_patterns {
            let text = std::fs::read_to_string(p).map_err(|e| PersError::io(p, e))?;
            cfg.datetime_patterns = parse_patterns(&text)?;
        }
        Ok(cfg)
    }
}

/// One regex per line; blank lines and `#` comments skipped. The list must
/// not be empty.
pub fn parse_patterns(text: &str) -> Result<Vec<Regex>> {
    let patterns = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| Regex::new(l).map_err(|e| PersError::Config(format!("datetime pattern {l:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if patterns.is_empty() {
        return Err(PersError::Config("datetime pattern list is empty".into()));
    }
    Ok(patterns)
}

/// True when `word` is one of the sixteen MBTI codes, in any casing.
pub fn is_type_code(word: &str) -> bool {
    let b = word.as_bytes();
    b.len() == 4
        && matches!(b[0].to_ascii_uppercase(), b'E' | b'I')
        && matches!(b[1].to_ascii_uppercase(), b'S' | b'N')
        && matches!(b[2].to_ascii_uppercase(), b'T' | b'F')
        && matches!(b[3].to_ascii_uppercase(), b'J' | b'P')
}

fn mask_with(text: &str, token: &str) -> String {
    // A mention is a maximal run of ASCII alphanumerics equal to a code, so
    // "ENTP!" and "#ENTP" are caught but "CONTENT" and "ENTPs" are not.
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_alphanumeric() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                i += 1;
            }
            if is_type_code(&text[start..i]) {
                out.push_str(&text[last..start]);
                out.push_str(token);
                last = i;
            }
        } else {
            i += 1;
        }
    }
    out.push_str(&text[last..]);
    out
}

/// Replace every standalone MBTI code (case-insensitive) with `<type>`.
pub fn mask_type_mentions(text: &str) -> String {
    mask_with(text, TYPE_PLACEHOLDER)
}

fn replace_datetimes(text: &str, patterns: &[Regex]) -> String {
    let mut s = text.to_string();
    for p in patterns {
        if p.is_match(&s) {
            s = p.replace_all(&s, DATETIME_PLACEHOLDER).into_owned();
        }
    }
    s
}

fn strip_non_ascii_and_collapse(text: &str) -> String {
    text.split_whitespace()
        .filter(|tok| tok.is_ascii())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Emoji names, then mentions, URLs, hashtags and date-times become
/// placeholders; tokens still holding non-ASCII characters are dropped and
/// whitespace is collapsed.
pub fn normalize_social_tokens(text: &str, config: &NormalizerConfig) -> String {
    let s = config.emoji_table.textualize(text);
    let s = MENTION.replace_all(&s, format!("${{1}}{USER_PLACEHOLDER}").as_str());
    let s = URL.replace_all(&s, URL_PLACEHOLDER);
    let s = HASHTAG.replace_all(&s, format!("${{1}}{HASHTAG_PLACEHOLDER}").as_str());
    let s = replace_datetimes(&s, &config.datetime_patterns);
    let s = strip_non_ascii_and_collapse(&s);
    // Multi-word dates ("Jan 1, 2020") can become contiguous once a non-ASCII
    // token between them is dropped; one more sweep makes the result a fixed
    // point.
    let swept = replace_datetimes(&s, &config.datetime_patterns);
    if swept == s {
        s
    } else {
        strip_non_ascii_and_collapse(&swept)
    }
}

/// Full per-post normalization: masking first, then social tokens.
pub fn preprocess_post(text: &str, config: &NormalizerConfig) -> String {
    normalize_social_tokens(&mask_with(text, &config.mask_token), config)
}

/// Like [`preprocess_post`] but returns `None` for posts that mentioned a
/// type when `drop_self_reports` is set.
pub fn preprocess_or_drop(text: &str, config: &NormalizerConfig) -> Option<String> {
    let masked = mask_with(text, &config.mask_token);
    if config.drop_self_reports && masked != text {
        return None;
    }
    Some(normalize_social_tokens(&masked, config))
}
