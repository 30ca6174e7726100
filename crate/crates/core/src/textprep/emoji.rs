use std::collections::HashMap;
use std::path::Path;

use crate::error::{PersError, Result};

const BUNDLED: &str = include_str!("../../data/emoji.csv");

/// Emoji codepoint sequences mapped to snake_case names. Lookup is
/// greedy longest-match.
#[derive(Debug, Clone)]
pub struct EmojiTable {
    // first char -> candidate sequences, longest first
    by_first: HashMap<char, Vec<(Vec<char>, String)>>,
    len: usize,
}

fn is_modifier(c: char) -> bool {
    matches!(c, '\u{FE0F}' | '\u{FE0E}' | '\u{1F3FB}'..='\u{1F3FF}')
}

impl EmojiTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled emoji table is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PersError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parse `codepoints_hex,name` CSV. Codepoints are space-separated hex.
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let mut by_first: HashMap<char, Vec<(Vec<char>, String)>> = HashMap::new();
        let mut len = 0;
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| PersError::Schema(format!("emoji table: {e}")))?;
            if rec.len() != 2 {
                return Err(PersError::Schema(format!("emoji table row {}: expected 2 fields", i + 2)));
            }
            let seq = rec[0]
                .split_whitespace()
                .map(|h| {
                    u32::from_str_radix(h, 16)
                        .ok()
                        .and_then(char::from_u32)
                        .filter(|c| !c.is_ascii())
                        .ok_or_else(|| PersError::Schema(format!("emoji table row {}: bad codepoint {h:?}", i + 2)))
                })
                .collect::<Result<Vec<char>>>()?;
            let name = rec[1].trim();
            if seq.is_empty() || name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                return Err(PersError::Schema(format!("emoji table row {}: invalid entry", i + 2)));
            }
            by_first.entry(seq[0]).or_default().push((seq, name.to_ascii_lowercase()));
            len += 1;
        }
        for v in by_first.values_mut() {
            v.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        }
        if len == 0 {
            return Err(PersError::Schema("emoji table is empty".into()));
        }
        Ok(EmojiTable { by_first, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_first.values().flatten().map(|(_, n)| n.as_str())
    }

    /// Replace every known emoji with ` :name: `. Trailing variation
    /// selectors and skin-tone modifiers are absorbed into the match.
    pub fn textualize(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let hit = self.by_first.get(&c).and_then(|cands| {
                cands
                    .iter()
                    .find(|(seq, _)| chars[i..].starts_with(seq))
            });
            match hit {
                Some((seq, name)) => {
                    out.push_str(" :");
                    out.push_str(name);
                    out.push_str(": ");
                    i += seq.len();
                    while i < chars.len() && is_modifier(chars[i]) {
                        i += 1;
                    }
                }
                None => {
                    out.push(c);
                    i += 1;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_loads() {
        let t = EmojiTable::bundled();
        assert!(t.len() > 100);
        assert_eq!(t.textualize("🎉"), " :party_popper: ");
    }

    #[test]
    fn longest_match_and_modifiers() {
        let t = EmojiTable::bundled();
        assert_eq!(t.textualize("❤️‍🔥"), " :heart_on_fire: ");
        assert_eq!(t.textualize("❤️x"), " :red_heart: x");
        assert_eq!(t.textualize("👍🏽ok"), " :thumbs_up: ok");
        assert_eq!(t.textualize("🇺🇸"), " :flag_united_states: ");
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(EmojiTable::parse("codepoints_hex,name\nZZZ,x\n").is_err());
        assert!(EmojiTable::parse("codepoints_hex,name\n41,letter_a\n").is_err());
        assert!(EmojiTable::parse("codepoints_hex,name\n1F600,bad name\n").is_err());
        assert!(EmojiTable::parse("codepoints_hex,name\n").is_err());
    }
}
