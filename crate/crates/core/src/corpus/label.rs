use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{PersError, Result};

/// One of the four MBTI dichotomies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    EI,
    SN,
    TF,
    JP,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [Dimension::EI, Dimension::SN, Dimension::TF, Dimension::JP];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Letters of the (positive, negative) poles. The positive class of every
    /// binary task is the first letter: E, S, T, J.
    pub fn poles(self) -> (char, char) {
        match self {
            Dimension::EI => ('E', 'I'),
            Dimension::SN => ('S', 'N'),
            Dimension::TF => ('T', 'F'),
            Dimension::JP => ('J', 'P'),
        }
    }

    pub fn pole_names(self) -> (&'static str, &'static str) {
        match self {
            Dimension::EI => ("Extroversion", "Introversion"),
            Dimension::SN => ("Sensing", "Intuition"),
            Dimension::TF => ("Thinking", "Feeling"),
            Dimension::JP => ("Judging", "Perceiving"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::EI => "EI",
            Dimension::SN => "SN",
            Dimension::TF => "TF",
            Dimension::JP => "JP",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = PersError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EI" => Ok(Dimension::EI),
            "SN" => Ok(Dimension::SN),
            "TF" => Ok(Dimension::TF),
            "JP" => Ok(Dimension::JP),
            other => Err(PersError::Config(format!("unknown dimension {other:?}"))),
        }
    }
}

/// An MBTI type as four binary poles. Each field is `true` for the first
/// letter of the dichotomy (E, S, T, J).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MbtiLabel {
    pub extrovert: bool,
    pub sensing: bool,
    pub thinking: bool,
    pub judging: bool,
}

impl MbtiLabel {
    pub fn from_bits(bits: u8) -> Self {
        MbtiLabel {
            extrovert: bits & 8 != 0,
            sensing: bits & 4 != 0,
            thinking: bits & 2 != 0,
            judging: bits & 1 != 0,
        }
    }

    pub fn bits(self) -> u8 {
        (u8::from(self.extrovert) << 3)
            | (u8::from(self.sensing) << 2)
            | (u8::from(self.thinking) << 1)
            | u8::from(self.judging)
    }

    /// All sixteen types, in bit order (ISFP-style encoding, INFP first).
    pub fn all() -> [MbtiLabel; 16] {
        std::array::from_fn(|i| MbtiLabel::from_bits(i as u8))
    }

    /// Binary target for one dimension; `true` means the first-letter pole.
    pub fn pole(self, dim: Dimension) -> bool {
        match dim {
            Dimension::EI => self.extrovert,
            Dimension::SN => self.sensing,
            Dimension::TF => self.thinking,
            Dimension::JP => self.judging,
        }
    }

    pub fn with_pole(mut self, dim: Dimension, first: bool) -> Self {
        match dim {
            Dimension::EI => self.extrovert = first,
            Dimension::SN => self.sensing = first,
            Dimension::TF => self.thinking = first,
            Dimension::JP => self.judging = first,
        }
        self
    }

    pub fn code(self) -> String {
        Dimension::ALL
            .iter()
            .map(|&d| {
                let (a, b) = d.poles();
                if self.pole(d) {
                    a
                } else {
                    b
                }
            })
            .collect()
    }
}

/// Parse a four-letter MBTI code, case-insensitively and ignoring
/// surrounding whitespace.
pub fn parse_mbti_code(code: &str) -> Result<MbtiLabel> {
    let trimmed = code.trim();
    let chars: Vec<char> = trimmed.chars().map(|c| c.to_ascii_uppercase()).collect();
    if chars.len() != 4 {
        return Err(PersError::InvalidCode(code.to_string()));
    }
    let mut label = MbtiLabel::from_bits(0);
    for (dim, &c) in Dimension::ALL.iter().zip(&chars) {
        let (first, second) = dim.poles();
        label = if c == first {
            label.with_pole(*dim, true)
        } else if c == second {
            label.with_pole(*dim, false)
        } else {
            return Err(PersError::InvalidCode(code.to_string()));
        };
    }
    Ok(label)
}

impl FromStr for MbtiLabel {
    type Err = PersError;

    fn from_str(s: &str) -> Result<Self> {
        parse_mbti_code(s)
    }
}

impl fmt::Display for MbtiLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl Serialize for MbtiLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for MbtiLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_mbti_code(&s).map_err(serde::de::Error::custom)
    }
}
