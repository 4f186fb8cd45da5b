use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Comparator patterns, clause delimiters and the name stoplist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternLexicon {
    pub start_patterns: Vec<String>,
    pub end_patterns: Vec<String>,
    pub delimiters: Vec<char>,
    #[serde(default)]
    pub name_stoplist: Vec<String>,
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for PatternLexicon {
    fn default() -> Self {
        Self {
            start_patterns: owned(&["好像", "仿佛", "宛若", "俨然", "如同", "像"]),
            end_patterns: owned(&["似的", "一般", "一样"]),
            delimiters: "，。！？；：…\n,.!?;:".chars().collect(),
            name_stoplist: Vec::new(),
        }
    }
}

impl PatternLexicon {
    pub fn validate(&self) -> Result<()> {
        for (what, list) in [("start_patterns", &self.start_patterns), ("end_patterns", &self.end_patterns)] {
            if list.is_empty() {
                return Err(Error::Config(alloc::format!("{what} is empty")));
            }
            for (i, a) in list.iter().enumerate() {
                if a.is_empty() {
                    return Err(Error::Config(alloc::format!("{what} contains an empty pattern")));
                }
                if a.chars().any(|c| self.delimiters.contains(&c)) {
                    return Err(Error::Config(alloc::format!("pattern {a:?} contains a delimiter")));
                }
                for (j, b) in list.iter().enumerate() {
                    if i != j && b.starts_with(a.as_str()) {
                        return Err(Error::Config(alloc::format!("pattern {a:?} is a prefix of {b:?}")));
                    }
                }
            }
        }
        if self.name_stoplist.iter().any(String::is_empty) {
            return Err(Error::Config("name_stoplist contains an empty entry".into()));
        }
        Ok(())
    }

    pub fn is_delimiter(&self, c: char) -> bool {
        self.delimiters.contains(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PatternLexicon::default().validate().unwrap();
    }

    #[test]
    fn prefix_patterns_rejected() {
        let mut lex = PatternLexicon::default();
        lex.start_patterns.push("好".into());
        assert!(lex.validate().is_err());
        let mut lex = PatternLexicon::default();
        lex.end_patterns.clear();
        assert!(lex.validate().is_err());
    }
}
