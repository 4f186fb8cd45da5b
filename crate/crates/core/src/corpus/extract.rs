use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{CorpusRecord, PatternLexicon};

/// Longest context kept around a removed simile, in characters.
pub const CONTEXT_WINDOW: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

fn matches_at(chars: &[char], at: usize, end: usize, pat: &[char]) -> bool {
    at + pat.len() <= end && chars[at..at + pat.len()] == *pat
}

fn chars_of(list: &[String]) -> Vec<Vec<char>> {
    list.iter().map(|p| p.chars().collect()).collect()
}

/// Finds the simile span of one clause `[cs, ce)`: from the first start
/// pattern to the end of the last end pattern after it (or the clause end),
/// or, without a start pattern, from the clause start to the last end
/// pattern. Returns `(span, pattern_chars)`.
fn clause_span(chars: &[char], cs: usize, ce: usize, starts: &[Vec<char>], ends: &[Vec<char>]) -> Option<((usize, usize), usize)> {
    let start = (cs..ce).find_map(|i| starts.iter().find(|p| matches_at(chars, i, ce, p)).map(|p| (i, p.len())));
    let last_end = |from: usize| {
        (from..ce)
            .rev()
            .find_map(|i| ends.iter().find(|p| matches_at(chars, i, ce, p)).map(|p| (i + p.len(), p.len())))
    };
    match start {
        Some((s, slen)) => match last_end(s + slen) {
            Some((e, elen)) => Some(((s, e), slen + elen)),
            None => Some(((s, ce), slen)),
        },
        None => last_end(cs).map(|(e, elen)| ((cs, e), elen)),
    }
}

/// Extracts every pattern-matched simile of `doc`, one per clause, with
/// the remaining paragraph windowed to [`CONTEXT_WINDOW`] characters.
pub fn extract(doc: &RawDocument, lex: &PatternLexicon) -> Vec<CorpusRecord> {
    extract_windowed(doc, lex, CONTEXT_WINDOW)
}

pub fn extract_windowed(doc: &RawDocument, lex: &PatternLexicon, window: usize) -> Vec<CorpusRecord> {
    let chars: Vec<char> = doc.text.chars().collect();
    let starts = chars_of(&lex.start_patterns);
    let ends = chars_of(&lex.end_patterns);
    let mut out = Vec::new();
    let mut cs = 0;
    while cs < chars.len() {
        if lex.is_delimiter(chars[cs]) {
            cs += 1;
            continue;
        }
        let ce = (cs..chars.len()).find(|&i| lex.is_delimiter(chars[i])).unwrap_or(chars.len());
        if let Some(((s, e), pattern_len)) = clause_span(&chars, cs, ce, &starts, &ends) {
            let simile: String = chars[s..e].iter().collect();
            let named = lex.name_stoplist.iter().any(|n| simile.contains(n.as_str()));
            let context_len = chars.len() - (e - s);
            if e - s > pattern_len && !named && context_len > 0 {
                let mut context: Vec<char> = Vec::with_capacity(context_len);
                context.extend_from_slice(&chars[..s]);
                context.extend_from_slice(&chars[e..]);
                let mut position = s;
                if context.len() > window {
                    let from = position.saturating_sub(window / 2).min(context.len() - window);
                    context = context[from..from + window].to_vec();
                    position -= from;
                }
                out.push(CorpusRecord {
                    context: context.into_iter().collect(),
                    position,
                    simile,
                });
            }
        }
        cs = ce;
    }
    out
}

/// Extracts from many documents; output is ordered by (document id, offset)
/// regardless of input order.
pub fn extract_all(docs: &[RawDocument], lex: &PatternLexicon) -> Vec<CorpusRecord> {
    let mut order: Vec<&RawDocument> = docs.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    order.into_iter().flat_map(|d| extract(d, lex)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> RawDocument {
        RawDocument {
            id: "d".into(),
            text: text.into(),
        }
    }

    #[test]
    fn start_and_end_pattern_span() {
        let r = extract(&doc("他像幽灵一样出现那里"), &PatternLexicon::default());
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].context, "他出现那里");
        assert_eq!(r[0].position, 1);
        assert_eq!(r[0].simile, "像幽灵一样");
    }

    #[test]
    fn start_only_runs_to_clause_end() {
        let r = extract(&doc("风吹过，她的脸像一张白纸。"), &PatternLexicon::default());
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].simile, "像一张白纸");
        assert_eq!(r[0].context, "风吹过，她的脸。");
        assert_eq!(r[0].position, 7);
    }

    #[test]
    fn end_only_starts_at_clause() {
        let r = extract(&doc("天黑了，石头似的。"), &PatternLexicon::default());
        assert_eq!(r[0].simile, "石头似的");
        assert_eq!(r[0].position, 4);
    }

    #[test]
    fn no_pattern_no_record() {
        assert!(extract(&doc("今天天气很好。"), &PatternLexicon::default()).is_empty());
        assert!(extract(&doc(""), &PatternLexicon::default()).is_empty());
        // a bare comparator is not a simile
        assert!(extract(&doc("他说，像。"), &PatternLexicon::default()).is_empty());
    }

    #[test]
    fn stoplist_drops_named_similes() {
        let mut lex = PatternLexicon::default();
        lex.name_stoplist.push("张三".into());
        assert!(extract(&doc("他像张三一样笑了"), &lex).is_empty());
    }

    #[test]
    fn window_is_centered_and_reconstructs() {
        let text: String = core::iter::repeat_n('甲', 100).chain("像云一样".chars()).chain(core::iter::repeat_n('乙', 100)).collect();
        let r = extract_windowed(&doc(&text), &PatternLexicon::default(), 20);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].context.chars().count(), 20);
        assert_eq!(r[0].position, 10);
        let rebuilt = r[0].reinsert();
        assert!(text.contains(&rebuilt));
    }
}
