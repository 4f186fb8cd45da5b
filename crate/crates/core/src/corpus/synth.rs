use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CorpusRecord;

/// Filler alphabet of synthetic contexts.
pub const SYNTH_FILLER: &str = "abcdefghijklmnop";
/// Marks the insertion point; the simile goes right after it.
pub const SYNTH_MARKER: char = '#';
/// Keyword -> simile table; exactly one keyword appears per context.
pub const SYNTH_KEYWORDS: [(char, &str); 8] = [
    ('A', "as a fox"),
    ('B', "like ice"),
    ('C', "as owls do"),
    ('D', "like rain"),
    ('E', "as a bell"),
    ('F', "like smoke"),
    ('G', "as iron"),
    ('H', "like moss"),
];

const MIN_LEN: usize = 8;
const MAX_LEN: usize = 20;

pub fn synthetic_rule(keyword: char) -> Option<&'static str> {
    SYNTH_KEYWORDS.iter().find(|(k, _)| *k == keyword).map(|(_, s)| *s)
}

/// `n` records of the synthetic language: a context of 8–20 characters
/// drawn from [`SYNTH_FILLER`] holding one [`SYNTH_MARKER`] and one keyword
/// at distinct uniform offsets. The gold position is the offset right after
/// the marker and the gold simile is the keyword's table entry.
pub fn generate_synthetic(n: usize, seed: u64) -> Vec<CorpusRecord> {
    let filler: Vec<char> = SYNTH_FILLER.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(MIN_LEN..=MAX_LEN);
            let mut chars: Vec<char> = (0..len).map(|_| filler[rng.random_range(0..filler.len())]).collect();
            let marker = rng.random_range(0..len);
            let mut kw = rng.random_range(0..len - 1);
            if kw >= marker {
                kw += 1;
            }
            let (keyword, simile) = SYNTH_KEYWORDS[rng.random_range(0..SYNTH_KEYWORDS.len())];
            chars[marker] = SYNTH_MARKER;
            chars[kw] = keyword;
            CorpusRecord {
                context: chars.into_iter().collect::<String>(),
                position: marker + 1,
                simile: simile.into(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic(1, 7), generate_synthetic(1, 7));
        assert_ne!(generate_synthetic(5, 7), generate_synthetic(5, 8));
    }

    #[test]
    fn rule_holds_for_every_record() {
        for r in generate_synthetic(500, 3) {
            let chars: Vec<char> = r.context.chars().collect();
            assert_eq!(chars.iter().filter(|&&c| c == SYNTH_MARKER).count(), 1);
            assert_eq!(chars[r.position - 1], SYNTH_MARKER);
            let kws: Vec<char> = chars.iter().copied().filter(|c| c.is_ascii_uppercase()).collect();
            assert_eq!(kws.len(), 1);
            assert_eq!(synthetic_rule(kws[0]), Some(r.simile.as_str()));
            assert!((MIN_LEN..=MAX_LEN).contains(&chars.len()));
        }
    }

    #[test]
    fn keyword_map_is_bijective() {
        let mut similes: Vec<&str> = SYNTH_KEYWORDS.iter().map(|(_, s)| *s).collect();
        let mut keys: Vec<char> = SYNTH_KEYWORDS.iter().map(|(k, _)| *k).collect();
        similes.sort();
        similes.dedup();
        keys.sort();
        keys.dedup();
        assert_eq!((similes.len(), keys.len()), (8, 8));
    }
}
