//! Tokenization shared by the lexical index, the toy embedder, and the
//! rewrite policy.
//!
//! Tokens are maximal runs of alphanumeric characters plus `+` (so product
//! names like `u+` survive), lowercased. In `WordCjkBigram` mode, maximal
//! CJK-script runs are additionally replaced by their character bigrams,
//! which gives BM25 usable units for unsegmented scripts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizeMode {
    #[default]
    Word,
    WordCjkBigram,
}

/// True for scripts that are written without spaces between words
/// (Hangul, Han, Hiragana, Katakana).
pub fn is_cjk(ch: char) -> bool {
    matches!(ch,
        '\u{1100}'..='\u{11FF}'   // Hangul Jamo
        | '\u{3040}'..='\u{309F}' // Hiragana
        | '\u{30A0}'..='\u{30FF}' // Katakana
        | '\u{3130}'..='\u{318F}' // Hangul compatibility Jamo
        | '\u{3400}'..='\u{4DBF}' // CJK extension A
        | '\u{4E00}'..='\u{9FFF}' // CJK unified ideographs
        | '\u{AC00}'..='\u{D7AF}' // Hangul syllables
        | '\u{F900}'..='\u{FAFF}' // CJK compatibility ideographs
    )
}

pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    let mut has_alnum = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '+' {
            has_alnum |= ch.is_alphanumeric();
            run.push(ch);
        } else {
            flush(&mut run, &mut has_alnum, mode, &mut tokens);
        }
    }
    flush(&mut run, &mut has_alnum, mode, &mut tokens);
    tokens
}

fn flush(run: &mut String, has_alnum: &mut bool, mode: TokenizeMode, out: &mut Vec<String>) {
    if !run.is_empty() && *has_alnum {
        let lowered = run.to_lowercase();
        match mode {
            TokenizeMode::Word => out.push(lowered),
            TokenizeMode::WordCjkBigram => expand_cjk_bigrams(&lowered, out),
        }
    }
    run.clear();
    *has_alnum = false;
}

/// Replace each maximal CJK run inside `token` with its character bigrams;
/// a length-1 run yields itself and non-CJK segments pass through whole.
fn expand_cjk_bigrams(token: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = token.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let cjk = is_cjk(chars[i]);
        let mut j = i;
        while j < chars.len() && is_cjk(chars[j]) == cjk {
            j += 1;
        }
        if cjk {
            if j - i == 1 {
                out.push(chars[i].to_string());
            } else {
                for k in i..j - 1 {
                    out.push(chars[k..=k + 1].iter().collect());
                }
            }
        } else {
            out.push(chars[i..j].iter().collect());
        }
        i = j;
    }
}
