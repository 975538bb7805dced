//! Porter suffix-stripping stemmer, classic rule set.
//!
//! Operates on lowercase ASCII words. Callers gate on token shape; this
//! module implements the five steps exactly as published.

/// Stem a lowercase ASCII-alphabetic word.
pub fn stem(word: &str) -> String {
    let mut w: Vec<u8> = word.bytes().collect();
    if w.len() <= 2 {
        return word.to_string();
    }
    step1a(&mut w);
    step1b(&mut w);
    step1c(&mut w);
    step2(&mut w);
    step3(&mut w);
    step4(&mut w);
    step5a(&mut w);
    step5b(&mut w);
    String::from_utf8(w).expect("ascii in, ascii out")
}

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// The measure m: number of vowel→consonant transitions in `w[..len]`.
fn measure(w: &[u8], len: usize) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..len {
        let cons = is_consonant(w, i);
        if cons && prev_vowel {
            m += 1;
        }
        prev_vowel = !cons;
    }
    m
}

fn has_vowel(w: &[u8], len: usize) -> bool {
    (0..len).any(|i| !is_consonant(w, i))
}

/// *d — stem ends with a double consonant.
fn ends_double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

/// *o — stem ends consonant-vowel-consonant where the final consonant is
/// not w, x, or y.
fn ends_cvc(w: &[u8], len: usize) -> bool {
    if len < 3 {
        return false;
    }
    is_consonant(w, len - 3)
        && !is_consonant(w, len - 2)
        && is_consonant(w, len - 1)
        && !matches!(w[len - 1], b'w' | b'x' | b'y')
}

fn ends_with(w: &[u8], suffix: &str) -> bool {
    w.len() >= suffix.len() && &w[w.len() - suffix.len()..] == suffix.as_bytes()
}

fn replace(w: &mut Vec<u8>, suffix: &str, with: &str) {
    let keep = w.len() - suffix.len();
    w.truncate(keep);
    w.extend_from_slice(with.as_bytes());
}

fn step1a(w: &mut Vec<u8>) {
    if ends_with(w, "sses") {
        replace(w, "sses", "ss");
    } else if ends_with(w, "ies") {
        replace(w, "ies", "i");
    } else if ends_with(w, "ss") {
        // unchanged
    } else if ends_with(w, "s") {
        replace(w, "s", "");
    }
}

fn step1b(w: &mut Vec<u8>) {
    if ends_with(w, "eed") {
        if measure(w, w.len() - 3) > 0 {
            replace(w, "eed", "ee");
        }
        return;
    }
    let stripped = if ends_with(w, "ed") && has_vowel(w, w.len() - 2) {
        replace(w, "ed", "");
        true
    } else if ends_with(w, "ing") && has_vowel(w, w.len() - 3) {
        replace(w, "ing", "");
        true
    } else {
        false
    };
    if stripped {
        if ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz") {
            w.push(b'e');
        } else if ends_double_consonant(w) && !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
            w.pop();
        } else if measure(w, w.len()) == 1 && ends_cvc(w, w.len()) {
            w.push(b'e');
        }
    }
}

fn step1c(w: &mut Vec<u8>) {
    if ends_with(w, "y") && has_vowel(w, w.len() - 1) {
        let n = w.len();
        w[n - 1] = b'i';
    }
}

const STEP2: &[(&str, &str)] = &[
    ("ational", "ate"),
    ("tional", "tion"),
    ("enci", "ence"),
    ("anci", "ance"),
    ("izer", "ize"),
    ("abli", "able"),
    ("alli", "al"),
    ("entli", "ent"),
    ("eli", "e"),
    ("ousli", "ous"),
    ("ization", "ize"),
    ("ation", "ate"),
    ("ator", "ate"),
    ("alism", "al"),
    ("iveness", "ive"),
    ("fulness", "ful"),
    ("ousness", "ous"),
    ("aliti", "al"),
    ("iviti", "ive"),
    ("biliti", "ble"),
];

const STEP3: &[(&str, &str)] = &[
    ("icate", "ic"),
    ("ative", ""),
    ("alize", "al"),
    ("iciti", "ic"),
    ("ical", "ic"),
    ("ful", ""),
    ("ness", ""),
];

fn apply_table(w: &mut Vec<u8>, table: &[(&str, &str)]) {
    // Longest matching suffix wins; tables may hold overlapping entries.
    let mut best: Option<(&str, &str)> = None;
    for &(suffix, with) in table {
        if ends_with(w, suffix) && best.is_none_or(|(s, _)| suffix.len() > s.len()) {
            best = Some((suffix, with));
        }
    }
    if let Some((suffix, with)) = best {
        if measure(w, w.len() - suffix.len()) > 0 {
            replace(w, suffix, with);
        }
    }
}

fn step2(w: &mut Vec<u8>) {
    apply_table(w, STEP2);
}

fn step3(w: &mut Vec<u8>) {
    apply_table(w, STEP3);
}

const STEP4: &[&str] = &[
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion", "ou",
    "ism", "ate", "iti", "ous", "ive", "ize",
];

fn step4(w: &mut Vec<u8>) {
    let mut best: Option<&str> = None;
    for &suffix in STEP4 {
        if ends_with(w, suffix) && best.is_none_or(|s| suffix.len() > s.len()) {
            // "ion" only counts when preceded by s or t.
            if suffix == "ion" {
                let stem_len = w.len() - 3;
                if stem_len == 0 || !matches!(w[stem_len - 1], b's' | b't') {
                    continue;
                }
            }
            best = Some(suffix);
        }
    }
    if let Some(suffix) = best {
        if measure(w, w.len() - suffix.len()) > 1 {
            replace(w, suffix, "");
        }
    }
}

fn step5a(w: &mut Vec<u8>) {
    if ends_with(w, "e") {
        let m = measure(w, w.len() - 1);
        if m > 1 || (m == 1 && !ends_cvc(w, w.len() - 1)) {
            w.pop();
        }
    }
}

fn step5b(w: &mut Vec<u8>) {
    if w.last() == Some(&b'l') && ends_double_consonant(w) && measure(w, w.len()) > 1 {
        w.pop();
    }
}
