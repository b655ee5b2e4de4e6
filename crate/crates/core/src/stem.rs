//! The original Porter (1980) suffix-stripping algorithm.
//!
//! This is the published five-step algorithm, not the later "Porter2"
//! (Snowball English) revision: there is no `logi`/`bli` rule in step 2 and
//! no exception list. Words of one or two characters are returned unchanged.
//!
//! Input is expected to be lowercase. Characters other than `a e i o u` are
//! treated as consonants (with the usual `y` rule), so digits and hyphens in
//! tokens such as `state-of-the-art` pass through without panicking.

/// Stem a single lowercase word.
pub fn porter_stem(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() <= 2 {
        return word.to_string();
    }
    let mut w = Word { b: chars };
    w.step1a();
    w.step1b();
    w.step1c();
    w.step2();
    w.step3();
    w.step4();
    w.step5a();
    w.step5b();
    w.b.into_iter().collect()
}

struct Word {
    b: Vec<char>,
}

impl Word {
    fn is_consonant(&self, i: usize) -> bool {
        match self.b[i] {
            'a' | 'e' | 'i' | 'o' | 'u' => false,
            'y' => i == 0 || !self.is_consonant(i - 1),
            _ => true,
        }
    }

    /// Measure `m` of the first `len` characters: the number of VC sequences
    /// in `[C](VC)^m[V]`.
    fn measure(&self, len: usize) -> usize {
        let mut m = 0;
        let mut prev_vowel = false;
        for i in 0..len {
            let cons = self.is_consonant(i);
            if cons && prev_vowel {
                m += 1;
            }
            prev_vowel = !cons;
        }
        m
    }

    fn has_vowel(&self, len: usize) -> bool {
        (0..len).any(|i| !self.is_consonant(i))
    }

    /// `*d`: the first `len` characters end with a double consonant.
    fn double_consonant(&self, len: usize) -> bool {
        len >= 2 && self.b[len - 1] == self.b[len - 2] && self.is_consonant(len - 1)
    }

    /// `*o`: the first `len` characters end cvc, where the final c is not
    /// w, x or y.
    fn cvc(&self, len: usize) -> bool {
        len >= 3
            && self.is_consonant(len - 3)
            && !self.is_consonant(len - 2)
            && self.is_consonant(len - 1)
            && !matches!(self.b[len - 1], 'w' | 'x' | 'y')
    }

    fn ends_with(&self, suffix: &str) -> bool {
        let n = suffix.chars().count();
        n <= self.b.len()
            && self.b[self.b.len() - n..]
                .iter()
                .copied()
                .eq(suffix.chars())
    }

    /// Length of the stem left once `suffix` is removed (caller checked
    /// `ends_with`).
    fn stem_len(&self, suffix: &str) -> usize {
        self.b.len() - suffix.chars().count()
    }

    fn replace_suffix(&mut self, suffix: &str, replacement: &str) {
        let keep = self.stem_len(suffix);
        self.b.truncate(keep);
        self.b.extend(replacement.chars());
    }

    fn step1a(&mut self) {
        if self.ends_with("sses") {
            self.replace_suffix("sses", "ss");
        } else if self.ends_with("ies") {
            self.replace_suffix("ies", "i");
        } else if self.ends_with("ss") {
        } else if self.ends_with("s") {
            self.replace_suffix("s", "");
        }
    }

    fn step1b(&mut self) {
        if self.ends_with("eed") {
            if self.measure(self.stem_len("eed")) > 0 {
                self.replace_suffix("eed", "ee");
            }
            return;
        }
        let removed = ["ed", "ing"]
            .into_iter()
            .find(|suffix| self.ends_with(suffix) && self.has_vowel(self.stem_len(suffix)));
        let Some(suffix) = removed else {
            return;
        };
        self.replace_suffix(suffix, "");

        if self.ends_with("at") {
            self.replace_suffix("at", "ate");
        } else if self.ends_with("bl") {
            self.replace_suffix("bl", "ble");
        } else if self.ends_with("iz") {
            self.replace_suffix("iz", "ize");
        } else if self.double_consonant(self.b.len())
            && !matches!(self.b[self.b.len() - 1], 'l' | 's' | 'z')
        {
            self.b.pop();
        } else if self.measure(self.b.len()) == 1 && self.cvc(self.b.len()) {
            self.b.push('e');
        }
    }

    fn step1c(&mut self) {
        if self.ends_with("y") && self.has_vowel(self.stem_len("y")) {
            self.replace_suffix("y", "i");
        }
    }

    fn step2(&mut self) {
        const RULES: &[(&str, &str)] = &[
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
        self.apply_longest(RULES);
    }

    fn step3(&mut self) {
        const RULES: &[(&str, &str)] = &[
            ("icate", "ic"),
            ("ative", ""),
            ("alize", "al"),
            ("iciti", "ic"),
            ("ical", "ic"),
            ("ful", ""),
            ("ness", ""),
        ];
        self.apply_longest(RULES);
    }

    fn step4(&mut self) {
        const SUFFIXES: &[&str] = &[
            "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion",
            "ou", "ism", "ate", "iti", "ous", "ive", "ize",
        ];
        let Some(suffix) = self.longest_match(SUFFIXES) else {
            return;
        };
        let keep = self.stem_len(suffix);
        if suffix == "ion" && !(keep > 0 && matches!(self.b[keep - 1], 's' | 't')) {
            return;
        }
        if self.measure(keep) > 1 {
            self.b.truncate(keep);
        }
    }

    fn step5a(&mut self) {
        if !self.ends_with("e") {
            return;
        }
        let keep = self.stem_len("e");
        let m = self.measure(keep);
        if m > 1 || (m == 1 && !self.cvc(keep)) {
            self.b.truncate(keep);
        }
    }

    fn step5b(&mut self) {
        let len = self.b.len();
        if self.measure(len) > 1 && self.double_consonant(len) && self.b[len - 1] == 'l' {
            self.b.pop();
        }
    }

    /// Suffix lists in steps 2-4 are disjoint except for nested endings
    /// (`ement`/`ment`/`ent`, `ational`/`tional`, `ization`/`ation`), where the
    /// algorithm always selects the longest one that matches.
    fn longest_match<'a>(&self, suffixes: &[&'a str]) -> Option<&'a str> {
        suffixes
            .iter()
            .copied()
            .filter(|s| self.ends_with(s))
            .max_by_key(|s| s.len())
    }

    /// Replace the longest matching suffix when the remaining stem has
    /// measure > 0. A matching rule whose condition fails ends the step.
    fn apply_longest(&mut self, rules: &[(&str, &str)]) {
        let suffixes: Vec<&str> = rules.iter().map(|r| r.0).collect();
        let Some(suffix) = self.longest_match(&suffixes) else {
            return;
        };
        if self.measure(self.stem_len(suffix)) > 0 {
            let replacement = rules.iter().find(|r| r.0 == suffix).map_or("", |r| r.1);
            self.replace_suffix(suffix, replacement);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::porter_stem;

    #[test]
    fn classic_examples() {
        for (word, stem) in [
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("ties", "ti"),
            ("cats", "cat"),
            ("feed", "feed"),
            ("agreed", "agre"),
            ("plastered", "plaster"),
            ("motoring", "motor"),
            ("sing", "sing"),
            ("conflated", "conflat"),
            ("hopping", "hop"),
            ("falling", "fall"),
            ("filing", "file"),
            ("happy", "happi"),
            ("relational", "relat"),
            ("generalizations", "gener"),
            ("oscillators", "oscil"),
        ] {
            assert_eq!(porter_stem(word), stem, "{word}");
        }
    }

    #[test]
    fn short_words_untouched() {
        assert_eq!(porter_stem("as"), "as");
        assert_eq!(porter_stem("a"), "a");
        assert_eq!(porter_stem(""), "");
    }

    #[test]
    fn non_alphabetic_tokens_do_not_panic() {
        assert_eq!(porter_stem("state-of-the-art"), "state-of-the-art");
        assert_eq!(porter_stem("3d"), "3d");
        let _ = porter_stem("naïve");
    }
}
