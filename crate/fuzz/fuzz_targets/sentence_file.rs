#![no_main]

use std::collections::BTreeSet;

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let outcome = ortag::corpus::parse_sentence_text(text, "fuzz");
    assert!(outcome.items.len() + outcome.warnings.len() <= text.lines().count());
    let mut ids = BTreeSet::new();
    for sentence in &outcome.items {
        assert!(!sentence.is_empty());
        // Duplicate ids keep the first occurrence only.
        assert!(ids.insert(sentence.id.clone()));
        for token in &sentence.tokens {
            assert!(!token.surface.is_empty() && !token.pos.is_empty());
        }
    }
});
