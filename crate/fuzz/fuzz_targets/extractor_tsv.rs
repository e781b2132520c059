#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let outcome = ortag::corpus::parse_extractor_text(text, "fuzz");
    // Every line yields at most one item or one warning.
    assert!(outcome.items.len() + outcome.warnings.len() <= text.lines().count());
    for item in &outcome.items {
        if let Some(c) = item.confidence {
            assert!(c.is_finite());
        }
    }
});
