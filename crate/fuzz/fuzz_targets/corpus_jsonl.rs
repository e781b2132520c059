#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(records) = ortag::corpus::parse_corpus_text(text, "fuzz") {
        for record in &records {
            // Acceptance implies a decodable relation and aligned lengths.
            assert_eq!(record.tags.len(), record.sentence.len());
            let relation = record.relation().expect("accepted record must decode");
            assert!(relation.last() < record.sentence.len());
        }
    }
});
