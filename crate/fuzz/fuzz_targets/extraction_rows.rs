#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(rows) = ortag::eval::parse_extraction_text(text, "fuzz") {
        assert!(rows.len() <= text.lines().count());
        for row in &rows {
            // Rendering a row and reparsing it must preserve the outcome.
            let line = row.outcome.to_string();
            assert_eq!(line.parse::<ortag::eval::FileOutcome>().unwrap(), row.outcome);
        }
    }
});
