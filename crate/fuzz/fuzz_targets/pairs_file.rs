#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(requests) = ortag::corpus::parse_pairs_text(text, "fuzz") {
        for request in &requests {
            assert!(request.line >= 1 && request.line <= text.lines().count());
            for span in [&request.arg1, &request.arg2] {
                // SpanSet construction guarantees non-empty ascending indices.
                assert!(span.positions().windows(2).all(|w| w[0] < w[1]));
                assert!(span.len() >= 1);
            }
        }
    }
});
