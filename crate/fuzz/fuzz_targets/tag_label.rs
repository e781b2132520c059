#![no_main]

use libfuzzer_sys::fuzz_target;
use ortag::tagspace::TagLabel;

fuzz_target!(|text: &str| {
    if let Ok(label) = text.parse::<TagLabel>() {
        // Display and parse are exact inverses on the label alphabet.
        let rendered = label.to_string();
        assert_eq!(rendered.parse::<TagLabel>().unwrap(), label);
        assert_eq!(rendered, text);
    }
});
