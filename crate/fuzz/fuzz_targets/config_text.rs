#![no_main]

use libfuzzer_sys::fuzz_target;
use ortag::model::ModelConfig;

fuzz_target!(|text: &str| {
    let mut config = ModelConfig::default();
    if config.apply_text(text).is_ok() {
        // Applied values parse back through the same key=value path.
        let mut again = ModelConfig::default();
        again.apply_text(text).unwrap();
        assert_eq!(again, config);
        let _ = config.validate();
    }
});
