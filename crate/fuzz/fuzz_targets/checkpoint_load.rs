#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Any outcome but a panic or runaway allocation is acceptable.
    let _ = ortag::model::load_from(data);
});
