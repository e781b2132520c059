#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|input: (u8, &str)| {
    let (dim, text) = input;
    let dim = usize::from(dim % 9);
    if let Ok(table) = ortag::corpus::parse_word_vectors_text(text, "fuzz", dim) {
        for vector in table.values() {
            assert_eq!(vector.len(), dim);
        }
    }
});
