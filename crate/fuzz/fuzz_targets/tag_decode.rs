#![no_main]

use libfuzzer_sys::fuzz_target;
use ortag::tagspace::{decode_tags, encode_tags, Position, Role, Sentence, TagLabel};

const ALPHABET: [TagLabel; 13] = [
    TagLabel::Outside,
    TagLabel::Tagged(Role::Arg1, Position::Begin),
    TagLabel::Tagged(Role::Arg1, Position::Inside),
    TagLabel::Tagged(Role::Arg1, Position::End),
    TagLabel::Tagged(Role::Arg1, Position::Single),
    TagLabel::Tagged(Role::Rel, Position::Begin),
    TagLabel::Tagged(Role::Rel, Position::Inside),
    TagLabel::Tagged(Role::Rel, Position::End),
    TagLabel::Tagged(Role::Rel, Position::Single),
    TagLabel::Tagged(Role::Arg2, Position::Begin),
    TagLabel::Tagged(Role::Arg2, Position::Inside),
    TagLabel::Tagged(Role::Arg2, Position::End),
    TagLabel::Tagged(Role::Arg2, Position::Single),
];

fuzz_target!(|data: &[u8]| {
    if data.is_empty() || data.len() > 64 {
        return;
    }
    let tags: Vec<TagLabel> =
        data.iter().map(|b| ALPHABET[usize::from(b % 13)]).collect();
    let words = vec!["w"; tags.len()].join(" ");
    let sentence = Sentence::from_surfaces("fuzz", &words).unwrap();
    if let Ok(triple) = decode_tags(tags.len(), &tags) {
        for span in [&triple.arg1, &triple.rel, &triple.arg2] {
            assert!(span.last() < tags.len());
        }
        // Decoding is strict BIOES, so re-encoding an accepted sequence
        // (when the word-order constraints admit it) reproduces it exactly.
        if let Ok(back) = encode_tags(&sentence, &triple) {
            assert_eq!(back, tags);
        }
    }
});
