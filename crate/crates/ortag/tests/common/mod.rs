//! Shared synthetic training data: a small templated corpus with one
//! relation per sentence, sized so a desk-scale model can memorize it fast.

use ortag::corpus::CorpusRecord;
use ortag::tagspace::{encode_tags, Role, Sentence, SpanSet, TagLabel, Token, Triple};

/// 64 templated sentences over a vocabulary of well under 60 distinct
/// words, at most 6 tokens each:
/// `<subject> <verb phrase> the <adjective> <object>`.
/// Gold: arg1 = subject, relation = verb phrase, arg2 = object phrase.
pub fn templated_records() -> Vec<CorpusRecord> {
    let subjects = ["anna", "bob", "carla", "dave"];
    let verbs: [&[(&str, &str)]; 4] = [
        &[("likes", "VBZ")],
        &[("visits", "VBZ")],
        &[("will", "MD"), ("visit", "VB")],
        &[("can", "MD"), ("see", "VB")],
    ];
    let adjectives = ["green", "old"];
    let objects = ["orchard", "museum"];

    let mut records = Vec::new();
    for (si, subject) in subjects.iter().enumerate() {
        for (vi, verb) in verbs.iter().enumerate() {
            for (ai, adjective) in adjectives.iter().enumerate() {
                for (oi, object) in objects.iter().enumerate() {
                    let mut tokens = vec![Token::new(*subject, "NNP")];
                    for (word, pos) in verb.iter() {
                        tokens.push(Token::new(*word, *pos));
                    }
                    let object_start = tokens.len();
                    tokens.push(Token::new("the", "DT"));
                    tokens.push(Token::new(*adjective, "JJ"));
                    tokens.push(Token::new(*object, "NN"));

                    let id = format!("t{si}{vi}{ai}{oi}");
                    let sentence = Sentence::new(id, tokens).expect("templates are non-empty");
                    let arg1 = SpanSet::new(vec![0]).expect("valid span");
                    let rel = SpanSet::new((1..object_start).collect()).expect("valid span");
                    let arg2 = SpanSet::new((object_start..object_start + 3).collect())
                        .expect("valid span");
                    let triple = Triple::new(arg1.clone(), rel, arg2.clone())
                        .expect("template spans are disjoint");
                    // Training records carry relation-only tags; argument
                    // positions travel separately as model inputs.
                    let tags: Vec<TagLabel> = encode_tags(&sentence, &triple)
                        .expect("templates satisfy the word-order rules")
                        .into_iter()
                        .map(|tag| match tag {
                            TagLabel::Tagged(Role::Rel, _) => tag,
                            _ => TagLabel::Outside,
                        })
                        .collect();
                    records.push(CorpusRecord {
                        sentence,
                        arg1,
                        arg2,
                        tags,
                        source: "template".into(),
                    });
                }
            }
        }
    }
    records
}
