use super::{
    decode_pair, loss, predict, train, vectorize, Batch, Mode, ModelConfig, ModelError,
    PlateauSchedule, RecordInputs, TaggerParams,
};
use crate::corpus::{CorpusRecord, Vocab, PAD, UNK};
use crate::eval::AttemptOutcome;
use crate::numcore::{grad_check_multi, NumError, Tensor};
use crate::tagspace::{Position, Role, Sentence, SpanSet, TagLabel, ARG_PAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        word_dim: 4,
        pos_dim: 4,
        hidden: 3,
        conv_filters: 2,
        conv_depth: 2,
        dropout_p: 0.0,
        batch_size: 8,
        lr: 0.01,
        max_epochs: 5,
        seed: 11,
        ..ModelConfig::default()
    }
}

fn params_for(texts: &[&str], config: ModelConfig) -> TaggerParams {
    let words =
        Vocab::build(texts.iter().flat_map(|t| t.split_whitespace().map(str::to_lowercase)));
    let pos = Vocab::build(["X"]);
    TaggerParams::init(config, words, pos, None).unwrap()
}

/// A record whose relation tags cover `rel` as S or B I* E.
fn record(id: &str, text: &str, arg1: &[usize], rel: &[usize], arg2: &[usize]) -> CorpusRecord {
    let sentence = Sentence::from_surfaces(id, text).unwrap();
    let mut tags = vec![TagLabel::Outside; sentence.len()];
    if rel.len() == 1 {
        tags[rel[0]] = TagLabel::Tagged(Role::Rel, Position::Single);
    } else {
        for (k, &p) in rel.iter().enumerate() {
            let position = if k == 0 {
                Position::Begin
            } else if k == rel.len() - 1 {
                Position::End
            } else {
                Position::Inside
            };
            tags[p] = TagLabel::Tagged(Role::Rel, position);
        }
    }
    CorpusRecord {
        sentence,
        arg1: SpanSet::new(arg1.to_vec()).unwrap(),
        arg2: SpanSet::new(arg2.to_vec()).unwrap(),
        tags,
        source: "test".into(),
    }
}

#[test]
fn emissions_are_token_by_label_shaped() {
    let text = "anna gave old bob plums";
    let params = params_for(&[text], tiny_config());
    let rec = record("s1", text, &[0], &[1], &[3]);
    let emissions = params.emissions(&rec).unwrap();
    assert_eq!(emissions.shape(), [5, params.config.labels]);
    assert!(emissions.values().iter().all(|v| v.is_finite()));
}

#[test]
fn zero_length_examples_are_rejected() {
    let params = params_for(&["anna gave plums"], tiny_config());
    let empty = RecordInputs {
        word_idx: vec![],
        pos_idx: vec![],
        arg_idx: vec![],
        arg1_word_idx: vec![],
        arg2_word_idx: vec![],
        gold: None,
        valid_len: 0,
    };
    assert!(matches!(params.emissions_for(&empty), Err(ModelError::Config(_))));
}

#[test]
fn emissions_depend_on_the_argument_pair() {
    let text = "anna gave old bob plums";
    let params = params_for(&[text], tiny_config());
    let a = params.emissions(&record("s1", text, &[0], &[1], &[3])).unwrap();
    let b = params.emissions(&record("s1", text, &[3], &[1], &[4])).unwrap();
    assert_eq!(a.shape(), b.shape());
    assert_ne!(a.values(), b.values());
}

#[test]
fn padding_does_not_change_emissions() {
    let text = "anna gave old bob plums";
    let params = params_for(&[text], tiny_config());
    let rec = record("s1", text, &[0], &[1, 2], &[3]);
    let inputs = vectorize(&params, &rec).unwrap();
    let mut padded = inputs.clone();
    padded.pad_to(inputs.valid_len + 3);
    let plain = params.emissions_for(&inputs).unwrap();
    let wide = params.emissions_for(&padded).unwrap();
    assert_eq!(plain.shape(), wide.shape());
    assert_eq!(plain.values(), wide.values());
}

#[test]
fn full_network_gradients_match_finite_differences() {
    let text = "anna gave old bob plums";
    let mut params = params_for(&[text], tiny_config());
    // Refill every parameter at a healthy scale: the check compares the
    // analytic gradient of the whole graph against finite differences, and
    // tiny init-scale gradients would sit below the differencing floor.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for tensor in params.tensors_mut() {
        for value in tensor.values_mut() {
            *value = rng.gen_range(-0.8..0.8);
        }
    }
    let rec = record("s1", text, &[0], &[1, 2], &[4]);
    let inputs = vectorize(&params, &rec).unwrap();
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let worst = grad_check_multi(&tensors, 1e-4, |tape, vars| {
        let tagger_vars =
            params.vars_from_ordered(vars).map_err(|e| NumError::Contract(e.to_string()))?;
        loss(tape, &params, &tagger_vars, &inputs, Mode::Eval)
            .map_err(|e| NumError::Contract(e.to_string()))
    })
    .unwrap();
    assert!(worst < 1e-5, "worst relative gradient error {worst}");
}

fn two_sentence_fixture() -> (Vec<CorpusRecord>, Vec<&'static str>) {
    let texts = vec!["anna likes green plums", "bob hates loud drums"];
    let records = vec![
        record("s1", texts[0], &[0], &[1], &[3]),
        record("s2", texts[1], &[0], &[1], &[3]),
    ];
    (records, texts)
}

#[test]
fn training_reduces_the_loss_epoch_over_epoch() {
    let (records, texts) = two_sentence_fixture();
    let mut params = params_for(&texts, tiny_config());
    let history = train(&mut params, &records, &records).unwrap();
    assert_eq!(history.epochs.len(), 5);
    for pair in history.epochs.windows(2) {
        assert!(
            pair[1].train_loss < pair[0].train_loss,
            "epoch {} did not improve: {} -> {}",
            pair[1].epoch,
            pair[0].train_loss,
            pair[1].train_loss
        );
    }
    let log = history.render_log();
    assert_eq!(log.lines().count(), 6);
    assert!(log.contains("epoch=1 ") && log.contains("best_epoch="));
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let (records, texts) = two_sentence_fixture();
    let mut first = params_for(&texts, tiny_config());
    let mut second = params_for(&texts, tiny_config());
    let history_first = train(&mut first, &records, &records).unwrap();
    let history_second = train(&mut second, &records, &records).unwrap();
    assert_eq!(history_first, history_second);
    for (a, b) in first.tensors().iter().zip(second.tensors()) {
        assert_eq!(a.values(), b.values());
    }
}

#[test]
fn plateau_schedule_cuts_the_rate_after_patience() {
    let mut schedule = PlateauSchedule::new(0.5, 0.1, 3);
    assert!(schedule.observe(1.0));
    assert!(!schedule.observe(1.0));
    assert!(!schedule.observe(1.2));
    assert_eq!(schedule.lr, 0.5);
    assert!(!schedule.observe(1.1));
    assert!((schedule.lr - 0.05).abs() < 1e-12, "third stale epoch cuts the rate");
    assert!(schedule.observe(0.5), "a new best resets the counter");
    assert!(!schedule.observe(0.6));
    assert!(!schedule.observe(0.6));
    assert!((schedule.lr - 0.05).abs() < 1e-12);
    assert!(!schedule.observe(0.6));
    assert!((schedule.lr - 0.005).abs() < 1e-13);
}

#[test]
fn validation_conflict_triggers_early_stop() {
    let text = "anna likes green plums";
    let train_records = vec![record("s1", text, &[0], &[1], &[3])];
    let val_records = vec![record("s1", text, &[0], &[2], &[3])];
    let config = ModelConfig {
        lr: 0.05,
        lr_patience: 2,
        early_stop_patience: 3,
        max_epochs: 50,
        ..tiny_config()
    };
    let mut params = params_for(&[text], config);
    let history = train(&mut params, &train_records, &val_records).unwrap();
    assert!(
        history.epochs.len() < 50,
        "training should stop early, ran {} epochs",
        history.epochs.len()
    );
    let min_loss = history
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(history.best_val_loss, min_loss);
    let best = &history.epochs[history.best_epoch - 1];
    assert_eq!(best.val_loss, history.best_val_loss);
}

#[test]
fn exploding_updates_surface_as_divergence() {
    let (records, texts) = two_sentence_fixture();
    let config = ModelConfig { lr: 1e200, max_epochs: 3, ..tiny_config() };
    let mut params = params_for(&texts, config);
    match train(&mut params, &records, &records) {
        Err(ModelError::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn decoding_yields_all_three_outcome_kinds() {
    let text = "anna gave bob plums";
    let params = params_for(&[text], tiny_config());
    let sentence = Sentence::from_surfaces("s1", text).unwrap();
    let arg1 = SpanSet::new(vec![0]).unwrap();
    let arg2 = SpanSet::new(vec![2]).unwrap();
    // Label columns: O=0, R-B=1, R-I=2, R-E=3, R-S=4.
    let favor = |hot: &[(usize, usize)]| {
        let mut values = vec![0.0; 4 * 5];
        for t in 0..4 {
            values[t * 5] = 10.0;
        }
        for &(t, label) in hot {
            values[t * 5] = 0.0;
            values[t * 5 + label] = 10.0;
        }
        Tensor::matrix(4, 5, values).unwrap()
    };
    let extracted =
        decode_pair(&params, &sentence, &arg1, &arg2, &favor(&[(1, 4)])).unwrap();
    match extracted.outcome {
        AttemptOutcome::Extracted(e) => {
            assert_eq!(e.rel.positions, Some(vec![1]));
            assert_eq!(e.rel.text, "gave");
            assert_eq!(e.arg1.text, "anna");
            assert_eq!(e.arg2.text, "bob");
            assert!(e.confidence > 0.99 && e.confidence <= 1.0);
        }
        other => panic!("expected an extraction, got {other:?}"),
    }
    let missed = decode_pair(&params, &sentence, &arg1, &arg2, &favor(&[])).unwrap();
    assert_eq!(missed.outcome, AttemptOutcome::Missed);
    let violated =
        decode_pair(&params, &sentence, &arg1, &arg2, &favor(&[(2, 2)])).unwrap();
    assert_eq!(violated.outcome, AttemptOutcome::SchemeViolation);
}

#[test]
fn prediction_is_deterministic() {
    let text = "anna gave old bob plums";
    let params = params_for(&[text], tiny_config());
    let sentence = Sentence::from_surfaces("s1", text).unwrap();
    let pairs = vec![
        (SpanSet::new(vec![0]).unwrap(), SpanSet::new(vec![3]).unwrap()),
        (SpanSet::new(vec![3]).unwrap(), SpanSet::new(vec![4]).unwrap()),
    ];
    let first = predict(&params, &sentence, &pairs).unwrap();
    let second = predict(&params, &sentence, &pairs).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.len(), 2);
    assert_eq!(first[0].arg1, pairs[0].0);
}

#[test]
fn one_record_is_memorized() {
    let text = "anna likes green plums";
    let records = vec![record("s1", text, &[0], &[1], &[3])];
    let config = ModelConfig {
        lr: 0.05,
        max_epochs: 80,
        early_stop_patience: 80,
        ..tiny_config()
    };
    let mut params = params_for(&[text], config);
    let history = train(&mut params, &records, &records).unwrap();
    assert_eq!(history.epochs.last().unwrap().val_f1, 1.0);
    let pairs = vec![(records[0].arg1.clone(), records[0].arg2.clone())];
    let decoded = predict(&params, &records[0].sentence, &pairs).unwrap();
    match &decoded[0].outcome {
        AttemptOutcome::Extracted(e) => assert_eq!(e.rel.positions, Some(vec![1])),
        other => panic!("planted relation not recovered: {other:?}"),
    }
}

#[test]
fn config_overrides_apply_and_errors_name_the_field() {
    let mut config = ModelConfig::desk_scale();
    config.apply_kv("hidden", "64").unwrap();
    assert_eq!(config.hidden, 64);
    config.apply_text("lr = 0.01\n# a comment\n\nmax_epochs=7\n").unwrap();
    assert_eq!(config.lr, 0.01);
    assert_eq!(config.max_epochs, 7);
    let unknown = config.apply_kv("widht", "3").unwrap_err();
    assert!(unknown.to_string().contains("widht"), "got {unknown}");
    let unreadable = config.apply_kv("hidden", "many").unwrap_err();
    assert!(unreadable.to_string().contains("hidden"), "got {unreadable}");
    let shapeless = config.apply_text("just words\n").unwrap_err();
    assert!(shapeless.to_string().contains("key=value"), "got {shapeless}");
}

#[test]
fn invalid_configs_are_rejected() {
    let cases: Vec<(&str, Box<dyn Fn(&mut ModelConfig)>)> = vec![
        ("dropout_p", Box::new(|c| c.dropout_p = 1.0)),
        ("lr_factor", Box::new(|c| c.lr_factor = 0.0)),
        ("lr", Box::new(|c| c.lr = -1.0)),
        ("arg_dim", Box::new(|c| c.arg_dim = 9)),
        ("labels", Box::new(|c| c.labels = 4)),
        ("hidden", Box::new(|c| c.hidden = 0)),
    ];
    for (field, break_it) in cases {
        let mut config = ModelConfig::desk_scale();
        break_it(&mut config);
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains(field), "{field}: got {err}");
    }

    let words = Vocab::build(["anna"]);
    let crowded = Vocab::build(["A", "B", "C", "D", "E"]);
    let config = tiny_config();
    let err =
        TaggerParams::init(config.clone(), words.clone(), crowded, None).unwrap_err();
    assert!(err.to_string().contains("POS"), "got {err}");

    let pos = Vocab::build(["X"]);
    let table = Tensor::zeros(vec![2, 2]).unwrap();
    let err = TaggerParams::init(config, words, pos, Some(table)).unwrap_err();
    assert!(err.to_string().contains("word table"), "got {err}");
}

#[test]
fn batches_pad_to_the_widest_example() {
    let short = RecordInputs {
        word_idx: vec![2, 3, 4],
        pos_idx: vec![2, 2, 2],
        arg_idx: vec![0, 8, 4],
        arg1_word_idx: vec![2],
        arg2_word_idx: vec![4],
        gold: Some(vec![0, 4, 0]),
        valid_len: 3,
    };
    let long = RecordInputs {
        word_idx: vec![5, 6, 7, 8, 9],
        pos_idx: vec![2; 5],
        arg_idx: vec![3, 8, 8, 8, 7],
        arg1_word_idx: vec![5],
        arg2_word_idx: vec![9],
        gold: Some(vec![0, 1, 3, 0, 0]),
        valid_len: 5,
    };
    let batch = Batch::new(vec![short.clone(), long.clone()]);
    assert_eq!(batch.width, 5);
    assert_eq!(batch.lengths(), [3, 5]);
    let padded = &batch.items[0];
    assert_eq!(padded.word_idx, [2, 3, 4, PAD, PAD]);
    assert_eq!(padded.pos_idx, [2, 2, 2, PAD, PAD]);
    assert_eq!(padded.arg_idx, [0, 8, 4, ARG_PAD, ARG_PAD]);
    assert_eq!(padded.gold.as_deref(), Some(&[0, 4, 0, 0, 0][..]));
    assert_eq!(padded.valid_len, 3);
    assert_eq!(batch.items[1], long);
}

#[test]
fn unknown_and_uppercase_words_map_through_the_vocabulary() {
    let params = params_for(&["anna likes plums"], tiny_config());
    let rec = record("s1", "Anna likes zzz", &[0], &[1], &[2]);
    let inputs = vectorize(&params, &rec).unwrap();
    assert_eq!(inputs.word_idx[0], params.word_vocab.lookup("anna"));
    assert_ne!(inputs.word_idx[0], UNK);
    assert_eq!(inputs.word_idx[2], UNK);
    assert_eq!(inputs.gold, Some(vec![0, 4, 0]));
    assert_eq!(inputs.valid_len, 3);
}
