use super::*;
use crate::train::DEFAULT_SEEDS;

fn overrides(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn parse(text: &str, list: &[&str]) -> Result<ExperimentConfig> {
    ExperimentConfig::parse(text, &overrides(list))
}

#[test]
fn defaults_validate_and_match_module_defaults() {
    let config = ExperimentConfig::default();
    config.validate().unwrap();
    assert_eq!(config.seeds, DEFAULT_SEEDS.to_vec());
    assert_eq!(config.temperature, 0.5);
    assert_eq!(config.lambda, 1.0 / 256.0);
    assert_eq!(config.keep_probability, 0.7);
    assert_eq!(config.attack_fraction, 0.3);
    assert_eq!(config.candidates, 48);
    assert_eq!(config.max_candidates, 48);
    assert_eq!(config.query_budget, 2000);
    assert_eq!(config.projector_dim, 128);
    assert_eq!(config.num_classes(), crate::toy::NUM_CLASSES);
    assert_eq!(parse("", &[]).unwrap(), config);
}

#[test]
fn overrides_are_typed_like_toml_values() {
    let config = parse(
        "epochs = 2\n",
        &[
            "epochs=7",
            "learning_rate=0.01",
            "schedule=ag",
            "seeds=[1, 2]",
            "antonym_filtering=true",
            "train_file=data/train.jsonl",
        ],
    )
    .unwrap();
    assert_eq!(config.epochs, Some(7));
    assert_eq!(config.learning_rate, Some(0.01));
    assert_eq!(config.schedule, SchedulePreset::Ag);
    assert_eq!(config.seeds, vec![1, 2]);
    assert!(config.antonym_filtering);
    assert_eq!(config.train_file.as_deref(), Some(Path::new("data/train.jsonl")));
}

#[test]
fn unknown_keys_fail_listing_the_valid_ones() {
    for result in [parse("bogus_key = 1\n", &[]), parse("", &["bogus_key=1"])] {
        match result {
            Err(Error::Config(message)) => {
                assert!(message.contains("unknown field `bogus_key`"), "{message}");
                assert!(message.contains("temperature"), "{message}");
                assert!(message.contains("query_budget"), "{message}");
            }
            other => panic!("expected a config error, got {other:?}"),
        }
    }
}

#[test]
fn malformed_input_is_rejected() {
    assert!(matches!(parse("epochs = = 3\n", &[]), Err(Error::Config(_))));
    assert!(matches!(parse("", &["epochs"]), Err(Error::Config(_))));
    assert!(matches!(
        parse("", &["epochs=many"]),
        Err(Error::Config(_)) // string where an integer is expected
    ));
    assert!(matches!(parse("", &["seeds=[]"]), Err(Error::Config(_))));
    assert!(matches!(
        parse("", &["subword_vocab_size=3"]),
        Err(Error::Config(_))
    ));
    assert!(matches!(parse("", &["corpus=files"]), Err(Error::Config(_))));
    assert!(matches!(
        parse(
            "corpus = \"files\"\ntrain_file = \"a\"\nval_file = \"b\"\ntest_file = \"c\"\n",
            &[]
        ),
        Err(Error::Config(message)) if message.contains("labels")
    ));
}

#[test]
fn environment_seed_list_overrides_the_config() {
    let config = ExperimentConfig::default();
    assert_eq!(config.effective_seeds(None).unwrap(), DEFAULT_SEEDS.to_vec());
    assert_eq!(config.effective_seeds(Some("7")).unwrap(), vec![7]);
    assert_eq!(
        config.effective_seeds(Some("2020, 9, 11")).unwrap(),
        vec![2020, 9, 11]
    );
    assert!(config.effective_seeds(Some("")).is_err());
    assert!(config.effective_seeds(Some("7;9")).is_err());
    assert!(config.effective_seeds(Some("seven")).is_err());
}

#[test]
fn presets_resolve_with_field_overrides_on_top() {
    let config = parse("", &[]).unwrap();
    let desk = config.train_config(Regime::Supervised);
    assert_eq!((desk.epochs, desk.warmup_epochs), (20, 0));
    assert_eq!(desk.learning_rate, 2e-3);
    let desk_cl = config.train_config(Regime::Scat);
    assert_eq!((desk_cl.epochs, desk_cl.warmup_epochs), (10, 1));
    assert_eq!(desk_cl.objective.temperature, 0.5);
    assert_eq!(desk_cl.advgen.candidates, 48);

    let config = parse("schedule = \"ag\"\nepochs = 7\n", &[]).unwrap();
    let ag = config.train_config(Regime::Scat);
    assert_eq!((ag.epochs, ag.warmup_epochs), (7, 3));
    assert_eq!(ag.learning_rate, 5e-5);

    let config = parse(
        "encoder_layers = 1\nencoder_max_len = 24\nprojector_dim = 6\n",
        &[],
    )
    .unwrap();
    let encoder = config.encoder_config(100);
    assert_eq!((encoder.layers, encoder.heads), (1, 2));
    assert_eq!((encoder.hidden_dim, encoder.max_len), (128, 24));
    assert_eq!(encoder.vocab_size, 100);
    assert_eq!(config.projector_config().output_dim, 6);

    let config = parse("eval_epochs = 4\neval_mode = \"finetune\"\n", &[]).unwrap();
    let eval = config.eval_config();
    assert_eq!(eval.epochs, 4);
    assert_eq!(eval.learning_rate, 2e-5);

    let config = parse("mlm_epochs = 1\nmlm_warmup_epochs = 0\n", &[]).unwrap();
    assert_eq!(config.mlm_train_config().epochs, 1);

    let config = parse("query_budget = 5\nattacker = \"labelfree\"\n", &[]).unwrap();
    let attack = config.attack_config();
    assert_eq!(attack.query_budget, 5);
    assert_eq!(attack.attacker, AttackerKind::Labelfree);
}

#[test]
fn toml_serialization_round_trips() {
    let config = parse(
        "epochs = 7\nseeds = [42]\nantonym_filtering = true\ntoy_train_per_class = 9\n",
        &[],
    )
    .unwrap();
    let text = config.to_toml().unwrap();
    let back = parse(&text, &[]).unwrap();
    assert_eq!(back, config);
}

#[test]
fn toy_corpus_loading_and_synonyms() {
    let config = parse(
        "toy_train_per_class = 2\ntoy_val_per_class = 1\ntoy_test_per_class = 1\n",
        &[],
    )
    .unwrap();
    let splits = config.load_splits().unwrap();
    assert_eq!(splits.train.len(), 8);
    assert_eq!(splits.validation.len(), 4);
    assert_eq!(splits.test.len(), 4);
    let synonyms = config.load_synonyms().unwrap();
    assert!(!synonyms.synonyms_of("rain").is_empty());
    assert!(synonyms.is_antonym("rain", "bank"));
}

#[test]
fn reference_page_documents_exactly_the_accepted_keys() {
    // A config with every optional key set serializes all keys.
    let config = parse(
        "",
        &[
            "train_file=a",
            "val_file=b",
            "test_file=c",
            "synonyms_file=s",
            "encoder_layers=2",
            "encoder_heads=2",
            "encoder_hidden_dim=128",
            "encoder_ff_dim=256",
            "encoder_max_len=64",
            "epochs=10",
            "warmup_epochs=1",
            "batch_size=32",
            "learning_rate=0.002",
            "weight_decay=0.000001",
            "mlm_warmup_epochs=1",
            "eval_epochs=100",
            "eval_batch_size=128",
            "eval_learning_rate=0.0005",
            "eval_weight_decay=0.0005",
        ],
    )
    .unwrap();
    let table: toml::Table = config.to_toml().unwrap().parse().unwrap();
    let page = reference_page();
    for key in table.keys() {
        assert!(page.contains(&format!("| `{key}` |")), "{key} undocumented");
    }
    let documented = page.matches("\n| `").count();
    assert_eq!(documented, table.len(), "reference page key count drifted");
}
