//! Temporary calibration probe (deleted before release).

use std::collections::BTreeMap;
use std::time::Instant;

use demoex::corpus::generate_synthetic;
use demoex::demo_builder::{DemoProvider, DemoStrategy};
use demoex::evaluation::score;
use demoex::generation::toy::{ToyBackend, ToyConfig};
use demoex::generation::{
    build_training_set, compose_input, train_on_examples, Seq2SeqBackend, TrainingConfig,
};
use demoex::pipeline::{Extractor, PipelineConfig};
use demoex::schema::{build_prompt, EventSchema, EventTypeDef};

fn schema5() -> EventSchema {
    EventSchema::new(vec![
        EventTypeDef::new("Transfer", &["Giver", "Item"]),
        EventTypeDef::new("Travel", &["Origin", "Destination"]),
        EventTypeDef::new("Meeting", &["Host", "Venue"]),
        EventTypeDef::new("Purchase", &["Buyer", "Seller"]),
        EventTypeDef::new("Launch", &["Agent", "Product"]),
    ])
    .unwrap()
}

#[test]
#[ignore]
fn calibrate_toy_training() {
    let schema = schema5();
    let train = generate_synthetic(&schema, 300, 1001);
    let eval = generate_synthetic(&schema, 100, 2002);

    // vocab coverage check
    let backend_probe = ToyBackend::new(&train, ToyConfig::default(), 7);
    let mut unk_tokens = std::collections::BTreeSet::new();
    for e in &eval.examples {
        let ids = backend_probe.vocab().encode(&e.tokens.join(" "));
        for (tok, id) in demoex::generation::toy::split_words(&e.tokens.join(" "))
            .into_iter()
            .zip(ids.iter())
        {
            if *id == 3 {
                unk_tokens.insert(tok);
            }
        }
    }
    println!("eval UNK tokens: {unk_tokens:?}");

    let demos = DemoProvider::new(&train, DemoStrategy::RichRole).unwrap();
    let mut config = TrainingConfig::toy();
    config.seed = 7;
    config.epochs = 26;
    config.learning_rate = 1.2e-3;
    let examples = build_training_set(&train, &demos, &config).unwrap();
    println!("training examples: {}", examples.len());

    let mut backend = ToyBackend::new(&train, ToyConfig::default(), 7);
    let t0 = Instant::now();
    let report = train_on_examples(&mut backend, &examples, &schema, &config, None).unwrap();
    println!(
        "trained {} epochs ({} steps) in {:.1}s; losses first {:.4} last {:.4}",
        report.epoch_losses.len(),
        report.steps,
        t0.elapsed().as_secs_f64(),
        report.epoch_losses.first().unwrap(),
        report.epoch_losses.last().unwrap()
    );

    // sample generations on eval: compare generated vs gold target strings
    println!("--- eval generations (positives) ---");
    let mut shown = 0;
    for e in &eval.examples {
        if e.records.is_empty() || shown >= 6 {
            continue;
        }
        let ty = &e.records[0].event_type;
        let demo = demos.demo_for(ty, &e.tokens, None);
        let prompt = build_prompt(&schema, ty).unwrap();
        let input = compose_input(&demo, &e.tokens, &prompt, &schema);
        let generated = backend.generate(&input, 128).unwrap();
        let gold: Vec<_> = e.records_of(ty).cloned().collect();
        let gold_text = demoex::record_codec::linearize(ty, &gold, &schema).unwrap().text;
        println!("SENT: {}", e.tokens.join(" "));
        println!("GOLD: {gold_text}");
        println!("GEN : {generated}");
        shown += 1;
    }

    let pipeline_config = PipelineConfig {
        training: config.clone(),
        ..PipelineConfig::default()
    };
    let extractor = Extractor::new(&backend, &train, &pipeline_config).unwrap();

    // train-set extraction F1 (memorization check)
    let train_subset = demoex::corpus::Corpus {
        schema: schema.clone(),
        examples: train.examples.iter().take(100).cloned().collect(),
    };
    let predictions = extractor.extract_corpus(&train_subset).unwrap();
    let records: BTreeMap<String, Vec<demoex::corpus::EventRecord>> = predictions
        .into_iter()
        .map(|(id, (records, _))| (id, records))
        .collect();
    let report = score(&train_subset, &records).unwrap();
    println!(
        "TRAIN-set: Trig-C F1 {:.4} (P {:.4} R {:.4}), Arg-C F1 {:.4} (P {:.4} R {:.4})",
        report.trig_c.f1,
        report.trig_c.precision,
        report.trig_c.recall,
        report.arg_c.f1,
        report.arg_c.precision,
        report.arg_c.recall
    );

    let predictions = extractor.extract_corpus(&eval).unwrap();
    let records: BTreeMap<String, Vec<demoex::corpus::EventRecord>> = predictions
        .into_iter()
        .map(|(id, (records, _))| (id, records))
        .collect();
    let report = score(&eval, &records).unwrap();
    println!(
        "EVAL: Trig-C F1 {:.4} (P {:.4} R {:.4}), Arg-C F1 {:.4} (P {:.4} R {:.4})",
        report.trig_c.f1,
        report.trig_c.precision,
        report.trig_c.recall,
        report.arg_c.f1,
        report.arg_c.precision,
        report.arg_c.recall
    );
}
