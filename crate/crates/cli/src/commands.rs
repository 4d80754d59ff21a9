//! Command implementations behind the clap surface.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use demoex::corpus::{
    build_domain_split, generate_synthetic, sample_k_shot, sample_ratio_with, Corpus,
    RatioPopulation, SplitManifest,
};
use demoex::demo_builder::{dump_demonstrations, DemoProvider, DemoStrategy, RobustnessMode};
use demoex::evaluation::{per_type_breakdown, score, ScoreReport};
use demoex::generation::adapter::CommandBackend;
use demoex::generation::echo::EchoBackend;
use demoex::generation::toy::{ToyBackend, ToyConfig};
use demoex::generation::Seq2SeqBackend;
use demoex::pipeline::{
    adapt_parameter_agnostic, read_predictions, train_pipeline, work_corpus, write_predictions,
    PipelineConfig, RobustnessConfig, RobustnessPhase,
};
use demoex::schema::EventSchema;

use crate::manifest::{manifest_path_for_file, ManifestBuilder};
use crate::opts::{
    BackendChoice, DemosArgs, PredictArgs, Resolved, RobustnessArgs, ScoreArgs, SplitArgs,
    SweepArgs, SynthArgs, TrainArgs,
};
use crate::util::{runtime, substream, usage, CliError};

fn load_schema(path: &Path) -> Result<EventSchema, CliError> {
    EventSchema::load(path).map_err(|e| usage(format!("schema {}: {e}", path.display())))
}

fn load_corpus(path: &Path, schema: &EventSchema) -> Result<Corpus, CliError> {
    Corpus::load_jsonl(path, schema).map_err(|e| usage(format!("corpus {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    fs::write(path, serde_json::to_vec_pretty(value).expect("serializable"))
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let mut manifest = ManifestBuilder::new(
        "synth",
        args.seed,
        json!({"n": args.n, "schema": args.schema}),
    );
    manifest.input(&args.schema)?;
    let corpus = generate_synthetic(&schema, args.n, substream(args.seed, "sampler"));
    corpus
        .save_jsonl(&args.out)
        .map_err(|e| runtime(format!("write {}: {e}", args.out.display())))?;
    manifest.output(&args.out);
    manifest.write(&manifest_path_for_file(&args.out))?;
    println!(
        "wrote {} sentences ({} event records) to {}",
        corpus.len(),
        corpus.examples.iter().map(|e| e.records.len()).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_split(args: &SplitArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let corpus = load_corpus(&args.corpus, &schema)?;
    ensure_dir(&args.out_dir)?;
    let sampler_seed = substream(args.seed, "sampler");

    let mut manifest = ManifestBuilder::new(
        "split",
        args.seed,
        json!({
            "mode": args.mode, "k": args.k, "ratio": args.ratio,
            "population": args.population, "top_n": args.top_n,
            "train_frac": args.train_frac,
        }),
    );
    manifest.input(&args.schema)?;
    manifest.input(&args.corpus)?;

    let mut split_manifest = SplitManifest::new(
        &args.mode,
        sampler_seed,
        json!({
            "k": args.k, "ratio": args.ratio, "population": args.population,
            "top_n": args.top_n, "train_frac": args.train_frac, "run_seed": args.seed,
        }),
    );
    let mut parts: Vec<(String, Corpus)> = Vec::new();

    match args.mode.as_str() {
        "kshot" => {
            let k = args.k.ok_or_else(|| usage("--k is required for kshot mode"))?;
            if k == 0 {
                return Err(usage("--k must be at least 1"));
            }
            let sample = sample_k_shot(&corpus, k, sampler_seed);
            for ty in &sample.empty_types {
                eprintln!("warning: event type '{ty}' has no bearing sentence");
            }
            println!("k-shot split: k={k} -> {} sentences", sample.corpus.len());
            parts.push(("train".to_string(), sample.corpus));
        }
        "ratio" => {
            let ratio = args
                .ratio
                .ok_or_else(|| usage("--ratio is required for ratio mode"))?;
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(usage(format!("ratio must lie in (0, 1], got {ratio}")));
            }
            let population = match args.population.as_str() {
                "full" => RatioPopulation::Full,
                "event-bearing" => RatioPopulation::EventBearing,
                other => return Err(usage(format!("unknown population '{other}'"))),
            };
            let part = sample_ratio_with(&corpus, ratio, sampler_seed, population);
            println!("ratio split: {ratio} -> {} sentences", part.len());
            parts.push(("train".to_string(), part));
        }
        "domain" => {
            let top_n = args
                .top_n
                .ok_or_else(|| usage("--top-n is required for domain mode"))?;
            if top_n == 0 || top_n >= schema.len() {
                return Err(usage(format!(
                    "top-n must lie in [1, {}), got {top_n}",
                    schema.len()
                )));
            }
            if !(args.train_frac > 0.0 && args.train_frac < 1.0) {
                return Err(usage(format!(
                    "train-frac must lie in (0, 1), got {}",
                    args.train_frac
                )));
            }
            let split = build_domain_split(&corpus, top_n, args.train_frac, sampler_seed);
            println!(
                "domain split: src {} types ({} train / {} eval), tgt {} types ({} train / {} eval)",
                split.src_schema.len(),
                split.src_train.len(),
                split.src_eval.len(),
                split.tgt_schema.len(),
                split.tgt_train.len(),
                split.tgt_eval.len()
            );
            for (name, sub_schema) in [
                ("src_schema", &split.src_schema),
                ("tgt_schema", &split.tgt_schema),
            ] {
                let path = args.out_dir.join(format!("{name}.json"));
                sub_schema
                    .save(&path)
                    .map_err(|e| runtime(format!("write {}: {e}", path.display())))?;
                manifest.output(&path);
            }
            parts.push(("src_train".to_string(), split.src_train));
            parts.push(("src_eval".to_string(), split.src_eval));
            parts.push(("tgt_train".to_string(), split.tgt_train));
            parts.push(("tgt_eval".to_string(), split.tgt_eval));
        }
        other => return Err(usage(format!("unknown split mode '{other}'"))),
    }

    for (name, part) in &parts {
        let path = args.out_dir.join(format!("{name}.jsonl"));
        part.save_jsonl(&path)
            .map_err(|e| runtime(format!("write {}: {e}", path.display())))?;
        split_manifest.add_part(name, part);
        manifest.output(&path);
    }
    let split_path = args.out_dir.join("split.json");
    write_json(&split_path, &split_manifest)?;
    manifest.output(&split_path);
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(())
}

fn construct_backend(
    choice: &BackendChoice,
    init_from: Option<&PathBuf>,
    work: &Corpus,
    init_seed: u64,
) -> Result<Box<dyn Seq2SeqBackend>, CliError> {
    Ok(match choice {
        BackendChoice::Toy => match init_from {
            Some(dir) => Box::new(
                ToyBackend::load(&dir.join("model.bin"))
                    .map_err(|e| runtime(format!("load checkpoint: {e}")))?,
            ),
            None => Box::new(ToyBackend::new(work, ToyConfig::default(), init_seed)),
        },
        BackendChoice::Echo => Box::new(
            EchoBackend::from_corpus(work).map_err(|e| runtime(format!("echo backend: {e}")))?,
        ),
        BackendChoice::Adapter(path) => Box::new(
            CommandBackend::spawn(path, &[]).map_err(|e| runtime(format!("adapter: {e}")))?,
        ),
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let corpus = load_corpus(&args.corpus, &schema)?;
    let resolved = args.common.resolve(args.init_from.is_some())?;
    ensure_dir(&args.out)?;

    println!(
        "training: backend={} strategy={} m={} epochs={} lr={} batch={} seed={}",
        resolved.backend,
        resolved.config.strategy,
        resolved.config.training.negative_rate,
        resolved.config.training.epochs,
        resolved.config.training.learning_rate,
        resolved.config.training.batch_size,
        resolved.seed
    );

    let work = work_corpus(&corpus, &resolved.config);
    let mut backend = construct_backend(
        &resolved.backend,
        args.init_from.as_ref(),
        &work,
        substream(resolved.seed, "init"),
    )?;

    let mut manifest = ManifestBuilder::new(
        "train",
        resolved.seed,
        serde_json::to_value(&resolved.config).expect("serializable"),
    );
    manifest.input(&args.schema)?;
    manifest.input(&args.corpus)?;

    let report = train_pipeline(backend.as_mut(), &corpus, &resolved.config, Some(&args.out))
        .map_err(|e| runtime(format!("training failed: {e}")))?;

    if report.epoch_losses.is_empty() {
        // Zero training steps still produce a usable checkpoint.
        backend
            .save_model(&args.out.join("model.bin"))
            .map_err(|e| runtime(format!("save model: {e}")))?;
    }
    let curve_path = args.out.join("loss_curve.csv");
    let mut curve = String::from("epoch,mean_loss\n");
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{epoch},{loss}\n"));
    }
    fs::write(&curve_path, curve)
        .map_err(|e| runtime(format!("write {}: {e}", curve_path.display())))?;

    for name in ["model.bin", "loss_curve.csv"] {
        manifest.output(&args.out.join(name));
    }
    manifest.write(&args.out.join("manifest.json"))?;

    match (report.epoch_losses.first(), report.epoch_losses.last()) {
        (Some(first), Some(last)) => println!(
            "trained {} steps over {} epochs; mean loss {first:.4} -> {last:.4}; checkpoint in {}",
            report.steps,
            report.epoch_losses.len(),
            args.out.display()
        ),
        _ => println!("no training steps ran; wrote initial checkpoint to {}", args.out.display()),
    }
    Ok(())
}

fn predict_into(
    backend: &dyn Seq2SeqBackend,
    eval: &Corpus,
    demo_corpus: &Corpus,
    config: &PipelineConfig,
    out: &Path,
) -> Result<(), CliError> {
    let extractor = adapt_parameter_agnostic(backend, demo_corpus, config)
        .map_err(|e| runtime(format!("extractor: {e}")))?;
    for warning in extractor.warnings() {
        eprintln!("warning: {warning}");
    }
    let predictions = extractor
        .extract_corpus(eval)
        .map_err(|e| runtime(format!("extraction failed: {e}")))?;
    write_predictions(out, eval, &predictions)
        .map_err(|e| runtime(format!("write {}: {e}", out.display())))?;
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let eval = load_corpus(&args.corpus, &schema)?;
    let resolved = args.common.resolve(false)?;
    let demo_corpus = match &args.demo_corpus {
        Some(path) => load_corpus(path, &schema)?,
        None => eval.clone(),
    };

    let backend: Box<dyn Seq2SeqBackend> = match &resolved.backend {
        BackendChoice::Toy => {
            let dir = args
                .model
                .as_ref()
                .ok_or_else(|| usage("--model is required for the toy backend"))?;
            Box::new(
                ToyBackend::load(&dir.join("model.bin"))
                    .map_err(|e| runtime(format!("load checkpoint: {e}")))?,
            )
        }
        BackendChoice::Echo => match &args.model {
            Some(dir) => Box::new(
                EchoBackend::load(&dir.join("model.bin"))
                    .map_err(|e| runtime(format!("load checkpoint: {e}")))?,
            ),
            // Gold-echo oracle over the prediction corpus itself, for
            // plumbing checks.
            None => Box::new(
                EchoBackend::from_corpus(&work_corpus(&eval, &resolved.config))
                    .map_err(|e| runtime(format!("echo backend: {e}")))?,
            ),
        },
        BackendChoice::Adapter(path) => Box::new(
            CommandBackend::spawn(path, &[]).map_err(|e| runtime(format!("adapter: {e}")))?,
        ),
    };

    let mut manifest = ManifestBuilder::new(
        "predict",
        resolved.seed,
        serde_json::to_value(&resolved.config).expect("serializable"),
    );
    manifest.input(&args.schema)?;
    manifest.input(&args.corpus)?;
    if let Some(path) = &args.demo_corpus {
        manifest.input(path)?;
    }

    predict_into(backend.as_ref(), &eval, &demo_corpus, &resolved.config, &args.out)?;
    manifest.output(&args.out);
    manifest.write(&manifest_path_for_file(&args.out))?;
    println!(
        "wrote predictions for {} sentences to {}",
        eval.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let gold = load_corpus(&args.gold, &schema)?;
    let predictions =
        read_predictions(&args.pred).map_err(|e| usage(format!("predictions: {e}")))?;
    let report = score(&gold, &predictions).map_err(|e| usage(format!("scoring: {e}")))?;

    let mut manifest = ManifestBuilder::new("score", 0, json!({}));
    manifest.input(&args.schema)?;
    manifest.input(&args.gold)?;
    manifest.input(&args.pred)?;

    write_json(&args.out, &report)?;
    manifest.output(&args.out);

    if let Some(by_type) = &args.by_type {
        let rows =
            per_type_breakdown(&gold, &predictions).map_err(|e| usage(format!("scoring: {e}")))?;
        let mut csv = String::from(
            "event_type,trig_precision,trig_recall,trig_f1,arg_precision,arg_recall,arg_f1,gold_trig,pred_trig,gold_arg,pred_arg\n",
        );
        for row in rows {
            csv.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{},{}\n",
                row.event_type,
                row.trig_c.precision,
                row.trig_c.recall,
                row.trig_c.f1,
                row.arg_c.precision,
                row.arg_c.recall,
                row.arg_c.f1,
                row.counts.gold_trig,
                row.counts.pred_trig,
                row.counts.gold_arg,
                row.counts.pred_arg
            ));
        }
        fs::write(by_type, csv)
            .map_err(|e| runtime(format!("write {}: {e}", by_type.display())))?;
        manifest.output(by_type);
    }
    manifest.write(&manifest_path_for_file(&args.out))?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &ScoreReport) {
    println!(
        "Trig-C: P {:.4} R {:.4} F1 {:.4} | Arg-C: P {:.4} R {:.4} F1 {:.4}",
        report.trig_c.precision,
        report.trig_c.recall,
        report.trig_c.f1,
        report.arg_c.precision,
        report.arg_c.recall,
        report.arg_c.f1
    );
}

pub fn cmd_robustness(args: &RobustnessArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let train_corpus = load_corpus(&args.train_corpus, &schema)?;
    let eval = load_corpus(&args.eval_corpus, &schema)?;
    ensure_dir(&args.out_dir)?;
    let resolved = args.common.resolve(false)?;
    if !(0.0..=1.0).contains(&args.fraction) {
        return Err(usage(format!(
            "fraction must lie in [0, 1], got {}",
            args.fraction
        )));
    }
    let robustness_seed = substream(resolved.seed, "robustness");

    // Test-phase transforms leave training untouched, so the baseline model
    // also serves both test-only variants; each train+test variant retrains.
    let variants: [(&str, Option<(RobustnessMode, RobustnessPhase)>); 5] = [
        ("baseline", None),
        ("test_perturb", Some((RobustnessMode::Perturb, RobustnessPhase::Test))),
        ("test_drop", Some((RobustnessMode::Drop, RobustnessPhase::Test))),
        ("traintest_perturb", Some((RobustnessMode::Perturb, RobustnessPhase::Both))),
        ("traintest_drop", Some((RobustnessMode::Drop, RobustnessPhase::Both))),
    ];

    let baseline_backend = train_robustness_backend(&resolved, &train_corpus, None)?;
    let mut rows = Vec::new();
    for (name, variant) in variants {
        let robustness = variant.map(|(mode, phase)| RobustnessConfig {
            mode,
            fraction: args.fraction,
            phase,
            seed: robustness_seed,
        });
        let config = PipelineConfig {
            robustness,
            ..resolved.config.clone()
        };
        let retrained;
        let backend: &dyn Seq2SeqBackend = match variant {
            Some((_, RobustnessPhase::Both)) => {
                retrained = train_robustness_backend(&resolved, &train_corpus, robustness)?;
                retrained.as_ref()
            }
            _ => baseline_backend.as_ref(),
        };
        let preds_path = args.out_dir.join(format!("{name}.preds.jsonl"));
        predict_into(backend, &eval, &train_corpus, &config, &preds_path)?;
        let predictions = read_predictions(&preds_path)
            .map_err(|e| runtime(format!("reread predictions: {e}")))?;
        let report = score(&eval, &predictions).map_err(|e| runtime(format!("scoring: {e}")))?;
        write_json(&args.out_dir.join(format!("{name}.report.json")), &report)?;
        println!(
            "{name:>18}: Trig-C F1 {:.4} | Arg-C F1 {:.4}",
            report.trig_c.f1, report.arg_c.f1
        );
        rows.push(json!({
            "variant": name,
            "trig_c_f1": report.trig_c.f1,
            "arg_c_f1": report.arg_c.f1,
        }));
    }

    let comparison_path = args.out_dir.join("comparison.json");
    write_json(
        &comparison_path,
        &json!({
            "fraction": args.fraction,
            "seed": resolved.seed,
            "variants": rows,
        }),
    )?;

    let mut manifest = ManifestBuilder::new(
        "robustness",
        resolved.seed,
        json!({"fraction": args.fraction, "config": resolved.config}),
    );
    manifest.input(&args.schema)?;
    manifest.input(&args.train_corpus)?;
    manifest.input(&args.eval_corpus)?;
    manifest.output(&comparison_path);
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(())
}

fn train_robustness_backend(
    resolved: &Resolved,
    train_corpus: &Corpus,
    robustness: Option<RobustnessConfig>,
) -> Result<Box<dyn Seq2SeqBackend>, CliError> {
    let config = PipelineConfig {
        robustness,
        ..resolved.config.clone()
    };
    let work = work_corpus(train_corpus, &config);
    let mut backend = construct_backend(
        &resolved.backend,
        None,
        &work,
        substream(resolved.seed, "init"),
    )?;
    train_pipeline(backend.as_mut(), train_corpus, &config, None)
        .map_err(|e| runtime(format!("training failed: {e}")))?;
    Ok(backend)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let corpus = load_corpus(&args.corpus, &schema)?;
    let eval = load_corpus(&args.eval_corpus, &schema)?;
    ensure_dir(&args.out_dir)?;
    if args.seeds.is_empty() {
        return Err(usage("at least one seed is required"));
    }
    if args.k.is_some() && args.ratio.is_some() {
        return Err(usage("--k and --ratio are mutually exclusive"));
    }

    let mut trig_f1 = Vec::new();
    let mut arg_f1 = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &args.seeds {
        let mut common = args.common.clone();
        common.seed = Some(seed);
        let resolved = common.resolve(false)?;
        let sampled = if let Some(k) = args.k {
            sample_k_shot(&corpus, k, substream(seed, "sampler")).corpus
        } else if let Some(ratio) = args.ratio {
            sample_ratio_with(&corpus, ratio, substream(seed, "sampler"), RatioPopulation::Full)
        } else {
            corpus.clone()
        };

        let backend = {
            // Echo stays an oracle over the eval gold; trainable backends
            // train on the sampled subset.
            let mut backend = match &resolved.backend {
                BackendChoice::Echo => construct_backend(
                    &resolved.backend,
                    None,
                    &work_corpus(&eval, &resolved.config),
                    substream(seed, "init"),
                )?,
                _ => construct_backend(
                    &resolved.backend,
                    None,
                    &work_corpus(&sampled, &resolved.config),
                    substream(seed, "init"),
                )?,
            };
            train_pipeline(backend.as_mut(), &sampled, &resolved.config, None)
                .map_err(|e| runtime(format!("training failed: {e}")))?;
            backend
        };

        let preds_path = args.out_dir.join(format!("seed{seed}.preds.jsonl"));
        predict_into(backend.as_ref(), &eval, &sampled, &resolved.config, &preds_path)?;
        let predictions = read_predictions(&preds_path)
            .map_err(|e| runtime(format!("reread predictions: {e}")))?;
        let report = score(&eval, &predictions).map_err(|e| runtime(format!("scoring: {e}")))?;
        println!(
            "seed {seed}: {} train sentences, Trig-C F1 {:.4}, Arg-C F1 {:.4}",
            sampled.len(),
            report.trig_c.f1,
            report.arg_c.f1
        );
        trig_f1.push(report.trig_c.f1);
        arg_f1.push(report.arg_c.f1);
        per_seed.push(json!({
            "seed": seed,
            "train_sentences": sampled.len(),
            "trig_c_f1": report.trig_c.f1,
            "arg_c_f1": report.arg_c.f1,
        }));
    }

    let summary = json!({
        "seeds": args.seeds,
        "trig_c_f1": {"mean": mean(&trig_f1), "std": std_dev(&trig_f1)},
        "arg_c_f1": {"mean": mean(&arg_f1), "std": std_dev(&arg_f1)},
        "runs": per_seed,
    });
    write_json(&args.out_dir.join("sweep.json"), &summary)?;
    let mut manifest = ManifestBuilder::new(
        "sweep",
        *args.seeds.first().unwrap_or(&0),
        json!({"seeds": args.seeds, "k": args.k, "ratio": args.ratio}),
    );
    manifest.input(&args.schema)?;
    manifest.input(&args.corpus)?;
    manifest.input(&args.eval_corpus)?;
    manifest.output(&args.out_dir.join("sweep.json"));
    manifest.write(&args.out_dir.join("manifest.json"))?;
    println!(
        "sweep over {} seeds: Trig-C F1 {:.4} ± {:.4} | Arg-C F1 {:.4} ± {:.4}",
        args.seeds.len(),
        mean(&trig_f1),
        std_dev(&trig_f1),
        mean(&arg_f1),
        std_dev(&arg_f1)
    );
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn cmd_demos(args: &DemosArgs) -> Result<(), CliError> {
    let schema = load_schema(&args.schema)?;
    let corpus = load_corpus(&args.corpus, &schema)?;
    let strategy: DemoStrategy = args.strategy.parse().map_err(usage)?;
    let mut manifest =
        ManifestBuilder::new("demos", 0, json!({"strategy": args.strategy}));
    manifest.input(&args.schema)?;
    manifest.input(&args.corpus)?;
    let provider =
        DemoProvider::new(&corpus, strategy).map_err(|e| runtime(format!("demo selection: {e}")))?;
    for warning in provider.warnings() {
        eprintln!("warning: {warning}");
    }
    dump_demonstrations(&provider.cached_demos(), &args.out)
        .map_err(|e| runtime(format!("write {}: {e}", args.out.display())))?;
    manifest.output(&args.out);
    manifest.write(&manifest_path_for_file(&args.out))?;
    println!("wrote demonstrations to {}", args.out.display());
    Ok(())
}
