use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use serde_json::json;

use dec_core::composer::{read_corpus, write_corpus, Corpus};
use dec_core::dictionary::build_neighbor_index;
use dec_core::eval::{
    few_shot_split, full_split, mean_recall_at_k, overall_recall, per_predicate_table, predict, tail_predicates,
    write_per_predicate_csv, zero_shot_split, MeanRecall, SplitKind, SplitSpec, REPORT_KS,
};
use dec_core::pipeline::{augment, AugmentConfig};
use dec_core::schema::{ComponentStore, Dataset, PredicateId};
use dec_core::synth::{self, SynthConfig};
use dec_core::trainer::{self, read_checkpoint, write_checkpoint, write_loss_trace, ClassifierParams, Sampling, TrainConfig};

use crate::args::{Cli, Command, Common, SplitArg};
use crate::data::{read_split, Inputs};
use crate::manifest::{self, Manifest, MANIFEST_FILE};
use crate::settings::{parse_config, Profile, Settings};
use crate::{Failed, UsageError};

/// State of one subcommand invocation.
pub struct Run {
    pub out: PathBuf,
    pub profile: Profile,
    pub settings: Settings,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    /// Records `path` as an input and hands it back.
    pub fn input(&mut self, path: &Path) -> PathBuf {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        path.to_path_buf()
    }

    /// Path of an output file under `--out`.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        if !self.outputs.contains(&p) {
            self.outputs.push(p.clone());
        }
        p
    }

    fn resolve(&mut self, config: Option<&Path>, overrides: &[(&'static str, String)]) -> Result<()> {
        if let Some(path) = config {
            let text = std::fs::read_to_string(self.input(path))
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config(&text, path)? {
                self.settings.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            self.settings.set(k, v)?;
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.output(name);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    fn augment_config(&self) -> AugmentConfig {
        let s = &self.settings;
        AugmentConfig {
            delta: s.delta,
            capacity: s.capacity,
            neighbors: s.neighbors,
            min_similarity: s.min_similarity,
            budget: s.budget,
            seed: s.seed,
        }
    }
}

fn describe(cmd: &Command) -> (&'static str, &Common, Vec<(&'static str, String)>) {
    match cmd {
        Command::Synth { common, synth } => ("synth", common, [common.overrides(), synth.overrides()].concat()),
        Command::Stats { common, .. } => ("stats", common, common.overrides()),
        Command::Anchors { common, hyper, .. } => ("anchors", common, [common.overrides(), hyper.overrides()].concat()),
        Command::Compose { common, hyper, .. } => ("compose", common, [common.overrides(), hyper.overrides()].concat()),
        Command::Split { common, shots, .. } => {
            let mut o = common.overrides();
            if let Some(s) = shots {
                o.push(("shots", s.to_string()));
            }
            ("split", common, o)
        }
        Command::Train { common, hyper, .. } => ("train", common, [common.overrides(), hyper.overrides()].concat()),
        Command::Eval { common, hyper, .. } => ("eval", common, [common.overrides(), hyper.overrides()].concat()),
        Command::Report { common, hyper, .. } => ("report", common, [common.overrides(), hyper.overrides()].concat()),
        Command::Rerun { .. } => unreachable!("rerun has no common arguments"),
    }
}

pub fn execute(cli: Cli, argv: &[String]) -> Result<()> {
    if let Command::Rerun { manifest, out } = &cli.command {
        return rerun(manifest, out);
    }
    let (name, common, overrides) = describe(&cli.command);
    let mut run = Run {
        out: common.out.clone(),
        profile: common.profile,
        settings: Settings::for_profile(common.profile),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    std::fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    let config = common.config.clone();
    let result = run
        .resolve(config.as_deref(), &overrides)
        .and_then(|()| dispatch(&cli.command, &mut run));
    finish(&run, name, argv, result.as_ref().err())?;
    result
}

fn finish(run: &Run, name: &str, argv: &[String], error: Option<&anyhow::Error>) -> Result<()> {
    let existing = |v: &[PathBuf]| v.iter().filter(|p| p.is_file()).cloned().collect::<Vec<_>>();
    let m = Manifest {
        tool: "dec".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: name.into(),
        args: manifest::strip_out(&argv[1..]),
        cwd: std::env::current_dir()?.display().to_string(),
        profile: run.profile.name().into(),
        seed: run.settings.seed,
        settings: run.settings.echo(),
        inputs: manifest::digest_all(&existing(&run.inputs), None)?,
        outputs: manifest::digest_all(&existing(&run.outputs), Some(&run.out))?,
        status: if error.is_some() { "failed" } else { "ok" }.into(),
        error: error.map(|e| format!("{e:#}")),
    };
    manifest::write(&run.out.join(MANIFEST_FILE), &m)
}

fn dispatch(cmd: &Command, run: &mut Run) -> Result<()> {
    let data = match cmd {
        Command::Synth { .. } => return cmd_synth(run),
        Command::Stats { data, .. }
        | Command::Anchors { data, .. }
        | Command::Compose { data, .. }
        | Command::Split { data, .. }
        | Command::Train { data, .. }
        | Command::Eval { data, .. }
        | Command::Report { data, .. } => data,
        Command::Rerun { .. } => unreachable!(),
    };
    let mut inputs = Inputs::open(run, data)?;
    let inputs = &mut inputs;
    match cmd {
        Command::Stats { .. } => cmd_stats(run, inputs),
        Command::Anchors { .. } => cmd_anchors(run, inputs),
        Command::Compose { .. } => cmd_compose(run, inputs),
        Command::Split { kind, .. } => cmd_split(run, inputs, *kind),
        Command::Train { dec, corpus, split, .. } => cmd_train(run, inputs, *dec, corpus.as_deref(), split.as_deref()),
        Command::Eval { checkpoint, split, .. } => cmd_eval(run, inputs, checkpoint, split.as_deref()),
        Command::Report { baseline, dec_checkpoint, split, .. } => {
            cmd_report(run, inputs, baseline, dec_checkpoint, split.as_deref())
        }
        Command::Synth { .. } | Command::Rerun { .. } => unreachable!(),
    }
}

fn cmd_synth(run: &mut Run) -> Result<()> {
    let s = &run.settings;
    let config = SynthConfig {
        n_images: s.synth_images,
        n_test_images: s.synth_test_images,
        n_object_categories: s.synth_categories,
        n_predicates: s.synth_predicates,
        zipf_exponent: s.synth_zipf,
        n_unseen: s.synth_unseen,
        visual_dim: s.synth_visual_dim,
        word_dim: s.synth_word_dim,
        spatial_dim: s.spatial_dim,
        seed: s.seed,
        ..SynthConfig::default()
    };
    let out = synth::generate(&config)?;
    let files = synth::write_output(&run.out, &out)?;
    for f in files.all() {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        run.output(&name);
    }
    println!(
        "synth: {} train images ({} triples), {} test images ({} triples), {} unseen combinations",
        out.train.images().len(),
        out.train.num_triples(),
        out.test.images().len(),
        out.test.num_triples(),
        out.unseen.len()
    );
    Ok(())
}

fn cmd_stats(run: &mut Run, inputs: &mut Inputs) -> Result<()> {
    let train = inputs.train(run, false)?;
    let test = inputs.optional_test(run)?;
    let counts = train.predicate_counts();
    let test_counts = test.as_ref().map(Dataset::predicate_counts);
    let mut preds: Vec<PredicateId> = train.vocab().annotated_predicates().collect();
    preds.sort_by_key(|p| (std::cmp::Reverse(counts[p.0]), p.0));
    let path = run.output("stats.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["predicate", "train_count", "test_count"])?;
    for p in &preds {
        let tc = test_counts.as_ref().map(|c| c[p.0].to_string()).unwrap_or_default();
        w.write_record([train.vocab().predicate_name(*p), &counts[p.0].to_string(), &tc])?;
    }
    w.flush()?;
    let head: Vec<String> = preds
        .iter()
        .take(5)
        .map(|p| format!("{}={}", train.vocab().predicate_name(*p), counts[p.0]))
        .collect();
    println!("stats: {} triples over {} predicates; most frequent {}", train.num_triples(), preds.len(), head.join(", "));
    Ok(())
}

fn cmd_anchors(run: &mut Run, inputs: &mut Inputs) -> Result<()> {
    let train = inputs.train(run, false)?;
    let scan = dec_core::anchor::scan_anchors(&train, run.settings.delta)?;
    let path = run.output("anchors.jsonl");
    let mut text = String::new();
    for a in &scan.anchors {
        let line = json!({
            "image_id": a.triple.image_id,
            "subject": a.triple.subject,
            "object": a.triple.object,
            "predicate": train.vocab().predicate_name(a.triple.predicate),
            "decomposed": a.decomposed.slot(),
            "iou": a.iou,
            "subject_area": a.subject_area,
            "object_area": a.object_area,
        });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    let summary = json!({
        "delta": run.settings.delta,
        "total_triples": scan.total_triples,
        "anchors": scan.anchors.len(),
        "skipped_area_ties": scan.skipped_ties,
    });
    run.write_json("anchors_summary.json", &summary)?;
    println!("anchors: {} of {} triples ({} equal-area ties skipped)", scan.anchors.len(), scan.total_triples, scan.skipped_ties);
    Ok(())
}

fn load_training(run: &mut Run, inputs: &mut Inputs, split: Option<&Path>) -> Result<Dataset> {
    let train = inputs.train(run, true)?;
    match split {
        Some(p) => {
            let spec = read_split(run, p)?;
            Ok(spec.train_dataset(&train)?)
        }
        None => Ok(train),
    }
}

fn cmd_compose(run: &mut Run, inputs: &mut Inputs) -> Result<()> {
    let train = inputs.train(run, true)?;
    let emb = inputs.embeddings(run)?;
    let dims = inputs.dims(run, &emb)?;
    let components = ComponentStore::build(&train, &emb, dims)?;
    let aug = augment(&train, &components, &emb, &run.augment_config())?;
    let path = run.output("corpus.jsonl");
    write_corpus(&path, &aug.corpus, &train)?;
    let per_predicate: BTreeMap<&str, usize> = aug
        .corpus
        .stats
        .per_predicate
        .iter()
        .map(|(p, n)| (train.vocab().predicate_name(*p), *n))
        .collect();
    let novel = aug.corpus.novel_combinations(&train).len();
    let summary = json!({
        "items": aug.corpus.len(),
        "intra": aug.corpus.stats.intra,
        "inter": aug.corpus.stats.inter,
        "anchors": aug.scan.anchors.len(),
        "anchors_visited": aug.corpus.stats.anchors_visited,
        "anchors_without_replacement": aug.corpus.stats.skipped_anchors,
        "dictionary_size": aug.dictionary.len(),
        "dictionary_evictions": aug.dictionary.evictions(),
        "novel_combinations": novel,
        "per_predicate": per_predicate,
    });
    run.write_json("compose_summary.json", &summary)?;
    println!(
        "compose: {} items ({} intra, {} inter), {} combinations unseen in training",
        aug.corpus.len(),
        aug.corpus.stats.intra,
        aug.corpus.stats.inter,
        novel
    );
    Ok(())
}

fn cmd_split(run: &mut Run, inputs: &mut Inputs, kind: SplitArg) -> Result<()> {
    let train = inputs.train(run, false)?;
    let spec = match kind {
        SplitArg::FewShot => few_shot_split(&train, run.settings.shots, run.settings.seed)?,
        SplitArg::ZeroShot => zero_shot_split(&train, &inputs.test(run, false)?)?,
        SplitArg::Full => full_split(&train, &inputs.test(run, false)?),
    };
    run.write_json("split.json", &spec)?;
    println!(
        "split: {:?}, {} training images, {} evaluated test triples",
        spec.kind,
        spec.train_images.len(),
        spec.test_triples.len()
    );
    Ok(())
}

fn cmd_train(run: &mut Run, inputs: &mut Inputs, dec: bool, corpus_path: Option<&Path>, split: Option<&Path>) -> Result<()> {
    if corpus_path.is_some() && !dec {
        return Err(UsageError("--corpus only applies together with --dec".into()).into());
    }
    let train = load_training(run, inputs, split)?;
    let emb = inputs.embeddings(run)?;
    let dims = inputs.dims(run, &emb)?;
    let components = ComponentStore::build(&train, &emb, dims)?;
    let corpus = match (dec, corpus_path) {
        (false, _) => Corpus::default(),
        (true, Some(p)) => {
            let neighbors = build_neighbor_index(&emb, run.settings.neighbors, run.settings.min_similarity)?;
            read_corpus(&run.input(p), &train, &components, &emb, &neighbors)?
        }
        (true, None) => augment(&train, &components, &emb, &run.augment_config())?.corpus,
    };
    let s = &run.settings;
    let config = TrainConfig {
        learning_rate: s.learning_rate,
        iterations: s.iterations,
        kl_weight: if dec { s.kl_weight } else { 0.0 },
        seed: s.seed,
        triple_cap: s.triple_cap,
        negative_ratio: s.negative_ratio,
        hidden: s.hidden,
        sampling: if dec { Sampling::Balanced } else { Sampling::Uniform },
        n_predicates: s.n_predicates,
        k_images: s.k_images,
    };
    let output = trainer::train(&train, &components, &corpus, &config)?;
    let mut echo = run.settings.echo_text();
    echo.push_str(&format!("mode = {}\n", if dec { "dec" } else { "baseline" }));
    let ck = run.output("checkpoint.sgc");
    write_checkpoint(&ck, &output.params, &echo)?;
    let trace = run.output("loss.txt");
    write_loss_trace(&trace, &output.loss_trace)?;
    let last = output.loss_trace.last().copied().unwrap_or(f64::NAN);
    let summary = json!({
        "mode": if dec { "dec" } else { "baseline" },
        "iterations": config.iterations,
        "composed_items": corpus.len(),
        "training_images": train.images().len(),
        "initial_loss": output.loss_trace.first(),
        "final_loss": last,
        "parameters": output.params.num_params(),
    });
    run.write_json("train_summary.json", &summary)?;
    println!(
        "train ({}): {} iterations, {} composed items, loss {:.4} -> {:.4}",
        if dec { "dec" } else { "baseline" },
        config.iterations,
        corpus.len(),
        output.loss_trace[0],
        last
    );
    Ok(())
}

struct Evaluation {
    train: Dataset,
    by_k: Vec<(usize, MeanRecall, Option<f64>)>,
}

impl Evaluation {
    fn at(&self, k: usize) -> &MeanRecall {
        &self.by_k.iter().find(|(kk, _, _)| *kk == k).expect("reported k").1
    }
}

/// Loads the evaluation context shared by `eval` and `report`.
fn eval_context(run: &mut Run, inputs: &mut Inputs, split: Option<&Path>) -> Result<(Dataset, Dataset, ComponentStore)> {
    let mut train = inputs.train(run, false)?;
    let mut test = inputs.test(run, true)?;
    if let Some(p) = split {
        let spec: SplitSpec = read_split(run, p)?;
        match spec.kind {
            SplitKind::FewShot(_) => train = spec.train_dataset(&train)?,
            SplitKind::ZeroShot | SplitKind::Full => test = spec.test_dataset(&test)?,
        }
    }
    let emb = inputs.embeddings(run)?;
    let dims = inputs.dims(run, &emb)?;
    let components = ComponentStore::build(&test, &emb, dims)?;
    Ok((train, test, components))
}

fn evaluate(params: &ClassifierParams, train: Dataset, test: &Dataset, components: &ComponentStore) -> Result<Evaluation> {
    let records = predict(params, test, components)?;
    let by_k = REPORT_KS
        .iter()
        .map(|&k| (k, mean_recall_at_k(&records, k), overall_recall(&records, k)))
        .collect();
    Ok(Evaluation { train, by_k })
}

fn load_params(run: &mut Run, path: &Path) -> Result<ClassifierParams> {
    Ok(read_checkpoint(&run.input(path))?.0)
}

fn names(ds: &Dataset, preds: &[PredicateId]) -> Vec<String> {
    preds.iter().map(|p| ds.vocab().predicate_name(*p).to_string()).collect()
}

fn cmd_eval(run: &mut Run, inputs: &mut Inputs, checkpoint: &Path, split: Option<&Path>) -> Result<()> {
    let params = load_params(run, checkpoint)?;
    let (train, test, components) = eval_context(run, inputs, split)?;
    let ev = evaluate(&params, train, &test, &components)?;
    let tail = tail_predicates(&ev.train, run.settings.tail_size);
    let rare = tail_predicates(&ev.train, run.settings.rare_size);
    let at100 = ev.at(100);
    let mean_recall: BTreeMap<String, f64> = ev.by_k.iter().map(|(k, m, _)| (format!("mR@{k}"), m.mean)).collect();
    let recall: BTreeMap<String, Option<f64>> = ev.by_k.iter().map(|(k, _, r)| (format!("R@{k}"), *r)).collect();
    let rare_recall: BTreeMap<String, Option<f64>> = rare
        .iter()
        .map(|p| (ev.train.vocab().predicate_name(*p).to_string(), at100.recall_of(*p)))
        .collect();
    let report = json!({
        "test_images": test.images().len(),
        "test_triples": test.num_triples(),
        "mean_recall": mean_recall,
        "recall": recall,
        "tail_predicates": names(&ev.train, &tail),
        "tail_mean_recall_at_100": at100.subset_mean(&tail),
        "rare_recall_at_100": rare_recall,
    });
    run.write_json("report.json", &report)?;
    let csv = run.output("per_predicate.csv");
    write_per_predicate_csv(&csv, &per_predicate_table(&ev.train, at100))?;
    for (k, m, r) in &ev.by_k {
        println!("mR@{k} = {:.4}   R@{k} = {}", m.mean, r.map_or("n/a".into(), |v| format!("{v:.4}")));
    }
    if let Some(t) = at100.subset_mean(&tail) {
        println!("tail-{} mR@100 = {t:.4}", tail.len());
    }
    Ok(())
}

fn cmd_report(run: &mut Run, inputs: &mut Inputs, baseline: &Path, dec: &Path, split: Option<&Path>) -> Result<()> {
    let base_params = load_params(run, baseline)?;
    let dec_params = load_params(run, dec)?;
    let (train, test, components) = eval_context(run, inputs, split)?;
    let base = evaluate(&base_params, train.clone(), &test, &components)?;
    let ours = evaluate(&dec_params, train, &test, &components)?;
    let tail = tail_predicates(&base.train, run.settings.tail_size);
    let rare = tail_predicates(&base.train, run.settings.rare_size);
    let (b100, d100) = (base.at(100), ours.at(100));
    let counts = base.train.predicate_counts();

    let path = run.output("comparison.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["predicate", "train_frequency", "baseline_recall_at_100", "dec_recall_at_100"])?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for row in per_predicate_table(&base.train, b100) {
        let p = base.train.vocab().predicate(&row.predicate).expect("row from vocabulary");
        w.write_record([row.predicate.as_str(), &counts[p.0].to_string(), &cell(b100.recall_of(p)), &cell(d100.recall_of(p))])?;
    }
    w.flush()?;

    let summary = |e: &Evaluation| -> BTreeMap<String, f64> { e.by_k.iter().map(|(k, m, _)| (format!("mR@{k}"), m.mean)).collect() };
    let (bt, dt) = (b100.subset_mean(&tail), d100.subset_mean(&tail));
    let margin = bt.zip(dt).map(|(b, d)| d - b);
    let rare_rows: Vec<_> = rare
        .iter()
        .map(|p| {
            json!({
                "predicate": base.train.vocab().predicate_name(*p),
                "train_frequency": counts[p.0],
                "baseline": b100.recall_of(*p),
                "dec": d100.recall_of(*p),
            })
        })
        .collect();
    let report = json!({
        "baseline": summary(&base),
        "dec": summary(&ours),
        "tail_predicates": names(&base.train, &tail),
        "tail_mean_recall_at_100": { "baseline": bt, "dec": dt, "margin": margin },
        "rarest": rare_rows,
    });
    run.write_json("report.json", &report)?;
    for k in REPORT_KS {
        println!("mR@{k}: baseline {:.4}  dec {:.4}", base.at(k).mean, ours.at(k).mean);
    }
    match (bt, dt) {
        (Some(b), Some(d)) => println!("tail-{} mR@100: baseline {b:.4}  dec {d:.4}  margin {:+.4}", tail.len(), d - b),
        _ => println!("tail predicates have no test ground truth"),
    }
    Ok(())
}

fn rerun(manifest_path: &Path, out: &Path) -> Result<()> {
    let recorded = manifest::read(manifest_path).map_err(|e| dec_core::Error::Validation(format!("{e:#}")))?;
    if recorded.subcommand == "rerun" {
        return Err(UsageError("a rerun manifest cannot be rerun".into()).into());
    }
    let out = std::path::absolute(out)?;
    std::env::set_current_dir(&recorded.cwd)
        .map_err(|e| dec_core::Error::Validation(format!("recorded working directory {}: {e}", recorded.cwd)))?;
    for input in &recorded.inputs {
        let now = manifest::sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(dec_core::Error::Validation(format!("input {} changed since the recorded run", input.path)).into());
        }
    }
    let mut argv = vec!["dec".to_string()];
    argv.extend(recorded.args.iter().cloned());
    argv.push("--out".into());
    argv.push(out.display().to_string());
    let code = crate::run(&argv);
    if code != 0 {
        return Err(anyhow!(Failed(code)));
    }
    let fresh = manifest::read(&out.join(MANIFEST_FILE))?;
    let mut differing = Vec::new();
    for old in &recorded.outputs {
        match fresh.outputs.iter().find(|f| f.path == old.path) {
            Some(f) if f.sha256 == old.sha256 => println!("identical  {}", old.path),
            _ => {
                println!("DIFFERENT  {}", old.path);
                differing.push(old.path.clone());
            }
        }
    }
    if fresh.outputs.len() != recorded.outputs.len() {
        differing.push("output file set".into());
    }
    if differing.is_empty() {
        println!("rerun: all {} artifacts bit-identical", recorded.outputs.len());
        Ok(())
    } else {
        Err(dec_core::Error::Validation(format!("artifacts differ: {}", differing.join(", "))).into())
    }
}
