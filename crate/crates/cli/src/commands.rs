// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dapi_core::data::{
    gen_synthetic, split, ClassLabel, PromptRecord, SyntheticBundle, SyntheticSpec,
};
use dapi_core::eval::{
    category_table, run_eval, summary_table, EvalConfig, EvalExtras, HttpScorer, HttpScorerConfig,
    Scorer, StubScorer,
};
use dapi_core::lm::{
    fit_tiny_lm, load_model, save_model, LmTrainParams, Model, ModelConfig, Vocab,
};
use dapi_core::pipeline::{binary_pairs, feature_records, TRAIN_RATIO};
use dapi_core::probe::{
    mean_abs_similarity, pairwise_similarity, similarity_report, top_tokens_report, train_probes,
    train_single_probe, vocab_top_tokens, FeatureRecord, ProbeSet,
};
use dapi_core::steering::{generate_steered, generate_unsteered, write_trace, SelectionMode};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::manifest::{compare_outputs, list_outputs, Manifest};

pub const SCORER_URL_ENV: &str = "DAPI_SCORER_URL";
const MODEL_FILE: &str = "model.bin";
const VOCAB_FILE: &str = "vocab.txt";

pub fn execute(command: Command, argv: Vec<String>) -> CliResult<()> {
    match command {
        Command::ServeStubScorer(a) => serve(&a),
        Command::Replay(a) => replay(&a, argv),
        other => run_recorded(other, argv).map(|_| ()),
    }
}

/// Resolves paths, runs the command and writes its manifest.
fn run_recorded(command: Command, argv: Vec<String>) -> CliResult<Manifest> {
    let (command, inputs) = resolve(command)?;
    let out = out_dir(&command)
        .expect("recorded commands have an output directory")
        .clone();
    fs::create_dir_all(&out)?;
    let start = Instant::now();
    let seeds = run(&command, &out)?;
    let manifest = Manifest {
        command: command.name().to_string(),
        argv,
        seeds,
        inputs,
        outputs: list_outputs(&out)?,
        out_dir: out,
        config: command,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: start.elapsed().as_secs_f64(),
    };
    manifest.write()?;
    Ok(manifest)
}

fn out_dir(command: &Command) -> Option<&PathBuf> {
    match command {
        Command::Synth(a) => Some(&a.out),
        Command::TrainLm(a) => Some(&a.out),
        Command::TrainProbes(a) => Some(&a.out),
        Command::Analyze(a) => Some(&a.out),
        Command::Generate(a) => Some(&a.out),
        Command::Eval(a) => Some(&a.out),
        Command::ServeStubScorer(_) | Command::Replay(_) => None,
    }
}

fn set_out_dir(command: &mut Command, dir: PathBuf) {
    match command {
        Command::Synth(a) => a.out = dir,
        Command::TrainLm(a) => a.out = dir,
        Command::TrainProbes(a) => a.out = dir,
        Command::Analyze(a) => a.out = dir,
        Command::Generate(a) => a.out = dir,
        Command::Eval(a) => a.out = dir,
        Command::ServeStubScorer(_) | Command::Replay(_) => {}
    }
}

/// Makes every path absolute, checks that inputs exist and fills in the
/// scorer URL from the environment, so the stored command is self-contained.
fn resolve(mut command: Command) -> CliResult<(Command, Vec<PathBuf>)> {
    let mut inputs = Vec::new();
    let mut input = |p: &mut PathBuf| -> CliResult<()> {
        *p = std::path::absolute(&*p)?;
        if !p.exists() {
            return Err(CliError::usage(format!("input not found: {}", p.display())));
        }
        inputs.push(p.clone());
        Ok(())
    };
    match &mut command {
        Command::Synth(a) => {
            if let Some(p) = a.spec.as_mut() {
                input(p)?;
            }
        }
        Command::TrainLm(a) => input(&mut a.data)?,
        Command::TrainProbes(a) => {
            input(&mut a.data)?;
            input(&mut a.model)?;
        }
        Command::Analyze(a) => {
            input(&mut a.model)?;
            input(&mut a.probes)?;
            for p in [a.compare.as_mut(), a.data.as_mut()].into_iter().flatten() {
                input(p)?;
            }
        }
        Command::Generate(a) => {
            input(&mut a.model)?;
            for p in [a.probes.as_mut(), a.prompts.as_mut(), a.data.as_mut()]
                .into_iter()
                .flatten()
            {
                input(p)?;
            }
            if a.prompt.is_empty() && a.prompts.is_none() && a.data.is_none() {
                return Err(CliError::usage("give --prompt, --prompts or --data"));
            }
        }
        Command::Eval(a) => {
            input(&mut a.model)?;
            for p in [
                a.probes.as_mut(),
                a.single.as_mut(),
                a.prompts.as_mut(),
                a.data.as_mut(),
            ]
            .into_iter()
            .flatten()
            {
                input(p)?;
            }
            if a.prompts.is_none() && a.data.is_none() {
                return Err(CliError::usage("give --prompts or --data"));
            }
            if a.stub_scorer {
                if a.data.is_none() {
                    return Err(CliError::usage(
                        "--stub-scorer needs --data for its lexicons",
                    ));
                }
            } else if a.scorer_url.is_none() {
                a.scorer_url = std::env::var(SCORER_URL_ENV).ok().filter(|s| !s.is_empty());
                if a.scorer_url.is_none() {
                    return Err(CliError::usage(format!(
                        "no scorer: pass --scorer-url, set {SCORER_URL_ENV} or use --stub-scorer"
                    )));
                }
            }
        }
        Command::ServeStubScorer(_) | Command::Replay(_) => {}
    }
    if let Some(out) = out_dir(&command).cloned() {
        set_out_dir(&mut command, std::path::absolute(out)?);
    }
    Ok((command, inputs))
}

fn run(command: &Command, out: &Path) -> CliResult<BTreeMap<String, u64>> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::TrainLm(a) => train_lm(a, out),
        Command::TrainProbes(a) => train_probes_cmd(a, out),
        Command::Analyze(a) => analyze(a, out).map(|_| BTreeMap::new()),
        Command::Generate(a) => generate(a, out).map(|_| BTreeMap::new()),
        Command::Eval(a) => eval(a, out).map(|_| BTreeMap::new()),
        Command::ServeStubScorer(_) | Command::Replay(_) => unreachable!("not a recorded command"),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn synth(a: &SynthArgs, out: &Path) -> CliResult<BTreeMap<String, u64>> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => SyntheticSpec::desk_scale(a.seed),
    };
    spec.seed = a.seed;
    if let Some(n) = a.samples {
        spec.samples_per_category = SyntheticSpec::jigsaw_shares(n);
    }
    if let Some(n) = a.non_toxic {
        spec.non_toxic_samples = n;
    }
    if let Some(n) = a.prompts_per_category {
        spec.prompts_per_category = n;
    }
    let bundle = gen_synthetic(&spec)?;
    bundle.write(out)?;
    let mut counts: BTreeMap<ClassLabel, usize> = BTreeMap::new();
    for s in &bundle.labeled {
        *counts.entry(s.label).or_default() += 1;
    }
    println!(
        "synth: {} corpus lines, {} labelled, {} prompts, vocab {}",
        bundle.corpus.len(),
        bundle.labeled.len(),
        bundle.prompts.len(),
        bundle.vocab.len()
    );
    for (c, n) in counts {
        println!("  {c:<14} {n}");
    }
    Ok(BTreeMap::from([("synth".to_string(), a.seed)]))
}

fn train_lm(a: &TrainLmArgs, out: &Path) -> CliResult<BTreeMap<String, u64>> {
    let bundle = SyntheticBundle::read(&a.data)?;
    let config = ModelConfig {
        n_layers: a.layers,
        d_model: a.d_model,
        n_heads: a.heads,
        d_ff: a.d_ff,
        vocab_size: bundle.vocab.len(),
        max_seq_len: a.max_seq_len,
        tied_embeddings: true,
    };
    let params = LmTrainParams {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        weight_decay: a.weight_decay,
        heldout_fraction: a.heldout_fraction,
        seed: a.seed,
    };
    let (model, report) = fit_tiny_lm(&bundle.corpus, config, &params)?;
    save_model(&model, out.join(MODEL_FILE))?;
    bundle.vocab.save(out.join(VOCAB_FILE))?;
    write_json(&out.join("lm_report.json"), &report)?;
    println!(
        "train-lm: heldout loss {:.4} -> {:.4} over {} epochs",
        report.initial_heldout_loss,
        report.final_heldout_loss,
        report.epoch_losses.len()
    );
    Ok(BTreeMap::from([("lm".to_string(), a.seed)]))
}

fn load_lm(dir: &Path) -> CliResult<(Model, Vocab)> {
    Ok((
        load_model(dir.join(MODEL_FILE))?,
        Vocab::load(dir.join(VOCAB_FILE))?,
    ))
}

fn train_probes_cmd(a: &TrainProbesArgs, out: &Path) -> CliResult<BTreeMap<String, u64>> {
    let bundle = SyntheticBundle::read(&a.data)?;
    let (model, _) = load_lm(&a.model)?;
    let records = feature_records(&bundle.labeled, &model)?;
    let (train, val) = split(&records, TRAIN_RATIO, a.seed, |r: &FeatureRecord| {
        r.class_label
    })?;
    let params = a.params();
    let multi = train_probes(&train, &val, &params)?;
    multi.probes.save(out.join("probes.json"))?;
    let single = train_single_probe(&binary_pairs(&train), &binary_pairs(&val), &params)?;
    single
        .to_probe_set(&params)?
        .save(out.join("single_probe.json"))?;
    let baseline = if a.baseline {
        let p0 = dapi_core::probe::ProbeTrainParams {
            lambda: 0.0,
            ..params
        };
        let t = train_probes(&train, &val, &p0)?;
        t.probes.save(out.join("probes_lambda0.json"))?;
        Some(json!({
            "val_accuracy": t.val_accuracy,
            "mean_abs_similarity": mean_abs_similarity(&t.probes),
        }))
    } else {
        None
    };
    write_json(
        &out.join("training.json"),
        &json!({
            "params": params,
            "train_records": train.len(),
            "val_records": val.len(),
            "train_accuracy": multi.train_accuracy,
            "val_accuracy": multi.val_accuracy,
            "mean_abs_similarity": mean_abs_similarity(&multi.probes),
            "history": multi.history,
            "single_val_accuracy": single.val_accuracy,
            "baseline": baseline,
        }),
    )?;
    println!(
        "train-probes: val accuracy {:.4}, mean |cos| {:.4}, single-probe val accuracy {:.4}",
        multi.val_accuracy,
        mean_abs_similarity(&multi.probes),
        single.val_accuracy
    );
    Ok(BTreeMap::from([("probes".to_string(), a.seed)]))
}

fn similarity_matrix_text(probes: &ProbeSet) -> String {
    let s = pairwise_similarity(probes);
    let cats = probes.categories();
    let width = cats.iter().map(|c| c.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{:<width$}", "");
    for c in cats {
        out.push_str(&format!("  {c:>width$}"));
    }
    out.push('\n');
    for (i, c) in cats.iter().enumerate() {
        out.push_str(&format!("{c:<width$}"));
        for j in 0..cats.len() {
            out.push_str(&format!("  {:>width$.3}", s[[i, j]]));
        }
        out.push('\n');
    }
    out.push_str(&format!("mean |cos| {:.4}\n", mean_abs_similarity(probes)));
    out
}

fn analyze(a: &AnalyzeArgs, out: &Path) -> CliResult<()> {
    let (model, vocab) = load_lm(&a.model)?;
    let probes = ProbeSet::load(&a.probes)?;
    let compare = a.compare.as_ref().map(ProbeSet::load).transpose()?;
    let lexicons = a
        .data
        .as_ref()
        .map(|d| SyntheticBundle::read(d).map(|b| b.lexicons))
        .transpose()?;

    let similarity = match &compare {
        Some(base) => similarity_report(base, &probes)?,
        None => similarity_matrix_text(&probes),
    };
    fs::write(out.join("similarity.txt"), &similarity)?;

    let mut rows = Vec::new();
    let mut top_json = BTreeMap::new();
    let mut overlap = BTreeMap::new();
    for (i, cat) in probes.categories().iter().enumerate() {
        let top = vocab_top_tokens(probes.vector(i), &model, a.top_k)?;
        rows.push((
            cat.clone(),
            top.iter().map(|&(id, _)| vocab.decode(&[id])).collect(),
        ));
        top_json.insert(
            cat.clone(),
            top.iter()
                .map(|&(id, c)| json!({"token": vocab.decode(&[id]), "id": id, "cos": c}))
                .collect::<Vec<_>>(),
        );
        if let (Some(lex), Ok(label)) = (&lexicons, cat.parse::<ClassLabel>()) {
            let own = lex.get(&label).map(Vec::as_slice).unwrap_or(&[]);
            let n_own = top.iter().filter(|(id, _)| own.contains(id)).count();
            let n_cross = top
                .iter()
                .filter(|(id, _)| lex.iter().any(|(c, ids)| *c != label && ids.contains(id)))
                .count();
            overlap.insert(cat.clone(), json!({"own": n_own, "cross": n_cross}));
        }
    }
    let tokens = top_tokens_report(&rows);
    fs::write(out.join("top_tokens.txt"), &tokens)?;
    let pairwise = pairwise_similarity(&probes);
    write_json(
        &out.join("analysis.json"),
        &json!({
            "categories": probes.categories(),
            "pairwise": pairwise.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
            "mean_abs_similarity": mean_abs_similarity(&probes),
            "compare_mean_abs_similarity": compare.as_ref().map(mean_abs_similarity),
            "top_tokens": top_json,
            "lexicon_overlap": lexicons.as_ref().map(|_| overlap),
        }),
    )?;
    print!("{similarity}\n{tokens}");
    Ok(())
}

fn load_prompt_records(
    prompts: Option<&PathBuf>,
    data: Option<&PathBuf>,
) -> CliResult<Vec<PromptRecord>> {
    match (prompts, data) {
        (Some(p), _) => Ok(dapi_core::data::load_prompts(p)?),
        (None, Some(d)) => Ok(dapi_core::data::load_prompts(d.join("prompts.jsonl"))?),
        (None, None) => Ok(Vec::new()),
    }
}

fn generate(a: &GenerateArgs, out: &Path) -> CliResult<()> {
    let (model, vocab) = load_lm(&a.model)?;
    let probes = a.probes.as_ref().map(ProbeSet::load).transpose()?;
    let config = a.steer.config();
    let mut prompts: Vec<(String, Option<ClassLabel>)> =
        a.prompt.iter().map(|t| (t.clone(), None)).collect();
    prompts.extend(
        load_prompt_records(a.prompts.as_ref(), a.data.as_ref())?
            .into_iter()
            .map(|r| (r.text, r.category)),
    );
    let traces = out.join("traces");
    fs::create_dir_all(&traces)?;
    let mut gens = BufWriter::new(fs::File::create(out.join("generations.jsonl"))?);
    for (i, (text, category)) in prompts.iter().enumerate() {
        let ids = vocab.encode(text)?;
        let result = match &probes {
            Some(p) => generate_steered(&ids, &model, p, &config)?,
            None => generate_unsteered(&ids, &model, config.max_new_tokens)?,
        };
        let categories = probes
            .as_ref()
            .map(|p| p.categories().to_vec())
            .unwrap_or_default();
        let trace = fs::File::create(traces.join(format!("prompt_{i:04}.jsonl")))?;
        let summary = write_trace(BufWriter::new(trace), &result.decisions, &categories)?;
        let output_text = vocab.decode(&result.output_ids);
        serde_json::to_writer(
            &mut gens,
            &json!({
                "index": i,
                "prompt": text,
                "category": category,
                "output_ids": result.output_ids,
                "output_text": output_text,
                "forward_pass_count": result.forward_pass_count,
                "mean_alpha": summary.mean_alpha,
                "selected_fraction": summary.selected_fraction,
            }),
        )?;
        gens.write_all(b"\n")?;
        println!("{text} => {output_text}");
    }
    gens.flush()?;
    Ok(())
}

fn read_lexicon_words(data: &Path) -> CliResult<BTreeMap<ClassLabel, Vec<String>>> {
    Ok(serde_json::from_str(&fs::read_to_string(
        data.join("lexicons.json"),
    )?)?)
}

fn eval(a: &EvalArgs, out: &Path) -> CliResult<()> {
    let (model, vocab) = load_lm(&a.model)?;
    let prompts = load_prompt_records(a.prompts.as_ref(), a.data.as_ref())?;
    let bundle = a.data.as_ref().map(SyntheticBundle::read).transpose()?;
    let scorer: Box<dyn Scorer> = if a.stub_scorer {
        let data = a.data.as_ref().expect("checked during resolution");
        Box::new(StubScorer::new(&read_lexicon_words(data)?))
    } else {
        let url = a.scorer_url.as_ref().expect("checked during resolution");
        Box::new(HttpScorer::new(url, HttpScorerConfig::default()))
    };
    let corpus: Option<Vec<u32>> = bundle.as_ref().filter(|_| a.ppl_tokens > 0).map(|b| {
        b.corpus
            .iter()
            .flatten()
            .copied()
            .take(a.ppl_tokens)
            .collect()
    });
    let extras = EvalExtras {
        ppl_corpus: corpus.as_deref(),
        lexicons: bundle.as_ref().map(|b| &b.lexicons),
    };
    let base = EvalConfig {
        label: "unsteered".into(),
        steering: a.steer.config(),
        workers: a.workers,
        ppl_window: a.ppl_window,
        ppl_stride: a.ppl_stride,
    };
    let mut reports = vec![run_eval(
        &model,
        None,
        &prompts,
        &vocab,
        &base,
        scorer.as_ref(),
        extras,
    )?];
    if let Some(path) = &a.single {
        let single = ProbeSet::load(path)?;
        let mut cfg = EvalConfig {
            label: "single".into(),
            ..base.clone()
        };
        cfg.steering.selection_mode = SelectionMode::Single;
        cfg.steering.scaling_mode = a.single_scaling.into();
        reports.push(run_eval(
            &model,
            Some(&single),
            &prompts,
            &vocab,
            &cfg,
            scorer.as_ref(),
            extras,
        )?);
    }
    if let Some(path) = &a.probes {
        let probes = ProbeSet::load(path)?;
        let cfg = EvalConfig {
            label: "multiple".into(),
            ..base.clone()
        };
        reports.push(run_eval(
            &model,
            Some(&probes),
            &prompts,
            &vocab,
            &cfg,
            scorer.as_ref(),
            extras,
        )?);
    }
    write_json(&out.join("report.json"), &reports)?;
    let table = format!("{}\n{}", summary_table(&reports), category_table(&reports));
    fs::write(out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn serve(a: &ServeArgs) -> CliResult<()> {
    let data = std::path::absolute(&a.data)?;
    if !data.join("lexicons.json").exists() {
        return Err(CliError::usage(format!(
            "no lexicons.json under {}",
            data.display()
        )));
    }
    let scorer = StubScorer::new(&read_lexicon_words(&data)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr).await?;
        println!("stub scorer listening on http://{}", listener.local_addr()?);
        dapi_core::eval::serve(listener, scorer).await?;
        Ok(())
    })
}

fn replay(a: &ReplayArgs, argv: Vec<String>) -> CliResult<()> {
    let original = Manifest::read(&a.manifest)?;
    let target = match &a.out {
        Some(p) => std::path::absolute(p)?,
        None => {
            let mut name = original
                .out_dir
                .file_name()
                .unwrap_or_default()
                .to_os_string();
            name.push("-replay");
            original.out_dir.with_file_name(name)
        }
    };
    if target.exists() && fs::read_dir(&target)?.next().is_some() {
        return Err(CliError::usage(format!(
            "replay directory {} is not empty",
            target.display()
        )));
    }
    let mut command = original.config.clone();
    set_out_dir(&mut command, target.clone());
    run_recorded(command, argv)?;
    let bad = compare_outputs(&original.out_dir, &original.outputs, &target)?;
    println!(
        "{}",
        json!({
            "identical": bad.is_empty(),
            "files": original.outputs.len(),
            "mismatched": bad,
            "replay_dir": target,
        })
    );
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::ReplayMismatch(bad))
    }
}
