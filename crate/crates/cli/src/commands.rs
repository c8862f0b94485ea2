//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use streamkp::augmentation::{filter_document, train_discriminator, SilverRecord};
use streamkp::checkpoint::{load_discriminator, load_model, save_discriminator, save_model};
use streamkp::chitchat::ChitchatRecord;
use streamkp::corpus::{
    load_general_corpus, load_transcripts, write_general_corpus, write_transcripts, CorpusSample, Paragraph, Transcript,
};
use streamkp::evaluator::evaluate;
use streamkp::model::{KeyphraseModel, ModelPredictor};
use streamkp::reinforcement::fit;
use streamkp::synth::generate;

use crate::config::{require, RunConfig};
use crate::Task;

pub fn run(task: Task, c: &RunConfig) -> Result<()> {
    match task {
        Task::Train => train(c),
        Task::Extract => extract(c),
        Task::Eval => eval(c),
        Task::SilverAnnotate => silver_annotate(c),
        Task::ChitchatScan => chitchat_scan(c),
        Task::TrainDiscriminator => train_disc(c),
        Task::Synth => synth(c),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush().with_context(|| format!("writing {}", path.display()))
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
pub(crate) fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    match serde_json::to_writer_pretty(&mut out, value)
        .map_err(io::Error::from)
        .and_then(|()| out.write_all(b"\n"))
        .and_then(|()| out.flush())
    {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r.context("writing to stdout"),
    }
}

fn load_nonempty_transcripts(c: &RunConfig) -> Result<Vec<Transcript>> {
    let path = require(&c.transcripts, "transcripts")?;
    let transcripts = load_transcripts(path)?;
    if transcripts.iter().all(|t| t.paragraphs.is_empty()) {
        bail!("{} contains no paragraphs", path.display());
    }
    Ok(transcripts)
}

fn load_checkpoint(c: &RunConfig) -> Result<KeyphraseModel> {
    let path = require(&c.checkpoint, "checkpoint")?;
    load_model(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: &'a Path,
    log: &'a Path,
    steps: usize,
    parameters: usize,
    discriminator_heldout_accuracy: Option<f64>,
}

fn train(c: &RunConfig) -> Result<()> {
    let transcripts = load_nonempty_transcripts(c)?;
    let general = match &c.general {
        Some(p) => load_general_corpus(p)?,
        None => Vec::new(),
    };
    let checkpoint = require(&c.checkpoint, "checkpoint")?;
    let log_path = c
        .log
        .clone()
        .unwrap_or_else(|| checkpoint.with_extension("metrics.jsonl"));
    let mut log = create(&log_path)?;
    let mut steps = 0;
    let fitted = fit(
        &transcripts,
        &general,
        c.encoder(),
        &c.discriminator(),
        &c.train(),
        |m| {
            steps += 1;
            serde_json::to_writer(&mut log, m)?;
            log.write_all(b"\n").map_err(|e| streamkp::Error::io(&log_path, e))
        },
    )?;
    log.flush().with_context(|| format!("writing {}", log_path.display()))?;
    save_model(checkpoint, &fitted.model)?;
    if let Some(path) = &c.discriminator {
        match &fitted.discriminator {
            Some((d, _)) => save_discriminator(path, d)?,
            None => bail!("no discriminator was trained; it needs --general and a positive --lambda-bridge"),
        }
    }
    use streamkp::nn::Parameters;
    print_json(&TrainSummary {
        checkpoint,
        log: &log_path,
        steps,
        parameters: fitted.model.num_parameters(),
        discriminator_heldout_accuracy: fitted.discriminator.as_ref().map(|(_, r)| r.heldout_accuracy),
    })
}

#[derive(Serialize)]
struct ExtractedKeyphrase {
    start: usize,
    end: usize,
    text: String,
    score: f64,
}

#[derive(Serialize)]
struct ExtractionRecord {
    paragraph_id: String,
    keyphrases: Vec<ExtractedKeyphrase>,
}

/// Runs `f` over every paragraph in order, conditioning each on the previous
/// paragraph's predicted keyphrases.
fn chained<T>(
    model: &KeyphraseModel,
    transcripts: &[Transcript],
    beta: f64,
    mut f: impl FnMut(&Paragraph, &streamkp::evaluator::Prediction) -> T,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for t in transcripts {
        let mut prev: Vec<String> = Vec::new();
        for p in &t.paragraphs {
            let prediction = model.predict(p, &prev, beta)?;
            out.push(f(p, &prediction));
            prev = prediction.keyphrases.texts(p);
        }
    }
    Ok(out)
}

fn extract(c: &RunConfig) -> Result<()> {
    let model = load_checkpoint(c)?;
    let transcripts = load_nonempty_transcripts(c)?;
    let output = require(&c.output, "output")?;
    let records = chained(&model, &transcripts, c.beta, |p, pred| ExtractionRecord {
        paragraph_id: p.id.clone(),
        keyphrases: pred
            .keyphrases
            .items
            .iter()
            .map(|s| ExtractedKeyphrase {
                start: s.span.start,
                end: s.span.end,
                text: p.span_text(s.span),
                score: s.score,
            })
            .collect(),
    })?;
    write_jsonl(output, &records)?;
    eprintln!("wrote {} records to {}", records.len(), output.display());
    Ok(())
}

fn eval(c: &RunConfig) -> Result<()> {
    let model = load_checkpoint(c)?;
    let transcripts = load_nonempty_transcripts(c)?;
    let predictor = ModelPredictor {
        model: &model,
        beta: c.beta,
    };
    let report = evaluate(&predictor, &transcripts, &c.k)?;
    if let Some(path) = &c.output {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, &report)?;
        out.flush()?;
    }
    print_json(&report)
}

/// Reads either corpus format.
fn load_any_corpus(path: &Path) -> Result<Vec<Paragraph>> {
    match load_transcripts(path) {
        Ok(t) => Ok(t.into_iter().flat_map(|t| t.paragraphs).collect()),
        Err(as_transcripts) => match load_general_corpus(path) {
            Ok(g) => Ok(g.into_iter().map(|s| s.paragraph).collect()),
            Err(as_general) => bail!(
                "{} is neither a transcript corpus ({as_transcripts}) nor a general corpus ({as_general})",
                path.display()
            ),
        },
    }
}

fn silver_annotate(c: &RunConfig) -> Result<()> {
    if !(c.eta >= 0.0) {
        bail!("eta must be non-negative, got {}", c.eta);
    }
    let disc_path = require(&c.discriminator, "discriminator")?;
    let disc = load_discriminator(disc_path).with_context(|| format!("loading discriminator {}", disc_path.display()))?;
    let corpus_path = require(&c.corpus, "corpus")?;
    let paragraphs = load_any_corpus(corpus_path)?;
    if paragraphs.is_empty() {
        bail!("{} contains no paragraphs", corpus_path.display());
    }
    let output = require(&c.output, "output")?;
    let records = paragraphs
        .iter()
        .map(|p| Ok(SilverRecord::new(&p.id, &filter_document(p, &disc, c.eta)?, c.eta)))
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(output, &records)?;
    let unconverged = records.iter().filter(|r| !r.converged).count();
    eprintln!(
        "wrote {} records to {} ({unconverged} fell back to all words)",
        records.len(),
        output.display()
    );
    Ok(())
}

fn chitchat_scan(c: &RunConfig) -> Result<()> {
    let model = load_checkpoint(c)?;
    let transcripts = load_nonempty_transcripts(c)?;
    let output = require(&c.output, "output")?;
    let records = chained(&model, &transcripts, c.beta, |p, pred| {
        let flags = pred.chitchat.as_ref().expect("model predictions carry flags");
        ChitchatRecord::new(&p.id, flags)
    })?;
    write_jsonl(output, &records)?;
    let flagged: usize = records.iter().map(|r| r.flags.iter().filter(|&&f| f == 1).count()).sum();
    eprintln!("flagged {flagged} sentences across {} paragraphs", records.len());
    Ok(())
}

fn train_disc(c: &RunConfig) -> Result<()> {
    let transcripts = load_nonempty_transcripts(c)?;
    let general_path = require(&c.general, "general")?;
    let mut samples = CorpusSample::from_transcripts(&transcripts);
    samples.extend(load_general_corpus(general_path)?);
    let output = require(&c.output, "output")?;
    let (disc, report) = train_discriminator(&samples, &c.discriminator())?;
    save_discriminator(output, &disc)?;
    print_json(&report)
}

fn synth(c: &RunConfig) -> Result<()> {
    let dir = require(&c.output, "output")?;
    let corpus = generate(&c.synth())?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_transcripts(dir.join("transcripts.jsonl"), &corpus.transcripts)?;
    write_general_corpus(dir.join("general.jsonl"), &corpus.general)?;
    eprintln!(
        "wrote {} transcripts and {} general documents to {}",
        corpus.transcripts.len(),
        corpus.general.len(),
        dir.display()
    );
    Ok(())
}
