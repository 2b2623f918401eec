use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use lure_core::chair::{chair_scores, label_mentions, ChairError, LabeledDescription};
use lure_core::corpus::{
    extract_mentions, load_annotations, load_caption_corpus, CorpusError, ImageAnnotation, ObjectVocabulary,
    TokenizedDescription,
};
use lure_core::factors::{build_cooccur_index, FactorError, FactorReport, PairedHistogram};
use lure_core::masker::{mask_description, unmask, MaskError, PositionLengthSource};
use lure_core::revisor::{
    build_training_records, revise_corpus, BackendConfig, BackendMode, HttpBackend, MockBackend, RevisorBackend,
    RevisorError,
};
use lure_core::theory::{self, ExperimentKind, SigmoidSign, TheoryError};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    required_path, resolve_backend, resolve_common, resolve_policy, resolve_theory, BackendFlags, Common, FileConfig,
    MaskFlags, DEFAULT_BINS,
};
use crate::output::{fmt_g6, fmt_opt, sha256_hex, Staging};
use crate::{Cli, Command, Failure};

#[derive(Debug, clap::Args)]
pub struct IngestArgs {
    /// Caption corpus (JSON lines).
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Ground-truth object annotations (JSON lines); optional here.
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ChairArgs {
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct FactorsArgs {
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Histogram bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Position threshold used by the late-position ratio.
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct MaskArgs {
    #[arg(long)]
    captions: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskFlags,
}

#[derive(Debug, clap::Args)]
pub struct ReviseArgs {
    #[arg(long)]
    captions: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskFlags,
    #[command(flatten)]
    backend: BackendFlags,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum LengthSourceArg {
    Caption,
    Generated,
}

#[derive(Debug, clap::Args)]
pub struct BuildDatasetArgs {
    /// Ground-truth captions (JSON lines), the revisor's targets.
    #[arg(long)]
    gt_captions: Option<PathBuf>,
    /// The model's generated descriptions with token logprobs (JSON lines).
    #[arg(long)]
    captions: Option<PathBuf>,
    /// Which length the position rule compares against.
    #[arg(long, value_enum)]
    position_length_source: Option<LengthSourceArg>,
    #[command(flatten)]
    mask: MaskFlags,
    #[command(flatten)]
    backend: BackendFlags,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ExperimentArg {
    Single,
    Cooccurrence,
    Uncertainty,
    All,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SignArg {
    AsProof,
    Standard,
}

#[derive(Debug, clap::Args)]
pub struct TheoryArgs {
    #[arg(long, value_enum)]
    experiment: Option<ExperimentArg>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    sigmoid_sign: Option<SignArg>,
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn corpus_err(e: CorpusError) -> Failure {
    Failure::Input(e.into())
}

fn revisor_err(e: RevisorError) -> Failure {
    match e {
        RevisorError::EmptyInput | RevisorError::Mask(MaskError::InvalidPolicy(_)) => Failure::Input(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

fn theory_err(e: TheoryError) -> Failure {
    match e {
        TheoryError::InvalidConfig(_) | TheoryError::NoClassSelected { .. } => Failure::Input(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let common = resolve_common(&file, cli.seed, cli.workers, cli.out, cli.vocab)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers)
        .build()
        .map_err(|e| Failure::Runtime(e.into()))?;
    pool.install(|| match cli.command {
        Command::IngestCheck(a) => ingest_check(&file, &common, a),
        Command::Chair(a) => chair(&file, &common, a),
        Command::Factors(a) => factors(&file, &common, a),
        Command::Mask(a) => mask(&file, &common, a),
        Command::Revise(a) => revise(&file, &common, a),
        Command::BuildDataset(a) => build_dataset(&file, &common, a),
        Command::Theory(a) => theory_cmd(&file, &common, a),
    })
}

fn load_vocab(common: &Common, staging: &mut Staging) -> Result<ObjectVocabulary, Failure> {
    match &common.vocab {
        Some(p) => {
            let v = ObjectVocabulary::load(p).map_err(corpus_err)?;
            staging.input(p)?;
            Ok(v)
        }
        None => Ok(ObjectVocabulary::coco80()),
    }
}

fn vocab_label(common: &Common) -> String {
    match &common.vocab {
        Some(p) => p.display().to_string(),
        None => format!(
            "builtin:coco80 (sha256 {})",
            sha256_hex(ObjectVocabulary::coco80_source().as_bytes())
        ),
    }
}

fn load_captions(path: &Path, staging: &mut Staging) -> Result<Vec<TokenizedDescription>, Failure> {
    let corpus = load_caption_corpus(path).map_err(corpus_err)?;
    if corpus.is_empty() {
        return Err(input(anyhow!("caption corpus {} is empty", path.display())));
    }
    staging.input(path)?;
    Ok(corpus)
}

fn load_ann(path: &Path, vocab: &ObjectVocabulary, staging: &mut Staging) -> Result<Vec<ImageAnnotation>, Failure> {
    let ann = load_annotations(path, vocab).map_err(corpus_err)?;
    staging.input(path)?;
    Ok(ann)
}

fn label_corpus(
    corpus: Vec<TokenizedDescription>,
    annotations: &[ImageAnnotation],
    vocab: &ObjectVocabulary,
) -> Result<Vec<LabeledDescription>, Failure> {
    let by_id: HashMap<&str, &ImageAnnotation> = annotations.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let missing: Vec<&str> = corpus
        .iter()
        .filter(|d| !by_id.contains_key(d.image_id.as_str()))
        .map(|d| d.image_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(input(anyhow!(
            "no annotation for {} caption(s): {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    corpus
        .into_iter()
        .map(|d| {
            let m = extract_mentions(&d, vocab);
            let a = by_id[d.image_id.as_str()];
            label_mentions(d, m, a).map_err(|e: ChairError| input(e))
        })
        .collect()
}

#[derive(Serialize)]
struct IngestReport {
    captions: usize,
    tokens: usize,
    captions_with_logprobs: usize,
    mentions: usize,
    distinct_objects: Vec<String>,
    annotations: Option<usize>,
    captions_without_annotation: Vec<String>,
}

fn ingest_check(file: &FileConfig, common: &Common, a: IngestArgs) -> Result<(), Failure> {
    let captions = required_path(a.captions, &file.inputs.captions, "captions")?;
    let annotations = a.annotations.or_else(|| file.inputs.annotations.clone());
    let mut st = Staging::new(&common.out)?;
    let vocab = load_vocab(common, &mut st)?;
    let corpus = load_captions(&captions, &mut st)?;
    let mut objects = BTreeSet::new();
    let mut mentions = 0;
    for d in &corpus {
        for m in extract_mentions(d, &vocab) {
            mentions += 1;
            objects.insert(m.canonical);
        }
    }
    let (n_ann, without) = match &annotations {
        Some(p) => {
            let ann = load_ann(p, &vocab, &mut st)?;
            let ids: BTreeSet<&str> = ann.iter().map(|a| a.image_id.as_str()).collect();
            let without = corpus
                .iter()
                .filter(|d| !ids.contains(d.image_id.as_str()))
                .map(|d| d.image_id.clone())
                .collect();
            (Some(ann.len()), without)
        }
        None => (None, Vec::new()),
    };
    let report = IngestReport {
        captions: corpus.len(),
        tokens: corpus.iter().map(|d| d.len()).sum(),
        captions_with_logprobs: corpus.iter().filter(|d| d.has_logprobs()).count(),
        mentions,
        distinct_objects: objects.into_iter().collect(),
        annotations: n_ann,
        captions_without_annotation: without,
    };
    st.write_json("ingest_report.json", &report)?;
    let cfg = json!({
        "vocab": vocab_label(common),
        "captions": captions,
        "annotations": annotations,
    });
    st.commit("ingest-check", cfg, common.workers, &[])?;
    Ok(())
}

fn chair(file: &FileConfig, common: &Common, a: ChairArgs) -> Result<(), Failure> {
    let captions = required_path(a.captions, &file.inputs.captions, "captions")?;
    let annotations = required_path(a.annotations, &file.inputs.annotations, "annotations")?;
    let mut st = Staging::new(&common.out)?;
    let vocab = load_vocab(common, &mut st)?;
    let corpus = load_captions(&captions, &mut st)?;
    let ann = load_ann(&annotations, &vocab, &mut st)?;
    let labeled = label_corpus(corpus, &ann, &vocab)?;
    let report = chair_scores(&labeled).map_err(input)?;
    st.write_json("chair_report.json", &report)?;
    let csv = format!(
        "chair_i,chair_s,total_mentioned_objects,total_hallucinated_objects,total_captions,captions_with_hallucination\n{},{},{},{},{},{}\n",
        fmt_g6(report.chair_i),
        fmt_g6(report.chair_s),
        report.total_mentioned_objects,
        report.total_hallucinated_objects,
        report.total_captions,
        report.captions_with_hallucination
    );
    st.write("chair_report.csv", csv.as_bytes())?;
    let cfg = json!({
        "vocab": vocab_label(common),
        "captions": captions,
        "annotations": annotations,
    });
    st.commit("chair", cfg, common.workers, &[])?;
    Ok(())
}

fn histogram_rows(csv: &mut String, factor: &str, h: &PairedHistogram) {
    for i in 0..h.bins() {
        csv.push_str(&format!(
            "{factor},{},{},{},{},{}\n",
            i + 1,
            fmt_g6(h.edges[i]),
            fmt_g6(h.edges[i + 1]),
            h.hallucinated[i],
            h.real[i]
        ));
    }
}

#[derive(Serialize)]
struct MentionRow<'a> {
    image_id: &'a str,
    canonical: &'a str,
    token_index: usize,
    label: lure_core::chair::ObjectLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    po_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    un_score: Option<f64>,
}

fn factors(file: &FileConfig, common: &Common, a: FactorsArgs) -> Result<(), Failure> {
    const UN_FILE: &str = "un_scores.jsonl";
    let captions = required_path(a.captions, &file.inputs.captions, "captions")?;
    let annotations = required_path(a.annotations, &file.inputs.annotations, "annotations")?;
    let bins = a.bins.or(file.factors.bins).unwrap_or(DEFAULT_BINS);
    if bins == 0 {
        return Err(input(anyhow!("bins must be at least 1")));
    }
    let eta = a.eta.or(file.mask.eta).unwrap_or(lure_core::masker::DEFAULT_ETA);
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(input(anyhow!("eta must be a finite non-negative number")));
    }
    let mut st = Staging::new(&common.out)?;
    let vocab = load_vocab(common, &mut st)?;
    let corpus = load_captions(&captions, &mut st)?;
    let ann = load_ann(&annotations, &vocab, &mut st)?;
    let labeled = label_corpus(corpus, &ann, &vocab)?;
    let to_failure = |e: FactorError| match e {
        FactorError::EmptyCorpus | FactorError::ZeroBins => Failure::Input(e.into()),
        other => Failure::Runtime(other.into()),
    };
    let index = build_cooccur_index(&labeled).map_err(to_failure)?;
    let report = FactorReport::compute(&labeled, &index, bins, eta).map_err(to_failure)?;

    st.write_jsonl("co_scores.jsonl", &report.scores.descriptions)?;
    let po: Vec<MentionRow> = report
        .scores
        .mentions
        .iter()
        .map(|m| MentionRow {
            image_id: &m.image_id,
            canonical: &m.canonical,
            token_index: m.token_index,
            label: m.label,
            po_score: Some(m.po_score),
            un_score: None,
        })
        .collect();
    st.write_jsonl("po_scores.jsonl", &po)?;

    let covered = report.scores.uncertainty_coverage();
    let total = report.scores.mentions.len();
    if covered == 0 {
        st.notice(format!(
            "no token logprobs in {}; uncertainty outputs ({UN_FILE}, un_score histogram, U ratio) omitted",
            captions.display()
        ));
    } else {
        if covered < total {
            st.notice(format!(
                "{} of {total} mentions lack logprobs and are left out of uncertainty outputs",
                total - covered
            ));
        }
        let un: Vec<MentionRow> = report
            .scores
            .mentions
            .iter()
            .filter_map(|m| {
                m.un_score.map(|u| MentionRow {
                    image_id: &m.image_id,
                    canonical: &m.canonical,
                    token_index: m.token_index,
                    label: m.label,
                    po_score: None,
                    un_score: Some(u),
                })
            })
            .collect();
        st.write_jsonl(UN_FILE, &un)?;
    }

    let mut csv = String::from("factor,bin,lower,upper,hallucinated,real\n");
    histogram_rows(&mut csv, "co_score", &report.histograms.co_score);
    if let Some(h) = &report.histograms.un_score {
        histogram_rows(&mut csv, "un_score", h);
    }
    histogram_rows(&mut csv, "po_score", &report.histograms.po_score);
    st.write("histograms.csv", csv.as_bytes())?;
    st.write_json("ratios.json", &report.ratios)?;
    let r = &report.ratios;
    let ratios_csv = format!(
        "c_ratio,u_ratio,s_ratio,co_score_mean,un_score_mean,eta\n{},{},{},{},{},{}\n",
        fmt_opt(r.c_ratio),
        fmt_opt(r.u_ratio),
        fmt_opt(r.s_ratio),
        fmt_opt(r.co_score_mean),
        fmt_opt(r.un_score_mean),
        fmt_g6(r.eta)
    );
    st.write("ratios.csv", ratios_csv.as_bytes())?;
    let cfg = json!({
        "vocab": vocab_label(common),
        "captions": captions,
        "annotations": annotations,
        "bins": bins,
        "eta": eta,
    });
    st.commit("factors", cfg, common.workers, &[UN_FILE])?;
    Ok(())
}

#[derive(Serialize)]
struct MaskedRow<'a> {
    image_id: &'a str,
    #[serde(flatten)]
    masked: lure_core::masker::MaskedDescription,
}

fn mask(file: &FileConfig, common: &Common, a: MaskArgs) -> Result<(), Failure> {
    let captions = required_path(a.captions, &file.inputs.captions, "captions")?;
    let policy = resolve_policy(&a.mask, &file.mask, None)?;
    let mut st = Staging::new(&common.out)?;
    let vocab = load_vocab(common, &mut st)?;
    let corpus = load_captions(&captions, &mut st)?;
    let masked: Vec<Result<MaskedRow, Failure>> = corpus
        .par_iter()
        .map(|d| {
            let m = mask_description(d, &extract_mentions(d, &vocab), &policy)
                .map_err(|e| Failure::Runtime(anyhow!("image `{}`: {e}", d.image_id)))?;
            let restored = unmask(&m).map_err(|e| Failure::Runtime(anyhow!("image `{}`: {e}", d.image_id)))?;
            if restored != d.raw_text {
                return Err(Failure::Runtime(anyhow!(
                    "image `{}`: masked text does not restore to the original",
                    d.image_id
                )));
            }
            Ok(MaskedRow {
                image_id: &d.image_id,
                masked: m,
            })
        })
        .collect();
    let rows = masked.into_iter().collect::<Result<Vec<_>, _>>()?;
    st.write_jsonl("masked.jsonl", &rows)?;
    let cfg = json!({
        "vocab": vocab_label(common),
        "captions": captions,
        "policy": policy,
    });
    st.commit("mask", cfg, common.workers, &[])?;
    Ok(())
}

fn make_backend(cfg: &BackendConfig, seed: u64) -> Box<dyn RevisorBackend> {
    match cfg.mode {
        BackendMode::Mock => Box::new(MockBackend::new(seed)),
        BackendMode::Http => Box::new(HttpBackend::new(cfg.clone())),
    }
}

fn revise(file: &FileConfig, common: &Common, a: ReviseArgs) -> Result<(), Failure> {
    let captions = required_path(a.captions, &file.inputs.captions, "captions")?;
    let seed = common.require_seed()?;
    let policy = resolve_policy(&a.mask, &file.mask, None)?;
    let backend_cfg = resolve_backend(&a.backend, &file.backend)?;
    let mut st = Staging::new(&common.out)?;
    let vocab = load_vocab(common, &mut st)?;
    let corpus = load_captions(&captions, &mut st)?;
    let backend = make_backend(&backend_cfg, seed);
    let records =
        revise_corpus(&corpus, &vocab, &policy, backend.as_ref(), backend_cfg.max_in_flight).map_err(revisor_err)?;
    st.write_jsonl("revised.jsonl", &records)?;
    let cfg = json!({
        "seed": seed,
        "vocab": vocab_label(common),
        "captions": captions,
        "policy": policy,
        "backend": backend_cfg,
    });
    st.commit("revise", cfg, common.workers, &[])?;
    Ok(())
}

fn build_dataset(file: &FileConfig, common: &Common, a: BuildDatasetArgs) -> Result<(), Failure> {
    let gt_path = required_path(a.gt_captions, &file.inputs.gt_captions, "gt_captions")?;
    let gen_path = required_path(a.captions, &file.inputs.captions, "captions")?;
    let seed = common.require_seed()?;
    let pls = a.position_length_source.map(|s| match s {
        LengthSourceArg::Caption => PositionLengthSource::Caption,
        LengthSourceArg::Generated => PositionLengthSource::Generated,
    });
    let policy = resolve_policy(&a.mask, &file.mask, pls)?;
    let backend_cfg = resolve_backend(&a.backend, &file.backend)?;
    let mut st = Staging::new(&common.out)?;
    let vocab = load_vocab(common, &mut st)?;
    let gt = load_captions(&gt_path, &mut st)?;
    let generated = load_captions(&gen_path, &mut st)?;
    let backend = make_backend(&backend_cfg, seed);
    let build = build_training_records(
        &gt,
        &generated,
        &vocab,
        &policy,
        backend.as_ref(),
        backend_cfg.max_in_flight,
    )
    .map_err(revisor_err)?;
    for r in &build.records {
        let restored = unmask(&r.masked()).map_err(|e| Failure::Runtime(anyhow!("image `{}`: {e}", r.image_id)))?;
        if restored != r.hallucinatory_caption {
            return Err(Failure::Runtime(anyhow!(
                "image `{}`: masked caption does not restore to the hallucinatory caption",
                r.image_id
            )));
        }
    }
    if !build.skipped.is_empty() {
        st.notice(format!("{} of {} images skipped", build.skipped.len(), gt.len()));
    }
    st.write_jsonl("training.jsonl", &build.records)?;
    st.write_jsonl("skipped.jsonl", &build.skipped)?;
    let cfg = json!({
        "seed": seed,
        "vocab": vocab_label(common),
        "gt_captions": gt_path,
        "captions": gen_path,
        "policy": policy,
        "backend": backend_cfg,
    });
    st.commit("build-dataset", cfg, common.workers, &[])?;
    Ok(())
}

fn theory_cmd(file: &FileConfig, common: &Common, a: TheoryArgs) -> Result<(), Failure> {
    let mut cfg = resolve_theory(file, common.seed)?;
    if let Some(e) = a.experiment {
        cfg.experiment = match e {
            ExperimentArg::Single => ExperimentKind::Single,
            ExperimentArg::Cooccurrence => ExperimentKind::Cooccurrence,
            ExperimentArg::Uncertainty => ExperimentKind::Uncertainty,
            ExperimentArg::All => ExperimentKind::All,
        };
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = a.sigmoid_sign {
        cfg.sigmoid_sign = match s {
            SignArg::AsProof => SigmoidSign::AsProof,
            SignArg::Standard => SigmoidSign::Standard,
        };
    }
    cfg.validate().map_err(theory_err)?;
    let mut st = Staging::new(&common.out)?;
    if let Some(p) = &common.vocab {
        log::info!("theory ignores the vocabulary {}", p.display());
    }
    let result = theory::run(&cfg).map_err(theory_err)?;
    if !result.regime.within_regime {
        st.notice(format!("outside stated regime: {}", result.regime.flags.join("; ")));
    }
    st.write_json("theory_result.json", &result)?;
    st.write("theory_table.txt", result.render_table().as_bytes())?;
    st.commit("theory", json!({ "theory": cfg }), common.workers, &[])?;
    Ok(())
}
