//! Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lure_core::chair::{chair_scores, label_mentions, ChairReport, LabeledDescription};
use lure_core::corpus::{
    extract_mentions, load_annotations, load_caption_corpus, ImageAnnotation, ObjectVocabulary, TokenizedDescription,
};
use lure_core::factors::{build_cooccur_index, co_score, ratio_stats, CorpusScores};
use lure_core::masker::{mask_description, select_mask_targets, unmask, MaskPolicy, MaskReason, MaskedDescription};
use lure_core::revisor::TrainingRecord;
use lure_core::theory::{self, estimate_phat, ExperimentKind, SigmoidSign, TheoryConfig, Verdict};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// Oracle values (mpmath, 30 digits).
const PHI_SINGLE: f64 = 0.0019462085613893146;
const TH1_RHO08: f64 = 0.004911637253759624;
const TH1_RHO02: f64 = 0.03394457743091451;
const TH2_EQUAL: f64 = 0.14092609038164173;
const TH2_FILTERED: f64 = 0.12817355109777;

// ---------------------------------------------------------------- generators

const FILLER: &[&str] = &[
    "a", "the", "near", "with", "and", "on", "in", "of", "some", "beside", "under", "is", "two", "small", "large",
    "old", "red", "blue", "behind", "there",
];

struct Vocab {
    vocab: ObjectVocabulary,
    canonicals: Vec<String>,
    surfaces: BTreeMap<String, Vec<String>>,
}

fn vocab() -> Vocab {
    let vocab = ObjectVocabulary::coco80();
    let canonicals: Vec<String> = vocab.canonicals().map(str::to_string).collect();
    let surfaces: BTreeMap<String, Vec<String>> = canonicals
        .iter()
        .map(|c| {
            let mut s: Vec<String> = vocab.surfaces(c).expect("known canonical").iter().cloned().collect();
            if !s.contains(c) {
                s.push(c.clone());
            }
            (c.clone(), s)
        })
        .collect();
    let surface_words: BTreeSet<&str> = surfaces.values().flatten().flat_map(|s| s.split_whitespace()).collect();
    for f in FILLER {
        assert!(!surface_words.contains(f), "filler `{f}` is part of an object surface");
    }
    Vocab {
        vocab,
        canonicals,
        surfaces,
    }
}

/// A caption with the canonicals planted in it, in order.
struct Planted {
    id: String,
    text: String,
    planted: Vec<String>,
    gt: BTreeSet<String>,
}

fn planted_caption(v: &Vocab, id: usize, rate: f64, rng: &mut ChaCha8Rng) -> Planted {
    let gt: BTreeSet<String> = (0..rng.random_range(1..=5))
        .map(|_| v.canonicals.choose(rng).unwrap().clone())
        .collect();
    let gt_list: Vec<&String> = gt.iter().collect();
    let mut words: Vec<String> = Vec::new();
    let mut planted = Vec::new();
    for _ in 0..rng.random_range(0..=6) {
        for _ in 0..rng.random_range(1..=3) {
            words.push(FILLER.choose(rng).unwrap().to_string());
        }
        let c = if rng.random_bool(rate) {
            loop {
                let c = v.canonicals.choose(rng).unwrap();
                if !gt.contains(c) {
                    break c.clone();
                }
            }
        } else {
            (*gt_list.choose(rng).unwrap()).clone()
        };
        let surface = v.surfaces[&c].choose(rng).unwrap().clone();
        words.push(surface);
        planted.push(c);
    }
    words.push(FILLER.choose(rng).unwrap().to_string());
    let mut text = words.join(" ");
    if rng.random_bool(0.5) {
        text[..1].make_ascii_uppercase();
    }
    if rng.random_bool(0.5) {
        text.push('.');
    }
    Planted {
        id: format!("img{id}"),
        text,
        planted,
        gt,
    }
}

fn planted_corpus(v: &Vocab, n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<Planted> {
    (0..n).map(|i| planted_caption(v, i, rate, rng)).collect()
}

fn label(v: &Vocab, corpus: &[Planted]) -> Vec<LabeledDescription> {
    corpus
        .iter()
        .map(|p| {
            let d = TokenizedDescription::from_text(p.id.clone(), p.text.clone()).unwrap();
            let m = extract_mentions(&d, &v.vocab);
            let a = ImageAnnotation {
                image_id: p.id.clone(),
                ground_truth: p.gt.clone(),
            };
            label_mentions(d, m, &a).unwrap()
        })
        .collect()
}

fn unique_in_order(items: &[String]) -> Vec<&String> {
    let mut seen = BTreeSet::new();
    items.iter().filter(|c| seen.insert(c.as_str())).collect()
}

fn brute_chair(corpus: &[Planted]) -> ChairReport {
    let (mut mentioned, mut hallucinated, mut flagged) = (0usize, 0usize, 0usize);
    for p in corpus {
        let uniq = unique_in_order(&p.planted);
        let h = uniq.iter().filter(|c| !p.gt.contains(c.as_str())).count();
        mentioned += uniq.len();
        hallucinated += h;
        if h > 0 {
            flagged += 1;
        }
    }
    ChairReport {
        chair_i: if mentioned == 0 {
            0.0
        } else {
            hallucinated as f64 / mentioned as f64
        },
        chair_s: flagged as f64 / corpus.len() as f64,
        total_mentioned_objects: mentioned,
        total_hallucinated_objects: hallucinated,
        total_captions: corpus.len(),
        captions_with_hallucination: flagged,
    }
}

fn fixture_labeled(v: &ObjectVocabulary) -> Vec<LabeledDescription> {
    let corpus = load_caption_corpus(fixtures().join("three_captions.jsonl")).unwrap();
    let ann = load_annotations(fixtures().join("three_annotations.jsonl"), v).unwrap();
    corpus
        .into_iter()
        .zip(&ann)
        .map(|(d, a)| {
            assert_eq!(d.image_id, a.image_id);
            let m = extract_mentions(&d, v);
            label_mentions(d, m, a).unwrap()
        })
        .collect()
}

// ---------------------------------------------------------------- 1-3

fn criterion1() -> Check {
    let start = Instant::now();
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut captions = 0;
    for i in 0..50 {
        let n = rng.random_range(1..=200);
        let rate = rng.random_range(0.0..1.0);
        let corpus = planted_corpus(&v, n, rate, &mut rng);
        let got = chair_scores(&label(&v, &corpus)).map_err(|e| e.to_string())?;
        let want = brute_chair(&corpus);
        ensure(got == want, || format!("corpus {i}: got {got:?}, brute force {want:?}"))?;
        captions += n;
    }
    let el = start.elapsed();
    ensure(el < Duration::from_secs(5), || format!("took {el:?}"))?;
    Ok(format!("50 corpora, {captions} captions, exact match in {el:.2?}"))
}

fn criterion2() -> Check {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let clean = planted_corpus(&v, 100, 0.0, &mut rng);
    let r = chair_scores(&label(&v, &clean)).map_err(|e| e.to_string())?;
    ensure(r.chair_i == 0.0 && r.chair_s == 0.0, || {
        format!("clean corpus gave ({}, {})", r.chair_i, r.chair_s)
    })?;

    let mut all: Vec<Planted> = Vec::new();
    while all.len() < 100 {
        let p = planted_caption(&v, all.len(), 1.0, &mut rng);
        if !p.planted.is_empty() {
            all.push(p);
        }
    }
    let r = chair_scores(&label(&v, &all)).map_err(|e| e.to_string())?;
    ensure(r.chair_i == 1.0 && r.chair_s == 1.0, || {
        format!("all-hallucinated gave ({}, {})", r.chair_i, r.chair_s)
    })?;

    let r = chair_scores(&fixture_labeled(&v.vocab)).map_err(|e| e.to_string())?;
    ensure(
        (r.chair_i - 0.4).abs() <= 1e-12 && (r.chair_s - 2.0 / 3.0).abs() <= 1e-12,
        || format!("fixture gave ({}, {})", r.chair_i, r.chair_s),
    )?;
    Ok(format!("(0, 0), (1, 1), fixture ({}, {:.12})", r.chair_i, r.chair_s))
}

fn naive_co_score(corpus: &[Planted], i: usize) -> f64 {
    let has = |j: usize, o: &str| corpus[j].planted.iter().any(|c| c == o);
    let support = |o: &str| (0..corpus.len()).filter(|&j| has(j, o)).count();
    let objects = unique_in_order(&corpus[i].planted);
    let mut total = 0.0;
    for h in objects.iter().filter(|c| !corpus[i].gt.contains(c.as_str())) {
        for o in &objects {
            if o == h {
                continue;
            }
            let both = (0..corpus.len()).filter(|&j| has(j, h) && has(j, o)).count();
            total += both as f64 / (support(h) + support(o)) as f64;
        }
    }
    total
}

fn criterion3() -> Check {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut checked = 0;
    for c in 0..20 {
        let n = rng.random_range(1..=50);
        let rate = rng.random_range(0.0..1.0);
        let corpus = planted_corpus(&v, n, rate, &mut rng);
        let labeled = label(&v, &corpus);
        let index = build_cooccur_index(&labeled).map_err(|e| e.to_string())?;
        for (i, d) in labeled.iter().enumerate() {
            let got = co_score(d, &index).map_err(|e| e.to_string())?;
            let want = naive_co_score(&corpus, i);
            ensure(got == want, || {
                format!("corpus {c} description {i}: {got} vs oracle {want}")
            })?;
            checked += 1;
        }
    }
    let labeled = fixture_labeled(&v.vocab);
    let index = build_cooccur_index(&labeled).map_err(|e| e.to_string())?;
    let got: Vec<f64> = labeled.iter().map(|d| co_score(d, &index).unwrap()).collect();
    let want = [0.25, 0.0, 1.0 / 3.0];
    ensure(got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-12), || {
        format!("fixture co_scores {got:?}, want {want:?}")
    })?;
    Ok(format!("{checked} descriptions exact; fixture {got:?}"))
}

// ---------------------------------------------------------------- 4

fn random_description(v: &Vocab, id: usize, rng: &mut ChaCha8Rng) -> TokenizedDescription {
    let mut words: Vec<String> = Vec::new();
    for _ in 0..rng.random_range(1..=30) {
        let r: f64 = rng.random();
        if r < 0.3 {
            let c = v.canonicals.choose(rng).unwrap();
            words.push(v.surfaces[c].choose(rng).unwrap().clone());
        } else if r < 0.33 {
            words.push("[IDK]".into());
        } else {
            words.push(FILLER.choose(rng).unwrap().to_string());
        }
        if rng.random_bool(0.1) {
            words.last_mut().unwrap().push(',');
        }
    }
    let text = format!("{}.", words.join(" "));
    let base = TokenizedDescription::from_text(id.to_string(), text.clone()).unwrap();
    let tokens: Vec<(String, Option<f64>)> = base
        .tokens
        .iter()
        .map(|t| {
            let lp = if rng.random_bool(0.1) {
                None
            } else if rng.random_bool(0.5) {
                Some(-rng.random_range(0.0..0.5))
            } else {
                Some(-rng.random_range(0.5..4.0))
            };
            (t.surface.clone(), lp)
        })
        .collect();
    TokenizedDescription::from_tokens(id.to_string(), text, tokens).unwrap()
}

/// The masked text as a description, keeping each surviving token's logprob.
fn retokenize_masked(original: &TokenizedDescription, masked: &MaskedDescription) -> TokenizedDescription {
    let again = TokenizedDescription::from_text(original.image_id.clone(), masked.masked_text.clone()).unwrap();
    let shift = |pos: usize| -> Option<usize> {
        let mut delta: isize = 0;
        for r in &masked.records {
            if r.masked_offset == pos {
                return None;
            }
            if r.masked_offset < pos {
                delta += r.original.len() as isize - masked.placeholder.len() as isize;
            }
        }
        Some((pos as isize + delta) as usize)
    };
    let tokens: Vec<(String, Option<f64>)> = again
        .tokens
        .iter()
        .map(|t| {
            let lp = shift(t.start).and_then(|s| {
                let orig = original.tokens.iter().find(|o| o.start == s).expect("surviving token");
                assert_eq!(orig.surface, t.surface);
                orig.logprob
            });
            (t.surface.clone(), lp)
        })
        .collect();
    TokenizedDescription::from_tokens(original.image_id.clone(), masked.masked_text.clone(), tokens).unwrap()
}

fn criterion4() -> Check {
    let start = Instant::now();
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let gammas = [0.0, 0.5, 1.0, 2.0, 3.0];
    let etas = [0.2, 0.4, 0.6, 0.8, 1.0];
    let mut masks = 0;
    let mut idempotence = Vec::new();
    // violations where a multi-token span collapsed to one placeholder and
    // the re-selection is by position only
    let mut from_shrinkage = 0;
    for i in 0..1000 {
        let d = random_description(&v, i, &mut rng);
        let mentions = extract_mentions(&d, &v.vocab);
        let mut grid: Vec<Vec<BTreeSet<(usize, usize)>>> = Vec::new();
        for &g in &gammas {
            let mut row = Vec::new();
            for &e in &etas {
                let policy = MaskPolicy::new(g, e).unwrap();
                let sel: BTreeSet<_> = select_mask_targets(&d, &mentions, &policy)
                    .iter()
                    .map(|s| s.mention.token_span)
                    .collect();
                let m = mask_description(&d, &mentions, &policy).map_err(|e| e.to_string())?;
                ensure(
                    m.placeholder_count() == m.records.len() + m.preexisting_placeholders,
                    || format!("description {i}: placeholder count mismatch"),
                )?;
                let back = unmask(&m).map_err(|e| e.to_string())?;
                ensure(back == d.raw_text, || {
                    format!("description {i}: round trip gave `{back}`")
                })?;

                let second = retokenize_masked(&d, &m);
                let again = select_mask_targets(&second, &extract_mentions(&second, &v.vocab), &policy);
                if !again.is_empty() {
                    let shrank = m.records.iter().any(|r| r.token_span.1 > r.token_span.0);
                    let by_position = again.iter().all(|a| a.reason == MaskReason::Position);
                    if shrank && by_position {
                        from_shrinkage += 1;
                    }
                    idempotence.push(format!(
                        "description {i} (gamma {g}, eta {e}): second pass selects {:?} in `{}`",
                        again.iter().map(|a| (&a.mention.surface, a.reason)).collect::<Vec<_>>(),
                        m.masked_text
                    ));
                }
                if g == 0.0 {
                    for mm in mentions.iter().filter(|mm| mm.uncertainty.is_some()) {
                        ensure(sel.contains(&mm.token_span), || {
                            format!("description {i}: gamma 0 left `{}` unmasked", mm.surface)
                        })?;
                    }
                }
                row.push(sel);
                masks += 1;
            }
            grid.push(row);
        }
        for a in 0..gammas.len() {
            for b in 0..etas.len() {
                if a + 1 < gammas.len() {
                    ensure(grid[a + 1][b].is_subset(&grid[a][b]), || {
                        format!("description {i}: raising gamma to {} added targets", gammas[a + 1])
                    })?;
                }
                if b + 1 < etas.len() {
                    ensure(grid[a][b + 1].is_subset(&grid[a][b]), || {
                        format!("description {i}: raising eta to {} added targets", etas[b + 1])
                    })?;
                }
            }
        }
    }
    ensure(idempotence.is_empty(), || {
        format!(
            "{} of {masks} second passes select again ({from_shrinkage} by position after a multi-token span collapsed to one placeholder); first: {}",
            idempotence.len(),
            idempotence[0]
        )
    })?;
    let el = start.elapsed();
    ensure(el < Duration::from_secs(10), || format!("took {el:?}"))?;
    Ok(format!("1000 descriptions x 25 policies ({masks} masks) in {el:.2?}"))
}

// ---------------------------------------------------------------- 5-7

fn within_3se(name: &str, mean: f64, se: f64, closed: f64) -> Result<String, String> {
    let z = (mean - closed) / se;
    ensure(se > 0.0 && z.abs() <= 3.0, || {
        format!("{name}: empirical {mean:.6e} (se {se:.2e}) vs closed form {closed:.6e}, z = {z:.2}")
    })?;
    Ok(format!("{name} {mean:.4e}±{se:.1e} vs {closed:.4e} (z={z:+.2})"))
}

fn close(name: &str, got: f64, want: f64) -> Result<(), String> {
    ensure((got - want).abs() <= 1e-12 * want.abs().max(1e-3), || {
        format!("{name}: closed form {got:.17e}, oracle {want:.17e}")
    })
}

fn criterion5() -> Check {
    let start = Instant::now();
    let cfg = TheoryConfig {
        experiment: ExperimentKind::Single,
        d: 1000,
        k: 1,
        n: 500,
        mu_norms_sq: vec![10.0],
        trials: 500,
        test_size: 10_000,
        seed: 5,
        ..TheoryConfig::default()
    };
    let r = theory::run_single_class_experiment(&cfg).map_err(|e| e.to_string())?;
    close("single", r.scheme.closed_form, PHI_SINGLE)?;
    let line = within_3se("single", r.scheme.empirical.mean, r.scheme.empirical.se, PHI_SINGLE)?;
    let el = start.elapsed();
    ensure(el < Duration::from_secs(120), || format!("took {el:?}"))?;
    Ok(format!("{line} in {el:.1?}"))
}

fn criterion6() -> Check {
    let cfg = TheoryConfig {
        experiment: ExperimentKind::Cooccurrence,
        d: 1000,
        k: 2,
        n: 500,
        mu_norms_sq: vec![5.0, 5.0],
        rho0: 0.8,
        rho: 0.2,
        trials: 300,
        test_size: 10_000,
        seed: 6,
        ..TheoryConfig::default()
    };
    let r = theory::run_theorem1_experiment(&cfg).map_err(|e| e.to_string())?;
    let (s1, s2) = (&r.schemes[0], &r.schemes[1]);
    close("rho=0.8", s1.closed_form, TH1_RHO08)?;
    close("rho=0.2", s2.closed_form, TH1_RHO02)?;
    let a = within_3se("rho=0.8", s1.empirical.mean, s1.empirical.se, TH1_RHO08)?;
    let b = within_3se("rho=0.2", s2.empirical.mean, s2.empirical.se, TH1_RHO02)?;

    let control = theory::run_theorem1_experiment(&TheoryConfig {
        rho: 0.8,
        ..cfg.clone()
    })
    .map_err(|e| e.to_string())?;
    ensure(control.inequality.verdict == Verdict::Indistinguishable, || {
        format!(
            "control rho = rho0 gave verdict {} (difference {:.3e} ± {:.1e})",
            control.inequality.verdict.as_str(),
            control.inequality.difference.mean,
            control.inequality.difference.se
        )
    })?;
    Ok(format!(
        "{a}; {b}; verdict {} ({} vs {}); control {}",
        r.inequality.verdict.as_str(),
        r.inequality.first,
        r.inequality.second,
        control.inequality.verdict.as_str()
    ))
}

fn criterion7() -> Check {
    let cfg = TheoryConfig {
        experiment: ExperimentKind::Uncertainty,
        d: 1000,
        k: 2,
        n: 1000,
        mu_norms_sq: vec![1.0, 25.0],
        trials: 200,
        test_size: 10_000,
        seed: 7,
        ..TheoryConfig::default()
    };
    let r = theory::run_theorem2_experiment(&cfg).map_err(|e| e.to_string())?;
    let (eq, filt) = (&r.schemes[0], &r.schemes[1]);
    ensure(eq.allocation == [500, 500], || {
        format!("equal split allocation {:?}", eq.allocation)
    })?;
    ensure(filt.allocation == [750, 250], || {
        format!("filtered allocation {:?}", filt.allocation)
    })?;
    close("equal_split", eq.closed_form, TH2_EQUAL)?;
    close("uncertainty_filtered", filt.closed_form, TH2_FILTERED)?;
    ensure(filt.closed_form < eq.closed_form, || {
        "filtered closed form is not lower".into()
    })?;
    let a = within_3se("equal", eq.empirical.mean, eq.empirical.se, eq.closed_form)?;
    let b = within_3se("(750,250)", filt.empirical.mean, filt.empirical.se, filt.closed_form)?;

    let signs: Vec<SigmoidSign> = r.phat.iter().map(|p| p.sigmoid_sign).collect();
    ensure(
        signs.len() == 2 && signs.contains(&SigmoidSign::Standard) && signs.contains(&SigmoidSign::AsProof),
        || format!("p-hat report covers {signs:?}"),
    )?;
    let mut zero = Vec::new();
    for (i, sign) in SigmoidSign::BOTH.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(70 + i as u64);
        let p = estimate_phat(0.0, 100_000, &mut rng, *sign);
        ensure((p - 0.5).abs() <= 0.01, || format!("p-hat(0) = {p} under {sign:?}"))?;
        zero.push(format!("{sign:?} {p:.4}"));
    }
    Ok(format!("{a}; {b}; p-hat(0): {}", zero.join(", ")))
}

// ---------------------------------------------------------------- 8-10

fn lure(args: &[&str], out: &Path, workers: usize) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_lure"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--workers")
        .arg(workers.to_string())
        .env_remove("LURE_BACKEND_URL")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!(
            "lure {} exited {:?}: {}",
            args.join(" "),
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn dir_contents(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        let name = e.file_name().into_string().unwrap();
        let mut bytes = fs::read(e.path()).map_err(|e| e.to_string())?;
        if name == "manifest.json" {
            let v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
            bytes = serde_json::to_vec(&v["reproducible"]).unwrap();
        }
        files.insert(name, bytes);
    }
    Ok(files)
}

fn criterion8() -> Check {
    let fx = fixtures();
    let s = |p: &str| fx.join(p).display().to_string();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let theory_cfg = tmp.path().join("theory.toml");
    fs::write(
        &theory_cfg,
        "[theory]\nd = 200\nn = 200\ntrials = 30\ntest_size = 2000\nphat_samples = 5000\n",
    )
    .map_err(|e| e.to_string())?;
    let theory_cfg = theory_cfg.display().to_string();
    let commands: Vec<(&str, Vec<String>)> = vec![
        (
            "ingest-check",
            vec![
                "ingest-check".into(),
                "--captions".into(),
                s("generated.jsonl"),
                "--annotations".into(),
                s("annotations.jsonl"),
            ],
        ),
        (
            "chair",
            vec![
                "chair".into(),
                "--captions".into(),
                s("generated.jsonl"),
                "--annotations".into(),
                s("annotations.jsonl"),
            ],
        ),
        (
            "factors",
            vec![
                "factors".into(),
                "--captions".into(),
                s("generated.jsonl"),
                "--annotations".into(),
                s("annotations.jsonl"),
            ],
        ),
        ("mask", vec!["mask".into(), "--captions".into(), s("generated.jsonl")]),
        (
            "revise",
            vec![
                "revise".into(),
                "--captions".into(),
                s("generated.jsonl"),
                "--seed".into(),
                "11".into(),
            ],
        ),
        (
            "build-dataset",
            vec![
                "build-dataset".into(),
                "--gt-captions".into(),
                s("gt_captions.jsonl"),
                "--captions".into(),
                s("generated.jsonl"),
                "--seed".into(),
                "11".into(),
            ],
        ),
        (
            "theory",
            vec![
                "theory".into(),
                "--config".into(),
                theory_cfg,
                "--seed".into(),
                "11".into(),
            ],
        ),
    ];
    let mut total_files = 0;
    for (name, args) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let mut runs = Vec::new();
        for (k, workers) in [(0, 1), (1, 4), (2, 4), (3, 1)] {
            let out = tmp.path().join(format!("{name}-{k}"));
            lure(&args, &out, workers)?;
            runs.push(dir_contents(&out)?);
        }
        for (k, r) in runs.iter().enumerate().skip(1) {
            let names: Vec<&String> = r.keys().collect();
            ensure(runs[0].keys().collect::<Vec<_>>() == names, || {
                format!("{name}: run {k} wrote {names:?}")
            })?;
            for (f, bytes) in r {
                ensure(&runs[0][f] == bytes, || {
                    format!("{name}: {f} differs between run 0 and run {k}")
                })?;
            }
        }
        total_files += runs[0].len();
    }
    Ok(format!(
        "7 commands x 4 runs (workers 1, 4, 4, 1), {total_files} files byte-identical"
    ))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    fs::read_to_string(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect()
}

fn criterion9() -> Check {
    let fx = fixtures();
    let s = |p: &str| fx.join(p).display().to_string();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("dataset");
    lure(
        &[
            "build-dataset",
            "--gt-captions",
            &s("gt_captions.jsonl"),
            "--captions",
            &s("generated.jsonl"),
            "--seed",
            "3",
        ],
        &out,
        2,
    )?;
    let records: Vec<TrainingRecord> = read_jsonl(&out.join("training.jsonl"))?;
    ensure(records.len() == 10, || format!("{} training records", records.len()))?;
    let masked_total: usize = records.iter().map(|r| r.mask_records.len()).sum();
    for r in &records {
        let back = unmask(&r.masked()).map_err(|e| format!("{}: {e}", r.image_id))?;
        ensure(back == r.hallucinatory_caption, || {
            format!("{}: unmask gave `{back}`", r.image_id)
        })?;
    }
    let out = tmp.path().join("revise");
    lure(&["revise", "--captions", &s("generated.jsonl"), "--seed", "3"], &out, 2)?;
    let revised: Vec<serde_json::Value> = read_jsonl(&out.join("revised.jsonl"))?;
    ensure(revised.len() == 10, || format!("{} revised records", revised.len()))?;
    Ok(format!(
        "10 training records ({masked_total} masked spans) unmask exactly; revise wrote 10 records"
    ))
}

fn criterion10() -> Check {
    let v = ObjectVocabulary::parse("dog\ncat\ncar\nfrisbee").map_err(|e| e.to_string())?;
    let text = "a dog , a cat , a car and a frisbee";
    let lps = [-0.05, -0.1, -0.05, -0.05, -0.2, -0.05, -0.05, -1.0, -0.05, -0.05, -1.7];
    let base = TokenizedDescription::from_text("r", text).unwrap();
    let d = TokenizedDescription::from_tokens(
        "r",
        text,
        base.tokens.iter().zip(lps).map(|(t, lp)| (t.surface.clone(), Some(lp))),
    )
    .map_err(|e| e.to_string())?;
    let m = extract_mentions(&d, &v);
    let u: Vec<f64> = m.iter().filter_map(|m| m.uncertainty).collect();
    ensure(u == [0.1, 0.2, 1.0, 1.7], || format!("uncertainties {u:?}"))?;
    let ann = ImageAnnotation {
        image_id: "r".into(),
        ground_truth: ["dog", "cat", "car"].iter().map(|s| s.to_string()).collect(),
    };
    let labeled = vec![label_mentions(d.clone(), m, &ann).map_err(|e| e.to_string())?];
    let index = build_cooccur_index(&labeled).map_err(|e| e.to_string())?;
    let scores = CorpusScores::compute(&labeled, &index).map_err(|e| e.to_string())?;
    let r = ratio_stats(&scores, 0.8);
    ensure(r.u_ratio == Some(0.5), || format!("u_ratio {:?}", r.u_ratio))?;

    // undefined denominators
    let s = ratio_stats(&scores, 1.5);
    ensure(s.s_ratio.is_none(), || {
        format!("s_ratio with nothing selected: {:?}", s.s_ratio)
    })?;
    let plain = TokenizedDescription::from_text("r", text).unwrap();
    let m = extract_mentions(&plain, &v);
    let labeled = vec![label_mentions(plain, m, &ann).map_err(|e| e.to_string())?];
    let index = build_cooccur_index(&labeled).map_err(|e| e.to_string())?;
    let no_lp = ratio_stats(
        &CorpusScores::compute(&labeled, &index).map_err(|e| e.to_string())?,
        0.8,
    );
    ensure(no_lp.u_ratio.is_none() && no_lp.un_score_mean.is_none(), || {
        format!("u_ratio without logprobs: {:?}", no_lp.u_ratio)
    })?;
    let empty = ratio_stats(
        &CorpusScores {
            descriptions: vec![],
            mentions: vec![],
        },
        0.8,
    );
    ensure(
        empty.c_ratio.is_none() && empty.u_ratio.is_none() && empty.s_ratio.is_none(),
        || format!("empty scores gave {empty:?}"),
    )?;
    let json = serde_json::to_value(no_lp).unwrap();
    ensure(json["u_ratio"].is_null(), || {
        format!("serialized u_ratio {}", json["u_ratio"])
    })?;
    Ok(format!(
        "u_ratio = {:?}; undefined cases -> None/null (s_ratio at eta 1.5, u_ratio without logprobs, empty corpus)",
        r.u_ratio.unwrap()
    ))
}

fn main() {
    let checks: [Criterion; 10] = [
        (1, "CHAIR oracle equivalence", criterion1),
        (2, "CHAIR boundary cases", criterion2),
        (3, "CoScore brute-force equivalence", criterion3),
        (4, "masking laws", criterion4),
        (5, "single-class closed form", criterion5),
        (6, "co-occurrence harness", criterion6),
        (7, "uncertainty harness", criterion7),
        (8, "determinism", criterion8),
        (9, "mock-backend pipeline", criterion9),
        (10, "ratio statistics", criterion10),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (n, name, f) in checks {
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
