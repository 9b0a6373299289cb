//! Release gate for the whole pipeline. Each criterion is one test that
//! prints `ACCEPT <id> <label>: PASS` when it holds; every tolerance is a
//! named constant below, and each check runs against an oracle or a
//! measurement that does not reuse the production code path under test.
//!
//! The heavyweight fixtures (a default-scale pretrained model, its unlearned
//! variants, and two full sweep runs) are shared across criteria through
//! `OnceLock`, so wall-clock cost is paid once regardless of test order.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use munchlab::corpus::{build_pretraining_corpus, qa_example, CorpusConfig};
use munchlab::evalsuite::{
    evaluate, item_relation, probing_accuracy, rouge_l_recall, CandidateMap, EvalContext,
    MetricsReport, Pipeline, ReportCell, RunMeta,
};
use munchlab::experiment::{cmd_sweep, vocab_extras, AggregateRow, ExperimentConfig};
use munchlab::kbgen::{DatasetBundle, FactId, GenConfig, QuestionKind, Split};
use munchlab::munch::{
    calibrate_threshold, run_munch, Decomposer, ForgetMemory, Verdict,
};
use munchlab::seqmodel::{
    fit, sequence_nll, Model, ModelArch, ModelTag, SeqExample, Vocabulary, BOS, EOS, SEP,
};
use munchlab::unlearner::{
    grad_dpo, grad_ga, grad_npo, grad_retain, loss_dpo, loss_ga, loss_npo, loss_retain,
    run_unlearning, PreferencePair, UnlearnMethod, UnlearnOutcome,
};

mod common;
use common::naive;

use munchlab::experiment::collect_max_scores;

// c01: finite-difference gradient agreement.
const FD_MAX_REL_ERR: f64 = 1e-3;
const FD_BUDGET_SECS: f64 = 60.0;
const FD_MODEL_MAX_PARAMS: usize = 5000;

// c02: closed-form loss identities.
const IDENTITY_TOL: f64 = 1e-6;
const NPO_LIMIT_BETA: f64 = 1e-3;
const NPO_LIMIT_RTOL: f64 = 0.01;

// c03: metric oracle sample counts.
const ROUGE_CASES: usize = 1000;
const PA_ITEMS: usize = 200;
const CALIBRATE_CASES: usize = 100;

// c04: dataset invariant generations.
const GEN_RUNS: u64 = 50;

// c05: pretraining quality gate on the default-scale bundle.
const PRETRAIN_BUDGET_SECS: f64 = 1800.0;
const PRETRAIN_SINGLE_PA: f64 = 95.0;
const PRETRAIN_MULTI_PA: f64 = 70.0;

// c06: unlearning pattern bands (points of probing accuracy).
const FORGET_SINGLE_MIN_DROP: f64 = 40.0;
const FORGET_MULTI_BAND: f64 = 15.0;
const RETAIN_SINGLE_BAND: f64 = 10.0;

// c07: pipeline effect on the unlearned checkpoint.
const PIPELINE_FORGET_MULTI_MAX: f64 = 15.0;
const PIPELINE_RETAIN_KEEP_FRACTION: f64 = 0.70;
const CALIBRATION_MAX_BALANCED_ERROR: f64 = 0.2;

// c08: rejection-threshold sweep.
const TAU_SWEEP_POINTS: usize = 20;

// c09: retain collapse under pure ascent.
const COLLAPSE_MIN_EPOCHS: usize = 3;
const COLLAPSE_RETAIN_FACTOR: f64 = 0.5;

// c10: forget-fraction scaling.
const SWEEP_FORGET_SINGLE_SPREAD: f64 = 15.0;

fn pass(id: &str, label: &str) {
    println!("ACCEPT {id} {label}: PASS");
}

// ---------------------------------------------------------------------------
// Tiny fixtures for the analytic criteria.

fn tiny_model(seed: u64) -> Model {
    let vocab = Vocabulary::build(["one two three four five six"]);
    let arch = ModelArch { embed_dim: 16, ffn_dim: 8, n_layers: 1, context_len: 16 };
    let model = Model::init(arch, vocab, seed).unwrap();
    assert!(model.param_count() <= FD_MODEL_MAX_PARAMS, "{} params", model.param_count());
    model
}

fn forget_batch(model: &Model) -> Vec<SeqExample> {
    let id = |w: &str| model.vocab.id(w);
    vec![
        SeqExample::new(vec![BOS, id("one"), SEP], vec![id("two"), EOS]),
        SeqExample::new(vec![BOS, id("three"), id("four"), SEP], vec![id("five"), id("six"), EOS]),
        SeqExample::new(vec![BOS, id("six"), SEP], vec![id("one"), EOS]),
    ]
}

fn retain_batch(model: &Model) -> Vec<SeqExample> {
    let id = |w: &str| model.vocab.id(w);
    vec![
        SeqExample::new(vec![BOS, id("two"), SEP], vec![id("four"), EOS]),
        SeqExample::new(vec![BOS, id("five"), SEP], vec![id("three"), id("one"), EOS]),
    ]
}

fn pairs_for(batch: &[SeqExample], model: &Model) -> Vec<PreferencePair> {
    let id = |w: &str| model.vocab.id(w);
    batch
        .iter()
        .map(|ex| PreferencePair {
            prompt: ex.prompt.clone(),
            win: vec![id("four"), id("two"), EOS],
            lose: ex.target.clone(),
        })
        .collect()
}

fn log_sigmoid(z: f64) -> f64 {
    (1.0 / (1.0 + (-z).exp())).ln()
}

/// Central-difference sweep over every parameter against `objective`,
/// returning the worst guarded relative error. The 1e-2 floor admits f32
/// accumulation noise on near-zero coordinates without masking real
/// disagreement elsewhere.
fn max_fd_error(
    model: &mut Model,
    analytic: &[f32],
    objective: &mut dyn FnMut(&Model) -> f64,
) -> f64 {
    let h = 1e-3f32;
    let mut worst = 0.0f64;
    for j in 0..model.param_count() {
        let orig = model.params()[j];
        model.params_mut()[j] = orig + h;
        let up_x = model.params()[j] as f64;
        let up = objective(model);
        model.params_mut()[j] = orig - h;
        let dn_x = model.params()[j] as f64;
        let dn = objective(model);
        model.params_mut()[j] = orig;
        let fd = (up - dn) / (up_x - dn_x);
        let an = analytic[j] as f64;
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-2));
    }
    worst
}

// ---------------------------------------------------------------------------
// c01

#[test]
fn c01_every_loss_gradient_passes_finite_differences() {
    let start = Instant::now();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    // Retain.
    {
        let mut model = tiny_model(31);
        let batch = forget_batch(&model);
        let refs: Vec<&SeqExample> = batch.iter().collect();
        let mut grad = vec![0.0f32; model.param_count()];
        grad_retain(&model, &refs, 1.0, &mut grad).unwrap();
        let worst = max_fd_error(&mut model, &grad, &mut |m| mean(&naive::batch(m, &refs)));
        assert!(worst < FD_MAX_REL_ERR, "retain: max relative error {worst:.3e}");
    }

    // Ascent.
    {
        let mut model = tiny_model(32);
        let batch = forget_batch(&model);
        let refs: Vec<&SeqExample> = batch.iter().collect();
        let mut grad = vec![0.0f32; model.param_count()];
        grad_ga(&model, &refs, 1.0, &mut grad).unwrap();
        let worst = max_fd_error(&mut model, &grad, &mut |m| -mean(&naive::batch(m, &refs)));
        assert!(worst < FD_MAX_REL_ERR, "ascent: max relative error {worst:.3e}");
    }

    // Preference.
    {
        let mut model = tiny_model(33);
        let reference = tiny_model(77).retagged(ModelTag::Reference);
        let pairs = pairs_for(&forget_batch(&model), &model);
        let prefs: Vec<&PreferencePair> = pairs.iter().collect();
        let beta = 0.7;
        let wins: Vec<SeqExample> =
            pairs.iter().map(|p| SeqExample::new(p.prompt.clone(), p.win.clone())).collect();
        let loses: Vec<SeqExample> =
            pairs.iter().map(|p| SeqExample::new(p.prompt.clone(), p.lose.clone())).collect();
        let win_refs: Vec<&SeqExample> = wins.iter().collect();
        let lose_refs: Vec<&SeqExample> = loses.iter().collect();
        let ref_win = naive::batch(&reference, &win_refs);
        let ref_lose = naive::batch(&reference, &lose_refs);
        let mut grad = vec![0.0f32; model.param_count()];
        grad_dpo(&model, &reference, &prefs, beta, 1.0, &mut grad).unwrap();
        let worst = max_fd_error(&mut model, &grad, &mut |m| {
            let th_win = naive::batch(m, &win_refs);
            let th_lose = naive::batch(m, &lose_refs);
            let total: f64 = (0..pairs.len())
                .map(|i| {
                    log_sigmoid(beta * ((ref_win[i] - th_win[i]) - (ref_lose[i] - th_lose[i])))
                })
                .sum();
            -total / pairs.len() as f64
        });
        assert!(worst < FD_MAX_REL_ERR, "preference: max relative error {worst:.3e}");
    }

    // Ratio.
    {
        let mut model = tiny_model(34);
        let reference = tiny_model(78).retagged(ModelTag::Reference);
        let batch = forget_batch(&model);
        let refs: Vec<&SeqExample> = batch.iter().collect();
        let beta = 1.3;
        let frozen = naive::batch(&reference, &refs);
        let mut grad = vec![0.0f32; model.param_count()];
        grad_npo(&model, &reference, &refs, beta, 1.0, &mut grad).unwrap();
        let worst = max_fd_error(&mut model, &grad, &mut |m| {
            let theta = naive::batch(m, &refs);
            -theta
                .iter()
                .zip(&frozen)
                .map(|(&t, &r)| log_sigmoid(beta * (t - r)))
                .sum::<f64>()
                / refs.len() as f64
        });
        assert!(worst < FD_MAX_REL_ERR, "ratio: max relative error {worst:.3e}");
    }

    // Combined forget + retain mix.
    {
        let mut model = tiny_model(35);
        let reference = tiny_model(79).retagged(ModelTag::Reference);
        let fbatch = forget_batch(&model);
        let rbatch = retain_batch(&model);
        let frefs: Vec<&SeqExample> = fbatch.iter().collect();
        let rrefs: Vec<&SeqExample> = rbatch.iter().collect();
        let (alpha, beta) = (0.3, 0.5);
        let frozen = naive::batch(&reference, &frefs);
        let mut grad = vec![0.0f32; model.param_count()];
        grad_npo(&model, &reference, &frefs, beta, alpha, &mut grad).unwrap();
        grad_retain(&model, &rrefs, 1.0 - alpha, &mut grad).unwrap();
        let worst = max_fd_error(&mut model, &grad, &mut |m| {
            let theta = naive::batch(m, &frefs);
            let forget: f64 = -theta
                .iter()
                .zip(&frozen)
                .map(|(&t, &r)| log_sigmoid(beta * (t - r)))
                .sum::<f64>()
                / frefs.len() as f64;
            alpha * forget + (1.0 - alpha) * mean(&naive::batch(m, &rrefs))
        });
        assert!(worst < FD_MAX_REL_ERR, "combined: max relative error {worst:.3e}");
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < FD_BUDGET_SECS, "finite differences took {elapsed:.1}s");
    pass("c01", "loss gradients vs finite differences");
}

// ---------------------------------------------------------------------------
// c02

#[test]
fn c02_loss_identities_hold() {
    let model = tiny_model(41);
    let batch = forget_batch(&model);
    let refs: Vec<&SeqExample> = batch.iter().collect();
    let ln2 = std::f64::consts::LN_2;

    let retain = loss_retain(&model, &refs).unwrap();
    let ga = loss_ga(&model, &refs).unwrap();
    assert!((ga + retain).abs() <= IDENTITY_TOL, "ga {ga} vs retain {retain}");

    // Both preference losses collapse to ln 2 when the policy IS the
    // reference: every log-ratio is exactly zero.
    let same = model.retagged(ModelTag::Reference);
    let pairs = pairs_for(&batch, &model);
    let prefs: Vec<&PreferencePair> = pairs.iter().collect();
    let dpo = loss_dpo(&model, &same, &prefs, 0.7).unwrap();
    assert!((dpo - ln2).abs() <= IDENTITY_TOL, "dpo at theta=ref is {dpo}");
    let npo = loss_npo(&model, &same, &refs, 0.7).unwrap();
    assert!((npo - ln2).abs() <= IDENTITY_TOL, "npo at theta=ref is {npo}");

    // Small-beta expansion: loss(beta) ~ ln2 - (beta/2) * mean log-ratio, so
    // the rescaled deviation from ln2 recovers the mean log-ratio. Two fresh
    // inits both sit near the uniform distribution, which would put the mean
    // log-ratio near zero; a short descent run pushes theta's likelihood
    // well away from the reference's first.
    let mut model = model;
    for _ in 0..30 {
        let mut grad = vec![0.0f32; model.param_count()];
        grad_retain(&model, &refs, 1.0, &mut grad).unwrap();
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= 0.1 * g;
        }
    }
    let reference = tiny_model(87).retagged(ModelTag::Reference);
    let theta_nll = naive::batch(&model, &refs);
    let ref_nll = naive::batch(&reference, &refs);
    let mean_ratio = theta_nll
        .iter()
        .zip(&ref_nll)
        .map(|(&t, &r)| t - r)
        .sum::<f64>()
        / refs.len() as f64;
    assert!(mean_ratio.abs() > 1.0, "degenerate fixture: mean log-ratio {mean_ratio}");
    let small = loss_npo(&model, &reference, &refs, NPO_LIMIT_BETA).unwrap();
    let recovered = (ln2 - small) * 2.0 / NPO_LIMIT_BETA;
    let rel = ((recovered - mean_ratio) / mean_ratio).abs();
    assert!(rel < NPO_LIMIT_RTOL, "small-beta limit off by {rel:.4}");

    pass("c02", "loss identities");
}

// ---------------------------------------------------------------------------
// c03

/// Plain recursive LCS with memoization; no shared code with the production
/// single-row DP.
fn lcs_oracle(a: &[&str], b: &[&str]) -> usize {
    fn go<'a>(
        a: &[&'a str],
        b: &[&'a str],
        i: usize,
        j: usize,
        memo: &mut BTreeMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut BTreeMap::new())
}

#[test]
fn c03_metrics_match_brute_force_oracles() {
    // ROUGE-L recall vs recursive LCS.
    let words = ["ash", "birch", "cedar", "fir", "oak", "pine", "thorn", "yew"];
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..ROUGE_CASES {
        let mk = |rng: &mut ChaCha8Rng| -> String {
            let len = rng.gen_range(0..=12);
            (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        };
        let pred = mk(&mut rng);
        let refr = mk(&mut rng);
        let pred_toks: Vec<&str> = pred.split_whitespace().collect();
        let ref_toks: Vec<&str> = refr.split_whitespace().collect();
        let want = if ref_toks.is_empty() {
            0.0
        } else {
            lcs_oracle(&pred_toks, &ref_toks) as f64 / ref_toks.len() as f64
        };
        let got = rouge_l_recall(&pred, &refr);
        assert_eq!(got, want, "case {case}: {pred:?} vs {refr:?}");
    }

    // Probing accuracy vs independent full-forward candidate rescoring.
    let bundle = DatasetBundle::generate(&GenConfig {
        seed: 51,
        n_entities: 60,
        n_facts: 200,
        n_chains: 50,
        ..GenConfig::default()
    })
    .unwrap();
    let corpus = build_pretraining_corpus(
        &bundle,
        &CorpusConfig { aux_paths: vec![], with_transcripts: false, seed: 0 },
        96,
        &[],
    )
    .unwrap();
    let arch = ModelArch { embed_dim: 32, ffn_dim: 64, n_layers: 2, context_len: 96 };
    let model = Model::init(arch, corpus.vocab.clone(), 7).unwrap();
    let items: Vec<_> =
        (0..PA_ITEMS).map(|_| &bundle.questions[rng.gen_range(0..bundle.questions.len())]).collect();
    let cands = CandidateMap::from_bundle(&bundle);

    let vocab = &model.vocab;
    let mut per_rel: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for item in &items {
        let relation = item_relation(&bundle, item).unwrap();
        let prompt = qa_example(vocab, &item.text, "x").prompt;
        let mut gold = f64::NEG_INFINITY;
        let mut best_other = f64::NEG_INFINITY;
        for cand in cands.candidates(relation).unwrap() {
            let lp = -sequence_nll(&model, &prompt, &vocab.encode(cand)).unwrap();
            if cand == &item.answer {
                gold = lp;
            } else if lp > best_other {
                best_other = lp;
            }
        }
        // The pinned seeds keep every gold/runner-up gap far above f32 noise,
        // so the two scorers rank identically and equality below is exact.
        assert!((gold - best_other).abs() > 1e-7, "near-tie at {}", item.id.0);
        let hit = if gold > best_other { 1.0 } else { 0.0 };
        let e = per_rel.entry(relation).or_insert((0.0, 0));
        e.0 += hit;
        e.1 += 1;
    }
    let oracle_pa =
        100.0 * per_rel.values().map(|&(s, n)| s / n as f64).sum::<f64>() / per_rel.len() as f64;
    let got = probing_accuracy(&model, &bundle, &items, &cands).unwrap();
    assert!(got.missing_gold.is_empty());
    assert_eq!(got.pa, oracle_pa, "probing accuracy diverged from rescoring oracle");

    // Threshold calibration vs the exhaustive midpoint grid.
    for case in 0..CALIBRATE_CASES {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.gen_range(1..=30);
            (0..n).map(|_| rng.gen_range(0..13) as f64 * 0.25).collect()
        };
        let forget = draw(&mut rng);
        let retain = draw(&mut rng);

        let mut pooled: Vec<f64> = forget.iter().chain(&retain).copied().collect();
        pooled.sort_by(f64::total_cmp);
        pooled.dedup();
        let rates = |tau: f64| -> (f64, f64, f64) {
            let miss = forget.iter().filter(|&&s| s <= tau).count() as f64 / forget.len() as f64;
            let fr = retain.iter().filter(|&&s| s > tau).count() as f64 / retain.len() as f64;
            ((miss + fr) / 2.0, miss, fr)
        };
        let (mut want_tau, mut want) = (pooled[0], f64::INFINITY);
        if pooled.len() == 1 {
            want = rates(pooled[0]).0;
        } else {
            for pair in pooled.windows(2) {
                let tau = 0.5 * (pair[0] + pair[1]);
                let (bal, _, _) = rates(tau);
                if bal < want {
                    want = bal;
                    want_tau = tau;
                }
            }
        }
        let report = calibrate_threshold(&forget, &retain).unwrap();
        assert_eq!(report.tau, want_tau, "case {case}: tau");
        assert_eq!(report.balanced_error, want, "case {case}: balanced error");
        let (_, miss, fr) = rates(report.tau);
        assert_eq!(report.forget_miss, miss, "case {case}: miss rate");
        assert_eq!(report.retain_false_reject, fr, "case {case}: false-reject rate");
    }

    pass("c03", "metric oracles");
}

// ---------------------------------------------------------------------------
// c04

#[test]
fn c04_dataset_invariants_hold_across_seeded_generations() {
    for seed in 0..GEN_RUNS {
        let cfg = GenConfig { seed, ..GenConfig::default() };
        let bundle = DatasetBundle::generate(&cfg).unwrap();
        let facts: BTreeMap<&FactId, (&str, &str)> = bundle
            .facts
            .iter()
            .map(|f| (&f.id, (f.subject.as_str(), f.object.as_str())))
            .collect();

        // Chains: known length, resolvable facts, object feeds next subject.
        for chain in &bundle.chains {
            assert!(
                (2..=3).contains(&chain.hops()),
                "seed {seed}: chain {} has {} hops",
                chain.id.0,
                chain.hops()
            );
            for pair in chain.fact_ids.windows(2) {
                let (_, obj) = facts[&pair[0]];
                let (subj, _) = facts[&pair[1]];
                assert_eq!(obj, subj, "seed {seed}: chain {} breaks at {}", chain.id.0, pair[1].0);
            }
        }

        // Single-hop split map: one question per fact, forget and retain
        // fact sets disjoint.
        let mut single_split: BTreeMap<&FactId, Split> = BTreeMap::new();
        for q in bundle.questions.iter().filter(|q| q.kind == QuestionKind::Single) {
            assert_eq!(q.fact_ids.len(), 1, "seed {seed}: single {} spans facts", q.id.0);
            let prev = single_split.insert(&q.fact_ids[0], q.split);
            assert!(prev.is_none(), "seed {seed}: fact {} asked twice", q.fact_ids[0].0);
        }
        let forget_facts: BTreeSet<&FactId> = single_split
            .iter()
            .filter(|(_, s)| **s == Split::Forget)
            .map(|(f, _)| *f)
            .collect();
        let retain_facts: BTreeSet<&FactId> = single_split
            .iter()
            .filter(|(_, s)| s.is_retain())
            .map(|(f, _)| *f)
            .collect();
        assert!(
            forget_facts.is_disjoint(&retain_facts),
            "seed {seed}: forget/retain fact overlap"
        );

        // Pin rule: facts leaned on by many multi-hop questions stay
        // trainable, and mixed chains are classified as forget.
        let mut appearances: BTreeMap<&FactId, usize> = BTreeMap::new();
        for q in bundle.questions.iter().filter(|q| q.kind == QuestionKind::Multi) {
            for f in &q.fact_ids {
                *appearances.entry(f).or_insert(0) += 1;
            }
        }
        for (fact, &n) in &appearances {
            if n > cfg.max_pin_appearances {
                assert_eq!(
                    single_split[*fact],
                    Split::RetainTrain,
                    "seed {seed}: fact {} in {n} multi-hop questions not pinned",
                    fact.0
                );
            }
        }
        for q in bundle.questions.iter().filter(|q| q.kind == QuestionKind::Multi) {
            let touches_forget = q.fact_ids.iter().any(|f| forget_facts.contains(f));
            assert_eq!(
                q.split == Split::Forget,
                touches_forget,
                "seed {seed}: multi {} split {:?} vs forget contact {touches_forget}",
                q.id.0,
                q.split
            );
        }
    }
    pass("c04", "dataset invariants over seeded generations");
}

// ---------------------------------------------------------------------------
// Shared heavyweight fixtures. Everything below runs on the default
// experiment configuration, so these tests double as a check that the
// shipped defaults actually deliver the advertised behaviour.

struct Desk {
    cfg: ExperimentConfig,
    bundle: DatasetBundle,
    original: Model,
    memory: ForgetMemory,
    train_secs: f64,
    report: MetricsReport,
}

fn raw_report(desk_cfg: &ExperimentConfig, bundle: &DatasetBundle, original: &Model, memory: &ForgetMemory, unlearned: &Model, method: &str) -> MetricsReport {
    let ctx = EvalContext {
        bundle,
        original,
        unlearned,
        memory,
        pipeline_cfg: &desk_cfg.pipeline,
    };
    let meta = RunMeta {
        method: method.to_string(),
        forget_fraction: desk_cfg.gen.forget_fraction,
        seed: desk_cfg.gen.seed,
    };
    evaluate(&ctx, Pipeline::Raw, None, &meta).unwrap().report
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let bundle = DatasetBundle::generate(&cfg.gen).unwrap();
        let corpus = build_pretraining_corpus(
            &bundle,
            &cfg.corpus,
            cfg.arch.context_len,
            &vocab_extras(&cfg),
        )
        .unwrap();
        let started = Instant::now();
        let mut original = Model::init(cfg.arch, corpus.vocab.clone(), cfg.train.seed).unwrap();
        fit(&mut original, &corpus.examples, &cfg.train).unwrap();
        let train_secs = started.elapsed().as_secs_f64();
        let memory = ForgetMemory::from_bundle(&bundle, cfg.pipeline.similarity_threshold);
        let report = raw_report(&cfg, &bundle, &original, &memory, &original, "original");
        Desk { cfg, bundle, original, memory, train_secs, report }
    })
}

/// Unlearns from the desk original with the given method plus retain term,
/// then evaluates the result raw.
fn unlearn_with(method: UnlearnMethod, desk: &Desk) -> (UnlearnOutcome, MetricsReport) {
    let mut ucfg = desk.cfg.unlearn.clone();
    ucfg.method = method;
    ucfg.with_retain = true;
    let outcome = run_unlearning(&desk.original, &desk.bundle, &ucfg, None).unwrap();
    let label = format!("{method}+rt");
    let report =
        raw_report(&desk.cfg, &desk.bundle, &desk.original, &desk.memory, &outcome.model, &label);
    (outcome, report)
}

fn ga_rt() -> &'static (UnlearnOutcome, MetricsReport) {
    static GA_RT: OnceLock<(UnlearnOutcome, MetricsReport)> = OnceLock::new();
    GA_RT.get_or_init(|| unlearn_with(UnlearnMethod::Ga, desk()))
}

fn cell<'r>(report: &'r MetricsReport, split: &str, hops: &str) -> &'r ReportCell {
    report
        .cells
        .iter()
        .find(|c| c.split == split && c.hops == hops)
        .unwrap_or_else(|| panic!("no {split}/{hops} cell"))
}

// ---------------------------------------------------------------------------
// c05

#[test]
fn c05_default_scale_pretraining_reaches_the_quality_gate() {
    let desk = desk();
    // The advertised scale, pinned so a config drift cannot quietly shrink
    // the benchmark.
    assert_eq!(desk.cfg.gen.n_entities, 500);
    assert_eq!(desk.cfg.gen.n_facts, 2000);
    assert_eq!(desk.cfg.gen.n_chains, 800);
    assert_eq!(desk.cfg.gen.relations.len(), 6);
    assert!(
        desk.bundle.chains.iter().all(|c| (2..=3).contains(&c.hops())),
        "chains outside 2..=3 hops"
    );

    assert!(
        desk.train_secs < PRETRAIN_BUDGET_SECS,
        "pretraining took {:.0}s, budget {PRETRAIN_BUDGET_SECS}s",
        desk.train_secs
    );
    let single = cell(&desk.report, "retain", "single").pa;
    let multi = cell(&desk.report, "retain", "multi").pa;
    assert!(single >= PRETRAIN_SINGLE_PA, "retain single-hop PA {single}");
    assert!(multi >= PRETRAIN_MULTI_PA, "retain multi-hop PA {multi}");
    pass("c05", "default-scale pretraining gate");
}

// ---------------------------------------------------------------------------
// c06

#[test]
fn c06_unlearning_erases_single_hop_but_multi_hop_survives() {
    let desk = desk();
    let o_fs = cell(&desk.report, "forget", "single").pa;
    let o_fm = cell(&desk.report, "forget", "multi").pa;
    let o_rs = cell(&desk.report, "retain", "single").pa;

    let full_pattern = |label: &str, report: &MetricsReport| {
        let fs = cell(report, "forget", "single").pa;
        let fm = cell(report, "forget", "multi").pa;
        let rs = cell(report, "retain", "single").pa;
        assert!(
            fs <= o_fs - FORGET_SINGLE_MIN_DROP,
            "{label}: forget single-hop PA {fs} vs original {o_fs}, drop below {FORGET_SINGLE_MIN_DROP}"
        );
        assert!(
            (fm - o_fm).abs() <= FORGET_MULTI_BAND,
            "{label}: forget multi-hop PA {fm} left the {FORGET_MULTI_BAND}-point band around {o_fm}"
        );
        assert!(
            (rs - o_rs).abs() <= RETAIN_SINGLE_BAND,
            "{label}: retain single-hop PA {rs} left the {RETAIN_SINGLE_BAND}-point band around {o_rs}"
        );
    };

    let (_, ga_report) = ga_rt();
    full_pattern("ga+rt", ga_report);

    let (_, npo_report) = unlearn_with(UnlearnMethod::Npo, desk);
    full_pattern("npo+rt", &npo_report);

    let (_, dpo_report) = unlearn_with(UnlearnMethod::Dpo, desk);
    let rs = cell(&dpo_report, "retain", "single").pa;
    assert!(
        (rs - o_rs).abs() <= RETAIN_SINGLE_BAND,
        "dpo+rt: retain single-hop PA {rs} left the {RETAIN_SINGLE_BAND}-point band around {o_rs}"
    );

    pass("c06", "single-hop unlearning with multi-hop survival");
}

// ---------------------------------------------------------------------------
// c07

#[test]
fn c07_pipeline_closes_the_multi_hop_leak() {
    let desk = desk();
    let (ga, ga_report) = ga_rt();

    let forget_multis = desk.bundle.split_questions(Split::Forget, QuestionKind::Multi);
    let valid_multis = desk.bundle.split_questions(Split::RetainValid, QuestionKind::Multi);
    let mut dec = Decomposer::from_mode(&desk.cfg.pipeline.decomposer).unwrap();
    let forget_scores = collect_max_scores(
        &desk.original,
        &ga.model,
        &forget_multis,
        &mut dec,
        &desk.memory,
        &desk.cfg.pipeline,
    )
    .unwrap();
    let retain_scores = collect_max_scores(
        &desk.original,
        &ga.model,
        &valid_multis,
        &mut dec,
        &desk.memory,
        &desk.cfg.pipeline,
    )
    .unwrap();
    let cal = calibrate_threshold(&forget_scores, &retain_scores).unwrap();
    assert!(
        cal.balanced_error <= CALIBRATION_MAX_BALANCED_ERROR,
        "calibration balanced error {:.3}",
        cal.balanced_error
    );

    let ctx = EvalContext {
        bundle: &desk.bundle,
        original: &desk.original,
        unlearned: &ga.model,
        memory: &desk.memory,
        pipeline_cfg: &desk.cfg.pipeline,
    };
    let meta = RunMeta {
        method: "ga+rt".to_string(),
        forget_fraction: desk.cfg.gen.forget_fraction,
        seed: desk.cfg.gen.seed,
    };
    let report = evaluate(&ctx, Pipeline::Munch, Some(cal.tau), &meta).unwrap().report;
    let fm = cell(&report, "forget", "multi").pa;
    let rm = cell(&report, "retain", "multi").pa;
    let pre = cell(ga_report, "retain", "multi").pa;
    assert!(fm < PIPELINE_FORGET_MULTI_MAX, "forget multi-hop exact-match PA {fm}");
    assert!(
        rm >= PIPELINE_RETAIN_KEEP_FRACTION * pre,
        "retain multi-hop PA {rm} fell below {PIPELINE_RETAIN_KEEP_FRACTION} of pre-pipeline {pre}"
    );
    pass("c07", "pipeline closes the multi-hop leak");
}

// ---------------------------------------------------------------------------
// c08

#[test]
fn c08_forget_multi_hop_pa_is_monotone_in_tau() {
    let desk = desk();
    let (ga, _) = ga_rt();
    let forget_multis = desk.bundle.split_questions(Split::Forget, QuestionKind::Multi);
    let valid_multis = desk.bundle.split_questions(Split::RetainValid, QuestionKind::Multi);

    // Observed score range, padded so the sweep covers reject-nothing
    // through reject-everything-ungated.
    let mut dec = Decomposer::from_mode(&desk.cfg.pipeline.decomposer).unwrap();
    let mut scores = collect_max_scores(
        &desk.original,
        &ga.model,
        &forget_multis,
        &mut dec,
        &desk.memory,
        &desk.cfg.pipeline,
    )
    .unwrap();
    scores.extend(
        collect_max_scores(
            &desk.original,
            &ga.model,
            &valid_multis,
            &mut dec,
            &desk.memory,
            &desk.cfg.pipeline,
        )
        .unwrap(),
    );
    let finite: Vec<f64> = scores.into_iter().filter(|s| s.is_finite()).collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5;
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let taus: Vec<f64> = (0..TAU_SWEEP_POINTS)
        .map(|i| hi - (hi - lo) * i as f64 / (TAU_SWEEP_POINTS - 1) as f64)
        .collect();

    let mut last = f64::INFINITY;
    for &tau in &taus {
        let mut hits: Vec<(&str, f64)> = Vec::new();
        for item in &forget_multis {
            let trace = run_munch(
                &desk.original,
                &ga.model,
                item,
                &mut dec,
                &desk.memory,
                tau,
                &desk.cfg.pipeline,
            )
            .unwrap();
            let hit = trace.verdict == Verdict::Answer
                && trace.final_text.to_lowercase() == item.answer.to_lowercase();
            hits.push((item_relation(&desk.bundle, item).unwrap(), if hit { 1.0 } else { 0.0 }));
        }
        let mut per_rel: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for (rel, h) in hits {
            let e = per_rel.entry(rel).or_insert((0.0, 0));
            e.0 += h;
            e.1 += 1;
        }
        let pa = 100.0 * per_rel.values().map(|&(s, n)| s / n as f64).sum::<f64>()
            / per_rel.len() as f64;
        assert!(
            pa <= last + 1e-9,
            "forget multi-hop PA rose from {last} to {pa} as tau tightened to {tau}"
        );
        last = pa;
    }
    pass("c08", "threshold monotonicity");
}

// ---------------------------------------------------------------------------
// c09

#[test]
fn c09_pure_ascent_collapses_retain_performance() {
    let desk = desk();
    let mut ucfg = desk.cfg.unlearn.clone();
    ucfg.method = UnlearnMethod::Ga;
    ucfg.with_retain = false;
    ucfg.early_stop = None;
    ucfg.train.epochs = ucfg.train.epochs.max(COLLAPSE_MIN_EPOCHS);
    let outcome = run_unlearning(&desk.original, &desk.bundle, &ucfg, None).unwrap();
    assert!(
        outcome.epochs_run >= COLLAPSE_MIN_EPOCHS,
        "pure ascent completed only {} epochs",
        outcome.epochs_run
    );

    let report =
        raw_report(&desk.cfg, &desk.bundle, &desk.original, &desk.memory, &outcome.model, "ga");
    let collapsed = cell(&report, "retain", "single").pa;
    let original = cell(&desk.report, "retain", "single").pa;
    assert!(
        collapsed < COLLAPSE_RETAIN_FACTOR * original,
        "retain single-hop PA {collapsed} did not fall below {COLLAPSE_RETAIN_FACTOR} of {original}"
    );
    pass("c09", "retain collapse under pure ascent");
}

// ---------------------------------------------------------------------------
// c10 / c11

struct SweepArtifacts {
    tsv: Vec<u8>,
    json: Vec<u8>,
    rows: Vec<AggregateRow>,
}

/// The shipped default configuration at a single seed, with the unlearning
/// budget deepened for the sweep. Smaller bundles would distort the fixture
/// twice over: a 1% fraction leaves so few forget questions that one rank
/// flip moves the per-relation macro PA by double digits, and a lightly
/// trained model shifts the unlearning dose-response per fraction. The
/// sweep pretrains once per seed, so default scale stays affordable.
///
/// The deeper budget (20 epochs, no early stop) is what makes forgetting
/// depth comparable across fractions. At the report default of 6 epochs the
/// damage is dominated by shared-representation wear, which grows with the
/// optimizer step count and therefore with the forget-set size: depth then
/// tracks the fraction. Run to saturation instead and every fraction's
/// forget set approaches its floor, where per-fact repetition dominates and
/// the cells converge. The collapse brake is dropped for the same reason:
/// it trips on total damage, so it would cap the largest fraction early
/// while smaller ones run free, re-opening the gap the long budget closes.
fn sweep_config(root: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.paths.dataset = root.join("run/dataset.json");
    cfg.paths.checkpoints = root.join("run/checkpoints");
    cfg.paths.reports = root.join("run/reports");
    cfg.paths.manifest = root.join("run/manifest.json");
    cfg.seeds = vec![0];
    cfg.unlearn.train.epochs = 20;
    cfg.unlearn.early_stop = None;
    cfg.validate().unwrap();
    assert_eq!(cfg.sweep_fractions, vec![0.01, 0.05, 0.10]);
    cfg
}

fn run_sweep() -> SweepArtifacts {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep_config(dir.path());
    let tsv_path = cmd_sweep(&cfg, None).unwrap();
    let tsv = std::fs::read(&tsv_path).unwrap();
    let json = std::fs::read(tsv_path.with_extension("json")).unwrap();
    let rows: Vec<AggregateRow> = serde_json::from_slice(&json).unwrap();
    SweepArtifacts { tsv, json, rows }
}

fn sweeps() -> &'static (SweepArtifacts, SweepArtifacts) {
    static SWEEPS: OnceLock<(SweepArtifacts, SweepArtifacts)> = OnceLock::new();
    SWEEPS.get_or_init(|| (run_sweep(), run_sweep()))
}

#[test]
fn c10_fraction_sweep_completes_with_stable_single_hop_forgetting() {
    let (a, _) = sweeps();
    // 3 methods x 3 fractions x 4 cells.
    assert_eq!(a.rows.len(), 36, "aggregate row count");
    assert!(!a.tsv.is_empty());

    for method in ["ga+rt", "dpo+rt", "npo+rt"] {
        let pas: Vec<f64> = a
            .rows
            .iter()
            .filter(|r| r.method == method && r.split == "forget" && r.hops == "single")
            .map(|r| r.pa)
            .collect();
        assert_eq!(pas.len(), 3, "{method}: expected one row per fraction");
        let spread = pas.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - pas.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            spread <= SWEEP_FORGET_SINGLE_SPREAD,
            "{method}: forget single-hop PA spread {spread} across fractions {pas:?}"
        );
    }
    pass("c10", "fraction sweep scaling");
}

#[test]
fn c11_sweeps_are_byte_identical_across_runs() {
    let (a, b) = sweeps();
    assert_eq!(a.tsv, b.tsv, "aggregate TSVs differ between identical sweep runs");
    assert_eq!(a.json, b.json, "aggregate JSONs differ between identical sweep runs");
    pass("c11", "end-to-end determinism");
}
