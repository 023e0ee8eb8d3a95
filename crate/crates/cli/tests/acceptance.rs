//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every check prints exactly one `[PASS]` or `[FAIL]` line, even when the
//! suite succeeds. Exits non-zero if any check fails.

use std::fs;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng as _;

use coherseg::augment::{
    augment_document, AugmentConfig, AugmentedDocument, DonorPool, Draft, TopicBlock,
};
use coherseg::corpus::{synth_corpus, Document, Sentence, SynthConfig};
use coherseg::gradcheck::run_gradcheck;
use coherseg::infer::{ensemble_score, sweep_threshold, threshold_grid, ScoredDoc};
use coherseg::losses::{loss_cssl, loss_ts, loss_tssp, CsslReduction};
use coherseg::metrics::{default_window, pk, window_diff, MetricReport};
use coherseg::pairs::{build_pairs, CsslConfig, PairSet};
use coherseg::rng::{stream, Rng};
use coherseg::train::EpochLog;

type Outcome = Result<String, String>;
type Check = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let checks: [Check; 8] = [
        ("relation labels of the worked example", Duration::from_secs(1), relation_labels),
        ("losses match brute-force evaluation", Duration::from_secs(10), loss_values),
        ("analytic gradients match finite differences", Duration::from_secs(60), gradients),
        ("Pk and WindowDiff match definitional oracles", Duration::from_secs(60), metric_oracles),
        ("auxiliary objectives improve Pk and F1", Duration::from_secs(300), ablation),
        ("augmentation statistics", Duration::from_secs(30), augmentation_statistics),
        ("ensemble score and threshold grid", Duration::from_secs(1), ensemble),
        ("determinism and checkpoint round trip", Duration::from_secs(120), determinism),
    ];
    let mut failed = 0;
    let mut stderr = std::io::stderr();
    for (i, (name, budget, check)) in checks.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > budget => Err(format!("took {elapsed:.1?}, budget {budget:?}")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        let _ = writeln!(
            stderr,
            "[{tag}] criterion {}: {name} ({:.2}s) — {detail}",
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        let _ = writeln!(stderr, "{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// 1. Relation labels

fn sentence(tok: &str) -> Sentence {
    Sentence::from_tokens([tok])
}

fn relation_labels() -> Outcome {
    // Host: topic A = s1 s2 s3, topic B = s4 s5, topic C = s6 s7 s8.
    // Donor: a single topic d1 d2 d3 d4.
    let host = Document::new(
        "host",
        ["s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8"].map(sentence).to_vec(),
        vec![0, 0, 0, 1, 1, 2, 2, 2],
    )
    .map_err(|e| e.to_string())?;
    let donor = Document::new("donor", ["d1", "d2", "d3", "d4"].map(sentence).to_vec(), vec![0; 4])
        .map_err(|e| e.to_string())?;

    let host_blocks = Draft::from_document(&host).blocks;
    let donor_block = Draft::from_document(&donor).blocks.remove(0);
    let permute = |b: &TopicBlock, order: &[usize]| TopicBlock {
        sentences: order.iter().map(|&i| b.sentences[i].clone()).collect(),
    };
    // Topic order B, A, C; C replaced by the donor topic; sentences inside A
    // reordered to s2 s1 s3 and inside the donor topic to d1 d2 d4 d3.
    let draft = Draft {
        doc_id: "host".into(),
        blocks: vec![
            permute(&host_blocks[1], &[0, 1]),
            permute(&host_blocks[0], &[1, 0, 2]),
            permute(&donor_block, &[0, 1, 3, 2]),
        ],
    };
    let aug = AugmentedDocument::from_draft(draft);
    let order: Vec<&str> = aug.sentences.iter().map(|s| s.tokens[0].as_str()).collect();
    ensure!(
        order == ["s4", "s5", "s2", "s1", "s3", "d1", "d2", "d4", "d3"],
        "unexpected sentence order {order:?}"
    );
    let expected = [1, 0, 2, 2, 0, 1, 2, 2];
    ensure!(aug.tssp_labels == expected, "labels {:?}, expected {expected:?}", aug.tssp_labels);
    Ok(format!("labels {:?}", aug.tssp_labels))
}

// ---------------------------------------------------------------------------
// 2. Loss values

fn oracle_bce(probs: &[f64], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    total
}

fn oracle_ce(rows: &[[f64; 3]], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        for (j, &p) in row.iter().enumerate() {
            let target = if j == y as usize { 1.0 } else { 0.0 };
            if target > 0.0 {
                total -= target * p.ln();
            }
        }
    }
    total
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn oracle_contrastive(reps: &[Vec<f64>], pairs: &[PairSet], tau: f64) -> f64 {
    let mut total = 0.0;
    for ps in pairs {
        if ps.positives.is_empty() {
            continue;
        }
        let h = &reps[ps.anchor];
        let mut pos = 0.0;
        for &j in &ps.positives {
            pos += (oracle_cos(h, &reps[j]) / tau).exp();
        }
        let mut neg = 0.0;
        for &j in &ps.negatives {
            neg += (oracle_cos(h, &reps[j]) / tau).exp();
        }
        total -= (pos / (pos + neg)).ln();
    }
    total
}

fn random_doc(n: usize, rng: &mut Rng) -> Document {
    let mut topic = 0;
    let mut topic_of = Vec::new();
    for i in 0..n {
        if i > 0 && rng.random_bool(0.35) {
            topic += 1;
        }
        topic_of.push(topic);
    }
    let sentences = (0..n).map(|i| sentence(&format!("w{i}"))).collect();
    Document::new("r", sentences, topic_of).unwrap()
}

fn loss_values() -> Outcome {
    let mut rng = stream(2024, "acceptance/losses", 0);
    let mut worst = [0.0f64; 3];
    for _ in 0..200 {
        let n = rng.random_range(1..=12);
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let got = loss_ts(&probs, &labels).map_err(|e| e.to_string())?.0;
        worst[0] = worst[0].max((got - oracle_bce(&probs, &labels)).abs());

        let rows: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let a = rng.random_range(0.01..1.0);
                let b = rng.random_range(0.01..1.0);
                let c = rng.random_range(0.01..1.0);
                let s = a + b + c;
                [a / s, b / s, c / s]
            })
            .collect();
        let labels3: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let got = loss_tssp(&rows, &labels3).map_err(|e| e.to_string())?.0;
        worst[1] = worst[1].max((got - oracle_ce(&rows, &labels3)).abs());

        let m = rng.random_range(2..=14);
        let d = rng.random_range(2..=8);
        let doc = random_doc(m, &mut rng);
        let cfg = CsslConfig {
            k1: rng.random_range(1..=3),
            k2: rng.random_range(0..=4),
            tau: rng.random_range(0.05..1.0),
        };
        let pairs = build_pairs(&doc, &cfg);
        let reps: Vec<Vec<f64>> =
            (0..m).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let got = loss_cssl(&reps, &pairs, cfg.tau, CsslReduction::Sum).map_err(|e| e.to_string())?.0;
        worst[2] = worst[2].max((got - oracle_contrastive(&reps, &pairs, cfg.tau)).abs());
    }
    ensure!(worst.iter().all(|&w| w < 1e-10), "max abs errors (ts, tssp, cssl) {worst:?}");

    // Three unit vectors at 0°, 30° and 120°; the first two share a topic.
    let angle = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
    let reps = vec![angle(0.0), angle(30.0), angle(120.0)];
    let doc = Document::new("f", ["a", "b", "c"].map(sentence).to_vec(), vec![0, 0, 1]).unwrap();
    let pairs = build_pairs(&doc, &CsslConfig { k1: 1, k2: 1, tau: 0.1 });
    let got = loss_cssl(&reps, &pairs, 0.1, CsslReduction::Sum).map_err(|e| e.to_string())?.0;
    let want = oracle_contrastive(&reps, &pairs, 0.1);
    ensure!((got - want).abs() < 1e-10, "angle fixture {got} vs {want}");

    let ln2 = loss_ts(&[0.5], &[1]).unwrap().0;
    let third = 1.0 / 3.0;
    let ln3 = loss_tssp(&[[third, third, third]], &[1]).unwrap().0;
    let same = vec![vec![0.3, -0.4, 1.2]; 5];
    let uniform = [PairSet { anchor: 0, positives: vec![1], negatives: vec![2, 3, 4] }];
    let ln4 = loss_cssl(&same, &uniform, 0.1, CsslReduction::Sum).unwrap().0;
    for (got, want, name) in [
        (ln2, 2f64.ln(), "ln 2"),
        (ln3, 3f64.ln(), "ln 3"),
        (ln4, 4f64.ln(), "ln 4"),
    ] {
        ensure!((got - want).abs() < 1e-12, "{name}: got {got}");
    }
    Ok(format!("max abs errors ts {:.1e}, tssp {:.1e}, cssl {:.1e}", worst[0], worst[1], worst[2]))
}

// ---------------------------------------------------------------------------
// 3. Gradients

fn gradients() -> Outcome {
    let report = run_gradcheck(7, 100);
    let mut parts = Vec::new();
    for c in &report.checks {
        let limit = if c.name == "end_to_end" { 1e-3 } else { 1e-4 };
        ensure!(c.trials == 100, "{} ran {} trials", c.name, c.trials);
        ensure!(c.max_rel_error < limit, "{} max rel error {:e}", c.name, c.max_rel_error);
        parts.push(format!("{} {:.1e}", c.name, c.max_rel_error));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------------
// 4. Metrics

/// Segment id of every sentence: the number of boundaries before it.
fn segment_ids(labels: &[u8]) -> Vec<usize> {
    let mut ids = vec![0];
    for &y in labels {
        ids.push(ids.last().unwrap() + y as usize);
    }
    ids
}

fn oracle_pk(r: &[u8], h: &[u8], k: usize) -> f64 {
    let (sr, sh) = (segment_ids(r), segment_ids(h));
    let n = sr.len();
    let mut miss = 0;
    for i in 0..n - k {
        if (sr[i] == sr[i + k]) != (sh[i] == sh[i + k]) {
            miss += 1;
        }
    }
    miss as f64 / (n - k) as f64
}

fn oracle_wd(r: &[u8], h: &[u8], k: usize) -> f64 {
    let (sr, sh) = (segment_ids(r), segment_ids(h));
    let n = sr.len();
    let mut miss = 0;
    for i in 0..n - k {
        if sr[i + k] - sr[i] != sh[i + k] - sh[i] {
            miss += 1;
        }
    }
    miss as f64 / (n - k) as f64
}

fn bits(x: u32, len: usize) -> Vec<u8> {
    (0..len).map(|i| ((x >> i) & 1) as u8).collect()
}

fn compare(r: &[u8], h: &[u8], k: usize) -> Result<(), String> {
    let got = (pk(r, h, k).map_err(|e| e.to_string())?, window_diff(r, h, k).map_err(|e| e.to_string())?);
    let want = (oracle_pk(r, h, k), oracle_wd(r, h, k));
    ensure!(got == want, "ref {r:?} hyp {h:?} k {k}: got {got:?}, oracle {want:?}");
    ensure!(
        pk(r, r, k).unwrap() == 0.0 && window_diff(r, r, k).unwrap() == 0.0,
        "non-zero self score for {r:?}, k {k}"
    );
    Ok(())
}

fn metric_oracles() -> Outcome {
    let mut exhaustive = 0;
    for len in 1..=8usize {
        for a in 0..1u32 << len {
            for b in 0..1u32 << len {
                let (r, h) = (bits(a, len), bits(b, len));
                for k in 1..=3.min(len) {
                    compare(&r, &h, k)?;
                    exhaustive += 1;
                }
            }
        }
    }
    let mut rng = stream(2024, "acceptance/metrics", 0);
    for trial in 0..1000 {
        let len = rng.random_range(1..50usize);
        let density = rng.random_range(0.05..0.6);
        let r: Vec<u8> = (0..len).map(|_| u8::from(rng.random_bool(density))).collect();
        let h: Vec<u8> = (0..len).map(|_| u8::from(rng.random_bool(density))).collect();
        let k = if trial % 2 == 0 { default_window(&r) } else { rng.random_range(1..=len) };
        compare(&r, &h, k)?;
    }
    Ok(format!("{exhaustive} exhaustive cases and 1000 random instances agree exactly"))
}

// ---------------------------------------------------------------------------
// 5. Ablation

fn ablation() -> Outcome {
    use coherseg::infer::{evaluate_model, Mode, DEFAULT_THRESHOLD};
    use coherseg::train::{train, TrainConfig};

    let corpus = |n_docs, seed| synth_corpus(&SynthConfig { n_docs, seed, ..Default::default() });
    let mut sums = [[0.0f64; 2]; 2];
    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        let train_docs = corpus(500, 1000 + seed).map_err(|e| e.to_string())?;
        let dev = corpus(100, 2000 + seed).map_err(|e| e.to_string())?;
        let test = corpus(100, 3000 + seed).map_err(|e| e.to_string())?;
        for (arm, alpha) in [0.0, 0.5].into_iter().enumerate() {
            let cfg = TrainConfig { alpha1: alpha, alpha2: alpha, seed, ..Default::default() };
            let out = train(&train_docs, &dev, &cfg).map_err(|e| e.to_string())?;
            let m = evaluate_model(&out.params, &test, Mode::Prob, DEFAULT_THRESHOLD, cfg.max_sentences)
                .map_err(|e| e.to_string())?;
            sums[arm][0] += m.pk / 3.0;
            sums[arm][1] += m.f1 / 3.0;
            per_seed.push(format!("s{seed}/{arm}: pk {:.3} f1 {:.3}", m.pk, m.f1));
        }
    }
    let [[base_pk, base_f1], [aux_pk, aux_f1]] = sums;
    let summary = format!(
        "mean Pk {base_pk:.4} -> {aux_pk:.4}, mean F1 {base_f1:.4} -> {aux_f1:.4} [{}]",
        per_seed.join("; ")
    );
    ensure!(aux_pk < base_pk && aux_f1 > base_f1, "{summary}");
    Ok(summary)
}

// ---------------------------------------------------------------------------
// 6. Augmentation statistics

fn augmentation_statistics() -> Outcome {
    let docs = synth_corpus(&SynthConfig { n_docs: 500, seed: 77, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let pool = DonorPool::new(&docs);
    let (mut replaced, mut topics, mut runs) = (0usize, 0usize, 0usize);
    for round in 0..20 {
        let cfg = AugmentConfig { p1: 0.5, p2: 0.5, shuffle_sentences: true, seed: round };
        for d in &docs {
            let aug = augment_document(d, &pool, &cfg).map_err(|e| e.to_string())?;
            runs += 1;
            for t in 0..=*aug.topic_of.last().unwrap() {
                let first = aug.topic_of.iter().position(|&x| x == t).unwrap();
                topics += 1;
                if aug.provenance[first].src_doc_id != d.doc_id() {
                    replaced += 1;
                }
            }
        }
    }
    let frac = replaced as f64 / topics as f64;
    ensure!(runs == 10_000, "ran {runs} augmentations");
    ensure!((0.23..=0.27).contains(&frac), "replaced-topic fraction {frac:.4}");

    let keep = AugmentConfig { p1: 0.0, p2: 0.5, shuffle_sentences: true, seed: 3 };
    for d in &docs {
        let aug = augment_document(d, &pool, &keep).map_err(|e| e.to_string())?;
        let mut got: Vec<&Vec<String>> = aug.sentences.iter().map(|s| &s.tokens).collect();
        let mut want: Vec<&Vec<String>> = d.sentences().iter().map(|s| &s.tokens).collect();
        got.sort();
        want.sort();
        ensure!(got == want, "p1 = 0 changed the sentences of {}", d.doc_id());
    }
    Ok(format!(
        "replaced-topic fraction {frac:.4} over {runs} augmentations; p1 = 0 keeps all {} documents' sentences",
        docs.len()
    ))
}

// ---------------------------------------------------------------------------
// 7. Ensemble

fn ensemble() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let prob = i as f64 / 9.0;
            let sim = -1.0 + 2.0 * j as f64 / 9.0;
            let direct = 0.5 * (prob + 1.0 / (1.0 + sim.exp()));
            worst = worst.max((ensemble_score(prob, sim) - direct).abs());
        }
    }
    ensure!(worst < 1e-12, "max deviation {worst:e}");
    ensure!((ensemble_score(1.0, 0.0) - 0.75).abs() < 1e-12, "Score(1, 0) = {}", ensemble_score(1.0, 0.0));

    let grid = threshold_grid();
    ensure!(grid.len() == 21, "grid has {} points", grid.len());
    for (i, &t) in grid.iter().enumerate() {
        ensure!((t - 0.05 * i as f64).abs() < 1e-12, "grid point {i} is {t}");
    }
    ensure!(grid[0] == 0.0 && grid[20] == 1.0, "grid ends {} and {}", grid[0], grid[20]);

    // Thresholds in (0.3, 0.7] all separate these probabilities perfectly;
    // the smallest grid point among them must win.
    let scored = ScoredDoc {
        doc_id: "t".into(),
        probs: vec![0.7, 0.3, 0.7],
        sims: vec![0.0; 3],
        mask: None,
    };
    let (t, f1) = sweep_threshold(&[(scored, vec![1, 0, 1])], coherseg::infer::Mode::Prob)
        .map_err(|e| e.to_string())?;
    ensure!((t - 0.35).abs() < 1e-12 && f1 == 1.0, "sweep picked {t} with f1 {f1}");
    Ok(format!("max deviation {worst:.1e} on 100 points; 21-point grid; sweep picked {t}"))
}

// ---------------------------------------------------------------------------
// 8. Determinism

fn cli(args: &[&str]) -> Result<(String, String), String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("coherseg").chain(["--threads", "1"]).chain(args.iter().copied());
    let code = coherseg_cli::run(argv, &mut out, &mut err);
    let (out, err) = (String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned());
    ensure!(code == 0, "coherseg {} exited {code}: {err}", args.join(" "));
    Ok((out, err))
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name);
    let s = |name: &str| p(name).to_string_lossy().into_owned();

    for run in ["a", "b"] {
        cli(&["synth", "--out", &s(&format!("train-{run}.jsonl")), "--n-docs", "120", "--seed", "11"])?;
        cli(&["synth", "--out", &s(&format!("dev-{run}.jsonl")), "--n-docs", "30", "--seed", "12"])?;
    }
    ensure!(read(&p("train-a.jsonl"))? == read(&p("train-b.jsonl"))?, "synth outputs differ");
    ensure!(read(&p("dev-a.jsonl"))? == read(&p("dev-b.jsonl"))?, "synth outputs differ");

    let mut train_err = String::new();
    for run in ["a", "b"] {
        let (_, err) = cli(&[
            "train", "--corpus", &s("train-a.jsonl"), "--dev", &s("dev-a.jsonl"),
            "--model", &s(&format!("model-{run}.json")), "--epochs", "4", "--seed", "5",
        ])?;
        train_err = err;
    }
    ensure!(read(&p("model-a.json"))? == read(&p("model-b.json"))?, "checkpoints differ");
    ensure!(
        read(&p("model-a.json.log.jsonl"))? == read(&p("model-b.json.log.jsonl"))?,
        "training logs differ"
    );

    // The printed config alone reproduces the run.
    let printed: String = train_err.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let replay = printed.replace(&s("model-b.json"), &s("model-c.json"));
    fs::write(p("replay.toml"), replay).map_err(|e| e.to_string())?;
    cli(&["train", "--config", &s("replay.toml")])?;
    ensure!(read(&p("model-a.json"))? == read(&p("model-c.json"))?, "replayed config gives a different checkpoint");

    for run in ["a", "b"] {
        cli(&["segment", "--model", &s("model-a.json"), "--corpus", &s("dev-a.jsonl"), "--out", &s(&format!("pred-{run}.jsonl"))])?;
        cli(&["segment", "--model", &s("model-a.json"), "--corpus", &s("dev-a.jsonl"), "--mode", "ensemble", "--out", &s(&format!("ens-{run}.jsonl"))])?;
    }
    ensure!(read(&p("pred-a.jsonl"))? == read(&p("pred-b.jsonl"))?, "predictions differ");
    ensure!(read(&p("ens-a.jsonl"))? == read(&p("ens-b.jsonl"))?, "ensemble predictions differ");

    // Dev scores of the reloaded checkpoint equal the last logged ones.
    let (report, _) = cli(&["eval", "--corpus", &s("dev-a.jsonl"), "--predictions", &s("pred-a.jsonl")])?;
    let report: MetricReport = serde_json::from_str(report.trim()).map_err(|e| e.to_string())?;
    let log = String::from_utf8(read(&p("model-a.json.log.jsonl"))?).map_err(|e| e.to_string())?;
    let last: EpochLog = serde_json::from_str(log.lines().last().unwrap_or("")).map_err(|e| e.to_string())?;
    ensure!(log.lines().count() == 4, "log has {} entries", log.lines().count());
    ensure!(last.dev.as_ref() == Some(&report), "reloaded dev metrics {report:?} vs logged {:?}", last.dev);
    Ok(format!("byte-identical reruns; reloaded dev Pk {:.4}, F1 {:.4} match the log", report.pk, report.f1))
}
