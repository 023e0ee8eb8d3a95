//! Baseline vs. auxiliary-objective training on synthetic corpora.
//!
//! ```text
//! cargo run --release -p coherseg --example ablation -- seeds=3 train.epochs=10 synth.noise_rate=0.3
//! ```
//!
//! `train.*` and `synth.*` keys override [`TrainConfig`] and [`SynthConfig`]
//! fields (values in TOML syntax).

use std::time::Instant;

use coherseg::corpus::{synth_corpus, SynthConfig};
use coherseg::infer::{evaluate_model, Mode, DEFAULT_THRESHOLD};
use coherseg::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut seeds = 3u64;
    let (mut train_toml, mut synth_toml) = (String::new(), String::new());
    for arg in std::env::args().skip(1) {
        let (key, value) = arg.split_once('=').ok_or("expected key=value")?;
        match key.split_once('.') {
            Some(("train", k)) => train_toml += &format!("{k} = {value}\n"),
            Some(("synth", k)) => synth_toml += &format!("{k} = {value}\n"),
            _ if key == "seeds" => seeds = value.parse()?,
            _ => return Err(format!("unknown key {key}").into()),
        }
    }
    let base: TrainConfig = toml::from_str(&train_toml)?;
    let synth: SynthConfig = toml::from_str(&synth_toml)?;
    let corpus = |n_docs, seed| synth_corpus(&SynthConfig { n_docs, seed, ..synth.clone() });

    let mut sums = [[0.0; 2]; 2];
    for seed in 0..seeds {
        let train_docs = corpus(500, 1000 + seed)?;
        let dev = corpus(100, 2000 + seed)?;
        let test = corpus(100, 3000 + seed)?;
        for (arm, (name, a1, a2)) in [("baseline", 0.0, 0.0), ("tssp+cssl", 0.5, 0.5)].into_iter().enumerate() {
            let cfg = TrainConfig { alpha1: a1, alpha2: a2, seed, ..base.clone() };
            let t = Instant::now();
            let out = train(&train_docs, &dev, &cfg)?;
            let m = evaluate_model(&out.params, &test, Mode::Prob, DEFAULT_THRESHOLD, cfg.max_sentences)?;
            let dev_pk: Vec<String> = out
                .log
                .iter()
                .map(|e| format!("{:.3}", e.dev.as_ref().map_or(f64::NAN, |d| d.pk)))
                .collect();
            println!(
                "seed {seed} {name:10} f1 {:.4} pk {:.4} wd {:.4} ({:.1}s) dev pk [{}]",
                m.f1,
                m.pk,
                m.wd,
                t.elapsed().as_secs_f64(),
                dev_pk.join(" ")
            );
            sums[arm][0] += m.f1;
            sums[arm][1] += m.pk;
        }
    }
    let n = seeds as f64;
    println!(
        "mean baseline f1 {:.4} pk {:.4} | tssp+cssl f1 {:.4} pk {:.4}",
        sums[0][0] / n,
        sums[0][1] / n,
        sums[1][0] / n,
        sums[1][1] / n
    );
    Ok(())
}
