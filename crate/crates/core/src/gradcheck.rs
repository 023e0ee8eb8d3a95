//! Randomized finite-difference checks of every analytic gradient.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Sentence};
use crate::losses::{finite_diff_check, loss_cssl, loss_ts, loss_tssp_unchecked, CsslReduction};
use crate::model::{example_loss, random_params, Dims, Example, LossWeights, ModelParams, SparseVec};
use crate::pairs::{build_pairs, CsslConfig};
use crate::rng::{stream, Rng};

pub const EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn run(name: &str, trials: usize, tolerance: f64, mut trial: impl FnMut() -> f64) -> CheckResult {
    let max_rel_error = (0..trials).map(|_| trial()).fold(0.0, f64::max);
    CheckResult {
        name: name.into(),
        trials,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    }
}

/// A random document of `n` one-token sentences with random contiguous topics.
pub fn random_topic_doc(n: usize, rng: &mut Rng) -> Document {
    let mut topic = 0u32;
    let mut topic_of = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random_bool(0.4) {
            topic += 1;
        }
        topic_of.push(topic);
    }
    let sentences = (0..n).map(|i| Sentence::from_tokens([format!("t{i}")])).collect();
    Document::new("gradcheck", sentences, topic_of).expect("valid by construction")
}

pub fn random_vec(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_features(n: usize, f: usize, rng: &mut Rng) -> Vec<SparseVec> {
    (0..n)
        .map(|_| {
            let dense: Vec<f64> = (0..f)
                .map(|_| if rng.random_bool(0.4) { rng.random_range(-1.0..1.0) } else { 0.0 })
                .collect();
            SparseVec::from_dense(&dense)
        })
        .collect()
}

pub fn check_loss_ts(rng: &mut Rng) -> f64 {
    let n = rng.random_range(1..=10);
    let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    finite_diff_check(|p| loss_ts(p, &labels).expect("lengths match"), &probs, EPSILON)
}

pub fn check_loss_tssp(rng: &mut Rng) -> f64 {
    let n = rng.random_range(1..=8);
    let mut flat = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        flat.extend(raw.iter().map(|x| x / s));
    }
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..3u8)).collect();
    finite_diff_check(
        |x| {
            let rows: Vec<[f64; 3]> = x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            let (l, g) = loss_tssp_unchecked(&rows, &labels);
            (l, g.concat())
        },
        &flat,
        EPSILON,
    )
}

pub fn check_loss_cssl(rng: &mut Rng) -> f64 {
    let n = rng.random_range(2..=12);
    let d = rng.random_range(2..=8);
    let doc = random_topic_doc(n, rng);
    let cfg = CsslConfig {
        k1: rng.random_range(1..=3),
        k2: rng.random_range(0..=4),
        tau: rng.random_range(0.1..1.0),
    };
    let pairs = build_pairs(&doc, &cfg);
    let x: Vec<f64> = random_vec(n * d, rng);
    finite_diff_check(
        |x| {
            let reps: Vec<Vec<f64>> = x.chunks(d).map(<[f64]>::to_vec).collect();
            let (l, g) = loss_cssl(&reps, &pairs, cfg.tau, CsslReduction::Sum).expect("valid");
            (l, g.concat())
        },
        &x,
        EPSILON,
    )
}

/// A small random training example and matching model dimensions.
pub fn random_example(rng: &mut Rng) -> (Dims, Example, LossWeights) {
    let dims = Dims {
        feature_dim: rng.random_range(8..=16),
        rep_dim: rng.random_range(2..=4),
        context_window: rng.random_range(0..=2),
    };
    let n = rng.random_range(2..=6);
    let doc = random_topic_doc(n, rng);
    let cfg = CsslConfig {
        k1: rng.random_range(1..=2),
        k2: rng.random_range(1..=3),
        tau: rng.random_range(0.2..1.0),
    };
    let n_aug = rng.random_range(2..=6);
    let ex = Example {
        doc_id: "gradcheck".into(),
        features: random_features(n, dims.feature_dim, rng),
        boundary_labels: doc.boundary_labels(),
        pairs: Some(build_pairs(&doc, &cfg)),
        augmented: Some((
            random_features(n_aug, dims.feature_dim, rng),
            (0..n_aug - 1).map(|_| rng.random_range(0..3u8)).collect(),
        )),
    };
    let weights = LossWeights {
        alpha1: rng.random_range(0.1..1.0),
        alpha2: rng.random_range(0.1..1.0),
        tau: cfg.tau,
        cssl_reduction: CsslReduction::Sum,
    };
    (dims, ex, weights)
}

pub fn check_end_to_end(rng: &mut Rng) -> f64 {
    let (dims, ex, weights) = random_example(rng);
    let params = random_params(dims, 0.5, rng);
    finite_diff_check(
        |flat| {
            let p = ModelParams::from_flat(dims, flat);
            let (report, grads) = example_loss(&p, &ex, &weights).expect("finite");
            (report.l_total, grads.to_flat())
        },
        &params.to_flat(),
        EPSILON,
    )
}

/// Runs `trials` random instances of every check. Tolerances: 1e-6 for the
/// boundary loss, 1e-4 for the other losses, 1e-3 end to end.
pub fn run_gradcheck(seed: u64, trials: usize) -> GradcheckReport {
    let checks = vec![
        run("loss_ts", trials, 1e-6, {
            let mut rng = stream(seed, "gradcheck/ts", 0);
            move || check_loss_ts(&mut rng)
        }),
        run("loss_tssp", trials, 1e-4, {
            let mut rng = stream(seed, "gradcheck/tssp", 0);
            move || check_loss_tssp(&mut rng)
        }),
        run("loss_cssl", trials, 1e-4, {
            let mut rng = stream(seed, "gradcheck/cssl", 0);
            move || check_loss_cssl(&mut rng)
        }),
        run("end_to_end", trials, 1e-3, {
            let mut rng = stream(seed, "gradcheck/e2e", 0);
            move || check_end_to_end(&mut rng)
        }),
    ];
    GradcheckReport { seed, checks }
}
