//! Independent reference implementations and check runners.
//!
//! Everything here deliberately avoids the production code paths it verifies:
//! gradients are checked against central finite differences, the CTC loss
//! against exhaustive alignment enumeration, prefix beam search against
//! exhaustive path enumeration, and edit distance against the textbook
//! recursion. The `selftest` CLI subcommand and the acceptance suite both run
//! these.

use rand::Rng;

use crate::decode::{ctc_prefix_beam_search, edit_distance, DecodeConfig};
use crate::error::Result;
use crate::losses::ctc_loss;
use crate::rng::{derive, Stream};
use crate::tensor::{Scalar, Tape, Tensor};

/// Outcome of one check suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest error observed, when the suite measures one.
    pub max_err: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} {:>4} cases  {:>2} failures  max err {:.3e}  [{}]",
            self.name,
            self.cases,
            self.failures,
            self.max_err,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

// ---------------------------------------------------------------------------
// finite differences

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + step;
        let fp = f(&xp);
        xp[i] = orig - step;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Relative error with a floor on the denominator, so near-zero gradients are
/// compared absolutely at the floor's scale.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A differentiable-graph builder usable at either precision. Implemented by
/// the gradient-check drivers; `build` must construct a scalar loss from
/// the leaf tensors handed to it.
pub trait LossGraph {
    fn build<T: Scalar>(&self, tape: &Tape<T>, inputs: &[Tensor<T>]) -> Result<Tensor<T>>;
}

/// Check one graph's analytic gradient against finite differences.
///
/// The analytic gradient is computed at precision `T`; the finite-difference
/// reference always runs the same graph at `f64`. `inputs` are
/// `(data, shape)` pairs; every input is checked.
pub fn check_gradient<T: Scalar, G: LossGraph>(
    graph: &G,
    inputs: &[(Vec<f64>, Vec<usize>)],
    step: f64,
    tol: f64,
    floor: f64,
) -> Result<f64> {
    // analytic at precision T
    let tape: Tape<T> = Tape::new();
    let leaves: Vec<Tensor<T>> = inputs
        .iter()
        .map(|(d, s)| {
            tape.tensor(d.iter().map(|&v| T::from_f64(v)).collect(), s, true)
        })
        .collect::<Result<_>>()?;
    let loss = graph.build(&tape, &leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| {
            l.grad()
                .map(|g| g.iter().map(|v| v.to_f64()).collect())
                .unwrap_or_else(|| vec![0.0; l.numel()])
        })
        .collect();

    // finite differences at f64 on the same graph
    let mut worst: f64 = 0.0;
    for (which, (data, _shape)) in inputs.iter().enumerate() {
        let mut eval = |x: &[f64]| -> f64 {
            let tape: Tape<f64> = Tape::new();
            let leaves: Vec<Tensor<f64>> = inputs
                .iter()
                .enumerate()
                .map(|(i, (d, s))| {
                    let src = if i == which { x } else { d.as_slice() };
                    tape.tensor(src.to_vec(), s, true).unwrap()
                })
                .collect();
            graph.build(&tape, &leaves).unwrap().item()
        };
        let fd = finite_difference(&mut eval, data, step);
        for (a, n) in analytic[which].iter().zip(&fd) {
            let e = rel_err(*a, *n, floor);
            if e > worst {
                worst = e;
            }
            if e > tol {
                return Err(crate::Error::Numeric(format!(
                    "gradient mismatch on input {which}: analytic {a:.8e} vs finite-diff {n:.8e} (rel {e:.3e} > {tol:.1e})"
                )));
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// CTC brute force

/// Collapse a frame-level path: remove repeats, then blanks.
pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &p in path {
        if p != prev && p != blank {
            out.push(p);
        }
        prev = p;
    }
    out
}

/// Exhaustive CTC negative log-likelihood: sum the probability of every
/// frame-level path that collapses to `labels`. `log_probs` is `[t_len *
/// vocab]` row-major.
pub fn ctc_brute_force(log_probs: &[f64], vocab: usize, labels: &[usize], blank: usize) -> f64 {
    let t_len = log_probs.len() / vocab;
    let mut total = f64::NEG_INFINITY;
    let mut path = vec![0usize; t_len];
    loop {
        let collapsed = collapse_path(&path, blank);
        if collapsed == labels {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| log_probs[t * vocab + k])
                .sum();
            total = log_add(total, lp);
        }
        // odometer over vocab^t_len
        let mut t = 0;
        loop {
            if t == t_len {
                return -total;
            }
            path[t] += 1;
            if path[t] < vocab {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Random log-distribution rows.
fn random_log_probs(rng: &mut impl Rng, t_len: usize, vocab: usize) -> Vec<f64> {
    let mut rows = vec![0.0; t_len * vocab];
    for t in 0..t_len {
        let mut z = f64::NEG_INFINITY;
        for v in 0..vocab {
            let logit: f64 = rng.random_range(-2.0..2.0);
            rows[t * vocab + v] = logit;
            z = log_add(z, logit);
        }
        for v in 0..vocab {
            rows[t * vocab + v] -= z;
        }
    }
    rows
}

/// CTC loss vs brute-force enumeration on random small instances (64-bit).
pub fn run_ctc_oracle(cases: usize, seed: u64, tol: f64) -> SuiteResult {
    let mut rng = derive(seed, Stream::Oracle, &[1]);
    let mut failures = 0;
    let mut max_err: f64 = 0.0;
    for _ in 0..cases {
        let vocab = rng.random_range(2..=4usize);
        let t_len = rng.random_range(1..=6usize);
        let n_max = t_len.min(3);
        let n = rng.random_range(0..=n_max);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(1..vocab)).collect();
        let log_probs = random_log_probs(&mut rng, t_len, vocab);

        let required = crate::losses::ctc_min_input_len(&labels);
        let expected_feasible = t_len >= required;

        let tape: Tape<f64> = Tape::new();
        let lp = tape
            .tensor(log_probs.clone(), &[t_len, vocab], false)
            .unwrap();
        match ctc_loss(&lp, &labels, 0) {
            Ok(loss) => {
                let oracle = ctc_brute_force(&log_probs, vocab, &labels, 0);
                let err = (loss.item() - oracle).abs();
                max_err = max_err.max(err);
                if !expected_feasible || err > tol {
                    failures += 1;
                }
            }
            Err(_) => {
                if expected_feasible {
                    failures += 1;
                }
            }
        }
    }
    SuiteResult {
        name: "ctc-vs-brute-force".into(),
        cases,
        failures,
        max_err,
    }
}

// ---------------------------------------------------------------------------
// prefix beam search oracle

/// Exhaustively enumerate all `vocab^t_len` paths and aggregate collapsed-
/// sequence probabilities. Returns `(sequence, log prob)` pairs sorted by
/// descending probability with lexicographic tie-break.
pub fn enumerate_prefix_probs(
    log_probs: &[f64],
    vocab: usize,
    blank: usize,
) -> Vec<(Vec<usize>, f64)> {
    let t_len = log_probs.len() / vocab;
    let mut table: std::collections::BTreeMap<Vec<usize>, f64> = std::collections::BTreeMap::new();
    let mut path = vec![0usize; t_len];
    loop {
        let collapsed = collapse_path(&path, blank);
        let lp: f64 = path
            .iter()
            .enumerate()
            .map(|(t, &k)| log_probs[t * vocab + k])
            .sum();
        table
            .entry(collapsed)
            .and_modify(|e| *e = log_add(*e, lp))
            .or_insert(lp);
        let mut t = 0;
        loop {
            if t == t_len {
                let mut out: Vec<(Vec<usize>, f64)> = table.into_iter().collect();
                out.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .unwrap()
                        .then_with(|| a.0.cmp(&b.0))
                });
                return out;
            }
            path[t] += 1;
            if path[t] < vocab {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}

/// Prefix beam search with an all-covering beam vs exhaustive enumeration.
pub fn run_beam_oracle(cases: usize, seed: u64, tol: f64) -> SuiteResult {
    let mut rng = derive(seed, Stream::Oracle, &[2]);
    let mut failures = 0;
    let mut max_err: f64 = 0.0;
    for _ in 0..cases {
        let vocab = rng.random_range(2..=4usize);
        let t_len = rng.random_range(1..=5usize);
        let log_probs = random_log_probs(&mut rng, t_len, vocab);
        let oracle = enumerate_prefix_probs(&log_probs, vocab, 0);

        let cfg = DecodeConfig {
            beam_size: oracle.len(),
            ..DecodeConfig::default()
        };
        let hyps = ctc_prefix_beam_search(&log_probs, vocab, 0, &cfg);
        if hyps.len() != oracle.len() {
            failures += 1;
            continue;
        }
        let mut bad = false;
        for (h, (seq, lp)) in hyps.iter().zip(&oracle) {
            let err = (h.ctc_score - lp).abs();
            max_err = max_err.max(err);
            if h.syllables != *seq || err > tol {
                bad = true;
            }
        }
        if bad {
            failures += 1;
        }
    }
    SuiteResult {
        name: "beam-vs-enumeration".into(),
        cases,
        failures,
        max_err,
    }
}

// ---------------------------------------------------------------------------
// edit distance oracle

/// Textbook recursive Levenshtein distance (memoized).
pub fn levenshtein_recursive(a: &[usize], b: &[usize]) -> usize {
    fn rec(
        a: &[usize],
        b: &[usize],
        i: usize,
        j: usize,
        memo: &mut std::collections::HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let cost = usize::from(a[i - 1] != b[j - 1]);
        let v = (rec(a, b, i - 1, j, memo) + 1)
            .min(rec(a, b, i, j - 1, memo) + 1)
            .min(rec(a, b, i - 1, j - 1, memo) + cost);
        memo.insert((i, j), v);
        v
    }
    rec(a, b, a.len(), b.len(), &mut std::collections::HashMap::new())
}

pub fn run_edit_distance_oracle(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = derive(seed, Stream::Oracle, &[3]);
    let mut failures = 0;
    for _ in 0..cases {
        let la = rng.random_range(0..=6usize);
        let lb = rng.random_range(0..=6usize);
        let a: Vec<usize> = (0..la).map(|_| rng.random_range(0..3usize)).collect();
        let b: Vec<usize> = (0..lb).map(|_| rng.random_range(0..3usize)).collect();
        let counts = edit_distance(&a, &b);
        if counts.total() != levenshtein_recursive(&a, &b) {
            failures += 1;
        }
    }
    SuiteResult {
        name: "edit-distance-vs-recursion".into(),
        cases,
        failures,
        max_err: 0.0,
    }
}
