//! Randomized invariant suite behind the `verify` command.
//!
//! Every instance draws from its own generator, seeded with `seed + i`, so the
//! worst instance of a failing check can be replayed alone with `trials = 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    decgrc_gates, dual_weights, grc_gates, grc_recurse, gsa_context, inverse_dual,
    AttentionWeights, EncodedSequence, GateSequence, ScoreRow,
};
use crate::error::{Error, Result};
use crate::mechanism::AttentionKind;
use crate::model::{Example, Model, ModelDims, ParamVars, TokenSequence};
use crate::numerics::{grad_check, inf_norm, max_abs_diff, Mat64};

pub const DUALITY_TOL: f64 = 1e-12;
pub const ROUND_TRIP_TOL: f64 = 1e-9;
pub const GATE_LAW_TOL: f64 = 1e-12;
pub const BOUND_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-4;

/// Deliberate defects for checking that the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Gates on the weighted-average side of the duality check use `+e` instead of `-e`.
    FlipGateSign,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub trials: usize,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// Instance seed of the largest error.
    pub worst_seed: u64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub fault: Option<Fault>,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckReport> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Tracker {
    name: &'static str,
    tolerance: f64,
    instances: usize,
    max_error: f64,
    worst_seed: u64,
    broken: bool,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            instances: 0,
            max_error: 0.0,
            worst_seed: 0,
            broken: false,
        }
    }

    fn record(&mut self, seed: u64, err: f64) {
        self.instances += 1;
        if err.is_nan() {
            if !self.broken {
                self.worst_seed = seed;
            }
            self.broken = true;
            self.max_error = f64::NAN;
        } else if !self.broken && (self.instances == 1 || err > self.max_error) {
            self.max_error = err;
            self.worst_seed = seed;
        }
    }

    /// A hard failure that has no size, such as an out-of-range gate.
    fn breach(&mut self, seed: u64) {
        self.record(seed, f64::INFINITY);
    }

    fn finish(self) -> CheckReport {
        CheckReport {
            name: self.name.to_string(),
            instances: self.instances,
            max_error: self.max_error,
            tolerance: self.tolerance,
            worst_seed: self.worst_seed,
            passed: !self.broken && self.max_error <= self.tolerance,
        }
    }
}

fn rng_for(seed: u64, check: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(check);
    rng
}

fn random_frames(rng: &mut ChaCha8Rng, t: usize, d: usize, scale: f64) -> EncodedSequence {
    let data = (0..t * d).map(|_| rng.gen_range(-scale..=scale)).collect();
    EncodedSequence::new(Mat64::from_vec(t, d, data).expect("sized")).expect("non-empty")
}

fn random_scores(rng: &mut ChaCha8Rng, t: usize, scale: f64) -> Vec<f64> {
    (0..t).map(|_| rng.gen_range(-scale..=scale)).collect()
}

fn duality(seed: u64, fault: Option<Fault>, tr: &mut Tracker) -> Result<()> {
    let mut rng = rng_for(seed, 1);
    let t = rng.gen_range(1..=64);
    let d = rng.gen_range(1..=16);
    let h = random_frames(&mut rng, t, d, 1.0);
    let spread = rng.gen_range(0.1..=8.0);
    let e = random_scores(&mut rng, t, spread);
    let z = grc_gates(&ScoreRow::new(e.clone()))?;
    let recursive = grc_recurse(&h, &z)?.final_context;
    let z_avg = match fault {
        Some(Fault::FlipGateSign) => {
            let flipped = e.iter().map(|&x| -x).collect();
            grc_gates(&ScoreRow::new(flipped))?
        }
        None => z,
    };
    let averaged = gsa_context(&dual_weights(&z_avg), &h)?;
    tr.record(seed, max_abs_diff(&recursive, &averaged));
    Ok(())
}

fn round_trip(seed: u64, tr: &mut Tracker) -> Result<()> {
    let mut rng = rng_for(seed, 2);
    let t = rng.gen_range(1..=64);
    // Exponential draws normalised onto the simplex, optionally sparse.
    let sparsity = rng.gen_range(0.0..0.5);
    let mut alpha: Vec<f64> = (0..t)
        .map(|i| {
            if i > 0 && rng.gen_bool(sparsity) {
                0.0
            } else {
                -rng.gen_range(f64::EPSILON..1.0f64).ln()
            }
        })
        .collect();
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);
    let suffix_ok = alpha[0] > 1e-9;
    let alpha = AttentionWeights::new(alpha)?;
    let z = inverse_dual(&alpha);
    if GateSequence::new(z.as_slice().to_vec()).is_err() {
        tr.breach(seed);
        return Ok(());
    }
    if suffix_ok {
        tr.record(seed, max_abs_diff(dual_weights(&z).as_slice(), alpha.as_slice()));
    }

    // Mass entirely after the first frame: every denominator before it is zero.
    let n = t.max(2);
    let k = rng.gen_range(1..n);
    let mut saturated = vec![0.0; n];
    saturated[k] = 1.0;
    let z = inverse_dual(&AttentionWeights::new(saturated)?);
    let valid = GateSequence::new(z.as_slice().to_vec()).is_ok();
    let zero_before = z.as_slice()[1..k].iter().all(|&g| g == 0.0);
    if !(valid && zero_before && z.as_slice()[k] == 1.0) {
        tr.breach(seed);
    }
    Ok(())
}

fn gate_law(seed: u64, tr: &mut Tracker) -> Result<()> {
    let mut rng = rng_for(seed, 3);
    let t = rng.gen_range(1..=64);
    let bias: f64 = rng.gen_range(-5.0..=5.0);
    let e = random_scores(&mut rng, t, 700.0 - bias.abs());
    let z = decgrc_gates(&ScoreRow::with_bias(e, bias))?;
    let in_range = z.as_slice().iter().all(|g| (0.0..=1.0).contains(g));
    if !in_range || !z.is_non_increasing() {
        tr.breach(seed);
        return Ok(());
    }

    // Small scores: compare against the literal formula.
    let e = random_scores(&mut rng, t, 50.0 - bias.abs());
    let z = decgrc_gates(&ScoreRow::with_bias(e.clone(), bias))?;
    let mut sum = 0.0;
    let mut worst: f64 = 0.0;
    for (i, &ei) in e.iter().enumerate() {
        sum += (ei + bias).exp();
        let direct = if i == 0 { 1.0 } else { 1.0 / (1.0 + sum) };
        let rel = (z.as_slice()[i] - direct).abs() / direct.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    tr.record(seed, worst);
    Ok(())
}

fn convergence_bound(seed: u64, tr: &mut Tracker) -> Result<()> {
    let mut rng = rng_for(seed, 4);
    let t = rng.gen_range(2..=64);
    let d = rng.gen_range(1..=16);
    let nu = [1e-3, 1e-2, 1e-1][rng.gen_range(0..3)];
    let scale = rng.gen_range(0.1..=10.0);
    let h = random_frames(&mut rng, t, d, scale);
    let shift = rng.gen_range(-6.0..=2.0);
    let e: Vec<f64> = random_scores(&mut rng, t, 3.0).iter().map(|x| x + shift).collect();
    let z = decgrc_gates(&ScoreRow::new(e))?;
    let t_end = z.as_slice().iter().position(|&g| g < nu).map_or(t, |i| i + 1);
    let trace = grc_recurse(&h, &z)?;
    let scale = (0..t)
        .map(|i| inf_norm(h.frame(i)) + inf_norm(trace.d.row(i)))
        .fold(0.0, f64::max);
    let gap = max_abs_diff(trace.d.row(t - 1), trace.d.row(t_end - 1));
    let bound = nu * (t - t_end) as f64 * scale;
    tr.record(seed, (gap - bound).max(0.0));
    Ok(())
}

fn gradient_dims() -> ModelDims {
    ModelDims {
        d_x: 3,
        d_h: 4,
        d_s: 4,
        d_a: 3,
        d_emb: 2,
        vocab: 4,
        lookahead: 1,
        stride: 2,
    }
}

/// End-to-end cross-entropy gradient of every built-in attention on a three-token target.
fn gradients(seed: u64, tr: &mut Tracker) -> Result<()> {
    let mut rng = rng_for(seed, 5);
    let dims = gradient_dims();
    let frames = rng.gen_range(5..=9);
    let data = (0..frames * dims.d_x).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let content: Vec<usize> = (0..2).map(|_| rng.gen_range(1..dims.vocab)).collect();
    let ex = Example {
        id: 0,
        x: Mat64::from_vec(frames, dims.d_x, data)?,
        y: TokenSequence::target(&content, dims.vocab)?,
    };
    let w = rng.gen_range(1..=3);
    let mut worst: f64 = 0.0;
    for kind in AttentionKind::all_builtin(w) {
        let model = Model::new(dims, kind, seed)?;
        let layout = model.params().clone();
        let err = grad_check(
            |tape, flat| {
                let pv = ParamVars::from_flat(tape, flat, &layout)?;
                model.tape_loss(tape, &pv, &ex)
            },
            &layout.flatten(),
            1e-5,
        )?;
        worst = worst.max(err);
    }
    tr.record(seed, worst);
    Ok(())
}

/// Instances of the full-model gradient check; each covers every attention kind.
pub fn gradient_instances(trials: usize) -> usize {
    trials.clamp(1, 4)
}

pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut dual = Tracker::new("duality", DUALITY_TOL);
    let mut trip = Tracker::new("round_trip", ROUND_TRIP_TOL);
    let mut law = Tracker::new("decgrc_gate_law", GATE_LAW_TOL);
    let mut bound = Tracker::new("convergence_bound", BOUND_TOL);
    let mut grads = Tracker::new("gradients", GRADIENT_TOL);
    for i in 0..opts.trials as u64 {
        let seed = opts.seed.wrapping_add(i);
        duality(seed, opts.fault, &mut dual)?;
        round_trip(seed, &mut trip)?;
        gate_law(seed, &mut law)?;
        convergence_bound(seed, &mut bound)?;
    }
    for i in 0..gradient_instances(opts.trials) as u64 {
        gradients(opts.seed.wrapping_add(i), &mut grads)?;
    }
    let checks: Vec<CheckReport> = [dual, trip, law, bound, grads]
        .into_iter()
        .map(Tracker::finish)
        .collect();
    Ok(VerifyReport {
        seed: opts.seed,
        trials: opts.trials,
        fault: opts.fault,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
