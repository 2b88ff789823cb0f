//! Monte Carlo validation of a synthesized strategy on the continuous-noise
//! vehicle.
//!
//! Each trial drives the vehicle with the exported strategy while the noise
//! is drawn uniformly from the full support (not the quantized
//! representatives), generates the word of the true trajectory by dense
//! sampling, and checks it against the formula. The aggregate empirical
//! satisfaction rate is compared against the value bound `V(s0)` with a
//! one-sided 3-sigma band. Trials are seeded independently from the master
//! seed, so runs are reproducible and order-independent.

use crate::dynamics::{NoisePartition, Pose, StageTrajectory, VehicleParams};
use crate::geometry::{Environment, Prop, PropSet};
use crate::pctl::{holds_on_word, Formula};
use crate::strategy::{MeasurementRecord, StrategyError, StrategyTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Simulation options.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub trials: usize,
    pub master_seed: u64,
    /// Dense word-sampling resolution along each stage.
    pub word_samples_per_stage: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { trials: 10_000, master_seed: 0, word_samples_per_stage: 200 }
    }
}

/// Word of a trajectory: the sequence of proposition sets it traverses, with
/// consecutive repeats collapsed; the last letter repeats forever.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word(Vec<PropSet>);

impl Word {
    pub fn new(first: PropSet) -> Self {
        Word(vec![first])
    }

    /// Append a letter, collapsing stutters.
    pub fn push(&mut self, letter: PropSet) {
        if self.0.last() != Some(&letter) {
            self.0.push(letter);
        }
    }

    pub fn letters(&self) -> &[PropSet] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Word of a densely sampled position sequence: first letter at the first
/// sample, a new letter whenever the proposition set changes.
pub fn word_of_trajectory(
    positions: impl IntoIterator<Item = crate::geometry::Point2>,
    env: &Environment,
) -> Word {
    let mut iter = positions.into_iter();
    let first = iter.next().expect("word needs at least one sample");
    let mut word = Word::new(env.propositions_at(first));
    for p in iter {
        word.push(env.propositions_at(p));
    }
    word
}

/// Single-path satisfaction of the formula by a word.
pub fn check_word(word: &Word, formula: &Formula) -> bool {
    holds_on_word(word.letters(), formula)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    None,
    OffTree,
    UnsafeHit,
    NoDropoff,
    NoPickup,
}

/// One completed stage of a trial.
#[derive(Debug, Clone, Copy)]
pub struct StageRecord {
    pub action: usize,
    pub control: f64,
    pub eps: f64,
    pub bin: usize,
    pub end: Pose,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub stages: Vec<StageRecord>,
    pub word: Word,
    pub satisfied: bool,
    pub failure_kind: FailureKind,
    /// Whether the label word of the visited tree states satisfies the
    /// formula; implies `satisfied` (the labels are conservative guarantees
    /// about the true trajectory).
    pub mdp_word_satisfied: bool,
    /// The strategy ran out of continuations before the horizon (entered a
    /// pruned possibly-unsafe terminal state).
    pub halted_early: bool,
}

/// One dense sample of a trial trajectory, for plotting exports.
#[derive(Debug, Clone, Copy)]
pub struct SamplePoint {
    pub stage: usize,
    pub t: f64,
    pub pose: Pose,
}

/// Classify an unsatisfied word against the pickup/dropoff/avoid mission.
fn classify_failure(word: &Word) -> FailureKind {
    let mut a_alive = true; // no unsafe letter so far
    let mut c_alive = false; // pickup fired, still safe since
    for (i, letter) in word.letters().iter().enumerate() {
        let safe = !letter.contains(Prop::Unsafe);
        if i > 0 {
            c_alive = c_alive && safe;
        }
        if a_alive && safe && letter.contains(Prop::Pickup) {
            c_alive = true;
        }
        if i > 0 {
            a_alive = a_alive && safe;
        } else {
            a_alive = safe;
        }
    }
    if !a_alive && !c_alive {
        FailureKind::UnsafeHit
    } else if c_alive {
        FailureKind::NoDropoff
    } else {
        FailureKind::NoPickup
    }
}

/// Run one trial: draw continuous noise per stage, drive the vehicle with the
/// strategy, record the gyroscope bins, and judge the resulting word.
///
/// Strategy errors never abort: an off-tree history fails the trial, and a
/// missing continuation halts it with whatever prefix it produced, which may
/// already satisfy the formula.
pub fn simulate_trial(
    env: &Environment,
    params: &VehicleParams,
    part: &NoisePartition,
    table: &StrategyTable,
    formula: &Formula,
    word_samples: usize,
    rng: &mut impl Rng,
    mut trace: Option<&mut Vec<SamplePoint>>,
) -> TrialResult {
    let mut pose = env.initial_pose();
    let mut word = Word::new(env.propositions_at(pose.position()));
    let mut mdp_letters = vec![table.row(0).theta];
    let mut history: Vec<MeasurementRecord> = Vec::with_capacity(table.horizon());
    let mut stages = Vec::with_capacity(table.horizon());
    let mut off_tree = false;
    let mut halted_early = false;
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(SamplePoint { stage: 0, t: 0.0, pose });
    }

    for k in 1..=table.horizon() {
        let action = match table.next_input(&history) {
            Ok(a) => a,
            Err(StrategyError::OffTree { .. }) => {
                off_tree = true;
                halted_early = true;
                break;
            }
            Err(_) => {
                halted_early = true;
                break;
            }
        };
        let control = table.controls()[action];
        let eps = rng.random_range(-part.eps_max()..=part.eps_max());
        let traj = StageTrajectory::new(pose, control + eps, params.dt());
        for j in 1..=word_samples {
            let t = params.dt() * (j as f64 / word_samples as f64);
            let p = traj.pose_at(t);
            word.push(env.propositions_at(p.position()));
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(SamplePoint { stage: k, t: (k - 1) as f64 * params.dt() + t, pose: p });
            }
        }
        pose = traj.end;
        let bin = part.bin_of(eps).expect("draw lies in the support");
        history.push(MeasurementRecord { action, bin });
        stages.push(StageRecord { action, control, eps, bin, end: pose });
        let state = table.locate(&history).expect("history built from the table");
        mdp_letters.push(table.row(state).theta);
    }

    let satisfied = check_word(&word, formula);
    let mdp_word_satisfied = holds_on_word(&mdp_letters, formula);
    let failure_kind = if satisfied {
        FailureKind::None
    } else if off_tree {
        FailureKind::OffTree
    } else {
        classify_failure(&word)
    };
    TrialResult { stages, word, satisfied, failure_kind, mdp_word_satisfied, halted_early }
}

/// Per-trial generator derived deterministically from the master seed.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&trial.to_le_bytes());
    seed[16..].copy_from_slice(b"dubins-mc-trial\0");
    ChaCha8Rng::from_seed(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub struct FailureCounts {
    pub off_tree: usize,
    pub unsafe_hit: usize,
    pub no_dropoff: usize,
    pub no_pickup: usize,
}

/// Aggregate over all trials, including the one-sided bound test
/// `empirical_rate >= v0 - 3 sqrt(v0 (1 - v0) / trials)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub master_seed: u64,
    pub horizon: usize,
    pub v0: f64,
    pub satisfied: usize,
    pub empirical_rate: f64,
    pub slack_3sigma: f64,
    pub bound_holds: bool,
    pub failures: FailureCounts,
    /// Fraction of trials whose tree-label word satisfied the formula; a
    /// lower, fully conservative companion to the empirical rate.
    pub mdp_word_rate: f64,
}

/// Run all configured trials. The optional sink receives every trial's dense
/// sample trace, in trial order; it is meant for small plotting runs.
pub fn run_with(
    env: &Environment,
    params: &VehicleParams,
    part: &NoisePartition,
    table: &StrategyTable,
    formula: &Formula,
    config: &SimConfig,
    mut trace_sink: Option<&mut dyn FnMut(usize, &TrialResult, &[SamplePoint])>,
) -> Summary {
    let mut satisfied = 0usize;
    let mut mdp_satisfied = 0usize;
    let mut failures = FailureCounts::default();
    let mut samples = Vec::new();
    for trial in 0..config.trials {
        let mut rng = trial_rng(config.master_seed, trial as u64);
        let trace = trace_sink.as_ref().map(|_| {
            samples.clear();
            &mut samples
        });
        let result = simulate_trial(
            env,
            params,
            part,
            table,
            formula,
            config.word_samples_per_stage,
            &mut rng,
            trace,
        );
        if result.satisfied {
            satisfied += 1;
        }
        if result.mdp_word_satisfied {
            mdp_satisfied += 1;
        }
        match result.failure_kind {
            FailureKind::None => {}
            FailureKind::OffTree => failures.off_tree += 1,
            FailureKind::UnsafeHit => failures.unsafe_hit += 1,
            FailureKind::NoDropoff => failures.no_dropoff += 1,
            FailureKind::NoPickup => failures.no_pickup += 1,
        }
        if let Some(sink) = trace_sink.as_deref_mut() {
            sink(trial, &result, &samples);
        }
    }
    let v0 = table.v0();
    let empirical_rate = satisfied as f64 / config.trials as f64;
    let slack_3sigma = 3.0 * (v0 * (1.0 - v0) / config.trials as f64).sqrt();
    Summary {
        trials: config.trials,
        master_seed: config.master_seed,
        horizon: table.horizon(),
        v0,
        satisfied,
        empirical_rate,
        slack_3sigma,
        bound_holds: empirical_rate >= v0 - slack_3sigma,
        failures,
        mdp_word_rate: mdp_satisfied as f64 / config.trials as f64,
    }
}

pub fn run(
    env: &Environment,
    params: &VehicleParams,
    part: &NoisePartition,
    table: &StrategyTable,
    formula: &Formula,
    config: &SimConfig,
) -> Summary {
    run_with(env, params, part, table, formula, config, None)
}
