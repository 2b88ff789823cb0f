//! Bounded-depth tree abstraction of the noisy vehicle.
//!
//! Each state records the nominal stage trajectory under a quantized noise
//! representative, the worst-case extreme endpoints obtained by chaining the
//! bin endpoints through every stage, the derived position-uncertainty radius
//! ξ, and the set of propositions that can be guaranteed (pickup, dropoff) or
//! not excluded (unsafe) for the stage. Commanding a control from a
//! non-terminal state yields one child per noise bin, each with probability
//! `1/n`; terminal states hold their state under a dummy action.

use crate::dynamics::{propagate, NoisePartition, Pose, StageTrajectory, VehicleParams};
use crate::geometry::{Environment, Prop, PropSet, RegionLabel};
use crate::pctl::{self, CheckError, Formula, Synthesis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("state cap of {cap} exceeded while expanding depth {depth}")]
    StateCapExceeded { cap: usize, depth: usize },
    #[error("invalid build configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("specification unreachable within horizon K_max = {k_max}")]
    Unreachable { k_max: usize },
    #[error("malformed tree: {0}")]
    MalformedTree(String),
    #[error(transparent)]
    Check(#[from] CheckError),
}

/// Options controlling tree construction.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    /// Largest horizon tried by [`find_min_k`].
    pub k_max: usize,
    /// Time samples per stage for the label sweep.
    pub sweep_samples_per_stage: usize,
    /// Make possibly-unsafe states terminal instead of expanding them. Once
    /// the unsafe proposition holds, no extension can satisfy the mission, so
    /// truncation preserves every relevant probability.
    pub prune_unsafe: bool,
    /// Abort the build if the state count would exceed this.
    pub max_states: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { k_max: 8, sweep_samples_per_stage: 50, prune_unsafe: true, max_states: 1_000_000 }
    }
}

impl BuildConfig {
    fn validate(&self) -> Result<(), BuildError> {
        if self.k_max < 1 {
            return Err(BuildError::InvalidConfig("k_max must be at least 1"));
        }
        if self.sweep_samples_per_stage < 2 {
            return Err(BuildError::InvalidConfig("sweep_samples_per_stage must be at least 2"));
        }
        if self.max_states < 1 {
            return Err(BuildError::InvalidConfig("max_states must be at least 1"));
        }
        Ok(())
    }
}

/// One state of the tree abstraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpState {
    /// Stage index `k`; the root is at depth 0.
    pub depth: u16,
    pub parent: Option<u32>,
    /// Action index of the incoming edge (absent at the root).
    pub in_action: Option<u8>,
    /// Noise-bin index of the incoming edge (absent at the root).
    pub in_bin: Option<u16>,
    /// Nominal stage trajectory (absent at the root, which holds the initial
    /// pose in `lower`/`upper`).
    pub traj: Option<StageTrajectory>,
    /// Endpoint of the lower extreme trajectory, chained through bin lower
    /// endpoints from the root.
    pub lower: Pose,
    /// Endpoint of the upper extreme trajectory.
    pub upper: Pose,
    /// Position-uncertainty radius at the stage end.
    pub xi: f64,
    /// Guaranteed pickup/dropoff and possible unsafe for this stage.
    pub theta: PropSet,
    pub terminal: bool,
}

impl MdpState {
    /// Endpoint of the nominal trajectory; the initial pose at the root.
    pub fn nominal_end(&self) -> Pose {
        self.traj.map_or(self.lower, |t| t.end)
    }
}

/// Labeled tree MDP. Children of a non-terminal state are stored contiguously
/// per action, `n_bins` per action, each transition carrying probability
/// `1/n_bins`; terminal states self-loop under the dummy action with
/// probability 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    controls: Vec<f64>,
    n_bins: usize,
    horizon: usize,
    states: Vec<MdpState>,
    children: Vec<Option<Box<[u32]>>>,
}

impl Mdp {
    pub const ROOT: usize = 0;

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, id: usize) -> &MdpState {
        &self.states[id]
    }

    pub fn states(&self) -> &[MdpState] {
        &self.states
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Depth of the deepest state (the build horizon `K`).
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Probability of each (state, action, child) transition: `1/n_bins`.
    pub fn transition_prob(&self) -> f64 {
        1.0 / self.n_bins as f64
    }

    /// Child ids of a non-terminal state, action-major: index `a * n_bins + b`.
    pub fn children_of(&self, id: usize) -> Option<&[u32]> {
        self.children[id].as_deref()
    }

    pub fn child(&self, id: usize, action: usize, bin: usize) -> Option<usize> {
        self.children[id]
            .as_deref()
            .and_then(|c| c.get(action * self.n_bins + bin))
            .map(|&c| c as usize)
    }

    /// Assemble an MDP directly from parts, validating the tree structure.
    /// Intended for synthetic MDPs in tests and tooling; [`build`] is the
    /// normal constructor.
    pub fn from_parts(
        controls: Vec<f64>,
        n_bins: usize,
        states: Vec<MdpState>,
        children: Vec<Option<Box<[u32]>>>,
    ) -> Result<Self, BuildError> {
        if controls.is_empty() || n_bins == 0 {
            return Err(BuildError::MalformedTree("empty control set or zero bins".into()));
        }
        if states.is_empty() || states.len() != children.len() {
            return Err(BuildError::MalformedTree("state/children length mismatch".into()));
        }
        if states[0].parent.is_some() {
            return Err(BuildError::MalformedTree("state 0 must be the root".into()));
        }
        let mut seen_as_child = vec![false; states.len()];
        for (id, block) in children.iter().enumerate() {
            match block {
                None => {
                    if !states[id].terminal {
                        return Err(BuildError::MalformedTree(format!(
                            "non-terminal state {id} has no children"
                        )));
                    }
                }
                Some(block) => {
                    if states[id].terminal {
                        return Err(BuildError::MalformedTree(format!(
                            "terminal state {id} has children"
                        )));
                    }
                    if block.len() != controls.len() * n_bins {
                        return Err(BuildError::MalformedTree(format!(
                            "state {id} has {} children, expected {}",
                            block.len(),
                            controls.len() * n_bins
                        )));
                    }
                    for (slot, &c) in block.iter().enumerate() {
                        let c = c as usize;
                        if c >= states.len() || c <= id {
                            return Err(BuildError::MalformedTree(format!(
                                "state {id}: child id {c} out of order"
                            )));
                        }
                        if seen_as_child[c] {
                            return Err(BuildError::MalformedTree(format!(
                                "state {c} has two parents"
                            )));
                        }
                        seen_as_child[c] = true;
                        let (a, b) = (slot / n_bins, slot % n_bins);
                        let st = &states[c];
                        if st.parent != Some(id as u32)
                            || st.in_action != Some(a as u8)
                            || st.in_bin != Some(b as u16)
                            || st.depth != states[id].depth + 1
                        {
                            return Err(BuildError::MalformedTree(format!(
                                "state {c}: edge bookkeeping disagrees with parent {id}"
                            )));
                        }
                    }
                }
            }
        }
        if let Some(orphan) = (1..states.len()).find(|&i| !seen_as_child[i]) {
            return Err(BuildError::MalformedTree(format!("state {orphan} is unreachable")));
        }
        let horizon = states.iter().map(|s| s.depth as usize).max().unwrap_or(0);
        Ok(Self { controls, n_bins, horizon, states, children })
    }
}

/// Worst-case position uncertainty at a stage end: the larger of the planar
/// distances from the nominal endpoint to the two extreme endpoints.
pub fn uncertainty(nominal_end: Pose, lower_end: Pose, upper_end: Pose) -> f64 {
    let p = nominal_end.position();
    p.dist(lower_end.position()).max(p.dist(upper_end.position()))
}

/// Label one stage: pickup holds if at some sample time the uncertainty disc
/// fits inside a single pickup region; dropoff if the disc at the stage end
/// fits inside a single dropoff region; unsafe if at some sample time the
/// disc inflated by half the sample spacing meets an unsafe region. Unit
/// forward speed bounds inter-sample motion by the spacing, so the inflation
/// makes the unsafe check sound for the whole continuous stage.
pub fn sweep_label(
    traj: &StageTrajectory,
    xi: f64,
    env: &Environment,
    samples: usize,
) -> PropSet {
    debug_assert!(samples >= 2);
    debug_assert!(xi >= 0.0);
    let delta = traj.duration / samples as f64;
    let inflated = xi + 0.5 * delta;
    let mut theta = PropSet::EMPTY;

    if env.labeled(RegionLabel::Dropoff).any(|r| r.contains_disc(traj.end.position(), xi)) {
        theta.insert(Prop::Dropoff);
    }

    let mut pickup = false;
    let mut unsafe_hit = false;
    for j in 0..=samples {
        let t = traj.duration * (j as f64 / samples as f64);
        let p = traj.pose_at(t).position();
        if !pickup && env.labeled(RegionLabel::Pickup).any(|r| r.contains_disc(p, xi)) {
            pickup = true;
        }
        if !unsafe_hit && env.labeled(RegionLabel::Unsafe).any(|r| r.intersects_disc(p, inflated)) {
            unsafe_hit = true;
        }
        if pickup && unsafe_hit {
            break;
        }
    }
    if pickup {
        theta.insert(Prop::Pickup);
    }
    if unsafe_hit {
        theta.insert(Prop::Unsafe);
    }
    theta
}

/// Expand one child: nominal trajectory under the bin representative,
/// extremes chained through the bin endpoints, ξ from the extreme endpoints,
/// labels from the sweep.
fn expand(
    parent: &MdpState,
    parent_id: u32,
    action: usize,
    bin: usize,
    env: &Environment,
    params: &VehicleParams,
    part: &NoisePartition,
    samples: usize,
) -> MdpState {
    let u = params.controls()[action];
    let traj = StageTrajectory::new(parent.nominal_end(), u + part.mid(bin), params.dt());
    let lower = propagate(parent.lower, u + part.lower(bin), params.dt());
    let upper = propagate(parent.upper, u + part.upper(bin), params.dt());
    let xi = uncertainty(traj.end, lower, upper);
    let theta = sweep_label(&traj, xi, env, samples);
    MdpState {
        depth: parent.depth + 1,
        parent: Some(parent_id),
        in_action: Some(action as u8),
        in_bin: Some(bin as u16),
        traj: Some(traj),
        lower,
        upper,
        xi,
        theta,
        terminal: false,
    }
}

/// Breadth-first construction of the depth-`k` tree abstraction.
pub fn build(
    env: &Environment,
    params: &VehicleParams,
    part: &NoisePartition,
    k: usize,
    config: &BuildConfig,
) -> Result<Mdp, BuildError> {
    config.validate()?;
    if k < 1 {
        return Err(BuildError::InvalidConfig("horizon must be at least 1"));
    }
    let init = env.initial_pose();
    let root_theta = env.propositions_at(init.position());
    let root = MdpState {
        depth: 0,
        parent: None,
        in_action: None,
        in_bin: None,
        traj: None,
        lower: init,
        upper: init,
        xi: 0.0,
        theta: root_theta,
        terminal: config.prune_unsafe && root_theta.contains(Prop::Unsafe),
    };
    let mut states = vec![root];
    let mut children: Vec<Option<Box<[u32]>>> = vec![None];
    let n_actions = params.controls().len();
    let n_bins = part.n();

    let mut level = 0..1usize;
    for depth in 1..=k {
        for sid in level.clone() {
            if states[sid].terminal {
                continue;
            }
            let parent = states[sid];
            let mut block = Vec::with_capacity(n_actions * n_bins);
            for action in 0..n_actions {
                for bin in 0..n_bins {
                    if states.len() >= config.max_states {
                        return Err(BuildError::StateCapExceeded {
                            cap: config.max_states,
                            depth,
                        });
                    }
                    let mut st = expand(
                        &parent,
                        sid as u32,
                        action,
                        bin,
                        env,
                        params,
                        part,
                        config.sweep_samples_per_stage,
                    );
                    st.terminal = depth == k
                        || (config.prune_unsafe && st.theta.contains(Prop::Unsafe));
                    block.push(states.len() as u32);
                    states.push(st);
                    children.push(None);
                }
            }
            children[sid] = Some(block.into_boxed_slice());
        }
        level = level.end..states.len();
    }
    Ok(Mdp {
        controls: params.controls().to_vec(),
        n_bins,
        horizon: k,
        states,
        children,
    })
}

/// Result of the minimal-horizon search.
pub struct MinKResult {
    pub k: usize,
    pub mdp: Mdp,
    pub synthesis: Synthesis,
}

/// Build and check for K = 1, 2, ..., `config.k_max`, returning the first
/// horizon whose maximum satisfaction probability is positive.
pub fn find_min_k(
    env: &Environment,
    params: &VehicleParams,
    part: &NoisePartition,
    formula: &Formula,
    config: &BuildConfig,
) -> Result<MinKResult, BuildError> {
    config.validate()?;
    for k in 1..=config.k_max {
        let mdp = build(env, params, part, k, config)?;
        let synthesis = pctl::synthesize(&mdp, formula)?;
        if synthesis.v0 > 0.0 {
            return Ok(MinKResult { k, mdp, synthesis });
        }
    }
    Err(BuildError::Unreachable { k_max: config.k_max })
}
