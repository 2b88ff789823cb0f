//! PCTL fragment: formula representation, model checking on the tree MDP,
//! and extraction of the maximizing policy.
//!
//! The fragment covers proposition atoms, negation, conjunction, implication,
//! next, until, nested probability bounds, and a top-level maximum-probability
//! query. Because the MDP is a finite tree with absorbing leaves, all values
//! are computed exactly by a single backward pass; there is no fixed-point
//! iteration and no convergence tolerance.

mod parse;

pub use parse::{parse_formula, ParseError};

use crate::geometry::{Prop, PropSet};
use crate::mdp::Mdp;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckError {
    #[error("formula must be a maximum-probability query over an until path formula")]
    UnsupportedShape,
}

/// Comparison operator of a probability bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Cmp {
    fn eval(self, value: f64, bound: f64) -> bool {
        match self {
            Cmp::Gt => value > bound,
            Cmp::Ge => value >= bound,
            Cmp::Lt => value < bound,
            Cmp::Le => value <= bound,
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateFormula {
    Atom(Prop),
    Not(Box<StateFormula>),
    And(Box<StateFormula>, Box<StateFormula>),
    Implies(Box<StateFormula>, Box<StateFormula>),
    /// `P{cmp}{bound} [ path ]`, resolved against the maximum probability of
    /// the path formula.
    Prob { cmp: Cmp, bound: f64, path: Box<PathFormula> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathFormula {
    Next(StateFormula),
    Until(StateFormula, StateFormula),
}

/// Top-level query `Pmax=? [ path ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    pub path: PathFormula,
}

impl StateFormula {
    fn precedence(&self) -> u8 {
        match self {
            StateFormula::Atom(_) | StateFormula::Prob { .. } => 3,
            StateFormula::Not(_) => 2,
            StateFormula::And(..) => 1,
            StateFormula::Implies(..) => 0,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        if prec < min {
            write!(f, "(")?;
        }
        match self {
            StateFormula::Atom(Prop::Pickup) => write!(f, "pi_p")?,
            StateFormula::Atom(Prop::Dropoff) => write!(f, "pi_d")?,
            StateFormula::Atom(Prop::Unsafe) => write!(f, "pi_u")?,
            StateFormula::Not(inner) => {
                write!(f, "!")?;
                inner.fmt_prec(f, 2)?;
            }
            StateFormula::And(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " & ")?;
                b.fmt_prec(f, 2)?;
            }
            StateFormula::Implies(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " -> ")?;
                b.fmt_prec(f, 0)?;
            }
            StateFormula::Prob { cmp, bound, path } => write!(f, "P{cmp}{bound}[{path}]")?,
        }
        if prec < min {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for StateFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

impl fmt::Display for PathFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFormula::Next(s) => {
                write!(f, "X ")?;
                s.fmt_prec(f, 2)
            }
            PathFormula::Until(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, " U ")?;
                b.fmt_prec(f, 2)
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pmax=?[{}]", self.path)
    }
}

fn atom(p: Prop) -> StateFormula {
    StateFormula::Atom(p)
}

fn not(f: StateFormula) -> StateFormula {
    StateFormula::Not(Box::new(f))
}

fn and(a: StateFormula, b: StateFormula) -> StateFormula {
    StateFormula::And(Box::new(a), Box::new(b))
}

/// The built-in pick-up/drop-off/avoid mission:
/// `Pmax=?[!pi_u U (!pi_u & pi_p & P>0[!pi_u U (!pi_u & pi_d)])]` —
/// maximize the probability of reaching a guaranteed-pickup state from which
/// a guaranteed-dropoff state is reachable, never crossing a possibly-unsafe
/// state.
pub fn pickup_dropoff_formula() -> Formula {
    let inner = PathFormula::Until(
        not(atom(Prop::Unsafe)),
        and(not(atom(Prop::Unsafe)), atom(Prop::Dropoff)),
    );
    let target = and(
        and(not(atom(Prop::Unsafe)), atom(Prop::Pickup)),
        StateFormula::Prob { cmp: Cmp::Gt, bound: 0.0, path: Box::new(inner) },
    );
    Formula { path: PathFormula::Until(not(atom(Prop::Unsafe)), target) }
}

/// Chosen action per state: a control index for non-terminal states, the
/// dummy hold action for terminal ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Control(usize),
    Hold,
}

pub type ValueMap = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy(pub Vec<Action>);

impl Policy {
    pub fn action(&self, id: usize) -> Action {
        self.0[id]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Synthesis output: value at the root, per-state values, per-state policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub v0: f64,
    pub values: ValueMap,
    pub policy: Policy,
}

/// States satisfying a state formula. Probability bounds are resolved by
/// computing the maximum path probability per state, except `P>0`, which is
/// decided by pure graph reachability to avoid classifying tiny positive
/// probabilities through floating point.
pub fn eval_state_set(mdp: &Mdp, f: &StateFormula) -> Vec<bool> {
    match f {
        StateFormula::Atom(p) => mdp.states().iter().map(|s| s.theta.contains(*p)).collect(),
        StateFormula::Not(inner) => {
            let mut v = eval_state_set(mdp, inner);
            v.iter_mut().for_each(|b| *b = !*b);
            v
        }
        StateFormula::And(a, b) => {
            let mut va = eval_state_set(mdp, a);
            let vb = eval_state_set(mdp, b);
            va.iter_mut().zip(vb).for_each(|(x, y)| *x = *x && y);
            va
        }
        StateFormula::Implies(a, b) => {
            let mut va = eval_state_set(mdp, a);
            let vb = eval_state_set(mdp, b);
            va.iter_mut().zip(vb).for_each(|(x, y)| *x = !*x || y);
            va
        }
        StateFormula::Prob { cmp: Cmp::Gt, bound, path } if *bound == 0.0 => {
            reach_positive(mdp, path)
        }
        StateFormula::Prob { cmp, bound, path } => {
            let values = max_path_prob(mdp, path);
            values.iter().map(|&v| cmp.eval(v, *bound)).collect()
        }
    }
}

/// States from which the path formula holds with positive probability under
/// some policy (existential graph reachability).
fn reach_positive(mdp: &Mdp, path: &PathFormula) -> Vec<bool> {
    match path {
        PathFormula::Next(sf) => {
            let set = eval_state_set(mdp, sf);
            (0..mdp.len())
                .map(|id| match mdp.children_of(id) {
                    // dummy self-loop: the next state is the state itself
                    None => set[id],
                    Some(children) => children.iter().any(|&c| set[c as usize]),
                })
                .collect()
        }
        PathFormula::Until(a, b) => {
            let sa = eval_state_set(mdp, a);
            let sb = eval_state_set(mdp, b);
            let mut reach = vec![false; mdp.len()];
            for id in (0..mdp.len()).rev() {
                reach[id] = sb[id]
                    || (sa[id]
                        && mdp
                            .children_of(id)
                            .is_some_and(|ch| ch.iter().any(|&c| reach[c as usize])));
            }
            reach
        }
    }
}

/// Maximum probability of a path formula at every state.
fn max_path_prob(mdp: &Mdp, path: &PathFormula) -> ValueMap {
    match path {
        PathFormula::Next(sf) => {
            let set = eval_state_set(mdp, sf);
            let n = mdp.n_bins() as f64;
            (0..mdp.len())
                .map(|id| match mdp.children_of(id) {
                    None => {
                        if set[id] {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Some(children) => best_backup(
                        children,
                        mdp.n_bins(),
                        |c| if set[c] { 1.0 } else { 0.0 },
                        n,
                    )
                    .0,
                })
                .collect()
        }
        PathFormula::Until(a, b) => {
            let sa = eval_state_set(mdp, a);
            let sb = eval_state_set(mdp, b);
            max_until(mdp, &sa, &sb).0
        }
    }
}

/// Best action backup over a child block: `(max value, argmax index)`, ties
/// broken by the lowest action index (the fixed control order).
fn best_backup(
    children: &[u32],
    n_bins: usize,
    value: impl Fn(usize) -> f64,
    n: f64,
) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut best_a = 0;
    for (a, block) in children.chunks(n_bins).enumerate() {
        // sum first, divide once: keeps certain events at exactly 1
        let v = block.iter().map(|&c| value(c as usize)).sum::<f64>() / n;
        if v > best {
            best = v;
            best_a = a;
        }
    }
    (best, best_a)
}

/// Exact maximal-until values and the argmax policy on the tree MDP.
///
/// `V(s) = 1` on targets, `0` outside `safe ∪ target`, otherwise the best
/// one-step backup; computed in a single reverse-breadth-first pass. The
/// recorded action is the backup argmax with ties broken by action order.
pub fn max_until(mdp: &Mdp, safe: &[bool], target: &[bool]) -> (ValueMap, Policy) {
    let n = mdp.n_bins() as f64;
    let mut values = vec![0.0; mdp.len()];
    let mut policy = vec![Action::Hold; mdp.len()];
    for id in (0..mdp.len()).rev() {
        match mdp.children_of(id) {
            None => {
                values[id] = if target[id] { 1.0 } else { 0.0 };
            }
            Some(children) => {
                let (backup, argmax) = best_backup(children, mdp.n_bins(), |c| values[c], n);
                policy[id] = Action::Control(argmax);
                values[id] = if target[id] {
                    1.0
                } else if !safe[id] {
                    0.0
                } else {
                    backup
                };
            }
        }
    }
    (values, Policy(policy))
}

/// Proposition-only state sets of a nested-reach mission
/// `Pmax=?[A U (B & P>0[C U D])]`; used to steer the policy toward actually
/// completing the nested reach once the outer value is decided.
struct NestedSets {
    a: Vec<bool>,
    b: Vec<bool>,
    c: Vec<bool>,
    d: Vec<bool>,
}

fn prob_free(f: &StateFormula) -> bool {
    match f {
        StateFormula::Atom(_) => true,
        StateFormula::Not(x) => prob_free(x),
        StateFormula::And(x, y) | StateFormula::Implies(x, y) => prob_free(x) && prob_free(y),
        StateFormula::Prob { .. } => false,
    }
}

fn conjuncts<'f>(f: &'f StateFormula, out: &mut Vec<&'f StateFormula>) {
    match f {
        StateFormula::And(x, y) => {
            conjuncts(x, out);
            conjuncts(y, out);
        }
        other => out.push(other),
    }
}

fn detect_nested_reach(mdp: &Mdp, formula: &Formula) -> Option<NestedSets> {
    let PathFormula::Until(left, right) = &formula.path else {
        return None;
    };
    if !prob_free(left) {
        return None;
    }
    let mut parts = Vec::new();
    conjuncts(right, &mut parts);
    let mut nested = None;
    let mut rest = Vec::new();
    for part in parts {
        match part {
            StateFormula::Prob { cmp: Cmp::Gt, bound, path } if *bound == 0.0 => {
                if nested.is_some() {
                    return None;
                }
                match path.as_ref() {
                    PathFormula::Until(c, d) if prob_free(c) && prob_free(d) => {
                        nested = Some((c, d));
                    }
                    _ => return None,
                }
            }
            other if prob_free(other) => rest.push(other.clone()),
            _ => return None,
        }
    }
    let (c, d) = nested?;
    let b = match rest.len() {
        0 => vec![true; mdp.len()],
        _ => {
            let folded = rest
                .into_iter()
                .reduce(|acc, f| StateFormula::And(Box::new(acc), Box::new(f)))
                .unwrap();
            eval_state_set(mdp, &folded)
        }
    };
    Some(NestedSets {
        a: eval_state_set(mdp, left),
        b,
        c: eval_state_set(mdp, c),
        d: eval_state_set(mdp, d),
    })
}

/// Per-state progress of the label word along the unique root path:
/// `a_alive` — the outer-until left side held strictly before this state;
/// `c_alive` — some firing point has held `C` ever since;
/// `done` — the nested reach has completed on this prefix.
#[derive(Clone, Copy, Default)]
struct PhaseFlags {
    a_alive: bool,
    c_alive: bool,
    done: bool,
}

fn word_phases(mdp: &Mdp, sets: &NestedSets) -> Vec<PhaseFlags> {
    let mut phases = vec![PhaseFlags::default(); mdp.len()];
    for id in 0..mdp.len() {
        let flags = match mdp.state(id).parent {
            None => {
                let c_alive = sets.b[id];
                PhaseFlags { a_alive: true, c_alive, done: c_alive && sets.d[id] }
            }
            Some(p) => {
                let p = p as usize;
                let prev = phases[p];
                let a_alive = prev.a_alive && sets.a[p];
                let c_alive = (prev.c_alive && sets.c[p]) || (a_alive && sets.b[id]);
                PhaseFlags { a_alive, c_alive, done: prev.done || (c_alive && sets.d[id]) }
            }
        };
        phases[id] = flags;
    }
    phases
}

/// Synthesize the maximizing policy for `Pmax=?[left U right]`.
///
/// Nested probability bounds inside the operands are evaluated bottom-up into
/// state sets; the outer until is then solved exactly by [`max_until`]. When
/// the query is a nested-reach mission, actions at states where the outer
/// value is already decided are re-chosen (among outer-optimal ones) to
/// maximize the probability that the label word itself completes the nested
/// reach, so the synthesized controller keeps driving toward the drop-off
/// after the pick-up instead of idling on an arbitrary tie.
pub fn synthesize(mdp: &Mdp, formula: &Formula) -> Result<Synthesis, CheckError> {
    let PathFormula::Until(left, right) = &formula.path else {
        return Err(CheckError::UnsupportedShape);
    };
    let safe = eval_state_set(mdp, left);
    let target = eval_state_set(mdp, right);
    let (values, mut policy) = max_until(mdp, &safe, &target);

    if let Some(sets) = detect_nested_reach(mdp, formula) {
        refine_policy(mdp, &sets, &target, &values, &mut policy);
    }

    Ok(Synthesis { v0: values[Mdp::ROOT], values, policy })
}

fn refine_policy(
    mdp: &Mdp,
    sets: &NestedSets,
    target: &[bool],
    values: &[f64],
    policy: &mut Policy,
) {
    let phases = word_phases(mdp, sets);
    let n = mdp.n_bins() as f64;
    let mut w = vec![0.0; mdp.len()];
    for id in (0..mdp.len()).rev() {
        let Some(children) = mdp.children_of(id) else {
            w[id] = if phases[id].done { 1.0 } else { 0.0 };
            continue;
        };
        let vmax = children
            .chunks(mdp.n_bins())
            .map(|block| block.iter().map(|&c| values[c as usize]).sum::<f64>() / n)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut best_w = f64::NEG_INFINITY;
        let mut best_a = 0;
        for (a, block) in children.chunks(mdp.n_bins()).enumerate() {
            let vb = block.iter().map(|&c| values[c as usize]).sum::<f64>() / n;
            // at target states the outer value is 1 whatever we do, so every
            // action is admissible; elsewhere only outer-optimal ones are
            if !target[id] && vb != vmax {
                continue;
            }
            let wb = block.iter().map(|&c| w[c as usize]).sum::<f64>() / n;
            if wb > best_w {
                best_w = wb;
                best_a = a;
            }
        }
        policy.0[id] = Action::Control(best_a);
        w[id] = if phases[id].done { 1.0 } else { best_w };
    }
}

/// Probability that, following `policy`, the label word along the realized
/// path itself completes the nested reach of a mission formula. `None` when
/// the formula is not a nested-reach query.
pub fn delivery_probability(mdp: &Mdp, policy: &Policy, formula: &Formula) -> Option<f64> {
    let sets = detect_nested_reach(mdp, formula)?;
    let phases = word_phases(mdp, &sets);
    let n = mdp.n_bins() as f64;
    let mut w = vec![0.0; mdp.len()];
    for id in (0..mdp.len()).rev() {
        if phases[id].done {
            w[id] = 1.0;
            continue;
        }
        let Some(children) = mdp.children_of(id) else {
            continue;
        };
        let Action::Control(a) = policy.action(id) else {
            continue;
        };
        let block = &children[a * mdp.n_bins()..(a + 1) * mdp.n_bins()];
        w[id] = block.iter().map(|&c| w[c as usize]).sum::<f64>() / n;
    }
    Some(w[Mdp::ROOT])
}

/// Single-path satisfaction of the formula on a finite letter sequence whose
/// last letter repeats forever. Probability operators collapse to plain path
/// satisfaction of the unique suffix.
pub fn holds_on_word(letters: &[PropSet], formula: &Formula) -> bool {
    !letters.is_empty() && path_holds(letters, 0, &formula.path)
}

fn state_holds(letters: &[PropSet], k: usize, f: &StateFormula) -> bool {
    match f {
        StateFormula::Atom(p) => letters[k].contains(*p),
        StateFormula::Not(inner) => !state_holds(letters, k, inner),
        StateFormula::And(a, b) => state_holds(letters, k, a) && state_holds(letters, k, b),
        StateFormula::Implies(a, b) => !state_holds(letters, k, a) || state_holds(letters, k, b),
        StateFormula::Prob { cmp, bound, path } => {
            let p = if path_holds(letters, k, path) { 1.0 } else { 0.0 };
            cmp.eval(p, *bound)
        }
    }
}

fn path_holds(letters: &[PropSet], k: usize, path: &PathFormula) -> bool {
    match path {
        PathFormula::Next(sf) => state_holds(letters, (k + 1).min(letters.len() - 1), sf),
        PathFormula::Until(a, b) => {
            for l in k..letters.len() {
                if state_holds(letters, l, b) {
                    return true;
                }
                if !state_holds(letters, l, a) {
                    return false;
                }
            }
            // beyond the end the last letter repeats; b was already false there
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpState;

    fn set(props: &str) -> PropSet {
        props.parse().unwrap()
    }

    /// Tree MDP from per-state labels: `nodes[depth]` lists the labels of the
    /// states at that depth in breadth-first order; every state below the last
    /// depth is expanded with `n_actions * n_bins` children.
    fn tree(n_actions: usize, n_bins: usize, levels: &[Vec<&str>]) -> Mdp {
        let mut states = Vec::new();
        let mut children: Vec<Option<Box<[u32]>>> = Vec::new();
        states.push(MdpState {
            depth: 0,
            parent: None,
            in_action: None,
            in_bin: None,
            traj: None,
            lower: crate::dynamics::Pose::new(0.0, 0.0, 0.0),
            upper: crate::dynamics::Pose::new(0.0, 0.0, 0.0),
            xi: 0.0,
            theta: set(levels[0][0]),
            terminal: levels.len() == 1,
        });
        children.push(None);
        let mut level_ids = vec![0usize];
        for depth in 1..levels.len() {
            let mut next_ids = Vec::new();
            let mut label_iter = levels[depth].iter();
            for &pid in &level_ids {
                let mut block = Vec::new();
                for a in 0..n_actions {
                    for b in 0..n_bins {
                        let id = states.len();
                        states.push(MdpState {
                            depth: depth as u16,
                            parent: Some(pid as u32),
                            in_action: Some(a as u8),
                            in_bin: Some(b as u16),
                            traj: None,
                            lower: crate::dynamics::Pose::new(0.0, 0.0, 0.0),
                            upper: crate::dynamics::Pose::new(0.0, 0.0, 0.0),
                            xi: 0.0,
                            theta: set(label_iter.next().expect("labels for every node")),
                            terminal: depth + 1 == levels.len(),
                        });
                        children.push(None);
                        block.push(id as u32);
                        next_ids.push(id);
                    }
                }
                children[pid] = Some(block.into_boxed_slice());
            }
            assert!(label_iter.next().is_none(), "too many labels at depth {depth}");
            level_ids = next_ids;
        }
        Mdp::from_parts(vec![0.0; n_actions], n_bins, states, children).unwrap()
    }

    #[test]
    fn preset_displays_and_parses_back() {
        let f = pickup_dropoff_formula();
        let text = f.to_string();
        assert_eq!(text, "Pmax=?[!pi_u U (!pi_u & pi_p & P>0[!pi_u U (!pi_u & pi_d)])]");
        assert_eq!(parse_formula(&text).unwrap(), f);
    }

    #[test]
    fn eval_atoms_and_negation() {
        // two-level fragment: one action, two bins
        let m = tree(1, 2, &[vec!["-"], vec!["pd", "pu"]]);
        let d = eval_state_set(&m, &atom(Prop::Dropoff));
        assert_eq!(d, vec![false, true, false]);
        let not_u = eval_state_set(&m, &not(atom(Prop::Unsafe)));
        assert_eq!(not_u, vec![true, true, false]);
    }

    #[test]
    fn positive_reachability_as_state_formula() {
        // depth 2, 1 action, 2 bins: only the left branch reaches a dropoff
        // without crossing unsafe labels
        let m = tree(
            1,
            2,
            &[vec!["-"], vec!["-", "u"], vec!["d", "-", "d", "-"]],
        );
        let f = StateFormula::Prob {
            cmp: Cmp::Gt,
            bound: 0.0,
            path: Box::new(PathFormula::Until(
                not(atom(Prop::Unsafe)),
                and(not(atom(Prop::Unsafe)), atom(Prop::Dropoff)),
            )),
        };
        let reach = eval_state_set(&m, &f);
        assert!(reach[0]);
        assert!(reach[1]);
        assert!(!reach[2], "unsafe state cannot start a safe run");
        assert_eq!(&reach[3..], &[true, false, true, false]);
    }

    #[test]
    fn max_until_boundary_cases() {
        let m = tree(1, 2, &[vec!["-"], vec!["d", "u"]]);
        let safe = eval_state_set(&m, &not(atom(Prop::Unsafe)));
        let target = eval_state_set(&m, &atom(Prop::Dropoff));
        let (v, _) = max_until(&m, &safe, &target);
        assert_eq!(v[1], 1.0);
        assert_eq!(v[2], 0.0);
        assert_eq!(v[0], 0.5);
    }

    #[test]
    fn synthesize_trivial_cases() {
        // root already satisfies the target
        let m = tree(1, 1, &[vec!["pd"]]);
        let syn = synthesize(&m, &pickup_dropoff_formula()).unwrap();
        assert_eq!(syn.v0, 1.0);
        assert_eq!(syn.policy.action(0), Action::Hold);

        // no dropoff anywhere
        let m = tree(2, 2, &[vec!["-"], vec!["p", "p", "-", "-"]]);
        let syn = synthesize(&m, &pickup_dropoff_formula()).unwrap();
        assert_eq!(syn.v0, 0.0);

        // next-rooted queries are outside the supported shape
        let next = Formula { path: PathFormula::Next(atom(Prop::Pickup)) };
        assert_eq!(synthesize(&m, &next), Err(CheckError::UnsupportedShape));
    }

    /// Brute-force check on the spec'd depth-2 hand-labeled instance: the
    /// backward pass must match enumeration over all deterministic policies.
    #[test]
    fn matches_policy_enumeration_depth_two() {
        let m = tree(
            2,
            2,
            &[
                vec!["-"],
                vec!["p", "-", "u", "p"],
                vec![
                    "d", "-", "u", "d", "-", "-", "d", "u", "-", "-", "-", "-", "d", "d", "u", "-",
                ],
            ],
        );
        let formula = pickup_dropoff_formula();
        let syn = synthesize(&m, &formula).unwrap();
        let best = enumerate_best(&m, &formula);
        assert!((syn.v0 - best).abs() < 1e-12);
        assert!((evaluate_policy(&m, &formula, &syn.policy) - syn.v0).abs() < 1e-12);
    }

    /// Value of a fixed policy: measure of policy paths satisfying the outer
    /// until, target membership taken from the branching semantics.
    pub(crate) fn evaluate_policy(mdp: &Mdp, formula: &Formula, policy: &Policy) -> f64 {
        let PathFormula::Until(left, right) = &formula.path else {
            panic!("until-rooted formula expected")
        };
        let safe = eval_state_set(mdp, left);
        let target = eval_state_set(mdp, right);
        fn rec(
            mdp: &Mdp,
            policy: &Policy,
            safe: &[bool],
            target: &[bool],
            id: usize,
        ) -> f64 {
            if target[id] {
                return 1.0;
            }
            if !safe[id] {
                return 0.0;
            }
            match (mdp.children_of(id), policy.action(id)) {
                (Some(children), Action::Control(a)) => {
                    let block = &children[a * mdp.n_bins()..(a + 1) * mdp.n_bins()];
                    block
                        .iter()
                        .map(|&c| rec(mdp, policy, safe, target, c as usize))
                        .sum::<f64>()
                        / mdp.n_bins() as f64
                }
                _ => 0.0,
            }
        }
        rec(mdp, policy, &safe, &target, Mdp::ROOT)
    }

    /// Exhaustive maximum over all deterministic memoryless policies.
    pub(crate) fn enumerate_best(mdp: &Mdp, formula: &Formula) -> f64 {
        let choices: Vec<usize> =
            (0..mdp.len()).filter(|&id| mdp.children_of(id).is_some()).collect();
        let n_actions = mdp.controls().len();
        let mut best = 0.0f64;
        let mut assignment = vec![0usize; choices.len()];
        loop {
            let mut policy = vec![Action::Hold; mdp.len()];
            for (slot, &id) in choices.iter().enumerate() {
                policy[id] = Action::Control(assignment[slot]);
            }
            best = best.max(evaluate_policy(mdp, formula, &Policy(policy)));
            // odometer increment
            let mut i = 0;
            loop {
                if i == assignment.len() {
                    return best;
                }
                assignment[i] += 1;
                if assignment[i] < n_actions {
                    break;
                }
                assignment[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn random_trees_match_enumeration() {
        let mut seed = 0x1234_5678_9abc_def0u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            seed
        };
        let labels = ["-", "p", "d", "u", "pd", "pu", "-", "-"];
        let formula = pickup_dropoff_formula();
        for _ in 0..60 {
            let n_actions = 1 + (next() % 2) as usize;
            let n_bins = 1 + (next() % 2) as usize;
            let depth = 2 + (next() % 2) as usize;
            let mut levels: Vec<Vec<&str>> = vec![vec![labels[(next() % 8) as usize]]];
            let mut width = 1;
            for _ in 0..depth {
                width *= n_actions * n_bins;
                if width > 32 {
                    break;
                }
                levels.push((0..width).map(|_| labels[(next() % 8) as usize]).collect());
            }
            let m = tree(n_actions, n_bins, &levels);
            if m.len() > 40 {
                continue;
            }
            let syn = synthesize(&m, &formula).unwrap();
            let best = enumerate_best(&m, &formula);
            assert!(
                (syn.v0 - best).abs() < 1e-12,
                "synthesized {} vs enumerated {best}",
                syn.v0
            );
            assert!((evaluate_policy(&m, &formula, &syn.policy) - syn.v0).abs() < 1e-12);
        }
    }

    #[test]
    fn bellman_consistency_and_values_in_unit_interval() {
        let m = tree(
            2,
            2,
            &[
                vec!["-"],
                vec!["-", "p", "u", "-"],
                vec![
                    "d", "p", "-", "u", "pd", "-", "-", "d", "-", "-", "u", "-", "d", "-", "-", "-",
                ],
            ],
        );
        let formula = pickup_dropoff_formula();
        let syn = synthesize(&m, &formula).unwrap();
        let PathFormula::Until(left, right) = &formula.path else { unreachable!() };
        let safe = eval_state_set(&m, left);
        let target = eval_state_set(&m, right);
        for id in 0..m.len() {
            assert!((0.0..=1.0).contains(&syn.values[id]));
            let Some(children) = m.children_of(id) else { continue };
            if !safe[id] || target[id] {
                continue;
            }
            let Action::Control(a) = syn.policy.action(id) else { panic!() };
            let backup = |act: usize| {
                children[act * m.n_bins()..(act + 1) * m.n_bins()]
                    .iter()
                    .map(|&c| syn.values[c as usize])
                    .sum::<f64>()
                    / m.n_bins() as f64
            };
            assert!((syn.values[id] - backup(a)).abs() < 1e-12);
            for other in 0..m.controls().len() {
                assert!(backup(other) <= backup(a) + 1e-12);
            }
        }
    }

    #[test]
    fn enlarging_target_never_decreases_values() {
        let m = tree(
            2,
            2,
            &[vec!["-"], vec!["-", "p", "-", "d"], vec![
                "d", "-", "-", "p", "-", "d", "-", "-", "-", "-", "d", "-", "p", "-", "-", "-",
            ]],
        );
        let safe = vec![true; m.len()];
        let target: Vec<bool> = (0..m.len()).map(|i| i % 5 == 0).collect();
        let mut larger = target.clone();
        larger[7] = true;
        larger[11] = true;
        let (v1, _) = max_until(&m, &safe, &target);
        let (v2, _) = max_until(&m, &safe, &larger);
        for id in 0..m.len() {
            assert!(v2[id] >= v1[id] - 1e-15);
        }
    }

    #[test]
    fn argmax_unaffected_by_positive_scaling() {
        // the tie-break depends only on comparisons, so scaling every child
        // value by a positive constant must leave the argmax unchanged
        let children: Vec<u32> = (1..=6).collect();
        let values = [0.3, 0.9, 0.1, 0.4, 0.4, 0.4, 0.1];
        let (_, a1) = best_backup(&children, 2, |c| values[c], 2.0);
        let (_, a2) = best_backup(&children, 2, |c| 7.5 * values[c], 2.0);
        assert_eq!(a1, a2);
    }

    #[test]
    fn refinement_prefers_delivering_action() {
        // both pickup states are outer targets (value 1 whatever happens
        // next), but only action 1 goes on to reach the dropoff
        let m = tree(2, 1, &[vec!["-"], vec!["p", "p"], vec!["-", "d", "-", "d"]]);
        let formula = pickup_dropoff_formula();
        let syn = synthesize(&m, &formula).unwrap();
        assert_eq!(syn.v0, 1.0);
        assert_eq!(syn.policy.action(1), Action::Control(1));
        assert_eq!(syn.policy.action(2), Action::Control(1));
        assert_eq!(delivery_probability(&m, &syn.policy, &formula), Some(1.0));

        // the plain backward pass alone idles on the tie instead
        let PathFormula::Until(left, right) = &formula.path else { unreachable!() };
        let (values, plain) =
            max_until(&m, &eval_state_set(&m, left), &eval_state_set(&m, right));
        assert_eq!(plain.action(1), Action::Control(0));
        assert_eq!(values[0], 1.0);
        assert_eq!(delivery_probability(&m, &plain, &formula), Some(0.0));
    }

    #[test]
    fn word_checks() {
        let f = pickup_dropoff_formula();
        assert!(holds_on_word(&[set("-"), set("p"), set("d")], &f));
        assert!(!holds_on_word(&[set("-"), set("u"), set("p"), set("d")], &f));
        assert!(holds_on_word(&[set("pd")], &f));
        assert!(!holds_on_word(&[set("-"), set("d"), set("p")], &f));
        assert!(holds_on_word(&[set("-"), set("d"), set("p"), set("d")], &f));
        assert!(!holds_on_word(&[set("p"), set("u"), set("d")], &f));
        // unsafe after completion does not retract satisfaction
        assert!(holds_on_word(&[set("p"), set("d"), set("u")], &f));

        let next_pickup = Formula { path: PathFormula::Next(atom(Prop::Pickup)) };
        assert!(holds_on_word(&[set("-"), set("p")], &next_pickup));
        assert!(!holds_on_word(&[set("-"), set("d")], &next_pickup));
        // single letter: the next position repeats the last letter
        assert!(holds_on_word(&[set("p")], &next_pickup));
    }
}
