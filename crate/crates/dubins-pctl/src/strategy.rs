//! From MDP policy to vehicle control strategy.
//!
//! A gyroscope measurement history — one (commanded control, noise bin) pair
//! per completed stage — identifies a unique tree state, because the noise
//! bin is part of the state. `locate` walks that correspondence and
//! `next_input` reads the synthesized action off the located state. Histories
//! are validated strictly: an off-tree history is an error, never silently
//! re-projected, since the satisfaction bound only covers on-tree executions.
//!
//! [`StrategyTable`] is the flat export of the same information: enough of
//! the tree (edges, actions, values) to replay the strategy without
//! rebuilding the MDP, written as a versioned tab-separated file with
//! embedded input and content hashes.

use crate::geometry::PropSet;
use crate::hashing::Hasher;
use crate::mdp::Mdp;
use crate::pctl::{Action, Policy, ValueMap};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("history leaves the tree at step {step} (action {action}, bin {bin})")]
    OffTree { step: usize, action: usize, bin: usize },
    #[error("no continuation from state {state}: it is terminal at depth {depth}")]
    NoContinuation { state: usize, depth: usize },
    #[error("horizon exhausted: history has {len} stages, the tree depth is {horizon}")]
    HorizonExhausted { len: usize, horizon: usize },
}

/// One completed stage as seen by the controller: the control it commanded
/// and the noise bin recovered from the measured interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementRecord {
    pub action: usize,
    pub bin: usize,
}

/// The unique state reached from the root by following the history's
/// (action, bin) edges.
pub fn locate(mdp: &Mdp, history: &[MeasurementRecord]) -> Result<usize, StrategyError> {
    let mut id = Mdp::ROOT;
    for (step, rec) in history.iter().enumerate() {
        match mdp.child(id, rec.action, rec.bin) {
            Some(next) => id = next,
            None => {
                return Err(StrategyError::OffTree {
                    step,
                    action: rec.action,
                    bin: rec.bin,
                })
            }
        }
    }
    Ok(id)
}

/// Control index to command after the given history: the policy action at
/// the located state.
pub fn next_input(
    mdp: &Mdp,
    policy: &Policy,
    history: &[MeasurementRecord],
) -> Result<usize, StrategyError> {
    if history.len() >= mdp.horizon() {
        return Err(StrategyError::HorizonExhausted {
            len: history.len(),
            horizon: mdp.horizon(),
        });
    }
    let id = locate(mdp, history)?;
    match policy.action(id) {
        Action::Control(a) => Ok(a),
        Action::Hold => Err(StrategyError::NoContinuation {
            state: id,
            depth: mdp.state(id).depth as usize,
        }),
    }
}

/// Stateful stepper over the same mapping; agrees with the pure functions.
#[derive(Debug, Clone, Default)]
pub struct StrategyState {
    current: usize,
    history: Vec<MeasurementRecord>,
}

impl StrategyState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn history(&self) -> &[MeasurementRecord] {
        &self.history
    }

    pub fn next_input(&self, mdp: &Mdp, policy: &Policy) -> Result<usize, StrategyError> {
        next_input(mdp, policy, &self.history)
    }

    pub fn advance(&mut self, mdp: &Mdp, rec: MeasurementRecord) -> Result<usize, StrategyError> {
        match mdp.child(self.current, rec.action, rec.bin) {
            Some(next) => {
                self.current = next;
                self.history.push(rec);
                Ok(next)
            }
            None => Err(StrategyError::OffTree {
                step: self.history.len(),
                action: rec.action,
                bin: rec.bin,
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("policy file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("policy file content hash mismatch: header says {header}, rows hash to {actual}")]
    Tampered { header: String, actual: String },
}

/// One exported state: enough to follow edges and read the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub id: u32,
    pub depth: u16,
    pub parent: Option<u32>,
    pub in_action: Option<u8>,
    pub in_bin: Option<u16>,
    pub mu: Action,
    pub value: f64,
    pub theta: PropSet,
    pub terminal: bool,
}

/// Replayable strategy: the tree's edge structure plus per-state action and
/// value, detached from the geometric payload of the MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyTable {
    input_hash: String,
    controls: Vec<f64>,
    n_bins: usize,
    horizon: usize,
    v0: f64,
    rows: Vec<StrategyRow>,
    children: Vec<Option<Box<[u32]>>>,
}

pub const POLICY_FORMAT_HEADER: &str = "#dubins-pctl-policy v1";

impl StrategyTable {
    pub fn from_mdp(mdp: &Mdp, policy: &Policy, values: &ValueMap, input_hash: &str) -> Self {
        let rows = (0..mdp.len())
            .map(|id| {
                let s = mdp.state(id);
                StrategyRow {
                    id: id as u32,
                    depth: s.depth,
                    parent: s.parent,
                    in_action: s.in_action,
                    in_bin: s.in_bin,
                    mu: policy.action(id),
                    value: values[id],
                    theta: s.theta,
                    terminal: s.terminal,
                }
            })
            .collect();
        let children = (0..mdp.len())
            .map(|id| mdp.children_of(id).map(|c| c.to_vec().into_boxed_slice()))
            .collect();
        Self {
            input_hash: input_hash.to_string(),
            controls: mdp.controls().to_vec(),
            n_bins: mdp.n_bins(),
            horizon: mdp.horizon(),
            v0: values[Mdp::ROOT],
            rows,
            children,
        }
    }

    pub fn input_hash(&self) -> &str {
        &self.input_hash
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, id: usize) -> &StrategyRow {
        &self.rows[id]
    }

    pub fn rows(&self) -> &[StrategyRow] {
        &self.rows
    }

    pub fn locate(&self, history: &[MeasurementRecord]) -> Result<usize, StrategyError> {
        let mut id = Mdp::ROOT;
        for (step, rec) in history.iter().enumerate() {
            let child = self.children[id]
                .as_deref()
                .and_then(|c| c.get(rec.action * self.n_bins + rec.bin))
                .copied();
            match child {
                Some(next) => id = next as usize,
                None => {
                    return Err(StrategyError::OffTree {
                        step,
                        action: rec.action,
                        bin: rec.bin,
                    })
                }
            }
        }
        Ok(id)
    }

    pub fn next_input(&self, history: &[MeasurementRecord]) -> Result<usize, StrategyError> {
        if history.len() >= self.horizon {
            return Err(StrategyError::HorizonExhausted {
                len: history.len(),
                horizon: self.horizon,
            });
        }
        let id = self.locate(history)?;
        match self.rows[id].mu {
            Action::Control(a) => Ok(a),
            Action::Hold => Err(StrategyError::NoContinuation {
                state: id,
                depth: self.rows[id].depth as usize,
            }),
        }
    }

    fn row_line(row: &StrategyRow) -> String {
        let opt_u32 = |v: Option<u32>| v.map_or("-".to_string(), |x| x.to_string());
        let opt_u8 = |v: Option<u8>| v.map_or("-".to_string(), |x| x.to_string());
        let opt_u16 = |v: Option<u16>| v.map_or("-".to_string(), |x| x.to_string());
        let mu = match row.mu {
            Action::Control(a) => a.to_string(),
            Action::Hold => "hold".to_string(),
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.id,
            row.depth,
            opt_u32(row.parent),
            opt_u8(row.in_action),
            opt_u16(row.in_bin),
            mu,
            row.value,
            row.theta,
            u8::from(row.terminal),
        )
    }

    /// Write the versioned tab-separated format. Floats use shortest
    /// round-trip formatting so a written table reloads bit-identically.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{POLICY_FORMAT_HEADER}")?;
        writeln!(w, "#tool_version\t{}", env!("CARGO_PKG_VERSION"))?;
        writeln!(w, "#input_hash\t{}", self.input_hash)?;
        let controls =
            self.controls.iter().map(f64::to_string).collect::<Vec<_>>().join("\t");
        writeln!(w, "#controls\t{controls}")?;
        writeln!(w, "#bins\t{}", self.n_bins)?;
        writeln!(w, "#horizon\t{}", self.horizon)?;
        writeln!(w, "#v0\t{}", self.v0)?;
        writeln!(w, "#columns\tid\tdepth\tparent\taction\tbin\tmu\tvalue\ttheta\tterminal")?;
        let mut hasher = Hasher::new();
        for row in &self.rows {
            let line = Self::row_line(row);
            hasher.update(line.as_bytes());
            w.write_all(line.as_bytes())?;
        }
        writeln!(w, "#table_hash\t{}", hasher.finish_hex())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TableError> {
        let parse_err = |line: usize, message: String| TableError::Parse { line, message };
        let mut lines = r.lines().enumerate();

        let (_, first) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty policy file".into()))?;
        if first? != POLICY_FORMAT_HEADER {
            return Err(parse_err(1, format!("expected header '{POLICY_FORMAT_HEADER}'")));
        }

        let mut input_hash = None;
        let mut controls: Option<Vec<f64>> = None;
        let mut n_bins = None;
        let mut horizon = None;
        let mut v0 = None;
        let mut table_hash_header = None;
        let mut rows: Vec<StrategyRow> = Vec::new();
        let mut hasher = Hasher::new();

        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split('\t');
                let key = parts.next().unwrap_or("");
                match key {
                    "tool_version" | "columns" => {}
                    "input_hash" => {
                        input_hash = Some(
                            parts
                                .next()
                                .ok_or_else(|| parse_err(lineno, "missing input hash".into()))?
                                .to_string(),
                        )
                    }
                    "controls" => {
                        let mut us = Vec::new();
                        for p in parts {
                            us.push(p.parse::<f64>().map_err(|e| {
                                parse_err(lineno, format!("bad control value: {e}"))
                            })?);
                        }
                        if us.is_empty() {
                            return Err(parse_err(lineno, "empty control set".into()));
                        }
                        controls = Some(us);
                    }
                    "bins" => {
                        n_bins = Some(parse_field(parts.next(), lineno, "bins")?);
                    }
                    "horizon" => {
                        horizon = Some(parse_field(parts.next(), lineno, "horizon")?);
                    }
                    "v0" => {
                        v0 = Some(parse_field(parts.next(), lineno, "v0")?);
                    }
                    "table_hash" => {
                        table_hash_header = Some(
                            parts
                                .next()
                                .ok_or_else(|| parse_err(lineno, "missing table hash".into()))?
                                .to_string(),
                        )
                    }
                    other => {
                        return Err(parse_err(lineno, format!("unknown header key '{other}'")))
                    }
                }
                continue;
            }
            if table_hash_header.is_some() {
                return Err(parse_err(lineno, "rows after table_hash".into()));
            }
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            rows.push(parse_row(&line, lineno)?);
        }

        let actual = hasher.finish_hex();
        let header = table_hash_header
            .ok_or_else(|| parse_err(0, "missing table_hash footer".into()))?;
        if header != actual {
            return Err(TableError::Tampered { header, actual });
        }

        let input_hash =
            input_hash.ok_or_else(|| parse_err(0, "missing input_hash header".into()))?;
        let controls = controls.ok_or_else(|| parse_err(0, "missing controls header".into()))?;
        let n_bins: usize = n_bins.ok_or_else(|| parse_err(0, "missing bins header".into()))?;
        let horizon: usize =
            horizon.ok_or_else(|| parse_err(0, "missing horizon header".into()))?;
        let v0: f64 = v0.ok_or_else(|| parse_err(0, "missing v0 header".into()))?;

        // rebuild child blocks from the edge bookkeeping
        let mut children: Vec<Option<Box<[u32]>>> = vec![None; rows.len()];
        let mut blocks: Vec<Option<Vec<u32>>> = vec![None; rows.len()];
        for (i, row) in rows.iter().enumerate() {
            if row.id as usize != i {
                return Err(parse_err(0, format!("row ids must be dense, found {}", row.id)));
            }
            let Some(p) = row.parent else { continue };
            let p = p as usize;
            if p >= rows.len() || p >= i {
                return Err(parse_err(0, format!("row {i}: bad parent {p}")));
            }
            let (Some(a), Some(b)) = (row.in_action, row.in_bin) else {
                return Err(parse_err(0, format!("row {i}: missing incoming edge")));
            };
            let slot = a as usize * n_bins + b as usize;
            let block = blocks[p].get_or_insert_with(|| vec![u32::MAX; controls.len() * n_bins]);
            if slot >= block.len() || block[slot] != u32::MAX {
                return Err(parse_err(0, format!("row {i}: duplicate or invalid edge slot")));
            }
            block[slot] = row.id;
        }
        for (i, block) in blocks.into_iter().enumerate() {
            match block {
                None => {
                    if !rows[i].terminal {
                        return Err(parse_err(0, format!("non-terminal row {i} has no children")));
                    }
                }
                Some(b) => {
                    if rows[i].terminal {
                        return Err(parse_err(0, format!("terminal row {i} has children")));
                    }
                    if b.contains(&u32::MAX) {
                        return Err(parse_err(0, format!("row {i}: missing child edges")));
                    }
                    children[i] = Some(b.into_boxed_slice());
                }
            }
        }

        Ok(Self { input_hash, controls, n_bins, horizon, v0, rows, children })
    }
}

fn parse_field<T: std::str::FromStr>(
    raw: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, TableError>
where
    T::Err: std::fmt::Display,
{
    raw.ok_or_else(|| TableError::Parse { line, message: format!("missing {what}") })?
        .parse()
        .map_err(|e| TableError::Parse { line, message: format!("bad {what}: {e}") })
}

fn parse_row(line: &str, lineno: usize) -> Result<StrategyRow, TableError> {
    let err = |message: String| TableError::Parse { line: lineno, message };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 9 {
        return Err(err(format!("expected 9 fields, found {}", fields.len())));
    }
    let opt = |s: &str| if s == "-" { None } else { Some(s.to_string()) };
    let id: u32 = fields[0].parse().map_err(|e| err(format!("bad id: {e}")))?;
    let depth: u16 = fields[1].parse().map_err(|e| err(format!("bad depth: {e}")))?;
    let parent = opt(fields[2])
        .map(|s| s.parse::<u32>())
        .transpose()
        .map_err(|e| err(format!("bad parent: {e}")))?;
    let in_action = opt(fields[3])
        .map(|s| s.parse::<u8>())
        .transpose()
        .map_err(|e| err(format!("bad action: {e}")))?;
    let in_bin = opt(fields[4])
        .map(|s| s.parse::<u16>())
        .transpose()
        .map_err(|e| err(format!("bad bin: {e}")))?;
    let mu = if fields[5] == "hold" {
        Action::Hold
    } else {
        Action::Control(fields[5].parse().map_err(|e| err(format!("bad mu: {e}")))?)
    };
    let value: f64 = fields[6].parse().map_err(|e| err(format!("bad value: {e}")))?;
    let theta: PropSet = fields[7].parse().map_err(|e| err(format!("bad theta: {e}")))?;
    let terminal = match fields[8] {
        "0" => false,
        "1" => true,
        other => return Err(err(format!("bad terminal flag '{other}'"))),
    };
    Ok(StrategyRow { id, depth, parent, in_action, in_bin, mu, value, theta, terminal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{NoisePartition, VehicleParams};
    use crate::geometry::{ConvexRegion, Environment, Point2, RegionLabel};
    use crate::mdp::{build, BuildConfig};
    use crate::pctl::{pickup_dropoff_formula, synthesize};

    fn setup(k: usize) -> (Mdp, crate::pctl::Synthesis) {
        let env = Environment::new(
            vec![
                ConvexRegion::new(
                    "pick",
                    RegionLabel::Pickup,
                    vec![
                        Point2::new(0.4, -1.5),
                        Point2::new(1.6, -1.5),
                        Point2::new(1.6, 1.5),
                        Point2::new(0.4, 1.5),
                    ],
                )
                .unwrap(),
                ConvexRegion::new(
                    "drop",
                    RegionLabel::Dropoff,
                    vec![
                        Point2::new(1.6, -2.0),
                        Point2::new(5.0, -2.0),
                        Point2::new(5.0, 2.0),
                        Point2::new(1.6, 2.0),
                    ],
                )
                .unwrap(),
                ConvexRegion::new(
                    "hole",
                    RegionLabel::Unsafe,
                    vec![
                        Point2::new(0.4, 0.8),
                        Point2::new(2.0, 0.8),
                        Point2::new(2.0, 2.2),
                        Point2::new(0.4, 2.2),
                    ],
                )
                .unwrap(),
            ],
            crate::dynamics::Pose::new(0.0, 0.0, 0.0),
        )
        .unwrap();
        let params = VehicleParams::new(3.0 / std::f64::consts::PI, 1.2).unwrap();
        let part = NoisePartition::new(0.06, 3).unwrap();
        let mdp = build(&env, &params, &part, k, &BuildConfig::default()).unwrap();
        let syn = synthesize(&mdp, &pickup_dropoff_formula()).unwrap();
        (mdp, syn)
    }

    fn path_to(mdp: &Mdp, id: usize) -> Vec<MeasurementRecord> {
        let mut recs = Vec::new();
        let mut cur = id;
        while let Some(p) = mdp.state(cur).parent {
            let s = mdp.state(cur);
            recs.push(MeasurementRecord {
                action: s.in_action.unwrap() as usize,
                bin: s.in_bin.unwrap() as usize,
            });
            cur = p as usize;
        }
        recs.reverse();
        recs
    }

    #[test]
    fn locate_round_trips_every_state() {
        let (mdp, _) = setup(2);
        assert_eq!(locate(&mdp, &[]).unwrap(), Mdp::ROOT);
        for id in 0..mdp.len() {
            assert_eq!(locate(&mdp, &path_to(&mdp, id)).unwrap(), id);
        }
    }

    #[test]
    fn distinct_histories_distinct_states() {
        let (mdp, _) = setup(2);
        let a = locate(&mdp, &[MeasurementRecord { action: 0, bin: 0 }]).unwrap();
        let b = locate(&mdp, &[MeasurementRecord { action: 0, bin: 1 }]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn next_input_contract() {
        let (mdp, syn) = setup(3);
        // empty history returns the root action
        let a0 = next_input(&mdp, &syn.policy, &[]).unwrap();
        assert_eq!(Action::Control(a0), syn.policy.action(Mdp::ROOT));

        // history of full length exhausts the horizon
        let full = (0..mdp.len())
            .find(|&id| mdp.state(id).depth as usize == mdp.horizon())
            .expect("some branch reaches the horizon");
        let deep = path_to(&mdp, full);
        assert!(matches!(
            next_input(&mdp, &syn.policy, &deep),
            Err(StrategyError::HorizonExhausted { len: 3, horizon: 3 })
        ));

        // a pruned possibly-unsafe state has no continuation
        if let Some(pruned) = (0..mdp.len()).find(|&id| {
            mdp.state(id).terminal && (mdp.state(id).depth as usize) < mdp.horizon()
        }) {
            let h = path_to(&mdp, pruned);
            assert!(matches!(
                next_input(&mdp, &syn.policy, &h),
                Err(StrategyError::NoContinuation { .. })
            ));
        } else {
            panic!("expected at least one pruned state in this environment");
        }

        // unknown action index is off-tree
        assert!(matches!(
            locate(&mdp, &[MeasurementRecord { action: 7, bin: 0 }]),
            Err(StrategyError::OffTree { step: 0, .. })
        ));
    }

    #[test]
    fn stepper_agrees_with_pure_functions() {
        let (mdp, syn) = setup(2);
        let mut stepper = StrategyState::new();
        let mut history = Vec::new();
        for bin in [2usize, 0] {
            let pure = next_input(&mdp, &syn.policy, &history).ok();
            let stepped = stepper.next_input(&mdp, &syn.policy).ok();
            assert_eq!(pure, stepped);
            let Some(action) = pure else { break };
            let rec = MeasurementRecord { action, bin };
            history.push(rec);
            stepper.advance(&mdp, rec).unwrap();
            assert_eq!(stepper.current(), locate(&mdp, &history).unwrap());
        }
    }

    #[test]
    fn table_round_trip_and_agreement() {
        let (mdp, syn) = setup(2);
        let table = StrategyTable::from_mdp(&mdp, &syn.policy, &syn.values, "cafe");
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        let back = StrategyTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.v0(), syn.v0);

        for id in 0..mdp.len() {
            let h = path_to(&mdp, id);
            assert_eq!(table.locate(&h).unwrap(), id);
            match (next_input(&mdp, &syn.policy, &h), table.next_input(&h)) {
                (Ok(a), Ok(b)) => assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                other => panic!("table and mdp disagree: {other:?}"),
            }
        }
    }

    #[test]
    fn tampered_table_detected() {
        let (mdp, syn) = setup(1);
        let table = StrategyTable::from_mdp(&mdp, &syn.policy, &syn.values, "cafe");
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        // flip the terminal flag of the last data row, keeping valid syntax
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let idx = lines.iter().rposition(|l| !l.starts_with('#')).unwrap();
        let flipped = if let Some(p) = lines[idx].strip_suffix("\t1") {
            format!("{p}\t0")
        } else {
            format!("{}\t1", lines[idx].strip_suffix("\t0").unwrap())
        };
        lines[idx] = flipped;
        let tampered = lines.join("\n") + "\n";
        assert_ne!(text, tampered);
        assert!(matches!(
            StrategyTable::read_from(tampered.as_bytes()),
            Err(TableError::Tampered { .. })
        ));
    }
}
