//! Track-oriented multiple hypothesis tracker.
//!
//! Each track is a tree of association histories; a global hypothesis picks
//! one leaf per track such that no measurement is shared. Tracks whose gates
//! have shared a measurement form a component with its own ranked list of
//! hypotheses; components are merged when their gates overlap and a track
//! is split off once every hypothesis agrees on its leaf. Every scan each
//! component's hypotheses are extended with the k best conflict-free
//! assignments of their leaves (plus new tracks), the best `K` children are
//! kept, and the decision at the oldest scan of the sliding window is
//! committed to the component's best hypothesis.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::rc::Rc;

use log::debug;
use nalgebra::DMatrix;

use crate::assoc::{gated_betas, kbest_log_assignments};
use crate::config::{TrackerParams, ValidatedConfig};
use crate::models::{predict, rts_smooth, update_with, Innovation, MeasurementModel, ModelError, MotionModel};
use crate::tracker::{birth_belief, KnownBirth, TrackEstimate, Tracker, TrackerDiagnostics, TrackerError, TrackerKind};
use crate::types::{AssociationProblem, GaussianBelief, MeasurementFrame};

#[derive(Debug, Clone)]
struct Node {
    parent: Option<usize>,
    tree: u64,
    scan: usize,
    meas: Option<usize>,
    dead: bool,
    filtered: GaussianBelief,
    predicted: GaussianBelief,
    /// Detection history, bit 0 is this node's scan.
    hits: u32,
    misses: usize,
    confirmed: bool,
}

/// A conflict-free choice of one leaf per track.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalHypothesis {
    pub log_weight: f64,
    leaves: Vec<usize>,
}

/// Tracks that interact, with their ranked joint hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    hypotheses: Vec<GlobalHypothesis>,
}

impl Component {
    fn single(leaves: Vec<usize>) -> Self {
        Self { hypotheses: vec![GlobalHypothesis { log_weight: 0.0, leaves }] }
    }

    pub fn hypotheses(&self) -> &[GlobalHypothesis] {
        &self.hypotheses
    }

    fn is_empty(&self) -> bool {
        self.hypotheses.iter().all(|h| h.leaves.is_empty())
    }
}

#[derive(Debug, Clone)]
pub struct MhtState {
    nodes: Vec<Node>,
    components: Vec<Component>,
    tree_birth: HashMap<u64, usize>,
    pub time: usize,
    pub window: usize,
    next_tree: u64,
}

/// Model-level inputs of a step.
#[derive(Debug, Clone)]
pub struct MhtModels<'a> {
    pub motion: &'a MotionModel,
    pub measurement: &'a MeasurementModel,
    pub params: &'a TrackerParams,
    /// Whether tracks are born from measurements and may die.
    pub managed: bool,
}

/// Association history of one track in a hypothesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackHistory {
    pub label: u64,
    /// `(scan, measurement)` from oldest to newest retained node; `None` is
    /// a missed detection (or the track root in known-births mode).
    pub associations: Vec<(usize, Option<usize>)>,
    pub dead: bool,
    pub confirmed: bool,
}

impl MhtState {
    pub fn new(window: usize) -> Self {
        Self { nodes: Vec::new(), components: Vec::new(), tree_birth: HashMap::new(), time: 0, window, next_tree: 0 }
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Total number of hypotheses over all components.
    pub fn hypothesis_count(&self) -> usize {
        self.components.iter().map(|c| c.hypotheses.len()).sum()
    }

    /// Number of nodes kept in the arena.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn all_leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.components.iter().flat_map(|c| c.hypotheses.iter()).flat_map(|h| h.leaves.iter().copied())
    }

    /// Largest number of scans spanned by a retained track branch.
    pub fn max_depth(&self) -> usize {
        let mut depth = 0;
        for leaf in self.all_leaves() {
            let mut n = leaf;
            let mut scans = HashSet::from([self.nodes[n].scan]);
            while let Some(p) = self.nodes[n].parent {
                n = p;
                scans.insert(self.nodes[n].scan);
            }
            depth = depth.max(scans.len());
        }
        depth
    }

    /// Adds a confirmed track root as a component of its own (known-births
    /// mode).
    pub fn add_known_track(&mut self, belief: GaussianBelief, scan: usize) -> u64 {
        let tree = self.next_tree;
        self.next_tree += 1;
        self.tree_birth.insert(tree, scan);
        let id = self.nodes.len();
        self.nodes.push(Node {
            parent: None,
            tree,
            scan,
            meas: None,
            dead: false,
            predicted: belief.clone(),
            filtered: belief,
            hits: 0,
            misses: 0,
            confirmed: true,
        });
        self.components.push(Component::single(vec![id]));
        tree
    }

    fn history(&self, leaf: usize) -> TrackHistory {
        let mut chain = Vec::new();
        let mut n = Some(leaf);
        while let Some(id) = n {
            let node = &self.nodes[id];
            if !node.dead {
                chain.push((node.scan, node.meas));
            }
            n = node.parent;
        }
        chain.reverse();
        let node = &self.nodes[leaf];
        TrackHistory { label: node.tree, associations: chain, dead: node.dead, confirmed: node.confirmed }
    }

    /// Per-track association histories of hypothesis `index` of component
    /// `component`.
    pub fn histories(&self, component: usize, index: usize) -> Vec<TrackHistory> {
        let mut out: Vec<TrackHistory> =
            self.components[component].hypotheses[index].leaves.iter().map(|&l| self.history(l)).collect();
        out.sort_by_key(|t| t.label);
        out
    }

    /// Histories of the best hypothesis of every component, by label.
    pub fn best_histories(&self) -> Vec<TrackHistory> {
        let mut out: Vec<TrackHistory> = self
            .components
            .iter()
            .filter_map(|c| c.hypotheses.first())
            .flat_map(|h| h.leaves.iter().map(|&l| self.history(l)))
            .collect();
        out.sort_by_key(|t| t.label);
        out
    }

    /// Checks that no hypothesis uses a measurement twice in any scan, that
    /// hypotheses are ranked by weight and that no track appears in two
    /// components.
    pub fn validate(&self) -> Result<(), String> {
        fn disjoint(tracks: impl IntoIterator<Item = TrackHistory>) -> Result<(), (usize, usize)> {
            let mut used = HashSet::new();
            for t in tracks {
                for (scan, m) in t.associations {
                    if let Some(m) = m {
                        if !used.insert((scan, m)) {
                            return Err((scan, m));
                        }
                    }
                }
            }
            Ok(())
        }
        let mut owner: HashMap<u64, usize> = HashMap::new();
        for (c, comp) in self.components.iter().enumerate() {
            if comp.hypotheses.is_empty() {
                return Err(format!("component {c} has no hypotheses"));
            }
            for (i, h) in comp.hypotheses.iter().enumerate() {
                if !h.log_weight.is_finite() {
                    return Err(format!("component {c} hypothesis {i} has log-weight {}", h.log_weight));
                }
                if i > 0 && h.log_weight > comp.hypotheses[i - 1].log_weight {
                    return Err(format!("component {c} hypothesis {i} outranks its predecessor"));
                }
                for &l in &h.leaves {
                    if *owner.entry(self.nodes[l].tree).or_insert(c) != c {
                        return Err(format!("track {} is in two components", self.nodes[l].tree));
                    }
                }
                disjoint(self.histories(c, i)).map_err(|(scan, m)| {
                    format!("component {c} hypothesis {i} uses measurement {m} twice at scan {scan}")
                })?;
            }
        }
        disjoint(self.best_histories())
            .map_err(|(scan, m)| format!("best hypotheses share measurement {m} at scan {scan}"))
    }
}

/// Scores and child beliefs of one leaf for the current scan.
struct LeafScan {
    predicted: GaussianBelief,
    innovation: Innovation,
    /// `(measurement, weight)` for in-gate measurements.
    gated: Vec<(usize, f64)>,
    miss_weight: f64,
    dies_on_miss: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Row {
    Leaf(usize),
    Birth(usize),
}

/// k-best assignments of one cluster: per row the chosen column.
type Ranked = Rc<Vec<(f64, Vec<usize>)>>;

/// One cluster of a hypothesis' assignment problem.
struct ClusterRef {
    rows: Vec<Row>,
    ranked: Ranked,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// One entry of a partial merge: value, index into the previous stage and
/// choice in the cluster just merged.
type StageEntry = (f64, u32, u32);

/// Top-`k` `(sum, i, j)` of pairwise sums of the descending lists `a` and
/// `b`, dropping sums below `floor`.
fn top_pairs(a: &[f64], b: &[f64], k: usize, floor: f64) -> Vec<(f64, usize, usize)> {
    let mut out = Vec::with_capacity(k.min(a.len() * b.len()));
    if a.is_empty() || b.is_empty() {
        return out;
    }
    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    let key = |i: usize, j: usize| (ordered(a[i] + b[j]), Reverse((i, j)));
    heap.push(key(0, 0));
    seen.insert((0, 0));
    while let Some((value, Reverse((i, j)))) = heap.pop() {
        if value.0 < floor {
            break;
        }
        out.push((value.0, i, j));
        if out.len() == k {
            break;
        }
        if i + 1 < a.len() && seen.insert((i + 1, j)) {
            heap.push(key(i + 1, j));
        }
        if j + 1 < b.len() && seen.insert((i, j + 1)) {
            heap.push(key(i, j + 1));
        }
    }
    out
}

/// Top-`k` of pairwise sums of a partial merge and a cluster's ranked
/// assignments, dropping sums below `floor`.
fn merge_stage(a: &[StageEntry], b: &[(f64, Vec<usize>)], k: usize, floor: f64) -> Vec<StageEntry> {
    let av: Vec<f64> = a.iter().map(|e| e.0).collect();
    let bv: Vec<f64> = b.iter().map(|e| e.0).collect();
    top_pairs(&av, &bv, k, floor).into_iter().map(|(v, i, j)| (v, i as u32, j as u32)).collect()
}

/// Per-cluster choice indices of entry `index` of the last stage.
fn trace_choice(stages: &[Vec<StageEntry>], mut index: usize) -> Vec<usize> {
    let mut choice = vec![0; stages.len()];
    for (c, stage) in stages.iter().enumerate().rev() {
        let (_, prev, j) = stage[index];
        choice[c] = j as usize;
        index = prev as usize;
    }
    choice
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn ordered(x: f64) -> Ordered {
    Ordered(x)
}

/// Number of consecutive misses after which a track is declared dead: the
/// first `n` with `n ln(p_s (1 - p_d)) < ln(1 - p_s)`.
fn death_misses(p_s: f64, p_d: f64) -> usize {
    let per_miss = (p_s * (1.0 - p_d)).ln();
    let death = (1.0 - p_s).ln();
    if per_miss == f64::NEG_INFINITY {
        return 1;
    }
    if per_miss >= 0.0 || death == f64::NEG_INFINITY {
        return usize::MAX;
    }
    (death / per_miss).floor() as usize + 1
}

struct StepContext<'a> {
    models: &'a MhtModels<'a>,
    frame: &'a MeasurementFrame,
    leaves: HashMap<usize, LeafScan>,
    cluster_cache: HashMap<(Vec<Row>, Vec<usize>), Ranked>,
    xi0: f64,
}

impl StepContext<'_> {
    fn row_weights(&self, row: Row) -> (f64, Vec<(usize, f64)>) {
        match row {
            Row::Leaf(id) => {
                let leaf = &self.leaves[&id];
                let miss =
                    if leaf.gated.is_empty() && leaf.miss_weight <= 0.0 { f64::MIN_POSITIVE } else { leaf.miss_weight };
                (miss, leaf.gated.clone())
            }
            Row::Birth(m) => (1.0, vec![(m, self.models.params.mht_birth_ratio)]),
        }
    }

    fn solve_cluster(&mut self, rows: Vec<Row>, measurements: Vec<usize>) -> Result<Ranked, TrackerError> {
        let key = (rows, measurements);
        if let Some(r) = self.cluster_cache.get(&key) {
            return Ok(r.clone());
        }
        let (rows, measurements) = &key;
        let col_of: HashMap<usize, usize> = measurements.iter().enumerate().map(|(c, &m)| (m, c + 1)).collect();
        let mut beta = DMatrix::zeros(rows.len(), measurements.len() + 1);
        for (r, &row) in rows.iter().enumerate() {
            let (miss, gated) = self.row_weights(row);
            beta[(r, 0)] = miss;
            for (m, w) in gated {
                beta[(r, col_of[&m])] = w;
            }
        }
        let problem = AssociationProblem::new(beta, vec![self.xi0; measurements.len()])
            .map_err(|e| TrackerError::Invariant(format!("MHT cluster problem: {e}")))?;
        let ranked: Vec<(f64, Vec<usize>)> = kbest_log_assignments(&problem, self.models.params.mht_hypotheses)?
            .into_iter()
            .map(|(event, w)| {
                let cols = event.0.iter().map(|&c| if c == 0 { usize::MAX } else { measurements[c - 1] }).collect();
                (w - measurements.len() as f64 * self.xi0.ln(), cols)
            })
            .collect();
        let ranked = Rc::new(ranked);
        self.cluster_cache.insert(key, ranked.clone());
        Ok(ranked)
    }

    /// Clusters of the assignment problem of one hypothesis over the
    /// measurements of its component.
    fn clusters_of(&mut self, leaves: &[usize], measurements: &[usize]) -> Result<Vec<ClusterRef>, TrackerError> {
        let mut rows: Vec<Row> = leaves.iter().map(|&l| Row::Leaf(l)).collect();
        if self.models.managed {
            rows.extend(measurements.iter().map(|&m| Row::Birth(m)));
        }
        let local: HashMap<usize, usize> = measurements.iter().enumerate().map(|(i, &m)| (m, rows.len() + i)).collect();
        let mut parent: Vec<usize> = (0..rows.len() + measurements.len()).collect();
        for (r, &row) in rows.iter().enumerate() {
            let (_, gated) = self.row_weights(row);
            for (meas, _) in gated {
                let (a, b) = (find(&mut parent, r), find(&mut parent, local[&meas]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, (Vec<Row>, Vec<usize>)> = BTreeMap::new();
        for (r, &row) in rows.iter().enumerate() {
            let root = find(&mut parent, r);
            groups.entry(root).or_default().0.push(row);
        }
        for &meas in measurements {
            let root = find(&mut parent, local[&meas]);
            if let Some(g) = groups.get_mut(&root) {
                g.1.push(meas);
            }
        }
        let mut out = Vec::with_capacity(groups.len());
        for (_, (rows, measurements)) in groups {
            let ranked = self.solve_cluster(rows.clone(), measurements)?;
            out.push(ClusterRef { rows, ranked });
        }
        Ok(out)
    }
}

fn leaf_scan(
    node: &Node,
    time: usize,
    frame: &MeasurementFrame,
    models: &MhtModels<'_>,
    death_after: usize,
) -> Result<LeafScan, ModelError> {
    let predicted = if node.scan < time { predict(&node.filtered, models.motion) } else { node.filtered.clone() };
    let innovation = Innovation::new(&predicted, models.measurement)?;
    let row = gated_betas(std::slice::from_ref(&predicted), frame, models.measurement, models.params.gate_threshold)?;
    let p_s = models.motion.survival();
    let gated = (0..frame.len())
        .filter_map(|m| {
            let b = row.weight(0, m + 1);
            (b > 0.0).then_some((m, p_s * b))
        })
        .collect();
    let miss = p_s * (1.0 - models.measurement.detection());
    let dies_on_miss = models.managed && node.misses + 1 >= death_after;
    let miss_weight = if dies_on_miss {
        // Replace the misses accumulated since the last detection by a single
        // death term.
        let undo = if node.misses == 0 { 0.0 } else { node.misses as f64 * miss.ln() };
        ((1.0 - p_s).ln() - undo).exp()
    } else {
        miss
    };
    Ok(LeafScan { predicted, innovation, gated, miss_weight, dies_on_miss })
}

/// Keeps the births and materialized children of a step, shared by all
/// components.
struct Materializer {
    child_of: HashMap<(usize, Option<usize>), usize>,
    birth_of: HashMap<usize, usize>,
}

/// Measurements gated by the alive leaves of a component.
fn gated_measurements(comp: &Component, leaves: &HashMap<usize, LeafScan>) -> BTreeSet<usize> {
    comp.hypotheses
        .iter()
        .flat_map(|h| h.leaves.iter())
        .filter_map(|l| leaves.get(l))
        .flat_map(|scan| scan.gated.iter().map(|&(m, _)| m))
        .collect()
}

/// Top-`k` joint hypotheses of two independent components.
fn product(a: &[GlobalHypothesis], b: &[GlobalHypothesis], k: usize, nodes: &[Node]) -> Vec<GlobalHypothesis> {
    let av: Vec<f64> = a.iter().map(|h| h.log_weight).collect();
    let bv: Vec<f64> = b.iter().map(|h| h.log_weight).collect();
    top_pairs(&av, &bv, k, f64::NEG_INFINITY)
        .into_iter()
        .map(|(w, i, j)| {
            let mut leaves: Vec<usize> = a[i].leaves.iter().chain(&b[j].leaves).copied().collect();
            leaves.sort_by_key(|&l| nodes[l].tree);
            GlobalHypothesis { log_weight: w, leaves }
        })
        .collect()
}

/// Merges components whose gates share a measurement and, when tracks are
/// managed, opens a component for every measurement no track gates.
/// Returns each component with the measurements it owns this scan.
fn group_components(
    components: Vec<Component>,
    leaves: &HashMap<usize, LeafScan>,
    nodes: &[Node],
    frame_len: usize,
    k: usize,
    managed: bool,
) -> Vec<(Component, Vec<usize>)> {
    let gated: Vec<BTreeSet<usize>> = components.iter().map(|c| gated_measurements(c, leaves)).collect();
    let mut parent: Vec<usize> = (0..components.len()).collect();
    let mut owner: Vec<Option<usize>> = vec![None; frame_len];
    for (c, set) in gated.iter().enumerate() {
        for &m in set {
            match owner[m] {
                Some(o) => {
                    let (a, b) = (find(&mut parent, c), find(&mut parent, o));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
                None => owner[m] = Some(c),
            }
        }
    }
    let mut groups: BTreeMap<usize, (Option<Component>, BTreeSet<usize>)> = BTreeMap::new();
    for (c, (comp, set)) in components.into_iter().zip(gated).enumerate() {
        let root = find(&mut parent, c);
        let entry = groups.entry(root).or_insert((None, BTreeSet::new()));
        entry.0 = Some(match entry.0.take() {
            None => comp,
            Some(prev) => Component { hypotheses: product(&prev.hypotheses, &comp.hypotheses, k, nodes) },
        });
        entry.1.extend(set);
    }
    let mut out: Vec<(Component, Vec<usize>)> = groups
        .into_values()
        .map(|(comp, set)| (comp.expect("every group has a member"), set.into_iter().collect()))
        .collect();
    if managed {
        out.extend(
            owner
                .iter()
                .enumerate()
                .filter(|(_, o)| o.is_none())
                .map(|(m, _)| (Component::single(Vec::new()), vec![m])),
        );
    }
    out
}

/// Extends the hypotheses of one component with the measurements it owns
/// and keeps the best `K` children.
fn extend_component(
    state: &mut MhtState,
    ctx: &mut StepContext<'_>,
    made: &mut Materializer,
    comp: &Component,
    measurements: &[usize],
    diag: &mut TrackerDiagnostics,
) -> Result<Component, TrackerError> {
    let models = ctx.models;
    let frame = ctx.frame;
    let params = models.params;
    let time = frame.time;
    // Per parent: clusters and the top-K merged child assignments. Parents
    // are ranked, so the running K-th best total bounds what later parents
    // can still contribute.
    let k = params.mht_hypotheses;
    let mut per_parent = Vec::with_capacity(comp.hypotheses.len());
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut best_totals: BinaryHeap<Reverse<Ordered>> = BinaryHeap::new();
    for (h, hyp) in comp.hypotheses.iter().enumerate() {
        let leaves: Vec<usize> = hyp.leaves.iter().copied().filter(|&l| !state.nodes[l].dead).collect();
        let clusters = ctx.clusters_of(&leaves, measurements)?;
        let threshold = if best_totals.len() == k {
            best_totals.peek().map_or(f64::NEG_INFINITY, |r| r.0 .0)
        } else {
            f64::NEG_INFINITY
        };
        // rest[c]: best achievable sum of the clusters after c.
        let mut rest = vec![0.0; clusters.len() + 1];
        for c in (0..clusters.len()).rev() {
            rest[c] = rest[c + 1] + clusters[c].ranked.first().map_or(f64::NEG_INFINITY, |r| r.0);
        }
        let mut stages: Vec<Vec<StageEntry>> = Vec::with_capacity(clusters.len());
        let mut last: Vec<StageEntry> = vec![(0.0, 0, 0)];
        for (c, cl) in clusters.iter().enumerate() {
            let floor = threshold - hyp.log_weight - rest[c + 1];
            let next = merge_stage(&last, &cl.ranked, k, floor);
            stages.push(next);
            last = stages.last().expect("just pushed").clone();
        }
        for (i, &(w, _, _)) in last.iter().enumerate() {
            let total = hyp.log_weight + w;
            if total < threshold {
                break;
            }
            candidates.push((total, h, i));
            best_totals.push(Reverse(ordered(total)));
            if best_totals.len() > k {
                best_totals.pop();
            }
        }
        per_parent.push((clusters, stages));
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2))));
    if candidates.len() > k {
        diag.hypotheses_capped += (candidates.len() - k) as u64;
        candidates.truncate(k);
    }
    if candidates.is_empty() {
        return Err(TrackerError::Invariant("no feasible global hypothesis".into()));
    }

    // Materialize the selected children.
    let confirm = params.mht_confirm;
    let confirm_mask: u32 = if confirm.n >= 32 { u32::MAX } else { (1u32 << confirm.n) - 1 };
    let mut next = Vec::with_capacity(candidates.len());
    for &(w, h, i) in &candidates {
        let (clusters, stages) = &per_parent[h];
        let choice = trace_choice(stages, i);
        let mut leaves: Vec<usize> =
            comp.hypotheses[h].leaves.iter().copied().filter(|&l| state.nodes[l].dead).collect();
        for (c, &pick) in clusters.iter().zip(&choice) {
            let cols = &c.ranked[pick].1;
            for (&row, &m) in c.rows.iter().zip(cols) {
                let meas = (m != usize::MAX).then_some(m);
                match row {
                    Row::Leaf(leaf) => {
                        let id = *made.child_of.entry((leaf, meas)).or_insert_with(|| {
                            let scan = &ctx.leaves[&leaf];
                            let parent = &state.nodes[leaf];
                            let hit = meas.is_some();
                            let hits = (parent.hits << 1) | u32::from(hit);
                            let dead = !hit && scan.dies_on_miss;
                            let filtered = match meas {
                                Some(m) => update_with(
                                    &scan.predicted,
                                    &scan.innovation,
                                    &frame.measurements[m],
                                    models.measurement,
                                ),
                                None => scan.predicted.clone(),
                            };
                            let confirmed =
                                parent.confirmed || (hits & confirm_mask).count_ones() as usize >= confirm.m;
                            state.nodes.push(Node {
                                parent: Some(leaf),
                                tree: parent.tree,
                                scan: time,
                                meas,
                                dead,
                                filtered,
                                predicted: scan.predicted.clone(),
                                hits,
                                misses: if hit { 0 } else { parent.misses + 1 },
                                confirmed,
                            });
                            state.nodes.len() - 1
                        });
                        leaves.push(id);
                    }
                    Row::Birth(bm) => {
                        if meas.is_some() {
                            let id = *made.birth_of.entry(bm).or_insert_with(|| {
                                let tree = state.next_tree;
                                state.next_tree += 1;
                                state.tree_birth.insert(tree, time);
                                let belief = birth_belief(
                                    &frame.measurements[bm],
                                    models.measurement.noise_std(),
                                    params.new_velocity_std,
                                );
                                state.nodes.push(Node {
                                    parent: None,
                                    tree,
                                    scan: time,
                                    meas: Some(bm),
                                    dead: false,
                                    predicted: belief.clone(),
                                    filtered: belief,
                                    hits: 1,
                                    misses: 0,
                                    confirmed: confirm.m <= 1,
                                });
                                state.nodes.len() - 1
                            });
                            leaves.push(id);
                        }
                    }
                }
            }
        }
        leaves.sort_by_key(|&l| state.nodes[l].tree);
        next.push(GlobalHypothesis { log_weight: w, leaves });
    }
    let mut out = Component { hypotheses: next };
    apply_leaf_cap(&mut out, &state.nodes, params.mht_leaf_cap, diag);
    let best = out.hypotheses[0].log_weight;
    for h in &mut out.hypotheses {
        h.log_weight -= best;
    }
    Ok(out)
}

/// One scan of the tracker: regroup, extend, select and prune.
pub fn mht_step(
    state: &mut MhtState,
    frame: &MeasurementFrame,
    models: &MhtModels<'_>,
    diag: &mut TrackerDiagnostics,
) -> Result<(), TrackerError> {
    let time = frame.time;
    state.time = time;
    let death_after = death_misses(models.motion.survival(), models.measurement.detection());
    let intensity = models.measurement.clutter_intensity();
    let xi0 = if intensity > 0.0 { 1.0 } else { f64::MIN_POSITIVE };

    let mut alive: Vec<usize> = state.all_leaves().filter(|&l| !state.nodes[l].dead).collect();
    alive.sort_unstable();
    alive.dedup();
    let mut ctx = StepContext { models, frame, leaves: HashMap::new(), cluster_cache: HashMap::new(), xi0 };
    for &l in &alive {
        ctx.leaves.insert(l, leaf_scan(&state.nodes[l], time, frame, models, death_after)?);
    }

    let components = std::mem::take(&mut state.components);
    let groups = group_components(
        components,
        &ctx.leaves,
        &state.nodes,
        frame.len(),
        models.params.mht_hypotheses,
        models.managed,
    );
    let mut made = Materializer { child_of: HashMap::new(), birth_of: HashMap::new() };
    let mut next = Vec::with_capacity(groups.len());
    for (comp, measurements) in &groups {
        next.push(extend_component(state, &mut ctx, &mut made, comp, measurements, diag)?);
    }
    state.components = next;
    nscan_prune(state);
    debug_assert!(state.validate().is_ok(), "{:?}", state.validate());
    Ok(())
}

/// Drops hypotheses that use a track leaf ranked beyond `cap` among the
/// distinct leaves of that track.
fn apply_leaf_cap(comp: &mut Component, nodes: &[Node], cap: usize, diag: &mut TrackerDiagnostics) {
    let mut allowed: HashMap<u64, HashSet<usize>> = HashMap::new();
    let before = comp.hypotheses.len();
    comp.hypotheses.retain(|h| {
        let mut ok = true;
        for &l in &h.leaves {
            let set = allowed.entry(nodes[l].tree).or_default();
            if !set.contains(&l) && set.len() >= cap {
                ok = false;
            }
        }
        if ok {
            for &l in &h.leaves {
                allowed.get_mut(&nodes[l].tree).expect("inserted above").insert(l);
            }
        }
        ok
    });
    diag.hypotheses_capped += (before - comp.hypotheses.len()) as u64;
}

fn ancestor_at(nodes: &[Node], mut n: usize, scan: usize) -> usize {
    while nodes[n].scan > scan {
        match nodes[n].parent {
            Some(p) => n = p,
            None => break,
        }
    }
    n
}

/// Keeps the hypotheses of a component that agree with its best one at the
/// commit scan and removes the tracks that are dead by then.
fn commit_component(comp: &mut Component, nodes: &[Node], tree_birth: &HashMap<u64, usize>, commit: usize) {
    let signature = |h: &GlobalHypothesis| -> Vec<(u64, usize)> {
        h.leaves
            .iter()
            .filter(|&&l| tree_birth[&nodes[l].tree] <= commit)
            .map(|&l| (nodes[l].tree, ancestor_at(nodes, l, commit)))
            .collect()
    };
    let best = signature(&comp.hypotheses[0]);
    comp.hypotheses.retain(|h| signature(h) == best);
    let dead_trees: HashSet<u64> = best.iter().filter(|(_, a)| nodes[*a].dead).map(|(t, _)| *t).collect();
    for h in &mut comp.hypotheses {
        h.leaves.retain(|&l| !dead_trees.contains(&nodes[l].tree));
    }
}

/// Moves every track on which all hypotheses of its component agree into
/// a component of its own and drops components without tracks.
fn split_settled(components: Vec<Component>, nodes: &[Node]) -> Vec<Component> {
    let mut out = Vec::with_capacity(components.len());
    for mut comp in components {
        // Per tree: its leaf if unique, and in how many hypotheses it occurs.
        let mut seen: BTreeMap<u64, (Option<usize>, usize)> = BTreeMap::new();
        for h in &comp.hypotheses {
            for &l in &h.leaves {
                let e = seen.entry(nodes[l].tree).or_insert((Some(l), 0));
                if e.0 != Some(l) {
                    e.0 = None;
                }
                e.1 += 1;
            }
        }
        let n = comp.hypotheses.len();
        let settled: Vec<usize> = seen.values().filter_map(|&(leaf, count)| leaf.filter(|_| count == n)).collect();
        if seen.len() > 1 && !settled.is_empty() {
            for h in &mut comp.hypotheses {
                h.leaves.retain(|l| !settled.contains(l));
            }
            out.push(comp);
            out.extend(settled.into_iter().map(|l| Component::single(vec![l])));
        } else {
            out.push(comp);
        }
    }
    out.retain(|c| !c.is_empty());
    out
}

/// Commits each component's best hypothesis at the oldest scan of the
/// window, splits off settled tracks and discards nodes older than the
/// window.
pub fn nscan_prune(state: &mut MhtState) {
    let commit = (state.time + 1).checked_sub(state.window);
    if let Some(commit) = commit {
        let before = state.hypothesis_count();
        for comp in &mut state.components {
            commit_component(comp, &state.nodes, &state.tree_birth, commit);
        }
        let after = state.hypothesis_count();
        if after < before {
            debug!("scan {}: committed, {after} of {before} hypotheses remain", state.time);
        }
    }
    state.components = split_settled(std::mem::take(&mut state.components), &state.nodes);
    if let Some(commit) = commit {
        compact(state, commit);
    }
}

/// Keeps only nodes on retained branches back to the commit scan.
fn compact(state: &mut MhtState, commit: usize) {
    let mut keep: Vec<usize> = Vec::new();
    let mut mark = vec![false; state.nodes.len()];
    for leaf in state.all_leaves() {
        let mut n = leaf;
        loop {
            if mark[n] {
                break;
            }
            mark[n] = true;
            keep.push(n);
            if state.nodes[n].scan <= commit {
                break;
            }
            match state.nodes[n].parent {
                Some(p) => n = p,
                None => break,
            }
        }
    }
    keep.sort_unstable();
    let mut remap = vec![usize::MAX; state.nodes.len()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    let nodes: Vec<Node> = keep
        .iter()
        .map(|&old| {
            let mut node = state.nodes[old].clone();
            node.parent = node.parent.and_then(|p| (remap[p] != usize::MAX).then(|| remap[p]));
            if node.scan <= commit {
                node.parent = None;
            }
            node
        })
        .collect();
    state.nodes = nodes;
    for comp in &mut state.components {
        for h in &mut comp.hypotheses {
            for l in &mut h.leaves {
                *l = remap[*l];
            }
        }
    }
    let live: HashSet<u64> = state.nodes.iter().map(|n| n.tree).collect();
    state.tree_birth.retain(|t, _| live.contains(t));
}

/// Smoothed state sequences of the confirmed, living tracks of each
/// component's best hypothesis over the retained window, oldest first.
pub fn extract_tracks(state: &MhtState, motion: &MotionModel) -> Result<Vec<(u64, Vec<GaussianBelief>)>, ModelError> {
    let mut out = Vec::new();
    for best in state.components.iter().filter_map(|c| c.hypotheses.first()) {
        for &leaf in &best.leaves {
            let node = &state.nodes[leaf];
            if node.dead || !node.confirmed {
                continue;
            }
            let mut filtered = Vec::new();
            let mut predicted = Vec::new();
            let mut n = Some(leaf);
            while let Some(id) = n {
                let node = &state.nodes[id];
                filtered.push(node.filtered.clone());
                predicted.push(node.predicted.clone());
                n = node.parent;
            }
            filtered.reverse();
            predicted.reverse();
            out.push((node.tree, rts_smooth(&filtered, &predicted, motion)?));
        }
    }
    out.sort_by_key(|t| t.0);
    Ok(out)
}

pub struct MhtTracker {
    state: MhtState,
    motion: MotionModel,
    measurement: MeasurementModel,
    params: TrackerParams,
    known: Option<Vec<KnownBirth>>,
    diag: TrackerDiagnostics,
}

impl MhtTracker {
    pub fn new(cfg: &ValidatedConfig, known: Option<Vec<KnownBirth>>) -> Self {
        let mut motion = MotionModel::from_config(cfg);
        if known.is_some() {
            motion = motion.with_survival(1.0);
        }
        Self {
            state: MhtState::new(cfg.tracker.mht_window),
            motion,
            measurement: MeasurementModel::from_config(cfg),
            params: cfg.tracker.clone(),
            known,
            diag: TrackerDiagnostics::default(),
        }
    }

    pub fn state(&self) -> &MhtState {
        &self.state
    }

    pub fn smoothed_tracks(&self) -> Result<Vec<(u64, Vec<GaussianBelief>)>, ModelError> {
        extract_tracks(&self.state, &self.motion)
    }
}

impl Tracker for MhtTracker {
    fn kind(&self) -> TrackerKind {
        TrackerKind::Mht
    }

    fn step(&mut self, frame: &MeasurementFrame) -> Result<(), TrackerError> {
        if let Some(known) = &self.known {
            for birth in known.iter().filter(|b| b.time == frame.time) {
                let belief = birth_belief(&birth.position, self.measurement.noise_std(), self.params.new_velocity_std);
                self.state.add_known_track(belief, frame.time);
            }
        }
        let models = MhtModels {
            motion: &self.motion,
            measurement: &self.measurement,
            params: &self.params,
            managed: self.known.is_none(),
        };
        mht_step(&mut self.state, frame, &models, &mut self.diag)
    }

    /// Confirmed tracks of each component's best hypothesis at the newest
    /// scan, where the smoothed and filtered estimates coincide.
    fn estimates(&self) -> Vec<TrackEstimate> {
        let mut out: Vec<TrackEstimate> = self
            .state
            .components
            .iter()
            .filter_map(|c| c.hypotheses.first())
            .flat_map(|h| h.leaves.iter())
            .map(|&l| &self.state.nodes[l])
            .filter(|n| !n.dead && n.confirmed)
            .map(|n| TrackEstimate { label: n.tree, state: n.filtered.state() })
            .collect();
        out.sort_by_key(|e| e.label);
        out
    }

    fn diagnostics(&self) -> TrackerDiagnostics {
        self.diag
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn death_rule_threshold() {
        assert_eq!(death_misses(0.995, 0.5), 8);
        assert_eq!(death_misses(0.995, 1.0), 1);
        assert_eq!(death_misses(1.0, 0.5), usize::MAX);
    }

    #[test]
    fn merge_keeps_top_sums() {
        let a: Vec<StageEntry> = vec![(0.0, 0, 0), (-1.0, 0, 1)];
        let b = vec![(0.0, vec![0]), (-0.5, vec![1]), (-3.0, vec![2])];
        let out = merge_stage(&a, &b, 4, f64::NEG_INFINITY);
        let ws: Vec<f64> = out.iter().map(|x| x.0).collect();
        assert_eq!(ws, vec![0.0, -0.5, -1.0, -1.5]);
        assert_eq!((out[1].1, out[1].2), (0, 1));
        let stages = vec![a, out];
        assert_eq!(trace_choice(&stages, 3), vec![1, 1]);
        let floored = merge_stage(&stages[0], &b, 4, -0.75);
        assert_eq!(floored.len(), 2);
    }
}
