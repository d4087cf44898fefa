//! Contiguity-constrained state groups built from the PCA distance, plus the
//! census-division baseline and the reciprocity report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::covariates::PcaResult;
use crate::state::StateId;

const US_ADJACENCY: &str = include_str!("../data/us_adjacency.csv");

#[derive(Debug, thiserror::Error)]
pub enum GroupingError {
    #[error("{0} has no contiguous neighbors")]
    IsolatedNode(StateId),
    #[error("{0} is not isolated; use the contiguity recursion")]
    NotIsolated(StateId),
    #[error("state {0} is missing from the distance table")]
    UnknownState(StateId),
    #[error("no population for {0}")]
    MissingPopulation(StateId),
    #[error("{target} has only {found} neighbor(s); at least 2 are needed")]
    InsufficientNeighbors { target: StateId, found: usize },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Undirected contiguity graph over a set of states.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct AdjacencyGraph {
    adj: BTreeMap<StateId, BTreeSet<StateId>>,
}

impl AdjacencyGraph {
    pub fn with_nodes(nodes: impl IntoIterator<Item = StateId>) -> Self {
        Self { adj: nodes.into_iter().map(|s| (s, BTreeSet::new())).collect() }
    }

    pub fn from_edges(nodes: impl IntoIterator<Item = StateId>, edges: impl IntoIterator<Item = (StateId, StateId)>) -> Self {
        let mut g = Self::with_nodes(nodes);
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    /// Rook contiguity of the 50 states and DC. Alaska and Hawaii are isolated;
    /// water-only and single-point contacts are not edges.
    pub fn us_contiguity() -> Self {
        Self::read_csv(US_ADJACENCY.as_bytes()).expect("bundled adjacency table is valid")
    }

    /// `state_a,state_b` rows over all 51 states.
    pub fn read_csv<R: Read>(source: R) -> Result<Self, GroupingError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
        let mut g = Self::with_nodes(StateId::ALL);
        for row in reader.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let parse = |i: usize| -> Result<StateId, GroupingError> {
                row.get(i).unwrap_or("").parse().map_err(|e: crate::state::UnknownState| GroupingError::Malformed { line, message: e.to_string() })
            };
            let (a, b) = (parse(0)?, parse(1)?);
            if a == b {
                return Err(GroupingError::Malformed { line, message: format!("self-loop on {a}") });
            }
            g.add_edge(a, b);
        }
        Ok(g)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), GroupingError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["state_a", "state_b"])?;
        for (a, b) in self.edges() {
            w.write_record([a.code(), b.code()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn add_edge(&mut self, a: StateId, b: StateId) {
        if a == b {
            return;
        }
        self.adj.entry(a).or_default().insert(b);
        self.adj.entry(b).or_default().insert(a);
    }

    pub fn nodes(&self) -> impl Iterator<Item = StateId> + '_ {
        self.adj.keys().copied()
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.adj.contains_key(&s)
    }

    pub fn neighbors(&self, s: StateId) -> impl Iterator<Item = StateId> + '_ {
        self.adj.get(&s).into_iter().flatten().copied()
    }

    pub fn are_adjacent(&self, a: StateId, b: StateId) -> bool {
        self.adj.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn degree(&self, s: StateId) -> usize {
        self.adj.get(&s).map_or(0, BTreeSet::len)
    }

    /// Each undirected edge once, as `(smaller, larger)`.
    pub fn edges(&self) -> Vec<(StateId, StateId)> {
        self.adj.iter().flat_map(|(a, ns)| ns.iter().filter(move |b| a < *b).map(move |b| (*a, *b))).collect()
    }
}

/// Per-state population counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationTable(pub BTreeMap<StateId, f64>);

impl PopulationTable {
    pub fn get(&self, s: StateId) -> Result<f64, GroupingError> {
        self.0.get(&s).copied().ok_or(GroupingError::MissingPopulation(s))
    }

    pub fn total(&self, members: &[StateId]) -> Result<f64, GroupingError> {
        members.iter().map(|s| self.get(*s)).sum()
    }

    /// `state,population` rows; populations must be positive.
    pub fn read_csv<R: Read>(source: R) -> Result<Self, GroupingError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
        let mut out = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let state: StateId = row
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|e: crate::state::UnknownState| GroupingError::Malformed { line, message: e.to_string() })?;
            let pop: f64 =
                row.get(1).unwrap_or("").parse().map_err(|_| GroupingError::Malformed { line, message: "population is not a number".into() })?;
            if pop <= 0.0 || !pop.is_finite() {
                return Err(GroupingError::Malformed { line, message: "population must be positive".into() });
            }
            out.insert(state, pop);
        }
        Ok(Self(out))
    }
}

/// Symmetric table of pairwise distances between states.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    values: Vec<f64>,
    present: BTreeSet<StateId>,
}

impl DistanceMatrix {
    const N: usize = StateId::ALL.len();

    pub fn from_fn(states: impl IntoIterator<Item = StateId>, f: impl Fn(StateId, StateId) -> f64) -> Self {
        let present: BTreeSet<StateId> = states.into_iter().collect();
        let mut values = vec![f64::NAN; Self::N * Self::N];
        for &a in &present {
            for &b in &present {
                values[a.index() * Self::N + b.index()] = if a == b { 0.0 } else { f(a, b) };
            }
        }
        Self { values, present }
    }

    pub fn from_pca(pca: &PcaResult) -> Self {
        Self::from_fn(pca.states.iter().copied(), |a, b| pca.distance(a, b).expect("states come from the PCA"))
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.present.iter().copied()
    }

    pub fn get(&self, a: StateId, b: StateId) -> Result<f64, GroupingError> {
        for s in [a, b] {
            if !self.present.contains(&s) {
                return Err(GroupingError::UnknownState(s));
            }
        }
        Ok(self.values[a.index() * Self::N + b.index()])
    }
}

/// Pick the candidate closest to `target`, ties broken alphabetically.
fn closest(target: StateId, candidates: impl IntoIterator<Item = StateId>, dist: &DistanceMatrix) -> Result<Option<(StateId, f64)>, GroupingError> {
    let mut best: Option<(StateId, f64)> = None;
    for c in candidates {
        let d = dist.get(target, c)?;
        best = match best {
            Some((b, bd)) if bd < d || (bd == d && b < c) => Some((b, bd)),
            _ => Some((c, d)),
        };
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub state: StateId,
    pub distance: f64,
    /// 1-based selection round.
    pub round: usize,
}

/// Ordered nearest-neighbor list 𝒩_s for one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub target: StateId,
    pub entries: Vec<NeighborEntry>,
}

/// Continue the frontier recursion until `list` holds `rounds` entries or the
/// frontier is empty.
fn extend_frontier(list: &mut NeighborList, graph: &AdjacencyGraph, dist: &DistanceMatrix, rounds: usize) -> Result<(), GroupingError> {
    let mut chosen: BTreeSet<StateId> = list.entries.iter().map(|e| e.state).collect();
    chosen.insert(list.target);
    while list.entries.len() < rounds {
        let frontier: BTreeSet<StateId> = chosen.iter().flat_map(|s| graph.neighbors(*s)).filter(|s| !chosen.contains(s)).collect();
        let Some((next, d)) = closest(list.target, frontier, dist)? else {
            break;
        };
        list.entries.push(NeighborEntry { state: next, distance: d, round: list.entries.len() + 1 });
        chosen.insert(next);
    }
    Ok(())
}

/// Frontier recursion: round 1 picks the closest contiguous neighbor of `target`;
/// each later round picks the closest state contiguous with anything chosen so far.
pub fn nearest_neighbors(target: StateId, graph: &AdjacencyGraph, dist: &DistanceMatrix, rounds: usize) -> Result<NeighborList, GroupingError> {
    if graph.degree(target) == 0 {
        return Err(GroupingError::IsolatedNode(target));
    }
    let mut list = NeighborList { target, entries: Vec::new() };
    extend_frontier(&mut list, graph, dist, rounds)?;
    Ok(list)
}

/// Seed 𝒩_s of an isolated state with its closest non-isolated state, then
/// expand the frontier from that state's contiguity.
pub fn island_neighbors(target: StateId, graph: &AdjacencyGraph, dist: &DistanceMatrix, rounds: usize) -> Result<NeighborList, GroupingError> {
    if graph.degree(target) != 0 {
        return Err(GroupingError::NotIsolated(target));
    }
    let others = dist.states().filter(|s| *s != target && graph.degree(*s) > 0);
    let Some((first, d)) = closest(target, others, dist)? else {
        return Err(GroupingError::InsufficientNeighbors { target, found: 0 });
    };
    let mut list = NeighborList { target, entries: vec![NeighborEntry { state: first, distance: d, round: 1 }] };
    extend_frontier(&mut list, graph, dist, rounds)?;
    Ok(list)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pca,
    CensusRegion,
    Island,
    SingleState,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Pca => "pca",
            Provenance::CensusRegion => "census_region",
            Provenance::Island => "island",
            Provenance::SingleState => "single_state",
        }
    }
}

/// States modeled jointly for one target; the target is always first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateGroup {
    pub target: StateId,
    pub members: Vec<StateId>,
    /// Distance of each member to the target when known.
    pub distances: Vec<Option<f64>>,
    pub provenance: Provenance,
    pub total_population: Option<f64>,
    /// Set when candidates ran out before the population floor was reached.
    pub floor_unmet: bool,
}

impl StateGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.members.contains(&s)
    }

    pub fn with_population(mut self, pops: &PopulationTable) -> Result<Self, GroupingError> {
        self.total_population = Some(pops.total(&self.members)?);
        Ok(self)
    }
}

/// Tuning for the covariate grouping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupConfig {
    pub population_floor: f64,
    pub rounds: usize,
    pub max_members: usize,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self { population_floor: 5_000_000.0, rounds: 10, max_members: 9 }
    }
}

fn assemble(
    neighbors: &NeighborList,
    pool: &[NeighborEntry],
    dist: &DistanceMatrix,
    pops: &PopulationTable,
    floor: f64,
    max_members: usize,
    provenance: Provenance,
) -> Result<StateGroup, GroupingError> {
    let target = neighbors.target;
    if neighbors.entries.len() < 2 {
        return Err(GroupingError::InsufficientNeighbors { target, found: neighbors.entries.len() });
    }
    let (s1, s2) = (neighbors.entries[0], neighbors.entries[1]);
    let mut members = vec![target, s1.state, s2.state];
    let mut distances = vec![Some(0.0), Some(s1.distance), Some(s2.distance)];

    let rest = neighbors.entries[2..].iter().map(|e| e.state);
    if let Some((s3, d3)) = closest(target, rest, dist)? {
        if d3 < s1.distance.max(s2.distance) {
            members.push(s3);
            distances.push(Some(d3));
        }
    }

    let mut total = pops.total(&members)?;
    let mut candidates: Vec<&NeighborEntry> = pool.iter().filter(|e| !members.contains(&e.state)).collect();
    candidates.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.state.cmp(&b.state)));
    let mut candidates = candidates.into_iter();
    while total < floor && members.len() < max_members {
        let Some(next) = candidates.next() else { break };
        members.push(next.state);
        distances.push(Some(next.distance));
        total += pops.get(next.state)?;
    }

    Ok(StateGroup { target, members, distances, provenance, total_population: Some(total), floor_unmet: total < floor })
}

/// Group from a neighbor list: the first two neighbors, one more if it is
/// strictly closer than either of them, then further neighbors in ascending
/// distance until the population floor is met.
pub fn build_group(neighbors: &NeighborList, dist: &DistanceMatrix, pops: &PopulationTable, floor: f64) -> Result<StateGroup, GroupingError> {
    assemble(neighbors, &neighbors.entries, dist, pops, floor, GroupConfig::default().max_members, Provenance::Pca)
}

/// Group for an isolated state, seeded with its globally closest state.
pub fn island_group(
    target: StateId,
    dist: &DistanceMatrix,
    graph: &AdjacencyGraph,
    pops: &PopulationTable,
    config: &GroupConfig,
) -> Result<StateGroup, GroupingError> {
    let list = island_neighbors(target, graph, dist, config.rounds)?;
    grow_until_floor(list, graph, dist, pops, config, Provenance::Island)
}

fn grow_until_floor(
    list: NeighborList,
    graph: &AdjacencyGraph,
    dist: &DistanceMatrix,
    pops: &PopulationTable,
    config: &GroupConfig,
    provenance: Provenance,
) -> Result<StateGroup, GroupingError> {
    let mut group = assemble(&list, &list.entries, dist, pops, config.population_floor, config.max_members, provenance)?;
    let mut pool = list.clone();
    // more frontier rounds only widen the augmentation pool; the first three
    // selections stay tied to the original list
    while group.floor_unmet && group.len() < config.max_members {
        let before = pool.entries.len();
        extend_frontier(&mut pool, graph, dist, before + config.rounds)?;
        if pool.entries.len() == before {
            break;
        }
        group = assemble(&list, &pool.entries, dist, pops, config.population_floor, config.max_members, provenance)?;
    }
    if group.floor_unmet {
        log::warn!("{}: population floor not reached ({} members)", group.target, group.len());
    }
    Ok(group)
}

/// Covariate-similarity group for any state, dispatching isolated states to
/// [`island_group`].
pub fn pca_group(
    target: StateId,
    graph: &AdjacencyGraph,
    dist: &DistanceMatrix,
    pops: &PopulationTable,
    config: &GroupConfig,
) -> Result<StateGroup, GroupingError> {
    if graph.degree(target) == 0 {
        return island_group(target, dist, graph, pops, config);
    }
    let list = nearest_neighbors(target, graph, dist, config.rounds)?;
    grow_until_floor(list, graph, dist, pops, config, Provenance::Pca)
}

/// Census divisions.
pub const CENSUS_DIVISIONS: [(&str, &[StateId]); 9] = {
    use StateId::*;
    [
        ("New England", &[CT, ME, MA, NH, RI, VT]),
        ("Mid-Atlantic", &[NJ, NY, PA]),
        ("East North Central", &[IN, IL, MI, OH, WI]),
        ("West North Central", &[IA, KS, MN, MO, NE, ND, SD]),
        ("South Atlantic", &[DE, DC, FL, GA, MD, NC, SC, VA, WV]),
        ("East South Central", &[AL, KY, MS, TN]),
        ("West South Central", &[AR, LA, OK, TX]),
        ("Mountain", &[AZ, CO, ID, MT, NM, NV, UT, WY]),
        ("Pacific", &[AK, CA, HI, OR, WA]),
    ]
};

/// The census division containing `target`, target first then the rest
/// alphabetically.
pub fn census_region_group(target: StateId) -> StateGroup {
    let (_, division) = CENSUS_DIVISIONS.iter().find(|(_, m)| m.contains(&target)).expect("every state is in a division");
    let mut rest: Vec<StateId> = division.iter().copied().filter(|s| *s != target).collect();
    rest.sort();
    let mut members = vec![target];
    members.extend(rest);
    StateGroup {
        target,
        distances: vec![None; members.len()],
        members,
        provenance: Provenance::CensusRegion,
        total_population: None,
        floor_unmet: false,
    }
}

pub fn single_state_group(target: StateId) -> StateGroup {
    StateGroup {
        target,
        members: vec![target],
        distances: vec![Some(0.0)],
        provenance: Provenance::SingleState,
        total_population: None,
        floor_unmet: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reciprocity {
    /// Mutually-including pairs, `(smaller, larger)`.
    pub pairs: Vec<(StateId, StateId)>,
    pub never_reciprocal: Vec<StateId>,
}

/// Pairs (A, B) with B in A's group and A in B's group.
pub fn reciprocity(groups: &BTreeMap<StateId, StateGroup>) -> Reciprocity {
    let mut pairs = BTreeSet::new();
    for (a, ga) in groups {
        for b in ga.members.iter().filter(|b| *b != a) {
            if groups.get(b).is_some_and(|gb| gb.contains(*a)) {
                pairs.insert(if a < b { (*a, *b) } else { (*b, *a) });
            }
        }
    }
    let involved: BTreeSet<StateId> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
    Reciprocity { pairs: pairs.into_iter().collect(), never_reciprocal: groups.keys().copied().filter(|s| !involved.contains(s)).collect() }
}

/// Number of groups of each size.
pub fn group_size_distribution(groups: &BTreeMap<StateId, StateGroup>) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for g in groups.values() {
        *out.entry(g.len()).or_insert(0) += 1;
    }
    out
}

/// `target,rank,member,distance,provenance`, rank 0 being the target itself.
pub fn write_groups_csv<W: Write>(groups: &BTreeMap<StateId, StateGroup>, sink: W) -> Result<(), GroupingError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["target", "rank", "member", "distance", "provenance"])?;
    for g in groups.values() {
        for (rank, (m, d)) in g.members.iter().zip(&g.distances).enumerate() {
            w.write_record([
                g.target.code().to_string(),
                rank.to_string(),
                m.code().to_string(),
                d.map(|d| d.to_string()).unwrap_or_default(),
                g.provenance.as_str().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_groups_csv`]; totals and floor flags are not stored.
pub fn read_groups_csv<R: Read>(source: R) -> Result<BTreeMap<StateId, StateGroup>, GroupingError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(source);
    let mut out: BTreeMap<StateId, StateGroup> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| GroupingError::Malformed { line, message };
        if row.len() != 5 {
            return Err(bad(format!("expected 5 fields, got {}", row.len())));
        }
        let target: StateId = row[0].parse().map_err(|e: crate::state::UnknownState| bad(e.to_string()))?;
        let member: StateId = row[2].parse().map_err(|e: crate::state::UnknownState| bad(e.to_string()))?;
        let distance = if row[3].is_empty() { None } else { Some(row[3].parse::<f64>().map_err(|_| bad("bad distance".into()))?) };
        let provenance = match &row[4] {
            "pca" => Provenance::Pca,
            "census_region" => Provenance::CensusRegion,
            "island" => Provenance::Island,
            "single_state" => Provenance::SingleState,
            other => return Err(bad(format!("unknown provenance {other:?}"))),
        };
        let g = out.entry(target).or_insert_with(|| StateGroup {
            target,
            members: Vec::new(),
            distances: Vec::new(),
            provenance,
            total_population: None,
            floor_unmet: false,
        });
        g.members.push(member);
        g.distances.push(distance);
    }
    for g in out.values() {
        if g.members.first() != Some(&g.target) {
            return Err(GroupingError::Malformed { line: 0, message: format!("group for {} does not start with its target", g.target) });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use StateId::*;

    fn pops(states: &[StateId], each: f64) -> PopulationTable {
        PopulationTable(states.iter().map(|s| (*s, each)).collect())
    }

    #[test]
    fn us_graph_shape() {
        let g = AdjacencyGraph::us_contiguity();
        assert_eq!(g.nodes().count(), 51);
        assert_eq!(g.degree(AK), 0);
        assert_eq!(g.degree(HI), 0);
        assert!(g.are_adjacent(DC, MD) && g.are_adjacent(DC, VA));
        assert!(!g.are_adjacent(MI, MN));
        for (a, b) in g.edges() {
            assert!(g.are_adjacent(b, a));
        }
        for s in StateId::ALL.iter().filter(|s| !matches!(s, AK | HI)) {
            assert!(g.degree(*s) > 0, "{s}");
        }
    }

    #[test]
    fn star_graph_picks_leaves_in_order() {
        let g = AdjacencyGraph::from_edges([CO, AZ, UT, NM], [(CO, AZ), (CO, UT), (CO, NM)]);
        let d = DistanceMatrix::from_fn([CO, AZ, UT, NM], |a, b| {
            let f = |s| match s {
                AZ => 3.0,
                UT => 1.0,
                NM => 2.0,
                _ => 0.0,
            };
            f64::abs(f(a) - f(b))
        });
        let list = nearest_neighbors(CO, &g, &d, 10).unwrap();
        let order: Vec<_> = list.entries.iter().map(|e| e.state).collect();
        assert_eq!(order, vec![UT, NM, AZ]);
        assert_eq!(list.entries.iter().map(|e| e.round).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn frontier_reaches_non_contiguous_states() {
        // chain ID - MT - ND: ND is far from ID geographically but closest in distance
        let g = AdjacencyGraph::from_edges([ID, MT, ND, WA], [(ID, MT), (MT, ND), (ID, WA)]);
        let d = DistanceMatrix::from_fn([ID, MT, ND, WA], |a, b| {
            let f = |s| match s {
                ID => 0.0,
                MT => 2.0,
                ND => 0.5,
                _ => 3.0,
            };
            f64::abs(f(a) - f(b))
        });
        let list = nearest_neighbors(ID, &g, &d, 10).unwrap();
        let order: Vec<_> = list.entries.iter().map(|e| e.state).collect();
        assert_eq!(order, vec![MT, ND, WA]);
    }

    #[test]
    fn isolated_node_is_an_error() {
        let g = AdjacencyGraph::us_contiguity();
        let d = DistanceMatrix::from_fn(StateId::ALL, |_, _| 1.0);
        assert!(matches!(nearest_neighbors(AK, &g, &d, 10), Err(GroupingError::IsolatedNode(AK))));
    }

    #[test]
    fn strict_inequality_keeps_group_of_three() {
        let states = [NY, NJ, CT, PA, VT];
        let g = AdjacencyGraph::from_edges(states, [(NY, NJ), (NY, CT), (NY, PA), (NY, VT)]);
        let d = DistanceMatrix::from_fn(states, |a, b| {
            let f = |s| match s {
                NY => 0.0,
                NJ => 1.0,
                CT => 2.0,
                PA => 3.0,
                _ => 4.0,
            };
            f64::abs(f(a) - f(b))
        });
        let list = nearest_neighbors(NY, &g, &d, 10).unwrap();
        let group = build_group(&list, &d, &pops(&states, 1e7), 5e6).unwrap();
        assert_eq!(group.members, vec![NY, NJ, CT]);
        assert!(!group.floor_unmet);

        // a fourth state exactly at max(d1, d2) is still excluded
        let d_tie = DistanceMatrix::from_fn(states, |a, b| {
            let f = |s| match s {
                NY => 0.0,
                NJ => 1.0,
                CT => 2.0,
                PA => 2.0,
                _ => 4.0,
            };
            f64::abs(f(a) - f(b))
        });
        let list = nearest_neighbors(NY, &g, &d_tie, 10).unwrap();
        assert_eq!(list.entries[1].state, CT);
        let group = build_group(&list, &d_tie, &pops(&states, 1e7), 5e6).unwrap();
        assert_eq!(group.len(), 3);
    }

    #[test]
    fn closer_third_state_is_added() {
        // WI only enters the frontier in round 3, through MI
        let states = [IN, OH, KY, MI, WI];
        let g = AdjacencyGraph::from_edges(states, [(IN, OH), (IN, KY), (OH, MI), (MI, WI)]);
        let pos = |s| match s {
            IN => 0.0,
            OH => 2.0,
            KY => 5.0,
            MI => 4.0,
            _ => 1.0,
        };
        let d = DistanceMatrix::from_fn(states, |a, b| f64::abs(pos(a) - pos(b)));
        let list = nearest_neighbors(IN, &g, &d, 10).unwrap();
        let group = build_group(&list, &d, &pops(&states, 1e7), 5e6).unwrap();
        assert_eq!(group.members, vec![IN, OH, MI, WI]);
    }

    #[test]
    fn population_floor_augments_by_distance() {
        let states = [WY, MT, ND, ID, SD, NE, UT];
        let edges = [(WY, MT), (WY, ID), (WY, SD), (WY, NE), (WY, UT), (MT, ND), (MT, ID), (ND, SD), (SD, NE), (ID, UT)];
        let g = AdjacencyGraph::from_edges(states, edges);
        let pos = |s| match s {
            WY => 0.0,
            MT => 1.0,
            ND => 1.5,
            ID => 2.5,
            SD => 3.0,
            NE => 3.5,
            _ => 9.0,
        };
        let d = DistanceMatrix::from_fn(states, |a, b| f64::abs(pos(a) - pos(b)));
        let p = pops(&states, 1e6);
        let list = nearest_neighbors(WY, &g, &d, 10).unwrap();
        let small = build_group(&list, &d, &p, 3e6).unwrap();
        let large = build_group(&list, &d, &p, 6e6).unwrap();
        assert_eq!(small.members, vec![WY, MT, ND]);
        assert_eq!(large.members, vec![WY, MT, ND, ID, SD, NE]);
        assert!(large.members.starts_with(&small.members));
        let huge = build_group(&list, &d, &p, 1e9).unwrap();
        assert!(huge.floor_unmet);
        assert_eq!(huge.len(), 7);
    }

    #[test]
    fn island_group_takes_global_minimizer() {
        let states = [AK, WI, IA, MN, IL];
        let g = AdjacencyGraph::from_edges(states, [(WI, IA), (WI, MN), (WI, IL), (IA, MN)]);
        let pos = |s| match s {
            AK => 0.0,
            WI => 1.0,
            IA => 1.2,
            MN => 2.0,
            _ => 3.0,
        };
        let d = DistanceMatrix::from_fn(states, |a, b| f64::abs(pos(a) - pos(b)));
        let group = island_group(AK, &d, &g, &pops(&states, 1e7), &GroupConfig::default()).unwrap();
        assert_eq!(group.members[..3], [AK, WI, IA]);
        assert_eq!(group.provenance, Provenance::Island);
        assert!(matches!(island_group(WI, &d, &g, &pops(&states, 1e7), &GroupConfig::default()), Err(GroupingError::NotIsolated(WI))));
    }

    #[test]
    fn census_divisions_partition_states() {
        let mut seen = BTreeSet::new();
        for (_, members) in CENSUS_DIVISIONS {
            for s in members {
                assert!(seen.insert(*s), "{s} in two divisions");
            }
        }
        assert_eq!(seen.len(), 51);
        assert_eq!(census_region_group(CT).members, vec![CT, MA, ME, NH, RI, VT]);
        assert_eq!(census_region_group(AK).members, vec![AK, CA, HI, OR, WA]);
    }

    #[test]
    fn reciprocity_cases() {
        let mk = |t: StateId, m: &[StateId]| {
            let mut members = vec![t];
            members.extend_from_slice(m);
            StateGroup {
                target: t,
                distances: vec![None; members.len()],
                members,
                provenance: Provenance::Pca,
                total_population: None,
                floor_unmet: false,
            }
        };
        let mut groups = BTreeMap::new();
        groups.insert(AZ, mk(AZ, &[NV, UT]));
        groups.insert(NV, mk(NV, &[AZ, UT]));
        groups.insert(TX, mk(TX, &[NM, AZ]));
        let r = reciprocity(&groups);
        assert_eq!(r.pairs, vec![(AZ, NV)]);
        assert_eq!(r.never_reciprocal, vec![TX]);

        let mut none = BTreeMap::new();
        none.insert(AZ, mk(AZ, &[NV]));
        none.insert(UT, mk(UT, &[NV]));
        assert!(reciprocity(&none).pairs.is_empty());
    }

    #[test]
    fn groups_csv_round_trip() {
        let mut groups = BTreeMap::new();
        groups.insert(CT, census_region_group(CT));
        groups.insert(TX, single_state_group(TX));
        let mut buf = Vec::new();
        write_groups_csv(&groups, &mut buf).unwrap();
        let back = read_groups_csv(buf.as_slice()).unwrap();
        assert_eq!(back[&CT].members, groups[&CT].members);
        assert_eq!(back[&TX].provenance, Provenance::SingleState);
    }
}
