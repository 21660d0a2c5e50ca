//! Network topology, routing and traffic types, plus the heterogeneous
//! path/link graph that message passing runs on.
//!
//! A [`HeteroGraph`] has two node kinds: links and paths. A path node is
//! adjacent to every link it traverses, and a link node to every path that
//! traverses it. Two paths are neighbors when they share at least one link.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid routing for path {path_id}: {reason}")]
    InvalidRouting { path_id: usize, reason: String },
    #[error("invalid traffic matrix: {0}")]
    InvalidTraffic(String),
    #[error("cannot build a batch from zero graphs")]
    EmptyBatch,
}

/// A directed link with a fixed capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub link_id: usize,
    pub src: usize,
    pub dst: usize,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    links: Vec<Link>,
}

impl Topology {
    /// Validates ids, endpoints, capacities and (undirected) connectivity.
    pub fn new(node_count: usize, links: Vec<Link>) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::InvalidTopology("node_count must be positive".into()));
        }
        for (i, link) in links.iter().enumerate() {
            if link.link_id != i {
                return Err(GraphError::InvalidTopology(format!(
                    "link at position {i} has id {}; ids must be 0..n_l-1 in order",
                    link.link_id
                )));
            }
            if link.src == link.dst {
                return Err(GraphError::InvalidTopology(format!("link {i} is a self-loop")));
            }
            if link.src >= node_count || link.dst >= node_count {
                return Err(GraphError::InvalidTopology(format!(
                    "link {i} endpoint out of range for {node_count} nodes"
                )));
            }
            if !(link.capacity.is_finite() && link.capacity > 0.0) {
                return Err(GraphError::InvalidTopology(format!(
                    "link {i} has non-positive capacity {}",
                    link.capacity
                )));
            }
        }
        let topo = Self { node_count, links };
        if !topo.is_connected() {
            return Err(GraphError::InvalidTopology("topology is not connected".into()));
        }
        Ok(topo)
    }

    /// Convenience constructor from `(src, dst, capacity)` triples; ids follow
    /// the slice order.
    pub fn from_triples(node_count: usize, triples: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let links = triples
            .iter()
            .enumerate()
            .map(|(link_id, &(src, dst, capacity))| Link { link_id, src, dst, capacity })
            .collect();
        Self::new(node_count, links)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn max_capacity(&self) -> f64 {
        self.links.iter().map(|l| l.capacity).fold(0.0, f64::max)
    }

    fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.node_count];
        for l in &self.links {
            adj[l.src].push(l.dst);
            adj[l.dst].push(l.src);
        }
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.node_count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub path_id: usize,
    pub src: usize,
    pub dst: usize,
    pub link_seq: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingScheme {
    paths: Vec<Path>,
}

impl RoutingScheme {
    /// Checks every path against `topology`: known links, a contiguous walk
    /// from `src` to `dst`, and no repeated link.
    pub fn new(topology: &Topology, paths: Vec<Path>) -> Result<Self, GraphError> {
        for (i, path) in paths.iter().enumerate() {
            let bad = |reason: String| GraphError::InvalidRouting { path_id: path.path_id, reason };
            if path.path_id != i {
                return Err(bad(format!("found at position {i}; ids must be 0..n_p-1 in order")));
            }
            if path.link_seq.is_empty() {
                return Err(bad("empty link sequence".into()));
            }
            let mut at = path.src;
            let mut used = vec![false; topology.n_links()];
            for &lid in &path.link_seq {
                let link = topology
                    .links()
                    .get(lid)
                    .ok_or_else(|| bad(format!("unknown link {lid}")))?;
                if used[lid] {
                    return Err(bad(format!("link {lid} repeats")));
                }
                used[lid] = true;
                if link.src != at {
                    return Err(bad(format!(
                        "link {lid} starts at node {} but the walk is at node {at}",
                        link.src
                    )));
                }
                at = link.dst;
            }
            if at != path.dst {
                return Err(bad(format!("walk ends at node {at}, expected {}", path.dst)));
            }
        }
        Ok(Self { paths })
    }

    /// Builds a routing scheme from bare link sequences, deriving endpoints
    /// from the first and last link.
    pub fn from_link_seqs(topology: &Topology, seqs: &[Vec<usize>]) -> Result<Self, GraphError> {
        let mut paths = Vec::with_capacity(seqs.len());
        for (path_id, seq) in seqs.iter().enumerate() {
            let (Some(&first), Some(&last)) = (seq.first(), seq.last()) else {
                return Err(GraphError::InvalidRouting { path_id, reason: "empty link sequence".into() });
            };
            let lookup = |lid: usize| {
                topology.links().get(lid).ok_or_else(|| GraphError::InvalidRouting {
                    path_id,
                    reason: format!("unknown link {lid}"),
                })
            };
            let src = lookup(first)?.src;
            let dst = lookup(last)?.dst;
            paths.push(Path { path_id, src, dst, link_seq: seq.clone() });
        }
        Self::new(topology, paths)
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }
}

/// Per-path offered bandwidth; these are the raw path features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    demand: Vec<f64>,
}

impl TrafficMatrix {
    pub fn new(routing: &RoutingScheme, demand: Vec<f64>) -> Result<Self, GraphError> {
        if demand.len() != routing.n_paths() {
            return Err(GraphError::InvalidTraffic(format!(
                "{} demands for {} paths",
                demand.len(),
                routing.n_paths()
            )));
        }
        if let Some((i, d)) = demand.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d > 0.0)) {
            return Err(GraphError::InvalidTraffic(format!("path {i} has non-positive demand {d}")));
        }
        Ok(Self { demand })
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    /// Total offered load on each link.
    pub fn link_loads(&self, topology: &Topology, routing: &RoutingScheme) -> Vec<f64> {
        let mut loads = vec![0.0; topology.n_links()];
        for (path, &d) in routing.paths().iter().zip(&self.demand) {
            for &l in &path.link_seq {
                loads[l] += d;
            }
        }
        loads
    }
}

/// Path/link incidence plus shared-link path adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeteroGraph {
    /// Links of each path in traversal order.
    pub path_links: Vec<Vec<usize>>,
    /// `(path_id, position)` pairs for every traversal of each link, sorted by path.
    pub link_paths: Vec<Vec<(usize, usize)>>,
    /// Sorted, distinct paths sharing at least one link; a path is never its own neighbor.
    pub path_neighbors: Vec<Vec<usize>>,
    pub n_paths: usize,
    pub n_links: usize,
}

impl HeteroGraph {
    /// Builds the graph from raw link sequences. The sequences must use link
    /// ids below `n_links` and not repeat a link; walk contiguity is not
    /// checked here (see [`build_hetero_graph`]).
    pub fn from_path_links(n_links: usize, path_links: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let n_paths = path_links.len();
        let mut link_paths: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_links];
        for (p, seq) in path_links.iter().enumerate() {
            if seq.is_empty() {
                return Err(GraphError::InvalidRouting { path_id: p, reason: "empty link sequence".into() });
            }
            for (pos, &l) in seq.iter().enumerate() {
                let slot = link_paths.get_mut(l).ok_or_else(|| GraphError::InvalidRouting {
                    path_id: p,
                    reason: format!("unknown link {l}"),
                })?;
                if slot.last().is_some_and(|&(q, _)| q == p) {
                    return Err(GraphError::InvalidRouting { path_id: p, reason: format!("link {l} repeats") });
                }
                slot.push((p, pos));
            }
        }

        let mut path_neighbors = vec![Vec::new(); n_paths];
        for (p, seq) in path_links.iter().enumerate() {
            let nbrs = &mut path_neighbors[p];
            for &l in seq {
                nbrs.extend(link_paths[l].iter().map(|&(q, _)| q).filter(|&q| q != p));
            }
            nbrs.sort_unstable();
            nbrs.dedup();
        }

        Ok(Self { path_links, link_paths, path_neighbors, n_paths, n_links })
    }

    pub fn max_path_len(&self) -> usize {
        self.path_links.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of (path, link) incidences.
    pub fn n_incidences(&self) -> usize {
        self.path_links.iter().map(Vec::len).sum()
    }
}

/// Validates `routing` against `topology` and builds the heterogeneous graph.
pub fn build_hetero_graph(topology: &Topology, routing: &RoutingScheme) -> Result<HeteroGraph, GraphError> {
    // Re-validate: a RoutingScheme may have been built against another topology.
    let routing = RoutingScheme::new(topology, routing.paths().to_vec())?;
    HeteroGraph::from_path_links(
        topology.n_links(),
        routing.paths().iter().map(|p| p.link_seq.clone()).collect(),
    )
}

/// Disjoint union: graph `k` has its path and link ids shifted by the totals
/// of graphs `0..k`. No edges cross between members.
pub fn union_batch(graphs: &[&HeteroGraph]) -> Result<HeteroGraph, GraphError> {
    if graphs.is_empty() {
        return Err(GraphError::EmptyBatch);
    }
    let n_paths = graphs.iter().map(|g| g.n_paths).sum();
    let n_links = graphs.iter().map(|g| g.n_links).sum();
    let mut path_links = Vec::with_capacity(n_paths);
    let mut link_paths = Vec::with_capacity(n_links);
    let mut path_neighbors = Vec::with_capacity(n_paths);
    let (mut p_off, mut l_off) = (0, 0);
    for g in graphs {
        path_links.extend(g.path_links.iter().map(|seq| seq.iter().map(|l| l + l_off).collect::<Vec<_>>()));
        link_paths.extend(
            g.link_paths
                .iter()
                .map(|ps| ps.iter().map(|&(p, pos)| (p + p_off, pos)).collect::<Vec<_>>()),
        );
        path_neighbors.extend(g.path_neighbors.iter().map(|ns| ns.iter().map(|q| q + p_off).collect::<Vec<_>>()));
        p_off += g.n_paths;
        l_off += g.n_links;
    }
    Ok(HeteroGraph { path_links, link_paths, path_neighbors, n_paths, n_links })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triangle() -> (Topology, RoutingScheme) {
        // a: 0->1, b: 1->2, c: 0->2
        let topo = Topology::from_triples(3, &[(0, 1, 10.0), (1, 2, 10.0), (0, 2, 10.0)]).unwrap();
        let routing = RoutingScheme::from_link_seqs(&topo, &[vec![0, 1], vec![2], vec![1]]).unwrap();
        (topo, routing)
    }

    fn brute_force_neighbors(path_links: &[Vec<usize>]) -> Vec<Vec<usize>> {
        let n = path_links.len();
        (0..n)
            .map(|p| {
                (0..n)
                    .filter(|&q| q != p && path_links[p].iter().any(|l| path_links[q].contains(l)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn triangle_example() {
        let (topo, routing) = triangle();
        let g = build_hetero_graph(&topo, &routing).unwrap();
        assert_eq!(g.path_neighbors, vec![vec![2], vec![], vec![0]]);
        assert_eq!(g.link_paths[1], vec![(0, 1), (2, 0)]);
        assert_eq!(g.link_paths[0], vec![(0, 0)]);
        assert_eq!(g.link_paths[2], vec![(1, 0)]);
        assert_eq!(g.path_neighbors, brute_force_neighbors(&g.path_links));
    }

    #[test]
    fn single_path_single_link() {
        let topo = Topology::from_triples(2, &[(0, 1, 1.0)]).unwrap();
        let routing = RoutingScheme::from_link_seqs(&topo, &[vec![0]]).unwrap();
        let g = build_hetero_graph(&topo, &routing).unwrap();
        assert_eq!(g.path_neighbors, vec![Vec::<usize>::new()]);
        assert_eq!(g.link_paths, vec![vec![(0, 0)]]);
    }

    #[test]
    fn identical_routes_are_mutual_neighbors() {
        let (topo, _) = triangle();
        let routing = RoutingScheme::from_link_seqs(&topo, &[vec![0, 1], vec![0, 1]]).unwrap();
        let g = build_hetero_graph(&topo, &routing).unwrap();
        assert_eq!(g.path_neighbors, vec![vec![1], vec![0]]);
    }

    #[test]
    fn broken_walk_is_rejected_with_path_id() {
        let (topo, _) = triangle();
        // c ends at node 2, then a starts at node 0.
        let err = RoutingScheme::from_link_seqs(&topo, &[vec![2], vec![2, 0]]).unwrap_err();
        assert!(matches!(err, GraphError::InvalidRouting { path_id: 1, .. }), "{err}");
    }

    #[test]
    fn unknown_and_repeated_links_are_rejected() {
        let (topo, _) = triangle();
        let err = RoutingScheme::from_link_seqs(&topo, &[vec![0, 7]]).unwrap_err();
        assert!(matches!(err, GraphError::InvalidRouting { path_id: 0, .. }));

        let ring = Topology::from_triples(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let err = RoutingScheme::from_link_seqs(&ring, &[vec![0, 1, 0]]).unwrap_err();
        assert!(err.to_string().contains("repeats"), "{err}");
        let err = HeteroGraph::from_path_links(2, vec![vec![0, 1, 0]]).unwrap_err();
        assert!(err.to_string().contains("repeats"), "{err}");
    }

    #[test]
    fn routing_against_another_topology_is_revalidated() {
        let (_, routing) = triangle();
        let line = Topology::from_triples(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert!(build_hetero_graph(&line, &routing).is_err());
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::from_triples(2, &[(0, 0, 1.0)]).is_err());
        assert!(Topology::from_triples(2, &[(0, 2, 1.0)]).is_err());
        assert!(Topology::from_triples(2, &[(0, 1, 0.0)]).is_err());
        assert!(Topology::from_triples(3, &[(0, 1, 1.0)]).is_err(), "node 2 is isolated");
        let bad_ids = vec![Link { link_id: 1, src: 0, dst: 1, capacity: 1.0 }];
        assert!(Topology::new(2, bad_ids).is_err());
    }

    #[test]
    fn traffic_validation_and_loads() {
        let (topo, routing) = triangle();
        assert!(TrafficMatrix::new(&routing, vec![1.0, 2.0]).is_err());
        assert!(TrafficMatrix::new(&routing, vec![1.0, 0.0, 1.0]).is_err());
        let tm = TrafficMatrix::new(&routing, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tm.link_loads(&topo, &routing), vec![1.0, 4.0, 2.0]);
    }

    #[test]
    fn union_of_one_is_identity() {
        let (topo, routing) = triangle();
        let g = build_hetero_graph(&topo, &routing).unwrap();
        assert_eq!(union_batch(&[&g]).unwrap(), g);
        assert_eq!(union_batch(&[]).unwrap_err(), GraphError::EmptyBatch);
    }

    #[test]
    fn union_of_single_path_graphs_has_no_neighbors() {
        let g = HeteroGraph::from_path_links(1, vec![vec![0]]).unwrap();
        let u = union_batch(&[&g, &g]).unwrap();
        assert_eq!(u.n_paths, 2);
        assert_eq!(u.path_neighbors, vec![Vec::<usize>::new(), vec![]]);
        assert_eq!(u.path_links, vec![vec![0], vec![1]]);
    }

    #[test]
    fn union_of_triangle_with_itself_offsets_by_three() {
        let (topo, routing) = triangle();
        let g = build_hetero_graph(&topo, &routing).unwrap();
        let u = union_batch(&[&g, &g]).unwrap();
        assert_eq!(u.path_neighbors, vec![vec![2], vec![], vec![0], vec![5], vec![], vec![3]]);
        assert_eq!(u.link_paths[4], vec![(3, 1), (5, 0)]);
        assert_eq!(u.path_links[3], vec![3, 4]);
    }

    fn arb_graph() -> impl Strategy<Value = HeteroGraph> {
        (1usize..12).prop_flat_map(|n_links| {
            let path = proptest::sample::subsequence((0..n_links).collect::<Vec<_>>(), 1..=n_links.min(5))
                .prop_shuffle();
            proptest::collection::vec(path, 1..10)
                .prop_map(move |pl| HeteroGraph::from_path_links(n_links, pl).unwrap())
        })
    }

    proptest! {
        #[test]
        fn incidence_and_neighbor_invariants(g in arb_graph()) {
            for (p, seq) in g.path_links.iter().enumerate() {
                for (i, &l) in seq.iter().enumerate() {
                    prop_assert!(g.link_paths[l].contains(&(p, i)));
                }
            }
            for (l, entries) in g.link_paths.iter().enumerate() {
                for &(p, i) in entries {
                    prop_assert_eq!(g.path_links[p][i], l);
                }
            }
            for (p, ns) in g.path_neighbors.iter().enumerate() {
                prop_assert!(!ns.contains(&p));
                for &q in ns {
                    prop_assert!(g.path_neighbors[q].contains(&p));
                }
            }
            prop_assert_eq!(&g.path_neighbors, &brute_force_neighbors(&g.path_links));
        }

        #[test]
        fn union_of_k_copies_scales_counts(g in arb_graph(), k in 1usize..4) {
            let copies: Vec<&HeteroGraph> = std::iter::repeat_n(&g, k).collect();
            let u = union_batch(&copies).unwrap();
            prop_assert_eq!(u.n_paths, k * g.n_paths);
            prop_assert_eq!(u.n_links, k * g.n_links);
            prop_assert_eq!(&u.path_neighbors, &brute_force_neighbors(&u.path_links));
        }
    }
}
