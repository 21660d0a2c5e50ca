//! Synthetic samples labelled by an M/M/1 queueing oracle, and the
//! line-delimited dataset file format.
//!
//! Dataset files are UTF-8 with one JSON document per line. Line 1 is the
//! header:
//!
//! ```text
//! {"format_version":1,"jitter_semantics":"variance","capacity_units":"bits/s","time_units":"s"}
//! ```
//!
//! and every further line is one sample:
//!
//! ```text
//! {"topology":{"node_count":N,"links":[[src,dst,capacity],...]},
//!  "routing":{"paths":[[src,dst,[link,...]],...]},
//!  "traffic":{"demand":[...]},
//!  "labels":{"delay":[...],"jitter":[...]}}
//! ```
//!
//! Link and path ids are the positions in their lists. Reals are written with
//! shortest round-trip formatting.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::model::Target;
use crate::netgraph::{GraphError, Link, Path, RoutingScheme, Topology, TrafficMatrix};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("traffic cannot be scaled below capacity: {0}")]
    InfeasibleTraffic(String),
    #[error("link {link} overloaded: load {load} >= capacity {capacity}")]
    Overload { link: usize, load: f64, capacity: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: dataset format version {found}, expected {DATASET_FORMAT_VERSION}")]
    SchemaVersionMismatch { path: PathBuf, found: u32 },
    #[error("cannot split {n} samples with train fraction {fraction}: one side would be empty")]
    DegenerateSplit { n: usize, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub node_count: usize,
    /// Probability of adding each non-tree node pair as an extra edge.
    pub extra_edge_prob: f64,
    pub capacity_choices: Vec<f64>,
    /// Target maximum link utilization in (0, 1).
    pub traffic_intensity: f64,
    /// Fraction of ordered node pairs that get a routed path.
    pub pair_fraction: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            node_count: 8,
            extra_edge_prob: 0.3,
            capacity_choices: vec![10.0, 25.0, 40.0],
            traffic_intensity: 0.7,
            pair_fraction: 0.5,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidConfig(m));
        if self.node_count < 3 {
            return bad(format!("node_count {} < 3", self.node_count));
        }
        if !(0.0..=1.0).contains(&self.extra_edge_prob) {
            return bad(format!("extra_edge_prob {} outside [0, 1]", self.extra_edge_prob));
        }
        if self.capacity_choices.is_empty() {
            return bad("capacity_choices is empty".into());
        }
        if self.capacity_choices.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return bad("capacities must be positive".into());
        }
        if !(self.traffic_intensity > 0.0 && self.traffic_intensity < 1.0) {
            return bad(format!("traffic_intensity {} outside (0, 1)", self.traffic_intensity));
        }
        if !(self.pair_fraction > 0.0 && self.pair_fraction <= 1.0) {
            return bad(format!("pair_fraction {} outside (0, 1]", self.pair_fraction));
        }
        Ok(())
    }
}

/// Per-path ground truth: mean delay (s) and delay variance (s²).
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub delay: Vec<f64>,
    pub jitter: Vec<f64>,
}

impl Labels {
    pub fn get(&self, target: Target) -> &[f64] {
        match target {
            Target::Delay => &self.delay,
            Target::Jitter => &self.jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub topology: Topology,
    pub routing: RoutingScheme,
    pub traffic: TrafficMatrix,
    pub labels: Labels,
}

impl Sample {
    /// Checks stability of every link and label shape/sign.
    pub fn validate(&self) -> Result<(), DatagenError> {
        let loads = self.traffic.link_loads(&self.topology, &self.routing);
        for (link, (&load, l)) in loads.iter().zip(self.topology.links()).enumerate() {
            if load >= l.capacity {
                return Err(DatagenError::Overload { link, load, capacity: l.capacity });
            }
        }
        let n = self.routing.n_paths();
        let Labels { delay, jitter } = &self.labels;
        if delay.len() != n || jitter.len() != n {
            return Err(DatagenError::InvalidConfig(format!("labels for {} paths, expected {n}", delay.len())));
        }
        if delay.iter().any(|d| !(d.is_finite() && *d > 0.0)) || jitter.iter().any(|j| !(j.is_finite() && *j >= 0.0)) {
            return Err(DatagenError::InvalidConfig("labels must be finite, delay positive, jitter non-negative".into()));
        }
        Ok(())
    }

    pub fn max_utilization(&self) -> f64 {
        let loads = self.traffic.link_loads(&self.topology, &self.routing);
        loads.iter().zip(self.topology.links()).map(|(l, k)| l / k.capacity).fold(0.0, f64::max)
    }
}

/// Per-link M/M/1 sojourn time `1/(c - λ)` with variance `1/(c - λ)²`,
/// summed along each path (links treated as independent).
pub fn oracle_labels(topology: &Topology, routing: &RoutingScheme, traffic: &TrafficMatrix) -> Result<Labels, DatagenError> {
    let loads = traffic.link_loads(topology, routing);
    let link_delay = loads
        .iter()
        .zip(topology.links())
        .map(|(&load, l)| link_sojourn(l.link_id, l.capacity, load))
        .collect::<Result<Vec<_>, _>>()?;
    let mut delay = Vec::with_capacity(routing.n_paths());
    let mut jitter = Vec::with_capacity(routing.n_paths());
    for path in routing.paths() {
        delay.push(path.link_seq.iter().map(|&l| link_delay[l]).sum());
        jitter.push(path.link_seq.iter().map(|&l| link_delay[l] * link_delay[l]).sum());
    }
    Ok(Labels { delay, jitter })
}

/// Mean M/M/1 sojourn time of one link.
pub fn link_sojourn(link: usize, capacity: f64, load: f64) -> Result<f64, DatagenError> {
    if load >= capacity {
        return Err(DatagenError::Overload { link, load, capacity });
    }
    Ok(1.0 / (capacity - load))
}

fn random_topology(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Topology, DatagenError> {
    let n = config.node_count;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut adjacent = vec![vec![false; n]; n];
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        let child = order[i];
        adjacent[parent][child] = true;
        adjacent[child][parent] = true;
    }
    for u in 0..n {
        for v in u + 1..n {
            if !adjacent[u][v] && rng.gen::<f64>() < config.extra_edge_prob {
                adjacent[u][v] = true;
                adjacent[v][u] = true;
            }
        }
    }
    // Each undirected edge becomes two directed links of equal capacity,
    // numbered in (u, v) order.
    let mut links = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if adjacent[u][v] {
                let capacity = *config.capacity_choices.choose(rng).expect("validated non-empty");
                let id = links.len();
                links.push(Link { link_id: id, src: u, dst: v, capacity });
                links.push(Link { link_id: id + 1, src: v, dst: u, capacity });
            }
        }
    }
    Ok(Topology::new(n, links)?)
}

/// Fewest-hop route from `src` to `dst`, choosing the lexicographically
/// smallest node sequence among ties.
pub fn shortest_path(topology: &Topology, src: usize, dst: usize) -> Option<Vec<usize>> {
    let n = topology.node_count();
    // out[u] sorted by next-hop node
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut into: Vec<Vec<usize>> = vec![Vec::new(); n];
    for l in topology.links() {
        out[l.src].push((l.dst, l.link_id));
        into[l.dst].push(l.src);
    }
    out.iter_mut().for_each(|o| o.sort_unstable());

    // hop distance to dst over reversed links
    let mut dist = vec![usize::MAX; n];
    dist[dst] = 0;
    let mut queue = VecDeque::from([dst]);
    while let Some(u) = queue.pop_front() {
        for &w in &into[u] {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    if dist[src] == usize::MAX {
        return None;
    }
    let mut seq = Vec::with_capacity(dist[src]);
    let mut at = src;
    while at != dst {
        let &(next, link) = out[at].iter().find(|(v, _)| dist[*v] == dist[at] - 1)?;
        seq.push(link);
        at = next;
    }
    Some(seq)
}

/// One sample from `config` (its `seed` fully determines the result).
pub fn gen_sample(config: &GeneratorConfig) -> Result<Sample, DatagenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let topology = random_topology(config, &mut rng)?;

    let n = config.node_count;
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..n).filter(move |&d| d != s).map(move |d| (s, d))).collect();
    let keep = ((pairs.len() as f64 * config.pair_fraction).ceil() as usize).clamp(1, pairs.len());
    pairs.shuffle(&mut rng);
    pairs.truncate(keep);
    pairs.sort_unstable();

    let mut paths = Vec::with_capacity(pairs.len());
    for (path_id, &(src, dst)) in pairs.iter().enumerate() {
        let link_seq = shortest_path(&topology, src, dst)
            .ok_or_else(|| DatagenError::InvalidConfig(format!("no route from {src} to {dst}")))?;
        paths.push(Path { path_id, src, dst, link_seq });
    }
    let routing = RoutingScheme::new(&topology, paths)?;

    let raw: Vec<f64> = (0..routing.n_paths()).map(|_| rng.gen_range(0.1..1.0)).collect();
    let unit = TrafficMatrix::new(&routing, raw)?;
    let util = unit
        .link_loads(&topology, &routing)
        .iter()
        .zip(topology.links())
        .map(|(load, l)| load / l.capacity)
        .fold(0.0, f64::max);
    if !(util > 0.0 && util.is_finite()) {
        return Err(DatagenError::InfeasibleTraffic(format!("max utilization {util}")));
    }
    let factor = config.traffic_intensity / util;
    let traffic = TrafficMatrix::new(&routing, unit.demand().iter().map(|d| d * factor).collect())?;
    let labels = oracle_labels(&topology, &routing, &traffic)?;
    let sample = Sample { topology, routing, traffic, labels };
    sample.validate()?;
    Ok(sample)
}

/// `count` samples, the `i`-th seeded by `derive_seed(config.seed, i)`.
pub fn gen_dataset(config: &GeneratorConfig, count: usize) -> Result<Vec<Sample>, DatagenError> {
    (0..count)
        .map(|i| gen_sample(&GeneratorConfig { seed: derive_seed(config.seed, i as u64), ..config.clone() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub jitter_semantics: String,
    pub capacity_units: String,
    pub time_units: String,
}

impl Default for DatasetHeader {
    fn default() -> Self {
        Self {
            format_version: DATASET_FORMAT_VERSION,
            jitter_semantics: "variance".into(),
            capacity_units: "bits/s".into(),
            time_units: "s".into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyRecord {
    node_count: usize,
    links: Vec<(usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoutingRecord {
    paths: Vec<(usize, usize, Vec<usize>)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficRecord {
    demand: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsRecord {
    delay: Vec<f64>,
    jitter: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    topology: TopologyRecord,
    routing: RoutingRecord,
    traffic: TrafficRecord,
    labels: LabelsRecord,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        Self {
            topology: TopologyRecord {
                node_count: s.topology.node_count(),
                links: s.topology.links().iter().map(|l| (l.src, l.dst, l.capacity)).collect(),
            },
            routing: RoutingRecord {
                paths: s.routing.paths().iter().map(|p| (p.src, p.dst, p.link_seq.clone())).collect(),
            },
            traffic: TrafficRecord { demand: s.traffic.demand().to_vec() },
            labels: LabelsRecord { delay: s.labels.delay.clone(), jitter: s.labels.jitter.clone() },
        }
    }
}

impl SampleRecord {
    fn into_sample(self) -> Result<Sample, DatagenError> {
        let topology = Topology::from_triples(self.topology.node_count, &self.topology.links)?;
        let paths = self
            .routing
            .paths
            .into_iter()
            .enumerate()
            .map(|(path_id, (src, dst, link_seq))| Path { path_id, src, dst, link_seq })
            .collect();
        let routing = RoutingScheme::new(&topology, paths)?;
        let traffic = TrafficMatrix::new(&routing, self.traffic.demand)?;
        let sample = Sample {
            topology,
            routing,
            traffic,
            labels: Labels { delay: self.labels.delay, jitter: self.labels.jitter },
        };
        sample.validate()?;
        Ok(sample)
    }
}

pub fn write_dataset(samples: &[Sample], path: &FsPath) -> Result<(), DatagenError> {
    let io = |source| DatagenError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let to_io = |e: serde_json::Error| io(std::io::Error::other(e));
    serde_json::to_writer(&mut w, &DatasetHeader::default()).map_err(to_io)?;
    w.write_all(b"\n").map_err(io)?;
    for s in samples {
        serde_json::to_writer(&mut w, &SampleRecord::from(s)).map_err(to_io)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &FsPath) -> Result<Vec<Sample>, DatagenError> {
    let file = File::open(path).map_err(|source| DatagenError::Io { path: path.to_path_buf(), source })?;
    let parse = |line: usize, message: String| DatagenError::Parse { path: path.to_path_buf(), line, message };
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| parse(1, "missing header line".into()))?
        .map_err(|source| DatagenError::Io { path: path.to_path_buf(), source })?;
    let raw: serde_json::Value = serde_json::from_str(&header_line).map_err(|e| parse(1, e.to_string()))?;
    let found = raw.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if found != DATASET_FORMAT_VERSION {
        return Err(DatagenError::SchemaVersionMismatch { path: path.to_path_buf(), found });
    }
    let header: DatasetHeader = serde_json::from_value(raw).map_err(|e| parse(1, e.to_string()))?;
    if header.jitter_semantics != "variance" {
        return Err(parse(1, format!("unsupported jitter semantics '{}'", header.jitter_semantics)));
    }

    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|source| DatagenError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| parse(line_no, e.to_string()))?;
        samples.push(record.into_sample().map_err(|e| parse(line_no, e.to_string()))?);
    }
    Ok(samples)
}

/// Seeded shuffle, then the first `round(n·train_fraction)` samples train.
pub fn split_dataset(samples: Vec<Sample>, train_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), DatagenError> {
    let n = samples.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if !(train_fraction > 0.0 && train_fraction < 1.0) || n_train == 0 || n_train >= n {
        return Err(DatagenError::DegenerateSplit { n, fraction: train_fraction });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| idx.iter().map(|&i| slots[i].take().expect("permutation")).collect::<Vec<_>>();
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..]);
    Ok((train, val))
}
