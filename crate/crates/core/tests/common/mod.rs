#![allow(dead_code)]

use dwnet::datagen::{gen_sample, GeneratorConfig, Labels, Sample};
use dwnet::derive_seed;
use dwnet::model::ModelConfig;
use dwnet::netgraph::{build_hetero_graph, HeteroGraph, Link, RoutingScheme, Topology, TrafficMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small scenario whose size and density vary with `seed`.
pub fn random_sample(seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 77));
    let config = GeneratorConfig {
        node_count: rng.gen_range(3..=10),
        extra_edge_prob: rng.gen_range(0.0..0.6),
        traffic_intensity: rng.gen_range(0.2..0.9),
        pair_fraction: rng.gen_range(0.2..1.0),
        seed,
        ..GeneratorConfig::default()
    };
    gen_sample(&config).unwrap()
}

pub fn small_model() -> ModelConfig {
    ModelConfig { state_dim: 8, rounds: 3, readout_hidden: 16, ..ModelConfig::default() }
}

/// Path and link features: demand and capacity scaled by the largest capacity.
pub fn features(s: &Sample) -> (Vec<f64>, Vec<f64>) {
    let scale = s.topology.max_capacity();
    (
        s.traffic.demand().iter().map(|d| d / scale).collect(),
        s.topology.links().iter().map(|l| l.capacity / scale).collect(),
    )
}

pub fn graph(s: &Sample) -> HeteroGraph {
    build_hetero_graph(&s.topology, &s.routing).unwrap()
}

/// Queueing labels recomputed from scratch, one term per traversed link.
pub fn reference_labels(s: &Sample) -> Labels {
    let mut load = vec![0.0; s.topology.n_links()];
    for (p, path) in s.routing.paths().iter().enumerate() {
        for &l in &path.link_seq {
            load[l] += s.traffic.demand()[p];
        }
    }
    let mut delay = Vec::new();
    let mut jitter = Vec::new();
    for path in s.routing.paths() {
        let (mut d, mut j) = (0.0, 0.0);
        for &l in &path.link_seq {
            let spare = s.topology.links()[l].capacity - load[l];
            assert!(spare > 0.0, "link {l} is overloaded");
            d += 1.0 / spare;
            j += 1.0 / (spare * spare);
        }
        delay.push(d);
        jitter.push(j);
    }
    Labels { delay, jitter }
}

/// The same scenario with links reordered by `link_order` (new link `i` is
/// old link `link_order[i]`) and paths reordered by `path_order`.
pub fn relabel(s: &Sample, link_order: &[usize], path_order: &[usize]) -> Sample {
    let mut new_id = vec![0; link_order.len()];
    for (i, &old) in link_order.iter().enumerate() {
        new_id[old] = i;
    }
    let links: Vec<Link> = link_order
        .iter()
        .enumerate()
        .map(|(i, &old)| Link { link_id: i, ..s.topology.links()[old].clone() })
        .collect();
    let topology = Topology::new(s.topology.node_count(), links).unwrap();
    let seqs: Vec<Vec<usize>> = path_order
        .iter()
        .map(|&p| s.routing.paths()[p].link_seq.iter().map(|&l| new_id[l]).collect())
        .collect();
    let routing = RoutingScheme::from_link_seqs(&topology, &seqs).unwrap();
    let demand = path_order.iter().map(|&p| s.traffic.demand()[p]).collect();
    let traffic = TrafficMatrix::new(&routing, demand).unwrap();
    let labels = Labels {
        delay: path_order.iter().map(|&p| s.labels.delay[p]).collect(),
        jitter: path_order.iter().map(|&p| s.labels.jitter[p]).collect(),
    };
    Sample { topology, routing, traffic, labels }
}

pub fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

use dwnet::model::{forward, forward_traced, Mode, ModelParams};
use dwnet::netgraph::union_batch;

/// Incidence lists agree in both directions and neighbor sets are symmetric,
/// self-free and exactly the paths sharing a link.
pub fn check_graph_symmetry(s: &Sample) -> Result<(), String> {
    let g = graph(s);
    for (p, seq) in g.path_links.iter().enumerate() {
        for (i, &l) in seq.iter().enumerate() {
            if !g.link_paths[l].contains(&(p, i)) {
                return Err(format!("link {l} misses incidence ({p}, {i})"));
            }
        }
    }
    let incidences: usize = g.link_paths.iter().map(Vec::len).sum();
    if incidences != g.path_links.iter().map(Vec::len).sum::<usize>() {
        return Err("incidence counts differ".into());
    }
    for p in 0..g.n_paths {
        for q in 0..g.n_paths {
            let share = p != q && g.path_links[p].iter().any(|l| g.path_links[q].contains(l));
            if share != g.path_neighbors[p].contains(&q) {
                return Err(format!("neighbor relation of paths {p} and {q} is wrong"));
            }
            if g.path_neighbors[p].contains(&q) != g.path_neighbors[q].contains(&p) {
                return Err(format!("neighbor relation of paths {p} and {q} is asymmetric"));
            }
        }
    }
    Ok(())
}

pub fn check_oracle(s: &Sample) -> Result<(), String> {
    let expected = reference_labels(s);
    for (p, (a, b)) in s.labels.delay.iter().zip(&expected.delay).enumerate() {
        if !close(*a, *b, 1e-12) {
            return Err(format!("delay of path {p}: {a} vs {b}"));
        }
    }
    for (p, (a, b)) in s.labels.jitter.iter().zip(&expected.jitter).enumerate() {
        if !close(*a, *b, 1e-12) {
            return Err(format!("jitter of path {p}: {a} vs {b}"));
        }
    }
    Ok(())
}

pub fn predictions(s: &Sample, params: &ModelParams, config: &ModelConfig) -> Vec<f64> {
    let (x_p, x_l) = features(s);
    forward(&graph(s), &x_p, &x_l, params, config, Mode::Eval, 0).unwrap()
}

/// Relabeling links and paths permutes the predictions the same way.
pub fn check_equivariance(s: &Sample, params: &ModelParams, config: &ModelConfig, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let link_order = shuffled(s.topology.n_links(), &mut rng);
    let path_order = shuffled(s.routing.n_paths(), &mut rng);
    let base = predictions(s, params, config);
    let moved = predictions(&relabel(s, &link_order, &path_order), params, config);
    for (i, &p) in path_order.iter().enumerate() {
        if (moved[i] - base[p]).abs() > 1e-9 * base[p].abs().max(1.0) {
            return Err(format!("path {p}: {} vs {}", base[p], moved[i]));
        }
    }
    Ok(())
}

/// A forward pass over a disjoint union equals the per-member passes.
pub fn check_union(members: &[Sample], params: &ModelParams, config: &ModelConfig) -> Result<(), String> {
    let graphs: Vec<HeteroGraph> = members.iter().map(graph).collect();
    let refs: Vec<&HeteroGraph> = graphs.iter().collect();
    let union = union_batch(&refs).map_err(|e| e.to_string())?;
    let (mut x_p, mut x_l) = (Vec::new(), Vec::new());
    for s in members {
        let (p, l) = features(s);
        x_p.extend(p);
        x_l.extend(l);
    }
    let joint = forward(&union, &x_p, &x_l, params, config, Mode::Eval, 0).map_err(|e| e.to_string())?;
    let separate: Vec<f64> = members.iter().flat_map(|s| predictions(s, params, config)).collect();
    for (i, (a, b)) in joint.iter().zip(&separate).enumerate() {
        if (a - b).abs() > 1e-9 * b.abs().max(1.0) {
            return Err(format!("union path {i}: {a} vs {b}"));
        }
    }
    Ok(())
}

/// With the secondary state disabled, outputs are bitwise independent of
/// the fusion weight and of the secondary cell weights.
pub fn check_reduction_invariance(s: &Sample, seed: u64) -> Result<(), String> {
    let config = ModelConfig { secondary_enabled: false, lambda: 0.1, ..small_model() };
    let params = ModelParams::init(&config, seed).unwrap();
    let base = predictions(s, &params, &config);
    let mut perturbed = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in perturbed.named_mut() {
        if p.name.contains("secondary") {
            p.tensor.as_mut_slice().iter_mut().for_each(|v| *v += rng.gen_range(-1.0..1.0));
        }
    }
    if perturbed == params {
        return Err("no secondary parameters were perturbed".into());
    }
    for lambda in [0.0, 0.1, 0.9] {
        let other = ModelConfig { lambda, ..config.clone() };
        for candidate in [&params, &perturbed] {
            let moved = predictions(s, candidate, &other);
            if base.iter().map(|v| v.to_bits()).ne(moved.iter().map(|v| v.to_bits())) {
                return Err(format!("baseline output changed at lambda {lambda}"));
            }
        }
    }
    Ok(())
}

/// With a zero fusion weight every link input is exactly the sum of its
/// incoming messages in canonical order.
pub fn check_lambda_zero(s: &Sample, seed: u64) -> Result<(), String> {
    let config = ModelConfig { lambda: 0.0, ..small_model() };
    let params = ModelParams::init(&config, seed).unwrap();
    let (x_p, x_l) = features(s);
    let (_, trace) = forward_traced(&graph(s), &x_p, &x_l, &params, &config, Mode::Eval, 0).unwrap();
    for (t, round) in trace.iter().enumerate() {
        let d = config.state_dim;
        let mut expected = vec![vec![0.0; d]; s.topology.n_links()];
        for (k, &(_, l)) in round.incidences.iter().enumerate() {
            for c in 0..d {
                expected[l][c] += round.messages.get(k, c);
            }
        }
        for (l, row) in expected.iter().enumerate() {
            if row.as_slice() != round.link_inputs.row(l) {
                return Err(format!("round {t}, link {l}: link input differs from the message sum"));
            }
        }
    }
    Ok(())
}
