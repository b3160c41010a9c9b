//! Node population generation and per-topic mesh construction.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::ValidatedConfig;

/// Custody assignment of a single validator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorCustody {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub node_id: usize,
    pub class: u8,
    pub validators: Vec<ValidatorCustody>,
    /// Union of the validators' rows, sorted.
    pub custody_rows: Vec<usize>,
    /// Union of the validators' columns, sorted.
    pub custody_cols: Vec<usize>,
    pub uplink_mbps: f64,
    pub malicious: bool,
}

impl NodeSpec {
    pub fn validator_count(&self) -> usize {
        self.validators.len()
    }
}

#[derive(Debug, Clone)]
pub struct NodePopulation {
    pub nodes: Vec<NodeSpec>,
}

fn sorted_union(sets: impl Iterator<Item = Vec<usize>>) -> Vec<usize> {
    let mut all: Vec<usize> = sets.flatten().collect();
    all.sort_unstable();
    all.dedup();
    all
}

/// Generates the node population: class split, per-validator custody sampled
/// uniformly without replacement, and malicious flags.
///
/// Nodes `0..round(class1Ratio*nbNodes)` are class 1, the rest class 2.
pub fn generate_population<R: Rng>(
    cfg: &ValidatedConfig,
    rng_custody: &mut R,
    rng_malicious: &mut R,
) -> NodePopulation {
    let nb = cfg.nb_nodes;
    let n_rows = cfg.col_size_n;
    let n_cols = cfg.row_size_n;
    let class1_count = (cfg.class1_ratio * nb as f64).round() as usize;
    let class1_count = class1_count.min(nb);

    let mut nodes = Vec::with_capacity(nb);
    for node_id in 0..nb {
        let class = if node_id < class1_count { 1 } else { 2 };
        let (vpn, uplink_mbps) = if class == 1 {
            (cfg.vpn1, cfg.bw_uplink1)
        } else {
            (cfg.vpn2, cfg.bw_uplink2)
        };
        let validators: Vec<ValidatorCustody> = (0..vpn)
            .map(|_| {
                let mut rows: Vec<usize> = sample(rng_custody, n_rows, cfg.custody_row).into_vec();
                let mut cols: Vec<usize> = sample(rng_custody, n_cols, cfg.custody_col).into_vec();
                rows.sort_unstable();
                cols.sort_unstable();
                ValidatorCustody { rows, cols }
            })
            .collect();
        let custody_rows = sorted_union(validators.iter().map(|v| v.rows.clone()));
        let custody_cols = sorted_union(validators.iter().map(|v| v.cols.clone()));
        nodes.push(NodeSpec {
            node_id,
            class,
            validators,
            custody_rows,
            custody_cols,
            uplink_mbps,
            malicious: false,
        });
    }

    let malicious_count = (cfg.malicious_rate * nb as f64).round() as usize;
    for i in sample(rng_malicious, nb, malicious_count.min(nb)) {
        nodes[i].malicious = true;
    }

    NodePopulation { nodes }
}

/// Topic identifier: rows come first, then columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicId(pub usize);

impl TopicId {
    pub fn row(r: usize) -> TopicId {
        TopicId(r)
    }
    pub fn col(c: usize, n_rows: usize) -> TopicId {
        TopicId(n_rows + c)
    }
}

/// Mesh overlay of one topic.
#[derive(Debug, Clone)]
pub struct TopicMesh {
    pub topic: TopicId,
    /// Subscriber node ids, sorted ascending.
    pub subscribers: Vec<usize>,
    /// Adjacency lists indexed like `subscribers`; entries are node ids, sorted.
    pub adjacency: Vec<Vec<usize>>,
    /// Node ids the producer pushes this topic's cells to.
    pub producer_peers: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Overlay {
    pub n_rows: usize,
    pub n_cols: usize,
    /// One mesh per topic id; empty topics are `None` and reported below.
    pub meshes: Vec<Option<TopicMesh>>,
    pub empty_topics: Vec<TopicId>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Builds one topic mesh: uniform pairing of under-degree subscribers until
/// no legal edge remains, then connectivity repair edges between components
/// (these may exceed the target degree by one), then producer attachment.
pub fn build_topic_mesh<R: Rng>(
    topic: TopicId,
    subscribers: Vec<usize>,
    net_degree: usize,
    rng: &mut R,
) -> Option<TopicMesh> {
    let n = subscribers.len();
    if n == 0 {
        return None;
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];

    let has_edge = |adj: &Vec<Vec<usize>>, a: usize, b: usize| adj[a].contains(&b);

    // Random near-regular pairing: shuffle the under-degree nodes and pair
    // them up; when adjacent pairing stalls, fall back to an exhaustive scan
    // for any remaining legal edge (the open set is tiny by then).
    loop {
        let mut open: Vec<usize> = (0..n).filter(|&i| adj[i].len() < net_degree).collect();
        if open.len() < 2 {
            break;
        }
        open.shuffle(rng);
        let mut progressed = false;
        for pair in open.chunks(2) {
            if let [a, b] = *pair {
                if adj[a].len() < net_degree && adj[b].len() < net_degree && !has_edge(&adj, a, b) {
                    adj[a].push(b);
                    adj[b].push(a);
                    progressed = true;
                }
            }
        }
        if !progressed {
            let mut any = false;
            'scan: for (i, &a) in open.iter().enumerate() {
                if adj[a].len() >= net_degree {
                    continue;
                }
                for &b in &open[i + 1..] {
                    if adj[b].len() < net_degree && !has_edge(&adj, a, b) {
                        adj[a].push(b);
                        adj[b].push(a);
                        any = true;
                        break 'scan;
                    }
                }
            }
            if !any {
                break;
            }
        }
    }

    // Edge-swap completion: leftover under-degree nodes can be mutually
    // adjacent; rewiring an unrelated edge (u,v) into (a,u),(b,v) fills both
    // deficits without changing anyone else's degree.
    'swap: loop {
        let open: Vec<usize> = (0..n).filter(|&i| adj[i].len() < net_degree).collect();
        if open.is_empty() {
            break;
        }
        let (a, b) = match open.len() {
            1 if net_degree - adj[open[0]].len() >= 2 => (open[0], open[0]),
            1 => break,
            _ => (open[0], open[1]),
        };
        for _ in 0..200 {
            let u = rng.gen_range(0..n);
            if adj[u].is_empty() {
                continue;
            }
            let v = adj[u][rng.gen_range(0..adj[u].len())];
            if u == a || u == b || v == a || v == b {
                continue;
            }
            if has_edge(&adj, a, u) || has_edge(&adj, b, v) || (a == b && u == v) {
                continue;
            }
            let pu = adj[u].iter().position(|&x| x == v).unwrap();
            adj[u].swap_remove(pu);
            let pv = adj[v].iter().position(|&x| x == u).unwrap();
            adj[v].swap_remove(pv);
            adj[a].push(u);
            adj[u].push(a);
            adj[b].push(v);
            adj[v].push(b);
            continue 'swap;
        }
        break;
    }

    // Connectivity repair: join components with one extra edge each.
    let mut dsu = DisjointSet::new(n);
    for (a, list) in adj.iter().enumerate() {
        for &b in list {
            dsu.union(a, b);
        }
    }
    loop {
        let mut roots: Vec<usize> = (0..n).map(|i| dsu.find(i)).collect();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() <= 1 {
            break;
        }
        let pick = |dsu: &mut DisjointSet, root: usize, adj: &Vec<Vec<usize>>, rng: &mut R| {
            let members: Vec<usize> = (0..n).filter(|&i| dsu.find(i) == root).collect();
            // Prefer under-degree members so repairs rarely exceed the target.
            let open: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| adj[i].len() < net_degree)
                .collect();
            let from = if open.is_empty() { &members } else { &open };
            from[rng.gen_range(0..from.len())]
        };
        let a = pick(&mut dsu, roots[0], &adj, rng);
        let b = pick(&mut dsu, roots[1], &adj, rng);
        adj[a].push(b);
        adj[b].push(a);
        dsu.union(a, b);
    }

    let mut adjacency: Vec<Vec<usize>> = adj
        .into_iter()
        .map(|list| list.into_iter().map(|slot| subscribers[slot]).collect())
        .collect();
    for list in &mut adjacency {
        list.sort_unstable();
    }

    let producer_peers: Vec<usize> = {
        let k = net_degree.min(n);
        let mut peers: Vec<usize> = sample(rng, n, k).into_iter().map(|i| subscribers[i]).collect();
        peers.sort_unstable();
        peers
    };

    Some(TopicMesh {
        topic,
        subscribers,
        adjacency,
        producer_peers,
    })
}

/// Builds all row and column topic meshes for a population.
pub fn build_overlay<R: Rng>(
    cfg: &ValidatedConfig,
    population: &NodePopulation,
    rng_topology: &mut R,
) -> Overlay {
    let n_rows = cfg.col_size_n;
    let n_cols = cfg.row_size_n;
    let mut row_subs: Vec<Vec<usize>> = vec![Vec::new(); n_rows];
    let mut col_subs: Vec<Vec<usize>> = vec![Vec::new(); n_cols];
    for node in &population.nodes {
        for &r in &node.custody_rows {
            row_subs[r].push(node.node_id);
        }
        for &c in &node.custody_cols {
            col_subs[c].push(node.node_id);
        }
    }

    let mut meshes = Vec::with_capacity(n_rows + n_cols);
    let mut empty_topics = Vec::new();
    for (r, subs) in row_subs.into_iter().enumerate() {
        let topic = TopicId::row(r);
        let mesh = build_topic_mesh(topic, subs, cfg.net_degree, rng_topology);
        if mesh.is_none() {
            empty_topics.push(topic);
        }
        meshes.push(mesh);
    }
    for (c, subs) in col_subs.into_iter().enumerate() {
        let topic = TopicId::col(c, n_rows);
        let mesh = build_topic_mesh(topic, subs, cfg.net_degree, rng_topology);
        if mesh.is_none() {
            empty_topics.push(topic);
        }
        meshes.push(mesh);
    }

    Overlay {
        n_rows,
        n_cols,
        meshes,
        empty_topics,
    }
}

impl Overlay {
    /// Line-oriented debug dump: one record per topic with subscribers and edges.
    pub fn dump<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for mesh in self.meshes.iter().flatten() {
            let kind = if mesh.topic.0 < self.n_rows { "row" } else { "col" };
            let index = if mesh.topic.0 < self.n_rows {
                mesh.topic.0
            } else {
                mesh.topic.0 - self.n_rows
            };
            write!(w, "topic {kind} {index} subscribers")?;
            for s in &mesh.subscribers {
                write!(w, " {s}")?;
            }
            writeln!(w)?;
            for (i, list) in mesh.adjacency.iter().enumerate() {
                let a = mesh.subscribers[i];
                for &b in list {
                    if a < b {
                        writeln!(w, "edge {kind} {index} {a} {b}")?;
                    }
                }
            }
            write!(w, "producer {kind} {index}")?;
            for p in &mesh.producer_peers {
                write!(w, " {p}")?;
            }
            writeln!(w)?;
        }
        for t in &self.empty_topics {
            let kind = if t.0 < self.n_rows { "row" } else { "col" };
            let index = if t.0 < self.n_rows { t.0 } else { t.0 - self.n_rows };
            writeln!(w, "topic {kind} {index} empty")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn validated(cfg: SimConfig) -> ValidatedConfig {
        cfg.validate().unwrap()
    }

    fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
        (
            ChaCha8Rng::seed_from_u64(seed),
            ChaCha8Rng::seed_from_u64(seed ^ 0xDEAD),
        )
    }

    #[test]
    fn class_split_matches_reference_config() {
        let cfg = validated(SimConfig {
            custody_row: 1,
            custody_col: 1,
            ..SimConfig::default()
        });
        let (mut rc, mut rm) = rngs(1);
        let pop = generate_population(&cfg, &mut rc, &mut rm);
        assert_eq!(pop.nodes.iter().filter(|n| n.class == 1).count(), 4000);
        assert_eq!(pop.nodes.iter().filter(|n| n.class == 2).count(), 1000);
        assert!(pop.nodes.iter().all(|n| !n.malicious));
    }

    #[test]
    fn custody_cardinality_exact() {
        let cfg = validated(SimConfig {
            nb_nodes: 50,
            custody_row: 3,
            custody_col: 5,
            vpn1: 2,
            vpn2: 4,
            ..SimConfig::default()
        });
        let (mut rc, mut rm) = rngs(2);
        let pop = generate_population(&cfg, &mut rc, &mut rm);
        for node in &pop.nodes {
            let vpn = if node.class == 1 { 2 } else { 4 };
            assert_eq!(node.validator_count(), vpn);
            for v in &node.validators {
                assert_eq!(v.rows.len(), 3);
                assert_eq!(v.cols.len(), 5);
                let mut rows = v.rows.clone();
                rows.dedup();
                assert_eq!(rows.len(), 3, "rows sampled with replacement");
            }
        }
    }

    #[test]
    fn unit_custody_covers_199_distinct_cells() {
        // One row plus one column overlap in exactly one cell.
        let cfg = validated(SimConfig {
            nb_nodes: 20,
            custody_row: 1,
            custody_col: 1,
            ..SimConfig::default()
        });
        let (mut rc, mut rm) = rngs(3);
        let pop = generate_population(&cfg, &mut rc, &mut rm);
        for node in &pop.nodes {
            let mut cells = std::collections::HashSet::new();
            for &r in &node.custody_rows {
                for c in 0..100 {
                    cells.insert((r, c));
                }
            }
            for &c in &node.custody_cols {
                for r in 0..100 {
                    cells.insert((r, c));
                }
            }
            assert_eq!(cells.len(), 199);
        }
    }

    #[test]
    fn malicious_count_exact() {
        let cfg = validated(SimConfig {
            nb_nodes: 200,
            custody_row: 1,
            custody_col: 1,
            malicious_rate: 0.25,
            ..SimConfig::default()
        });
        let (mut rc, mut rm) = rngs(4);
        let pop = generate_population(&cfg, &mut rc, &mut rm);
        assert_eq!(pop.nodes.iter().filter(|n| n.malicious).count(), 50);
    }

    fn degrees(mesh: &TopicMesh) -> Vec<usize> {
        mesh.adjacency.iter().map(|l| l.len()).collect()
    }

    fn is_connected(mesh: &TopicMesh) -> bool {
        let n = mesh.subscribers.len();
        if n <= 1 {
            return true;
        }
        let index: std::collections::HashMap<usize, usize> = mesh
            .subscribers
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &nb in &mesh.adjacency[i] {
                let j = index[&nb];
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    #[test]
    fn two_subscribers_single_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mesh = build_topic_mesh(TopicId(0), vec![3, 9], 8, &mut rng).unwrap();
        assert_eq!(degrees(&mesh), vec![1, 1]);
        assert_eq!(mesh.adjacency[0], vec![9]);
    }

    #[test]
    fn nine_subscribers_complete_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mesh = build_topic_mesh(TopicId(0), (0..9).collect(), 8, &mut rng).unwrap();
        assert!(degrees(&mesh).iter().all(|&d| d == 8));
        assert!(is_connected(&mesh));
    }

    #[test]
    fn large_mesh_degrees_bounded_and_connected() {
        // BFS connectivity oracle over many seeds.
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mesh = build_topic_mesh(TopicId(0), (0..50).collect(), 8, &mut rng).unwrap();
            for d in degrees(&mesh) {
                assert!(d == 8 || d == 9, "degree {d} out of range");
            }
            assert!(is_connected(&mesh), "seed {seed} produced disconnected mesh");
            // Symmetry.
            for (i, list) in mesh.adjacency.iter().enumerate() {
                let a = mesh.subscribers[i];
                for &b in list {
                    let j = mesh.subscribers.iter().position(|&x| x == b).unwrap();
                    assert!(mesh.adjacency[j].contains(&a));
                }
            }
        }
    }

    #[test]
    fn empty_topic_reported() {
        assert!(build_topic_mesh(TopicId(0), vec![], 8, &mut ChaCha8Rng::seed_from_u64(0)).is_none());
    }

    #[test]
    fn expected_row_subscribers_within_three_sigma() {
        // With custodyRow=1 per validator, P(subscribe to a given row) is
        // exactly 1-(1-1/nRows)^vpn; check the empirical mean over many seeds.
        for vpn in [1usize, 2] {
            let cfg = validated(SimConfig {
                nb_nodes: 200,
                row_size_n: 16,
                col_size_n: 16,
                row_size_k: 8,
                col_size_k: 8,
                custody_row: 1,
                custody_col: 1,
                vpn1: vpn,
                vpn2: vpn,
                ..SimConfig::default()
            });
            let p = 1.0 - (1.0 - 1.0 / 16.0_f64).powi(vpn as i32);
            let trials = 1000;
            let mut total = 0usize;
            for seed in 0..trials {
                let (mut rc, mut rm) = rngs(seed as u64);
                let pop = generate_population(&cfg, &mut rc, &mut rm);
                total += pop
                    .nodes
                    .iter()
                    .filter(|n| n.custody_rows.contains(&0))
                    .count();
            }
            let mean = total as f64 / trials as f64;
            let expected = 200.0 * p;
            let sigma = (200.0 * p * (1.0 - p) / trials as f64).sqrt();
            assert!(
                (mean - expected).abs() < 3.0 * sigma,
                "vpn={vpn}: mean {mean} vs expected {expected} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn overlay_deterministic() {
        let cfg = validated(SimConfig {
            nb_nodes: 100,
            row_size_n: 16,
            col_size_n: 16,
            row_size_k: 8,
            col_size_k: 8,
            custody_row: 2,
            custody_col: 2,
            ..SimConfig::default()
        });
        let build = || {
            let (mut rc, mut rm) = rngs(9);
            let pop = generate_population(&cfg, &mut rc, &mut rm);
            let mut rt = ChaCha8Rng::seed_from_u64(99);
            let overlay = build_overlay(&cfg, &pop, &mut rt);
            let mut buf = Vec::new();
            overlay.dump(&mut buf).unwrap();
            buf
        };
        assert_eq!(build(), build());
    }
}
