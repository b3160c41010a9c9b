//! Discrete-time dissemination engine.
//!
//! Each step runs a fixed phase order: deliver in-flight cells, enqueue
//! forwards for newly held cells, reconstruct custodied rows/columns, drain
//! send queues under token-bucket uplink budgets, refill budgets and advance
//! the clock. A run is strictly single threaded and deterministic.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::{new_released_block, BlockAvailability};
use crate::config::{derive_seed, SeedLabel, ValidatedConfig};
use crate::metrics::{
    CustodyWeights, RunMetrics, StepSample, TerminationReason,
};
use crate::overlay::{build_overlay, generate_population, NodePopulation, Overlay};

/// Node id of the producer-colocated full node; its custody is seeded at
/// t=0 and excluded from delivery accounting.
pub const COLOCATED_NODE: usize = 0;

const PRODUCER_SRC: u32 = u32::MAX;

/// Bits added to an uplink's token bucket per step.
pub fn step_budget_bits(uplink_mbps: f64, step_duration_ms: u64) -> u64 {
    (uplink_mbps * 1000.0 * step_duration_ms as f64).round() as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepReport {
    /// Cells newly written into some node's availability this step.
    pub deliveries: u64,
    /// Transmissions dispatched this step.
    pub transmissions: u64,
    pub bits_sent: u64,
}

#[derive(Debug, Clone, Copy)]
struct Flight {
    cell: u32,
    dest: u32,
    src: u32,
}

/// Per-topic mesh view of one node: neighbor ids plus a sent-or-known bitmap
/// per neighbor over the topic's cell positions.
struct TopicSub {
    neighbors: Vec<u32>,
    words_per_neighbor: usize,
    masks: Vec<u64>,
}

impl TopicSub {
    #[inline]
    fn mask_get(&self, neighbor_slot: usize, pos: usize) -> bool {
        let w = neighbor_slot * self.words_per_neighbor + pos / 64;
        self.masks[w] >> (pos % 64) & 1 == 1
    }

    #[inline]
    fn mask_set(&mut self, neighbor_slot: usize, pos: usize) {
        let w = neighbor_slot * self.words_per_neighbor + pos / 64;
        self.masks[w] |= 1 << (pos % 64);
    }

    #[inline]
    fn find(&self, node: u32) -> Option<usize> {
        self.neighbors.binary_search(&node).ok()
    }
}

struct NodeState {
    avail: BlockAvailability,
    row_held: Vec<u16>,
    col_held: Vec<u16>,
    subs: Vec<TopicSub>,
    /// topic id -> index into subs, usize::MAX when not subscribed.
    topic_slot: Vec<usize>,
    queue: VecDeque<(u32, u32)>,
    front_neighbor: usize,
    pending: Vec<(u32, u32)>,
    bucket_bits: u64,
    step_refill: u64,
    bucket_cap: u64,
    malicious: bool,
    custody_total: u64,
    custody_delivered: u64,
}

struct TopicQueue {
    topic: u32,
    peers: Vec<u32>,
    cells: Vec<u32>,
    cell_idx: usize,
    peer_idx: usize,
}

struct Producer {
    queues: Vec<TopicQueue>,
    rr: usize,
    remaining: u64,
    bucket_bits: u64,
    step_refill: u64,
    bucket_cap: u64,
    sent: HashMap<u32, Vec<u64>>,
}

pub struct World {
    cfg: ValidatedConfig,
    population: NodePopulation,
    overlay: Overlay,
    ground_truth: BlockAvailability,
    weights: CustodyWeights,
    nodes: Vec<NodeState>,
    producer: Producer,
    /// Ring of flights indexed by arrival step offset from the current step.
    in_flight: VecDeque<Vec<Flight>>,
    flights_in_air: u64,
    now_ms: u64,
    step_index: u64,
    delivered: u64,
    theoretical_total: u64,
    cell_bits: u64,
    n_rows: usize,
    n_cols: usize,
    audit: bool,
    violations: Vec<String>,
}

impl World {
    /// Builds a world from a validated config, deriving all randomness from
    /// the config seed.
    pub fn new(cfg: &ValidatedConfig) -> World {
        let seed = cfg.seed;
        let mut rng_withholding =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedLabel::Withholding, 0));
        let mut rng_custody = ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedLabel::Custody, 0));
        let mut rng_malicious =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedLabel::Malicious, 0));
        let mut rng_topology = ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedLabel::Topology, 0));

        let ground_truth = new_released_block(cfg, &mut rng_withholding);
        let population = generate_population(cfg, &mut rng_custody, &mut rng_malicious);
        let overlay = build_overlay(cfg, &population, &mut rng_topology);
        World::with_parts(cfg, population, overlay, ground_truth)
    }

    /// Builds a world from pre-constructed parts; lets tests wire explicit
    /// topologies and withholding patterns.
    pub fn with_parts(
        cfg: &ValidatedConfig,
        population: NodePopulation,
        overlay: Overlay,
        ground_truth: BlockAvailability,
    ) -> World {
        assert_eq!(population.nodes.len(), cfg.nb_nodes);
        let n_rows = cfg.col_size_n;
        let n_cols = cfg.row_size_n;
        let n_topics = n_rows + n_cols;
        let cell_bits = cfg.cell_size_bytes as u64 * 8;
        let weights = CustodyWeights::new(cfg, &population);

        let mut nodes: Vec<NodeState> = population
            .nodes
            .iter()
            .map(|spec| {
                let step_refill = step_budget_bits(spec.uplink_mbps, cfg.step_duration_ms);
                NodeState {
                    avail: BlockAvailability::new(n_rows, n_cols),
                    row_held: vec![0; n_rows],
                    col_held: vec![0; n_cols],
                    subs: Vec::new(),
                    topic_slot: vec![usize::MAX; n_topics],
                    queue: VecDeque::new(),
                    front_neighbor: 0,
                    pending: Vec::new(),
                    bucket_bits: step_refill,
                    step_refill,
                    bucket_cap: step_budget_bits(spec.uplink_mbps, cfg.slot_duration_ms),
                    malicious: spec.malicious,
                    custody_total: weights.node_total(spec.node_id, n_rows, n_cols),
                    custody_delivered: 0,
                }
            })
            .collect();

        // Wire per-node topic views from the meshes.
        for mesh in overlay.meshes.iter().flatten() {
            let topic = mesh.topic.0;
            let positions = if topic < n_rows { n_cols } else { n_rows };
            let words = positions.div_ceil(64);
            for (slot, &node_id) in mesh.subscribers.iter().enumerate() {
                let neighbors: Vec<u32> = mesh.adjacency[slot].iter().map(|&x| x as u32).collect();
                let masks = vec![0u64; neighbors.len() * words];
                let node = &mut nodes[node_id];
                node.topic_slot[topic] = node.subs.len();
                node.subs.push(TopicSub {
                    neighbors,
                    words_per_neighbor: words,
                    masks,
                });
            }
        }

        // Producer queues: every released cell of each topic toward the
        // producer's attached subscribers, bandwidth permitting.
        let mut queues = Vec::new();
        let mut remaining = 0u64;
        for mesh in overlay.meshes.iter().flatten() {
            let topic = mesh.topic.0;
            let cells: Vec<u32> = if topic < n_rows {
                (0..n_cols)
                    .filter(|&c| ground_truth.has(topic, c))
                    .map(|c| c as u32)
                    .collect()
            } else {
                let col = topic - n_rows;
                (0..n_rows)
                    .filter(|&r| ground_truth.has(r, col))
                    .map(|r| r as u32)
                    .collect()
            };
            if cells.is_empty() || mesh.producer_peers.is_empty() {
                continue;
            }
            remaining += (cells.len() * mesh.producer_peers.len()) as u64;
            queues.push(TopicQueue {
                topic: topic as u32,
                peers: mesh.producer_peers.iter().map(|&p| p as u32).collect(),
                cells,
                cell_idx: 0,
                peer_idx: 0,
            });
        }
        let producer_refill = step_budget_bits(cfg.bw_uplink_producer, cfg.step_duration_ms);
        let producer = Producer {
            queues,
            rr: 0,
            remaining,
            bucket_bits: producer_refill,
            step_refill: producer_refill,
            bucket_cap: step_budget_bits(cfg.bw_uplink_producer, cfg.slot_duration_ms),
            sent: HashMap::new(),
        };

        let latency_steps = (cfg.latency_ms.div_ceil(cfg.step_duration_ms) as usize).max(1);
        // Ring slot i holds flights arriving i+1 steps from now; sends land
        // in the back slot, deliveries pop the front.
        let mut in_flight = VecDeque::with_capacity(latency_steps);
        for _ in 0..latency_steps {
            in_flight.push_back(Vec::new());
        }

        let mut world = World {
            theoretical_total: crate::metrics::theoretical_total(cfg),
            cfg: cfg.clone(),
            population,
            overlay,
            ground_truth,
            weights,
            nodes,
            producer,
            in_flight,
            flights_in_air: 0,

            now_ms: 0,
            step_index: 0,
            delivered: 0,
            cell_bits,
            n_rows,
            n_cols,
            audit: false,
            violations: Vec::new(),
        };

        // Seed the colocated node with its released custody.
        let spec = world.population.nodes[COLOCATED_NODE].clone();
        let mut seeded = Vec::new();
        for &r in &spec.custody_rows {
            for c in 0..world.n_cols {
                if world.ground_truth.has(r, c) {
                    seeded.push((r, c));
                }
            }
        }
        for &c in &spec.custody_cols {
            for r in 0..world.n_rows {
                if world.ground_truth.has(r, c) {
                    seeded.push((r, c));
                }
            }
        }
        for (r, c) in seeded {
            world.write_cell(COLOCATED_NODE, r, c);
        }
        world.flush_pending(COLOCATED_NODE);
        world
    }

    pub fn config(&self) -> &ValidatedConfig {
        &self.cfg
    }

    pub fn population(&self) -> &NodePopulation {
        &self.population
    }

    pub fn overlay(&self) -> &Overlay {
        &self.overlay
    }

    pub fn ground_truth(&self) -> &BlockAvailability {
        &self.ground_truth
    }

    pub fn node_has(&self, node: usize, row: usize, col: usize) -> bool {
        self.nodes[node].avail.has(row, col)
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn missing(&self) -> u64 {
        self.theoretical_total - self.delivered
    }

    pub fn theoretical_total(&self) -> u64 {
        self.theoretical_total
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    /// Enables per-step invariant auditing; violations are collected, not fatal.
    pub fn set_audit(&mut self, enable: bool) {
        self.audit = enable;
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// True when nothing is in flight and every send queue is empty.
    pub fn quiescent(&self) -> bool {
        self.flights_in_air == 0
            && self.producer.remaining == 0
            && self
                .nodes
                .iter()
                .all(|n| n.queue.is_empty() && n.pending.is_empty())
    }

    fn cell_of(&self, topic: u32, pos: u32) -> (usize, usize) {
        let topic = topic as usize;
        if topic < self.n_rows {
            (topic, pos as usize)
        } else {
            (pos as usize, topic - self.n_rows)
        }
    }

    /// Sets a cell in a node's availability, updating line counts, delivery
    /// accounting, and forward queues. Returns true when newly set.
    fn write_cell(&mut self, node_id: usize, row: usize, col: usize) -> bool {
        let malicious = self.nodes[node_id].malicious;
        let node = &mut self.nodes[node_id];
        if !node.avail.set(row, col) {
            return false;
        }
        node.row_held[row] += 1;
        node.col_held[col] += 1;
        let weight = self.weights.cell_weight(node_id, row, col);
        if weight > 0 {
            node.custody_delivered += weight;
            if node_id != COLOCATED_NODE {
                self.delivered += weight;
            }
        }
        if !malicious {
            let row_topic = row;
            let col_topic = self.n_rows + col;
            if node.topic_slot[row_topic] != usize::MAX {
                node.pending.push((row_topic as u32, col as u32));
            }
            if node.topic_slot[col_topic] != usize::MAX {
                node.pending.push((col_topic as u32, row as u32));
            }
        }
        true
    }

    /// Marks `peer` as known to hold the cell in every shared topic mesh.
    fn mark_known(&mut self, node_id: usize, row: usize, col: usize, peer: u32) {
        let row_topic = row;
        let col_topic = self.n_rows + col;
        let node = &mut self.nodes[node_id];
        for (topic, pos) in [(row_topic, col), (col_topic, row)] {
            let slot = node.topic_slot[topic];
            if slot != usize::MAX {
                let sub = &mut node.subs[slot];
                if let Some(ns) = sub.find(peer) {
                    sub.mask_set(ns, pos);
                }
            }
        }
    }

    /// Moves this step's pending forwards into the FIFO queue in ascending
    /// (topic, cell) order.
    fn flush_pending(&mut self, node_id: usize) {
        let node = &mut self.nodes[node_id];
        if node.pending.is_empty() {
            return;
        }
        node.pending.sort_unstable();
        for &(topic, pos) in &node.pending {
            node.queue.push_back((topic, pos));
        }
        node.pending.clear();
    }

    /// Node-side custody-scoped reconstruction to fixpoint.
    fn reconstruct_node(&mut self, node_id: usize) {
        let row_k = self.cfg.row_size_k as u16;
        let col_k = self.cfg.col_size_k as u16;
        let n_rows = self.n_rows;
        let n_cols = self.n_cols;
        let custody_rows = self.population.nodes[node_id].custody_rows.clone();
        let custody_cols = self.population.nodes[node_id].custody_cols.clone();
        loop {
            let mut changed = false;
            for &r in &custody_rows {
                let held = self.nodes[node_id].row_held[r];
                if held >= row_k && (held as usize) < n_cols {
                    for c in 0..n_cols {
                        self.write_cell(node_id, r, c);
                    }
                    changed = true;
                }
            }
            for &c in &custody_cols {
                let held = self.nodes[node_id].col_held[c];
                if held >= col_k && (held as usize) < n_rows {
                    for r in 0..n_rows {
                        self.write_cell(node_id, r, c);
                    }
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Runs one simulation step; see the module docs for the phase order.
    pub fn step(&mut self) -> StepReport {
        let mut report = StepReport::default();

        // Phase 1+2: deliver arrivals, record known-held, enqueue forwards.
        let arrivals = self.in_flight.pop_front().unwrap_or_default();
        self.in_flight.push_back(Vec::new());
        self.flights_in_air -= arrivals.len() as u64;
        let mut touched: Vec<usize> = Vec::new();
        for f in &arrivals {
            let node_id = f.dest as usize;
            let (row, col) = (f.cell as usize / self.n_cols, f.cell as usize % self.n_cols);
            if f.src != PRODUCER_SRC {
                self.mark_known(node_id, row, col, f.src);
            }
            if self.write_cell(node_id, row, col) {
                report.deliveries += 1;
                touched.push(node_id);
            }
        }

        // Phase 3: custody-scoped reconstruction for touched nodes.
        touched.sort_unstable();
        touched.dedup();
        for node_id in touched {
            self.reconstruct_node(node_id);
        }

        // Phase 4: drain send queues under budget.
        let mut new_flights: Vec<Flight> = Vec::new();
        self.drain_producer(&mut report, &mut new_flights);
        for node_id in 0..self.nodes.len() {
            self.flush_pending(node_id);
            self.drain_node(node_id, &mut report, &mut new_flights);
        }
        self.flights_in_air += new_flights.len() as u64;
        *self.in_flight.back_mut().unwrap() = new_flights;

        // Phase 5: refill budgets, advance the clock.
        for node in &mut self.nodes {
            node.bucket_bits = (node.bucket_bits + node.step_refill).min(node.bucket_cap);
        }
        self.producer.bucket_bits =
            (self.producer.bucket_bits + self.producer.step_refill).min(self.producer.bucket_cap);
        self.now_ms += self.cfg.step_duration_ms;
        self.step_index += 1;

        if self.audit {
            self.audit_step(&report);
        }
        report
    }

    fn drain_producer(&mut self, report: &mut StepReport, new_flights: &mut Vec<Flight>) {
        let cell_bits = self.cell_bits;
        let n_rows = self.n_rows;
        let p = &mut self.producer;
        if p.remaining == 0 {
            return;
        }
        let n_topics = p.queues.len();
        let words = (n_rows * self.n_cols).div_ceil(64);
        let mut idle_topics = 0usize;
        while p.remaining > 0 && idle_topics < n_topics {
            let qi = p.rr % n_topics;
            let q = &mut p.queues[qi];
            let topic = q.topic;
            let mut sent = false;
            while q.cell_idx < q.cells.len() {
                let pos = q.cells[q.cell_idx];
                let dest = q.peers[q.peer_idx];
                let (row, col) = if (topic as usize) < n_rows {
                    (topic as usize, pos as usize)
                } else {
                    (pos as usize, topic as usize - n_rows)
                };
                let cell = (row * self.n_cols + col) as u32;
                let mask = p.sent.entry(dest).or_insert_with(|| vec![0u64; words]);
                let already = mask[cell as usize / 64] >> (cell % 64) & 1 == 1;
                if already {
                    // Duplicate across row/column topics; skip for free.
                    q.peer_idx += 1;
                    if q.peer_idx == q.peers.len() {
                        q.peer_idx = 0;
                        q.cell_idx += 1;
                    }
                    p.remaining -= 1;
                    continue;
                }
                if p.bucket_bits < cell_bits {
                    return;
                }
                p.bucket_bits -= cell_bits;
                mask[cell as usize / 64] |= 1 << (cell % 64);
                q.peer_idx += 1;
                if q.peer_idx == q.peers.len() {
                    q.peer_idx = 0;
                    q.cell_idx += 1;
                }
                p.remaining -= 1;
                new_flights.push(Flight {
                    cell,
                    dest,
                    src: PRODUCER_SRC,
                });
                report.transmissions += 1;
                report.bits_sent += cell_bits;
                sent = true;
                break;
            }
            if sent {
                idle_topics = 0;
            } else {
                idle_topics += 1;
            }
            p.rr = (p.rr + 1) % n_topics;
        }
    }

    fn drain_node(&mut self, node_id: usize, report: &mut StepReport, new_flights: &mut Vec<Flight>) {
        let cell_bits = self.cell_bits;
        let n_rows = self.n_rows;
        let bucket_before = self.nodes[node_id].bucket_bits;
        let mut bits_sent_here = 0u64;
        'queue: while let Some(&(topic, pos)) = self.nodes[node_id].queue.front() {
            let (row, col) = self.cell_of(topic, pos);
            let cell = (row * self.n_cols + col) as u32;
            debug_assert!(self.nodes[node_id].avail.has(row, col));
            // The same cell also lives in the orthogonal topic; a neighbor
            // shared between both meshes must be served at most once.
            let other_topic = if (topic as usize) < n_rows {
                n_rows + col
            } else {
                row
            };
            let other_pos = if (topic as usize) < n_rows { row } else { col };
            loop {
                let node = &self.nodes[node_id];
                let slot = node.topic_slot[topic as usize];
                debug_assert_ne!(slot, usize::MAX);
                let sub = &node.subs[slot];
                let ni = node.front_neighbor;
                if ni >= sub.neighbors.len() {
                    let node = &mut self.nodes[node_id];
                    node.queue.pop_front();
                    node.front_neighbor = 0;
                    continue 'queue;
                }
                let peer = sub.neighbors[ni];
                let mut suppressed = sub.mask_get(ni, pos as usize);
                let other_slot = node.topic_slot[other_topic];
                let mut other_ns = None;
                if !suppressed && other_slot != usize::MAX {
                    let other_sub = &node.subs[other_slot];
                    if let Some(ons) = other_sub.find(peer) {
                        other_ns = Some(ons);
                        if other_sub.mask_get(ons, other_pos) {
                            suppressed = true;
                        }
                    }
                }
                if suppressed {
                    let node = &mut self.nodes[node_id];
                    let slot = node.topic_slot[topic as usize];
                    node.subs[slot].mask_set(ni, pos as usize);
                    node.front_neighbor += 1;
                    continue;
                }
                if self.nodes[node_id].bucket_bits < cell_bits {
                    break 'queue;
                }
                let node = &mut self.nodes[node_id];
                node.bucket_bits -= cell_bits;
                let slot = node.topic_slot[topic as usize];
                node.subs[slot].mask_set(ni, pos as usize);
                if let Some(ons) = other_ns {
                    let os = node.topic_slot[other_topic];
                    node.subs[os].mask_set(ons, other_pos);
                }
                node.front_neighbor += 1;
                new_flights.push(Flight {
                    cell,
                    dest: peer,
                    src: node_id as u32,
                });
                report.transmissions += 1;
                report.bits_sent += cell_bits;
                bits_sent_here += cell_bits;
            }
        }
        if self.audit {
            if bits_sent_here > bucket_before {
                self.violations.push(format!(
                    "node {node_id} sent {bits_sent_here} bits with only {bucket_before} budgeted"
                ));
            }
            if self.nodes[node_id].malicious && bits_sent_here > 0 {
                self.violations
                    .push(format!("malicious node {node_id} transmitted"));
            }
        }
    }

    fn audit_step(&mut self, _report: &StepReport) {
        // Conservation: the running counter must equal a from-scratch recount.
        let recount = crate::metrics::count_delivered(
            &self.cfg,
            &self.weights,
            COLOCATED_NODE,
            |node, r, c| self.nodes[node].avail.has(r, c),
        );
        if recount != self.delivered {
            self.violations.push(format!(
                "step {}: delivered counter {} != recount {recount}",
                self.step_index, self.delivered
            ));
        }
        if self.delivered > self.theoretical_total {
            self.violations.push(format!(
                "step {}: delivered exceeds theoretical total",
                self.step_index
            ));
        }
        // Causality: queued entries must be held by their owner.
        for (id, node) in self.nodes.iter().enumerate() {
            for &(topic, pos) in &node.queue {
                let (r, c) = self.cell_of(topic, pos);
                if !node.avail.has(r, c) {
                    self.violations
                        .push(format!("node {id} queues cell it does not hold"));
                }
            }
        }
    }

    /// Iterates steps until completion, timeout, or quiescent stall.
    pub fn run_to_completion(&mut self) -> RunMetrics {
        let start = Instant::now();
        let mut series = Vec::new();
        let mut record = |w: &World| {
            let counted = w.nodes.len().saturating_sub(1);
            let ready = w
                .nodes
                .iter()
                .enumerate()
                .filter(|(id, n)| *id != COLOCATED_NODE && n.custody_delivered >= n.custody_total)
                .count();
            series.push(StepSample {
                step: w.step_index,
                time_ms: w.now_ms,
                missing_samples: w.missing(),
                delivered_samples: w.delivered(),
                ready_fraction: if counted == 0 {
                    1.0
                } else {
                    ready as f64 / counted as f64
                },
            });
        };
        record(self);
        let termination = loop {
            if self.missing() == 0 {
                break TerminationReason::Complete;
            }
            if self.now_ms >= self.cfg.slot_duration_ms {
                break TerminationReason::Timeout;
            }
            self.step();
            record(self);
            if self.missing() > 0 && self.quiescent() {
                break TerminationReason::Stalled;
            }
        };
        RunMetrics {
            series,
            theoretical_total: self.theoretical_total,
            termination,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        }
    }
}

/// Convenience: build a world from the config and run it.
pub fn run(cfg: &ValidatedConfig) -> RunMetrics {
    World::new(cfg).run_to_completion()
}
