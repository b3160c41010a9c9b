//! Simulation configuration: validation, sweep expansion, and seed derivation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Complete parameterization of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Count of full nodes, excluding the block producer.
    pub nb_nodes: usize,
    /// Cells per row after erasure extension (row length).
    pub row_size_n: usize,
    /// Cells per column after erasure extension (column length).
    pub col_size_n: usize,
    /// Original cells per row; any `row_size_k` of `row_size_n` recover the row.
    pub row_size_k: usize,
    /// Original cells per column.
    pub col_size_k: usize,
    /// Rows of custody per validator (0 allowed for 1D mode).
    pub custody_row: usize,
    /// Columns of custody per validator (0 allowed for 1D mode).
    pub custody_col: usize,
    /// Bytes per cell.
    pub cell_size_bytes: usize,
    /// Fraction of nodes that are class 1 (small stakers).
    pub class1_ratio: f64,
    /// Validators per class-1 node.
    pub vpn1: usize,
    /// Validators per class-2 node.
    pub vpn2: usize,
    /// Per-topic mesh neighborhood size.
    pub net_degree: usize,
    /// Fraction of cells withheld by the producer.
    pub failure_rate: f64,
    /// Fraction of nodes that never forward.
    pub malicious_rate: f64,
    /// Producer uplink, megabits/second.
    pub bw_uplink_producer: f64,
    /// Class-1 uplink, megabits/second.
    pub bw_uplink1: f64,
    /// Class-2 uplink, megabits/second.
    pub bw_uplink2: f64,
    /// Fixed per-link propagation latency, milliseconds.
    pub latency_ms: u64,
    /// Simulation quantum, milliseconds.
    pub step_duration_ms: u64,
    /// Maximum simulated time per run, milliseconds.
    pub slot_duration_ms: u64,
    /// Master RNG seed.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            nb_nodes: 5000,
            row_size_n: 100,
            col_size_n: 100,
            row_size_k: 100,
            col_size_k: 100,
            custody_row: 2,
            custody_col: 2,
            cell_size_bytes: 512,
            class1_ratio: 0.8,
            vpn1: 1,
            vpn2: 1,
            net_degree: 8,
            failure_rate: 0.0,
            malicious_rate: 0.0,
            bw_uplink_producer: 200.0,
            bw_uplink1: 10.0,
            bw_uplink2: 200.0,
            latency_ms: 50,
            step_duration_ms: 50,
            slot_duration_ms: 12_000,
            seed: 42,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

/// A `SimConfig` whose invariants have all been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig(SimConfig);

impl std::ops::Deref for ValidatedConfig {
    type Target = SimConfig;
    fn deref(&self) -> &SimConfig {
        &self.0
    }
}

impl SimConfig {
    /// Checks every invariant; returns the config wrapped as validated.
    pub fn validate(self) -> Result<ValidatedConfig, ConfigError> {
        let fail = |m: &str| Err(ConfigError::InvalidConfig(m.to_string()));
        if self.row_size_k == 0 || self.row_size_k > self.row_size_n {
            return fail("rowSizeK must satisfy 0 < rowSizeK <= rowSizeN");
        }
        if self.col_size_k == 0 || self.col_size_k > self.col_size_n {
            return fail("colSizeK must satisfy 0 < colSizeK <= colSizeN");
        }
        // A row custody picks among col_size_n rows; a column custody among row_size_n columns.
        if self.custody_row > self.col_size_n {
            return fail("custodyRow must be <= colSizeN");
        }
        if self.custody_col > self.row_size_n {
            return fail("custodyCol must be <= rowSizeN");
        }
        if self.custody_row + self.custody_col == 0 {
            return fail("custodyRow + custodyCol must be > 0");
        }
        if self.nb_nodes == 0 {
            return fail("nbNodes must be > 0");
        }
        if !(0.0..=1.0).contains(&self.class1_ratio) {
            return fail("class1Ratio must be in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return fail("failureRate must be in [0,1]");
        }
        if !(0.0..=1.0).contains(&self.malicious_rate) {
            return fail("maliciousRate must be in [0,1]");
        }
        if self.vpn1 < 1 || self.vpn2 < 1 {
            return fail("vpn1 and vpn2 must be >= 1");
        }
        if self.net_degree < 1 {
            return fail("netDegree must be >= 1");
        }
        if self.bw_uplink_producer <= 0.0 || self.bw_uplink1 <= 0.0 || self.bw_uplink2 <= 0.0 {
            return fail("all uplink bandwidths must be > 0");
        }
        if self.cell_size_bytes == 0 {
            return fail("cellSizeBytes must be > 0");
        }
        if self.step_duration_ms == 0 {
            return fail("stepDurationMs must be > 0");
        }
        if self.slot_duration_ms < self.step_duration_ms {
            return fail("slotDurationMs must be >= stepDurationMs");
        }
        Ok(ValidatedConfig(self))
    }
}

/// Stochastic concerns that draw from independent sub-seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedLabel {
    Topology,
    Custody,
    Withholding,
    Malicious,
    RunOrder,
}

impl SeedLabel {
    fn tag(self) -> &'static [u8] {
        match self {
            SeedLabel::Topology => b"topology",
            SeedLabel::Custody => b"custody",
            SeedLabel::Withholding => b"withholding",
            SeedLabel::Malicious => b"malicious",
            SeedLabel::RunOrder => b"runOrder",
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Pure seed derivation: mixes the base seed with a label hash and an index.
pub fn derive_seed(base_seed: u64, label: SeedLabel, index: u64) -> u64 {
    let mut s = splitmix64(base_seed ^ fnv1a(label.tag()));
    s = splitmix64(s ^ index);
    s
}

/// Value lists per parameter; the cartesian product (times `runs_per_point`)
/// is the run set.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub nb_nodes: Vec<usize>,
    pub row_size_n: Vec<usize>,
    pub col_size_n: Vec<usize>,
    pub row_size_k: Vec<usize>,
    pub col_size_k: Vec<usize>,
    pub custody_row: Vec<usize>,
    pub custody_col: Vec<usize>,
    /// Diagonal custody sweep; mutually exclusive with custody_row/custody_col lists.
    pub custody_pairs: Option<Vec<(usize, usize)>>,
    pub cell_size_bytes: Vec<usize>,
    pub class1_ratio: Vec<f64>,
    pub vpn1: Vec<usize>,
    pub vpn2: Vec<usize>,
    pub net_degree: Vec<usize>,
    pub failure_rate: Vec<f64>,
    pub malicious_rate: Vec<f64>,
    pub bw_uplink_producer: Vec<f64>,
    pub bw_uplink1: Vec<f64>,
    pub bw_uplink2: Vec<f64>,
    pub latency_ms: Vec<u64>,
    pub step_duration_ms: Vec<u64>,
    pub slot_duration_ms: Vec<u64>,
    pub runs_per_point: usize,
    pub base_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let d = SimConfig::default();
        SweepSpec {
            nb_nodes: vec![d.nb_nodes],
            row_size_n: vec![d.row_size_n],
            col_size_n: vec![d.col_size_n],
            row_size_k: vec![d.row_size_k],
            col_size_k: vec![d.col_size_k],
            custody_row: vec![d.custody_row],
            custody_col: vec![d.custody_col],
            custody_pairs: None,
            cell_size_bytes: vec![d.cell_size_bytes],
            class1_ratio: vec![d.class1_ratio],
            vpn1: vec![d.vpn1],
            vpn2: vec![d.vpn2],
            net_degree: vec![d.net_degree],
            failure_rate: vec![d.failure_rate],
            malicious_rate: vec![d.malicious_rate],
            bw_uplink_producer: vec![d.bw_uplink_producer],
            bw_uplink1: vec![d.bw_uplink1],
            bw_uplink2: vec![d.bw_uplink2],
            latency_ms: vec![d.latency_ms],
            step_duration_ms: vec![d.step_duration_ms],
            slot_duration_ms: vec![d.slot_duration_ms],
            runs_per_point: 1,
            base_seed: d.seed,
        }
    }
}

/// One expanded run: stable id plus its validated configuration.
#[derive(Debug, Clone)]
pub struct RunPoint {
    pub run_id: u64,
    pub point_index: usize,
    pub repetition: usize,
    pub config: ValidatedConfig,
}

impl SweepSpec {
    /// Expands the cartesian product into an ordered run list.
    ///
    /// Ordering is lexicographic over the parameter lists in field
    /// declaration order, with the repetition index fastest. Each run's
    /// seed is derived from `base_seed` and its run id alone, so adding
    /// values to one dimension never perturbs seeds of other runs' labels.
    pub fn expand(&self) -> Result<Vec<RunPoint>, ConfigError> {
        if self.custody_pairs.is_some()
            && (self.custody_row.len() > 1 || self.custody_col.len() > 1)
        {
            return Err(ConfigError::InvalidConfig(
                "custodyPairs cannot be combined with custodyRow/custodyCol lists".into(),
            ));
        }
        let empty = |name: &str| ConfigError::InvalidConfig(format!("{name} list is empty"));
        macro_rules! check {
            ($f:ident, $name:literal) => {
                if self.$f.is_empty() {
                    return Err(empty($name));
                }
            };
        }
        check!(nb_nodes, "nbNodes");
        check!(row_size_n, "rowSizeN");
        check!(col_size_n, "colSizeN");
        check!(row_size_k, "rowSizeK");
        check!(col_size_k, "colSizeK");
        check!(cell_size_bytes, "cellSizeBytes");
        check!(class1_ratio, "class1Ratio");
        check!(vpn1, "vpn1");
        check!(vpn2, "vpn2");
        check!(net_degree, "netDegree");
        check!(failure_rate, "failureRate");
        check!(malicious_rate, "maliciousRate");
        check!(bw_uplink_producer, "bwUplinkProducer");
        check!(bw_uplink1, "bwUplink1");
        check!(bw_uplink2, "bwUplink2");
        check!(latency_ms, "latencyMs");
        check!(step_duration_ms, "stepDurationMs");
        check!(slot_duration_ms, "slotDurationMs");
        let pairs: Vec<(usize, usize)> = match &self.custody_pairs {
            Some(p) => {
                if p.is_empty() {
                    return Err(empty("custodyPairs"));
                }
                p.clone()
            }
            None => {
                if self.custody_row.is_empty() || self.custody_col.is_empty() {
                    return Err(empty("custodyRow/custodyCol"));
                }
                let mut v = Vec::new();
                for &r in &self.custody_row {
                    for &c in &self.custody_col {
                        v.push((r, c));
                    }
                }
                v
            }
        };
        if self.runs_per_point == 0 {
            return Err(ConfigError::InvalidConfig("runsPerPoint must be >= 1".into()));
        }

        // Lexicographic expansion: first dimension slowest, repetition fastest.
        let dims = [
            self.nb_nodes.len(),
            self.row_size_n.len(),
            self.col_size_n.len(),
            self.row_size_k.len(),
            self.col_size_k.len(),
            pairs.len(),
            self.cell_size_bytes.len(),
            self.class1_ratio.len(),
            self.vpn1.len(),
            self.vpn2.len(),
            self.net_degree.len(),
            self.failure_rate.len(),
            self.malicious_rate.len(),
            self.bw_uplink_producer.len(),
            self.bw_uplink1.len(),
            self.bw_uplink2.len(),
            self.latency_ms.len(),
            self.step_duration_ms.len(),
            self.slot_duration_ms.len(),
        ];
        let total_points: usize = dims.iter().product();
        let mut runs = Vec::with_capacity(total_points * self.runs_per_point);
        for point_index in 0..total_points {
            let mut ix = [0usize; 19];
            let mut rem = point_index;
            for d in (0..dims.len()).rev() {
                ix[d] = rem % dims[d];
                rem /= dims[d];
            }
            let (custody_row, custody_col) = pairs[ix[5]];
            for repetition in 0..self.runs_per_point {
                let run_id = (point_index * self.runs_per_point + repetition) as u64;
                let cfg = SimConfig {
                    nb_nodes: self.nb_nodes[ix[0]],
                    row_size_n: self.row_size_n[ix[1]],
                    col_size_n: self.col_size_n[ix[2]],
                    row_size_k: self.row_size_k[ix[3]],
                    col_size_k: self.col_size_k[ix[4]],
                    custody_row,
                    custody_col,
                    cell_size_bytes: self.cell_size_bytes[ix[6]],
                    class1_ratio: self.class1_ratio[ix[7]],
                    vpn1: self.vpn1[ix[8]],
                    vpn2: self.vpn2[ix[9]],
                    net_degree: self.net_degree[ix[10]],
                    failure_rate: self.failure_rate[ix[11]],
                    malicious_rate: self.malicious_rate[ix[12]],
                    bw_uplink_producer: self.bw_uplink_producer[ix[13]],
                    bw_uplink1: self.bw_uplink1[ix[14]],
                    bw_uplink2: self.bw_uplink2[ix[15]],
                    latency_ms: self.latency_ms[ix[16]],
                    step_duration_ms: self.step_duration_ms[ix[17]],
                    slot_duration_ms: self.slot_duration_ms[ix[18]],
                    seed: derive_seed(self.base_seed, SeedLabel::RunOrder, run_id),
                };
                runs.push(RunPoint {
                    run_id,
                    point_index,
                    repetition,
                    config: cfg.validate()?,
                });
            }
        }
        Ok(runs)
    }
}

fn parse_pairs(s: &str, line: usize) -> Result<Vec<(usize, usize)>, ConfigError> {
    // "(1,1),(2,2)" -> [(1,1),(2,2)]
    let mut pairs = Vec::new();
    let err = |msg: &str| ConfigError::ParseError { line, msg: msg.to_string() };
    let mut rest = s.trim();
    while !rest.is_empty() {
        if !rest.starts_with('(') {
            return Err(err("expected '(' in custodyPairs"));
        }
        let close = rest.find(')').ok_or_else(|| err("missing ')' in custodyPairs"))?;
        let inner = &rest[1..close];
        let mut it = inner.split(',').map(str::trim);
        let a = it.next().ok_or_else(|| err("empty pair"))?;
        let b = it.next().ok_or_else(|| err("pair needs two values"))?;
        if it.next().is_some() {
            return Err(err("pair has more than two values"));
        }
        let a: usize = a.parse().map_err(|_| err("pair value is not an integer"))?;
        let b: usize = b.parse().map_err(|_| err("pair value is not an integer"))?;
        pairs.push((a, b));
        rest = rest[close + 1..].trim_start();
        if let Some(stripped) = rest.strip_prefix(',') {
            rest = stripped.trim_start();
        } else if !rest.is_empty() {
            return Err(err("expected ',' between pairs"));
        }
    }
    Ok(pairs)
}

/// Parses the flat `key = value` config format into a sweep spec.
///
/// Every scalar key may also be given a comma-separated list, which declares
/// a sweep over that parameter. Unknown keys are an error.
pub fn parse_sweep(text: &str) -> Result<SweepSpec, ConfigError> {
    let mut spec = SweepSpec::default();
    let mut seen_custody_row = false;
    let mut seen_custody_col = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::ParseError {
            line: line_no,
            msg: "expected `key = value`".to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let perr = |msg: String| ConfigError::ParseError { line: line_no, msg };

        fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String> {
            v.split(',')
                .map(str::trim)
                .map(|t| t.parse::<T>().map_err(|_| format!("cannot parse `{t}`")))
                .collect()
        }

        match key {
            "nbNodes" => spec.nb_nodes = list(value).map_err(perr)?,
            "rowSizeN" => spec.row_size_n = list(value).map_err(perr)?,
            "colSizeN" => spec.col_size_n = list(value).map_err(perr)?,
            "rowSizeK" => spec.row_size_k = list(value).map_err(perr)?,
            "colSizeK" => spec.col_size_k = list(value).map_err(perr)?,
            "custodyRow" => {
                seen_custody_row = true;
                spec.custody_row = list(value).map_err(perr)?;
            }
            "custodyCol" => {
                seen_custody_col = true;
                spec.custody_col = list(value).map_err(perr)?;
            }
            "custodyPairs" => spec.custody_pairs = Some(parse_pairs(value, line_no)?),
            "cellSizeBytes" => spec.cell_size_bytes = list(value).map_err(perr)?,
            "class1Ratio" => spec.class1_ratio = list(value).map_err(perr)?,
            "vpn1" => spec.vpn1 = list(value).map_err(perr)?,
            "vpn2" => spec.vpn2 = list(value).map_err(perr)?,
            "netDegree" => spec.net_degree = list(value).map_err(perr)?,
            "failureRate" => spec.failure_rate = list(value).map_err(perr)?,
            "maliciousRate" => spec.malicious_rate = list(value).map_err(perr)?,
            "bwUplinkProducer" => spec.bw_uplink_producer = list(value).map_err(perr)?,
            "bwUplink1" => spec.bw_uplink1 = list(value).map_err(perr)?,
            "bwUplink2" => spec.bw_uplink2 = list(value).map_err(perr)?,
            "latencyMs" => spec.latency_ms = list(value).map_err(perr)?,
            "stepDurationMs" => spec.step_duration_ms = list(value).map_err(perr)?,
            "slotDurationMs" => spec.slot_duration_ms = list(value).map_err(perr)?,
            "runsPerPoint" => {
                spec.runs_per_point = value
                    .parse()
                    .map_err(|_| perr(format!("cannot parse `{value}`")))?
            }
            "seed" => {
                spec.base_seed = value
                    .parse()
                    .map_err(|_| perr(format!("cannot parse `{value}`")))?
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    }
    if spec.custody_pairs.is_some() && (seen_custody_row || seen_custody_col) {
        return Err(ConfigError::InvalidConfig(
            "custodyPairs cannot be combined with custodyRow/custodyCol lists".into(),
        ));
    }
    Ok(spec)
}

/// Reads and parses a sweep config file.
pub fn load_sweep(path: &Path) -> Result<SweepSpec, crate::Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| crate::Error::Io(format!("{}: {e}", path.display())))?;
    Ok(parse_sweep(&text)?)
}

impl fmt::Display for SimConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "nbNodes={} N={}x{} K={}/{} custody={}/{} cell={}B ratio={} vpn={}/{} deg={} fail={} mal={} bw={}/{}/{} lat={}ms step={}ms slot={}ms seed={}",
            self.nb_nodes,
            self.row_size_n,
            self.col_size_n,
            self.row_size_k,
            self.col_size_k,
            self.custody_row,
            self.custody_col,
            self.cell_size_bytes,
            self.class1_ratio,
            self.vpn1,
            self.vpn2,
            self.net_degree,
            self.failure_rate,
            self.malicious_rate,
            self.bw_uplink_producer,
            self.bw_uplink1,
            self.bw_uplink2,
            self.latency_ms,
            self.step_duration_ms,
            self.slot_duration_ms,
            self.seed,
        )
    }
}
