//! Static network model, linear sensitivity factors and contingency screening.
//!
//! Flows follow the withdrawal convention `f = Φ (d - B g)`: a positive
//! entry of the withdrawal vector is power leaving the network at that bus.
//! The PTDF column of the slack bus is identically zero.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Below this self-sensitivity margin `|1 - φ_kk|` a line is treated as a bridge.
pub const ISLANDING_TOL: f64 = 1e-6;

/// Static network description. All power quantities are per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub n_bus: usize,
    pub bus_names: Vec<Option<String>>,
    pub gen_bus: Vec<usize>,
    pub glb: Vec<f64>,
    pub gub0: Vec<f64>,
    pub c0: Vec<f64>,
    pub gamma: Vec<f64>,
    pub line_from: Vec<usize>,
    pub line_to: Vec<usize>,
    pub susceptance: Vec<f64>,
    pub flb: Vec<f64>,
    pub fub: Vec<f64>,
    pub load_bus: Vec<usize>,
    pub d0: Vec<f64>,
    pub slack_bus: usize,
    pub penalty: f64,
}

impl GridCase {
    pub fn n_gen(&self) -> usize {
        self.gen_bus.len()
    }

    pub fn n_line(&self) -> usize {
        self.line_from.len()
    }

    pub fn n_load(&self) -> usize {
        self.load_bus.len()
    }

    /// Base generator capacities `gub0 - glb`.
    pub fn base_capacity(&self) -> Vec<f64> {
        self.gub0.iter().zip(&self.glb).map(|(u, l)| u - l).collect()
    }

    /// Aggregate per-unit load demands onto buses.
    pub fn bus_demand(&self, d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bus];
        for (&bus, &v) in self.load_bus.iter().zip(d) {
            out[bus] += v;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCase(msg));
        if self.n_bus == 0 {
            return bad("case has no buses".into());
        }
        if self.slack_bus >= self.n_bus {
            return bad(format!("slack bus {} out of range", self.slack_bus));
        }
        if !(self.penalty > 0.0) {
            return bad("slack penalty must be positive".into());
        }
        let ng = self.n_gen();
        for (name, len) in [
            ("glb", self.glb.len()),
            ("gub", self.gub0.len()),
            ("cost", self.c0.len()),
            ("gamma", self.gamma.len()),
        ] {
            if len != ng {
                return bad(format!("generator field {name} has {len} entries, expected {ng}"));
            }
        }
        for i in 0..ng {
            if self.gen_bus[i] >= self.n_bus {
                return bad(format!("generator {i} references bus {}", self.gen_bus[i]));
            }
            if !(self.glb[i] <= self.gub0[i]) {
                return bad(format!("generator {i} has glb > gub"));
            }
            if !(self.gamma[i] >= 0.0) {
                return bad(format!("generator {i} has negative droop"));
            }
        }
        for l in 0..self.n_line() {
            if self.line_from[l] >= self.n_bus || self.line_to[l] >= self.n_bus {
                return bad(format!("line {l} references a missing bus"));
            }
            if self.line_from[l] == self.line_to[l] {
                return bad(format!("line {l} is a self-loop"));
            }
            if !(self.susceptance[l] > 0.0) {
                return bad(format!("line {l} has non-positive susceptance"));
            }
            if !(self.flb[l] <= 0.0 && self.fub[l] >= 0.0) {
                return bad(format!("line {l} flow limits do not span zero"));
            }
        }
        for (j, &b) in self.load_bus.iter().enumerate() {
            if b >= self.n_bus {
                return bad(format!("load {j} references bus {b}"));
            }
        }
        if self.d0.len() != self.n_load() {
            return bad("load demand count mismatch".into());
        }
        Ok(())
    }

    /// Breadth-first connectivity check of the bus graph, optionally ignoring one line.
    pub fn is_connected_without(&self, skip_line: Option<usize>) -> bool {
        let mut adj = vec![Vec::new(); self.n_bus];
        for l in 0..self.n_line() {
            if Some(l) == skip_line {
                continue;
            }
            adj[self.line_from[l]].push(self.line_to[l]);
            adj[self.line_to[l]].push(self.line_from[l]);
        }
        let mut seen = vec![false; self.n_bus];
        let mut queue = VecDeque::from([self.slack_bus]);
        seen[self.slack_bus] = true;
        while let Some(b) = queue.pop_front() {
            for &nb in &adj[b] {
                if !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CaseFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_case_file(&self) -> CaseFile {
        let limit = |v: f64| v.is_finite().then_some(v);
        CaseFile {
            base_mva: self.base_mva,
            buses: self
                .bus_names
                .iter()
                .map(|n| BusRecord { name: n.clone() })
                .collect(),
            generators: (0..self.n_gen())
                .map(|i| GeneratorRecord {
                    bus: self.gen_bus[i],
                    glb: self.glb[i],
                    gub: self.gub0[i],
                    cost: self.c0[i],
                    gamma: self.gamma[i],
                })
                .collect(),
            lines: (0..self.n_line())
                .map(|l| LineRecord {
                    from: self.line_from[l],
                    to: self.line_to[l],
                    susceptance: self.susceptance[l],
                    flb: limit(self.flb[l]),
                    fub: limit(self.fub[l]),
                })
                .collect(),
            loads: (0..self.n_load())
                .map(|j| LoadRecord {
                    bus: self.load_bus[j],
                    d0: self.d0[j],
                })
                .collect(),
            slack_bus: self.slack_bus,
            penalty_pi: self.penalty,
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(&self.to_case_file()).expect("case serializes");
        hex_digest(&json)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// On-disk case layout. Bus indices are zero-based positions in `buses`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub generators: Vec<GeneratorRecord>,
    pub lines: Vec<LineRecord>,
    pub loads: Vec<LoadRecord>,
    pub slack_bus: usize,
    #[serde(rename = "penalty_Pi")]
    pub penalty_pi: f64,
}

fn default_base_mva() -> f64 {
    100.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BusRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub bus: usize,
    pub glb: f64,
    pub gub: f64,
    pub cost: f64,
    pub gamma: f64,
}

/// A `null` limit means the line is unconstrained in that direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
    pub flb: Option<f64>,
    pub fub: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadRecord {
    pub bus: usize,
    pub d0: f64,
}

impl TryFrom<CaseFile> for GridCase {
    type Error = Error;

    fn try_from(f: CaseFile) -> Result<Self> {
        let case = GridCase {
            base_mva: f.base_mva,
            n_bus: f.buses.len(),
            bus_names: f.buses.into_iter().map(|b| b.name).collect(),
            gen_bus: f.generators.iter().map(|g| g.bus).collect(),
            glb: f.generators.iter().map(|g| g.glb).collect(),
            gub0: f.generators.iter().map(|g| g.gub).collect(),
            c0: f.generators.iter().map(|g| g.cost).collect(),
            gamma: f.generators.iter().map(|g| g.gamma).collect(),
            line_from: f.lines.iter().map(|l| l.from).collect(),
            line_to: f.lines.iter().map(|l| l.to).collect(),
            susceptance: f.lines.iter().map(|l| l.susceptance).collect(),
            flb: f
                .lines
                .iter()
                .map(|l| l.flb.unwrap_or(f64::NEG_INFINITY))
                .collect(),
            fub: f.lines.iter().map(|l| l.fub.unwrap_or(f64::INFINITY)).collect(),
            load_bus: f.loads.iter().map(|l| l.bus).collect(),
            d0: f.loads.iter().map(|l| l.d0).collect(),
            slack_bus: f.slack_bus,
            penalty: f.penalty_pi,
        };
        case.validate()?;
        Ok(case)
    }
}

/// PTDF, LODF and the generator incidence map.
#[derive(Debug, Clone)]
pub struct LinearFactors {
    /// |E| x |N|, flow per unit withdrawal.
    pub ptdf: DMatrix<f64>,
    /// |E| x |E|; column k redistributes the pre-outage flow of line k.
    /// Columns of islanding lines are zero.
    pub lodf: DMatrix<f64>,
    /// Per line: removing it splits the network.
    pub islanding: Vec<bool>,
    /// |N| x |G| generator-bus incidence.
    pub gen_incidence: DMatrix<f64>,
    /// `ptdf * gen_incidence`, |E| x |G|.
    pub gen_ptdf: DMatrix<f64>,
}

impl LinearFactors {
    pub fn new(case: &GridCase) -> Result<Self> {
        let ptdf = build_ptdf(case)?;
        let (lodf, islanding) = build_lodf(case, &ptdf);
        let mut gen_incidence = DMatrix::zeros(case.n_bus, case.n_gen());
        for (i, &b) in case.gen_bus.iter().enumerate() {
            gen_incidence[(b, i)] = 1.0;
        }
        let gen_ptdf = &ptdf * &gen_incidence;
        Ok(Self {
            ptdf,
            lodf,
            islanding,
            gen_incidence,
            gen_ptdf,
        })
    }
}

/// Build the withdrawal-convention PTDF `Φ` (|E| x |N|), slack column zero.
pub fn build_ptdf(case: &GridCase) -> Result<DMatrix<f64>> {
    let n = case.n_bus;
    let m = case.n_line();
    if case.slack_bus >= n {
        return Err(Error::InvalidCase("slack bus out of range".into()));
    }
    if !case.is_connected_without(None) {
        return Err(Error::DisconnectedNetwork);
    }
    // reduced index of every non-slack bus
    let reduced: Vec<Option<usize>> = {
        let mut next = 0;
        (0..n)
            .map(|b| {
                (b != case.slack_bus).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let nr = n - 1;
    let mut bbus = DMatrix::<f64>::zeros(nr, nr);
    for l in 0..m {
        let b = case.susceptance[l];
        let (i, j) = (reduced[case.line_from[l]], reduced[case.line_to[l]]);
        if let Some(i) = i {
            bbus[(i, i)] += b;
        }
        if let Some(j) = j {
            bbus[(j, j)] += b;
        }
        if let (Some(i), Some(j)) = (i, j) {
            bbus[(i, j)] -= b;
            bbus[(j, i)] -= b;
        }
    }
    // Branch rows diag(b) * A_r, then solve B_r X = (diag(b) A_r)^T.
    let mut bf = DMatrix::<f64>::zeros(nr, m);
    for l in 0..m {
        let b = case.susceptance[l];
        if let Some(i) = reduced[case.line_from[l]] {
            bf[(i, l)] += b;
        }
        if let Some(j) = reduced[case.line_to[l]] {
            bf[(j, l)] -= b;
        }
    }
    let x = bbus
        .lu()
        .solve(&bf)
        .ok_or(Error::DisconnectedNetwork)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DisconnectedNetwork);
    }
    // x is the transpose of the injection PTDF restricted to non-slack buses.
    let mut ptdf = DMatrix::<f64>::zeros(m, n);
    for b in 0..n {
        if let Some(r) = reduced[b] {
            for l in 0..m {
                ptdf[(l, b)] = -x[(r, l)];
            }
        }
    }
    Ok(ptdf)
}

/// Build the LODF (|E| x |E|) and flag islanding lines.
///
/// Column k is `φ_·k / (1 - φ_kk)` with diagonal `-1`, where `φ_lk` is the
/// flow on line l caused by a unit transfer from the sending to the
/// receiving bus of line k.
pub fn build_lodf(case: &GridCase, ptdf: &DMatrix<f64>) -> (DMatrix<f64>, Vec<bool>) {
    let m = case.n_line();
    let mut lodf = DMatrix::<f64>::zeros(m, m);
    let mut islanding = vec![false; m];
    for k in 0..m {
        let (s, r) = (case.line_from[k], case.line_to[k]);
        let transfer = |l: usize| ptdf[(l, r)] - ptdf[(l, s)];
        let denom = 1.0 - transfer(k);
        if denom.abs() < ISLANDING_TOL {
            islanding[k] = true;
            continue;
        }
        for l in 0..m {
            lodf[(l, k)] = if l == k { -1.0 } else { transfer(l) / denom };
        }
    }
    (lodf, islanding)
}

/// Admissible generator and line contingencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencySet {
    pub gen_contingencies: Vec<usize>,
    pub line_contingencies: Vec<usize>,
}

/// Exclude zero-capacity units, dispatchable loads and bridge lines.
pub fn screen_contingencies(case: &GridCase, islanding: &[bool]) -> ContingencySet {
    let gen_contingencies = (0..case.n_gen())
        .filter(|&i| case.gub0[i] - case.glb[i] > 0.0 && case.glb[i] >= 0.0)
        .collect();
    let line_contingencies = (0..case.n_line()).filter(|&l| !islanding[l]).collect();
    ContingencySet {
        gen_contingencies,
        line_contingencies,
    }
}

/// A case together with its factors and contingency sets.
#[derive(Debug, Clone)]
pub struct Network {
    pub case: GridCase,
    pub factors: LinearFactors,
    pub contingencies: ContingencySet,
}

impl Network {
    pub fn new(case: GridCase) -> Result<Self> {
        case.validate()?;
        let factors = LinearFactors::new(&case)?;
        let contingencies = screen_contingencies(&case, &factors.islanding);
        Ok(Self {
            case,
            factors,
            contingencies,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(GridCase::from_file(path)?)
    }

    pub fn n_gen_contingencies(&self) -> usize {
        self.contingencies.gen_contingencies.len()
    }

    /// Length of the network input vector `x`.
    pub fn input_dim(&self) -> usize {
        2 * self.case.n_gen() + self.case.n_load()
    }
}
