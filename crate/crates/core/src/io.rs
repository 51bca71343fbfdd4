//! Problem files, CSV tables and run manifests.
//!
//! Problem files are TOML with an explicit `format_version`. Unknown keys are
//! rejected. Spaces list their atoms (optionally with coordinates) or give a
//! one-dimensional grid; channels are density tables against a reference
//! measure or one of the named families; the cost is a table or a family.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::measure::{Atom, FiniteSpace, Measure, Space};
use crate::model::{CostSpec, ObservationChannel, TeamProblem, TeamSpec, DEFAULT_ENUMERATION_CAP};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDecl {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDecl {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridDecl>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub compact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLawDecl {
    /// `rows[x][x0]`.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChannelDecl {
    /// `density[y][x] = q(y, x)`; the reference defaults to uniform.
    Table {
        density: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<Vec<f64>>,
    },
    /// `y = x` with probability `1 - crossover`; needs `|Y| = |X|`.
    BinarySymmetric { crossover: f64 },
    /// Discretized Gaussian noise on first coordinates.
    AdditiveNoise { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDecl {
    pub observation: SpaceDecl,
    pub action: SpaceDecl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelDecl>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_cap")]
    pub enumeration_cap: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    /// Default prescription grid, e.g. `deterministic` or `randomized:4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// Total-variation modulus of the channel before quantization; recorded,
    /// not checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_tv_modulus: Option<f64>,
}

fn default_cap() -> u64 {
    DEFAULT_ENUMERATION_CAP as u64
}

fn default_tolerance() -> f64 {
    1e-12
}

impl Default for Metadata {
    fn default() -> Self {
        Metadata {
            name: None,
            enumeration_cap: default_cap(),
            tolerance: default_tolerance(),
            seed: 0,
            grid: None,
            channel_tv_modulus: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub format_version: u32,
    #[serde(default)]
    pub metadata: Metadata,
    pub state: SpaceDecl,
    pub common: SpaceDecl,
    pub joint_law: JointLawDecl,
    pub agents: Vec<AgentDecl>,
    pub cost: CostSpec,
}

/// A parsed, validated problem with its file-level settings.
#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub problem: TeamProblem,
    pub metadata: Metadata,
}

fn build_space(decl: &SpaceDecl, at: &str) -> Result<Space> {
    let atoms = match (&decl.atoms, &decl.grid) {
        (Some(_), Some(_)) => return Err(Error::parse(at, "give either `atoms` or `grid`, not both")),
        (None, None) => return Err(Error::parse(at, "missing `atoms` or `grid`")),
        (None, Some(g)) => {
            if decl.coords.is_some() {
                return Err(Error::parse(at, "`coords` cannot accompany `grid`"));
            }
            FiniteSpace::grid(decl.label.clone(), g.start, g.stop, g.points)
                .map_err(|e| Error::parse(at, e.to_string()))?
                .atoms()
                .to_vec()
        }
        (Some(labels), None) => match &decl.coords {
            None => labels.iter().map(Atom::new).collect(),
            Some(c) if c.len() == labels.len() => labels
                .iter()
                .zip(c)
                .map(|(l, v)| Atom::with_coords(l.clone(), v.clone()))
                .collect(),
            Some(c) => {
                return Err(Error::parse(
                    at,
                    format!("{} coordinate vectors for {} atoms", c.len(), labels.len()),
                ))
            }
        },
    };
    FiniteSpace::new_compact(decl.label.clone(), atoms, decl.compact).map_err(|e| Error::parse(at, e.to_string()))
}

fn space_decl(space: &Space) -> SpaceDecl {
    let atoms = space.atoms();
    let coords = atoms
        .iter()
        .map(|a| a.coords.clone())
        .collect::<Option<Vec<_>>>();
    SpaceDecl {
        label: space.label().to_string(),
        atoms: Some(atoms.iter().map(|a| a.label.clone()).collect()),
        coords,
        grid: None,
        compact: space.is_compact(),
    }
}

impl ProblemFile {
    /// Builds and validates the problem. Validation failures keep their
    /// report so callers can print every violation.
    pub fn to_problem(&self) -> Result<TeamProblem> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                "format_version",
                format!("unsupported version {} (expected {FORMAT_VERSION})", self.format_version),
            ));
        }
        let state = build_space(&self.state, "state")?;
        let common = build_space(&self.common, "common")?;
        if self.agents.is_empty() {
            return Err(Error::parse("agents", "at least one agent is required"));
        }
        let rows = &self.joint_law.rows;
        if rows.len() != state.len() || rows.iter().any(|r| r.len() != common.len()) {
            return Err(Error::parse(
                "joint_law.rows",
                format!("expected {} rows of {} entries", state.len(), common.len()),
            ));
        }
        let joint_law = rows.iter().flatten().copied().collect();
        let mut observations = Vec::new();
        let mut actions = Vec::new();
        let mut channels = Vec::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let at = format!("agents[{i}]");
            let y = build_space(&agent.observation, &format!("{at}.observation"))?;
            let u = build_space(&agent.action, &format!("{at}.action"))?;
            let ch_at = format!("{at}.channel");
            let decl = agent
                .channel
                .as_ref()
                .ok_or_else(|| Error::parse(&at, format!("agent {i} has no channel block")))?;
            let channel = match decl {
                ChannelDecl::Table { density, reference } => {
                    if density.len() != y.len() || density.iter().any(|r| r.len() != state.len()) {
                        return Err(Error::parse(
                            &ch_at,
                            format!("density needs {} rows of {} entries", y.len(), state.len()),
                        ));
                    }
                    let mu = match reference {
                        None => Measure::uniform(y.clone()),
                        Some(w) => Measure::probability(y.clone(), w.clone())
                            .map_err(|e| Error::parse(format!("{ch_at}.reference"), e.to_string()))?,
                    };
                    ObservationChannel::new(i, mu, density.iter().flatten().copied().collect(), state.len())
                }
                ChannelDecl::BinarySymmetric { crossover } => {
                    ObservationChannel::symmetric(i, &y, state.len(), *crossover)
                }
                ChannelDecl::AdditiveNoise { sigma } => ObservationChannel::additive_noise(i, &y, &state, *sigma),
            }
            .map_err(|e| Error::parse(&ch_at, e.to_string()))?;
            observations.push(y);
            actions.push(u);
            channels.push(channel);
        }
        TeamProblem::new(TeamSpec {
            state,
            common,
            observations,
            actions,
            joint_law,
            channels,
            cost: self.cost.clone(),
        })
        .map_err(|e| match e {
            Error::Shape(m) | Error::Rejected(m) => Error::parse("cost", m),
            other => other,
        })
    }

    /// File form of a problem: explicit atoms, density tables, and the
    /// problem's cost specification.
    pub fn from_problem(problem: &TeamProblem, metadata: Metadata) -> Self {
        let nx0 = problem.common_space().len();
        let rows = problem
            .joint_weights()
            .chunks(nx0)
            .map(<[f64]>::to_vec)
            .collect();
        let nx = problem.state_space().len();
        let agents = (0..problem.n_agents())
            .map(|i| {
                let ch = problem.channel(i);
                AgentDecl {
                    observation: space_decl(problem.observation_space(i)),
                    action: space_decl(problem.action_space(i)),
                    channel: Some(ChannelDecl::Table {
                        density: ch.densities().chunks(nx).map(<[f64]>::to_vec).collect(),
                        reference: Some(ch.reference().weights().to_vec()),
                    }),
                }
            })
            .collect();
        ProblemFile {
            format_version: FORMAT_VERSION,
            metadata,
            state: space_decl(problem.state_space()),
            common: space_decl(problem.common_space()),
            joint_law: JointLawDecl { rows },
            agents,
            cost: problem.cost_spec().clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::parse("serialize", e.to_string()))
    }
}

pub fn parse_problem_str(text: &str, origin: &str) -> Result<LoadedProblem> {
    let file: ProblemFile = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string().trim_end()))?;
    let problem = file.to_problem()?;
    Ok(LoadedProblem {
        problem,
        metadata: file.metadata,
    })
}

pub fn parse_problem(path: &Path) -> Result<LoadedProblem> {
    let text = fs::read_to_string(path)?;
    parse_problem_str(&text, &path.display().to_string())
}

pub fn write_problem(path: &Path, problem: &TeamProblem, metadata: Metadata) -> Result<()> {
    fs::write(path, ProblemFile::from_problem(problem, metadata).to_toml()?)?;
    Ok(())
}

/// Lossless text form of a double: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(path.display().to_string(), format!("{other:?}")),
    }
}

/// Writes rows of string cells under a fixed header.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// The reduced-cost table: one row per common atom, one column per grid
/// element; the header carries the grid descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct MTable {
    pub descriptors: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MTable {
    pub fn from_reduced(cp: &crate::reduction::CentralizedProblem) -> Self {
        let descriptors = (0..cp.grid.len()).map(|k| cp.grid.describe(k)).collect();
        let rows = cp
            .values
            .iter()
            .zip(&cp.common_labels)
            .filter_map(|(v, l)| v.as_ref().map(|v| (l.clone(), v.clone())))
            .collect();
        MTable { descriptors, rows }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header: Vec<String> = std::iter::once("x0".to_string())
            .chain(self.descriptors.iter().cloned())
            .collect();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(l, v)| std::iter::once(l.clone()).chain(v.iter().map(|x| fmt_f64(*x))).collect())
            .collect();
        write_csv(path, &header, &rows)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
        if header.get(0) != Some("x0") {
            return Err(Error::parse(path.display().to_string(), "first column must be `x0`"));
        }
        let descriptors: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let at = format!("{}: row {}", path.display(), line + 2);
            let label = rec.get(0).ok_or_else(|| Error::parse(&at, "empty row"))?.to_string();
            let values = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| Error::parse(&at, format!("bad number `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != descriptors.len() {
                return Err(Error::parse(&at, "row length differs from header"));
            }
            rows.push((label, values));
        }
        Ok(MTable { descriptors, rows })
    }
}

/// Everything needed to repeat a CLI run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputRecord>,
    /// Effective settings including defaults.
    pub options: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse("manifest", e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}
