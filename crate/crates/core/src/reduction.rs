//! Reduction to a centralized problem over prescriptions.
//!
//! A prescription assigns to every agent a kernel from its observation grid to
//! its action grid. Given the common signal `x0`, a coordinator picks one
//! prescription; agent `i` then plays `lambda_i(y_i)`. The reduced cost of a
//! prescription at `x0` is
//! `M(x0, lambda) = sum_x P(x | x0) L(x, x0, lambda)` with
//! `L(x, x0, lambda) = sum_y prod_i W_i(y_i | x) c~(x, x0, y, lambda(y))`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::measure::{ensure_same, Kernel, Measure, MeasureKind, SUM_TOL};
use crate::model::{advance, saturating_pow, PolicyProfile, TeamProblem, DEFAULT_ENUMERATION_CAP};

/// One kernel `Y_i -> U_i` per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct PrescriptionAction {
    parts: Vec<Kernel>,
}

impl PrescriptionAction {
    pub fn new(problem: &TeamProblem, parts: Vec<Kernel>) -> Result<Self> {
        if parts.len() != problem.n_agents() {
            return Err(Error::Shape(format!(
                "prescription has {} parts for {} agents",
                parts.len(),
                problem.n_agents()
            )));
        }
        for (i, k) in parts.iter().enumerate() {
            ensure_same(problem.observation_space(i), k.source())?;
            ensure_same(problem.action_space(i), k.target())?;
            let mu = problem.channel(i).reference();
            for (y, row) in k.rows().iter().enumerate() {
                if mu.weight(y) > 0.0
                    && (row.kind() == MeasureKind::Signed || (row.total_mass() - 1.0).abs() > SUM_TOL)
                {
                    return Err(Error::InvalidMeasure {
                        space: k.source().atom(y).label.clone(),
                        reason: format!("agent {i}: prescription row is not a probability measure"),
                    });
                }
            }
        }
        Ok(PrescriptionAction { parts })
    }

    /// Deterministic prescription from per-agent tables `y -> u`.
    pub fn deterministic(problem: &TeamProblem, tables: &[Vec<usize>]) -> Result<Self> {
        if tables.len() != problem.n_agents() {
            return Err(Error::Shape(format!(
                "{} tables for {} agents",
                tables.len(),
                problem.n_agents()
            )));
        }
        let parts = tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Kernel::deterministic(
                    problem.observation_space(i).clone(),
                    problem.action_space(i).clone(),
                    t,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PrescriptionAction { parts })
    }

    pub fn parts(&self) -> &[Kernel] {
        &self.parts
    }

    pub fn part(&self, i: usize) -> &Kernel {
        &self.parts[i]
    }

    /// `t * other + (1 - t) * self`, agent by agent.
    pub fn mix(&self, other: &PrescriptionAction, t: f64) -> Result<PrescriptionAction> {
        let parts = self
            .parts
            .iter()
            .zip(&other.parts)
            .map(|(a, b)| a.mix(b, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(PrescriptionAction { parts })
    }

    /// Compact text form: agents separated by `|`, rows by `;`; a point mass
    /// prints as its action label, anything else as `[w0 w1 ...]`.
    pub fn describe(&self) -> String {
        self.parts
            .iter()
            .map(describe_kernel)
            .collect::<Vec<_>>()
            .join("|")
    }
}

fn describe_kernel(k: &Kernel) -> String {
    k.rows()
        .iter()
        .map(|row| match row.point_mass() {
            Some(u) => k.target().atom(u).label.clone(),
            None => {
                let w: Vec<String> = row.weights().iter().map(|v| format!("{v}")).collect();
                format!("[{}]", w.join(" "))
            }
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn supports(k: &Kernel) -> Vec<Vec<(usize, f64)>> {
    k.rows().iter().map(|r| r.support().collect()).collect()
}

/// Per-state data reused across many `L` and `M` evaluations.
struct Evaluator<'a> {
    problem: &'a TeamProblem,
    observation_weights: Vec<Vec<f64>>,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a TeamProblem) -> Self {
        let observation_weights = (0..problem.state_space().len())
            .map(|x| problem.observation_weights(x))
            .collect();
        Evaluator {
            problem,
            observation_weights,
        }
    }

    fn l(&self, x: usize, x0: usize, rows: &[&[Vec<(usize, f64)>]]) -> f64 {
        let p = self.problem;
        let n = p.n_agents();
        let sizes = p.observation_sizes();
        let mut ys = vec![0usize; n];
        let mut slices: Vec<&[(usize, f64)]> = vec![&[]; n];
        let mut total = 0.0;
        for (yv, &w) in self.observation_weights[x].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            p.decode_into(yv, sizes, &mut ys);
            for i in 0..n {
                slices[i] = &rows[i][ys[i]];
            }
            total += w * p.tilde_c_support(p.cost_base(x, x0, yv), &slices);
        }
        total
    }

    fn m(&self, x0: usize, rows: &[&[Vec<(usize, f64)>]]) -> f64 {
        let p = self.problem;
        let mass = p.common_marginal()[x0];
        (0..p.state_space().len())
            .filter(|&x| p.joint(x, x0) > 0.0)
            .map(|x| p.joint(x, x0) / mass * self.l(x, x0, rows))
            .sum()
    }
}

fn check_common(problem: &TeamProblem, x0: usize) -> Result<()> {
    if x0 >= problem.common_space().len() {
        return Err(Error::Shape(format!("common index {x0} out of range")));
    }
    if problem.common_marginal()[x0] <= 0.0 {
        return Err(Error::ZeroMass(problem.common_space().atom(x0).label.clone()));
    }
    Ok(())
}

/// `L(x, x0, lambda)`.
pub fn evaluate_l(problem: &TeamProblem, x: usize, x0: usize, lambda: &PrescriptionAction) -> Result<f64> {
    if x >= problem.state_space().len() || x0 >= problem.common_space().len() {
        return Err(Error::Shape("state index out of range".into()));
    }
    let owned: Vec<_> = lambda.parts.iter().map(supports).collect();
    let rows: Vec<&[_]> = owned.iter().map(Vec::as_slice).collect();
    Ok(Evaluator::new(problem).l(x, x0, &rows))
}

/// `M(x0, lambda) = E[L(x, x0, lambda) | x0]`; refuses atoms of zero mass.
pub fn evaluate_m(problem: &TeamProblem, x0: usize, lambda: &PrescriptionAction) -> Result<f64> {
    check_common(problem, x0)?;
    let owned: Vec<_> = lambda.parts.iter().map(supports).collect();
    let rows: Vec<&[_]> = owned.iter().map(Vec::as_slice).collect();
    Ok(Evaluator::new(problem).m(x0, &rows))
}

/// How prescription grids are generated.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum GridSpec {
    /// Every map `Y_i -> U_i`.
    #[default]
    Deterministic,
    /// Every kernel whose rows have weights in `{0, 1/r, ..., 1}`.
    Randomized(u32),
    /// Maps `y -> nearest action to a * y + b` over the listed slopes and
    /// offsets, using first coordinates. Duplicates are dropped.
    Affine { slopes: Vec<f64>, offsets: Vec<f64> },
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridSpec::Deterministic => write!(f, "deterministic"),
            GridSpec::Randomized(r) => write!(f, "randomized:{r}"),
            GridSpec::Affine { slopes, offsets } => {
                let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
                write!(f, "affine:{}/{}", join(slopes), join(offsets))
            }
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::parse("grid", format!("`{s}`: {m}"));
        let s = s.trim();
        if s == "deterministic" {
            return Ok(GridSpec::Deterministic);
        }
        if let Some(r) = s.strip_prefix("randomized:") {
            let r: u32 = r.parse().map_err(|_| bad("resolution must be a positive integer"))?;
            if r == 0 {
                return Err(bad("resolution must be a positive integer"));
            }
            return Ok(GridSpec::Randomized(r));
        }
        if let Some(rest) = s.strip_prefix("affine:") {
            let (a, b) = rest
                .split_once('/')
                .ok_or_else(|| bad("expected `affine:a1,a2,.../b1,b2,...`"))?;
            let list = |t: &str| {
                t.split(',')
                    .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
                    .collect::<Option<Vec<f64>>>()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| bad("slopes and offsets must be finite numbers"))
            };
            return Ok(GridSpec::Affine {
                slopes: list(a)?,
                offsets: list(b)?,
            });
        }
        Err(bad("expected `deterministic`, `randomized:r` or `affine:...`"))
    }
}

/// A product grid of prescriptions: element `k` picks, in mixed radix with
/// agent 0 most significant, one kernel per agent.
#[derive(Clone, Debug)]
pub struct LambdaGrid {
    spec: GridSpec,
    agents: Vec<Vec<Kernel>>,
    len: usize,
}

impl LambdaGrid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn agent_options(&self, i: usize) -> &[Kernel] {
        &self.agents[i]
    }

    pub fn indices(&self, k: usize) -> Vec<usize> {
        let mut out = vec![0; self.agents.len()];
        let mut code = k;
        for i in (0..self.agents.len()).rev() {
            out[i] = code % self.agents[i].len();
            code /= self.agents[i].len();
        }
        out
    }

    pub fn element(&self, k: usize) -> PrescriptionAction {
        let parts = self
            .indices(k)
            .iter()
            .enumerate()
            .map(|(i, &j)| self.agents[i][j].clone())
            .collect();
        PrescriptionAction { parts }
    }

    pub fn describe(&self, k: usize) -> String {
        self.indices(k)
            .iter()
            .enumerate()
            .map(|(i, &j)| describe_kernel(&self.agents[i][j]))
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Number of grid elements without building the grid.
pub fn grid_size(problem: &TeamProblem, spec: &GridSpec) -> u128 {
    let mut total: u128 = 1;
    for i in 0..problem.n_agents() {
        let ny = problem.observation_sizes()[i];
        let nu = problem.action_sizes()[i] as u128;
        let per = match spec {
            GridSpec::Deterministic => saturating_pow(nu, ny),
            GridSpec::Randomized(r) => saturating_pow(binomial(*r as u128 + nu - 1, nu - 1), ny),
            GridSpec::Affine { slopes, offsets } => (slopes.len() * offsets.len()) as u128,
        };
        total = total.saturating_mul(per);
    }
    total
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for j in 0..k {
        out = out.saturating_mul(n - j) / (j + 1);
    }
    out
}

/// All weight vectors of length `n` with entries in `{0, 1/r, ..., 1}`
/// summing to 1, in lexicographic order of the numerators (descending first
/// entry).
fn lattice_rows(n: usize, r: u32) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if n == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            rec(n - 1, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut raw = Vec::new();
    rec(n, r, &mut Vec::with_capacity(n), &mut raw);
    raw.into_iter()
        .map(|v| v.into_iter().map(|k| k as f64 / r as f64).collect())
        .collect()
}

/// Builds the prescription grid, refusing grids with more than `cap`
/// elements.
pub fn build_lambda_grid(problem: &TeamProblem, spec: &GridSpec, cap: u128) -> Result<LambdaGrid> {
    let count = grid_size(problem, spec);
    if count > cap {
        return Err(Error::CapExceeded {
            what: format!("prescription grid `{spec}`"),
            count,
            cap,
        });
    }
    let mut agents = Vec::with_capacity(problem.n_agents());
    for i in 0..problem.n_agents() {
        let ys = problem.observation_space(i);
        let us = problem.action_space(i);
        let (ny, nu) = (ys.len(), us.len());
        let options = match spec {
            GridSpec::Deterministic => {
                let mut table = vec![0usize; ny];
                let mut out = Vec::new();
                loop {
                    out.push(Kernel::deterministic(ys.clone(), us.clone(), &table)?);
                    if !advance(&mut table, nu) {
                        break out;
                    }
                }
            }
            GridSpec::Randomized(r) => {
                let rows: Vec<Measure> = lattice_rows(nu, *r)
                    .into_iter()
                    .map(|w| Measure::new(us.clone(), w, MeasureKind::Probability))
                    .collect::<Result<_>>()?;
                let mut pick = vec![0usize; ny];
                let mut out = Vec::new();
                loop {
                    let chosen = pick.iter().map(|&j| rows[j].clone()).collect();
                    out.push(Kernel::new(ys.clone(), us.clone(), chosen)?);
                    if !advance(&mut pick, rows.len()) {
                        break out;
                    }
                }
            }
            GridSpec::Affine { slopes, offsets } => {
                let ycoords = coords_of(ys)?;
                let ucoords = coords_of(us)?;
                let mut out: Vec<Kernel> = Vec::new();
                for &a in slopes {
                    for &b in offsets {
                        let table: Vec<usize> = ycoords
                            .iter()
                            .map(|&y| nearest(&ucoords, a * y + b))
                            .collect();
                        let k = Kernel::deterministic(ys.clone(), us.clone(), &table)?;
                        if !out.contains(&k) {
                            out.push(k);
                        }
                    }
                }
                out
            }
        };
        agents.push(options);
    }
    let len = agents.iter().map(Vec::len).product();
    Ok(LambdaGrid {
        spec: spec.clone(),
        agents,
        len,
    })
}

fn coords_of(space: &crate::measure::Space) -> Result<Vec<f64>> {
    (0..space.len())
        .map(|k| {
            space.coord(k).ok_or_else(|| {
                Error::Rejected(format!("affine grid needs coordinates on `{}`", space.label()))
            })
        })
        .collect()
}

/// Index of the closest coordinate; ties go to the lower index.
fn nearest(coords: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (k, &c) in coords.iter().enumerate() {
        if (c - v).abs() < (coords[best] - v).abs() {
            best = k;
        }
    }
    best
}

/// The centralized problem: `M(x0, lambda)` for every common atom of
/// positive mass and every grid element.
#[derive(Clone, Debug)]
pub struct CentralizedProblem {
    pub grid: LambdaGrid,
    /// One row per common atom; `None` for atoms of zero mass.
    pub values: Vec<Option<Vec<f64>>>,
    pub common_marginal: Vec<f64>,
    pub common_labels: Vec<String>,
}

pub fn reduce(problem: &TeamProblem, grid: &LambdaGrid) -> Result<CentralizedProblem> {
    for (i, opts) in grid.agents.iter().enumerate() {
        if opts.is_empty() {
            return Err(Error::Empty(format!("grid has no options for agent {i}")));
        }
        ensure_same(problem.observation_space(i), opts[0].source())?;
        ensure_same(problem.action_space(i), opts[0].target())?;
    }
    if grid.agents.len() != problem.n_agents() {
        return Err(Error::Shape("grid agent count differs from the problem".into()));
    }
    let eval = Evaluator::new(problem);
    let option_rows: Vec<Vec<Vec<Vec<(usize, f64)>>>> = grid
        .agents
        .iter()
        .map(|opts| opts.iter().map(supports).collect())
        .collect();
    let mut values = Vec::with_capacity(problem.common_space().len());
    for x0 in 0..problem.common_space().len() {
        if problem.common_marginal()[x0] <= 0.0 {
            values.push(None);
            continue;
        }
        let mut row = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let rows: Vec<&[Vec<(usize, f64)>]> = grid
                .indices(k)
                .iter()
                .enumerate()
                .map(|(i, &j)| option_rows[i][j].as_slice())
                .collect();
            row.push(eval.m(x0, &rows));
        }
        values.push(Some(row));
    }
    Ok(CentralizedProblem {
        grid: grid.clone(),
        values,
        common_marginal: problem.common_marginal().to_vec(),
        common_labels: problem
            .common_space()
            .atoms()
            .iter()
            .map(|a| a.label.clone())
            .collect(),
    })
}

/// Chosen grid element per common atom; `None` where the atom has zero mass.
pub type Prescription = Vec<Option<usize>>;

#[derive(Clone, Debug, PartialEq)]
pub struct CentralizedSolution {
    pub prescription: Prescription,
    pub value: f64,
}

/// Pointwise minimization of `M(x0, .)`; ties go to the lowest grid index.
pub fn solve_centralized(reduced: &CentralizedProblem) -> Result<CentralizedSolution> {
    if reduced.grid.is_empty() {
        return Err(Error::Empty("empty prescription grid".into()));
    }
    let mut choice = Vec::with_capacity(reduced.values.len());
    let mut value = 0.0;
    for (x0, row) in reduced.values.iter().enumerate() {
        match row {
            None => choice.push(None),
            Some(vals) => {
                let mut best = 0;
                for (k, &v) in vals.iter().enumerate() {
                    if v < vals[best] {
                        best = k;
                    }
                }
                value += reduced.common_marginal[x0] * vals[best];
                choice.push(Some(best));
            }
        }
    }
    Ok(CentralizedSolution {
        prescription: choice,
        value,
    })
}

/// Turns a coordinator rule into a team policy:
/// `gamma_i(x0, y) = lambda^{x0}_i(y)`. Atoms of zero mass, which carry no
/// weight, use grid element 0.
pub fn lift(problem: &TeamProblem, grid: &LambdaGrid, choice: &[Option<usize>]) -> Result<PolicyProfile> {
    let nx0 = problem.common_space().len();
    if choice.len() != nx0 {
        return Err(Error::Shape(format!(
            "rule covers {} common atoms, problem has {nx0}",
            choice.len()
        )));
    }
    let mut picked = Vec::with_capacity(nx0);
    for (x0, c) in choice.iter().enumerate() {
        let k = match c {
            Some(k) if *k < grid.len() => *k,
            Some(k) => return Err(Error::Shape(format!("grid index {k} out of range"))),
            None if problem.common_marginal()[x0] > 0.0 => {
                return Err(Error::MissingAssignment(problem.common_space().atom(x0).label.clone()))
            }
            None => 0,
        };
        picked.push(grid.element(k));
    }
    lift_actions(problem, &picked)
}

/// Lifts one prescription per common atom.
pub fn lift_actions(problem: &TeamProblem, rule: &[PrescriptionAction]) -> Result<PolicyProfile> {
    let nx0 = problem.common_space().len();
    if rule.len() != nx0 {
        return Err(Error::Shape(format!(
            "rule covers {} common atoms, problem has {nx0}",
            rule.len()
        )));
    }
    let kernels = (0..problem.n_agents())
        .map(|i| {
            let rows = (0..nx0)
                .flat_map(|x0| rule[x0].parts[i].rows().iter().cloned())
                .collect();
            Kernel::new(problem.policy_source(i).clone(), problem.action_space(i).clone(), rows)
        })
        .collect::<Result<Vec<_>>>()?;
    PolicyProfile::new(problem, kernels)
}

/// Builds the grid, reduces, solves and lifts.
pub fn solve_common_information(problem: &TeamProblem, spec: &GridSpec, cap: u128) -> Result<CiSolution> {
    let grid = build_lambda_grid(problem, spec, cap)?;
    let reduced = reduce(problem, &grid)?;
    let solution = solve_centralized(&reduced)?;
    let profile = lift(problem, &grid, &solution.prescription)?;
    Ok(CiSolution {
        reduced,
        solution,
        profile,
    })
}

#[derive(Clone, Debug)]
pub struct CiSolution {
    pub reduced: CentralizedProblem,
    pub solution: CentralizedSolution,
    pub profile: PolicyProfile,
}

/// Default grid cap, shared with profile enumeration.
pub const DEFAULT_GRID_CAP: u128 = DEFAULT_ENUMERATION_CAP;
