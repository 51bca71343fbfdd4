//! The static team model with common information.
//!
//! A [`TeamProblem`] holds the state and common-information grids, one
//! observation grid and one action grid per agent, the joint law of
//! `(x, x0)`, the observation channels `W_i(dy|x) = q_i(y, x) mu_i(dy)` and a
//! nonnegative cost `c(x, x0, y, u)`. Joint observation and action indices use
//! mixed radix with agent 0 most significant.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{ensure_same, FiniteSpace, Kernel, Measure, MeasureKind, Space, SUM_TOL};

/// Default cap on enumerated deterministic profiles and grid sizes.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationChannel {
    agent: usize,
    reference: Measure,
    /// `q_i(y, x)` stored row-major as `[y * |X| + x]`.
    density: Vec<f64>,
    n_states: usize,
}

impl ObservationChannel {
    pub fn new(agent: usize, reference: Measure, density: Vec<f64>, n_states: usize) -> Result<Self> {
        if reference.kind() != MeasureKind::Probability {
            return Err(Error::Rejected(format!(
                "channel {agent}: reference measure must be a probability measure"
            )));
        }
        if density.len() != reference.len() * n_states {
            return Err(Error::Shape(format!(
                "channel {agent}: density needs {} x {} entries, got {}",
                reference.len(),
                n_states,
                density.len()
            )));
        }
        Ok(ObservationChannel {
            agent,
            reference,
            density,
            n_states,
        })
    }

    /// Builds `q_i = W_i / mu_i` from conditional laws `law[x][y] = W_i(y|x)`.
    pub fn from_conditional(agent: usize, reference: Measure, law: &[Vec<f64>]) -> Result<Self> {
        let ny = reference.len();
        let nx = law.len();
        let mut density = vec![0.0; ny * nx];
        for (x, row) in law.iter().enumerate() {
            if row.len() != ny {
                return Err(Error::Shape(format!(
                    "channel {agent}: law row {x} has {} entries, expected {ny}",
                    row.len()
                )));
            }
            for (y, &w) in row.iter().enumerate() {
                let m = reference.weight(y);
                if m == 0.0 {
                    if w != 0.0 {
                        return Err(Error::Rejected(format!(
                            "channel {agent}: W(y{y}|x{x}) > 0 where the reference has no mass"
                        )));
                    }
                    continue;
                }
                density[y * nx + x] = w / m;
            }
        }
        Self::new(agent, reference, density, nx)
    }

    /// `y = x` with probability `1 - p`, otherwise uniform over the other
    /// atoms. Needs `|Y| = |X|`; the reference is uniform.
    pub fn symmetric(agent: usize, observation: &Space, n_states: usize, p: f64) -> Result<Self> {
        let ny = observation.len();
        if ny != n_states {
            return Err(Error::Shape(format!(
                "channel {agent}: symmetric channel needs |Y| = |X| ({ny} vs {n_states})"
            )));
        }
        if !(0.0..=1.0).contains(&p) || (ny == 1 && p != 0.0) {
            return Err(Error::Rejected(format!("channel {agent}: crossover {p} out of range")));
        }
        let law: Vec<Vec<f64>> = (0..n_states)
            .map(|x| {
                (0..ny)
                    .map(|y| if y == x { 1.0 - p } else { p / (ny - 1) as f64 })
                    .collect()
            })
            .collect();
        Self::from_conditional(agent, Measure::uniform(observation.clone()), &law)
    }

    /// Discretized additive Gaussian noise: `W(y|x)` proportional to
    /// `exp(-(y - x)^2 / (2 sigma^2))` over the observation grid, using
    /// first coordinates. The reference is uniform.
    pub fn additive_noise(agent: usize, observation: &Space, state: &Space, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Rejected(format!("channel {agent}: sigma must be positive")));
        }
        let coord = |s: &Space, i: usize| {
            s.coord(i).ok_or_else(|| {
                Error::Rejected(format!(
                    "channel {agent}: additive noise needs coordinates on `{}`",
                    s.label()
                ))
            })
        };
        let mut law = Vec::with_capacity(state.len());
        for x in 0..state.len() {
            let cx = coord(state, x)?;
            let mut row = Vec::with_capacity(observation.len());
            for y in 0..observation.len() {
                let d = coord(observation, y)? - cx;
                row.push((-d * d / (2.0 * sigma * sigma)).exp());
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= total);
            law.push(row);
        }
        Self::from_conditional(agent, Measure::uniform(observation.clone()), &law)
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn reference(&self) -> &Measure {
        &self.reference
    }

    pub fn density(&self, y: usize, x: usize) -> f64 {
        self.density[y * self.n_states + x]
    }

    pub fn densities(&self) -> &[f64] {
        &self.density
    }

    /// `W_i({y} | x) = q_i(y, x) mu_i(y)`.
    pub fn law(&self, y: usize, x: usize) -> f64 {
        self.density(y, x) * self.reference.weight(y)
    }
}

/// Cost specification: a dense table or a parametric family.
///
/// Families read the first coordinate of state and action atoms (quadratic)
/// or compare atom labels (mismatch).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    /// Row-major over `(x, x0, y_1..y_N, u_1..u_N)`.
    Table { values: Vec<f64> },
    /// `team (sum u_i - x)^2 + sum tracking_i (u_i - x)^2 + sum effort_i u_i^2
    ///  + coupling sum_{i<j} (u_i - u_j)^2`.
    Quadratic {
        #[serde(default)]
        team: f64,
        #[serde(default)]
        tracking: Vec<f64>,
        #[serde(default)]
        effort: Vec<f64>,
        #[serde(default)]
        coupling: f64,
    },
    /// `sum state_i 1{u_i != x} + pairwise sum_{i<j} 1{u_i != u_j}`, comparing
    /// atom labels.
    Mismatch {
        state: Vec<f64>,
        #[serde(default)]
        pairwise: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    JointLawNegative { x: String, x0: String, weight: f64 },
    JointLawNormalization { total: f64 },
    ChannelNegative { agent: usize, y: String, x: String, value: f64 },
    ChannelNormalization { agent: usize, x: String, total: f64 },
    CostNegative { count: usize, first: String, value: f64 },
    CostNonFinite { count: usize, first: String },
    Shape(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::JointLawNegative { x, x0, weight } => {
                write!(f, "joint law: negative weight {weight} at (x={x}, x0={x0})")
            }
            Violation::JointLawNormalization { total } => {
                write!(f, "joint law: total mass {total} is not 1")
            }
            Violation::ChannelNegative { agent, y, x, value } => {
                write!(f, "channel {agent}: negative density {value} at (y={y}, x={x})")
            }
            Violation::ChannelNormalization { agent, x, total } => write!(
                f,
                "channel {agent}: sum_y q(y,x) mu(y) = {total} at x={x}, expected 1"
            ),
            Violation::CostNegative { count, first, value } => write!(
                f,
                "cost: {count} negative entries, first {value} at {first}"
            ),
            Violation::CostNonFinite { count, first } => {
                write!(f, "cost: {count} non-finite entries, first at {first}")
            }
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok: no violations");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Inputs for [`TeamProblem::build`].
#[derive(Clone, Debug)]
pub struct TeamSpec {
    pub state: Space,
    pub common: Space,
    pub observations: Vec<Space>,
    pub actions: Vec<Space>,
    /// `P(x, x0)` row-major as `[x * |X0| + x0]`.
    pub joint_law: Vec<f64>,
    pub channels: Vec<ObservationChannel>,
    pub cost: CostSpec,
}

#[derive(Clone, Debug)]
pub struct TeamProblem {
    state: Space,
    common: Space,
    observations: Vec<Space>,
    actions: Vec<Space>,
    joint: Vec<f64>,
    channels: Vec<ObservationChannel>,
    cost: CostSpec,
    // derived
    state_marginal: Vec<f64>,
    common_marginal: Vec<f64>,
    policy_sources: Vec<Space>,
    y_sizes: Vec<usize>,
    u_sizes: Vec<usize>,
    ny: usize,
    nu: usize,
    cost_table: Vec<f64>,
}

impl TeamProblem {
    /// Builds and validates; any violation is an error.
    pub fn new(spec: TeamSpec) -> Result<Self> {
        let p = Self::build(spec)?;
        let report = p.validate();
        if report.is_clean() {
            Ok(p)
        } else {
            Err(Error::Validation(report))
        }
    }

    /// Builds after shape checks only; see [`TeamProblem::validate`].
    pub fn build(spec: TeamSpec) -> Result<Self> {
        let TeamSpec {
            state,
            common,
            observations,
            actions,
            joint_law,
            channels,
            cost,
        } = spec;
        let n = observations.len();
        if n == 0 {
            return Err(Error::Empty("team with no agents".into()));
        }
        if actions.len() != n {
            return Err(Error::Shape(format!(
                "{n} observation spaces but {} action spaces",
                actions.len()
            )));
        }
        if channels.len() != n {
            return Err(Error::Shape(format!(
                "{n} agents but {} observation channels",
                channels.len()
            )));
        }
        let (nx, nx0) = (state.len(), common.len());
        if joint_law.len() != nx * nx0 {
            return Err(Error::Shape(format!(
                "joint law needs {} entries, got {}",
                nx * nx0,
                joint_law.len()
            )));
        }
        for (i, ch) in channels.iter().enumerate() {
            if ch.agent != i {
                return Err(Error::Shape(format!(
                    "channel in slot {i} is declared for agent {}",
                    ch.agent
                )));
            }
            ensure_same(&observations[i], ch.reference.space())?;
            if ch.n_states != nx {
                return Err(Error::Shape(format!(
                    "channel {i} is defined on {} states, problem has {nx}",
                    ch.n_states
                )));
            }
        }
        let y_sizes: Vec<usize> = observations.iter().map(|s| s.len()).collect();
        let u_sizes: Vec<usize> = actions.iter().map(|s| s.len()).collect();
        let ny = checked_product(&y_sizes, "joint observation space")?;
        let nu = checked_product(&u_sizes, "joint action space")?;

        let mut state_marginal = vec![0.0; nx];
        let mut common_marginal = vec![0.0; nx0];
        for x in 0..nx {
            for x0 in 0..nx0 {
                let w = joint_law[x * nx0 + x0];
                state_marginal[x] += w;
                common_marginal[x0] += w;
            }
        }
        let policy_sources = observations
            .iter()
            .map(|y| FiniteSpace::product(format!("{}x{}", common.label(), y.label()), &[&common, y]))
            .collect::<Result<Vec<_>>>()?;

        let mut problem = TeamProblem {
            state,
            common,
            observations,
            actions,
            joint: joint_law,
            channels,
            cost,
            state_marginal,
            common_marginal,
            policy_sources,
            y_sizes,
            u_sizes,
            ny,
            nu,
            cost_table: Vec::new(),
        };
        problem.cost_table = problem.materialize_cost()?;
        Ok(problem)
    }

    fn materialize_cost(&self) -> Result<Vec<f64>> {
        let n = self.n_agents();
        let total = self.state.len() * self.common.len() * self.ny * self.nu;
        match &self.cost {
            CostSpec::Table { values } => {
                if values.len() != total {
                    return Err(Error::Shape(format!(
                        "cost table needs {total} entries, got {}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
            CostSpec::Quadratic {
                team,
                tracking,
                effort,
                coupling,
            } => {
                for (name, v) in [("tracking", tracking), ("effort", effort)] {
                    if !v.is_empty() && v.len() != n {
                        return Err(Error::Shape(format!(
                            "quadratic cost: `{name}` needs {n} entries, got {}",
                            v.len()
                        )));
                    }
                }
                let xs = first_coords(&self.state)?;
                let us = self
                    .actions
                    .iter()
                    .map(first_coords)
                    .collect::<Result<Vec<_>>>()?;
                let per = self.common.len() * self.ny;
                let mut table = Vec::with_capacity(total);
                let mut uv = vec![0usize; n];
                for &x in &xs {
                    let mut block = Vec::with_capacity(self.nu);
                    for code in 0..self.nu {
                        self.decode_into(code, &self.u_sizes, &mut uv);
                        let u: Vec<f64> = uv.iter().enumerate().map(|(i, &k)| us[i][k]).collect();
                        let sum: f64 = u.iter().sum();
                        let mut c = team * (sum - x) * (sum - x);
                        for i in 0..n {
                            if !tracking.is_empty() {
                                c += tracking[i] * (u[i] - x) * (u[i] - x);
                            }
                            if !effort.is_empty() {
                                c += effort[i] * u[i] * u[i];
                            }
                            for j in i + 1..n {
                                c += coupling * (u[i] - u[j]) * (u[i] - u[j]);
                            }
                        }
                        block.push(c);
                    }
                    for _ in 0..per {
                        table.extend_from_slice(&block);
                    }
                }
                Ok(table)
            }
            CostSpec::Mismatch { state, pairwise } => {
                if state.len() != n {
                    return Err(Error::Shape(format!(
                        "mismatch cost: `state` needs {n} entries, got {}",
                        state.len()
                    )));
                }
                let per = self.common.len() * self.ny;
                let mut table = Vec::with_capacity(total);
                let mut uv = vec![0usize; n];
                for x in 0..self.state.len() {
                    let xl = &self.state.atom(x).label;
                    let mut block = Vec::with_capacity(self.nu);
                    for code in 0..self.nu {
                        self.decode_into(code, &self.u_sizes, &mut uv);
                        let labels: Vec<&str> = uv
                            .iter()
                            .enumerate()
                            .map(|(i, &k)| self.actions[i].atom(k).label.as_str())
                            .collect();
                        let mut c = 0.0;
                        for i in 0..n {
                            if labels[i] != xl {
                                c += state[i];
                            }
                            for j in i + 1..n {
                                if labels[i] != labels[j] {
                                    c += pairwise;
                                }
                            }
                        }
                        block.push(c);
                    }
                    for _ in 0..per {
                        table.extend_from_slice(&block);
                    }
                }
                Ok(table)
            }
        }
    }

    /// Lists every violated invariant; an empty report means the problem is
    /// well formed.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let (nx, nx0) = (self.state.len(), self.common.len());
        let mut total = 0.0;
        for x in 0..nx {
            for x0 in 0..nx0 {
                let w = self.joint[x * nx0 + x0];
                if !(w >= 0.0) || !w.is_finite() {
                    violations.push(Violation::JointLawNegative {
                        x: self.state.atom(x).label.clone(),
                        x0: self.common.atom(x0).label.clone(),
                        weight: w,
                    });
                }
                total += w;
            }
        }
        if !((total - 1.0).abs() <= SUM_TOL) {
            violations.push(Violation::JointLawNormalization { total });
        }
        for ch in &self.channels {
            let ys = self.observations[ch.agent].clone();
            for x in 0..nx {
                let mut sum = 0.0;
                for y in 0..ys.len() {
                    let q = ch.density(y, x);
                    if !(q >= 0.0) || !q.is_finite() {
                        violations.push(Violation::ChannelNegative {
                            agent: ch.agent,
                            y: ys.atom(y).label.clone(),
                            x: self.state.atom(x).label.clone(),
                            value: q,
                        });
                    }
                    sum += q * ch.reference.weight(y);
                }
                if !((sum - 1.0).abs() <= SUM_TOL) {
                    violations.push(Violation::ChannelNormalization {
                        agent: ch.agent,
                        x: self.state.atom(x).label.clone(),
                        total: sum,
                    });
                }
            }
        }
        let mut negative = (0usize, None);
        let mut non_finite = (0usize, None);
        for (k, &c) in self.cost_table.iter().enumerate() {
            if !c.is_finite() {
                non_finite.0 += 1;
                non_finite.1.get_or_insert(k);
            } else if c < 0.0 {
                negative.0 += 1;
                negative.1.get_or_insert(k);
            }
        }
        if let (count, Some(k)) = non_finite {
            violations.push(Violation::CostNonFinite {
                count,
                first: self.describe_cost_index(k),
            });
        }
        if let (count, Some(k)) = negative {
            violations.push(Violation::CostNegative {
                count,
                first: self.describe_cost_index(k),
                value: self.cost_table[k],
            });
        }
        ValidationReport { violations }
    }

    fn describe_cost_index(&self, k: usize) -> String {
        let uv = k % self.nu;
        let rest = k / self.nu;
        let yv = rest % self.ny;
        let rest = rest / self.ny;
        let x0 = rest % self.common.len();
        let x = rest / self.common.len();
        let ys = self.decode(yv, &self.y_sizes);
        let us = self.decode(uv, &self.u_sizes);
        let yl: Vec<&str> = ys
            .iter()
            .enumerate()
            .map(|(i, &v)| self.observations[i].atom(v).label.as_str())
            .collect();
        let ul: Vec<&str> = us
            .iter()
            .enumerate()
            .map(|(i, &v)| self.actions[i].atom(v).label.as_str())
            .collect();
        format!(
            "(x={}, x0={}, y=({}), u=({}))",
            self.state.atom(x).label,
            self.common.atom(x0).label,
            yl.join(","),
            ul.join(",")
        )
    }

    pub fn n_agents(&self) -> usize {
        self.observations.len()
    }

    pub fn state_space(&self) -> &Space {
        &self.state
    }

    pub fn common_space(&self) -> &Space {
        &self.common
    }

    pub fn observation_space(&self, i: usize) -> &Space {
        &self.observations[i]
    }

    pub fn action_space(&self, i: usize) -> &Space {
        &self.actions[i]
    }

    pub fn observation_spaces(&self) -> &[Space] {
        &self.observations
    }

    pub fn action_spaces(&self) -> &[Space] {
        &self.actions
    }

    /// The product space `X0 x Y_i` on which agent `i`'s policy is defined.
    pub fn policy_source(&self, i: usize) -> &Space {
        &self.policy_sources[i]
    }

    pub fn channel(&self, i: usize) -> &ObservationChannel {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[ObservationChannel] {
        &self.channels
    }

    pub fn cost_spec(&self) -> &CostSpec {
        &self.cost
    }

    pub fn joint_weights(&self) -> &[f64] {
        &self.joint
    }

    pub fn joint(&self, x: usize, x0: usize) -> f64 {
        self.joint[x * self.common.len() + x0]
    }

    /// `mu`, the marginal of the joint law on `X`.
    pub fn state_marginal(&self) -> &[f64] {
        &self.state_marginal
    }

    /// `mu0`, the marginal of the joint law on `X0`.
    pub fn common_marginal(&self) -> &[f64] {
        &self.common_marginal
    }

    pub fn n_joint_observations(&self) -> usize {
        self.ny
    }

    pub fn n_joint_actions(&self) -> usize {
        self.nu
    }

    pub fn observation_sizes(&self) -> &[usize] {
        &self.y_sizes
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.u_sizes
    }

    /// Total atom count over the six kinds of declared spaces.
    pub fn total_atoms(&self) -> usize {
        self.state.len()
            + self.common.len()
            + self.y_sizes.iter().sum::<usize>()
            + self.u_sizes.iter().sum::<usize>()
    }

    pub fn cost_table(&self) -> &[f64] {
        &self.cost_table
    }

    #[inline]
    pub(crate) fn cost_base(&self, x: usize, x0: usize, yv: usize) -> usize {
        ((x * self.common.len() + x0) * self.ny + yv) * self.nu
    }

    pub fn cost(&self, x: usize, x0: usize, ys: &[usize], us: &[usize]) -> f64 {
        let yv = encode(ys, &self.y_sizes);
        let uv = encode(us, &self.u_sizes);
        self.cost_table[self.cost_base(x, x0, yv) + uv]
    }

    pub fn encode_observations(&self, ys: &[usize]) -> usize {
        encode(ys, &self.y_sizes)
    }

    pub fn decode(&self, code: usize, sizes: &[usize]) -> Vec<usize> {
        let mut out = vec![0; sizes.len()];
        self.decode_into(code, sizes, &mut out);
        out
    }

    pub(crate) fn decode_into(&self, mut code: usize, sizes: &[usize], out: &mut [usize]) {
        for k in (0..sizes.len()).rev() {
            out[k] = code % sizes[k];
            code /= sizes[k];
        }
    }

    /// `prod_i q_i(y_i, x) mu_i(y_i)` for every joint observation code.
    pub(crate) fn observation_weights(&self, x: usize) -> Vec<f64> {
        let mut w = vec![1.0];
        for ch in &self.channels {
            let ny = self.y_sizes[ch.agent];
            let mut next = Vec::with_capacity(w.len() * ny);
            for a in &w {
                for y in 0..ny {
                    next.push(a * ch.law(y, x));
                }
            }
            w = next;
        }
        w
    }

    /// `sum_u c(x, x0, y, u) prod_i rows[i](u_i)` with each row given as its
    /// support list.
    pub(crate) fn tilde_c_support(&self, base: usize, rows: &[&[(usize, f64)]]) -> f64 {
        let n = rows.len();
        let mut idx = vec![0usize; n];
        if rows.iter().any(|r| r.is_empty()) {
            return 0.0;
        }
        let mut total = 0.0;
        loop {
            let mut code = 0usize;
            let mut weight = 1.0;
            for i in 0..n {
                let (u, w) = rows[i][idx[i]];
                code = code * self.u_sizes[i] + u;
                weight *= w;
            }
            total += weight * self.cost_table[base + code];
            let mut k = n;
            loop {
                if k == 0 {
                    return total;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < rows[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// The averaged cost `c~(x, x0, y, nu_1..nu_N) = sum_u c(x,x0,y,u) prod nu_i(u_i)`.
    pub fn tilde_c(&self, x: usize, x0: usize, ys: &[usize], nus: &[&Measure]) -> Result<f64> {
        let n = self.n_agents();
        if ys.len() != n || nus.len() != n {
            return Err(Error::Shape(format!(
                "c~ needs {n} observations and {n} measures, got {} and {}",
                ys.len(),
                nus.len()
            )));
        }
        if x >= self.state.len() || x0 >= self.common.len() {
            return Err(Error::Shape("state index out of range".into()));
        }
        for i in 0..n {
            if ys[i] >= self.y_sizes[i] {
                return Err(Error::Shape(format!("observation index out of range for agent {i}")));
            }
            ensure_same(&self.actions[i], nus[i].space())?;
        }
        let supports: Vec<Vec<(usize, f64)>> = nus.iter().map(|m| m.support().collect()).collect();
        let rows: Vec<&[(usize, f64)]> = supports.iter().map(Vec::as_slice).collect();
        let base = self.cost_base(x, x0, encode(ys, &self.y_sizes));
        Ok(self.tilde_c_support(base, &rows))
    }

    /// `P(x | x0)`. Atoms of zero common mass get the uniform law and are
    /// flagged.
    pub fn conditional_state_law(&self, x0: usize) -> ConditionalLaw {
        let m = self.common_marginal[x0];
        if m > 0.0 {
            let nx0 = self.common.len();
            let weights = (0..self.state.len())
                .map(|x| self.joint[x * nx0 + x0] / m)
                .collect();
            ConditionalLaw {
                law: Measure::new(self.state.clone(), weights, MeasureKind::Probability)
                    .expect("finite conditional weights"),
                zero_mass: false,
            }
        } else {
            ConditionalLaw {
                law: Measure::uniform(self.state.clone()),
                zero_mass: true,
            }
        }
    }

    /// Exact `J(gamma) = E[c(x, x0, y, u)]`.
    pub fn expected_cost(&self, profile: &PolicyProfile) -> Result<f64> {
        self.check_profile(profile)?;
        let n = self.n_agents();
        let nx0 = self.common.len();
        // supports[i][x0 * |Y_i| + y]
        let supports: Vec<Vec<Vec<(usize, f64)>>> = profile
            .kernels
            .iter()
            .map(|k| k.rows().iter().map(|r| r.support().collect()).collect())
            .collect();
        let mut ys = vec![0usize; n];
        let mut total = 0.0;
        for x in 0..self.state.len() {
            let obs = self.observation_weights(x);
            for x0 in 0..nx0 {
                let p = self.joint[x * nx0 + x0];
                if p == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for (yv, &w) in obs.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    self.decode_into(yv, &self.y_sizes, &mut ys);
                    let rows: Vec<&[(usize, f64)]> = (0..n)
                        .map(|i| supports[i][x0 * self.y_sizes[i] + ys[i]].as_slice())
                        .collect();
                    inner += w * self.tilde_c_support(self.cost_base(x, x0, yv), &rows);
                }
                total += p * inner;
            }
        }
        Ok(total)
    }

    pub(crate) fn check_profile(&self, profile: &PolicyProfile) -> Result<()> {
        if profile.kernels.len() != self.n_agents() {
            return Err(Error::Shape(format!(
                "profile has {} kernels for {} agents",
                profile.kernels.len(),
                self.n_agents()
            )));
        }
        for (i, k) in profile.kernels.iter().enumerate() {
            ensure_same(&self.policy_sources[i], k.source())?;
            ensure_same(&self.actions[i], k.target())?;
        }
        Ok(())
    }

    /// Number of deterministic policies `|U_i|^(|X0| |Y_i|)` for agent `i`,
    /// saturating at `u128::MAX`.
    pub fn deterministic_policy_count(&self, i: usize) -> u128 {
        saturating_pow(self.u_sizes[i] as u128, self.common.len() * self.y_sizes[i])
    }

    /// Every deterministic policy of agent `i`, as point-mass kernels on
    /// `X0 x Y_i`, in lexicographic order of the action table (the last
    /// `(x0, y)` entry varies fastest).
    pub fn enumerate_deterministic_policies(&self, i: usize, cap: u128) -> Result<DeterministicPolicies> {
        let count = self.deterministic_policy_count(i);
        if count > cap {
            return Err(Error::CapExceeded {
                what: format!("deterministic policies of agent {i}"),
                count,
                cap,
            });
        }
        Ok(DeterministicPolicies {
            source: self.policy_sources[i].clone(),
            target: self.actions[i].clone(),
            table: Some(vec![0; self.policy_sources[i].len()]),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ConditionalLaw {
    pub law: Measure,
    /// Set when `mu0(x0) = 0`; the law is then a uniform placeholder.
    pub zero_mass: bool,
}

pub struct DeterministicPolicies {
    source: Space,
    target: Space,
    table: Option<Vec<usize>>,
}

impl Iterator for DeterministicPolicies {
    type Item = Kernel;

    fn next(&mut self) -> Option<Kernel> {
        let table = self.table.as_mut()?;
        let out = Kernel::deterministic(self.source.clone(), self.target.clone(), table)
            .expect("table within bounds");
        if !advance(table, self.target.len()) {
            self.table = None;
        }
        Some(out)
    }
}

/// Odometer step over digits in `0..base`, last digit fastest. Returns false
/// after the last configuration.
pub(crate) fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

pub(crate) fn encode(digits: &[usize], sizes: &[usize]) -> usize {
    digits
        .iter()
        .zip(sizes)
        .fold(0, |acc, (&d, &s)| acc * s + d)
}

pub(crate) fn saturating_pow(base: u128, exp: usize) -> u128 {
    let mut out: u128 = 1;
    for _ in 0..exp {
        out = out.saturating_mul(base);
    }
    out
}

fn checked_product(sizes: &[usize], what: &str) -> Result<usize> {
    sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| Error::Shape(format!("{what} is too large")))
}

fn first_coords(space: &Space) -> Result<Vec<f64>> {
    (0..space.len())
        .map(|i| {
            space.coord(i).ok_or_else(|| {
                Error::Rejected(format!(
                    "quadratic cost needs coordinates on `{}`",
                    space.label()
                ))
            })
        })
        .collect()
}

/// A team policy profile: agent `i` uses a kernel from `X0 x Y_i` to `U_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyProfile {
    kernels: Vec<Kernel>,
}

impl PolicyProfile {
    /// Checks spaces and that rows are probability measures wherever
    /// `mu0 (x) mu_i` has mass.
    pub fn new(problem: &TeamProblem, kernels: Vec<Kernel>) -> Result<Self> {
        let profile = PolicyProfile { kernels };
        problem.check_profile(&profile)?;
        let nx0 = problem.common.len();
        for (i, k) in profile.kernels.iter().enumerate() {
            let mu_i = problem.channels[i].reference.weights();
            let ny = mu_i.len();
            for x0 in 0..nx0 {
                for (y, &m) in mu_i.iter().enumerate() {
                    if problem.common_marginal[x0] * m <= 0.0 {
                        continue;
                    }
                    let row = k.row(x0 * ny + y);
                    let ok = row.weights().iter().all(|&w| w >= 0.0)
                        && (row.total_mass() - 1.0).abs() <= SUM_TOL;
                    if !ok {
                        return Err(Error::InvalidMeasure {
                            space: k.source().atom(x0 * ny + y).label.clone(),
                            reason: format!("agent {i}: policy row is not a probability measure"),
                        });
                    }
                }
            }
        }
        Ok(profile)
    }

    /// Deterministic profile from per-agent action tables indexed by
    /// `x0 * |Y_i| + y`.
    pub fn deterministic(problem: &TeamProblem, tables: &[Vec<usize>]) -> Result<Self> {
        if tables.len() != problem.n_agents() {
            return Err(Error::Shape(format!(
                "{} action tables for {} agents",
                tables.len(),
                problem.n_agents()
            )));
        }
        let kernels = tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Kernel::deterministic(problem.policy_sources[i].clone(), problem.actions[i].clone(), t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicyProfile { kernels })
    }

    /// Every agent plays its first action everywhere.
    pub fn first_action(problem: &TeamProblem) -> Self {
        let tables: Vec<Vec<usize>> = problem
            .policy_sources
            .iter()
            .map(|s| vec![0; s.len()])
            .collect();
        Self::deterministic(problem, &tables).expect("first action always in range")
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn kernel(&self, i: usize) -> &Kernel {
        &self.kernels[i]
    }

    pub fn is_deterministic(&self) -> bool {
        self.action_tables().is_some()
    }

    pub fn action_tables(&self) -> Option<Vec<Vec<usize>>> {
        self.kernels.iter().map(Kernel::as_deterministic).collect()
    }

    /// `t * other + (1 - t) * self`, agent by agent.
    pub fn mix(&self, other: &PolicyProfile, t: f64) -> Result<PolicyProfile> {
        let kernels = self
            .kernels
            .iter()
            .zip(&other.kernels)
            .map(|(a, b)| a.mix(b, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicyProfile { kernels })
    }
}
