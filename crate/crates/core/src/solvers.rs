//! Exact solvers over deterministic team policies.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{advance, PolicyProfile, TeamProblem};
use crate::reduction::{solve_common_information, CiSolution, GridSpec};

/// `W(x0, y, u) = sum_x P(x, x0) prod_i W_i(y_i | x) c(x, x0, y, u)`, so that
/// a deterministic profile costs `sum_{x0, y} W(x0, y, gamma(x0, y))`.
struct WeightedCost {
    table: Vec<f64>,
    ny: usize,
    nu: usize,
}

impl WeightedCost {
    fn new(problem: &TeamProblem) -> Self {
        let nx0 = problem.common_space().len();
        let (ny, nu) = (problem.n_joint_observations(), problem.n_joint_actions());
        let mut table = vec![0.0; nx0 * ny * nu];
        let cost = problem.cost_table();
        for x in 0..problem.state_space().len() {
            let obs = problem.observation_weights(x);
            for x0 in 0..nx0 {
                let p = problem.joint(x, x0);
                if p == 0.0 {
                    continue;
                }
                for (yv, &w) in obs.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let src = problem.cost_base(x, x0, yv);
                    let dst = (x0 * ny + yv) * nu;
                    for u in 0..nu {
                        table[dst + u] += p * w * cost[src + u];
                    }
                }
            }
        }
        WeightedCost { table, ny, nu }
    }

    #[inline]
    fn at(&self, x0: usize, yv: usize, uv: usize) -> f64 {
        self.table[(x0 * self.ny + yv) * self.nu + uv]
    }
}

#[derive(Clone, Debug)]
pub struct BruteForceResult {
    pub profile: PolicyProfile,
    pub value: f64,
    /// Number of deterministic profiles covered.
    pub profiles: u128,
}

/// Total number of deterministic team profiles, saturating.
pub fn profile_count(problem: &TeamProblem) -> u128 {
    (0..problem.n_agents())
        .map(|i| problem.deterministic_policy_count(i))
        .fold(1u128, |a, b| a.saturating_mul(b))
}

/// Minimizes `J` over every deterministic profile.
///
/// Tables of agents `0..N-1` are enumerated lexicographically; for each, the
/// cost is separable across the last agent's `(x0, y)` entries and is
/// minimized entry by entry, which covers all of that agent's tables at
/// once. The first minimizer in lexicographic order is returned, and its
/// value is recomputed with [`TeamProblem::expected_cost`].
pub fn brute_force(problem: &TeamProblem, cap: u128) -> Result<BruteForceResult> {
    let count = profile_count(problem);
    if count > cap {
        return Err(Error::CapExceeded {
            what: "deterministic team profiles".into(),
            count,
            cap,
        });
    }
    let n = problem.n_agents();
    let nx0 = problem.common_space().len();
    let y_sizes = problem.observation_sizes();
    let u_sizes = problem.action_sizes();
    let last = n - 1;
    let (ny_last, nu_last) = (y_sizes[last], u_sizes[last]);
    let w = WeightedCost::new(problem);

    let mut outer: Vec<Vec<usize>> = (0..last).map(|i| vec![0; nx0 * y_sizes[i]]).collect();
    let mut ys = vec![0usize; n];
    let mut a = vec![0.0; nx0 * ny_last * nu_last];
    let mut best: Option<(f64, Vec<Vec<usize>>, Vec<usize>)> = None;
    loop {
        // A(x0, y_last, u_last) for the current outer tables
        a.iter_mut().for_each(|v| *v = 0.0);
        for x0 in 0..nx0 {
            for yv in 0..w.ny {
                problem.decode_into(yv, y_sizes, &mut ys);
                let mut prefix = 0usize;
                for i in 0..last {
                    prefix = prefix * u_sizes[i] + outer[i][x0 * y_sizes[i] + ys[i]];
                }
                let row = (x0 * ny_last + ys[last]) * nu_last;
                for u in 0..nu_last {
                    a[row + u] += w.at(x0, yv, prefix * nu_last + u);
                }
            }
        }
        let mut table = Vec::with_capacity(nx0 * ny_last);
        let mut total = 0.0;
        for r in 0..nx0 * ny_last {
            let row = &a[r * nu_last..(r + 1) * nu_last];
            let mut arg = 0;
            for (u, &v) in row.iter().enumerate() {
                if v < row[arg] {
                    arg = u;
                }
            }
            table.push(arg);
            total += row[arg];
        }
        if best.as_ref().is_none_or(|(v, _, _)| total < *v) {
            best = Some((total, outer.clone(), table));
        }
        let mut moved = false;
        for i in (0..last).rev() {
            if advance(&mut outer[i], u_sizes[i]) {
                moved = true;
                break;
            }
        }
        if !moved {
            break;
        }
    }
    let (_, mut tables, last_table) = best.expect("at least one profile");
    tables.push(last_table);
    let profile = PolicyProfile::deterministic(problem, &tables)?;
    let value = problem.expected_cost(&profile)?;
    Ok(BruteForceResult {
        profile,
        value,
        profiles: count,
    })
}

#[derive(Clone, Debug)]
pub struct PersonByPerson {
    pub profile: PolicyProfile,
    pub value: f64,
    /// `J` at the start and after every single-agent update.
    pub trace: Vec<f64>,
    pub cycles: usize,
    pub converged: bool,
}

/// Cyclic best responses starting from a deterministic profile. Each update
/// replaces agent `i`'s table by an exact best response to the others;
/// entries keep their current action unless another is strictly better.
/// Stops after a full cycle that lowers `J` by at most `tol`.
pub fn person_by_person(
    problem: &TeamProblem,
    start: &PolicyProfile,
    tol: f64,
    max_cycles: usize,
) -> Result<PersonByPerson> {
    let mut tables = start
        .action_tables()
        .ok_or_else(|| Error::Rejected("person-by-person needs a deterministic start".into()))?;
    PolicyProfile::deterministic(problem, &tables)?;
    let n = problem.n_agents();
    let nx0 = problem.common_space().len();
    let y_sizes = problem.observation_sizes();
    let u_sizes = problem.action_sizes();
    let w = WeightedCost::new(problem);
    let objective = |tables: &[Vec<usize>]| -> Result<f64> {
        problem.expected_cost(&PolicyProfile::deterministic(problem, tables)?)
    };

    let mut value = objective(&tables)?;
    let mut trace = vec![value];
    let mut ys = vec![0usize; n];
    let mut cycles = 0;
    let mut converged = false;
    while cycles < max_cycles {
        cycles += 1;
        let before = value;
        for i in 0..n {
            let (nyi, nui) = (y_sizes[i], u_sizes[i]);
            let mut b = vec![0.0; nx0 * nyi * nui];
            for x0 in 0..nx0 {
                for yv in 0..w.ny {
                    problem.decode_into(yv, y_sizes, &mut ys);
                    let row = (x0 * nyi + ys[i]) * nui;
                    for u in 0..nui {
                        let mut code = 0usize;
                        for j in 0..n {
                            let uj = if j == i { u } else { tables[j][x0 * y_sizes[j] + ys[j]] };
                            code = code * u_sizes[j] + uj;
                        }
                        b[row + u] += w.at(x0, yv, code);
                    }
                }
            }
            for r in 0..nx0 * nyi {
                let row = &b[r * nui..(r + 1) * nui];
                let mut arg = tables[i][r];
                for (u, &v) in row.iter().enumerate() {
                    if v < row[arg] {
                        arg = u;
                    }
                }
                tables[i][r] = arg;
            }
            value = objective(&tables)?;
            trace.push(value);
        }
        if before - value <= tol {
            converged = true;
            break;
        }
    }
    Ok(PersonByPerson {
        profile: PolicyProfile::deterministic(problem, &tables)?,
        value,
        trace,
        cycles,
        converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Brute,
    Ci,
    Pbp,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Brute => "brute",
            Method::Ci => "ci",
            Method::Pbp => "pbp",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" => Ok(Method::Brute),
            "ci" => Ok(Method::Ci),
            "pbp" => Ok(Method::Pbp),
            other => Err(Error::parse("method", format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub method: Method,
    pub grid: GridSpec,
    pub cap: u128,
    pub tol: f64,
    pub max_cycles: usize,
    /// Starting profile for person-by-person; defaults to the first action
    /// everywhere.
    pub start: Option<PolicyProfile>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: Method::Ci,
            grid: GridSpec::Deterministic,
            cap: crate::model::DEFAULT_ENUMERATION_CAP,
            tol: 1e-12,
            max_cycles: 1000,
            start: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub method: Method,
    pub value: f64,
    pub profile: PolicyProfile,
    /// Present for the common-information pipeline.
    pub ci: Option<CiSolution>,
    /// Present for person-by-person.
    pub trace: Option<Vec<f64>>,
    /// Profiles enumerated (brute force), grid elements times common atoms
    /// (common information) or best-response steps (person-by-person).
    pub evaluations: u128,
    pub elapsed: Duration,
}

pub fn solve(problem: &TeamProblem, options: &SolveOptions) -> Result<SolveResult> {
    let start = Instant::now();
    let mut result = match options.method {
        Method::Brute => {
            let bf = brute_force(problem, options.cap)?;
            SolveResult {
                method: Method::Brute,
                value: bf.value,
                profile: bf.profile,
                ci: None,
                trace: None,
                evaluations: bf.profiles,
                elapsed: Duration::ZERO,
            }
        }
        Method::Ci => {
            let ci = solve_common_information(problem, &options.grid, options.cap)?;
            let rows = ci.reduced.values.iter().filter(|r| r.is_some()).count();
            SolveResult {
                method: Method::Ci,
                value: ci.solution.value,
                profile: ci.profile.clone(),
                evaluations: (ci.reduced.grid.len() * rows) as u128,
                ci: Some(ci),
                trace: None,
                elapsed: Duration::ZERO,
            }
        }
        Method::Pbp => {
            let init = match &options.start {
                Some(p) => p.clone(),
                None => PolicyProfile::first_action(problem),
            };
            let pbp = person_by_person(problem, &init, options.tol, options.max_cycles)?;
            SolveResult {
                method: Method::Pbp,
                value: pbp.value,
                profile: pbp.profile,
                ci: None,
                evaluations: (pbp.trace.len() - 1) as u128,
                trace: Some(pbp.trace),
                elapsed: Duration::ZERO,
            }
        }
    };
    result.elapsed = start.elapsed();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::DEFAULT_ENUMERATION_CAP;

    /// Every profile, each scored by `expected_cost`.
    fn naive_minimum(p: &TeamProblem) -> f64 {
        let tables_of = |i: usize| -> Vec<Vec<usize>> {
            p.enumerate_deterministic_policies(i, u128::MAX)
                .unwrap()
                .map(|k| k.as_deterministic().unwrap())
                .collect()
        };
        let (a, b) = (tables_of(0), tables_of(1));
        let mut best = f64::INFINITY;
        for t0 in &a {
            for t1 in &b {
                let prof = PolicyProfile::deterministic(p, &[t0.clone(), t1.clone()]).unwrap();
                best = best.min(p.expected_cost(&prof).unwrap());
            }
        }
        best
    }

    #[test]
    fn brute_force_matches_full_enumeration() {
        let mut rng = fixtures::seeded_rng(11);
        for _ in 0..15 {
            let sizes = fixtures::Sizes::sample(&mut rng, 2);
            let p = fixtures::random_instance(&mut rng, &sizes);
            let bf = brute_force(&p, DEFAULT_ENUMERATION_CAP).unwrap();
            assert!((bf.value - naive_minimum(&p)).abs() < 1e-12);
            assert_eq!(bf.profiles, profile_count(&p));
        }
    }

    #[test]
    fn brute_force_on_toy_instance() {
        let p = fixtures::toy1();
        let bf = brute_force(&p, 1000).unwrap();
        assert_eq!(bf.profiles, 256);
        assert!((bf.value - naive_minimum(&p)).abs() < 1e-12);
        assert!(matches!(brute_force(&p, 255), Err(Error::CapExceeded { count: 256, .. })));
    }

    #[test]
    fn person_by_person_can_stall_above_optimum() {
        let p = fixtures::coordination();
        let start = PolicyProfile::first_action(&p);
        let pbp = person_by_person(&p, &start, 1e-12, 50).unwrap();
        assert!(pbp.converged);
        assert!((pbp.value - 0.5).abs() < 1e-12);
        let bf = brute_force(&p, 100).unwrap();
        assert!(bf.value.abs() < 1e-12);
    }

    #[test]
    fn person_by_person_trace_is_monotone() {
        let mut rng = fixtures::seeded_rng(5);
        for _ in 0..10 {
            let sizes = fixtures::Sizes::sample(&mut rng, 3);
            let p = fixtures::random_instance(&mut rng, &sizes);
            let pbp = person_by_person(&p, &PolicyProfile::first_action(&p), 1e-12, 100).unwrap();
            for w in pbp.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }
}
