use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use teamci::diagnostics::{
    action_schedule, escaping_mass_demo, default_vanishing_bank, geometric_path, lsc_probe, sublevel_tightness,
    tightness_check, LscSequence, LscSettings, ScheduledSet, DEFAULT_RADII,
};
use teamci::fixtures::{random_instance, seeded_rng, Sizes};
use teamci::io::{parse_problem_str, Metadata, ProblemFile};
use teamci::measure::{
    f_norm1, indicator_bank, kernel_inf_norm, pairing, tv_distance, wstar_distance, Atom, FiniteSpace, Kernel,
    Measure, MeasureKind, Space, TestFunction,
};
use teamci::model::{CostSpec, ObservationChannel, PolicyProfile, TeamProblem, TeamSpec};
use teamci::reduction::{
    build_lambda_grid, evaluate_l, evaluate_m, reduce, solve_common_information, GridSpec, PrescriptionAction,
};
use teamci::solvers::{brute_force, person_by_person};

const EXACT: f64 = 1e-12;
const NO_CAP: u128 = u128::MAX;

fn instance(seed: u64, max: usize) -> (TeamProblem, ChaCha8Rng) {
    let mut rng = seeded_rng(seed);
    let sizes = Sizes::sample(&mut rng, max);
    (random_instance(&mut rng, &sizes), rng)
}

fn simplex(rng: &mut impl Rng, n: usize, sparse: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if sparse && rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    if w.iter().sum::<f64>() == 0.0 {
        w[rng.gen_range(0..n)] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn random_measure(rng: &mut impl Rng, space: &Space) -> Measure {
    Measure::probability(space.clone(), simplex(rng, space.len(), true)).unwrap()
}

fn random_kernel(rng: &mut impl Rng, source: &Space, target: &Space) -> Kernel {
    let rows = (0..source.len()).map(|_| simplex(rng, target.len(), true)).collect();
    Kernel::from_rows(source.clone(), target.clone(), rows, MeasureKind::Probability).unwrap()
}

fn random_profile(rng: &mut impl Rng, p: &TeamProblem) -> PolicyProfile {
    let kernels = (0..p.n_agents())
        .map(|i| random_kernel(rng, p.policy_source(i), p.action_space(i)))
        .collect();
    PolicyProfile::new(p, kernels).unwrap()
}

fn random_tables(rng: &mut impl Rng, p: &TeamProblem) -> Vec<Vec<usize>> {
    (0..p.n_agents())
        .map(|i| {
            (0..p.policy_source(i).len())
                .map(|_| rng.gen_range(0..p.action_sizes()[i]))
                .collect()
        })
        .collect()
}

fn random_function(rng: &mut impl Rng, base: &Space, action: &Space) -> TestFunction {
    TestFunction::from_fn(base.clone(), action.clone(), |_, _| rng.gen_range(-2.0..2.0)).unwrap()
}

/// Per-agent kernels of `profile` at common atom `x0`, as a prescription.
fn prescription_at(p: &TeamProblem, profile: &PolicyProfile, x0: usize) -> PrescriptionAction {
    let parts = (0..p.n_agents())
        .map(|i| {
            let ny = p.observation_sizes()[i];
            let rows = (0..ny).map(|y| profile.kernel(i).row(x0 * ny + y).clone()).collect();
            Kernel::new(p.observation_space(i).clone(), p.action_space(i).clone(), rows).unwrap()
        })
        .collect();
    PrescriptionAction::new(p, parts).unwrap()
}

/// Index maps from new atoms to old ones. A `None` common atom is a new atom
/// of zero mass.
struct Relabel {
    x: Vec<usize>,
    x0: Vec<Option<usize>>,
    y: Vec<Vec<usize>>,
    u: Vec<Vec<usize>>,
    compact_actions: bool,
}

impl Relabel {
    fn shuffled(rng: &mut impl Rng, p: &TeamProblem) -> Self {
        let mut perm = |n: usize| {
            let mut v: Vec<usize> = (0..n).collect();
            v.shuffle(rng);
            v
        };
        Relabel {
            x: perm(p.state_space().len()),
            x0: perm(p.common_space().len()).into_iter().map(Some).collect(),
            y: p.observation_sizes().iter().map(|&n| perm(n)).collect(),
            u: p.action_sizes().iter().map(|&n| perm(n)).collect(),
            compact_actions: false,
        }
    }

    fn identity(p: &TeamProblem) -> Self {
        let id = |n: usize| (0..n).collect::<Vec<_>>();
        Relabel {
            x: id(p.state_space().len()),
            x0: (0..p.common_space().len()).map(Some).collect(),
            y: p.observation_sizes().iter().map(|&n| id(n)).collect(),
            u: p.action_sizes().iter().map(|&n| id(n)).collect(),
            compact_actions: false,
        }
    }

    fn space(old: &Space, map: &[usize], compact: bool) -> Space {
        let atoms = map.iter().map(|&o| old.atom(o).clone()).collect();
        FiniteSpace::new_compact(old.label(), atoms, compact).unwrap()
    }

    fn apply(&self, p: &TeamProblem, ghost_cost: f64) -> TeamProblem {
        let n = p.n_agents();
        let state = Self::space(p.state_space(), &self.x, false);
        let common_atoms = self
            .x0
            .iter()
            .map(|o| match o {
                Some(o) => p.common_space().atom(*o).clone(),
                None => Atom::new("ghost"),
            })
            .collect();
        let common = FiniteSpace::new(p.common_space().label(), common_atoms).unwrap();
        let observations: Vec<Space> = (0..n).map(|i| Self::space(p.observation_space(i), &self.y[i], false)).collect();
        let actions: Vec<Space> = (0..n)
            .map(|i| Self::space(p.action_space(i), &self.u[i], self.compact_actions))
            .collect();
        let mut joint_law = Vec::new();
        for &x in &self.x {
            for x0 in &self.x0 {
                joint_law.push(x0.map_or(0.0, |x0| p.joint(x, x0)));
            }
        }
        let nx = self.x.len();
        let channels = (0..n)
            .map(|i| {
                let ch = p.channel(i);
                let reference = self.y[i].iter().map(|&y| ch.reference().weight(y)).collect();
                let reference = Measure::probability(observations[i].clone(), reference).unwrap();
                let mut density = Vec::new();
                for &y in &self.y[i] {
                    for &x in &self.x {
                        density.push(ch.density(y, x));
                    }
                }
                ObservationChannel::new(i, reference, density, nx).unwrap()
            })
            .collect();
        let ny: Vec<usize> = observations.iter().map(|s| s.len()).collect();
        let nu: Vec<usize> = actions.iter().map(|s| s.len()).collect();
        let mut values = Vec::new();
        for &x in &self.x {
            for x0 in &self.x0 {
                for_each_tuple(&ny, |ys| {
                    for_each_tuple(&nu, |us| {
                        values.push(match x0 {
                            Some(x0) => {
                                let oy: Vec<usize> = (0..n).map(|i| self.y[i][ys[i]]).collect();
                                let ou: Vec<usize> = (0..n).map(|i| self.u[i][us[i]]).collect();
                                p.cost(x, *x0, &oy, &ou)
                            }
                            None => ghost_cost,
                        })
                    })
                });
            }
        }
        TeamProblem::new(TeamSpec {
            state,
            common,
            observations,
            actions,
            joint_law,
            channels,
            cost: CostSpec::Table { values },
        })
        .unwrap()
    }

    /// Transports a deterministic profile of the original problem.
    fn tables(&self, p: &TeamProblem, tables: &[Vec<usize>]) -> Vec<Vec<usize>> {
        (0..p.n_agents())
            .map(|i| {
                let ny = p.observation_sizes()[i];
                let mut out = Vec::new();
                for x0 in &self.x0 {
                    for &y in &self.y[i] {
                        let old = x0.map_or(0, |x0| tables[i][x0 * ny + y]);
                        out.push(self.u[i].iter().position(|&u| u == old).unwrap());
                    }
                }
                out
            })
            .collect()
    }
}

/// Calls `f` on every tuple in mixed radix, first coordinate most
/// significant.
fn for_each_tuple(sizes: &[usize], mut f: impl FnMut(&[usize])) {
    let mut t = vec![0; sizes.len()];
    loop {
        f(&t);
        let mut k = sizes.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            t[k] += 1;
            if t[k] < sizes[k] {
                break;
            }
            t[k] = 0;
        }
    }
}

struct Values {
    brute: f64,
    ci: f64,
    pbp: f64,
}

fn all_methods(p: &TeamProblem, start: &[Vec<usize>]) -> Values {
    let start = PolicyProfile::deterministic(p, start).unwrap();
    Values {
        brute: brute_force(p, NO_CAP).unwrap().value,
        ci: solve_common_information(p, &GridSpec::Deterministic, NO_CAP).unwrap().solution.value,
        pbp: person_by_person(p, &start, EXACT, 1000).unwrap().value,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= EXACT
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tv_is_a_metric(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = seeded_rng(seed);
        let s = FiniteSpace::labelled("S", &["a", "b", "c", "d", "e"][..n]).unwrap();
        let (a, b, c) = (random_measure(&mut rng, &s), random_measure(&mut rng, &s), random_measure(&mut rng, &s));
        prop_assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        prop_assert!(close(tv_distance(&a, &b).unwrap(), tv_distance(&b, &a).unwrap()));
        prop_assert!(tv_distance(&a, &c).unwrap() <= tv_distance(&a, &b).unwrap() + tv_distance(&b, &c).unwrap() + EXACT);
        prop_assert!(tv_distance(&a, &b).unwrap() <= 2.0 + EXACT);
    }

    #[test]
    fn pairing_is_bilinear_and_bounded(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = seeded_rng(seed);
        let y = FiniteSpace::integer_grid("Y", 0, rng.gen_range(0..4)).unwrap();
        let u = FiniteSpace::integer_grid("U", 1, rng.gen_range(1..5)).unwrap();
        let mu = random_measure(&mut rng, &y);
        let g = random_kernel(&mut rng, &y, &u);
        let (f1, f2) = (random_function(&mut rng, &y, &u), random_function(&mut rng, &y, &u));
        let combined = pairing(&g, &f1.combine(a, &f2, b).unwrap(), &mu).unwrap();
        let split = a * pairing(&g, &f1, &mu).unwrap() + b * pairing(&g, &f2, &mu).unwrap();
        prop_assert!(close(combined, split));
        let bound = f_norm1(&f1, &mu).unwrap() * kernel_inf_norm(&g, &mu).unwrap();
        prop_assert!(pairing(&g, &f1, &mu).unwrap().abs() <= bound + EXACT);
    }

    #[test]
    fn wstar_distance_tracks_pairings(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let y = FiniteSpace::integer_grid("Y", 0, 2).unwrap();
        let u = FiniteSpace::integer_grid("U", 1, 3).unwrap();
        let mu = random_measure(&mut rng, &y);
        let (g, h) = (random_kernel(&mut rng, &y, &u), random_kernel(&mut rng, &y, &u));
        let bank = indicator_bank(&y, &u);
        // g_n = g + 2^-n (h - g) converges to g
        let mut last = f64::INFINITY;
        for n in 1..=40 {
            let gn = g.mix(&h, 0.5f64.powi(n)).unwrap();
            let d = wstar_distance(&gn, &g, &bank, &mu).unwrap();
            prop_assert!(d <= last + EXACT);
            last = d;
            let worst = bank
                .iter()
                .map(|f| (pairing(&gn, f, &mu).unwrap() - pairing(&g, f, &mu).unwrap()).abs())
                .fold(0.0, f64::max);
            prop_assert!(worst <= 0.5f64.powi(n) * 2.0 + EXACT);
        }
        prop_assert!(last <= 1e-11);
        // a constant sequence away from g keeps a positive distance unless its pairings agree
        let far = wstar_distance(&h, &g, &bank, &mu).unwrap();
        let agree = bank.iter().all(|f| close(pairing(&h, f, &mu).unwrap(), pairing(&g, f, &mu).unwrap()));
        prop_assert_eq!(far <= EXACT, agree);
    }

    #[test]
    fn expected_cost_is_multilinear(seed in any::<u64>(), t in 0.0f64..=1.0) {
        let (p, mut rng) = instance(seed, 3);
        let base = random_profile(&mut rng, &p);
        let i = rng.gen_range(0..p.n_agents());
        let other = random_kernel(&mut rng, p.policy_source(i), p.action_space(i));
        let with = |k: Kernel| {
            let mut ks = base.kernels().to_vec();
            ks[i] = k;
            p.expected_cost(&PolicyProfile::new(&p, ks).unwrap()).unwrap()
        };
        let mixed = with(base.kernel(i).mix(&other, t).unwrap());
        let line = (1.0 - t) * with(base.kernel(i).clone()) + t * with(other);
        prop_assert!(close(mixed, line));
    }

    #[test]
    fn expected_cost_matches_naive_sum(seed in any::<u64>()) {
        let (p, mut rng) = instance(seed, 3);
        let profile = random_profile(&mut rng, &p);
        let n = p.n_agents();
        let mut naive = 0.0;
        for x in 0..p.state_space().len() {
            for x0 in 0..p.common_space().len() {
                for_each_tuple(p.observation_sizes(), |ys| {
                    for_each_tuple(p.action_sizes(), |us| {
                        let mut w = p.joint(x, x0);
                        for i in 0..n {
                            let ny = p.observation_sizes()[i];
                            w *= p.channel(i).law(ys[i], x) * profile.kernel(i).weight(x0 * ny + ys[i], us[i]);
                        }
                        naive += w * p.cost(x, x0, ys, us);
                    })
                });
            }
        }
        prop_assert!(close(p.expected_cost(&profile).unwrap(), naive));
    }

    #[test]
    fn conditional_laws_reconstruct_the_state_marginal(seed in any::<u64>()) {
        let (p, _) = instance(seed, 3);
        for x in 0..p.state_space().len() {
            let total: f64 = (0..p.common_space().len())
                .map(|x0| p.common_marginal()[x0] * p.conditional_state_law(x0).law.weight(x))
                .sum();
            prop_assert!(close(total, p.state_marginal()[x]));
        }
    }

    #[test]
    fn reduced_cost_reproduces_expected_cost(seed in any::<u64>()) {
        let (p, mut rng) = instance(seed, 3);
        let profile = random_profile(&mut rng, &p);
        let via_m: f64 = (0..p.common_space().len())
            .map(|x0| p.common_marginal()[x0] * evaluate_m(&p, x0, &prescription_at(&p, &profile, x0)).unwrap())
            .sum();
        prop_assert!(close(via_m, p.expected_cost(&profile).unwrap()));
    }

    #[test]
    fn l_lies_between_cost_envelopes(seed in any::<u64>()) {
        let (p, mut rng) = instance(seed, 3);
        let profile = random_profile(&mut rng, &p);
        let n = p.n_agents();
        for x in 0..p.state_space().len() {
            for x0 in 0..p.common_space().len() {
                let (mut lo, mut hi) = (0.0, 0.0);
                for_each_tuple(p.observation_sizes(), |ys| {
                    let w: f64 = (0..n).map(|i| p.channel(i).law(ys[i], x)).product();
                    let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
                    for_each_tuple(p.action_sizes(), |us| {
                        let c = p.cost(x, x0, ys, us);
                        mn = mn.min(c);
                        mx = mx.max(c);
                    });
                    lo += w * mn;
                    hi += w * mx;
                });
                let l = evaluate_l(&p, x, x0, &prescription_at(&p, &profile, x0)).unwrap();
                prop_assert!(lo - EXACT <= l && l <= hi + EXACT);
            }
        }
    }

    #[test]
    fn grid_refinement_never_raises_the_value(seed in any::<u64>()) {
        let (p, _) = instance(seed, 2);
        let value = |spec: GridSpec| solve_common_information(&p, &spec, NO_CAP).unwrap().solution.value;
        let det = value(GridSpec::Deterministic);
        let (r1, r2, r4) = (value(GridSpec::Randomized(1)), value(GridSpec::Randomized(2)), value(GridSpec::Randomized(4)));
        prop_assert!(close(r1, det));
        prop_assert!(r2 <= r1 + EXACT && r4 <= r2 + EXACT);
        prop_assert!(r4 >= det - EXACT);
    }

    #[test]
    fn brute_force_is_a_lower_bound_and_matches_ci(seed in any::<u64>()) {
        let (p, mut rng) = instance(seed, 3);
        let bf = brute_force(&p, NO_CAP).unwrap();
        for _ in 0..20 {
            let tables = random_tables(&mut rng, &p);
            let j = p.expected_cost(&PolicyProfile::deterministic(&p, &tables).unwrap()).unwrap();
            prop_assert!(bf.value <= j + EXACT);
        }
        let ci = solve_common_information(&p, &GridSpec::Deterministic, NO_CAP).unwrap();
        prop_assert!(close(ci.solution.value, bf.value));
        prop_assert!(close(p.expected_cost(&ci.profile).unwrap(), ci.solution.value));
    }

    #[test]
    fn person_by_person_descends_to_a_bound(seed in any::<u64>()) {
        let (p, mut rng) = instance(seed, 3);
        let start = PolicyProfile::deterministic(&p, &random_tables(&mut rng, &p)).unwrap();
        let r = person_by_person(&p, &start, EXACT, 1000).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.trace.windows(2).all(|w| w[1] <= w[0] + EXACT));
        prop_assert!(r.value >= brute_force(&p, NO_CAP).unwrap().value - EXACT);
    }

    #[test]
    fn values_survive_relabelling(seed in any::<u64>()) {
        let (p, mut rng) = instance(seed, 3);
        let start = random_tables(&mut rng, &p);
        let map = Relabel::shuffled(&mut rng, &p);
        let q = map.apply(&p, 0.0);
        let (a, b) = (all_methods(&p, &start), all_methods(&q, &map.tables(&p, &start)));
        prop_assert!(close(a.brute, b.brute));
        prop_assert!(close(a.ci, b.ci));
        prop_assert!(close(a.pbp, b.pbp));
    }

    #[test]
    fn values_survive_a_zero_mass_common_atom(seed in any::<u64>(), ghost in 0.0f64..5.0) {
        let (p, mut rng) = instance(seed, 3);
        let start = random_tables(&mut rng, &p);
        let mut map = Relabel::identity(&p);
        map.x0.insert(rng.gen_range(0..=map.x0.len()), None);
        let q = map.apply(&p, ghost);
        let (a, b) = (all_methods(&p, &start), all_methods(&q, &map.tables(&p, &start)));
        prop_assert!(close(a.brute, b.brute));
        prop_assert!(close(a.ci, b.ci));
        prop_assert!(close(a.pbp, b.pbp));
    }

    #[test]
    fn outside_mass_shrinks_along_a_schedule(seed in any::<u64>(), n in 1i64..12) {
        let mut rng = seeded_rng(seed);
        let s = FiniteSpace::integer_grid("S", 0, n).unwrap();
        let family: Vec<Measure> = (0..5).map(|_| random_measure(&mut rng, &s)).collect();
        let schedule: Vec<ScheduledSet> = (0..=n as usize)
            .step_by(2)
            .map(|r| ScheduledSet { label: format!("[0, {r}]"), atoms: (0..=r).collect() })
            .collect();
        let report = tightness_check(&s, family, &schedule, 1e-9).unwrap();
        for row in &report.outside {
            prop_assert!(row.windows(2).all(|w| w[1] <= w[0] + EXACT));
        }
        if let Some(k) = report.verdict {
            prop_assert!(report.sup_outside(k) <= 1e-9);
        }
    }

    #[test]
    fn escaping_mass_rows_stay_probabilities(n_max in 12usize..60) {
        let report = escaping_mass_demo(n_max, &default_vanishing_bank(), 0.05).unwrap();
        prop_assert_eq!(report.rows.len(), n_max);
        prop_assert!(report.leaves_probability_kernels());
        prop_assert_eq!(report.limit_row_mass, 0.0);
        prop_assert!(report.limit_pairings.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compact_actions_are_tight_at_once(seed in any::<u64>(), factor in 1.0f64..3.0) {
        let (p, _) = instance(seed, 3);
        let mut map = Relabel::identity(&p);
        map.compact_actions = true;
        let q = map.apply(&p, 0.0);
        prop_assert_eq!(action_schedule(&q, &DEFAULT_RADII).unwrap().len(), 1);
        let grid = build_lambda_grid(&q, &GridSpec::Deterministic, NO_CAP).unwrap();
        let cp = reduce(&q, &grid).unwrap();
        for x0 in 0..q.common_space().len() {
            let min = cp.values[x0].as_ref().unwrap().iter().copied().fold(f64::INFINITY, f64::min);
            let r = sublevel_tightness(&q, &cp, x0, factor * min.max(1e-9), &DEFAULT_RADII, 1e-9).unwrap();
            prop_assert_eq!(r.tightness.unwrap().verdict, Some(0));
        }
    }

    #[test]
    fn m_is_continuous_along_geometric_paths(seed in any::<u64>()) {
        let (p, mut rng) = instance(seed, 3);
        let grid = build_lambda_grid(&p, &GridSpec::Deterministic, NO_CAP).unwrap();
        let x0 = rng.gen_range(0..p.common_space().len());
        let sequences: Vec<LscSequence> = (0..4)
            .map(|k| {
                let from = grid.element(rng.gen_range(0..grid.len()));
                let to = grid.element(rng.gen_range(0..grid.len()));
                LscSequence { name: format!("{k}"), terms: geometric_path(&from, &to, 40).unwrap(), limit: from }
            })
            .collect();
        let settings = LscSettings { n0: 30, wstar_tol: 1e-8, tol: 1e-8, continuity_tol: 1e-8 };
        let report = lsc_probe(&p, x0, &sequences, settings).unwrap();
        for o in &report.outcomes {
            prop_assert!(o.gap >= -1e-8 && o.gap.abs() <= 1e-8);
        }
        prop_assert!(report.passes());
    }

    #[test]
    fn problem_files_round_trip(seed in any::<u64>()) {
        let (p, _) = instance(seed, 3);
        let text = ProblemFile::from_problem(&p, Metadata::default()).to_toml().unwrap();
        let once = parse_problem_str(&text, "first").unwrap();
        let again = ProblemFile::from_problem(&once.problem, Metadata::default()).to_toml().unwrap();
        prop_assert_eq!(&text, &again);
        prop_assert_eq!(once.problem.cost_table(), p.cost_table());
        prop_assert_eq!(once.problem.joint_weights(), p.joint_weights());
    }
}
