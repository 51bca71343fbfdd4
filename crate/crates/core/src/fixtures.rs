//! Reference instances and a seeded random-instance generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::measure::{Atom, FiniteSpace, Measure, Space};
use crate::model::{CostSpec, ObservationChannel, TeamProblem, TeamSpec};

fn binary(label: &str) -> Space {
    FiniteSpace::labelled(label, &["0", "1"]).expect("two distinct labels")
}

/// Two agents, binary everything. `x` is uniform and `x0` agrees with it with
/// probability 0.8; each agent sees `x` through a symmetric channel with
/// crossover 0.1 and pays for missing `x` and for disagreeing.
pub fn toy1() -> TeamProblem {
    let state = binary("X");
    let common = binary("X0");
    let observations = vec![binary("Y1"), binary("Y2")];
    let actions = vec![binary("U1"), binary("U2")];
    let channels = observations
        .iter()
        .enumerate()
        .map(|(i, y)| ObservationChannel::symmetric(i, y, 2, 0.1))
        .collect::<Result<Vec<_>>>()
        .expect("valid channel");
    TeamProblem::new(TeamSpec {
        state,
        common,
        observations,
        actions,
        joint_law: vec![0.4, 0.1, 0.1, 0.4],
        channels,
        cost: CostSpec::Mismatch {
            state: vec![1.0, 1.0],
            pairwise: 1.0,
        },
    })
    .expect("toy instance is valid")
}

/// Two agents with a pure coordination cost: both playing `0` costs 0.5, both
/// playing `1` costs 0, disagreeing costs 1. Observations carry no
/// information, so "everyone plays 0" is a person-by-person fixed point that
/// is not globally optimal.
pub fn coordination() -> TeamProblem {
    let state = binary("X");
    let common = FiniteSpace::labelled("X0", &["c"]).expect("one label");
    let observations = vec![
        FiniteSpace::labelled("Y1", &["y"]).expect("one label"),
        FiniteSpace::labelled("Y2", &["y"]).expect("one label"),
    ];
    let actions = vec![binary("U1"), binary("U2")];
    let channels = observations
        .iter()
        .enumerate()
        .map(|(i, y)| ObservationChannel::from_conditional(i, Measure::uniform(y.clone()), &[vec![1.0], vec![1.0]]))
        .collect::<Result<Vec<_>>>()
        .expect("valid channel");
    let block = [0.5, 1.0, 1.0, 0.0];
    let values = block.iter().chain(block.iter()).copied().collect();
    TeamProblem::new(TeamSpec {
        state,
        common,
        observations,
        actions,
        joint_law: vec![0.5, 0.5],
        channels,
        cost: CostSpec::Table { values },
    })
    .expect("coordination instance is valid")
}

/// Parameters of the Gaussian-style grid instance.
#[derive(Clone, Copy, Debug)]
pub struct GridInstance {
    pub state_points: usize,
    pub observation_points: usize,
    pub action_points: usize,
    pub action_bound: f64,
    pub noise: f64,
    pub compact_actions: bool,
}

impl Default for GridInstance {
    fn default() -> Self {
        GridInstance {
            state_points: 5,
            observation_points: 5,
            action_points: 41,
            action_bound: 10.0,
            noise: 4.0,
            compact_actions: false,
        }
    }
}

fn grid_with_flag(label: &str, bound: f64, points: usize, compact: bool) -> Space {
    let g = FiniteSpace::grid(label, -bound, bound, points).expect("finite grid");
    FiniteSpace::new_compact(label, g.atoms().to_vec(), compact).expect("grid atoms are distinct")
}

/// Two agents on one-dimensional grids. `x` and `x0` are correlated
/// discretized Gaussians on `[-2, 2]`; observations are `x` plus discretized
/// Gaussian noise; the cost is `(u1 + u2 - x)^2 + 0.1 (u1^2 + u2^2)`.
pub fn toy_grid(params: GridInstance) -> TeamProblem {
    let state = FiniteSpace::grid("X", -2.0, 2.0, params.state_points).expect("grid");
    let common = FiniteSpace::grid("X0", -2.0, 2.0, params.state_points).expect("grid");
    let observations: Vec<Space> = ["Y1", "Y2"]
        .iter()
        .map(|l| FiniteSpace::grid(*l, -2.0, 2.0, params.observation_points).expect("grid"))
        .collect();
    let actions: Vec<Space> = ["U1", "U2"]
        .iter()
        .map(|l| grid_with_flag(l, params.action_bound, params.action_points, params.compact_actions))
        .collect();
    let mut joint = Vec::with_capacity(state.len() * common.len());
    for x in 0..state.len() {
        let cx = state.coord(x).expect("coords");
        for x0 in 0..common.len() {
            let d = common.coord(x0).expect("coords") - cx;
            joint.push((-cx * cx / 2.0).exp() * (-d * d / 2.0).exp());
        }
    }
    let total: f64 = joint.iter().sum();
    joint.iter_mut().for_each(|w| *w /= total);
    let channels = observations
        .iter()
        .enumerate()
        .map(|(i, y)| ObservationChannel::additive_noise(i, y, &state, params.noise))
        .collect::<Result<Vec<_>>>()
        .expect("valid channel");
    TeamProblem::new(TeamSpec {
        state,
        common,
        observations,
        actions,
        joint_law: joint,
        channels,
        cost: CostSpec::Quadratic {
            team: 1.0,
            tracking: Vec::new(),
            effort: vec![0.1, 0.1],
            coupling: 0.0,
        },
    })
    .expect("grid instance is valid")
}

/// Sizes of a random instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sizes {
    pub state: usize,
    pub common: usize,
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Sizes {
    /// Two agents with every size drawn from `1..=max`.
    pub fn sample(rng: &mut impl Rng, max: usize) -> Sizes {
        let mut pick = || rng.gen_range(1..=max);
        Sizes {
            state: pick(),
            common: pick(),
            observations: vec![pick(), pick()],
            actions: vec![pick(), pick()],
        }
    }
}

fn indexed(label: &str, n: usize) -> Space {
    let atoms = (0..n).map(|k| Atom::new(format!("{}{k}", label.to_lowercase()))).collect();
    FiniteSpace::new(label, atoms).expect("distinct labels")
}

fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Random instance: joint law and channel rows drawn from the simplex with
/// full support, uniform references, costs uniform in `[0, 1)`.
pub fn random_instance(rng: &mut impl Rng, sizes: &Sizes) -> TeamProblem {
    let state = indexed("X", sizes.state);
    let common = indexed("X0", sizes.common);
    let n = sizes.observations.len();
    let observations: Vec<Space> = (0..n)
        .map(|i| indexed(&format!("Y{}", i + 1), sizes.observations[i]))
        .collect();
    let actions: Vec<Space> = (0..n)
        .map(|i| indexed(&format!("U{}", i + 1), sizes.actions[i]))
        .collect();
    let joint_law = random_simplex(rng, sizes.state * sizes.common);
    let channels = observations
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let law: Vec<Vec<f64>> = (0..sizes.state).map(|_| random_simplex(rng, y.len())).collect();
            ObservationChannel::from_conditional(i, Measure::uniform(y.clone()), &law)
        })
        .collect::<Result<Vec<_>>>()
        .expect("valid channel");
    let total = sizes.state
        * sizes.common
        * sizes.observations.iter().product::<usize>()
        * sizes.actions.iter().product::<usize>();
    let values = (0..total).map(|_| rng.gen::<f64>()).collect();
    TeamProblem::new(TeamSpec {
        state,
        common,
        observations,
        actions,
        joint_law,
        channels,
        cost: CostSpec::Table { values },
    })
    .expect("random instance is valid")
}

/// Seeded stream of random instances.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
