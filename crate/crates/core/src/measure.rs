//! Finite-support measures, stochastic kernels and the duality pairing.
//!
//! Every space here is a finite grid of labelled atoms standing in for a
//! locally compact Polish space. Measures are dense weight vectors over those
//! atoms, and a kernel is one measure per source atom. Test functions
//! `f(y)(u)` play the role of elements of `L1(mu, C0(U))`; on a finite grid
//! every bounded table qualifies.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of (sub-)probability measures.
pub const SUM_TOL: f64 = 1e-9;

pub type Space = Arc<FiniteSpace>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<f64>>,
}

impl Atom {
    pub fn new(label: impl Into<String>) -> Self {
        Atom {
            label: label.into(),
            coords: None,
        }
    }

    pub fn with_coords(label: impl Into<String>, coords: Vec<f64>) -> Self {
        Atom {
            label: label.into(),
            coords: Some(coords),
        }
    }
}

/// A nonempty, ordered set of uniquely labelled atoms.
///
/// The `compact` flag marks grids that stand in for a compact space; it only
/// changes how the tightness diagnostics build their exhaustion schedules.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteSpace {
    label: String,
    atoms: Vec<Atom>,
    compact: bool,
}

impl FiniteSpace {
    pub fn new(label: impl Into<String>, atoms: Vec<Atom>) -> Result<Space> {
        Self::build(label.into(), atoms, false)
    }

    pub fn new_compact(label: impl Into<String>, atoms: Vec<Atom>, compact: bool) -> Result<Space> {
        Self::build(label.into(), atoms, compact)
    }

    fn build(label: String, atoms: Vec<Atom>, compact: bool) -> Result<Space> {
        let invalid = |reason: String| Error::InvalidSpace {
            space: label.clone(),
            reason,
        };
        if atoms.is_empty() {
            return Err(invalid("no atoms".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(atoms.len());
        for a in &atoms {
            if !seen.insert(a.label.as_str()) {
                return Err(invalid(format!("duplicate atom label `{}`", a.label)));
            }
        }
        let dims: Vec<usize> = atoms
            .iter()
            .filter_map(|a| a.coords.as_ref().map(Vec::len))
            .collect();
        if let Some(&d) = dims.first() {
            if dims.iter().any(|&k| k != d) {
                return Err(invalid("coordinate vectors differ in dimension".into()));
            }
        }
        for a in &atoms {
            if let Some(c) = &a.coords {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(format!("non-finite coordinate at `{}`", a.label)));
                }
            }
        }
        Ok(Arc::new(FiniteSpace {
            label,
            atoms,
            compact,
        }))
    }

    /// Atoms labelled by the given strings, without coordinates.
    pub fn labelled(label: impl Into<String>, labels: &[&str]) -> Result<Space> {
        Self::new(label, labels.iter().map(|l| Atom::new(*l)).collect())
    }

    /// `points` equally spaced one-dimensional atoms on `[start, stop]`.
    pub fn grid(label: impl Into<String>, start: f64, stop: f64, points: usize) -> Result<Space> {
        let label = label.into();
        if points == 0 || !start.is_finite() || !stop.is_finite() {
            return Err(Error::InvalidSpace {
                space: label,
                reason: "grid needs at least one point and finite bounds".into(),
            });
        }
        let step = if points > 1 {
            (stop - start) / (points - 1) as f64
        } else {
            0.0
        };
        let atoms = (0..points)
            .map(|k| {
                let v = if k + 1 == points && points > 1 {
                    stop
                } else {
                    start + step * k as f64
                };
                Atom::with_coords(format_coord(v), vec![v])
            })
            .collect();
        Self::new(label, atoms)
    }

    /// Atoms at the integer coordinates `lo..=hi`.
    pub fn integer_grid(label: impl Into<String>, lo: i64, hi: i64) -> Result<Space> {
        let atoms = (lo..=hi)
            .map(|k| Atom::with_coords(k.to_string(), vec![k as f64]))
            .collect();
        Self::new(label, atoms)
    }

    /// Cartesian product; the last factor varies fastest.
    pub fn product(label: impl Into<String>, parts: &[&Space]) -> Result<Space> {
        if parts.is_empty() {
            return Err(Error::Empty("product of zero spaces".into()));
        }
        let sizes: Vec<usize> = parts.iter().map(|s| s.len()).collect();
        let total: usize = sizes.iter().product();
        let with_coords = parts.iter().all(|s| s.dim().is_some());
        let mut atoms = Vec::with_capacity(total);
        let mut idx = vec![0usize; parts.len()];
        for _ in 0..total {
            let label = if parts.len() == 1 {
                parts[0].atoms[idx[0]].label.clone()
            } else {
                let inner: Vec<&str> = idx
                    .iter()
                    .zip(parts)
                    .map(|(&i, s)| s.atoms[i].label.as_str())
                    .collect();
                format!("({})", inner.join(","))
            };
            let coords = with_coords.then(|| {
                idx.iter()
                    .zip(parts)
                    .flat_map(|(&i, s)| s.atoms[i].coords.clone().unwrap_or_default())
                    .collect()
            });
            atoms.push(Atom { label, coords });
            for k in (0..parts.len()).rev() {
                idx[k] += 1;
                if idx[k] < sizes[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        let compact = parts.iter().all(|s| s.compact);
        Self::build(label.into(), atoms, compact)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_compact(&self) -> bool {
        self.compact
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a.label == label)
    }

    /// Coordinate dimension, when every atom carries coordinates.
    pub fn dim(&self) -> Option<usize> {
        let first = self.atoms[0].coords.as_ref()?.len();
        self.atoms
            .iter()
            .all(|a| a.coords.is_some())
            .then_some(first)
    }

    pub fn coords(&self, i: usize) -> Option<&[f64]> {
        self.atoms[i].coords.as_deref()
    }

    /// First coordinate of atom `i`, if present.
    pub fn coord(&self, i: usize) -> Option<f64> {
        self.coords(i).and_then(|c| c.first().copied())
    }

    /// Euclidean norm of the coordinates of atom `i`.
    pub fn norm(&self, i: usize) -> Option<f64> {
        self.coords(i)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

pub(crate) fn format_coord(v: f64) -> String {
    let s = format!("{v}");
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

pub fn same_space(a: &Space, b: &Space) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

pub(crate) fn ensure_same(expected: &Space, found: &Space) -> Result<()> {
    if same_space(expected, found) {
        Ok(())
    } else {
        Err(Error::SpaceMismatch {
            expected: expected.label().to_string(),
            found: found.label().to_string(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    Probability,
    SubProbability,
    Signed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measure {
    space: Space,
    weights: Vec<f64>,
    kind: MeasureKind,
}

impl Measure {
    pub fn new(space: Space, weights: Vec<f64>, kind: MeasureKind) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidMeasure {
            space: space.label().to_string(),
            reason,
        };
        if weights.len() != space.len() {
            return Err(invalid(format!(
                "{} weights for {} atoms",
                weights.len(),
                space.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(invalid(format!("non-finite weight at atom {i}")));
        }
        if kind != MeasureKind::Signed {
            if let Some(i) = weights.iter().position(|&w| w < 0.0) {
                return Err(invalid(format!("negative weight {} at atom {i}", weights[i])));
            }
            let total: f64 = weights.iter().sum();
            match kind {
                MeasureKind::Probability if (total - 1.0).abs() > SUM_TOL => {
                    return Err(invalid(format!("total mass {total} is not 1")));
                }
                MeasureKind::SubProbability if total > 1.0 + SUM_TOL => {
                    return Err(invalid(format!("total mass {total} exceeds 1")));
                }
                _ => {}
            }
        }
        Ok(Measure {
            space,
            weights,
            kind,
        })
    }

    pub fn probability(space: Space, weights: Vec<f64>) -> Result<Self> {
        Self::new(space, weights, MeasureKind::Probability)
    }

    pub fn dirac(space: Space, atom: usize) -> Self {
        assert!(atom < space.len(), "atom index out of range");
        let mut weights = vec![0.0; space.len()];
        weights[atom] = 1.0;
        Measure {
            space,
            weights,
            kind: MeasureKind::Probability,
        }
    }

    pub fn uniform(space: Space) -> Self {
        let n = space.len();
        Measure {
            weights: vec![1.0 / n as f64; n],
            space,
            kind: MeasureKind::Probability,
        }
    }

    /// The degenerate measure assigning zero to every set.
    pub fn zero(space: Space) -> Self {
        Measure {
            weights: vec![0.0; space.len()],
            space,
            kind: MeasureKind::SubProbability,
        }
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Sum of absolute weights.
    pub fn tv_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn mass_of(&self, atoms: &[usize]) -> f64 {
        atoms.iter().map(|&i| self.weights[i]).sum()
    }

    /// Atoms with nonzero weight.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i, *w))
    }

    /// Index of the atom carrying all the mass, for point masses.
    pub fn point_mass(&self) -> Option<usize> {
        let mut found = None;
        for (i, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            if w != 1.0 || found.is_some() {
                return None;
            }
            found = Some(i);
        }
        found
    }

    /// `(1 - t) * self + t * other`; the kind is the weaker of the two.
    pub fn mix(&self, other: &Measure, t: f64) -> Result<Measure> {
        ensure_same(&self.space, &other.space)?;
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        let kind = if (0.0..=1.0).contains(&t) {
            self.kind.max(other.kind)
        } else {
            MeasureKind::Signed
        };
        Measure::new(self.space.clone(), weights, kind)
    }
}

/// A kernel from `source` to `target`: one measure per source atom.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    source: Space,
    target: Space,
    rows: Vec<Measure>,
    kind: MeasureKind,
}

impl Kernel {
    pub fn new(source: Space, target: Space, rows: Vec<Measure>) -> Result<Self> {
        if rows.len() != source.len() {
            return Err(Error::Shape(format!(
                "kernel from `{}` needs {} rows, got {}",
                source.label(),
                source.len(),
                rows.len()
            )));
        }
        for row in &rows {
            ensure_same(&target, row.space())?;
        }
        let kind = rows
            .iter()
            .map(Measure::kind)
            .max()
            .unwrap_or(MeasureKind::Probability);
        Ok(Kernel {
            source,
            target,
            rows,
            kind,
        })
    }

    pub fn from_rows(
        source: Space,
        target: Space,
        rows: Vec<Vec<f64>>,
        kind: MeasureKind,
    ) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|w| Measure::new(target.clone(), w, kind))
            .collect::<Result<Vec<_>>>()?;
        Self::new(source, target, rows)
    }

    /// Point-mass kernel sending source atom `s` to target atom `actions[s]`.
    pub fn deterministic(source: Space, target: Space, actions: &[usize]) -> Result<Self> {
        if actions.len() != source.len() {
            return Err(Error::Shape(format!(
                "deterministic kernel from `{}` needs {} actions, got {}",
                source.label(),
                source.len(),
                actions.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= target.len()) {
            return Err(Error::Shape(format!(
                "action index {a} outside `{}`",
                target.label()
            )));
        }
        let rows = actions
            .iter()
            .map(|&a| Measure::dirac(target.clone(), a))
            .collect();
        Ok(Kernel {
            source,
            target,
            rows,
            kind: MeasureKind::Probability,
        })
    }

    pub fn constant(source: Space, row: &Measure) -> Self {
        Kernel {
            rows: vec![row.clone(); source.len()],
            target: row.space().clone(),
            kind: row.kind(),
            source,
        }
    }

    pub fn source(&self) -> &Space {
        &self.source
    }

    pub fn target(&self) -> &Space {
        &self.target
    }

    pub fn rows(&self) -> &[Measure] {
        &self.rows
    }

    pub fn row(&self, s: usize) -> &Measure {
        &self.rows[s]
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn weight(&self, s: usize, t: usize) -> f64 {
        self.rows[s].weights[t]
    }

    /// Action table when every row is a point mass.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        self.rows.iter().map(Measure::point_mass).collect()
    }

    pub fn mix(&self, other: &Kernel, t: f64) -> Result<Kernel> {
        ensure_same(&self.source, &other.source)?;
        ensure_same(&self.target, &other.target)?;
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.mix(b, t))
            .collect::<Result<Vec<_>>>()?;
        Kernel::new(self.source.clone(), self.target.clone(), rows)
    }
}

/// A Carathéodory test function `f(y)(u)` tabulated on `base x action`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    base: Space,
    action: Space,
    values: Vec<f64>,
}

impl TestFunction {
    pub fn new(base: Space, action: Space, values: Vec<f64>) -> Result<Self> {
        if values.len() != base.len() * action.len() {
            return Err(Error::Shape(format!(
                "test function on `{}` x `{}` needs {} values, got {}",
                base.label(),
                action.label(),
                base.len() * action.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Rejected("test function has non-finite values".into()));
        }
        Ok(TestFunction {
            base,
            action,
            values,
        })
    }

    pub fn from_fn(base: Space, action: Space, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(base.len() * action.len());
        for y in 0..base.len() {
            for u in 0..action.len() {
                values.push(f(y, u));
            }
        }
        Self::new(base, action, values)
    }

    pub fn base(&self) -> &Space {
        &self.base
    }

    pub fn action(&self) -> &Space {
        &self.action
    }

    pub fn value(&self, y: usize, u: usize) -> f64 {
        self.values[y * self.action.len() + u]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &TestFunction, b: f64) -> Result<TestFunction> {
        ensure_same(&self.base, &other.base)?;
        ensure_same(&self.action, &other.action)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        TestFunction::new(self.base.clone(), self.action.clone(), values)
    }

    /// Largest `|f(y)(u)|` over the given action atoms, across all `y`.
    pub fn max_abs_on(&self, actions: &[usize]) -> f64 {
        (0..self.base.len())
            .flat_map(|y| actions.iter().map(move |&u| (y, u)))
            .map(|(y, u)| self.value(y, u).abs())
            .fold(0.0, f64::max)
    }
}

/// The default separating bank: products `1{y = y_j} * 1{u = u_k}`, ordered by
/// `(j, k)`. On a finite grid these are continuous and span every table.
pub fn indicator_bank(base: &Space, action: &Space) -> Vec<TestFunction> {
    let (ny, nu) = (base.len(), action.len());
    let mut bank = Vec::with_capacity(ny * nu);
    for j in 0..ny {
        for k in 0..nu {
            let mut values = vec![0.0; ny * nu];
            values[j * nu + k] = 1.0;
            bank.push(TestFunction {
                base: base.clone(),
                action: action.clone(),
                values,
            });
        }
    }
    bank
}

/// Total variation distance `2 sup_D |a(D) - b(D)|`.
///
/// For measures of equal total mass this is the sum of absolute weight
/// differences.
pub fn tv_distance(a: &Measure, b: &Measure) -> Result<f64> {
    ensure_same(&a.space, &b.space)?;
    let (mut pos, mut neg) = (0.0, 0.0);
    for (x, y) in a.weights.iter().zip(&b.weights) {
        let d = x - y;
        if d > 0.0 {
            pos += d;
        } else {
            neg -= d;
        }
    }
    Ok(2.0 * f64::max(pos, neg))
}

/// Product measure on the product of the parts' spaces.
pub fn product_measure(parts: &[&Measure]) -> Result<Measure> {
    if parts.is_empty() {
        return Err(Error::Empty("product of zero measures".into()));
    }
    if let Some(p) = parts.iter().find(|p| p.kind == MeasureKind::Signed) {
        return Err(Error::Rejected(format!(
            "product of signed measure on `{}`",
            p.space.label()
        )));
    }
    let spaces: Vec<&Space> = parts.iter().map(|p| &p.space).collect();
    let label = spaces
        .iter()
        .map(|s| s.label())
        .collect::<Vec<_>>()
        .join("x");
    let space = FiniteSpace::product(label, &spaces)?;
    let mut weights = vec![1.0];
    for p in parts {
        let mut next = Vec::with_capacity(weights.len() * p.len());
        for w in &weights {
            for v in &p.weights {
                next.push(w * v);
            }
        }
        weights = next;
    }
    let kind = if parts.iter().all(|p| p.kind == MeasureKind::Probability) {
        MeasureKind::Probability
    } else {
        MeasureKind::SubProbability
    };
    Measure::new(space, weights, kind)
}

/// The duality pairing `sum_y mu(y) sum_u f(y)(u) gamma(y)(u)`.
pub fn pairing(gamma: &Kernel, f: &TestFunction, mu: &Measure) -> Result<f64> {
    ensure_same(&gamma.source, &f.base)?;
    ensure_same(&gamma.source, &mu.space)?;
    ensure_same(&gamma.target, &f.action)?;
    if mu.kind != MeasureKind::Probability {
        return Err(Error::Rejected("pairing needs a probability reference measure".into()));
    }
    let nu = gamma.target.len();
    let mut total = 0.0;
    for (y, &m) in mu.weights.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let fy = &f.values[y * nu..(y + 1) * nu];
        let inner: f64 = fy
            .iter()
            .zip(&gamma.rows[y].weights)
            .map(|(a, b)| a * b)
            .sum();
        total += m * inner;
    }
    Ok(total)
}

/// `||f||_1 = sum_y mu(y) max_u |f(y)(u)|`.
pub fn f_norm1(f: &TestFunction, mu: &Measure) -> Result<f64> {
    ensure_same(&f.base, &mu.space)?;
    let nu = f.action.len();
    Ok(mu
        .weights
        .iter()
        .enumerate()
        .map(|(y, m)| {
            let sup = f.values[y * nu..(y + 1) * nu]
                .iter()
                .fold(0.0_f64, |acc, v| acc.max(v.abs()));
            m * sup
        })
        .sum())
}

/// Essential sup over `reference` of the rows' total variation norms.
/// Atoms of zero reference mass are ignored.
pub fn kernel_inf_norm(gamma: &Kernel, reference: &Measure) -> Result<f64> {
    ensure_same(&gamma.source, &reference.space)?;
    Ok(gamma
        .rows
        .iter()
        .zip(&reference.weights)
        .filter(|(_, &m)| m > 0.0)
        .map(|(row, _)| row.tv_norm())
        .fold(0.0, f64::max))
}

/// Bounded metric for the weak-* topology relative to a countable bank:
/// `sum_k 2^-k |d_k| / (1 + |d_k|)` with `d_k` the pairing difference
/// against the k-th bank member (k starting at 1).
pub fn wstar_distance(g1: &Kernel, g2: &Kernel, bank: &[TestFunction], mu: &Measure) -> Result<f64> {
    if bank.is_empty() {
        return Err(Error::Empty("w* distance needs a nonempty test-function bank".into()));
    }
    let mut total = 0.0;
    let mut scale = 0.5;
    for f in bank {
        let d = (pairing(g1, f, mu)? - pairing(g2, f, mu)?).abs();
        total += scale * d / (1.0 + d);
        scale *= 0.5;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> Space {
        FiniteSpace::labelled("P", &["p0", "p1"]).unwrap()
    }

    #[test]
    fn space_rejects_duplicates_and_empty() {
        assert!(FiniteSpace::labelled("S", &[]).is_err());
        assert!(FiniteSpace::labelled("S", &["a", "a"]).is_err());
        let mixed = vec![
            Atom::with_coords("a", vec![0.0]),
            Atom::with_coords("b", vec![0.0, 1.0]),
        ];
        assert!(FiniteSpace::new("S", mixed).is_err());
    }

    #[test]
    fn grid_endpoints_exact() {
        let g = FiniteSpace::grid("U", -10.0, 10.0, 41).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g.coord(0), Some(-10.0));
        assert_eq!(g.coord(20), Some(0.0));
        assert_eq!(g.coord(40), Some(10.0));
        assert_eq!(g.atom(20).label, "0");
    }

    #[test]
    fn measure_invariants() {
        let s = two();
        assert!(Measure::probability(s.clone(), vec![0.5, 0.6]).is_err());
        assert!(Measure::probability(s.clone(), vec![1.5, -0.5]).is_err());
        assert!(Measure::new(s.clone(), vec![0.5, 0.6], MeasureKind::SubProbability).is_err());
        assert!(Measure::new(s.clone(), vec![0.2, 0.3], MeasureKind::SubProbability).is_ok());
        assert!(Measure::new(s.clone(), vec![1.5, -0.5], MeasureKind::Signed).is_ok());
        assert!(Measure::new(s, vec![f64::NAN, 0.0], MeasureKind::Signed).is_err());
    }

    #[test]
    fn tv_examples() {
        let s = two();
        let u = Measure::uniform(s.clone());
        let d0 = Measure::dirac(s.clone(), 0);
        let d1 = Measure::dirac(s.clone(), 1);
        assert_eq!(tv_distance(&u, &u).unwrap(), 0.0);
        assert_eq!(tv_distance(&d0, &d1).unwrap(), 2.0);
        assert_eq!(tv_distance(&u, &d0).unwrap(), 1.0);
        let other = FiniteSpace::labelled("Q", &["q0", "q1"]).unwrap();
        assert!(tv_distance(&u, &Measure::uniform(other)).is_err());
    }

    #[test]
    fn tv_uses_sup_over_sets_for_unequal_mass() {
        let s = two();
        let d0 = Measure::dirac(s.clone(), 0);
        let z = Measure::zero(s);
        // sup_D |d0(D) - 0(D)| = 1
        assert_eq!(tv_distance(&d0, &z).unwrap(), 2.0);
    }

    #[test]
    fn product_examples() {
        let p = two();
        let q = FiniteSpace::labelled("Q", &["q0", "q1"]).unwrap();
        let single = product_measure(&[&Measure::dirac(p.clone(), 0)]).unwrap();
        assert_eq!(single.weights(), &[1.0, 0.0]);
        assert_eq!(single.space().atom(0).label, "p0");

        let pm = product_measure(&[&Measure::dirac(p.clone(), 0), &Measure::dirac(q.clone(), 1)]).unwrap();
        assert_eq!(pm.point_mass(), Some(1));
        assert_eq!(pm.space().atom(1).label, "(p0,q1)");

        let uu = product_measure(&[&Measure::uniform(p.clone()), &Measure::uniform(q)]).unwrap();
        assert_eq!(uu.weights(), &[0.25; 4]);
        assert_eq!(uu.kind(), MeasureKind::Probability);

        let sub = product_measure(&[&Measure::zero(p.clone()), &Measure::uniform(p)]).unwrap();
        assert_eq!(sub.kind(), MeasureKind::SubProbability);
        assert!(product_measure(&[]).is_err());
    }

    #[test]
    fn pairing_examples() {
        let y = FiniteSpace::labelled("Y", &["a", "b", "c"]).unwrap();
        let u = FiniteSpace::labelled("U", &["0", "1"]).unwrap();
        let mu = Measure::probability(y.clone(), vec![0.2, 0.3, 0.5]).unwrap();
        let gamma = Kernel::from_rows(
            y.clone(),
            u.clone(),
            vec![vec![0.1, 0.9], vec![0.5, 0.5], vec![1.0, 0.0]],
            MeasureKind::Probability,
        )
        .unwrap();
        let one = TestFunction::from_fn(y.clone(), u.clone(), |_, _| 1.0).unwrap();
        let zero = TestFunction::from_fn(y.clone(), u.clone(), |_, _| 0.0).unwrap();
        assert!((pairing(&gamma, &one, &mu).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pairing(&gamma, &zero, &mu).unwrap(), 0.0);

        // deterministic rows: brute-force double sum against direct substitution
        let det = Kernel::deterministic(y.clone(), u.clone(), &[1, 0, 1]).unwrap();
        let f = TestFunction::from_fn(y.clone(), u.clone(), |a, b| (a as f64 + 1.0) * (b as f64 - 0.3)).unwrap();
        let mut brute = 0.0;
        for a in 0..3 {
            for b in 0..2 {
                brute += mu.weight(a) * det.weight(a, b) * f.value(a, b);
            }
        }
        let direct: f64 = [1usize, 0, 1]
            .iter()
            .enumerate()
            .map(|(a, &b)| mu.weight(a) * f.value(a, b))
            .sum();
        let got = pairing(&det, &f, &mu).unwrap();
        assert!((got - brute).abs() < 1e-15);
        assert!((got - direct).abs() < 1e-15);

        let sub = Measure::new(y.clone(), vec![0.2, 0.3, 0.1], MeasureKind::SubProbability).unwrap();
        assert!(pairing(&gamma, &one, &sub).is_err());
        let other = FiniteSpace::labelled("V", &["0", "1"]).unwrap();
        let bad = TestFunction::from_fn(y, other, |_, _| 1.0).unwrap();
        assert!(pairing(&gamma, &bad, &mu).is_err());
    }

    #[test]
    fn norm_examples() {
        let y = FiniteSpace::labelled("Y", &["a", "b", "c", "d"]).unwrap();
        let u = FiniteSpace::labelled("U", &["0", "1"]).unwrap();
        let mu = Measure::uniform(y.clone());
        let zero = TestFunction::from_fn(y.clone(), u.clone(), |_, _| 0.0).unwrap();
        let c = TestFunction::from_fn(y.clone(), u.clone(), |_, _| -2.5).unwrap();
        let ind = TestFunction::from_fn(y.clone(), u.clone(), |a, _| if a == 0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(f_norm1(&zero, &mu).unwrap(), 0.0);
        assert!((f_norm1(&c, &mu).unwrap() - 2.5).abs() < 1e-15);
        assert!((f_norm1(&ind, &mu).unwrap() - 0.25).abs() < 1e-15);

        let prob = Kernel::constant(y.clone(), &Measure::uniform(u.clone()));
        assert!((kernel_inf_norm(&prob, &mu).unwrap() - 1.0).abs() < 1e-15);
        let z = Kernel::constant(y.clone(), &Measure::zero(u.clone()));
        assert_eq!(kernel_inf_norm(&z, &mu).unwrap(), 0.0);
        let signed = Measure::new(u.clone(), vec![0.5, -0.5], MeasureKind::Signed).unwrap();
        let s = Kernel::constant(y.clone(), &signed);
        assert_eq!(kernel_inf_norm(&s, &mu).unwrap(), 1.0);

        // rows at zero-mass atoms are ignored
        let big = Measure::new(u.clone(), vec![3.0, 0.0], MeasureKind::Signed).unwrap();
        let mut rows = vec![Measure::uniform(u.clone()); 4];
        rows[3] = big;
        let k = Kernel::new(y.clone(), u, rows).unwrap();
        let partial = Measure::probability(y, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!(kernel_inf_norm(&k, &partial).unwrap(), 1.0);
        assert_eq!(kernel_inf_norm(&k, &mu).unwrap(), 3.0);
    }

    #[test]
    fn wstar_single_function_bank() {
        let y = FiniteSpace::labelled("Y", &["a", "b"]).unwrap();
        let u = FiniteSpace::labelled("U", &["0", "1"]).unwrap();
        let mu = Measure::uniform(y.clone());
        let g1 = Kernel::deterministic(y.clone(), u.clone(), &[0, 0]).unwrap();
        let g2 = Kernel::deterministic(y.clone(), u.clone(), &[1, 1]).unwrap();
        let f = TestFunction::from_fn(y.clone(), u.clone(), |_, b| 3.0 * b as f64).unwrap();
        let d = (pairing(&g1, &f, &mu).unwrap() - pairing(&g2, &f, &mu).unwrap()).abs();
        assert_eq!(d, 3.0);
        let got = wstar_distance(&g1, &g2, std::slice::from_ref(&f), &mu).unwrap();
        assert!((got - d / (2.0 * (1.0 + d))).abs() < 1e-15);
        assert_eq!(wstar_distance(&g1, &g1, &[f], &mu).unwrap(), 0.0);
        assert!(wstar_distance(&g1, &g2, &[], &mu).is_err());
    }

    #[test]
    fn wstar_ignores_zero_mass_rows() {
        let y = FiniteSpace::labelled("Y", &["a", "b"]).unwrap();
        let u = FiniteSpace::labelled("U", &["0", "1"]).unwrap();
        let mu = Measure::probability(y.clone(), vec![1.0, 0.0]).unwrap();
        let g1 = Kernel::deterministic(y.clone(), u.clone(), &[0, 0]).unwrap();
        let g2 = Kernel::deterministic(y.clone(), u.clone(), &[0, 1]).unwrap();
        let bank = indicator_bank(&y, &u);
        assert_eq!(wstar_distance(&g1, &g2, &bank, &mu).unwrap(), 0.0);
    }
}
