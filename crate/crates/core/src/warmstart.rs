//! Branching rules that prioritize a binary warm start and mark nodes whose
//! relaxation need not be solved.

use std::collections::BTreeSet;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::RelaxationSpec;

/// Suggested values for some binaries (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryWarmStart {
    pub lower: BTreeSet<usize>,
    pub upper: BTreeSet<usize>,
}

impl BinaryWarmStart {
    pub fn new(
        p: usize,
        lower: impl IntoIterator<Item = usize>,
        upper: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let lower: BTreeSet<usize> = lower.into_iter().collect();
        let upper: BTreeSet<usize> = upper.into_iter().collect();
        if lower.is_empty() && upper.is_empty() {
            return Err(Error::InvalidWarmStart("no index given".into()));
        }
        if let Some(&i) = lower.iter().chain(upper.iter()).find(|&&i| i >= p) {
            return Err(Error::InvalidWarmStart(format!(
                "index {} outside 1..={p}",
                i + 1
            )));
        }
        if let Some(&i) = lower.intersection(&upper).next() {
            return Err(Error::InvalidWarmStart(format!(
                "index {} in both lower and upper sets",
                i + 1
            )));
        }
        Ok(Self { lower, upper })
    }

    /// Warm start from a full or partial assignment (`Some(true)` = upper).
    pub fn from_assignment(values: &[Option<bool>]) -> Result<Self> {
        let lower = (0..values.len()).filter(|&i| values[i] == Some(false));
        let upper = (0..values.len()).filter(|&i| values[i] == Some(true));
        Self::new(values.len(), lower, upper)
    }

    /// `c~ = |lower| + |upper|`.
    pub fn cardinality(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.lower.contains(&j) || self.upper.contains(&j)
    }

    /// Same indices with every suggested value flipped.
    pub fn complement(&self) -> Self {
        Self {
            lower: self.upper.clone(),
            upper: self.lower.clone(),
        }
    }
}

/// Exclusive-or groups: exactly one binary of each group is at its upper
/// bound in any feasible point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sos1Structure {
    groups: Vec<Vec<usize>>,
    group_of: Vec<Option<usize>>,
}

impl Sos1Structure {
    pub fn new(p: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut group_of = vec![None; p];
        for (g, members) in groups.iter().enumerate() {
            if members.len() < 2 {
                return Err(Error::InvalidSos1(format!(
                    "group {} has fewer than two members",
                    g + 1
                )));
            }
            for &i in members {
                if i >= p {
                    return Err(Error::InvalidSos1(format!("index {} outside 1..={p}", i + 1)));
                }
                if group_of[i].replace(g).is_some() {
                    return Err(Error::InvalidSos1(format!(
                        "index {} appears in two groups",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self { groups, group_of })
    }

    /// One group spanning all `p` binaries.
    pub fn single(p: usize) -> Result<Self> {
        Self::new(p, vec![(0..p).collect()])
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, j: usize) -> Option<&[usize]> {
        self.group_of[j].map(|g| self.groups[g].as_slice())
    }

    /// True when some group is completely fixed without exactly one member
    /// at the upper bound.
    pub fn violated(&self, spec: &RelaxationSpec) -> bool {
        self.groups.iter().any(|g| {
            let up = g.iter().filter(|i| spec.fixed_upper.contains(i)).count();
            let lo = g.iter().filter(|i| spec.fixed_lower.contains(i)).count();
            (up + lo == g.len() && up != 1) || up > 1
        })
    }
}

/// Why a node is popped without solving its relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoQpKind {
    /// Inside the subtree prioritized by a warm start.
    WarmStart,
    /// Redundant or infeasible under an exclusive-or group.
    Sos1,
}

/// Branching index, exploration order and noQP marks for the two children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchDecision {
    pub j: usize,
    /// The child fixing `j` to its lower bound is explored first.
    pub lower_first: bool,
    pub mark_lower: Option<NoQpKind>,
    pub mark_upper: Option<NoQpKind>,
}

impl BranchDecision {
    /// Most-fractional choice with the midpoint exploration order.
    pub fn standard(j: usize, t: &DVector<f64>, l_bar: &DVector<f64>, u_bar: &DVector<f64>) -> Self {
        Self {
            j,
            lower_first: t[j] <= 0.5 * (l_bar[j] + u_bar[j]),
            mark_lower: None,
            mark_upper: None,
        }
    }
}

/// Index in `candidates` whose value is closest to its binary midpoint;
/// the smallest index wins ties (up to rounding). `None` only when
/// `candidates` is empty.
pub fn most_fractional(
    candidates: impl IntoIterator<Item = usize>,
    t: &DVector<f64>,
    l_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in candidates {
        let dist = (t[i] - 0.5 * (l_bar[i] + u_bar[i])).abs();
        if best.is_none_or(|(_, b)| dist < b - 1e-12) {
            best = Some((i, dist));
        }
    }
    best.map(|(i, _)| i)
}

/// Branch on the smallest free warm-started index. Returns `None` when no
/// free index is warm-started.
pub fn warmstart_branch(spec: &RelaxationSpec, ws: &BinaryWarmStart) -> Option<BranchDecision> {
    let j = spec.free().into_iter().find(|&i| ws.contains(i))?;
    Some(prioritized(spec, ws, j))
}

/// Warm-start branching on `j` with the subset test on the fixed sets.
pub(crate) fn prioritized(spec: &RelaxationSpec, ws: &BinaryWarmStart, j: usize) -> BranchDecision {
    let no_qp = spec.fixed_lower.is_subset(&ws.lower)
        && spec.fixed_upper.is_subset(&ws.upper)
        && spec.fixed_lower.len() + 1 + spec.fixed_upper.len() <= ws.cardinality();
    let mark = no_qp.then_some(NoQpKind::WarmStart);
    if ws.lower.contains(&j) {
        BranchDecision {
            j,
            lower_first: true,
            mark_lower: mark,
            mark_upper: None,
        }
    } else {
        BranchDecision {
            j,
            lower_first: false,
            mark_lower: None,
            mark_upper: mark,
        }
    }
}

/// Warm-start branching where the index is the most fractional free one.
/// Returns `None` when no free index is warm-started.
pub fn warmstart_branch_maxfrac(
    spec: &RelaxationSpec,
    t: &DVector<f64>,
    l_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
    ws: &BinaryWarmStart,
) -> Option<BranchDecision> {
    let free = spec.free();
    if !free.iter().any(|&i| ws.contains(i)) {
        return None;
    }
    let j = most_fractional(free, t, l_bar, u_bar)?;
    let no_qp = spec.fixed_lower.is_disjoint(&ws.upper)
        && spec.fixed_upper.is_disjoint(&ws.lower)
        && spec.fixed_lower.intersection(&ws.lower).count()
            + 1
            + spec.fixed_upper.intersection(&ws.upper).count()
            < ws.cardinality();
    let mark = no_qp.then_some(NoQpKind::WarmStart);
    Some(if ws.lower.contains(&j) {
        BranchDecision {
            j,
            lower_first: true,
            mark_lower: mark,
            mark_upper: None,
        }
    } else if ws.upper.contains(&j) {
        BranchDecision {
            j,
            lower_first: false,
            mark_lower: None,
            mark_upper: mark,
        }
    } else {
        BranchDecision {
            mark_lower: mark,
            mark_upper: mark,
            ..BranchDecision::standard(j, t, l_bar, u_bar)
        }
    })
}

/// Most-fractional branching with exclusive-or marks. Counts are taken
/// within the group of the branching index.
pub fn sos1_branch(
    spec: &RelaxationSpec,
    t: &DVector<f64>,
    l_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
    sos1: &Sos1Structure,
) -> Option<BranchDecision> {
    let j = most_fractional(spec.free(), t, l_bar, u_bar)?;
    let mut dec = BranchDecision::standard(j, t, l_bar, u_bar);
    if let Some(group) = sos1.group_of(j) {
        let s = group.len();
        let nl = group.iter().filter(|i| spec.fixed_lower.contains(i)).count();
        let nu = group.iter().filter(|i| spec.fixed_upper.contains(i)).count();
        let no_qp_0 = nl + 1 == s || nu > 1 || nl + 2 + nu == s;
        let no_qp_1 = nu >= 1 || nl + 2 + nu == s;
        dec.mark_lower = no_qp_0.then_some(NoQpKind::Sos1);
        dec.mark_upper = no_qp_1.then_some(NoQpKind::Sos1);
    }
    Some(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn unit(p: usize) -> (DVector<f64>, DVector<f64>) {
        (DVector::zeros(p), DVector::from_element(p, 1.0))
    }

    #[test]
    fn warm_start_validation() {
        assert!(BinaryWarmStart::new(3, [0], [0]).is_err());
        assert!(BinaryWarmStart::new(3, [3], []).is_err());
        assert!(BinaryWarmStart::new(3, [], []).is_err());
        let ws = BinaryWarmStart::from_assignment(&[Some(true), Some(false), None]).unwrap();
        assert_eq!(ws.cardinality(), 2);
        assert!(ws.upper.contains(&0) && ws.lower.contains(&1));
    }

    #[test]
    fn root_of_first_figure() {
        let ws = BinaryWarmStart::new(3, [1], [0]).unwrap();
        let dec = warmstart_branch(&RelaxationSpec::root(3), &ws).unwrap();
        assert_eq!(dec.j, 0);
        assert!(!dec.lower_first);
        assert_eq!(dec.mark_upper, Some(NoQpKind::WarmStart));
        assert_eq!(dec.mark_lower, None);
        let spec = RelaxationSpec::new(3, [], [0]).unwrap();
        let dec = warmstart_branch(&spec, &ws).unwrap();
        assert_eq!((dec.j, dec.lower_first), (1, true));
        assert_eq!(dec.mark_lower, Some(NoQpKind::WarmStart));
        let spec = RelaxationSpec::new(3, [1], [0]).unwrap();
        assert!(warmstart_branch(&spec, &ws).is_none());
    }

    #[test]
    fn maxfrac_marks_both_off_warm_index() {
        let ws = BinaryWarmStart::new(3, [0, 1], []).unwrap();
        let (lb, ub) = unit(3);
        let t = dvector![0.1, 0.2, 0.45];
        let dec = warmstart_branch_maxfrac(&RelaxationSpec::root(3), &t, &lb, &ub, &ws).unwrap();
        assert_eq!(dec.j, 2);
        assert!(dec.lower_first);
        assert_eq!(dec.mark_lower, Some(NoQpKind::WarmStart));
        assert_eq!(dec.mark_upper, Some(NoQpKind::WarmStart));
    }

    #[test]
    fn maxfrac_disjoint_warm_start_never_marks() {
        let ws = BinaryWarmStart::new(3, [0], []).unwrap();
        let (lb, ub) = unit(3);
        let t = dvector![0.5, 0.2, 0.3];
        let spec = RelaxationSpec::new(3, [], [0]).unwrap();
        assert!(warmstart_branch_maxfrac(&spec, &t, &lb, &ub, &ws).is_none());
        let spec = RelaxationSpec::new(3, [], [2]).unwrap();
        let ws = BinaryWarmStart::new(3, [0, 2], []).unwrap();
        let dec = warmstart_branch_maxfrac(&spec, &t, &lb, &ub, &ws).unwrap();
        assert_eq!((dec.mark_lower, dec.mark_upper), (None, None));
    }

    #[test]
    fn sos1_pair_marks() {
        let sos = Sos1Structure::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let (lb, ub) = unit(4);
        let t = dvector![0.5, 0.5, 0.3, 0.7];
        let spec = RelaxationSpec::new(4, [0, 2], [1]).unwrap();
        let dec = sos1_branch(&spec, &t, &lb, &ub, &sos).unwrap();
        assert_eq!(dec.j, 3);
        assert_eq!(dec.mark_lower, Some(NoQpKind::Sos1));
        assert_eq!(dec.mark_upper, None);
        assert!(sos.violated(&RelaxationSpec::new(4, [], [0, 1]).unwrap()));
        assert!(sos.violated(&RelaxationSpec::new(4, [2, 3], []).unwrap()));
        assert!(!sos.violated(&RelaxationSpec::new(4, [2], [3]).unwrap()));
    }

    #[test]
    fn sos1_validation() {
        assert!(Sos1Structure::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(Sos1Structure::new(3, vec![vec![0, 3]]).is_err());
        assert!(Sos1Structure::new(3, vec![vec![0]]).is_err());
    }

    #[test]
    fn most_fractional_ties() {
        let (lb, ub) = unit(3);
        assert_eq!(most_fractional(0..3, &dvector![0.5, 0.9, 0.1], &lb, &ub), Some(0));
        assert_eq!(most_fractional(0..2, &dvector![0.3, 0.7, 0.0], &lb, &ub), Some(0));
        assert_eq!(most_fractional(0..2, &dvector![0.1, 0.25, 0.0], &lb, &ub), Some(1));
    }
}
