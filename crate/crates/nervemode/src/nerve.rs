//! The nerve of a mode portfolio: an abstract simplicial complex whose
//! vertices are modes and whose simplices are the mode subsets certified
//! as simultaneously valid descriptions of the system.
//!
//! The complex is stored as the downward closure of the declared
//! intersection sets, so membership queries are set lookups. Points of
//! the complex carry sparse barycentric coordinates over the vertices;
//! a point is valid exactly when its support is a stored simplex.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the barycentric normalisation check (Σ t = 1).
pub const NORMALISATION_TOLERANCE: f64 = 1e-9;

/// Largest declared intersection set we accept; the closure of a set of
/// size n stores 2^n − 1 faces.
pub const MAX_DECLARED_SET: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NerveError {
    #[error("mode name must be non-empty")]
    EmptyModeName,
    #[error("declared intersection set is empty")]
    EmptyDeclaredSet,
    #[error("duplicate vertex `{0}` within one declared set")]
    DuplicateVertexName(String),
    #[error("declared set has {0} vertices, more than the supported {MAX_DECLARED_SET}")]
    DeclaredSetTooLarge(usize),
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("barycentric coordinates sum to {0}, not 1 (tolerance {NORMALISATION_TOLERANCE})")]
    NotNormalized(f64),
    #[error("coordinate for `{0}` is not strictly positive")]
    NonPositiveCoordinate(String),
    #[error("a nerve point needs at least one coordinate")]
    EmptySupport,
}

/// Identifier of a mode of physical behaviour. Ordered lexicographically
/// by name; unique within a system.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(String);

impl ModeId {
    pub fn new(name: impl Into<String>) -> Result<Self, NerveError> {
        let name = name.into();
        if name.is_empty() {
            return Err(NerveError::EmptyModeName);
        }
        Ok(ModeId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Convenience constructor for mode ids from literals.
///
/// Panics on an empty name, which is a programming error at call sites
/// using literals; fallible construction is [`ModeId::new`].
pub fn mode(name: &str) -> ModeId {
    ModeId::new(name).expect("mode name must be non-empty")
}

/// A simplex: a non-empty set of modes, stored in canonical sorted order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Simplex(Vec<ModeId>);

impl Simplex {
    /// Builds a simplex from the given vertices, deduplicating and sorting.
    /// Fails on an empty vertex set.
    pub fn new(vertices: impl IntoIterator<Item = ModeId>) -> Result<Self, NerveError> {
        let set: BTreeSet<ModeId> = vertices.into_iter().collect();
        if set.is_empty() {
            return Err(NerveError::EmptyDeclaredSet);
        }
        Ok(Simplex(set.into_iter().collect()))
    }

    pub fn vertices(&self) -> &[ModeId] {
        &self.0
    }

    /// Dimension = vertex count − 1.
    pub fn dimension(&self) -> usize {
        self.0.len() - 1
    }
}

/// The nerve: vertices plus a downward-closed family of simplices.
///
/// Immutable after construction; equality is structural, so construction
/// is deterministic in the declared-set ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nerve {
    vertices: BTreeSet<ModeId>,
    simplices: BTreeSet<Simplex>,
}

impl Nerve {
    /// Builds the nerve from designer-declared nonempty intersection sets.
    ///
    /// The result contains exactly the downward closure of the declared
    /// sets; every mentioned vertex appears as a 0-simplex. A duplicate
    /// vertex within one declared set rejects the input.
    pub fn build(declared: &[Vec<ModeId>]) -> Result<Self, NerveError> {
        let mut vertices = BTreeSet::new();
        let mut simplices = BTreeSet::new();

        for set in declared {
            if set.is_empty() {
                return Err(NerveError::EmptyDeclaredSet);
            }
            if set.len() > MAX_DECLARED_SET {
                return Err(NerveError::DeclaredSetTooLarge(set.len()));
            }
            let mut seen = BTreeSet::new();
            for v in set {
                if v.as_str().is_empty() {
                    return Err(NerveError::EmptyModeName);
                }
                if !seen.insert(v.clone()) {
                    return Err(NerveError::DuplicateVertexName(v.as_str().to_owned()));
                }
            }
            let sorted: Vec<ModeId> = seen.iter().cloned().collect();
            vertices.extend(sorted.iter().cloned());
            // Downward closure: every non-empty subset is a face.
            for mask in 1u32..(1 << sorted.len()) {
                let face: Vec<ModeId> = sorted
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, v)| v.clone())
                    .collect();
                simplices.insert(Simplex(face));
            }
        }

        Ok(Nerve { vertices, simplices })
    }

    /// The nerve with no modes at all.
    pub fn empty() -> Self {
        Nerve { vertices: BTreeSet::new(), simplices: BTreeSet::new() }
    }

    pub fn vertices(&self) -> impl Iterator<Item = &ModeId> {
        self.vertices.iter()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn has_vertex(&self, v: &ModeId) -> bool {
        self.vertices.contains(v)
    }

    pub fn simplices(&self) -> impl Iterator<Item = &Simplex> {
        self.simplices.iter()
    }

    /// True iff `support` is non-empty and a simplex of this nerve
    /// (directly or by closure). Unknown modes yield `false`; the empty
    /// set is never a simplex.
    pub fn is_simplex<'a>(&self, support: impl IntoIterator<Item = &'a ModeId>) -> bool {
        let set: BTreeSet<&ModeId> = support.into_iter().collect();
        if set.is_empty() {
            return false;
        }
        let key = Simplex(set.into_iter().cloned().collect());
        self.simplices.contains(&key)
    }

    /// True iff the support of `point` is a simplex of this nerve.
    pub fn contains(&self, point: &NervePoint) -> bool {
        self.is_simplex(point.support())
    }

    /// Edges of the 1-skeleton.
    pub fn edges(&self) -> impl Iterator<Item = (&ModeId, &ModeId)> {
        self.simplices.iter().filter(|s| s.0.len() == 2).map(|s| (&s.0[0], &s.0[1]))
    }

    /// Shortest-path distance in the 1-skeleton, counted in edges.
    /// `Ok(None)` means the vertices lie in different components.
    pub fn edge_distance(&self, a: &ModeId, b: &ModeId) -> Result<Option<usize>, NerveError> {
        for v in [a, b] {
            if !self.vertices.contains(v) {
                return Err(NerveError::UnknownMode(v.as_str().to_owned()));
            }
        }
        if a == b {
            return Ok(Some(0));
        }
        // Plain BFS; portfolios are small.
        let mut adjacency: BTreeMap<&ModeId, Vec<&ModeId>> = BTreeMap::new();
        for (x, y) in self.edges() {
            adjacency.entry(x).or_default().push(y);
            adjacency.entry(y).or_default().push(x);
        }
        let mut dist: BTreeMap<&ModeId, usize> = BTreeMap::new();
        dist.insert(a, 0);
        let mut queue = VecDeque::from([a]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v];
            for &w in adjacency.get(v).into_iter().flatten() {
                if !dist.contains_key(w) {
                    if w == b {
                        return Ok(Some(d + 1));
                    }
                    dist.insert(w, d + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(None)
    }
}

/// A point of the nerve: sparse barycentric coordinates over the mode
/// vertices. All stored coordinates are strictly positive and sum to 1
/// within [`NORMALISATION_TOLERANCE`]; both are enforced at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<ModeId, f64>", into = "BTreeMap<ModeId, f64>")]
pub struct NervePoint {
    coords: BTreeMap<ModeId, f64>,
}

impl NervePoint {
    pub fn new(coords: impl IntoIterator<Item = (ModeId, f64)>) -> Result<Self, NerveError> {
        let coords: BTreeMap<ModeId, f64> = coords.into_iter().collect();
        if coords.is_empty() {
            return Err(NerveError::EmptySupport);
        }
        for (m, &t) in &coords {
            if !(t > 0.0) {
                return Err(NerveError::NonPositiveCoordinate(m.as_str().to_owned()));
            }
        }
        let sum: f64 = coords.values().sum();
        if (sum - 1.0).abs() > NORMALISATION_TOLERANCE {
            return Err(NerveError::NotNormalized(sum));
        }
        Ok(NervePoint { coords })
    }

    /// The point sitting exactly on one vertex.
    pub fn vertex(mode: ModeId) -> Self {
        NervePoint { coords: BTreeMap::from([(mode, 1.0)]) }
    }

    pub fn support(&self) -> impl Iterator<Item = &ModeId> {
        self.coords.keys()
    }

    pub fn coordinate(&self, mode: &ModeId) -> f64 {
        self.coords.get(mode).copied().unwrap_or(0.0)
    }

    pub fn coords(&self) -> &BTreeMap<ModeId, f64> {
        &self.coords
    }
}

impl TryFrom<BTreeMap<ModeId, f64>> for NervePoint {
    type Error = NerveError;

    fn try_from(coords: BTreeMap<ModeId, f64>) -> Result<Self, Self::Error> {
        NervePoint::new(coords)
    }
}

impl From<NervePoint> for BTreeMap<ModeId, f64> {
    fn from(p: NervePoint) -> Self {
        p.coords
    }
}

/// One refinement violation: a fine mode without a legitimate parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RefinementViolation {
    /// The containment map has no entry for this fine mode.
    MissingParent { fine: ModeId },
    /// The mapped parent is not a vertex of the coarse nerve.
    ParentNotInCoarse { fine: ModeId, parent: ModeId },
}

impl fmt::Display for RefinementViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefinementViolation::MissingParent { fine } => {
                write!(f, "fine mode `{fine}` has no declared parent")
            }
            RefinementViolation::ParentNotInCoarse { fine, parent } => {
                write!(f, "fine mode `{fine}` maps to `{parent}`, not a coarse vertex")
            }
        }
    }
}

/// Checks that every fine mode is contained in some coarse mode. An empty
/// report means the fine portfolio is a valid refinement of the coarse one.
pub fn validate_refinement(
    coarse: &Nerve,
    containment: &BTreeMap<ModeId, ModeId>,
    fine_active: &BTreeSet<ModeId>,
) -> Vec<RefinementViolation> {
    let mut violations = Vec::new();
    for fine in fine_active {
        match containment.get(fine) {
            None => violations.push(RefinementViolation::MissingParent { fine: fine.clone() }),
            Some(parent) if !coarse.has_vertex(parent) => {
                violations.push(RefinementViolation::ParentNotInCoarse {
                    fine: fine.clone(),
                    parent: parent.clone(),
                });
            }
            Some(_) => {}
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(name: &str) -> ModeId {
        mode(name)
    }

    /// Test-only oracle: a support is a simplex iff some declared set
    /// contains it. No closure storage involved.
    fn oracle_is_simplex(declared: &[Vec<ModeId>], support: &BTreeSet<ModeId>) -> bool {
        if support.is_empty() {
            return false;
        }
        declared.iter().any(|set| {
            let set: BTreeSet<&ModeId> = set.iter().collect();
            support.iter().all(|v| set.contains(v))
        })
    }

    /// Test-only oracle: Floyd–Warshall all-pairs distances over the
    /// 1-skeleton of the declared family.
    fn oracle_distances(declared: &[Vec<ModeId>]) -> BTreeMap<(ModeId, ModeId), usize> {
        let mut verts: BTreeSet<ModeId> = BTreeSet::new();
        for set in declared {
            verts.extend(set.iter().cloned());
        }
        let verts: Vec<ModeId> = verts.into_iter().collect();
        let n = verts.len();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for set in declared {
            for a in set {
                for b in set {
                    if a != b {
                        let i = verts.iter().position(|v| v == a).unwrap();
                        let j = verts.iter().position(|v| v == b).unwrap();
                        d[i][j] = 1;
                    }
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                }
            }
        }
        let mut out = BTreeMap::new();
        for i in 0..n {
            for j in 0..n {
                if d[i][j] < inf {
                    out.insert((verts[i].clone(), verts[j].clone()), d[i][j]);
                }
            }
        }
        out
    }

    fn fig6() -> Nerve {
        Nerve::build(&[
            vec![m("alpha"), m("beta"), m("gamma")],
            vec![m("gamma"), m("delta")],
        ])
        .unwrap()
    }

    /// The eight-vertex complex with one filled triangle and a chain of
    /// edges hanging off it.
    fn fig5() -> Nerve {
        Nerve::build(&[
            vec![m("alpha"), m("beta"), m("gamma")],
            vec![m("alpha"), m("delta")],
            vec![m("gamma"), m("delta")],
            vec![m("delta"), m("epsilon")],
            vec![m("epsilon"), m("theta")],
            vec![m("epsilon"), m("zeta")],
            vec![m("zeta"), m("theta")],
            vec![m("theta"), m("phi")],
        ])
        .unwrap()
    }

    #[test]
    fn triangle_plus_edge_has_expected_faces() {
        let nerve = fig6();
        assert_eq!(nerve.vertex_count(), 4);
        let by_dim = |d: usize| nerve.simplices().filter(|s| s.dimension() == d).count();
        assert_eq!(by_dim(2), 1, "one 2-simplex");
        assert_eq!(by_dim(1), 4, "four 1-simplices");
        assert_eq!(by_dim(0), 4, "four 0-simplices");
    }

    #[test]
    fn empty_input_gives_empty_nerve() {
        let nerve = Nerve::build(&[]).unwrap();
        assert_eq!(nerve.vertex_count(), 0);
        assert_eq!(nerve.simplices().count(), 0);
    }

    #[test]
    fn singleton_declared_set() {
        let nerve = Nerve::build(&[vec![m("alpha")]]).unwrap();
        assert_eq!(nerve.vertex_count(), 1);
        assert_eq!(nerve.simplices().count(), 1);
        assert!(nerve.is_simplex([&m("alpha")]));
    }

    #[test]
    fn duplicate_vertex_in_declared_set_rejected() {
        let err = Nerve::build(&[vec![m("alpha"), m("alpha")]]).unwrap_err();
        assert_eq!(err, NerveError::DuplicateVertexName("alpha".into()));
    }

    #[test]
    fn fig5_simplex_membership() {
        let nerve = fig5();
        assert!(!nerve.is_simplex([&m("beta"), &m("delta")]));
        assert!(nerve.is_simplex([&m("gamma"), &m("delta")]));
        assert!(!nerve.is_simplex(std::iter::empty::<&ModeId>()));
        assert!(!nerve.is_simplex([&m("nonexistent")]));
    }

    #[test]
    fn point_membership_matches_figures() {
        let quarter = NervePoint::new([
            (m("alpha"), 0.25),
            (m("beta"), 0.25),
            (m("gamma"), 0.5),
        ])
        .unwrap();
        assert!(fig6().contains(&quarter));

        let invalid = NervePoint::new([(m("beta"), 0.5), (m("delta"), 0.5)]).unwrap();
        assert!(!fig5().contains(&invalid));

        let missing_triangle = NervePoint::new([
            (m("beta"), 0.25),
            (m("gamma"), 0.25),
            (m("delta"), 0.5),
        ])
        .unwrap();
        assert!(!fig5().contains(&missing_triangle));
    }

    #[test]
    fn point_construction_enforces_invariants() {
        assert_eq!(
            NervePoint::new([(m("a"), 0.5), (m("b"), 0.6)]).unwrap_err(),
            NerveError::NotNormalized(1.1)
        );
        assert!(matches!(
            NervePoint::new([(m("a"), 1.5), (m("b"), -0.5)]).unwrap_err(),
            NerveError::NonPositiveCoordinate(_)
        ));
        assert_eq!(NervePoint::new([]).unwrap_err(), NerveError::EmptySupport);
        // Within tolerance is fine.
        assert!(NervePoint::new([(m("a"), 0.5), (m("b"), 0.5 + 1e-12)]).is_ok());
    }

    #[test]
    fn edge_distance_chain() {
        // alpha—gamma—beta with no alpha-beta edge.
        let nerve =
            Nerve::build(&[vec![m("alpha"), m("gamma")], vec![m("gamma"), m("beta")]]).unwrap();
        assert_eq!(nerve.edge_distance(&m("alpha"), &m("beta")).unwrap(), Some(2));
        assert_eq!(nerve.edge_distance(&m("alpha"), &m("alpha")).unwrap(), Some(0));
    }

    #[test]
    fn edge_distance_disconnected_and_unknown() {
        let nerve = Nerve::build(&[vec![m("alpha")], vec![m("beta")]]).unwrap();
        assert_eq!(nerve.edge_distance(&m("alpha"), &m("beta")).unwrap(), None);
        assert!(matches!(
            nerve.edge_distance(&m("alpha"), &m("nope")),
            Err(NerveError::UnknownMode(_))
        ));
    }

    #[test]
    fn refinement_reports() {
        let coarse = fig6();
        let mut containment = BTreeMap::new();
        containment.insert(m("alpha-dry"), m("alpha"));
        containment.insert(m("alpha-wet"), m("alpha"));
        let fine: BTreeSet<ModeId> = [m("alpha-dry"), m("alpha-wet")].into();
        assert!(validate_refinement(&coarse, &containment, &fine).is_empty());

        let mut bad = BTreeMap::new();
        bad.insert(m("xi"), m("eta"));
        let fine: BTreeSet<ModeId> = [m("xi")].into();
        let report = validate_refinement(&coarse, &bad, &fine);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], RefinementViolation::ParentNotInCoarse { .. }));

        // Identity map on coarse vertices is a valid refinement.
        let identity: BTreeMap<ModeId, ModeId> =
            coarse.vertices().map(|v| (v.clone(), v.clone())).collect();
        let fine: BTreeSet<ModeId> = coarse.vertices().cloned().collect();
        assert!(validate_refinement(&coarse, &identity, &fine).is_empty());

        let unmapped: BTreeSet<ModeId> = [m("ghost")].into();
        let report = validate_refinement(&coarse, &BTreeMap::new(), &unmapped);
        assert!(matches!(report[0], RefinementViolation::MissingParent { .. }));
    }

    /// Strategy: a family of up to 4 declared sets over at most 8 vertices.
    fn declared_family() -> impl Strategy<Value = Vec<Vec<ModeId>>> {
        let vertex = (0usize..8).prop_map(|i| mode(&format!("m{i}")));
        let set = proptest::collection::btree_set(vertex, 1..=4)
            .prop_map(|s| s.into_iter().collect::<Vec<_>>());
        proptest::collection::vec(set, 0..=4)
    }

    proptest! {
        #[test]
        fn downward_closure_holds(declared in declared_family()) {
            let nerve = Nerve::build(&declared).unwrap();
            for simplex in nerve.simplices() {
                let verts = simplex.vertices();
                for mask in 1u32..(1 << verts.len()) {
                    let face: Vec<&ModeId> = verts
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, v)| v)
                        .collect();
                    prop_assert!(nerve.is_simplex(face));
                }
            }
        }

        #[test]
        fn membership_agrees_with_subset_lattice_oracle(declared in declared_family()) {
            let nerve = Nerve::build(&declared).unwrap();
            let universe: Vec<ModeId> = (0..8).map(|i| mode(&format!("m{i}"))).collect();
            for mask in 0u32..256 {
                let support: BTreeSet<ModeId> = universe
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, v)| v.clone())
                    .collect();
                prop_assert_eq!(
                    nerve.is_simplex(&support),
                    oracle_is_simplex(&declared, &support),
                    "support {:?}", support
                );
            }
        }

        #[test]
        fn contains_iff_support_is_simplex(declared in declared_family(), weights in proptest::collection::vec(0.05f64..1.0, 1..=4)) {
            let nerve = Nerve::build(&declared).unwrap();
            let mut verts: Vec<ModeId> = nerve.vertices().cloned().collect();
            verts.truncate(weights.len());
            if verts.is_empty() {
                return Ok(());
            }
            let total: f64 = weights[..verts.len()].iter().sum();
            let point = NervePoint::new(
                verts.iter().cloned().zip(weights.iter().map(|w| w / total)),
            ).unwrap();
            let support: Vec<&ModeId> = point.support().collect();
            prop_assert_eq!(nerve.contains(&point), nerve.is_simplex(support));
        }

        #[test]
        fn edge_distance_is_a_metric(declared in declared_family()) {
            let nerve = Nerve::build(&declared).unwrap();
            let oracle = oracle_distances(&declared);
            let verts: Vec<ModeId> = nerve.vertices().cloned().collect();
            for a in &verts {
                for b in &verts {
                    let d_ab = nerve.edge_distance(a, b).unwrap();
                    prop_assert_eq!(d_ab, oracle.get(&(a.clone(), b.clone())).copied(),
                        "distance {} {}", a, b);
                    // Symmetry.
                    prop_assert_eq!(d_ab, nerve.edge_distance(b, a).unwrap());
                    // Identity of indiscernibles on vertices.
                    if a == b {
                        prop_assert_eq!(d_ab, Some(0));
                    }
                    // Triangle inequality where defined.
                    for c in &verts {
                        if let (Some(ab), Some(bc), Some(ac)) = (
                            d_ab,
                            nerve.edge_distance(b, c).unwrap(),
                            nerve.edge_distance(a, c).unwrap(),
                        ) {
                            prop_assert!(ac <= ab + bc);
                        }
                    }
                }
            }
        }

        #[test]
        fn build_is_order_insensitive(declared in declared_family(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let nerve = Nerve::build(&declared).unwrap();
            let mut shuffled = declared.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            shuffled.shuffle(&mut rng);
            for set in &mut shuffled {
                set.shuffle(&mut rng);
            }
            prop_assert_eq!(nerve, Nerve::build(&shuffled).unwrap());
        }
    }
}
