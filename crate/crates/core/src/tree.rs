//! Geometry of rooted regular trees.
//!
//! Two families are supported: the Cayley tree of order `d` (every vertex has
//! degree `d + 1`, so the root has `d + 1` children and every other vertex
//! `d`) and the rooted `d`-ary tree (every vertex, root included, has `d`
//! children). Vertices are addressed by their child-index path from the root;
//! [`TreeIndex`] adds flat breadth-first numbering so samplers never allocate
//! per-vertex objects.

use crate::error::{CoreError, Result};

/// Hard cap on vertices inside the ball `B_depth`; keeps index arithmetic in
/// `u32` and memory use sane.
pub const MAX_BALL_SIZE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    /// Degree `d + 1` everywhere: root has `d + 1` children, others `d`.
    Cayley,
    /// Every vertex has exactly `d` children.
    DAry,
}

/// A finite rooted ball of a regular tree: kind, branching parameter `d`, and
/// depth (levels `0..=depth`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TreeSpec {
    pub kind: TreeKind,
    pub d: u32,
    pub depth: u32,
}

impl TreeSpec {
    pub fn new(kind: TreeKind, d: u32, depth: u32) -> Result<Self> {
        if d < 2 {
            return Err(CoreError::invalid(format!(
                "branching parameter d must be >= 2, got {d}"
            )));
        }
        if d > 200 {
            return Err(CoreError::invalid(format!("d = {d} exceeds the cap of 200")));
        }
        if depth < 1 {
            return Err(CoreError::invalid("depth must be >= 1"));
        }
        let spec = TreeSpec { kind, d, depth };
        if spec.ball_size() > MAX_BALL_SIZE {
            return Err(CoreError::invalid(format!(
                "ball of depth {depth} holds more than {MAX_BALL_SIZE} vertices"
            )));
        }
        Ok(spec)
    }

    pub fn cayley(d: u32, depth: u32) -> Result<Self> {
        Self::new(TreeKind::Cayley, d, depth)
    }

    pub fn d_ary(d: u32, depth: u32) -> Result<Self> {
        Self::new(TreeKind::DAry, d, depth)
    }

    /// Number of children of a vertex at `level`.
    pub fn children_at(&self, level: u32) -> u32 {
        match (self.kind, level) {
            (TreeKind::Cayley, 0) => self.d + 1,
            _ => self.d,
        }
    }

    /// `|W_r|`: number of vertices at distance exactly `r` from the root.
    /// Cayley: `(d+1) d^{r-1}`; d-ary: `d^r`; both give 1 at `r = 0`.
    pub fn sphere_size(&self, r: u32) -> u64 {
        if r == 0 {
            return 1;
        }
        let d = u64::from(self.d);
        match self.kind {
            TreeKind::Cayley => (d + 1) * d.pow(r - 1),
            TreeKind::DAry => d.pow(r),
        }
    }

    /// Number of vertices in the closed ball `B_depth`.
    pub fn ball_size(&self) -> u64 {
        (0..=self.depth).map(|r| self.sphere_size(r)).sum()
    }

    /// Number of edges in the ball (every non-root vertex owns the edge to
    /// its parent).
    pub fn edge_count(&self) -> u64 {
        self.ball_size() - 1
    }
}

/// Vertex address: the sequence of child indices walked from the root. The
/// root is the empty path; the first step ranges over `children_at(0)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VertexId {
    path: Vec<u8>,
}

impl VertexId {
    pub fn root() -> Self {
        VertexId { path: Vec::new() }
    }

    pub fn from_path(spec: &TreeSpec, path: Vec<u8>) -> Result<Self> {
        if path.len() > spec.depth as usize {
            return Err(CoreError::invalid(format!(
                "path of length {} exceeds tree depth {}",
                path.len(),
                spec.depth
            )));
        }
        for (level, &step) in path.iter().enumerate() {
            let fan = spec.children_at(level as u32);
            if u32::from(step) >= fan {
                return Err(CoreError::invalid(format!(
                    "child index {step} at level {level} exceeds fan-out {fan}"
                )));
            }
        }
        Ok(VertexId { path })
    }

    pub fn level(&self) -> u32 {
        self.path.len() as u32
    }

    pub fn path(&self) -> &[u8] {
        &self.path
    }

    pub fn is_root(&self) -> bool {
        self.path.is_empty()
    }

    pub fn parent(&self) -> Option<VertexId> {
        if self.path.is_empty() {
            return None;
        }
        VertexId {
            path: self.path[..self.path.len() - 1].to_vec(),
        }
        .into()
    }

    pub fn child(&self, spec: &TreeSpec, k: u8) -> Result<VertexId> {
        let level = self.level();
        if level >= spec.depth {
            return Err(CoreError::invalid(format!(
                "vertex at level {level} has no children inside depth {}",
                spec.depth
            )));
        }
        let fan = spec.children_at(level);
        if u32::from(k) >= fan {
            return Err(CoreError::invalid(format!(
                "child index {k} exceeds fan-out {fan} at level {level}"
            )));
        }
        let mut path = self.path.clone();
        path.push(k);
        Ok(VertexId { path })
    }

    /// Deepest common ancestor with `other`.
    pub fn meet(&self, other: &VertexId) -> VertexId {
        let shared = self
            .path
            .iter()
            .zip(&other.path)
            .take_while(|(a, b)| a == b)
            .count();
        VertexId {
            path: self.path[..shared].to_vec(),
        }
    }
}

/// Edge from a vertex to one of its children, identified by the child.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrientedEdge {
    pub child: VertexId,
}

impl OrientedEdge {
    pub fn parent(&self) -> VertexId {
        self.child.parent().expect("edge child is never the root")
    }
}

/// Split point of two vertices: their deepest common ancestor together with
/// its level. The root-to-`v1` and root-to-`v2` geodesics coincide up to this
/// vertex and separate after it.
pub fn split_vertex(v1: &VertexId, v2: &VertexId) -> (VertexId, u32) {
    let meet = v1.meet(v2);
    let level = meet.level();
    (meet, level)
}

/// Number of boundary vertices of `W_r` whose split level with a fixed
/// reference boundary vertex equals `n`, on the Cayley tree of order `d`:
///
/// - `n = 0`: the `d^r` vertices whose first step differs (the root is the
///   meet point),
/// - `1 <= n <= r-1`: `(d-1) d^{r-n-1}`,
/// - `n = r`: the reference vertex itself.
///
/// The counts partition the sphere: they sum to `(d+1) d^{r-1}`.
pub fn split_level_count(d: u32, r: u32, n: u32) -> Result<u64> {
    if d < 2 {
        return Err(CoreError::invalid("d must be >= 2"));
    }
    if r < 1 {
        return Err(CoreError::invalid("split counts need r >= 1"));
    }
    if n > r {
        return Err(CoreError::invalid(format!("split level {n} exceeds r = {r}")));
    }
    let d = u64::from(d);
    let overflow = || CoreError::invalid(format!("split count d = {d}, r = {r} exceeds u64"));
    Ok(match n {
        0 => d.checked_pow(r).ok_or_else(overflow)?,
        n if n == r => 1,
        n => d
            .checked_pow(r - n - 1)
            .and_then(|p| p.checked_mul(d - 1))
            .ok_or_else(overflow)?,
    })
}

/// Classification of a vertex relative to an oriented edge `(parent ->
/// child)`: the **future** of the edge is the subtree hanging below the
/// child (vertices strictly closer to the child), the **past** is everything
/// else.
pub fn is_future(edge: &OrientedEdge, v: &VertexId) -> bool {
    let cp = edge.child.path();
    v.path().len() >= cp.len() && &v.path()[..cp.len()] == cp
}

/// Materializes the past/future partition of every vertex in the ball.
/// Returns `(past, future)`; intended for small volumes and tests — large
/// runs classify lazily via [`is_future`] or index blocks.
pub fn past_future(spec: &TreeSpec, edge: &OrientedEdge) -> (Vec<VertexId>, Vec<VertexId>) {
    let idx = TreeIndex::new(*spec);
    let mut past = Vec::new();
    let mut future = Vec::new();
    for v in 0..idx.ball_size() {
        let vid = idx.path_of(v);
        if is_future(edge, &vid) {
            future.push(vid);
        } else {
            past.push(vid);
        }
    }
    (past, future)
}

/// Splits the vertex levels `0..=depth` of a ball into past/future counts for
/// an edge whose child sits at `child_level` (1-based). Returns
/// `(past, future)` vertex counts.
pub fn past_future_counts(spec: &TreeSpec, child_level: u32) -> Result<(u64, u64)> {
    if child_level < 1 || child_level > spec.depth {
        return Err(CoreError::invalid(format!(
            "edge child level {child_level} outside 1..={}",
            spec.depth
        )));
    }
    // The future subtree below a vertex at child_level is d-ary regardless of
    // the root degree.
    let d = u64::from(spec.d);
    let future: u64 = (0..=(spec.depth - child_level)).map(|h| d.pow(h)).sum();
    Ok((spec.ball_size() - future, future))
}

/// Flat breadth-first numbering of the ball: vertices are numbered level by
/// level, inside a level by the mixed-radix value of their path. Vertex 0 is
/// the root; edge `e` (child vertex `v`) gets index `v - 1`.
#[derive(Debug, Clone)]
pub struct TreeIndex {
    spec: TreeSpec,
    /// `level_start[r]` = flat index of the first vertex at level `r`;
    /// `level_start[depth + 1]` = ball size.
    level_start: Vec<u32>,
}

impl TreeIndex {
    pub fn new(spec: TreeSpec) -> Self {
        let mut level_start = Vec::with_capacity(spec.depth as usize + 2);
        let mut acc = 0u64;
        for r in 0..=spec.depth {
            level_start.push(acc as u32);
            acc += spec.sphere_size(r);
        }
        level_start.push(acc as u32);
        TreeIndex { spec, level_start }
    }

    pub fn spec(&self) -> &TreeSpec {
        &self.spec
    }

    pub fn ball_size(&self) -> u32 {
        *self.level_start.last().unwrap()
    }

    pub fn edge_count(&self) -> u32 {
        self.ball_size() - 1
    }

    pub fn level_start(&self, r: u32) -> u32 {
        self.level_start[r as usize]
    }

    pub fn level_size(&self, r: u32) -> u32 {
        self.level_start[r as usize + 1] - self.level_start[r as usize]
    }

    /// `(level, offset)` of a flat vertex index.
    pub fn locate(&self, vertex: u32) -> (u32, u32) {
        debug_assert!(vertex < self.ball_size());
        // partition_point: index of the first level starting beyond `vertex`.
        let r = self.level_start.partition_point(|&s| s <= vertex) - 1;
        (r as u32, vertex - self.level_start[r])
    }

    pub fn flat(&self, level: u32, offset: u32) -> u32 {
        debug_assert!(offset < self.level_size(level));
        self.level_start[level as usize] + offset
    }

    /// Flat index of the parent. Level-1 vertices all point at the root; at
    /// deeper levels the offset divides by `d` (every vertex there has `d`
    /// children, whatever the kind).
    pub fn parent(&self, vertex: u32) -> Option<u32> {
        if vertex == 0 {
            return None;
        }
        let (r, off) = self.locate(vertex);
        if r == 1 {
            return Some(0);
        }
        Some(self.flat(r - 1, off / self.spec.d))
    }

    /// Flat index of child `k` of `vertex`.
    pub fn child(&self, vertex: u32, k: u32) -> Option<u32> {
        let (r, off) = self.locate(vertex);
        if r >= self.spec.depth || k >= self.spec.children_at(r) {
            return None;
        }
        let child_off = if r == 0 { k } else { off * self.spec.d + k };
        Some(self.flat(r + 1, child_off))
    }

    /// Path of a flat vertex index (mixed-radix digits of its level offset).
    pub fn path_of(&self, vertex: u32) -> VertexId {
        let (r, mut off) = self.locate(vertex);
        let mut path = vec![0u8; r as usize];
        for slot in path.iter_mut().skip(1).rev() {
            *slot = (off % self.spec.d) as u8;
            off /= self.spec.d;
        }
        if r >= 1 {
            path[0] = off as u8;
        }
        VertexId { path }
    }

    /// Flat index of a vertex given by path.
    pub fn index_of(&self, v: &VertexId) -> u32 {
        let path = v.path();
        if path.is_empty() {
            return 0;
        }
        let mut off = u32::from(path[0]);
        for &step in &path[1..] {
            off = off * self.spec.d + u32::from(step);
        }
        self.flat(path.len() as u32, off)
    }

    /// Flat vertex range `[start, end)` of the level-`r` descendants of the
    /// level-1 vertex `k` (used to carve future subtrees out of a boundary
    /// level without walking the tree).
    pub fn subtree_block_at_level(&self, k: u32, r: u32) -> (u32, u32) {
        debug_assert!(r >= 1 && r <= self.spec.depth);
        debug_assert!(k < self.spec.children_at(0));
        let width = self.spec.d.pow(r - 1);
        let s = self.level_start(r);
        (s + k * width, s + (k + 1) * width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sphere_sizes_match_closed_forms() {
        let cayley = TreeSpec::cayley(2, 6).unwrap();
        assert_eq!(cayley.sphere_size(0), 1);
        assert_eq!(cayley.sphere_size(1), 3);
        assert_eq!(cayley.sphere_size(2), 6);
        assert_eq!(cayley.sphere_size(3), 12);
        let dary = TreeSpec::d_ary(3, 4).unwrap();
        assert_eq!(dary.sphere_size(0), 1);
        assert_eq!(dary.sphere_size(2), 9);
        assert_eq!(dary.sphere_size(4), 81);
    }

    #[test]
    fn ball_size_sums_spheres() {
        let spec = TreeSpec::cayley(2, 4).unwrap();
        assert_eq!(spec.ball_size(), 1 + 3 + 6 + 12 + 24);
        assert_eq!(spec.edge_count(), spec.ball_size() - 1);
    }

    #[test]
    fn spec_rejects_bad_parameters() {
        assert!(TreeSpec::cayley(1, 3).is_err());
        assert!(TreeSpec::cayley(2, 0).is_err());
        assert!(TreeSpec::cayley(201, 3).is_err());
        // 2^40 vertices blow the ball cap.
        assert!(TreeSpec::d_ary(2, 40).is_err());
    }

    #[test]
    fn split_counts_partition_the_sphere() {
        for d in [2u32, 3, 5] {
            for r in 1..=7u32 {
                let spec = TreeSpec::cayley(d, r).unwrap();
                let total: u64 = (0..=r).map(|n| split_level_count(d, r, n).unwrap()).sum();
                assert_eq!(total, spec.sphere_size(r), "d={d} r={r}");
            }
        }
    }

    #[test]
    fn split_counts_match_exhaustive_meets() {
        // Walk every boundary vertex of a depth-4 ball and classify its meet
        // level with a fixed reference; compare against the closed form.
        let spec = TreeSpec::cayley(2, 4).unwrap();
        let idx = TreeIndex::new(spec);
        let r = 4u32;
        let reference = idx.path_of(idx.level_start(r)); // leftmost boundary vertex
        let mut counts = vec![0u64; r as usize + 1];
        for off in 0..idx.level_size(r) {
            let v = idx.path_of(idx.flat(r, off));
            let (meet, n) = split_vertex(&reference, &v);
            assert_eq!(meet.level(), n);
            counts[n as usize] += 1;
        }
        for n in 0..=r {
            assert_eq!(
                counts[n as usize],
                split_level_count(spec.d, r, n).unwrap(),
                "n = {n}"
            );
        }
    }

    #[test]
    fn split_count_domain_errors() {
        assert!(split_level_count(1, 3, 1).is_err());
        assert!(split_level_count(2, 0, 0).is_err());
        assert!(split_level_count(2, 3, 4).is_err());
    }

    #[test]
    fn vertex_paths_validate_fanout() {
        let spec = TreeSpec::cayley(2, 3).unwrap();
        // Root fans out to 3 children, deeper vertices to 2.
        assert!(VertexId::from_path(&spec, vec![2]).is_ok());
        assert!(VertexId::from_path(&spec, vec![3]).is_err());
        assert!(VertexId::from_path(&spec, vec![2, 1]).is_ok());
        assert!(VertexId::from_path(&spec, vec![2, 2]).is_err());
        assert!(VertexId::from_path(&spec, vec![0, 0, 0, 0]).is_err());
    }

    #[test]
    fn parent_child_round_trip() {
        let spec = TreeSpec::cayley(2, 3).unwrap();
        let v = VertexId::root()
            .child(&spec, 2)
            .unwrap()
            .child(&spec, 1)
            .unwrap();
        assert_eq!(v.level(), 2);
        assert_eq!(v.parent().unwrap().path(), &[2]);
        assert!(v.child(&spec, 2).is_err());
        assert!(VertexId::root().parent().is_none());
    }

    #[test]
    fn future_classification_uses_prefixes() {
        let spec = TreeSpec::cayley(2, 3).unwrap();
        let child = VertexId::from_path(&spec, vec![1, 0]).unwrap();
        let edge = OrientedEdge { child: child.clone() };
        assert_eq!(edge.parent().path(), &[1]);
        assert!(is_future(&edge, &child));
        assert!(is_future(
            &edge,
            &VertexId::from_path(&spec, vec![1, 0, 1]).unwrap()
        ));
        assert!(!is_future(&edge, &VertexId::root()));
        assert!(!is_future(&edge, &VertexId::from_path(&spec, vec![1]).unwrap()));
        assert!(!is_future(&edge, &VertexId::from_path(&spec, vec![1, 1]).unwrap()));
        assert!(!is_future(&edge, &VertexId::from_path(&spec, vec![0, 0]).unwrap()));
    }

    #[test]
    fn split_vertex_on_fixed_paths() {
        let spec = TreeSpec::cayley(2, 3).unwrap();
        let v1 = VertexId::from_path(&spec, vec![0, 1, 1]).unwrap();
        let v2 = VertexId::from_path(&spec, vec![0, 0, 1]).unwrap();
        let (meet, n) = split_vertex(&v1, &v2);
        assert_eq!(meet.path(), &[0]);
        assert_eq!(n, 1);
        let (meet, n) = split_vertex(&v1, &v1);
        assert_eq!((meet, n), (v1.clone(), 3));
        let w = VertexId::from_path(&spec, vec![1, 0]).unwrap();
        let (meet, n) = split_vertex(&v1, &w);
        assert!(meet.is_root());
        assert_eq!(n, 0);
    }

    #[test]
    fn materialized_partition_matches_lazy_classifier() {
        let spec = TreeSpec::cayley(2, 3).unwrap();
        let edge = OrientedEdge {
            child: VertexId::from_path(&spec, vec![1]).unwrap(),
        };
        let (past, future) = past_future(&spec, &edge);
        assert_eq!(past.len() as u64 + future.len() as u64, spec.ball_size());
        assert!(future.iter().all(|v| is_future(&edge, v)));
        assert!(past.iter().all(|v| !is_future(&edge, v)));
        // Future below a level-1 vertex of a depth-3 ball: binary of depth 2.
        assert_eq!(future.len(), 1 + 2 + 4);
        // Sphere partition per level.
        for r in 1..=3u32 {
            let in_future = future.iter().filter(|v| v.level() == r).count() as u64;
            let in_past = past.iter().filter(|v| v.level() == r).count() as u64;
            assert_eq!(in_future + in_past, spec.sphere_size(r));
        }
    }

    #[test]
    fn past_future_counts_partition_the_ball() {
        let spec = TreeSpec::cayley(2, 4).unwrap();
        for level in 1..=4 {
            let (past, future) = past_future_counts(&spec, level).unwrap();
            assert_eq!(past + future, spec.ball_size());
        }
        // Depth-4 edge at level 1: future subtree is a binary tree of depth 3.
        let (_, future) = past_future_counts(&spec, 1).unwrap();
        assert_eq!(future, 1 + 2 + 4 + 8);
        assert!(past_future_counts(&spec, 0).is_err());
        assert!(past_future_counts(&spec, 5).is_err());
    }

    #[test]
    fn index_arithmetic_matches_path_walk() {
        for spec in [TreeSpec::cayley(2, 5).unwrap(), TreeSpec::d_ary(3, 4).unwrap()] {
            let idx = TreeIndex::new(spec);
            assert_eq!(u64::from(idx.ball_size()), spec.ball_size());
            for v in 0..idx.ball_size() {
                let path = idx.path_of(v);
                assert_eq!(idx.index_of(&path), v, "round trip at {v}");
                match idx.parent(v) {
                    None => assert!(path.is_root()),
                    Some(p) => {
                        assert_eq!(idx.path_of(p), path.parent().unwrap());
                        // v must appear among p's children.
                        let (pr, _) = idx.locate(p);
                        let found = (0..spec.children_at(pr))
                            .filter_map(|k| idx.child(p, k))
                            .any(|c| c == v);
                        assert!(found, "vertex {v} not reachable from its parent");
                    }
                }
            }
        }
    }

    #[test]
    fn child_is_none_outside_the_ball() {
        let idx = TreeIndex::new(TreeSpec::cayley(2, 2).unwrap());
        let boundary = idx.level_start(2);
        assert!(idx.child(boundary, 0).is_none());
        assert!(idx.child(0, 3).is_none()); // root fan-out is 3
        assert!(idx.child(idx.flat(1, 0), 2).is_none()); // level-1 fan-out is 2
    }

    #[test]
    fn subtree_blocks_tile_the_boundary() {
        let spec = TreeSpec::cayley(2, 4).unwrap();
        let idx = TreeIndex::new(spec);
        let r = 4;
        let mut expect = idx.level_start(r);
        for k in 0..spec.children_at(0) {
            let (s, e) = idx.subtree_block_at_level(k, r);
            assert_eq!(s, expect);
            expect = e;
            // Every vertex in the block descends from level-1 vertex k.
            for v in s..e {
                assert_eq!(idx.path_of(v).path()[0], k as u8);
            }
        }
        assert_eq!(expect, idx.level_start(r) + idx.level_size(r));
    }

    proptest! {
        #[test]
        fn flat_locate_round_trip(
            d in 2u32..5,
            depth in 1u32..6,
            seed in 0u32..1_000_000
        ) {
            let spec = TreeSpec::cayley(d, depth).unwrap();
            let idx = TreeIndex::new(spec);
            let v = seed % idx.ball_size();
            let (r, off) = idx.locate(v);
            prop_assert_eq!(idx.flat(r, off), v);
            prop_assert_eq!(idx.path_of(v).level(), r);
        }

        #[test]
        fn meet_is_symmetric_and_bounded(
            a in proptest::collection::vec(0u8..2, 0..5),
            b in proptest::collection::vec(0u8..2, 0..5)
        ) {
            let spec = TreeSpec::cayley(2, 5).unwrap();
            let va = VertexId::from_path(&spec, a).unwrap();
            let vb = VertexId::from_path(&spec, b).unwrap();
            let m = va.meet(&vb);
            prop_assert_eq!(&m, &vb.meet(&va));
            prop_assert!(m.level() <= va.level().min(vb.level()));
        }
    }
}
