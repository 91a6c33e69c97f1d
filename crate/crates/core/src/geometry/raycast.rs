//! Bounding-volume hierarchy over triangles for ray visibility queries.

use crate::math::Vec3;

/// Triangle stored with a caller-defined id (e.g. a global triangle index).
#[derive(Debug, Clone, Copy)]
pub struct SceneTriangle {
    pub v: [Vec3; 3],
    pub id: usize,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { lo: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY), hi: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: Vec3) {
        self.lo = self.lo.min_by_component(p);
        self.hi = self.hi.max_by_component(p);
    }

    /// Slab test; returns the entry distance if the ray meets the box within `tmax`.
    #[inline]
    fn hit(&self, origin: Vec3, inv_dir: Vec3, tmax: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = tmax;
        for k in 0..3 {
            let (o, inv, lo, hi) = (origin[k], inv_dir[k], self.lo[k], self.hi[k]);
            let mut ta = (lo - o) * inv;
            let mut tb = (hi - o) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0 * inf when the origin lies on a slab plane: treat as inside
            if ta.is_nan() || tb.is_nan() {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Ray hit record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub id: usize,
}

/// Median-split BVH. Immutable after construction and shareable across threads.
#[derive(Debug, Clone)]
pub struct Bvh {
    tris: Vec<SceneTriangle>,
    nodes: Vec<Node>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(mut tris: Vec<SceneTriangle>) -> Self {
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            let n = tris.len();
            Self::build_node(&mut tris, 0, n, &mut nodes);
        }
        Bvh { tris, nodes }
    }

    fn build_node(tris: &mut [SceneTriangle], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for t in &tris[start..end] {
            for v in t.v {
                bounds.grow(v);
            }
            cbounds.grow((t.v[0] + t.v[1] + t.v[2]) / 3.0);
        }
        let me = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, start, end });
            return me;
        }
        let ext = cbounds.hi - cbounds.lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        let key = |t: &SceneTriangle| (t.v[0][axis] + t.v[1][axis] + t.v[2][axis]) / 3.0;
        tris[start..end].select_nth_unstable_by(mid - start, |a, b| key(a).total_cmp(&key(b)));
        nodes.push(Node::Leaf { bounds, start, end });
        let left = Self::build_node(tris, start, mid, nodes);
        let right = Self::build_node(tris, mid, end, nodes);
        nodes[me] = Node::Inner { bounds, left, right };
        me
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Closest hit along `origin + t dir` with `t_min < t < t_max`, skipping `ignore`.
    pub fn first_hit(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64, ignore: Option<usize>) -> Option<Hit> {
        self.traverse(origin, dir, t_min, t_max, ignore, false)
    }

    /// True if anything is hit in `t_min < t < t_max`.
    pub fn occluded(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64, ignore: Option<usize>) -> bool {
        self.traverse(origin, dir, t_min, t_max, ignore, true).is_some()
    }

    /// Every hit along the ray within `(t_min, t_max)`, unsorted.
    pub fn all_hits(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Vec<Hit> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf { bounds, start, end } => {
                    if bounds.hit(origin, inv, t_max).is_none() {
                        continue;
                    }
                    for tri in &self.tris[*start..*end] {
                        if let Some(t) = intersect_triangle(origin, dir, &tri.v) {
                            if t > t_min && t < t_max {
                                out.push(Hit { t, id: tri.id });
                            }
                        }
                    }
                }
                Node::Inner { bounds, left, right } => {
                    if bounds.hit(origin, inv, t_max).is_some() {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        out
    }

    fn traverse(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64, ignore: Option<usize>, any: bool) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<Hit> = None;
        let mut limit = t_max;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().hit(origin, inv, limit).is_none() {
                continue;
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    for tri in &self.tris[*start..*end] {
                        if Some(tri.id) == ignore {
                            continue;
                        }
                        if let Some(t) = intersect_triangle(origin, dir, &tri.v) {
                            if t > t_min && t < limit {
                                best = Some(Hit { t, id: tri.id });
                                if any {
                                    return best;
                                }
                                limit = t;
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().hit(origin, inv, limit);
                    let dr = self.nodes[*right].bounds().hit(origin, inv, limit);
                    match (dl, dr) {
                        (Some(a), Some(b)) => {
                            // nearer child popped first
                            if a <= b {
                                stack.push(*right);
                                stack.push(*left);
                            } else {
                                stack.push(*left);
                                stack.push(*right);
                            }
                        }
                        (Some(_), None) => stack.push(*left),
                        (None, Some(_)) => stack.push(*right),
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }
}

/// Which closed surface (grouped by `owner[triangle id]`) contains `p`, by majority
/// vote of ray-parity counts along five skew directions.
pub fn containing_owner(bvh: &Bvh, owner: &[usize], n_owners: usize, p: Vec3) -> Option<usize> {
    let dirs = [
        Vec3::new(0.3112, 0.5237, 0.7931),
        Vec3::new(-0.6113, 0.2719, 0.7433),
        Vec3::new(0.1731, -0.8849, 0.4323),
        Vec3::new(-0.4471, -0.3313, -0.8309),
        Vec3::new(0.8377, 0.1129, -0.5343),
    ];
    let mut votes = vec![0usize; n_owners + 1];
    for d in dirs {
        let mut counts = vec![0usize; n_owners];
        for h in bvh.all_hits(p, d.normalize(), 0.0, f64::INFINITY) {
            counts[owner[h.id]] += 1;
        }
        let inside = counts.iter().position(|c| c % 2 == 1).unwrap_or(n_owners);
        votes[inside] += 1;
    }
    let (best, &n) = votes.iter().enumerate().max_by_key(|(_, &v)| v).unwrap();
    (best < n_owners && n >= 3).then_some(best)
}

/// Moller-Trumbore ray/triangle intersection, two-sided. Returns the ray parameter.
#[inline]
pub fn intersect_triangle(origin: Vec3, dir: Vec3, v: &[Vec3; 3]) -> Option<f64> {
    let e1 = v[1] - v[0];
    let e2 = v[2] - v[0];
    let p = dir.cross(e2);
    let det = e1.dot(p);
    let scale = e1.norm2().max(e2.norm2()) * dir.norm();
    if det.abs() <= 1e-14 * scale {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v[0];
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let w = dir.dot(q) * inv;
    if w < 0.0 || u + w > 1.0 {
        return None;
    }
    Some(e2.dot(q) * inv)
}

/// Segment/triangle test used for self-intersection checks.
pub fn segment_hits_triangle(a: Vec3, b: Vec3, tri: &[Vec3; 3]) -> bool {
    match intersect_triangle(a, b - a, tri) {
        Some(t) => t > 1e-9 && t < 1.0 - 1e-9,
        None => false,
    }
}

/// True if two triangles intersect (edge-crossing test, ignores coplanar touching).
pub fn triangles_intersect(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    (0..3).any(|k| segment_hits_triangle(a[k], a[(k + 1) % 3], b))
        || (0..3).any(|k| segment_hits_triangle(b[k], b[(k + 1) % 3], a))
}
