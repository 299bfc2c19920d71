//! Minimal 3D kd-tree for exact nearest-neighbor queries.
//!
//! Built once per reference set, queried per source point by the Chamfer
//! metrics. Median splits on the widest-spread axis give a balanced tree;
//! queries prune subtrees whose splitting plane is farther than the best
//! distance found so far, so results are exact.

/// Balanced kd-tree over a fixed set of points.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Tree nodes in preorder: (point slot, split axis).
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn build(points: &[[f64; 3]]) -> KdTree {
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        let mut slots: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build_rec(&mut slots);
        tree
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_rec(&mut self, slots: &mut [usize]) -> Option<usize> {
        if slots.is_empty() {
            return None;
        }
        // Split on the widest axis for better balance on anisotropic sets.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &s in slots.iter() {
            for axis in 0..3 {
                lo[axis] = lo[axis].min(self.points[s][axis]);
                hi[axis] = hi[axis].max(self.points[s][axis]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
            .unwrap();
        let mid = slots.len() / 2;
        slots.select_nth_unstable_by(mid, |&a, &b| {
            self.points[a][axis]
                .partial_cmp(&self.points[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let point = slots[mid];
        let node_id = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (left_slots, rest) = slots.split_at_mut(mid);
        let right_slots = &mut rest[1..];
        let left = self.build_rec(left_slots);
        let right = self.build_rec(right_slots);
        self.nodes[node_id].left = left;
        self.nodes[node_id].right = right;
        Some(node_id)
    }

    /// Index and squared distance of the nearest point to `query`.
    pub fn nearest(&self, query: &[f64; 3]) -> Option<(usize, f64)> {
        let root = self.root?;
        let mut best = (self.nodes[root].point, f64::INFINITY);
        self.nearest_rec(root, query, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node_id: usize, query: &[f64; 3], best: &mut (usize, f64)) {
        let node = self.nodes[node_id];
        let d2 = dist2(query, &self.points[node.point]);
        if d2 < best.1 {
            *best = (node.point, d2);
        }
        let delta = query[node.axis] - self.points[node.point][node.axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.nearest_rec(n, query, best);
        }
        if let Some(f) = far {
            if delta * delta < best.1 {
                self.nearest_rec(f, query, best);
            }
        }
    }
}
