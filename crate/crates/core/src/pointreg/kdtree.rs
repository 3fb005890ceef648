//! Nearest-neighbour search over a point set.
//!
//! Bounding-box tree with the same determinism contract as the mesh index:
//! results match [`nearest_brute`] exactly because ties in squared distance
//! resolve to the lowest point index.

use nalgebra::Vector3;

use super::RegistrationError;
use crate::Real;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Node<T: Real> {
    lo: Vector3<T>,
    hi: Vector3<T>,
    kind: NodeKind,
}

#[derive(Debug, Clone, Copy)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Split { left: u32, right: u32 },
}

#[derive(Debug, Clone)]
pub struct KdTree<T: Real> {
    points: Vec<Vector3<T>>,
    order: Vec<u32>,
    nodes: Vec<Node<T>>,
    root: u32,
}

impl<T: Real> KdTree<T> {
    pub fn build(points: &[Vector3<T>]) -> Result<Self, RegistrationError> {
        if points.is_empty() {
            return Err(RegistrationError::TooFewPoints { got: 0, need: 1 });
        }
        let points = points.to_vec();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = build_node(&points, &mut order, 0, &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vector3<T> {
        &self.points[i]
    }

    /// Index of the nearest point and its distance; lowest index wins ties.
    pub fn nearest(&self, q: &Vector3<T>) -> (usize, T) {
        let mut best_idx = usize::MAX;
        let mut best_d2 = T::of(f64::INFINITY);
        let mut stack = vec![self.root];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if aabb_dist2(q, &node.lo, &node.hi) > best_d2 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &pi in &self.order[start as usize..(start + count) as usize] {
                        let pi = pi as usize;
                        let d2 = (q - self.points[pi]).norm_squared();
                        if d2 < best_d2 || (d2 == best_d2 && pi < best_idx) {
                            best_d2 = d2;
                            best_idx = pi;
                        }
                    }
                }
                NodeKind::Split { left, right } => {
                    let dl = aabb_dist2(q, &self.nodes[left as usize].lo, &self.nodes[left as usize].hi);
                    let dr = aabb_dist2(q, &self.nodes[right as usize].lo, &self.nodes[right as usize].hi);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        (best_idx, best_d2.sqrt())
    }

    /// Nearest neighbour for every query point, in query order.
    pub fn nearest_many(&self, queries: &[Vector3<T>]) -> Vec<(usize, T)> {
        use rayon::prelude::*;
        queries.par_iter().map(|q| self.nearest(q)).collect()
    }
}

/// Linear-scan reference used to validate the tree.
pub fn nearest_brute<T: Real>(points: &[Vector3<T>], q: &Vector3<T>) -> (usize, T) {
    let mut best_idx = usize::MAX;
    let mut best_d2 = T::of(f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = (q - p).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            best_idx = i;
        }
    }
    (best_idx, best_d2.sqrt())
}

fn aabb_dist2<T: Real>(p: &Vector3<T>, lo: &Vector3<T>, hi: &Vector3<T>) -> T {
    let mut d2 = T::zero();
    for k in 0..3 {
        let c = p[k].clamp(lo[k], hi[k]);
        let d = p[k] - c;
        d2 += d * d;
    }
    d2
}

fn build_node<T: Real>(
    points: &[Vector3<T>],
    order: &mut [u32],
    offset: u32,
    nodes: &mut Vec<Node<T>>,
) -> u32 {
    let mut lo = Vector3::repeat(T::of(f64::INFINITY));
    let mut hi = Vector3::repeat(T::of(f64::NEG_INFINITY));
    for &i in order.iter() {
        let p = points[i as usize];
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if order.len() <= LEAF_SIZE {
        nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf {
                start: offset,
                count: order.len() as u32,
            },
        });
        return nodes.len() as u32 - 1;
    }
    let mut axis = 0;
    for k in 1..3 {
        if hi[k] - lo[k] > hi[axis] - lo[axis] {
            axis = k;
        }
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .partial_cmp(&points[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let (left_half, right_half) = order.split_at_mut(mid);
    let left = build_node(points, left_half, offset, nodes);
    let right = build_node(points, right_half, offset + mid as u32, nodes);
    nodes.push(Node {
        lo,
        hi,
        kind: NodeKind::Split { left, right },
    });
    nodes.len() as u32 - 1
}
