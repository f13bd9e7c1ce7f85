//! Exact nearest-neighbour and radius queries over 3D points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Point3;
use crate::Real;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Static k-d tree over a borrowed-then-copied point set. Indices returned
/// by queries refer to the input slice order.
#[derive(Debug, Clone)]
pub struct KdTree<T: Real> {
    points: Vec<[T; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

#[derive(Debug, Clone, Copy)]
struct HeapItem<T> {
    dist_sq: T,
    index: usize,
}

impl<T: Real> PartialEq for HeapItem<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Real> Eq for HeapItem<T> {}
impl<T: Real> PartialOrd for HeapItem<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for HeapItem<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .partial_cmp(&other.dist_sq)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

impl<T: Real> KdTree<T> {
    pub fn build<'a, I>(points: I) -> Self
    where
        I: IntoIterator<Item = &'a Point3<T>>,
    {
        let points: Vec<[T; 3]> = points.into_iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            build_node(&points, &mut order, 0, n, &mut nodes);
        }
        Self { points, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    fn dist_sq(&self, i: usize, q: &[T; 3]) -> T {
        let p = &self.points[i];
        let dx = p[0] - q[0];
        let dy = p[1] - q[1];
        let dz = p[2] - q[2];
        dx * dx + dy * dy + dz * dz
    }

    /// Nearest point to `q` as `(index, squared distance)`. Ties resolve to
    /// the lower index.
    pub fn nearest(&self, q: &Point3<T>) -> Option<(usize, T)> {
        if self.nodes.is_empty() {
            return None;
        }
        let q = [q.x, q.y, q.z];
        let mut best = HeapItem {
            dist_sq: T::max_value().unwrap(),
            index: usize::MAX,
        };
        self.nearest_rec(0, &q, &mut best);
        Some((best.index, best.dist_sq))
    }

    fn nearest_rec(&self, node: usize, q: &[T; 3], best: &mut HeapItem<T>) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let item = HeapItem {
                        dist_sq: self.dist_sq(i, q),
                        index: i,
                    };
                    if item < *best {
                        *best = item;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - *value;
                let (near, far) = if diff <= T::zero() { (*left, *right) } else { (*right, *left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.dist_sq {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by increasing distance (ties by index).
    pub fn knn(&self, q: &Point3<T>, k: usize) -> Vec<(usize, T)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let q = [q.x, q.y, q.z];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, &q, k, &mut heap);
        let mut out: Vec<HeapItem<T>> = heap.into_vec();
        out.sort();
        out.into_iter().map(|h| (h.index, h.dist_sq)).collect()
    }

    fn knn_rec(&self, node: usize, q: &[T; 3], k: usize, heap: &mut BinaryHeap<HeapItem<T>>) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let item = HeapItem {
                        dist_sq: self.dist_sq(i, q),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(item);
                    } else if item < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(item);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - *value;
                let (near, far) = if diff <= T::zero() { (*left, *right) } else { (*right, *left) };
                self.knn_rec(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist_sq {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// Appends to `out` the indices of all points with distance `<= radius`
    /// from `q`, in ascending index order.
    pub fn within_radius(&self, q: &Point3<T>, radius: T, out: &mut Vec<usize>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        let q = [q.x, q.y, q.z];
        self.radius_rec(0, &q, radius * radius, out);
        out.sort_unstable();
    }

    fn radius_rec(&self, node: usize, q: &[T; 3], r2: T, out: &mut Vec<usize>) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    if self.dist_sq(i, q) <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - *value;
                if diff <= T::zero() || diff * diff <= r2 {
                    self.radius_rec(*left, q, r2, out);
                }
                if diff >= T::zero() || diff * diff <= r2 {
                    self.radius_rec(*right, q, r2, out);
                }
            }
        }
    }

    /// True when some point lies within `radius` of `q`.
    pub fn any_within(&self, q: &Point3<T>, radius: T) -> bool {
        self.nearest(q).is_some_and(|(_, d2)| d2 <= radius * radius)
    }
}

fn build_node<T: Real>(points: &[[T; 3]], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node<T>>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    // split on the axis of largest extent
    let mut lo = [T::max_value().unwrap(); 3];
    let mut hi = [T::min_value().unwrap(); 3];
    for &i in &order[start..end] {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap_or(Ordering::Equal))
        .unwrap();
    if hi[axis] - lo[axis] <= T::zero() {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][axis].partial_cmp(&points[b][axis]).unwrap_or(Ordering::Equal)
    });
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start, end });
    let left = build_node(points, order, start, mid, nodes);
    let right = build_node(points, order, mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}
