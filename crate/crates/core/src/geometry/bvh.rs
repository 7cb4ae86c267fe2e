use super::{closest_point_on_triangle, Aabb, TriMesh, Vec3};

const LEAF_SIZE: usize = 4;

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

/// Median-split bounding volume hierarchy over a mesh's triangles, used for
/// nearest-surface queries.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    triangles: Vec<[Vec3; 3]>,
}

impl TriangleBvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let triangles: Vec<[Vec3; 3]> = (0..mesh.faces().len()).map(|i| mesh.triangle(i)).collect();
        let centroids: Vec<Vec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        if !triangles.is_empty() {
            build(&mut nodes, &mut order, 0, triangles.len(), &triangles, &centroids);
        }
        TriangleBvh {
            nodes,
            order,
            triangles,
        }
    }

    /// Squared distance and closest point on the surface. `None` for an empty mesh.
    pub fn closest_point(&self, p: &Vec3) -> Option<(f64, Vec3)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, Vec3::zeros());
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf { bounds, start, end } => {
                    if bounds.distance_squared(p) >= best.0 {
                        continue;
                    }
                    for &t in &self.order[*start..*end] {
                        let [a, b, c] = &self.triangles[t];
                        let q = closest_point_on_triangle(p, a, b, c);
                        let d2 = (q - p).norm_squared();
                        if d2 < best.0 {
                            best = (d2, q);
                        }
                    }
                }
                Node::Inner { bounds, left, right } => {
                    if bounds.distance_squared(p) >= best.0 {
                        continue;
                    }
                    let dl = self.nodes[*left].bounds().distance_squared(p);
                    let dr = self.nodes[*right].bounds().distance_squared(p);
                    // nearer child popped first
                    if dl < dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        Some(best)
    }
}

fn build(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    triangles: &[[Vec3; 3]],
    centroids: &[Vec3],
) -> usize {
    let mut bounds = Aabb::empty();
    for &t in &order[start..end] {
        for v in &triangles[t] {
            bounds.grow(v);
        }
    }
    let index = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return index;
    }
    nodes.push(Node::Leaf { bounds, start, end });
    let cb = Aabb::from_points(order[start..end].iter().map(|&t| &centroids[t]));
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    let left = build(nodes, order, start, mid, triangles, centroids);
    let right = build(nodes, order, mid, end, triangles, centroids);
    nodes[index] = Node::Inner { bounds, left, right };
    index
}
