//! Quickhull 3D.
//!
//! Produces a watertight triangle mesh with outward normals whose vertex set
//! is a subset of the input points. Points within `eps` of the hull surface
//! are absorbed rather than lifted to vertices, so every input ends up inside
//! or on the hull within a tolerance proportional to the input extent.

use nalgebra::Vector3;
use std::collections::BTreeMap;

use super::TrajError;

#[derive(Debug, Clone)]
pub struct ConvexMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Counter-clockwise when viewed from outside.
    pub faces: Vec<[usize; 3]>,
}

#[derive(Debug, Clone)]
struct Face {
    verts: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    /// Input indices strictly outside this face.
    conflicts: Vec<usize>,
    alive: bool,
}

impl Face {
    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

fn make_face(points: &[Vector3<f64>], a: usize, b: usize, c: usize) -> Face {
    let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
    let norm = n.norm();
    let normal = if norm > 0.0 { n / norm } else { Vector3::z() };
    Face {
        verts: [a, b, c],
        normal,
        offset: normal.dot(&points[a]),
        conflicts: Vec::new(),
        alive: true,
    }
}

/// Convex hull of `points` as a watertight triangle mesh.
pub fn convex_hull(points: &[Vector3<f64>]) -> Result<ConvexMesh, TrajError> {
    if points.len() < 4 {
        return Err(TrajError::DegenerateInput(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let scale = (hi - lo).norm().max(1e-12);
    let eps = 1e-10 * scale;

    // Initial simplex from extreme points.
    let mut i0 = 0;
    let mut i1 = 0;
    let mut best = -1.0;
    for axis in 0..3 {
        let min = (0..points.len()).min_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let max = (0..points.len()).max_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        if let (Some(a), Some(b)) = (min, max) {
            let d = (points[a] - points[b]).norm();
            if d > best {
                best = d;
                i0 = a;
                i1 = b;
            }
        }
    }
    if best < eps {
        return Err(TrajError::DegenerateInput("all points coincident".into()));
    }
    let dir = (points[i1] - points[i0]).normalize();
    let i2 = (0..points.len())
        .max_by(|&a, &b| {
            let da = (points[a] - points[i0]).cross(&dir).norm();
            let db = (points[b] - points[i0]).cross(&dir).norm();
            da.total_cmp(&db)
        })
        .unwrap();
    if (points[i2] - points[i0]).cross(&dir).norm() < eps {
        return Err(TrajError::DegenerateInput("points are collinear".into()));
    }
    let plane_n = (points[i1] - points[i0])
        .cross(&(points[i2] - points[i0]))
        .normalize();
    let i3 = (0..points.len())
        .max_by(|&a, &b| {
            let da = (plane_n.dot(&(points[a] - points[i0]))).abs();
            let db = (plane_n.dot(&(points[b] - points[i0]))).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    if plane_n.dot(&(points[i3] - points[i0])).abs() < eps {
        return Err(TrajError::DegenerateInput("points are coplanar".into()));
    }

    // Orient the tetrahedron so all faces point away from its centroid.
    let centroid = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let mut faces: Vec<Face> = Vec::new();
    for [a, b, c] in [[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]] {
        let mut f = make_face(points, a, b, c);
        if f.distance(&centroid) > 0.0 {
            f = make_face(points, a, c, b);
        }
        faces.push(f);
    }

    // Conflict assignment: each point goes to the first face it is outside of.
    let simplex = [i0, i1, i2, i3];
    for (i, p) in points.iter().enumerate() {
        if simplex.contains(&i) {
            continue;
        }
        for f in faces.iter_mut() {
            if f.distance(p) > eps {
                f.conflicts.push(i);
                break;
            }
        }
    }

    loop {
        // Farthest conflict point over all live faces.
        let mut apex: Option<(usize, usize, f64)> = None;
        for (fi, f) in faces.iter().enumerate() {
            if !f.alive {
                continue;
            }
            for &pi in &f.conflicts {
                let d = f.distance(&points[pi]);
                if apex.map_or(true, |(_, _, best)| d > best) {
                    apex = Some((fi, pi, d));
                }
            }
        }
        let Some((_, pi, _)) = apex else { break };
        let p = points[pi];

        // Visible faces and orphaned conflict points.
        let mut visible = Vec::new();
        let mut orphans = Vec::new();
        for (fi, f) in faces.iter_mut().enumerate() {
            if f.alive && f.distance(&p) > eps {
                visible.push(fi);
                f.alive = false;
                orphans.append(&mut f.conflicts);
            }
        }

        // Horizon: directed edges of visible faces whose twin face survives.
        // Each directed edge of the mesh occurs exactly once, so an edge is on
        // the horizon iff its reverse is not an edge of any visible face.
        let mut visible_edges = BTreeMap::new();
        for &fi in &visible {
            let v = faces[fi].verts;
            for e in [[v[0], v[1]], [v[1], v[2]], [v[2], v[0]]] {
                visible_edges.insert((e[0], e[1]), ());
            }
        }
        let mut horizon = Vec::new();
        for (&(a, b), _) in &visible_edges {
            if !visible_edges.contains_key(&(b, a)) {
                horizon.push([a, b]);
            }
        }

        // New cone of faces from the horizon to the apex.
        let mut new_faces = Vec::new();
        for [a, b] in horizon {
            let f = make_face(points, a, b, pi);
            new_faces.push(faces.len());
            faces.push(f);
        }

        for o in orphans {
            if o == pi {
                continue;
            }
            for &fi in &new_faces {
                if faces[fi].distance(&points[o]) > eps {
                    faces[fi].conflicts.push(o);
                    break;
                }
            }
        }
    }

    // Compact to referenced vertices, keeping first-use order.
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut out_faces = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        let mut tri = [0usize; 3];
        for (slot, &v) in tri.iter_mut().zip(f.verts.iter()) {
            let next = remap.len();
            let idx = *remap.entry(v).or_insert(next);
            if idx == vertices.len() {
                vertices.push(points[v]);
            }
            *slot = idx;
        }
        out_faces.push(tri);
    }
    Ok(ConvexMesh {
        vertices,
        faces: out_faces,
    })
}

impl ConvexMesh {
    /// Outward unit normal and plane offset of face `i`.
    pub fn face_plane(&self, i: usize) -> (Vector3<f64>, f64) {
        let [a, b, c] = self.faces[i];
        let n = (self.vertices[b] - self.vertices[a])
            .cross(&(self.vertices[c] - self.vertices[a]))
            .normalize();
        (n, n.dot(&self.vertices[a]))
    }

    /// Every directed edge appears exactly once and every undirected edge
    /// exactly twice: the triangle mesh encloses a volume.
    pub fn is_watertight(&self) -> bool {
        let mut directed = BTreeMap::new();
        for f in &self.faces {
            for e in [[f[0], f[1]], [f[1], f[2]], [f[2], f[0]]] {
                if directed.insert((e[0], e[1]), ()).is_some() {
                    return false;
                }
            }
        }
        directed
            .keys()
            .all(|&(a, b)| directed.contains_key(&(b, a)))
    }

    /// Max signed distance of any point to any face plane (≤ 0 for convex).
    pub fn convexity_defect(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.faces.len() {
            let (n, o) = self.face_plane(i);
            for v in &self.vertices {
                worst = worst.max(n.dot(v) - o);
            }
        }
        worst
    }

    /// Signed distance of `p` to the hull boundary in the outside direction:
    /// max over face planes. Negative inside.
    pub fn plane_distance(&self, p: &Vector3<f64>) -> f64 {
        (0..self.faces.len())
            .map(|i| {
                let (n, o) = self.face_plane(i);
                n.dot(p) - o
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Volume by the divergence theorem over signed tetrahedra.
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a]
                    .cross(&self.vertices[b])
                    .dot(&self.vertices[c])
                    / 6.0
            })
            .sum()
    }
}
