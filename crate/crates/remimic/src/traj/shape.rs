//! Object shapes: convex meshes and primitives, mass properties, and
//! point-to-surface distance queries (the basis for contact and BPS).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::hull::ConvexMesh;
use super::TrajError;

pub const DEFAULT_DENSITY: f64 = 200.0;

fn default_density() -> f64 {
    DEFAULT_DENSITY
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ShapeKind {
    ConvexMesh {
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
    },
    Box {
        half_extents: [f64; 3],
    },
    Sphere {
        radius: f64,
    },
    Cylinder {
        radius: f64,
        half_height: f64,
    },
}

/// Passive revolute joint inside an articulated object (e.g. a lid). The
/// simulator integrates its angle with viscous damping and limit stops; the
/// base shape alone is used for collision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HingeSpec {
    /// Unit axis in the shape's local frame.
    pub axis: [f64; 3],
    /// Point on the axis, local frame.
    pub anchor: [f64; 3],
    pub limits: [f64; 2],
    /// Rotational inertia about the axis, kg·m².
    pub inertia: f64,
    /// Viscous damping, N·m·s.
    pub damping: f64,
}

/// Rigid object shape with uniform density (mass may be declared explicitly,
/// overriding the density-derived value).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectShape {
    #[serde(flatten)]
    pub kind: ShapeKind,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hinge: Option<HingeSpec>,
}

/// Derived rigid-body constants, in the shape's local frame.
#[derive(Debug, Clone)]
pub struct MassProperties {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// Inertia tensor about the center of mass.
    pub inertia: Matrix3<f64>,
}

/// Result of a point-to-surface query in the shape's local frame.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint {
    /// Signed distance: negative when the query point is inside.
    pub distance: f64,
    /// Closest point on the surface.
    pub witness: Vector3<f64>,
    /// Outward surface normal at the witness point.
    pub normal: Vector3<f64>,
}

impl ObjectShape {
    pub fn new(kind: ShapeKind) -> Self {
        Self {
            kind,
            density: DEFAULT_DENSITY,
            mass: None,
            hinge: None,
        }
    }

    pub fn from_mesh(mesh: ConvexMesh) -> Self {
        Self::new(ShapeKind::ConvexMesh {
            vertices: mesh.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            faces: mesh.faces,
        })
    }

    pub fn mesh(&self) -> Option<ConvexMesh> {
        match &self.kind {
            ShapeKind::ConvexMesh { vertices, faces } => Some(ConvexMesh {
                vertices: vertices
                    .iter()
                    .map(|v| Vector3::new(v[0], v[1], v[2]))
                    .collect(),
                faces: faces.clone(),
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), TrajError> {
        if self.density <= 0.0 || !self.density.is_finite() {
            return Err(TrajError::Validation("shape density must be > 0".into()));
        }
        if let Some(m) = self.mass {
            if m <= 0.0 || !m.is_finite() {
                return Err(TrajError::Validation("declared mass must be > 0".into()));
            }
        }
        if let Some(h) = &self.hinge {
            let axis = Vector3::new(h.axis[0], h.axis[1], h.axis[2]);
            if (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(TrajError::Validation("hinge axis must be unit".into()));
            }
            if !(h.limits[0] < h.limits[1]) {
                return Err(TrajError::Validation("hinge limits not ordered".into()));
            }
            if h.inertia <= 0.0 || h.damping < 0.0 {
                return Err(TrajError::Validation("hinge inertia/damping invalid".into()));
            }
        }
        match &self.kind {
            ShapeKind::ConvexMesh { vertices, faces } => {
                if vertices.len() < 4 || faces.len() < 4 {
                    return Err(TrajError::Validation(
                        "convex mesh needs at least 4 vertices and faces".into(),
                    ));
                }
                for f in faces {
                    if f.iter().any(|&i| i >= vertices.len()) {
                        return Err(TrajError::Validation("face index out of range".into()));
                    }
                }
                let mesh = self.mesh().unwrap();
                if !mesh.is_watertight() {
                    return Err(TrajError::Validation("convex mesh not watertight".into()));
                }
                if mesh.convexity_defect() > 1e-7 {
                    return Err(TrajError::Validation(format!(
                        "mesh not convex: defect {}",
                        mesh.convexity_defect()
                    )));
                }
                if mesh.volume() <= 0.0 {
                    return Err(TrajError::Validation("mesh volume not positive".into()));
                }
            }
            ShapeKind::Box { half_extents } => {
                if half_extents.iter().any(|&h| h <= 0.0 || !h.is_finite()) {
                    return Err(TrajError::Validation("box half-extents must be > 0".into()));
                }
            }
            ShapeKind::Sphere { radius } => {
                if *radius <= 0.0 || !radius.is_finite() {
                    return Err(TrajError::Validation("sphere radius must be > 0".into()));
                }
            }
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => {
                if *radius <= 0.0 || *half_height <= 0.0 {
                    return Err(TrajError::Validation(
                        "cylinder dimensions must be > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        match &self.kind {
            ShapeKind::ConvexMesh { .. } => self.mesh().unwrap().volume(),
            ShapeKind::Box { half_extents: h } => 8.0 * h[0] * h[1] * h[2],
            ShapeKind::Sphere { radius } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => std::f64::consts::PI * radius * radius * 2.0 * half_height,
        }
    }

    /// Mass, center of mass, and inertia about the COM.
    pub fn mass_properties(&self) -> MassProperties {
        let volume = self.volume();
        let mass = self.mass.unwrap_or(self.density * volume);
        match &self.kind {
            ShapeKind::Box { half_extents: h } => MassProperties {
                mass,
                com: Vector3::zeros(),
                inertia: Matrix3::from_diagonal(&Vector3::new(
                    mass / 3.0 * (h[1] * h[1] + h[2] * h[2]),
                    mass / 3.0 * (h[0] * h[0] + h[2] * h[2]),
                    mass / 3.0 * (h[0] * h[0] + h[1] * h[1]),
                )),
            },
            ShapeKind::Sphere { radius } => {
                let i = 0.4 * mass * radius * radius;
                MassProperties {
                    mass,
                    com: Vector3::zeros(),
                    inertia: Matrix3::from_diagonal(&Vector3::new(i, i, i)),
                }
            }
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => {
                let r2 = radius * radius;
                let h2 = half_height * half_height;
                let ixx = mass * (3.0 * r2 + 4.0 * h2) / 12.0;
                MassProperties {
                    mass,
                    com: Vector3::zeros(),
                    inertia: Matrix3::from_diagonal(&Vector3::new(ixx, ixx, 0.5 * mass * r2)),
                }
            }
            ShapeKind::ConvexMesh { .. } => {
                let mesh = self.mesh().unwrap();
                mesh_mass_properties(&mesh, mass, volume)
            }
        }
    }

    /// Max distance from the shape-frame origin to the surface; used to scale
    /// the BPS basis.
    pub fn bounding_radius(&self) -> f64 {
        match &self.kind {
            ShapeKind::ConvexMesh { vertices, .. } => vertices
                .iter()
                .map(|v| Vector3::new(v[0], v[1], v[2]).norm())
                .fold(0.0, f64::max),
            ShapeKind::Box { half_extents: h } => Vector3::new(h[0], h[1], h[2]).norm(),
            ShapeKind::Sphere { radius } => *radius,
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => (radius * radius + half_height * half_height).sqrt(),
        }
    }

    /// Closest surface point, outward normal, and signed distance for a query
    /// point in the shape's local frame.
    pub fn surface_query(&self, p: &Vector3<f64>) -> SurfacePoint {
        match &self.kind {
            ShapeKind::Sphere { radius } => {
                let d = p.norm();
                let normal = if d > 1e-12 {
                    p / d
                } else {
                    Vector3::new(0.0, 0.0, 1.0)
                };
                SurfacePoint {
                    distance: d - radius,
                    witness: normal * *radius,
                    normal,
                }
            }
            ShapeKind::Box { half_extents } => box_query(p, half_extents),
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => cylinder_query(p, *radius, *half_height),
            ShapeKind::ConvexMesh { .. } => mesh_query(&self.mesh().unwrap(), p),
        }
    }

    /// Boundary points used for object–object penalty contact: a shape's
    /// samples are tested against the other shape's surface. Spheres are
    /// represented by their center plus radius instead.
    pub fn collision_samples(&self) -> Vec<Vector3<f64>> {
        match &self.kind {
            ShapeKind::ConvexMesh { vertices, .. } => vertices
                .iter()
                .map(|v| Vector3::new(v[0], v[1], v[2]))
                .collect(),
            ShapeKind::Box { half_extents: h } => {
                let mut pts = Vec::with_capacity(8);
                for &x in &[-h[0], h[0]] {
                    for &y in &[-h[1], h[1]] {
                        for &z in &[-h[2], h[2]] {
                            pts.push(Vector3::new(x, y, z));
                        }
                    }
                }
                pts
            }
            ShapeKind::Sphere { .. } => vec![Vector3::zeros()],
            ShapeKind::Cylinder {
                radius,
                half_height,
            } => {
                let mut pts = vec![
                    Vector3::new(0.0, 0.0, *half_height),
                    Vector3::new(0.0, 0.0, -*half_height),
                ];
                for i in 0..8 {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / 8.0;
                    let (s, c) = a.sin_cos();
                    pts.push(Vector3::new(radius * c, radius * s, *half_height));
                    pts.push(Vector3::new(radius * c, radius * s, -*half_height));
                }
                pts
            }
        }
    }

    /// Radius for sample points when this shape collides as a point cloud
    /// (only spheres carry one).
    pub fn sample_radius(&self) -> f64 {
        match &self.kind {
            ShapeKind::Sphere { radius } => *radius,
            _ => 0.0,
        }
    }
}

fn box_query(p: &Vector3<f64>, h: &[f64; 3]) -> SurfacePoint {
    let he = Vector3::new(h[0], h[1], h[2]);
    let clamped = Vector3::new(
        p.x.clamp(-he.x, he.x),
        p.y.clamp(-he.y, he.y),
        p.z.clamp(-he.z, he.z),
    );
    let delta = p - clamped;
    let dist = delta.norm();
    if dist > 1e-12 {
        return SurfacePoint {
            distance: dist,
            witness: clamped,
            normal: delta / dist,
        };
    }
    // Inside: walk out through the nearest face.
    let mut best_axis = 0;
    let mut best_gap = f64::INFINITY;
    for axis in 0..3 {
        let gap = he[axis] - p[axis].abs();
        if gap < best_gap {
            best_gap = gap;
            best_axis = axis;
        }
    }
    let sign = if p[best_axis] >= 0.0 { 1.0 } else { -1.0 };
    let mut witness = *p;
    witness[best_axis] = sign * he[best_axis];
    let mut normal = Vector3::zeros();
    normal[best_axis] = sign;
    SurfacePoint {
        distance: -best_gap,
        witness,
        normal,
    }
}

fn cylinder_query(p: &Vector3<f64>, radius: f64, half_height: f64) -> SurfacePoint {
    let radial = Vector3::new(p.x, p.y, 0.0);
    let r = radial.norm();
    let r_dir = if r > 1e-12 {
        radial / r
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    let dr = r - radius;
    let dz = p.z.abs() - half_height;
    let z_sign = if p.z >= 0.0 { 1.0 } else { -1.0 };
    if dr <= 0.0 && dz <= 0.0 {
        // Inside: nearest of side wall and caps.
        if -dr < -dz {
            SurfacePoint {
                distance: dr,
                witness: r_dir * radius + Vector3::new(0.0, 0.0, p.z),
                normal: r_dir,
            }
        } else {
            SurfacePoint {
                distance: dz,
                witness: Vector3::new(p.x, p.y, z_sign * half_height),
                normal: Vector3::new(0.0, 0.0, z_sign),
            }
        }
    } else if dr > 0.0 && dz <= 0.0 {
        SurfacePoint {
            distance: dr,
            witness: r_dir * radius + Vector3::new(0.0, 0.0, p.z),
            normal: r_dir,
        }
    } else if dr <= 0.0 && dz > 0.0 {
        SurfacePoint {
            distance: dz,
            witness: Vector3::new(p.x, p.y, z_sign * half_height),
            normal: Vector3::new(0.0, 0.0, z_sign),
        }
    } else {
        // Outside the rim corner.
        let rim = r_dir * radius + Vector3::new(0.0, 0.0, z_sign * half_height);
        let delta = p - rim;
        let dist = delta.norm();
        SurfacePoint {
            distance: dist,
            witness: rim,
            normal: delta / dist.max(1e-12),
        }
    }
}

/// Closest point on triangle (a, b, c) to p (Ericson, Real-Time Collision
/// Detection §5.1.5).
fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

fn mesh_query(mesh: &ConvexMesh, p: &Vector3<f64>) -> SurfacePoint {
    // Inside iff below every face plane; while scanning, track the least-deep
    // face for the penetration witness and the closest triangle for the
    // exterior witness.
    let mut max_plane = f64::NEG_INFINITY;
    let mut best_face = 0usize;
    let mut best_exterior: Option<(f64, Vector3<f64>)> = None;
    for i in 0..mesh.faces.len() {
        let (n, o) = mesh.face_plane(i);
        let d = n.dot(p) - o;
        if d > max_plane {
            max_plane = d;
            best_face = i;
        }
        let [a, b, c] = mesh.faces[i];
        let q = closest_point_on_triangle(
            p,
            &mesh.vertices[a],
            &mesh.vertices[b],
            &mesh.vertices[c],
        );
        let dist = (p - q).norm();
        if best_exterior.map_or(true, |(bd, _)| dist < bd) {
            best_exterior = Some((dist, q));
        }
    }
    if max_plane >= 0.0 {
        // On or outside the hull.
        let (dist, witness) = best_exterior.unwrap();
        let (n, _) = mesh.face_plane(best_face);
        let normal = if dist > 1e-9 { (p - witness) / dist } else { n };
        SurfacePoint {
            distance: dist,
            witness,
            normal,
        }
    } else {
        let (n, o) = mesh.face_plane(best_face);
        let depth = o - n.dot(p); // > 0
        SurfacePoint {
            distance: -depth,
            witness: p + n * depth,
            normal: n,
        }
    }
}

/// Polyhedral mass properties via signed tetrahedra against the origin.
fn mesh_mass_properties(mesh: &ConvexMesh, mass: f64, volume: f64) -> MassProperties {
    let mut com = Vector3::zeros();
    let mut second = Matrix3::zeros(); // ∫ x xᵀ dV
    for &[ia, ib, ic] in &mesh.faces {
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        let det = a.cross(&b).dot(&c); // 6 × signed tet volume
        let vol = det / 6.0;
        com += vol * (a + b + c) / 4.0;
        // ∫ x_i x_j over tet (0,a,b,c) = V/20 (Σ_k v_k v_kᵀ + s sᵀ), s = Σ_k v_k.
        let s = a + b + c;
        let m = a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose();
        second += (vol / 20.0) * m;
    }
    com /= volume;
    let density = mass / volume;
    second *= density;
    // Inertia about origin, then parallel-axis shift to COM.
    let trace = second.trace();
    let i_origin = Matrix3::identity() * trace - second;
    let shift = mass * (Matrix3::identity() * com.norm_squared() - com * com.transpose());
    MassProperties {
        mass,
        com,
        inertia: i_origin - shift,
    }
}
