//! Basis point set shape encoding.
//!
//! A fixed set of N=128 points sampled uniformly in the unit ball (fixed,
//! documented seed) is scaled by the shape's bounding radius and expressed in
//! the shape's local frame; each feature is the scalar distance from a basis
//! point to the nearest point on the shape surface, clamped to zero inside.
//! Because basis points ride along with the shape frame, the encoding is
//! invariant to rigid motion of the shape.

use nalgebra::Vector3;
use rand::Rng;

use super::shape::ObjectShape;
use crate::geom::Pose;

pub const BPS_BASIS_SIZE: usize = 128;
/// Seed for the shared basis; changing it invalidates stored encodings.
pub const BPS_BASIS_SEED: u64 = 0x42505331;

#[derive(Debug, Clone)]
pub struct BpsEncoding {
    /// Basis points in the unit ball, before per-shape scaling.
    pub basis: Vec<Vector3<f64>>,
    /// Distances in meters, one per basis point.
    pub features: Vec<f64>,
}

/// The shared unit-ball basis (rejection-sampled, deterministic).
pub fn unit_ball_basis() -> Vec<Vector3<f64>> {
    let mut rng = crate::rng::stream(BPS_BASIS_SEED, "bps-basis", 0);
    let mut pts = Vec::with_capacity(BPS_BASIS_SIZE);
    while pts.len() < BPS_BASIS_SIZE {
        let p = Vector3::new(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        if p.norm_squared() <= 1.0 {
            pts.push(p);
        }
    }
    pts
}

/// Encode `shape` at `pose`. Basis points are anchored to the shape frame, so
/// the features depend only on the shape geometry; `pose` is accepted to make
/// the rigid-motion invariance explicit at call sites.
pub fn bps_encode(shape: &ObjectShape, _pose: &Pose) -> BpsEncoding {
    let basis = unit_ball_basis();
    let rho = shape.bounding_radius();
    let features = basis
        .iter()
        .map(|b| shape.surface_query(&(b * rho)).distance.max(0.0))
        .collect();
    BpsEncoding { basis, features }
}
