use nalgebra::{Unit, UnitQuaternion, Vector3};
use proptest::prelude::*;

use rams_core::collision::{primitive_distance, CollisionPrimitive};
use rams_core::geometry::{pose_error, FrameGraph, FrameId, RigidTransform};
use rams_core::mesh::io::{load_mesh, write_binary_stl};
use rams_core::mesh::shapes;

fn pose() -> impl Strategy<Value = RigidTransform> {
    (
        prop::array::uniform3(-5.0..5.0f64),
        prop::array::uniform3(-1.0..1.0f64),
        0.0..std::f64::consts::PI,
    )
        .prop_filter_map("axis", |(t, a, angle)| {
            let axis = Vector3::from(a);
            (axis.norm() > 1e-3).then(|| {
                RigidTransform::new(
                    UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle),
                    Vector3::from(t),
                )
            })
        })
}

fn point() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-1.0..1.0f64).prop_map(Vector3::from)
}

fn primitive() -> impl Strategy<Value = CollisionPrimitive> {
    prop_oneof![
        (point(), 0.01..0.3f64).prop_map(|(c, r)| CollisionPrimitive::sphere(c, r, "s")),
        (point(), point(), 0.01..0.2f64).prop_map(|(a, b, r)| CollisionPrimitive::capsule(a, b, r, "c")),
        (pose(), prop::array::uniform3(0.01..0.3f64))
            .prop_map(|(p, h)| CollisionPrimitive::cuboid(p, Vector3::from(h), "b")),
    ]
}

proptest! {
    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose(), p in point()) {
        let left = (a * b) * c;
        let right = a * (b * c);
        prop_assert!(left.approx_eq(&right, 1e-9, 1e-9));
        let q = left.transform_point(&p);
        prop_assert!((q - a.transform_point(&b.transform_point(&c.transform_point(&p)))).norm() < 1e-9);
    }

    #[test]
    fn inverse_undoes(a in pose(), p in point()) {
        prop_assert!((a * a.inverse()).approx_eq(&RigidTransform::identity(), 1e-12, 1e-12));
        prop_assert!((a.inverse().transform_point(&a.transform_point(&p)) - p).norm() < 1e-9);
        let e = pose_error(&a, &a);
        prop_assert!(e.translation_error < 1e-12 && e.rotation_error < 1e-6);
    }

    #[test]
    fn graph_resolves_any_pair(edges in prop::collection::vec(pose(), 4)) {
        // Chain R -> N -> M and a branch R -> H -> OHolo.
        let mut g = FrameGraph::new();
        g.add_edge(FrameId::R, FrameId::N, edges[0], 0.0).unwrap();
        g.add_edge(FrameId::N, FrameId::M, edges[1], 0.0).unwrap();
        g.add_edge(FrameId::R, FrameId::H, edges[2], 0.0).unwrap();
        g.add_edge(FrameId::H, FrameId::OHolo, edges[3], 0.0).unwrap();
        let m_t_oholo = g.resolve(FrameId::M, FrameId::OHolo).unwrap();
        let expected = (edges[0] * edges[1]).inverse() * edges[2] * edges[3];
        prop_assert!(m_t_oholo.approx_eq(&expected, 1e-9, 1e-9));
        let back = g.resolve(FrameId::OHolo, FrameId::M).unwrap();
        prop_assert!((back * m_t_oholo).approx_eq(&RigidTransform::identity(), 1e-9, 1e-9));
        prop_assert!(g.resolve(FrameId::M, FrameId::W).is_err());
    }

    #[test]
    fn distance_is_symmetric_and_rigid(a in primitive(), b in primitive(), t in pose()) {
        let d = primitive_distance(&a, &b);
        prop_assert!((d - primitive_distance(&b, &a)).abs() < 1e-9);
        prop_assert!((d - primitive_distance(&a.transformed(&t), &b.transformed(&t))).abs() < 1e-7);
    }

    #[test]
    fn margins_subtract(a in primitive(), b in primitive(), m in 0.0..0.1f64) {
        let d = primitive_distance(&a, &b);
        let padded = primitive_distance(&a.clone().with_margin(m), &b);
        prop_assert!((d - m - padded).abs() < 1e-12);
    }

    #[test]
    fn mesh_queries_match_brute_force(o in prop::array::uniform3(-0.3..0.3f64), d in point()) {
        prop_assume!(d.norm() > 1e-3);
        let mesh = shapes::head_phantom();
        let o = Vector3::from(o);
        let fast = mesh.closest_point(&o);
        let slow = mesh.closest_point_brute_force(&o);
        prop_assert_eq!(fast.distance, slow.distance);
        let d = d.normalize();
        prop_assert_eq!(mesh.ray_cast(&o, &d).map(|h| h.t), mesh.ray_cast_brute_force(&o, &d).map(|h| h.t));
    }
}

#[test]
fn stl_round_trip_preserves_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("femur.stl");
    let mesh = shapes::femur_phantom();
    // Written in millimetres, read back in metres.
    write_binary_stl(&mesh, &path, 1000.0).unwrap();
    let back = load_mesh(&path, 1e-3).unwrap();
    assert_eq!(back.triangle_count(), mesh.triangle_count());
    assert!((back.signed_volume() - mesh.signed_volume()).abs() < 1e-6 * mesh.signed_volume().abs());
    let (lo, hi) = mesh.bounds();
    let (blo, bhi) = back.bounds();
    assert!((lo - blo).norm() < 1e-6 && (hi - bhi).norm() < 1e-6);
}
