//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test -p rams-sim --test acceptance`.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use rams_core::arm::JointConfig;
use rams_core::calibration::{calibrate_single, evaluate_calibration, CalibrationRig};
use rams_core::collision::{primitive_distance, CollisionPrimitive, Shape};
use rams_core::geometry::{pose_error, FrameId, RigidTransform};
use rams_core::human::{avatar_to_collision_objects, AvatarTracking, BodyDimensions, DEFAULT_AVATAR_MARGIN};
use rams_core::mesh::{shapes, TriangleMesh};
use rams_core::planning::{plan, validate, PlannerParams, PlanningError, PlanningScene};
use rams_core::registration::{icp, paired_point_register, PointCloud};
use rams_core::targeting::{cast_ray, tms_coil_pose, AnatomicalTarget, ClickerState};
use rams_net::{encode_frame, FrameDecoder, Message};
use rams_sim::experiment::run_calibration_experiment;
use rams_sim::scenario::{NoiseSpec, WorldConfig};
use rams_sim::workflow::{run_workflow, RunOptions, Transport};
use rams_sim::{Context, ErrorRow, Scenario, Summary};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn random_pose(rng: &mut ChaCha8Rng, reach: f64, max_angle: f64) -> RigidTransform {
    let axis = random_unit(rng);
    RigidTransform::translation_xyz(
        rng.random_range(-reach..reach),
        rng.random_range(-reach..reach),
        rng.random_range(-reach..reach),
    ) * RigidTransform::from_axis_angle(&axis, rng.random_range(0.0..max_angle))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return Unit::new_normalize(v);
        }
    }
}

fn ctx(s: Scenario) -> Arc<Context> {
    Arc::new(Context::new(s).expect("valid scenario"))
}

fn zero_noise_transparency() -> Verdict {
    let clock = Instant::now();
    let mut worst = (0.0f64, 0.0f64);
    for s in [Scenario::tms(), Scenario::femoroplasty()] {
        assert_eq!(s.trials, 10);
        match run_workflow(&ctx(s), RunOptions::default()) {
            Ok(run) => {
                for r in &run.reports {
                    worst.0 = worst.0.max(r.error.translation_error);
                    worst.1 = worst.1.max(r.error.rotation_error);
                }
            }
            Err(e) => return verdict(false, format!("workflow failed: {e}")),
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    verdict(
        worst.0 <= 1e-6 && worst.1 <= 1e-6 && secs <= 60.0,
        format!("20 trials, worst {:.2e} m / {:.2e} rad, {secs:.2} s (limit 1e-6, 60 s)", worst.0, worst.1),
    )
}

fn calibration_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_cal = (0.0f64, 0.0f64);
    let mut worst_eval = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let rig = CalibrationRig {
            n_t_oholo: random_pose(&mut rng, 2.0, PI),
            oholo_t_h: random_pose(&mut rng, 0.1, PI),
            n_t_oref: random_pose(&mut rng, 2.0, PI),
        };
        let estimate = calibrate_single(&rig.exact_sample());
        let e = pose_error(&rig.oholo_t_h, &estimate);
        worst_cal = (worst_cal.0.max(e.translation_error), worst_cal.1.max(e.rotation_error));
        let w_t_h = random_pose(&mut rng, 3.0, PI);
        let ev = evaluate_calibration(&rig.evaluation_sample(&w_t_h, &estimate, &RigidTransform::identity()));
        worst_eval = (worst_eval.0.max(ev.translation_error), worst_eval.1.max(ev.rotation_error));
    }
    let ok = worst_cal.0 <= 1e-10 && worst_cal.1 <= 1e-10 && worst_eval.0 <= 1e-10 && worst_eval.1 <= 1e-10;
    verdict(
        ok,
        format!(
            "100 samples, calibration worst {:.1e} m / {:.1e} rad, evaluation worst {:.1e} m / {:.1e} rad (limit 1e-10)",
            worst_cal.0, worst_cal.1, worst_eval.0, worst_eval.1
        ),
    )
}

fn calibration_magnitude() -> Verdict {
    let clock = Instant::now();
    let mut t_means = Vec::new();
    let mut r_means = Vec::new();
    for seed in 0..20 {
        let mut s = Scenario::calibration_eval();
        s.seed = seed;
        s.trials = 50;
        match run_calibration_experiment(&Context::new(s).expect("valid scenario")) {
            Ok(stats) => {
                t_means.push(stats.summary.column("t_norm").mean);
                r_means.push(stats.summary.column("r_angle").mean);
            }
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let range = |v: &[f64]| (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(0.0, f64::max));
    let (t_lo, t_hi) = range(&t_means);
    let (r_lo, r_hi) = range(&r_means);
    let ok = t_lo >= 1.0 && t_hi <= 15.0 && r_lo >= 0.1 && r_hi <= 2.0 && secs <= 30.0;
    verdict(
        ok,
        format!(
            "20 seeds x 50 trials, per-seed means {t_lo:.2}..{t_hi:.2} mm and {r_lo:.3}..{r_hi:.3} deg (bands [1, 15] mm, [0.1, 2] deg), {secs:.2} s"
        ),
    )
}

/// Upper end of the two-sided 95% confidence interval of the mean.
fn ci_upper(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("dof > 0").inverse_cdf(0.975);
    (mean, mean + t * sd / n.sqrt())
}

fn placement_magnitude() -> Verdict {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, mut s, world) in [
        ("tms", Scenario::tms(), WorldConfig::tms_default()),
        ("femoroplasty", Scenario::femoroplasty(), WorldConfig::femoroplasty_default()),
    ] {
        s.world = world.with_placement_noise();
        s.trials = 100;
        let run = match run_workflow(&ctx(s), RunOptions::default()) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("{name}: {e}")),
        };
        let rows: Vec<ErrorRow> = run.reports.iter().map(ErrorRow::from_report).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.t_norm).collect();
        let r: Vec<f64> = rows.iter().map(|r| r.r_angle).collect();
        let (tm, tu) = ci_upper(&t);
        let (rm, ru) = ci_upper(&r);
        ok &= tu < 2.0 && ru < 0.6 && rows.len() == 100;
        details.push(format!("{name} {tm:.2} mm (CI upper {tu:.2}), {rm:.3} deg (CI upper {ru:.3})"));
    }
    verdict(ok, format!("{}; bounds 2 mm, 0.6 deg", details.join("; ")))
}

fn registration_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_paired = 0.0f64;
    for _ in 0..100 {
        let truth = random_pose(&mut rng, 1.0, PI);
        let n = rng.random_range(3..40);
        let src: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
            .collect();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| truth.transform_point(p)).collect();
        let fit = paired_point_register(&PointCloud::new(src).unwrap(), &PointCloud::new(dst).unwrap()).unwrap();
        let e = pose_error(&truth, &fit.transform);
        worst_paired = worst_paired.max(e.translation_error).max(e.rotation_error);
    }

    let meshes = [shapes::head_phantom(), shapes::femur_phantom()];
    let mut worst_icp = (0.0f64, 0.0f64);
    let mut monotone = true;
    for scene in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + scene);
        let mesh = &meshes[scene as usize % 2];
        let truth = random_pose(&mut rng, 0.5, PI);
        let pts: Vec<Vector3<f64>> = mesh
            .sample_surface(300, &mut rng)
            .into_iter()
            .map(|(p, _)| truth.inverse().transform_point(&p))
            .collect();
        // Initial offset and error are both taken about the anatomy centroid.
        let (lo, hi) = mesh.bounds();
        let centre = RigidTransform::from_translation((lo + hi) / 2.0);
        let offset = RigidTransform::from_translation(random_unit(&mut rng).into_inner() * 5e-3)
            * RigidTransform::from_axis_angle(&random_unit(&mut rng), 3f64.to_radians());
        let init = centre * offset * centre.inverse() * truth;
        let fit = match icp(&PointCloud::new(pts).unwrap(), mesh, &init, 100, 1e-6) {
            Ok(f) => f,
            Err(e) => return verdict(false, format!("icp scene {scene}: {e}")),
        };
        let e = pose_error(&centre, &(fit.transform * truth.inverse() * centre));
        worst_icp = (worst_icp.0.max(e.translation_error), worst_icp.1.max(e.rotation_error));
        monotone &= fit.rms_history.windows(2).all(|w| w[1] <= w[0]);
    }
    let ok = worst_paired <= 1e-10 && worst_icp.0 <= 0.5e-3 && worst_icp.1 <= 0.5f64.to_radians() && monotone;
    verdict(
        ok,
        format!(
            "paired worst {worst_paired:.1e} (limit 1e-10); ICP 20 scenes worst {:.3} mm / {:.3} deg (limit 0.5 / 0.5); rms non-increasing: {monotone}",
            worst_icp.0 * 1e3,
            worst_icp.1.to_degrees()
        ),
    )
}

fn planner_soundness() -> Verdict {
    let base = Context::new(Scenario::tms()).unwrap();
    let graph = base.ground_truth_graph();
    let r_t_m = graph.resolve(FrameId::R, FrameId::M).unwrap();
    let r_t_h = graph.resolve(FrameId::R, FrameId::H).unwrap();
    let dims = BodyDimensions::default();
    let home = base.home();
    let upper: Vec<usize> = (0..base.anatomy.triangle_count())
        .filter(|&t| base.anatomy.triangle_normal(t).z > 0.6)
        .collect();

    let (mut ok_count, mut detours, mut invalid, mut other_err) = (0, 0, 0, 0);
    let mut errors = std::collections::BTreeMap::<String, usize>::new();
    let mut nondeterministic = 0;
    let mut min_clearance = f64::INFINITY;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene = None;
        for _ in 0..50 {
            let hand = |rng: &mut ChaCha8Rng| {
                Vector3::new(rng.random_range(0.30..0.80), rng.random_range(-0.40..-0.10), rng.random_range(0.35..0.85))
            };
            let tracking = AvatarTracking {
                head_pose: r_t_h,
                left_hand: Some(hand(&mut rng)),
                right_hand: Some(hand(&mut rng)),
            };
            if tracking.validate().is_err() {
                continue;
            }
            let s = PlanningScene::new(
                base.arm.clone(),
                avatar_to_collision_objects(&tracking, &dims, DEFAULT_AVATAR_MARGIN),
                0.01,
            );
            if s.config_valid(&home) {
                scene = Some(s);
                break;
            }
        }
        let Some(scene) = scene else {
            *errors.entry("no valid start".into()).or_default() += 1;
            continue;
        };
        let tri = upper[rng.random_range(0..upper.len())];
        let c = base.anatomy.corners(tri);
        let target = AnatomicalTarget {
            position: (c[0] + c[1] + c[2]) / 3.0,
            normal: base.anatomy.triangle_normal(tri),
            triangle: tri,
        };
        let pose = tms_coil_pose(&target, 0.005, &Vector3::x()).unwrap().pose;
        let goal = r_t_m * pose * base.flange_t_instrument.inverse();
        let params = PlannerParams::with_seed(seed);
        match plan(&scene, &home, &goal, &params) {
            Ok(traj) => {
                ok_count += 1;
                if traj.knots.len() > 2 {
                    detours += 1;
                }
                let v = validate(&scene, &traj);
                if !traj.validated || !v.valid {
                    invalid += 1;
                }
                // Clearance against the avatar at every waypoint and at the
                // midpoints between consecutive waypoints.
                let mut check = |q: &JointConfig| {
                    let shapes = scene.arm.posed_shapes(q);
                    for (_, s) in &shapes {
                        for o in &scene.obstacles {
                            min_clearance = min_clearance.min(primitive_distance(s, o));
                        }
                    }
                };
                for w in traj.waypoints.windows(2) {
                    check(&w[0]);
                    check(&w[0].lerp(&w[1], 0.5));
                }
                check(traj.waypoints.last().unwrap());
                if plan(&scene, &home, &goal, &params).as_ref() != Ok(&traj) {
                    nondeterministic += 1;
                }
            }
            Err(e) => {
                let key = match e {
                    PlanningError::GoalInCollision | PlanningError::GoalUnreachable | PlanningError::PlanningTimeout { .. } => {
                        format!("{e:?}").split([' ', '{', '(']).next().unwrap().to_string()
                    }
                    _ => {
                        other_err += 1;
                        format!("unexpected {e}")
                    }
                };
                *errors.entry(key).or_default() += 1;
            }
        }
    }

    // Blocked goals: an obstacle at the goal flange, a goal out of reach, and
    // an obstacle on the start.
    let target = base.target(0).point;
    let snap = base.anatomy.closest_point(&Vector3::from(target));
    let t0 = AnatomicalTarget {
        position: snap.point,
        normal: base.anatomy.triangle_normal(snap.triangle),
        triangle: snap.triangle,
    };
    let goal = r_t_m * tms_coil_pose(&t0, 0.005, &Vector3::x()).unwrap().pose * base.flange_t_instrument.inverse();
    let blocked = PlanningScene::new(
        base.arm.clone(),
        vec![CollisionPrimitive::sphere(*goal.translation(), 0.05, "block")],
        0.01,
    );
    let free = PlanningScene::new(base.arm.clone(), vec![], 0.01);
    let start_block = PlanningScene::new(
        base.arm.clone(),
        vec![CollisionPrimitive::sphere(*base.arm.flange_pose(&home).translation(), 0.05, "block")],
        0.01,
    );
    let far = RigidTransform::translation_xyz(2.5, 0.0, 0.5);
    let params = PlannerParams::with_seed(1);
    let blocked_ok = matches!(plan(&blocked, &home, &goal, &params), Err(PlanningError::GoalInCollision))
        && matches!(plan(&free, &home, &far, &params), Err(PlanningError::GoalUnreachable))
        && matches!(plan(&start_block, &home, &goal, &params), Err(PlanningError::StartInCollision(_)));

    let ok = invalid == 0 && other_err == 0 && nondeterministic == 0 && min_clearance > 0.0 && ok_count > 0 && blocked_ok;
    verdict(
        ok,
        format!(
            "100 scenes: {ok_count} planned ({detours} with detours), errors {errors:?}; invalid {invalid}, non-identical replans {nondeterministic}, min avatar clearance {:.1} mm; blocked-goal errors as specified: {blocked_ok}",
            min_clearance * 1e3
        ),
    )
}

/// Oracle surfaces: a parameter triple in [0, 1]^3 maps onto (or into) the
/// primitive, and each primitive has a closed-form point distance.
fn surface_point(s: &Shape, u: [f64; 3]) -> Vector3<f64> {
    let dir = |a: f64, b: f64| {
        let z = 1.0 - 2.0 * a;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = 2.0 * PI * b;
        Vector3::new(r * phi.cos(), r * phi.sin(), z)
    };
    match s {
        Shape::Sphere { center, radius } => center + dir(u[0], u[1]) * *radius,
        Shape::Capsule { p0, p1, radius } => p0 + (p1 - p0) * u[2] + dir(u[0], u[1]) * *radius,
        Shape::Box { pose, half_extents } => {
            let face = ((u[2] * 6.0).floor() as usize).min(5);
            let axis = face % 3;
            let sign = if face < 3 { 1.0 } else { -1.0 };
            let mut local = Vector3::zeros();
            local[axis] = sign * half_extents[axis];
            local[(axis + 1) % 3] = (2.0 * u[0] - 1.0) * half_extents[(axis + 1) % 3];
            local[(axis + 2) % 3] = (2.0 * u[1] - 1.0) * half_extents[(axis + 2) % 3];
            pose.transform_point(&local)
        }
    }
}

fn oracle_point_distance(s: &Shape, p: &Vector3<f64>) -> f64 {
    match s {
        Shape::Sphere { center, radius } => (p - center).norm() - radius,
        Shape::Capsule { p0, p1, radius } => {
            let d = p1 - p0;
            let t = if d.norm_squared() > 0.0 { ((p - p0).dot(&d) / d.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
            (p - (p0 + d * t)).norm() - radius
        }
        Shape::Box { pose, half_extents } => {
            let l = pose.inverse().transform_point(p);
            let q = l.abs() - half_extents;
            let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
            outside + q.max().min(0.0)
        }
    }
}

fn oracle_support(s: &Shape, u: &Vector3<f64>) -> f64 {
    match s {
        Shape::Sphere { center, radius } => center.dot(u) + radius,
        Shape::Capsule { p0, p1, radius } => p0.dot(u).max(p1.dot(u)) + radius,
        Shape::Box { pose, half_extents } => {
            let r = pose.rotation_matrix();
            pose.translation().dot(u) + (0..3).map(|i| half_extents[i] * r.column(i).dot(u).abs()).sum::<f64>()
        }
    }
}

/// Sampled minimum over A's surface of the distance to B, with local
/// refinement of the best samples. An upper bound on the separation of
/// disjoint shapes; negative once a sample of A lies inside B.
fn sampled_separation(a: &Shape, b: &Shape, rng: &mut ChaCha8Rng) -> f64 {
    let f = |u: [f64; 3]| oracle_point_distance(b, &surface_point(a, u));
    let mut samples: Vec<(f64, [f64; 3])> = (0..600)
        .map(|_| {
            let u = [rng.random(), rng.random(), rng.random()];
            (f(u), u)
        })
        .collect();
    samples.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best = samples[0].0;
    for &(mut v, mut u) in samples.iter().take(4) {
        let mut step = 0.05;
        while step > 1e-7 {
            let mut improved = false;
            for _ in 0..12 {
                let mut c = u;
                for v in &mut c {
                    *v = (*v + rng.random_range(-step..step)).clamp(0.0, 1.0);
                }
                // Stay on the box face chosen by the sample.
                if let Shape::Box { .. } = a {
                    c[2] = u[2];
                }
                let cv = f(c);
                if cv < v {
                    v = cv;
                    u = c;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best = best.min(v);
    }
    best
}

/// Penetration depth from sampled separating directions: the smallest
/// overlap of the two support intervals. Box supports are kinked at their
/// minima, so the local search probes tangent axes as well as random
/// directions and only shrinks after repeated failures.
fn sampled_penetration(a: &Shape, b: &Shape, rng: &mut ChaCha8Rng) -> f64 {
    let overlap = |u: &Vector3<f64>| oracle_support(a, u) + oracle_support(b, &-u);
    let golden = PI * (3.0 - 5f64.sqrt());
    let n = 3000;
    let mut starts: Vec<(f64, Vector3<f64>)> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let u = Vector3::new(r * (golden * i as f64).cos(), r * (golden * i as f64).sin(), z);
            (overlap(&u), u)
        })
        .collect();
    starts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut overall = f64::INFINITY;
    for &(start, u0) in starts.iter().take(8) {
        let mut best = (start, u0);
        let mut step = 0.1;
        let mut misses = 0;
        while step > 1e-9 {
            let (t1, t2) = rams_core::targeting::tangent_basis(&best.1);
            let mut probes = vec![t1, -t1, t2, -t2, t1 + t2, t1 - t2, -t1 + t2, -t1 - t2];
            probes.extend((0..40).map(|_| random_unit(rng).into_inner()));
            let mut improved = false;
            for d in probes {
                let u = (best.1 + d * step).normalize();
                let v = overlap(&u);
                if v < best.0 {
                    best = (v, u);
                    improved = true;
                }
            }
            if improved {
                misses = 0;
            } else {
                misses += 1;
                if misses >= 3 {
                    step *= 0.5;
                    misses = 0;
                }
            }
        }
        overall = overall.min(best.0);
    }
    overall
}

fn random_shape(rng: &mut ChaCha8Rng) -> Shape {
    let c = Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    match rng.random_range(0..3) {
        0 => Shape::Sphere {
            center: c,
            radius: rng.random_range(0.01..0.1),
        },
        1 => {
            let d = random_unit(rng).into_inner() * rng.random_range(0.0..0.15);
            Shape::Capsule {
                p0: c - d,
                p1: c + d,
                radius: rng.random_range(0.01..0.08),
            }
        }
        _ => Shape::Box {
            pose: RigidTransform::from_translation(c) * RigidTransform::from_axis_angle(&random_unit(rng), rng.random_range(0.0..PI)),
            half_extents: Vector3::new(rng.random_range(0.01..0.1), rng.random_range(0.01..0.1), rng.random_range(0.01..0.1)),
        },
    }
}

fn random_mesh_query(rng: &mut ChaCha8Rng, mesh: &TriangleMesh) -> (Vector3<f64>, Vector3<f64>) {
    let (lo, hi) = mesh.bounds();
    let span = hi - lo;
    let p = Vector3::new(
        rng.random_range(lo.x - span.x..hi.x + span.x),
        rng.random_range(lo.y - span.y..hi.y + span.y),
        rng.random_range(lo.z - span.z..hi.z + span.z),
    );
    // Aim near the mesh so most rays hit.
    let aim = (lo + hi) / 2.0 + Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)).component_mul(&span);
    (p, (aim - p).normalize())
}

fn collision_geometry_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let tol = 2e-3;
    let (mut sign_bad, mut mag_bad, mut worst_mag, mut separated, mut penetrating) = (0, 0, 0.0f64, 0, 0);
    for _ in 0..10_000 {
        let a = CollisionPrimitive {
            shape: random_shape(&mut rng),
            label: "a".into(),
            margin: 0.0,
        };
        let b = CollisionPrimitive {
            shape: random_shape(&mut rng),
            label: "b".into(),
            margin: 0.0,
        };
        let d = primitive_distance(&a, &b);
        let sep = sampled_separation(&a.shape, &b.shape, &mut rng).min(sampled_separation(&b.shape, &a.shape, &mut rng));
        if d >= 0.0 {
            separated += 1;
            // Sampling can only overestimate a separation.
            if sep < d - 1e-9 || (d > tol && sep <= 0.0) {
                sign_bad += 1;
            }
            let err = (sep - d).abs();
            worst_mag = worst_mag.max(err);
            if err > tol {
                mag_bad += 1;
            }
        } else {
            penetrating += 1;
            let depth = sampled_penetration(&a.shape, &b.shape, &mut rng);
            if sep > tol || depth < 0.0 {
                sign_bad += 1;
            }
            let err = (-depth - d).abs();
            worst_mag = worst_mag.max(err);
            if err > tol {
                mag_bad += 1;
            }
        }
    }

    let (mut cp_bad, mut ray_bad, mut hits) = (0, 0, 0);
    let meshes = [shapes::head_phantom(), shapes::femur_phantom()];
    for i in 0..1000 {
        let mesh = &meshes[i % 2];
        let (p, dir) = random_mesh_query(&mut rng, mesh);
        let fast = mesh.closest_point(&p);
        let slow = mesh.closest_point_brute_force(&p);
        if fast.distance != slow.distance || fast.point != slow.point {
            cp_bad += 1;
        }
        let clicker = ClickerState::new(
            RigidTransform::from_axes_xz(&rams_core::targeting::tangent_basis(&dir).0, &dir, p),
            nalgebra::Vector2::zeros(),
            true,
        );
        // The probe pose stores a quaternion, so compare on its own ray.
        let (p, dir) = clicker.ray();
        let fast = mesh.ray_cast(&p, &dir);
        let slow = mesh.ray_cast_brute_force(&p, &dir);
        let targeted = cast_ray(&clicker, mesh);
        match (&fast, &slow) {
            (Some(f), Some(s)) => {
                hits += 1;
                if f.t != s.t || f.point != s.point || targeted.as_ref().map(|t| t.position).ok() != Some(s.point) {
                    ray_bad += 1;
                }
            }
            (None, None) => {
                if targeted.is_ok() {
                    ray_bad += 1;
                }
            }
            _ => ray_bad += 1,
        }
    }
    let ok = sign_bad == 0 && mag_bad == 0 && cp_bad == 0 && ray_bad == 0;
    verdict(
        ok,
        format!(
            "1e4 pairs ({separated} separated, {penetrating} penetrating): sign errors {sign_bad}, magnitude > 2 mm {mag_bad} (worst {:.3} mm); 1e3 mesh queries: closest-point mismatches {cp_bad}, ray mismatches {ray_bad} ({hits} hits)",
            worst_mag * 1e3
        ),
    )
}

fn random_message(rng: &mut ChaCha8Rng, kind: usize) -> Message {
    let trial = rng.random();
    let pose = random_pose(rng, 5.0, PI);
    let frame = FrameId::ALL[rng.random_range(0..FrameId::ALL.len())];
    match kind {
        0 => Message::PoseUpdate {
            trial,
            parent: frame,
            child: FrameId::ALL[rng.random_range(0..FrameId::ALL.len())],
            pose,
            stamp: rng.random(),
        },
        1 => Message::AvatarUpdate {
            trial,
            frame,
            tracking: AvatarTracking {
                head_pose: pose,
                left_hand: rng.random_bool(0.5).then(|| Vector3::new(rng.random(), rng.random(), rng.random())),
                right_hand: rng.random_bool(0.5).then(|| Vector3::new(rng.random(), rng.random(), rng.random())),
            },
        },
        2 => Message::TargetConfirm {
            trial,
            accepted: rng.random(),
            pose,
        },
        3 => {
            let n = rng.random_range(2..30);
            let waypoints: Vec<JointConfig> = (0..n)
                .map(|_| JointConfig::from_slice(&(0..7).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>()))
                .collect();
            Message::TrajectoryMsg {
                trial,
                trajectory: rams_core::planning::JointTrajectory {
                    knots: vec![0, n - 1],
                    validated: rng.random(),
                    seed: rng.random(),
                    max_step: rng.random(),
                    waypoints: waypoints.clone(),
                },
                flange_goal: pose,
                start: waypoints[0],
                planning_time: rng.random(),
            }
        }
        4 => Message::ExecuteCmd { trial },
        5 => Message::Ack {
            version: format!("{}", rng.random_range(0..9)),
            subject: format!("s{}", rng.random::<u32>()),
            value: rng.random(),
        },
        _ => Message::Error {
            trial: rng.random_bool(0.5).then_some(trial),
            stage: "stage ü".into(),
            message: format!("msg \"{}\"\n", rng.random::<u64>()),
        },
    }
}

fn protocol_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    let mut decoder = FrameDecoder::new();
    let mut count = 0;
    for i in 0..7 * 300 {
        let m = random_message(&mut rng, i % 7);
        let frame = encode_frame(&m).expect("encodable");
        // Feed in uneven chunks.
        let cut = rng.random_range(0..frame.len());
        decoder.push(&frame[..cut]);
        decoder.push(&frame[cut..]);
        match decoder.next_message() {
            Ok(Some(back)) if back == m => {}
            _ => bad += 1,
        }
        count += 1;
    }

    let mut mismatches = Vec::new();
    for s in [
        Scenario::tms().with_clicker_targets(),
        Scenario {
            world: WorldConfig::femoroplasty_default().with_placement_noise(),
            ..Scenario::femoroplasty()
        },
    ] {
        let c = ctx(s);
        let local = run_workflow(&c, RunOptions::default()).map(|r| r.without_timing());
        for transport in [Transport::Loopback, Transport::Tcp] {
            let remote = run_workflow(&c, RunOptions { transport, parallel: false }).map(|r| r.without_timing());
            match (&local, &remote) {
                (Ok(a), Ok(b)) if a == b => {}
                (a, b) => mismatches.push(format!("{:?} {transport:?}: {:?} vs {:?}", c.scenario.kind, a.as_ref().err(), b.as_ref().err())),
            }
        }
    }
    verdict(
        bad == 0 && mismatches.is_empty(),
        format!("{count} random messages, {bad} failed round trips; loopback/TCP vs in-process mismatches: {mismatches:?}"),
    )
}

fn decoupling() -> Verdict {
    let mut base = Scenario::tms();
    base.world = WorldConfig::tms_default().with_placement_noise();
    base.trials = 30;
    let mut runs = Vec::new();
    for mm in [0.0, 2.0, 5.0] {
        let mut s = base.clone();
        s.world.calibration_error = NoiseSpec::Rms {
            rms_translation: mm * 1e-3,
            sigma_rotation: 0.0,
            time_offset_sigma: 0.0,
        };
        match run_workflow(&ctx(s), RunOptions::default()) {
            Ok(r) => runs.push(r),
            Err(e) => return verdict(false, format!("{mm} mm: {e}")),
        }
    }
    let errors: Vec<Vec<(u64, u64, [u64; 3])>> = runs
        .iter()
        .map(|r| {
            r.reports
                .iter()
                .map(|t| {
                    (
                        t.error.translation_error.to_bits(),
                        t.error.rotation_error.to_bits(),
                        [t.per_axis.translation.x.to_bits(), t.per_axis.translation.y.to_bits(), t.per_axis.translation.z.to_bits()],
                    )
                })
                .collect()
        })
        .collect();
    let identical = errors.windows(2).all(|w| w[0] == w[1]);
    let summaries: Vec<Summary> = runs
        .iter()
        .map(|r| Summary::of(&r.reports.iter().map(ErrorRow::from_report).collect::<Vec<_>>()).unwrap())
        .collect();
    let same_summary = summaries.windows(2).all(|w| w[0] == w[1]);
    // The injected error is real: the world-to-tracker estimates differ.
    let estimate = |r: &rams_sim::WorkflowRun| {
        r.logs[0].iter().find_map(|e| match e {
            rams_sim::workflow::LogEntry::Sent(Message::PoseUpdate { parent: FrameId::W, pose, .. }) => Some(*pose),
            _ => None,
        })
    };
    let shift = pose_error(&estimate(&runs[0]).unwrap(), &estimate(&runs[2]).unwrap()).translation_error;
    verdict(
        identical && same_summary && shift > 0.0,
        format!(
            "30 trials x {{0, 2, 5}} mm: per-trial errors bitwise identical {identical}, summaries identical {same_summary}; W->N estimate shift at 5 mm {:.2} mm; mean error {:.3} mm",
            shift * 1e3,
            summaries[0].column("t_norm").mean
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        ("zero-noise transparency", zero_noise_transparency),
        ("calibration identity", calibration_identity),
        ("calibration magnitude class", calibration_magnitude),
        ("placement magnitude class", placement_magnitude),
        ("registration oracle", registration_oracle),
        ("planner soundness", planner_soundness),
        ("collision/geometry oracles", collision_geometry_oracles),
        ("protocol round-trip", protocol_round_trip),
        ("decoupling", decoupling),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let clock = Instant::now();
        let v = f();
        println!(
            "{} {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            clock.elapsed().as_secs_f64()
        );
        failed += usize::from(!v.pass);
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
