use compnerf::geometry::{Aabb, Mat3, Vec3};
use compnerf::skeleton::{forward_kinematics, Pose, Skeleton};
use compnerf::skinning::{init_weight_volume, inverse_lbs, observation_weights, query_weights, VolumeLayout, WeightTable};
use diffcore::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_point(b: &Aabb, rng: &mut impl Rng) -> Vec3 {
    std::array::from_fn(|a| rng.random_range(b.min[a]..=b.max[a]))
}

fn random_pose(sk: &Skeleton, rng: &mut impl Rng, max_angle: f64) -> Pose {
    let rots: Vec<Mat3> = (0..sk.bone_count())
        .map(|_| {
            let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            Mat3::from_axis_angle(axis, rng.random_range(-max_angle..max_angle))
        })
        .collect();
    let t = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
    forward_kinematics(sk, &rots, t).unwrap()
}

pub fn identity_pose_maps_points_to_themselves() {
    let sk = Skeleton::humanoid(23).unwrap();
    let vol = init_weight_volume(&sk, [16; 3], 0.5 * sk.mean_bone_length(), 0.3, true).unwrap();
    let table = vol.table();
    let pose = Pose::identity(&sk);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut valid = 0;
    for _ in 0..10_000 {
        let x = random_point(&vol.layout.bbox, &mut rng);
        let s = inverse_lbs(&vol.layout, &table, &pose, x);
        if s.valid {
            valid += 1;
            for a in 0..3 {
                assert!((s.x_c[a] - x[a]).abs() < 1e-9, "{x:?} -> {:?}", s.x_c);
            }
            let w = observation_weights(&vol.layout, &table, &pose, x).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    assert!(valid > 5_000, "only {valid} valid samples");
}

/// Softmax of each vertex row, blended trilinearly, written out without
/// the library's corner helper.
fn oracle_weights(res: usize, lo: f64, hi: f64, logits: &[f64], ch: usize, p: Vec3) -> Option<Vec<f64>> {
    if p.iter().any(|&v| v < lo || v > hi) {
        return None;
    }
    let n = (res - 1) as f64;
    let u: Vec<f64> = p.iter().map(|&v| (v - lo) / (hi - lo) * n).collect();
    let i: Vec<usize> = u.iter().map(|&v| (v.floor() as usize).min(res - 2)).collect();
    let mut out = vec![0.0; ch];
    for di in 0..2 {
        for dj in 0..2 {
            for dk in 0..2 {
                let d = [di, dj, dk];
                let w: f64 = (0..3)
                    .map(|a| {
                        let f = u[a] - i[a] as f64;
                        if d[a] == 1 {
                            f
                        } else {
                            1.0 - f
                        }
                    })
                    .product();
                let v = ((i[0] + di) * res + i[1] + dj) * res + i[2] + dk;
                let row = &logits[v * ch..(v + 1) * ch];
                let m = row.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = row.iter().map(|l| (l - m).exp()).sum();
                for c in 0..ch {
                    out[c] += w * (row[c] - m).exp() / z;
                }
            }
        }
    }
    Some(out)
}

pub fn two_bone_inverse_skinning_matches_direct_evaluation() {
    let res = 9;
    let (lo, hi) = (-1.0, 1.0);
    let layout = VolumeLayout {
        resolution: [res; 3],
        bbox: Aabb { min: [lo; 3], max: [hi; 3] },
        bones: 2,
        background: false,
    };
    let centers = [[-0.4, 0.0, 0.0], [0.5, 0.2, -0.1]];
    let mut logits = Vec::new();
    for i in 0..res {
        for j in 0..res {
            for k in 0..res {
                let p = layout.vertex_position(i, j, k);
                for c in centers {
                    let d2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
                    logits.push(-d2 / (2.0 * 0.3 * 0.3));
                }
            }
        }
    }
    let table = WeightTable::from_logits(&Tensor::new(vec![res * res * res, 2], logits.clone()).unwrap(), 2);
    let quarter = Mat3::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
    let pose = Pose {
        rotations: vec![Mat3::IDENTITY, quarter],
        translations: vec![[0.0; 3], [0.1, -0.05, 0.0]],
        joints: vec![[0.0; 3]; 3],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for _ in 0..200 {
        let x = random_point(&Aabb { min: [-0.9; 3], max: [0.9; 3] }, &mut rng);
        // y_k = R_k x + t_k, by hand.
        let ys = [
            x,
            [-x[1] + 0.1, x[0] - 0.05, x[2]],
        ];
        let mut den = 0.0;
        let mut num = [0.0; 3];
        for (k, y) in ys.iter().enumerate() {
            if let Some(w) = oracle_weights(res, lo, hi, &logits, 2, *y) {
                den += w[k];
                for a in 0..3 {
                    num[a] += w[k] * y[a];
                }
            }
        }
        let s = inverse_lbs(&layout, &table, &pose, x);
        assert_eq!(s.valid, den >= 1e-9);
        if s.valid {
            checked += 1;
            for a in 0..3 {
                assert!((s.x_c[a] - num[a] / den).abs() < 1e-12, "{x:?}");
            }
        }
    }
    assert!(checked > 150);
}

pub fn single_bone_is_a_rigid_map() {
    let layout = VolumeLayout {
        resolution: [4; 3],
        bbox: Aabb { min: [-2.0; 3], max: [2.0; 3] },
        bones: 1,
        background: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits: Vec<f64> = (0..64 * 2).map(|_| rng.random_range(-3.0..3.0)).collect();
    let table = WeightTable::from_logits(&Tensor::new(vec![64, 2], logits).unwrap(), 2);
    let r = Mat3::from_axis_angle([1.0, 2.0, -0.5], 0.8);
    let t = [0.3, -0.2, 0.1];
    let pose = Pose {
        rotations: vec![r],
        translations: vec![t],
        joints: vec![[0.0; 3]; 2],
    };
    for _ in 0..100 {
        let x = random_point(&Aabb { min: [-1.0; 3], max: [1.0; 3] }, &mut rng);
        let s = inverse_lbs(&layout, &table, &pose, x);
        assert!(s.valid);
        let want = r.mul_vec(x);
        for a in 0..3 {
            assert!((s.x_c[a] - (want[a] + t[a])).abs() < 1e-12);
        }
        assert!(s.foreground_weight > 0.0 && s.foreground_weight < 1.0);
    }
}

pub fn canonical_weights_are_a_partition_of_unity() {
    let sk = Skeleton::humanoid(6).unwrap();
    let vol = init_weight_volume(&sk, [10; 3], 0.1, 0.3, true).unwrap();
    let table = vol.table();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = vol.layout.bbox;
    let wide = Aabb {
        min: std::array::from_fn(|a| b.min[a] - 0.5),
        max: std::array::from_fn(|a| b.max[a] + 0.5),
    };
    for _ in 0..2000 {
        let p = random_point(&wide, &mut rng);
        let w = query_weights(&vol.layout, &table, p);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        if !b.contains(p) {
            assert_eq!(w[w.len() - 1], 1.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn observation_weights_sum_to_one(seed in any::<u64>()) {
        let sk = Skeleton::humanoid(5).unwrap();
        let vol = init_weight_volume(&sk, [10; 3], 0.5 * sk.mean_bone_length(), 0.3, true).unwrap();
        let table = vol.table();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&sk, &mut rng, 1.0);
        for _ in 0..50 {
            let x = random_point(&vol.layout.bbox, &mut rng);
            if let Some(w) = observation_weights(&vol.layout, &table, &pose, x) {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(w.iter().all(|&v| v >= 0.0));
                let s = inverse_lbs(&vol.layout, &table, &pose, x);
                prop_assert!(s.valid && (0.0..=1.0 + 1e-12).contains(&s.foreground_weight));
            }
        }
    }
}

mod tests {
    #[test]
    fn identity_pose_maps_points_to_themselves() {
        super::identity_pose_maps_points_to_themselves()
    }

    #[test]
    fn two_bone_inverse_skinning_matches_direct_evaluation() {
        super::two_bone_inverse_skinning_matches_direct_evaluation()
    }

    #[test]
    fn single_bone_is_a_rigid_map() {
        super::single_bone_is_a_rigid_map()
    }

    #[test]
    fn canonical_weights_are_a_partition_of_unity() {
        super::canonical_weights_are_a_partition_of_unity()
    }
}
