//! Maps posed points back to canonical space with the initial skinning
//! volume and reports how far the round trip lands from the start.
//!
//! cargo run --release --example inverse_skinning

use compnerf::geometry::{Mat3, Vec3};
use compnerf::skeleton::{forward_kinematics, Pose, Skeleton};
use compnerf::skinning::init_weight_volume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> compnerf::Result<()> {
    let sk = Skeleton::humanoid(4)?;
    let vol = init_weight_volume(&sk, [24; 3], 0.5 * sk.mean_bone_length(), 0.3, true)?;

    // Bend every bone a little around a tilted axis.
    let rots: Vec<Mat3> = (0..sk.bone_count()).map(|k| Mat3::from_axis_angle([0.2, 0.3, 1.0], 0.2 * (k + 1) as f64)).collect();
    let pose = forward_kinematics(&sk, &rots, [0.05, 0.0, 0.0])?;
    let identity = Pose::identity(&sk);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst_identity: f64 = 0.0;
    let mut round_trip = Vec::new();
    for _ in 0..2000 {
        // Canonical point near bone k, posed rigidly with that bone.
        let k = rng.random_range(0..sk.bone_count());
        let (a, b) = sk.rest_segment(k);
        let t: f64 = rng.random_range(0.2..0.8);
        let xc: Vec3 = std::array::from_fn(|i| a[i] + t * (b[i] - a[i]) + rng.random_range(-0.02..0.02));
        let s = vol.inverse_lbs(&identity, xc);
        if s.valid {
            worst_identity = worst_identity.max((0..3).map(|i| (s.x_c[i] - xc[i]).abs()).fold(0.0, f64::max));
        }
        let x = pose.to_observation(k, xc);
        let back = vol.inverse_lbs(&pose, x);
        if back.valid {
            round_trip.push((0..3).map(|i| (back.x_c[i] - xc[i]).powi(2)).sum::<f64>().sqrt());
        }
    }
    round_trip.sort_by(f64::total_cmp);
    let median = round_trip[round_trip.len() / 2];
    let p90 = round_trip[round_trip.len() * 9 / 10];
    println!("identity pose: worst |x_c - x| = {worst_identity:.2e}");
    println!(
        "bent pose: {} valid round trips, median error {:.4} m, 90th percentile {:.4} m",
        round_trip.len(),
        median,
        p90
    );
    Ok(())
}
