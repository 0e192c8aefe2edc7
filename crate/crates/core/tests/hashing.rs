use compnerf::geometry::Aabb;
use compnerf::hashenc::{
    partial_freeze_on_tape, query_multisubject_on_tape, slice_residual, slice_rigid, BundleVars, GridBundle, GridConfig, HashGrid,
};
use diffcore::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bbox() -> Aabb {
    Aabb {
        min: [-0.5, -1.0, 0.25],
        max: [1.5, 0.6, 1.0],
    }
}

fn single(res: usize, log2: u32) -> GridConfig {
    GridConfig {
        levels: 1,
        half_width: 2,
        log2_table_size: log2,
        base_resolution: res,
        max_resolution: res,
    }
}

fn vertex_position(b: &Aabb, res: usize, v: [u32; 3]) -> [f64; 3] {
    std::array::from_fn(|a| b.min[a] + (b.max[a] - b.min[a]) * v[a] as f64 / res as f64)
}

fn linear(p: [f64; 3], c: usize) -> f64 {
    let coef = [[0.3, -1.2, 2.0, 0.1], [1.0, 0.5, -0.7, -0.4], [-2.0, 0.0, 0.25, 1.5], [0.7, 0.7, 0.7, 0.0]];
    let k = coef[c];
    k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + k[3]
}

#[test]
fn trilinear_is_exact_on_linear_fields() {
    let res = 7;
    let grid = HashGrid::zeros(single(res, 12), bbox()).unwrap();
    let level = grid.levels[0];
    assert!(level.direct);
    let mut e = (*grid.entries).clone();
    for i in 0..=res as u32 {
        for j in 0..=res as u32 {
            for k in 0..=res as u32 {
                let p = vertex_position(&grid.bbox, res, [i, j, k]);
                let row = level.offset + level.slot([i, j, k]);
                for c in 0..4 {
                    e.data_mut()[row * 4 + c] = linear(p, c);
                }
            }
        }
    }
    let grid = grid.with_entries(e).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = grid.bbox;
    for _ in 0..20 {
        let x: [f64; 3] = std::array::from_fn(|a| b.min[a] + (b.max[a] - b.min[a]) * rng.random_range(0.001..0.999));
        let f = grid.query(x);
        for c in 0..4 {
            assert!((f[c] - linear(x, c)).abs() < 1e-9, "{x:?} channel {c}: {} vs {}", f[c], linear(x, c));
        }
    }
}

/// `(x·1) xor (y·2654435761) xor (z·805459861)` in 32-bit arithmetic, then
/// modulo the table size.
fn reference_hash(v: [u32; 3], table: usize) -> usize {
    let m = 1u64 << 32;
    let h = (v[0] as u64 % m) ^ (v[1] as u64 * 2_654_435_761 % m) ^ (v[2] as u64 * 805_459_861 % m);
    (h % table as u64) as usize
}

#[test]
fn fine_levels_use_the_spatial_hash() {
    let cfg = GridConfig {
        levels: 3,
        half_width: 2,
        log2_table_size: 10,
        base_resolution: 4,
        max_resolution: 64,
    };
    let grid = HashGrid::zeros(cfg, bbox()).unwrap();
    assert!(grid.levels[0].direct);
    let hashed = grid.levels.iter().find(|l| !l.direct).expect("a hashed level");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let r = hashed.resolution as u32;
        let v = [rng.random_range(0..=r), rng.random_range(0..=r), rng.random_range(0..=r)];
        assert_eq!(hashed.slot(v), reference_hash(v, 1024), "{v:?}");
        assert_eq!(hashed.slot(v), hashed.slot(v));
    }
}

#[test]
fn query_is_continuous_across_cell_boundaries() {
    let cfg = GridConfig {
        levels: 4,
        half_width: 2,
        log2_table_size: 9,
        base_resolution: 3,
        max_resolution: 40,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = HashGrid::random(cfg, bbox(), &mut rng).unwrap();
    let e = Tensor::new(
        grid.entries.shape().to_vec(),
        (0..grid.entries.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let grid = grid.with_entries(e).unwrap();
    let b = grid.bbox;
    let res = grid.levels[3].resolution;
    let cell = (b.max[0] - b.min[0]) / res as f64;
    for i in 1..res {
        let edge = b.min[0] + cell * i as f64;
        let h = 1e-9;
        let lo = grid.query([edge - h, 0.1, 0.5]);
        let hi = grid.query([edge + h, 0.1, 0.5]);
        for (a, c) in lo.iter().zip(&hi) {
            // Slope is at most the entry range over the finest cell.
            assert!((a - c).abs() <= 2.0 * (2.0 * h) / cell + 1e-12, "{a} {c}");
        }
    }
}

#[test]
fn partial_freeze_gradient_is_the_blend_weights() {
    let res = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = HashGrid::random(single(res, 12), bbox(), &mut rng).unwrap();
    let b = grid.bbox;
    let x = [0.37, -0.21, 0.66];
    let mut tape = Tape::new();
    let entries = tape.param_shared(grid.entries.clone());
    let pts = tape.constant(Tensor::matrix(1, 3, x.to_vec()).unwrap());
    let f = grid.query_on_tape(&mut tape, entries, pts).unwrap();
    let fs = partial_freeze_on_tape(&mut tape, f, 2).unwrap();
    let loss = tape.sum(fs);
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(entries).unwrap();

    let mut expected = vec![0.0; grid.entries.len()];
    let u: [f64; 3] = std::array::from_fn(|a| (x[a] - b.min[a]) / (b.max[a] - b.min[a]) * res as f64);
    let base: [u32; 3] = std::array::from_fn(|a| u[a].floor() as u32);
    for k in 0..8u32 {
        let bit = [k >> 2 & 1, k >> 1 & 1, k & 1];
        let w: f64 = (0..3)
            .map(|a| {
                let t = u[a] - base[a] as f64;
                if bit[a] == 1 {
                    t
                } else {
                    1.0 - t
                }
            })
            .product();
        let v = [base[0] + bit[0], base[1] + bit[1], base[2] + bit[2]];
        let row = grid.levels[0].slot(v);
        expected[row * 4 + 2] += w;
        expected[row * 4 + 3] += w;
    }
    for (i, (a, e)) in g.iter().zip(&expected).enumerate() {
        assert!((a - e).abs() < 1e-12, "entry {i}: {a} vs {e}");
        if i % 4 < 2 {
            assert_eq!(*a, 0.0);
        }
    }
}

fn bundle(subjects: usize, global: bool) -> GridBundle {
    let local = GridConfig {
        levels: 3,
        half_width: 2,
        log2_table_size: 8,
        base_resolution: 2,
        max_resolution: 12,
    };
    let gcfg = GridConfig { levels: 4, ..local };
    GridBundle {
        global: global.then(|| HashGrid::zeros(gcfg, bbox()).unwrap()),
        locals: (0..subjects).map(|_| HashGrid::zeros(local, bbox()).unwrap()).collect(),
    }
}

#[test]
fn multisubject_widths_and_local_segments() {
    let b = bundle(2, true);
    assert_eq!(b.rigid_width(), 4 * 4 + 3 * 2);
    assert_eq!(b.nonrigid_width(), 4 * 4 + 3 * 4);
    let mut tape = Tape::new();
    let gv = tape.param(Tensor::filled(b.global.as_ref().unwrap().entries.shape(), 0.25));
    let rows = b.locals[0].rows();
    let locals = vec![tape.param(Tensor::filled(&[rows, 4], 1.0)), tape.param(Tensor::filled(&[rows, 4], -2.0))];
    let vars = BundleVars {
        global: Some(gv),
        locals,
    };
    let pts = tape.constant(Tensor::matrix(2, 3, vec![0.1, 0.0, 0.5, 1.2, -0.5, 0.9]).unwrap());
    let (r0, n0) = query_multisubject_on_tape(&mut tape, &b, &vars, 0, pts).unwrap();
    let (r1, n1) = query_multisubject_on_tape(&mut tape, &b, &vars, 1, pts).unwrap();
    let (r0, r1) = (tape.value(r0).data().to_vec(), tape.value(r1).data().to_vec());
    for row in 0..2 {
        for c in 0..b.rigid_width() {
            let (a, z) = (r0[row * 22 + c], r1[row * 22 + c]);
            if c < 16 {
                assert_eq!(a, z);
                assert!((a - 0.25).abs() < 1e-12);
            } else {
                assert!((a - 1.0).abs() < 1e-12 && (z + 2.0).abs() < 1e-12);
            }
        }
    }
    let s0 = tape.sum(n0);
    let s1 = tape.sum(n1);
    let loss = tape.add(s0, s1).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(gv).is_none_or(|g| g.iter().all(|&v| v == 0.0)));
    assert!(grads.get(vars.locals[1]).unwrap().iter().any(|&v| v != 0.0));
    assert!(query_multisubject_on_tape(&mut tape, &b, &vars, 2, pts).is_err());
}

#[test]
fn single_subject_bundle_has_no_global_segment() {
    let b = bundle(1, false);
    assert_eq!(b.rigid_width(), 6);
    assert_eq!(b.nonrigid_width(), 12);
    let mut tape = Tape::new();
    let lv = tape.param(Tensor::zeros(&[b.locals[0].rows(), 4]));
    let pts = tape.constant(Tensor::matrix(1, 3, vec![0.0, 0.0, 0.5]).unwrap());
    let vars = BundleVars {
        global: None,
        locals: vec![lv],
    };
    let (r, n) = query_multisubject_on_tape(&mut tape, &b, &vars, 0, pts).unwrap();
    assert_eq!(tape.shape(r), [1, 6]);
    assert_eq!(tape.shape(n), [1, 12]);
    assert!(tape.value(n).data().iter().all(|&v| v == 0.0));
}

proptest! {
    #[test]
    fn slices_reassemble_the_features(levels in 1usize..6, h in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..levels * 2 * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = slice_rigid(&f, h).unwrap();
        let r = slice_residual(&f, h).unwrap();
        let mut back = Vec::new();
        for l in 0..levels {
            back.extend_from_slice(&a[l * h..(l + 1) * h]);
            back.extend_from_slice(&r[l * h..(l + 1) * h]);
        }
        prop_assert_eq!(back, f);
    }

    #[test]
    fn query_blends_within_entry_range(x in -1.0f64..2.0, y in -1.5f64..1.0, z in 0.0f64..1.3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GridConfig { levels: 2, half_width: 1, log2_table_size: 6, base_resolution: 3, max_resolution: 9 };
        let g = HashGrid::random(cfg, bbox(), &mut rng).unwrap();
        let e = Tensor::new(g.entries.shape().to_vec(), (0..g.entries.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let g = g.with_entries(e).unwrap();
        for v in g.query([x, y, z]) {
            prop_assert!(v.abs() <= 1.0 + 1e-12);
        }
    }
}
