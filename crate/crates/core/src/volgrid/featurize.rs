use ndarray::{s, Array4};

use super::{CtVolume, FeatureMapStack};
use crate::error::{Error, Result};

/// Channels per output cell: mean, max, min, mean absolute in-block gradient.
pub const FEATURE_CHANNELS: usize = 4;

/// Fixed, parameter-free stand-in for a learned backbone.
///
/// Each `g x pool x pool` block of voxels becomes one cell of the output with
/// four channels. The gradient channel averages `|v[next] - v[here]|` over
/// every axis-aligned neighbour pair that lies inside the block, so each
/// output cell depends on its own block only.
pub fn toy_featurize(vol: &CtVolume, g: usize, pool: usize) -> Result<FeatureMapStack> {
    let [s, r, c] = vol.dims();
    if g == 0 || pool == 0 {
        return Err(Error::InvalidArgument(
            "slice group and pool size must be positive".into(),
        ));
    }
    if s % g != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{s} slices are not divisible by slice group {g}"
        )));
    }
    if r % pool != 0 || c % pool != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{r}x{c} in-plane grid is not divisible by pool {pool}"
        )));
    }
    let (h, d1, d2) = (s / g, r / pool, c / pool);
    let vox = vol.voxels();
    let mut out = Array4::<f64>::zeros((h, FEATURE_CHANNELS, d1, d2));
    for hh in 0..h {
        for i in 0..d1 {
            for j in 0..d2 {
                let block = vox.slice(s![
                    hh * g..(hh + 1) * g,
                    i * pool..(i + 1) * pool,
                    j * pool..(j + 1) * pool
                ]);
                let mut sum = 0.0f64;
                let mut max = f64::NEG_INFINITY;
                let mut min = f64::INFINITY;
                for &v in block.iter() {
                    let v = f64::from(v);
                    sum += v;
                    max = max.max(v);
                    min = min.min(v);
                }
                let mut grad_sum = 0.0f64;
                let mut pairs = 0usize;
                let (bs, br, bc) = block.dim();
                for ((a, b, cc), &v) in block.indexed_iter() {
                    let v = f64::from(v);
                    if a + 1 < bs {
                        grad_sum += (f64::from(block[[a + 1, b, cc]]) - v).abs();
                        pairs += 1;
                    }
                    if b + 1 < br {
                        grad_sum += (f64::from(block[[a, b + 1, cc]]) - v).abs();
                        pairs += 1;
                    }
                    if cc + 1 < bc {
                        grad_sum += (f64::from(block[[a, b, cc + 1]]) - v).abs();
                        pairs += 1;
                    }
                }
                out[[hh, 0, i, j]] = sum / block.len() as f64;
                out[[hh, 1, i, j]] = max;
                out[[hh, 2, i, j]] = min;
                out[[hh, 3, i, j]] = if pairs == 0 {
                    0.0
                } else {
                    grad_sum / pairs as f64
                };
            }
        }
    }
    FeatureMapStack::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    /// Accumulates every voxel into its block by global index arithmetic.
    fn naive_featurize(vox: &Array3<f32>, g: usize, pool: usize) -> Array4<f64> {
        let (s, r, c) = vox.dim();
        let (h, d1, d2) = (s / g, r / pool, c / pool);
        let mut sum = vec![0.0f64; h * d1 * d2];
        let mut max = vec![f64::NEG_INFINITY; h * d1 * d2];
        let mut min = vec![f64::INFINITY; h * d1 * d2];
        let mut gsum = vec![0.0f64; h * d1 * d2];
        let mut pairs = vec![0usize; h * d1 * d2];
        let cell = |a: usize, b: usize, cc: usize| ((a / g) * d1 + b / pool) * d2 + cc / pool;
        for a in 0..s {
            for b in 0..r {
                for cc in 0..c {
                    let k = cell(a, b, cc);
                    let v = vox[[a, b, cc]] as f64;
                    sum[k] += v;
                    if v > max[k] {
                        max[k] = v;
                    }
                    if v < min[k] {
                        min[k] = v;
                    }
                    let neighbours = [(a + 1, b, cc), (a, b + 1, cc), (a, b, cc + 1)];
                    for (na, nb, nc) in neighbours {
                        if na < s && nb < r && nc < c && cell(na, nb, nc) == k {
                            gsum[k] += (vox[[na, nb, nc]] as f64 - v).abs();
                            pairs[k] += 1;
                        }
                    }
                }
            }
        }
        let n = (g * pool * pool) as f64;
        Array4::from_shape_fn((h, 4, d1, d2), |(hh, f, i, j)| {
            let k = (hh * d1 + i) * d2 + j;
            match f {
                0 => sum[k] / n,
                1 => max[k],
                2 => min[k],
                _ => {
                    if pairs[k] == 0 {
                        0.0
                    } else {
                        gsum[k] / pairs[k] as f64
                    }
                }
            }
        })
    }

    fn volume(vox: Array3<f32>) -> CtVolume {
        CtVolume::new("t", vox, [1.0; 3]).unwrap()
    }

    #[test]
    fn constant_volume_has_mean_half_and_zero_gradient() {
        let z = toy_featurize(&volume(Array3::from_elem((6, 8, 8), 0.5)), 3, 4).unwrap();
        assert_eq!(z.dims().h, 2);
        assert_eq!(z.dims().d1, 2);
        let v = z.values();
        assert!(v.slice(s![.., 0, .., ..]).iter().all(|&x| x == 0.5));
        assert!(v.slice(s![.., 3, .., ..]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_bright_voxel_dominates_max_channel() {
        let mut vox = Array3::from_elem((6, 8, 8), 0.2f32);
        vox[[4, 1, 6]] = 0.9;
        let z = toy_featurize(&volume(vox), 3, 4).unwrap();
        let v = z.values();
        let hot = v[[1, 1, 0, 1]];
        for ((h, f, i, j), &x) in v.indexed_iter() {
            if f == 1 && (h, i, j) != (1, 0, 1) {
                assert!(hot > x);
            }
        }
    }

    #[test]
    fn divisibility_is_enforced() {
        let vol = volume(Array3::from_elem((7, 8, 8), 0.5));
        assert!(toy_featurize(&vol, 3, 4).is_err());
        let vol = volume(Array3::from_elem((6, 8, 10), 0.5));
        assert!(toy_featurize(&vol, 3, 4).is_err());
    }

    fn arb_volume() -> impl Strategy<Value = (Array3<f32>, usize, usize)> {
        (1usize..=3, 1usize..=3, 1usize..=3, 1usize..=3, 1usize..=3).prop_flat_map(
            |(g, pool, h, d1, d2)| {
                let n = g * h * pool * d1 * pool * d2;
                proptest::collection::vec(0.0f32..=1.0, n).prop_map(move |vals| {
                    let vox = Array3::from_shape_vec((g * h, pool * d1, pool * d2), vals).unwrap();
                    (vox, g, pool)
                })
            },
        )
    }

    proptest! {
        #[test]
        fn matches_naive_oracle_exactly((vox, g, pool) in arb_volume()) {
            let z = toy_featurize(&volume(vox.clone()), g, pool).unwrap();
            let oracle = naive_featurize(&vox, g, pool);
            for (a, b) in z.values().iter().zip(oracle.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn deterministic_and_block_local(
            (vox, g, pool) in arb_volume(),
            pick in 0usize..10_000,
            delta in 0.01f32..0.5,
        ) {
            let base = toy_featurize(&volume(vox.clone()), g, pool).unwrap();
            let again = toy_featurize(&volume(vox.clone()), g, pool).unwrap();
            prop_assert_eq!(&base, &again);

            let (s, r, c) = vox.dim();
            let k = pick % (s * r * c);
            let (a, b, cc) = (k / (r * c), (k / c) % r, k % c);
            let mut perturbed = vox.clone();
            let v = perturbed[[a, b, cc]];
            perturbed[[a, b, cc]] = if v + delta <= 1.0 { v + delta } else { v - delta };
            let z = toy_featurize(&volume(perturbed), g, pool).unwrap();
            let cell = (a / g, b / pool, cc / pool);
            for ((h, f, i, j), &x) in z.values().indexed_iter() {
                if (h, i, j) != cell {
                    prop_assert_eq!(x.to_bits(), base.values()[[h, f, i, j]].to_bits());
                }
            }
        }
    }
}
