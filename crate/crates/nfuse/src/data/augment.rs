//! Training-time augmentation: seeded Gaussian blur and cropping.

use super::Volume;
#[cfg(test)]
use super::CROP_SIZE;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Separable 3D Gaussian blur. Kernel truncated at radius `ceil(3*sigma)`,
/// normalized to sum 1, symmetric-reflect padding at the borders.
/// `sigma == 0` returns the input bitwise unchanged.
pub fn gaussian_blur(vol: &Volume, sigma: f32) -> Result<Volume> {
    if sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("negative sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vol.clone());
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    let inv = 1.0 / (2.0 * sigma as f64 * sigma as f64);
    for i in -(radius as i64)..=(radius as i64) {
        kernel.push((-(i * i) as f64 * inv).exp());
    }
    let sum: f64 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|&k| (k / sum) as f32).collect();

    let [d, h, w] = vol.extents();
    let mut cur = vol.data().to_vec();
    let mut next = vec![0.0f32; cur.len()];

    // axis 0 (stride h*w), axis 1 (stride w), axis 2 (stride 1)
    for (axis_len, stride, outer_a, outer_b, stride_a, stride_b) in [
        (d, h * w, h, w, w, 1),
        (h, w, d, w, h * w, 1),
        (w, 1, d, h, h * w, w),
    ] {
        for a in 0..outer_a {
            for b in 0..outer_b {
                let base = a * stride_a + b * stride_b;
                for i in 0..axis_len {
                    let mut acc = 0.0f32;
                    for (ki, &kv) in kernel.iter().enumerate() {
                        let off = i as i64 + ki as i64 - radius as i64;
                        let idx = reflect(off, axis_len);
                        acc += kv * cur[base + idx * stride];
                    }
                    next[base + i * stride] = acc;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Volume::new(vol.extents(), cur, vol.modality())
}

/// Symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2.
fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn crop_at(vol: &Volume, offsets: [usize; 3], size: usize) -> Volume {
    let [_, h, w] = vol.extents();
    let mut out = Vec::with_capacity(size * size * size);
    for z in 0..size {
        for y in 0..size {
            let row = ((offsets[0] + z) * h + offsets[1] + y) * w + offsets[2];
            out.extend_from_slice(&vol.data()[row..row + size]);
        }
    }
    Volume::new([size, size, size], out, vol.modality()).expect("crop inside volume")
}

fn check_extents(vol: &Volume, size: usize) -> Result<()> {
    if vol.extents().iter().any(|&e| e < size) {
        return Err(Error::InvalidArgument(format!(
            "volume extents {:?} smaller than crop size {size}",
            vol.extents()
        )));
    }
    Ok(())
}

/// Random crop with per-axis offsets drawn uniformly from [0, extent - size].
pub fn random_crop(vol: &Volume, size: usize, seed: u64) -> Result<Volume> {
    check_extents(vol, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = [0usize; 3];
    for (o, &e) in offsets.iter_mut().zip(&vol.extents()) {
        *o = rng.gen_range(0..=e - size);
    }
    Ok(crop_at(vol, offsets, size))
}

/// Deterministic center crop with offset `floor((extent - size) / 2)`.
pub fn center_crop(vol: &Volume, size: usize) -> Result<Volume> {
    check_extents(vol, size)?;
    let mut offsets = [0usize; 3];
    for (o, &e) in offsets.iter_mut().zip(&vol.extents()) {
        *o = (e - size) / 2;
    }
    Ok(crop_at(vol, offsets, size))
}

/// Offsets used by [`center_crop`], exposed for the sub-block property.
pub fn center_offsets(vol: &Volume, size: usize) -> [usize; 3] {
    let mut offsets = [0usize; 3];
    for (o, &e) in offsets.iter_mut().zip(&vol.extents()) {
        *o = (e - size) / 2;
    }
    offsets
}

/// Derived seed for per-sample augmentation draws, so loading order cannot
/// change the realized augmentations (splitmix64 over seed/epoch/index).
pub fn sample_seed(global_seed: u64, epoch: usize, sample_index: usize) -> u64 {
    let mut z = global_seed
        .wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add((epoch as u64).wrapping_mul(0xBF58476D1CE4E5B9))
        .wrapping_add((sample_index as u64).wrapping_mul(0x94D049BB133111EB));
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58476D1CE4E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
