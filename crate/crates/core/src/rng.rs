//! Counter-based random streams. A stream is addressed by
//! (master seed, label, stream id) and supports random access by word
//! position, so draws never depend on scheduling order.

use core::f64::consts::PI;
use num_traits::Float;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Combine integers into one 64-bit stream id.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c909u64, |h, &p| splitmix(h ^ p))
}

pub fn stream(seed: u64, label: &str, id: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    let mut s = splitmix(seed ^ label_hash(label));
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&s.to_le_bytes());
        s = splitmix(s);
    }
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(id);
    rng
}

/// Uniform in (0, 1], never 0.
pub fn uniform_open(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}

/// Fill `out` with standard normals by Box–Muller. Consumes exactly two
/// 64-bit words per pair, so word positions are predictable.
pub fn fill_normals(rng: &mut ChaCha20Rng, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        let u1 = uniform_open(rng);
        let u2 = uniform_open(rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * PI * u2;
        out[i] = r * th.cos();
        if i + 1 < out.len() {
            out[i + 1] = r * th.sin();
        }
        i += 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let mut a = stream(7, "white", 3);
        let mut buf = [0.0; 8];
        fill_normals(&mut a, &mut buf);
        let mut b = stream(7, "white", 3);
        b.set_word_pos(8); // skip two pairs = four u64 = eight 32-bit words
        let mut tail = [0.0; 4];
        fill_normals(&mut b, &mut tail);
        assert_eq!(&buf[4..], &tail);
        let mut c = stream(7, "white", 4);
        let mut other = [0.0; 8];
        fill_normals(&mut c, &mut other);
        assert_ne!(buf, other);
    }

    #[test]
    fn normals_have_unit_variance() {
        let mut r = stream(1, "t", 0);
        let mut v = [0.0; 20000];
        fill_normals(&mut r, &mut v);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        assert!(m.abs() < 0.03 && (var - 1.0).abs() < 0.04);
    }
}
