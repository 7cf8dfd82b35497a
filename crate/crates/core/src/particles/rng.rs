//! Counter-based normal variates.
//!
//! Every draw is a pure function of `(key, counter)` through the Philox4x32-10
//! block function, so increments for `(seed, particle, step)` do not depend on
//! evaluation order or thread schedule.

use std::f64::consts::PI;

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// Philox4x32 with 10 rounds.
pub fn philox4x32(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let p0 = (M0 as u64) * (c[0] as u64);
        let p1 = (M1 as u64) * (c[2] as u64);
        c = [
            ((p1 >> 32) as u32) ^ c[1] ^ k[0],
            p1 as u32,
            ((p0 >> 32) as u32) ^ c[3] ^ k[1],
            p0 as u32,
        ];
    }
    c
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `r`; replica 0 uses the base seed itself.
pub fn replica_seed(seed: u64, r: u64) -> u64 {
    if r == 0 {
        seed
    } else {
        splitmix64(seed ^ splitmix64(r))
    }
}

/// Key for initial-position draws, distinct from the Brownian stream.
pub fn initial_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0x5EED_1417_1A1D_A7A0)
}

fn block(seed: u64, a: u64, b: u64) -> [u32; 4] {
    philox4x32(
        [a as u32, (a >> 32) as u32, b as u32, (b >> 32) as u32],
        [seed as u32, (seed >> 32) as u32],
    )
}

// 53-bit uniform in the open interval (0, 1).
fn open_unit(hi: u32, lo: u32) -> f64 {
    let bits = (((hi as u64) << 32) | lo as u64) >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Two independent uniforms on `(0, 1)`.
pub fn uniform_pair(seed: u64, a: u64, b: u64) -> [f64; 2] {
    let x = block(seed, a, b);
    [open_unit(x[0], x[1]), open_unit(x[2], x[3])]
}

/// Two independent standard normals (Box–Muller).
pub fn normal_pair(seed: u64, a: u64, b: u64) -> [f64; 2] {
    let [u1, u2] = uniform_pair(seed, a, b);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    [r * c, r * s]
}

/// `ΔB ~ N(0, dt I₂)` for particle stream `i` at step `k`.
#[inline]
pub fn brownian_increment(seed: u64, i: u64, k: u64, dt: f64) -> [f64; 2] {
    let z = normal_pair(seed, i, k);
    let s = dt.sqrt();
    [s * z[0], s * z[1]]
}
