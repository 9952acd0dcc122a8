//! Counter-based random numbers.
//!
//! Every random quantity in the crate is a pure function of a key and a
//! counter, so results do not depend on how work is split across threads.
//!
//! The generator is Philox4x64-10 (Salmon et al., 2011). A [`Stream`] is
//! keyed by `(seed, domain)` and walks the counter `[block, a, b, 0]` for
//! fixed stream coordinates `(a, b)`; each block yields four 64-bit words
//! consumed in order. Uniforms use the top 52 bits of a word, shifted to the
//! open interval: `u = ((w >> 12) + 0.5) / 2^52`. Normals are `Φ⁻¹(u)`.

use crate::normal::inverse_cdf;

const MUL0: u64 = 0xD2E7_470E_E14C_6C93;
const MUL1: u64 = 0xCA5A_8263_9512_1157;
const WEYL0: u64 = 0x9E37_79B9_7F4A_7C15;
const WEYL1: u64 = 0xBB67_AE85_84CA_A73B;

/// Domain tags separating independent uses of one user seed.
pub mod domain {
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const SIM_DESIGN: u64 = 0x7369_6d78;
    pub const SIM_NOISE: u64 = 0x7369_6d77;
    pub const SIM_RESPONSE: u64 = 0x7369_6d79;
    pub const SIM_MASK: u64 = 0x7369_6d6d;
    pub const SIM_SEEDS: u64 = 0x7369_6d73;
}

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let prod = (a as u128) * (b as u128);
    ((prod >> 64) as u64, prod as u64)
}

/// Philox4x64 with 10 rounds.
pub fn philox4x64(counter: [u64; 4], key: [u64; 2]) -> [u64; 4] {
    let mut c = counter;
    let mut k = key;
    for _ in 0..10 {
        let (hi0, lo0) = mulhilo(MUL0, c[0]);
        let (hi1, lo1) = mulhilo(MUL1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
        k = [k[0].wrapping_add(WEYL0), k[1].wrapping_add(WEYL1)];
    }
    c
}

/// Map a 64-bit word to the open unit interval.
#[inline]
pub fn open_unit(word: u64) -> f64 {
    ((word >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Sequential view over the counter space `[block, a, b, 0]`.
#[derive(Debug, Clone)]
pub struct Stream {
    key: [u64; 2],
    coords: [u64; 2],
    block: u64,
    buf: [u64; 4],
    pos: usize,
}

impl Stream {
    pub fn new(seed: u64, domain: u64, coords: [u64; 2]) -> Self {
        Self {
            key: [seed, domain],
            coords,
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        if self.pos == 4 {
            self.buf = philox4x64([self.block, self.coords[0], self.coords[1], 0], self.key);
            self.block += 1;
            self.pos = 0;
        }
        let w = self.buf[self.pos];
        self.pos += 1;
        w
    }

    pub fn uniform(&mut self) -> f64 {
        open_unit(self.next_u64())
    }

    pub fn normal(&mut self) -> f64 {
        inverse_cdf(self.uniform())
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// Derive a child seed from `(seed, domain, index)`.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    philox4x64([index, 0, 0, 0], [seed, domain])[0]
}
