//! Arithmetic in GF(2^255 - 19) with five 51-bit limbs.
//!
//! Limbs are kept weakly reduced (each below 2^52) between operations, which
//! keeps every product in `mul` comfortably inside a `u128`. Nothing here is
//! constant time.

use std::ops::{Add, Mul, Neg, Sub};

const MASK51: u64 = (1u64 << 51) - 1;

#[derive(Clone, Copy, Debug)]
pub(crate) struct FieldElement(pub(crate) [u64; 5]);

/// p - 2, little-endian.
const P_MINUS_2: [u8; 32] = {
    let mut b = [0xffu8; 32];
    b[0] = 0xeb;
    b[31] = 0x7f;
    b
};

/// (p - 5) / 8 = 2^252 - 3, little-endian.
const P_MINUS_5_DIV_8: [u8; 32] = {
    let mut b = [0xffu8; 32];
    b[0] = 0xfd;
    b[31] = 0x0f;
    b
};

/// (p - 1) / 4 = 2^253 - 5, little-endian.
const P_MINUS_1_DIV_4: [u8; 32] = {
    let mut b = [0xffu8; 32];
    b[0] = 0xfb;
    b[31] = 0x1f;
    b
};

impl FieldElement {
    pub(crate) const ZERO: Self = Self([0; 5]);
    pub(crate) const ONE: Self = Self([1, 0, 0, 0, 0]);

    pub(crate) fn from_u64(v: u64) -> Self {
        Self(Self::weak_reduce([v & MASK51, v >> 51, 0, 0, 0]))
    }

    /// Loads a little-endian encoding, ignoring bit 255.
    pub(crate) fn from_bytes(b: &[u8; 32]) -> Self {
        let load = |i: usize| {
            let mut w = [0u8; 8];
            w.copy_from_slice(&b[i..i + 8]);
            u64::from_le_bytes(w)
        };
        Self([
            load(0) & MASK51,
            (load(6) >> 3) & MASK51,
            (load(12) >> 6) & MASK51,
            (load(19) >> 1) & MASK51,
            (load(24) >> 12) & MASK51,
        ])
    }

    /// Canonical little-endian encoding (fully reduced mod p).
    pub(crate) fn to_bytes(self) -> [u8; 32] {
        let mut l = Self::weak_reduce(self.0);

        // q = 1 iff the value is >= p.
        let mut q = (l[0] + 19) >> 51;
        q = (l[1] + q) >> 51;
        q = (l[2] + q) >> 51;
        q = (l[3] + q) >> 51;
        q = (l[4] + q) >> 51;

        l[0] += 19 * q;
        l[1] += l[0] >> 51;
        l[0] &= MASK51;
        l[2] += l[1] >> 51;
        l[1] &= MASK51;
        l[3] += l[2] >> 51;
        l[2] &= MASK51;
        l[4] += l[3] >> 51;
        l[3] &= MASK51;
        l[4] &= MASK51;

        let mut out = [0u8; 32];
        let mut acc: u128 = 0;
        let mut bits = 0u32;
        let mut idx = 0usize;
        for limb in l {
            acc |= (limb as u128) << bits;
            bits += 51;
            while bits >= 8 {
                out[idx] = acc as u8;
                acc >>= 8;
                bits -= 8;
                idx += 1;
            }
        }
        out[idx] = acc as u8;
        out
    }

    fn weak_reduce(mut l: [u64; 5]) -> [u64; 5] {
        let c0 = l[0] >> 51;
        let c1 = l[1] >> 51;
        let c2 = l[2] >> 51;
        let c3 = l[3] >> 51;
        let c4 = l[4] >> 51;
        l[0] &= MASK51;
        l[1] &= MASK51;
        l[2] &= MASK51;
        l[3] &= MASK51;
        l[4] &= MASK51;
        l[0] += c4 * 19;
        l[1] += c0;
        l[2] += c1;
        l[3] += c2;
        l[4] += c3;
        l
    }

    pub(crate) fn square(&self) -> Self {
        self * self
    }

    /// Raises to a little-endian 256-bit exponent (variable time).
    fn pow(&self, exp_le: &[u8; 32]) -> Self {
        let mut acc = Self::ONE;
        for byte in exp_le.iter().rev() {
            for bit in (0..8).rev() {
                acc = acc.square();
                if (byte >> bit) & 1 == 1 {
                    acc = &acc * self;
                }
            }
        }
        acc
    }

    pub(crate) fn invert(&self) -> Self {
        self.pow(&P_MINUS_2)
    }

    pub(crate) fn pow_p58(&self) -> Self {
        self.pow(&P_MINUS_5_DIV_8)
    }

    pub(crate) fn is_negative(&self) -> bool {
        self.to_bytes()[0] & 1 == 1
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.to_bytes() == [0u8; 32]
    }

    /// sqrt(-1) = 2^((p-1)/4).
    pub(crate) fn sqrt_m1() -> Self {
        Self::from_u64(2).pow(&P_MINUS_1_DIV_4)
    }

    pub(crate) fn conditional_swap(a: &mut Self, b: &mut Self, swap: bool) {
        if swap {
            std::mem::swap(a, b);
        }
    }
}

impl PartialEq for FieldElement {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

impl Eq for FieldElement {}

impl Add for &FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: &FieldElement) -> FieldElement {
        let a = self.0;
        let b = rhs.0;
        FieldElement(FieldElement::weak_reduce([
            a[0] + b[0],
            a[1] + b[1],
            a[2] + b[2],
            a[3] + b[3],
            a[4] + b[4],
        ]))
    }
}

impl Sub for &FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: &FieldElement) -> FieldElement {
        // Add 16p before subtracting so no limb underflows.
        let a = self.0;
        let b = rhs.0;
        FieldElement(FieldElement::weak_reduce([
            (a[0] + 36028797018963664) - b[0],
            (a[1] + 36028797018963952) - b[1],
            (a[2] + 36028797018963952) - b[2],
            (a[3] + 36028797018963952) - b[3],
            (a[4] + 36028797018963952) - b[4],
        ]))
    }
}

impl Neg for &FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        &FieldElement::ZERO - self
    }
}

impl Mul for &FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: &FieldElement) -> FieldElement {
        #[inline(always)]
        fn m(x: u64, y: u64) -> u128 {
            (x as u128) * (y as u128)
        }
        let a = self.0;
        let b = rhs.0;
        let b1_19 = b[1] * 19;
        let b2_19 = b[2] * 19;
        let b3_19 = b[3] * 19;
        let b4_19 = b[4] * 19;

        let c0 = m(a[0], b[0]) + m(a[4], b1_19) + m(a[3], b2_19) + m(a[2], b3_19) + m(a[1], b4_19);
        let mut c1 =
            m(a[1], b[0]) + m(a[0], b[1]) + m(a[4], b2_19) + m(a[3], b3_19) + m(a[2], b4_19);
        let mut c2 =
            m(a[2], b[0]) + m(a[1], b[1]) + m(a[0], b[2]) + m(a[4], b3_19) + m(a[3], b4_19);
        let mut c3 = m(a[3], b[0]) + m(a[2], b[1]) + m(a[1], b[2]) + m(a[0], b[3]) + m(a[4], b4_19);
        let mut c4 = m(a[4], b[0]) + m(a[3], b[1]) + m(a[2], b[2]) + m(a[1], b[3]) + m(a[0], b[4]);

        c1 += c0 >> 51;
        let mut l0 = (c0 as u64) & MASK51;
        c2 += c1 >> 51;
        let l1 = (c1 as u64) & MASK51;
        c3 += c2 >> 51;
        let l2 = (c2 as u64) & MASK51;
        c4 += c3 >> 51;
        let l3 = (c3 as u64) & MASK51;
        let carry = (c4 >> 51) as u64;
        let l4 = (c4 as u64) & MASK51;

        l0 += carry * 19;
        let l1 = l1 + (l0 >> 51);
        l0 &= MASK51;
        FieldElement([l0, l1, l2, l3, l4])
    }
}
