//! The twisted Edwards curve -x^2 + y^2 = 1 + d x^2 y^2 over GF(2^255 - 19),
//! in extended coordinates (X : Y : Z : T) with x = X/Z, y = Y/Z, xy = T/Z.

use once_cell::sync::Lazy;

use super::field::FieldElement;

static D: Lazy<FieldElement> = Lazy::new(|| {
    let num = -&FieldElement::from_u64(121665);
    &num * &FieldElement::from_u64(121666).invert()
});

static D2: Lazy<FieldElement> = Lazy::new(|| &*D + &*D);

static SQRT_M1: Lazy<FieldElement> = Lazy::new(FieldElement::sqrt_m1);

/// Compressed base point: y = 4/5 with even x.
const BASEPOINT_COMPRESSED: [u8; 32] = [
    0x58, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66,
    0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66, 0x66,
];

static BASEPOINT: Lazy<EdwardsPoint> =
    Lazy::new(|| EdwardsPoint::decompress(&BASEPOINT_COMPRESSED).expect("base point decodes"));

/// Multiples 0..16 of the base point for the 4-bit window.
static BASEPOINT_TABLE: Lazy<[EdwardsPoint; 16]> =
    Lazy::new(|| EdwardsPoint::window_table(&BASEPOINT));

#[derive(Clone, Copy, Debug)]
pub(crate) struct EdwardsPoint {
    x: FieldElement,
    y: FieldElement,
    z: FieldElement,
    t: FieldElement,
}

impl EdwardsPoint {
    pub(crate) fn identity() -> Self {
        Self {
            x: FieldElement::ZERO,
            y: FieldElement::ONE,
            z: FieldElement::ONE,
            t: FieldElement::ZERO,
        }
    }

    #[cfg(test)]
    pub(crate) fn basepoint() -> Self {
        *BASEPOINT
    }

    /// Decodes a 32-byte point encoding. Rejects non-canonical y and
    /// encodings with no square root.
    pub(crate) fn decompress(bytes: &[u8; 32]) -> Option<Self> {
        let sign = bytes[31] >> 7 == 1;
        let mut y_bytes = *bytes;
        y_bytes[31] &= 0x7f;
        let y = FieldElement::from_bytes(&y_bytes);
        if y.to_bytes() != y_bytes {
            return None;
        }

        let yy = y.square();
        let u = &yy - &FieldElement::ONE;
        let v = &(&*D * &yy) + &FieldElement::ONE;

        // x = u v^3 (u v^7)^((p-5)/8)
        let v3 = &v.square() * &v;
        let v7 = &v3.square() * &v;
        let mut x = &(&u * &v3) * &(&u * &v7).pow_p58();

        let vxx = &v * &x.square();
        if vxx == u {
            // root found
        } else if vxx == -&u {
            x = &x * &*SQRT_M1;
        } else {
            return None;
        }

        if x.is_zero() && sign {
            return None;
        }
        if x.is_negative() != sign {
            x = -&x;
        }
        Some(Self {
            x,
            y,
            z: FieldElement::ONE,
            t: &x * &y,
        })
    }

    pub(crate) fn compress(&self) -> [u8; 32] {
        let zinv = self.z.invert();
        let x = &self.x * &zinv;
        let y = &self.y * &zinv;
        let mut out = y.to_bytes();
        out[31] |= (x.is_negative() as u8) << 7;
        out
    }

    pub(crate) fn add(&self, other: &Self) -> Self {
        let a = &(&self.y - &self.x) * &(&other.y - &other.x);
        let b = &(&self.y + &self.x) * &(&other.y + &other.x);
        let c = &(&self.t * &*D2) * &other.t;
        let zz = &self.z * &other.z;
        let d = &zz + &zz;
        let e = &b - &a;
        let f = &d - &c;
        let g = &d + &c;
        let h = &b + &a;
        Self {
            x: &e * &f,
            y: &g * &h,
            t: &e * &h,
            z: &f * &g,
        }
    }

    pub(crate) fn double(&self) -> Self {
        let a = self.x.square();
        let b = self.y.square();
        let zz = self.z.square();
        let c = &zz + &zz;
        let d = -&a;
        let e = &(&(&self.x + &self.y).square() - &a) - &b;
        let g = &d + &b;
        let f = &g - &c;
        let h = &d - &b;
        Self {
            x: &e * &f,
            y: &g * &h,
            t: &e * &h,
            z: &f * &g,
        }
    }

    pub(crate) fn negate(&self) -> Self {
        Self {
            x: -&self.x,
            y: self.y,
            z: self.z,
            t: -&self.t,
        }
    }

    fn window_table(p: &Self) -> [Self; 16] {
        let mut table = [Self::identity(); 16];
        for i in 1..16 {
            table[i] = table[i - 1].add(p);
        }
        table
    }

    /// Variable-time multiplication by a little-endian 256-bit scalar.
    #[cfg(test)]
    pub(crate) fn mul(&self, scalar_le: &[u8; 32]) -> Self {
        Self::windowed_mul(&Self::window_table(self), scalar_le)
    }

    pub(crate) fn mul_base(scalar_le: &[u8; 32]) -> Self {
        Self::windowed_mul(&BASEPOINT_TABLE, scalar_le)
    }

    fn windowed_mul(table: &[Self; 16], scalar_le: &[u8; 32]) -> Self {
        let mut acc = Self::identity();
        for byte in scalar_le.iter().rev() {
            for nibble in [byte >> 4, byte & 0x0f] {
                acc = acc.double().double().double().double();
                if nibble != 0 {
                    acc = acc.add(&table[nibble as usize]);
                }
            }
        }
        acc
    }

    /// Computes a*B + b*P with a shared doubling chain.
    pub(crate) fn double_mul_base(a_le: &[u8; 32], point: &Self, b_le: &[u8; 32]) -> Self {
        let ptable = Self::window_table(point);
        let btable = &*BASEPOINT_TABLE;
        let mut acc = Self::identity();
        for i in (0..32).rev() {
            for shift in [4u8, 0u8] {
                acc = acc.double().double().double().double();
                let na = (a_le[i] >> shift) & 0x0f;
                let nb = (b_le[i] >> shift) & 0x0f;
                if na != 0 {
                    acc = acc.add(&btable[na as usize]);
                }
                if nb != 0 {
                    acc = acc.add(&ptable[nb as usize]);
                }
            }
        }
        acc
    }
}

impl PartialEq for EdwardsPoint {
    fn eq(&self, other: &Self) -> bool {
        // X1 Z2 == X2 Z1 and Y1 Z2 == Y2 Z1
        &self.x * &other.z == &other.x * &self.z && &self.y * &other.z == &other.y * &self.z
    }
}

impl Eq for EdwardsPoint {}
