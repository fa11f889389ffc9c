//! Two-dimensional OpenSimplex2 ("fast" lattice variant) coherent noise,
//! evaluated in double precision.

const PRIME_X: i64 = 0x5205_402B_9270_C86F;
const PRIME_Y: i64 = 0x598C_D327_0038_17B5;
const HASH_MULTIPLIER: i64 = 0x53A3_F72D_EEC5_46F5;
const SKEW_2D: f64 = 0.366_025_403_784_439;
const UNSKEW_2D: f64 = -0.211_324_865_405_187_13;
const N_GRADS_2D_EXPONENT: u32 = 7;
const N_GRADS_2D: i64 = 1 << N_GRADS_2D_EXPONENT;
const NORMALIZER_2D: f64 = 0.010_016_341_213_657_12;
const RSQUARED_2D: f64 = 0.5;

#[rustfmt::skip]
const GRAD2_SRC: [f64; 48] = [
     0.38268343236509,   0.923879532511287,
     0.923879532511287,  0.38268343236509,
     0.923879532511287, -0.38268343236509,
     0.38268343236509,  -0.923879532511287,
    -0.38268343236509,  -0.923879532511287,
    -0.923879532511287, -0.38268343236509,
    -0.923879532511287,  0.38268343236509,
    -0.38268343236509,   0.923879532511287,
     0.130526192220052,  0.99144486137381,
     0.608761429008721,  0.793353340291235,
     0.793353340291235,  0.608761429008721,
     0.99144486137381,   0.130526192220051,
     0.99144486137381,  -0.130526192220051,
     0.793353340291235, -0.60876142900872,
     0.608761429008721, -0.793353340291235,
     0.130526192220052, -0.99144486137381,
    -0.130526192220052, -0.99144486137381,
    -0.608761429008721, -0.793353340291235,
    -0.793353340291235, -0.608761429008721,
    -0.99144486137381,  -0.130526192220052,
    -0.99144486137381,   0.130526192220051,
    -0.793353340291235,  0.608761429008721,
    -0.608761429008721,  0.793353340291235,
    -0.130526192220052,  0.99144486137381,
];

fn grad(seed: i64, xsvp: i64, ysvp: i64, dx: f64, dy: f64) -> f64 {
    let mut hash = (seed ^ xsvp ^ ysvp).wrapping_mul(HASH_MULTIPLIER);
    hash ^= hash >> (64 - N_GRADS_2D_EXPONENT + 1);
    // The 24 source gradients repeat cyclically over the 128-entry table.
    let gi = (hash as i32 & (((N_GRADS_2D - 1) << 1) as i32)) as usize % GRAD2_SRC.len();
    (GRAD2_SRC[gi] * dx + GRAD2_SRC[gi | 1] * dy) / NORMALIZER_2D
}

/// Noise at `(x, y)`, clamped to `[-1, 1]`.
pub fn noise2(seed: i64, x: f64, y: f64) -> f64 {
    let s = SKEW_2D * (x + y);
    unskewed_base(seed, x + s, y + s).clamp(-1.0, 1.0)
}

fn unskewed_base(seed: i64, xs: f64, ys: f64) -> f64 {
    let xsb = libm::floor(xs);
    let ysb = libm::floor(ys);
    let xi = xs - xsb;
    let yi = ys - ysb;
    let xsbp = (xsb as i64).wrapping_mul(PRIME_X);
    let ysbp = (ysb as i64).wrapping_mul(PRIME_Y);

    let t = (xi + yi) * UNSKEW_2D;
    let dx0 = xi + t;
    let dy0 = yi + t;

    let mut value = 0.0;
    let a0 = RSQUARED_2D - dx0 * dx0 - dy0 * dy0;
    if a0 > 0.0 {
        value = (a0 * a0) * (a0 * a0) * grad(seed, xsbp, ysbp, dx0, dy0);
    }

    let c = 1.0 + 2.0 * UNSKEW_2D;
    let a1 = 2.0 * c * (1.0 / UNSKEW_2D + 2.0) * t + (-2.0 * c * c + a0);
    if a1 > 0.0 {
        let dx1 = dx0 - c;
        let dy1 = dy0 - c;
        value += (a1 * a1)
            * (a1 * a1)
            * grad(seed, xsbp.wrapping_add(PRIME_X), ysbp.wrapping_add(PRIME_Y), dx1, dy1);
    }

    let (dx2, dy2, xo, yo) = if dy0 > dx0 {
        (dx0 - UNSKEW_2D, dy0 - (UNSKEW_2D + 1.0), 0, PRIME_Y)
    } else {
        (dx0 - (UNSKEW_2D + 1.0), dy0 - UNSKEW_2D, PRIME_X, 0)
    };
    let a2 = RSQUARED_2D - dx2 * dx2 - dy2 * dy2;
    if a2 > 0.0 {
        value += (a2 * a2) * (a2 * a2) * grad(seed, xsbp.wrapping_add(xo), ysbp.wrapping_add(yo), dx2, dy2);
    }
    value
}
