//! Branch-free tanh over slices.
//!
//! Libm's scalar `tanh` dominated the forward pass. This version stays within
//! a few ulps of it and compiles to straight-line code the optimizer can
//! vectorize. No fused multiply-adds are emitted, so the AVX2 path and the
//! baseline path produce identical bits.

/// `e^x` for `x <= 0` and not below about -745.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // Adding and subtracting 1.5 * 2^52 rounds to the nearest integer.
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let kf = (x * std::f64::consts::LOG2_E + ROUND) - ROUND;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Taylor series to degree 12, enough for |r| <= ln2 / 2.
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // Wrapping ops keep the loop branch-free when overflow checks are on.
    p * f64::from_bits(((kf as i64).wrapping_add(1023) as u64).wrapping_shl(52))
}

#[inline(always)]
fn tanh_one(x: f64) -> f64 {
    let a = x.abs().min(40.0);
    let u = exp_nonpositive(-2.0 * a);
    let large = (1.0 - u) / (1.0 + u);
    // The quotient above cancels near zero; use the odd series there.
    let a2 = a * a;
    let small = a
        * (1.0
            + a2 * (-1.0 / 3.0
                + a2 * (2.0 / 15.0
                    + a2 * (-17.0 / 315.0
                        + a2 * (62.0 / 2_835.0 + a2 * (-1_382.0 / 155_925.0 + a2 * (21_844.0 / 6_081_075.0)))))));
    let t = if a < 0.0625 { small } else { large };
    t.copysign(x)
}

#[inline(always)]
fn apply(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = tanh_one(*x);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn apply_avx2(v: &mut [f64]) {
    apply(v)
}

pub(crate) fn tanh_in_place(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { apply_avx2(v) };
            return;
        }
    }
    apply(v)
}
