//! FP64 to IEEE binary16 / bfloat16 conversion with round-to-nearest-even,
//! and the exact widening back to FP64.
//!
//! Rounding is done directly from the 53-bit FP64 significand so there is no
//! double rounding through binary32.

use serde::{Deserialize, Serialize};

/// 16-bit storage format used by the baseline SpMV operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HalfKind {
    Fp16,
    Bf16,
}

impl HalfKind {
    fn exponent_bits(self) -> u32 {
        match self {
            HalfKind::Fp16 => 5,
            HalfKind::Bf16 => 8,
        }
    }

    fn fraction_bits(self) -> u32 {
        match self {
            HalfKind::Fp16 => 10,
            HalfKind::Bf16 => 7,
        }
    }

    /// Rounds `x` to the nearest representable 16-bit pattern, ties to even.
    /// Magnitudes past the largest finite value round to infinity.
    pub fn encode(self, x: f64) -> u16 {
        round_to_half(x, self.exponent_bits(), self.fraction_bits())
    }

    pub fn decode(self, bits: u16) -> f64 {
        match self {
            HalfKind::Fp16 => f16_bits_to_f64(bits),
            HalfKind::Bf16 => bf16_bits_to_f64(bits),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HalfKind::Fp16 => "fp16",
            HalfKind::Bf16 => "bf16",
        }
    }
}

fn round_to_half(x: f64, exp_bits: u32, frac_bits: u32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 48) & 0x8000) as u16;
    let exp_all_ones = (1u32 << exp_bits) - 1;
    let inf = sign | ((exp_all_ones as u16) << frac_bits);
    if x.is_nan() {
        return inf | (1 << (frac_bits - 1));
    }
    if x.is_infinite() {
        return inf;
    }
    let biased = ((bits >> 52) & 0x7FF) as i32;
    if biased == 0 {
        // Zero or an FP64 subnormal, both far below the smallest 16-bit subnormal.
        return sign;
    }
    let significand = (bits & ((1 << 52) - 1)) | (1 << 52);
    let bias = (1i32 << (exp_bits - 1)) - 1;
    let target_exp = biased - 1023 + bias;

    // Magnitude bits before rounding: (exponent - 1) << frac_bits plus the
    // significand including its hidden one, so a rounding carry ripples into
    // the exponent field on its own.
    let (shift, base) = if target_exp >= 1 {
        (52 - frac_bits, ((target_exp - 1) as u64) << frac_bits)
    } else {
        (52 - frac_bits + (1 - target_exp) as u32, 0)
    };
    if shift > 63 {
        return sign;
    }
    let kept = significand >> shift;
    let rem = significand & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    let mut magnitude = base + kept;
    if rem > half || (rem == half && kept & 1 == 1) {
        magnitude += 1;
    }
    if magnitude >= u64::from(exp_all_ones) << frac_bits {
        return inf;
    }
    sign | magnitude as u16
}

pub fn f64_to_f16_bits(x: f64) -> u16 {
    HalfKind::Fp16.encode(x)
}

pub fn f64_to_bf16_bits(x: f64) -> u16 {
    HalfKind::Bf16.encode(x)
}

pub fn bf16_bits_to_f64(bits: u16) -> f64 {
    f64::from(f32::from_bits(u32::from(bits) << 16))
}

pub fn f16_bits_to_f64(bits: u16) -> f64 {
    let sign = u64::from(bits & 0x8000) << 48;
    let exp = u64::from((bits >> 10) & 0x1F);
    let frac = u64::from(bits & 0x3FF);
    let magnitude = match exp {
        0 if frac == 0 => 0,
        0 => {
            // Subnormal: renormalize into FP64.
            let lz = frac.leading_zeros() - 54;
            let frac = (frac << (lz + 1)) & 0x3FF;
            ((1023 - 15 - u64::from(lz)) << 52) | (frac << 42)
        }
        0x1F => (0x7FF << 52) | (frac << 42),
        _ => ((exp + 1023 - 15) << 52) | (frac << 42),
    };
    f64::from_bits(sign | magnitude)
}
