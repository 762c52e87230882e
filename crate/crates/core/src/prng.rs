//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, time index, particle index,
//! purpose, counter)`. Nothing is sequential, so a filter replayed at a
//! different parameter sees exactly the same noise, and particles can be
//! processed in any order or on any thread.

use serde::{Deserialize, Serialize};

/// What a stream is used for. Changing only the purpose changes the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Process,
    Resample,
    Init,
    Perturb,
    Proposal,
    Observation,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Process => 0x51a3_9d6e_0b7c_4f21,
            Purpose::Resample => 0x2c8e_f4a1_7d03_96b5,
            Purpose::Init => 0x9b57_03e2_c6a8_1d4f,
            Purpose::Perturb => 0x46d1_b8f9_2e75_a0c3,
            Purpose::Proposal => 0xe3a0_5c7b_914f_d862,
            Purpose::Observation => 0x7f2b_6a94_d3c1_e805,
        }
    }
}

/// Address of one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub time_index: u64,
    pub particle: u64,
    pub purpose: Purpose,
}

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Derives an independent child seed, e.g. one per IF2 iteration or chain.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix(mix(seed ^ 0x6a09_e667_f3bc_c908).wrapping_add(index.wrapping_mul(GOLDEN)))
}

impl StreamKey {
    pub fn new(seed: u64, time_index: u64, particle: u64, purpose: Purpose) -> Self {
        StreamKey {
            seed,
            time_index,
            particle,
            purpose,
        }
    }

    #[inline]
    fn base(&self) -> u64 {
        let mut h = mix(self.seed ^ self.purpose.tag());
        h = mix(h ^ self.time_index.wrapping_mul(0xd6e8_feb8_6659_fd93));
        mix(h ^ self.particle.wrapping_mul(0xa076_1d64_78bd_642f))
    }

    #[inline]
    fn bits(&self, counter: u64) -> u64 {
        mix(self.base()
            ^ mix(counter
                .wrapping_mul(GOLDEN)
                .wrapping_add(0x3c6e_f372_fe94_f82b)))
    }

    /// Uniform draw on `[0, 1)` with 53 random bits.
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on the open interval `(0, 1)`.
    pub fn uniform_open(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw by inversion of one open uniform.
    pub fn normal(&self, counter: u64) -> f64 {
        inverse_normal_cdf(self.uniform_open(counter))
    }
}

/// Standard normal quantile function by piecewise rational approximation.
/// Relative accuracy is about 1e-16 over `(0, 1)`.
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "probability must lie in (0, 1), got {p}"
    );
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2_509.080_928_730_122_7 * r + 33_430.575_583_588_128) * r
                + 67_265.770_927_008_700)
                * r
                + 45_921.953_931_549_871)
                * r
                + 13_731.693_765_509_461)
                * r
                + 1_971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5_226.495_278_852_545_5 * r + 28_729.085_735_721_942) * r
                + 39_307.895_800_092_710)
                * r
                + 21_213.794_301_586_595)
                * r
                + 5_394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_100_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_87)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}
