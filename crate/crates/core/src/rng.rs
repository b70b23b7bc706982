//! Counter-based keyed randomness.
//!
//! Every random quantity in this crate is a pure function of a small integer
//! key such as `(seed, sample, observation)`. Draws are therefore independent
//! of evaluation order, which makes parallel simulation deterministic: the
//! same seed produces bit-identical results for any thread count.
//!
//! The generator is the splitmix64 finalizer applied to a Weyl sequence, the
//! standard construction for counter-based streams. Normal variates come from
//! the Wichura AS241 inverse CDF applied to a keyed uniform, so a single
//! (key → u64) map underlies everything.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const KEY_IV: u64 = 0x243F_6A88_85A3_08D3;

/// splitmix64 finalizer: a bijective avalanche mix on 64 bits.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapses a multi-part key into a single well-mixed 64-bit value.
#[inline]
pub fn fold_key(parts: &[u64]) -> u64 {
    let mut h = KEY_IV;
    for (i, &p) in parts.iter().enumerate() {
        h = mix64(h ^ mix64(p.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1))));
    }
    h
}

/// A keyed u64: one fully mixed value per distinct key tuple.
#[inline]
pub fn keyed_u64(parts: &[u64]) -> u64 {
    mix64(fold_key(parts).wrapping_add(GOLDEN))
}

/// A keyed uniform on the open interval (0, 1).
#[inline]
pub fn keyed_uniform(parts: &[u64]) -> f64 {
    u64_to_open_unit(keyed_u64(parts))
}

/// A keyed standard normal draw (uniform → inverse CDF).
#[inline]
pub fn keyed_normal(parts: &[u64]) -> f64 {
    inverse_normal_cdf(keyed_uniform(parts))
}

/// One Rademacher draw (±1 with equal probability) per
/// (seed, replication, observation) key. The wild bootstrap and its test
/// oracle must share this exact stream.
#[inline]
pub fn rademacher(seed: u64, replication: u64, observation: u64) -> f64 {
    if keyed_u64(&[seed, replication, observation]) >> 63 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn u64_to_open_unit(x: u64) -> f64 {
    // 52 mantissa bits, offset by half a step: never exactly 0 or 1.
    ((x >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}

/// Sequential stream of draws under one key, for consumers that need an
/// ordered substream (e.g. one stream per forest tree).
#[derive(Clone, Debug)]
pub struct KeyedStream {
    base: u64,
    ctr: u64,
}

impl KeyedStream {
    pub fn new(parts: &[u64]) -> Self {
        KeyedStream { base: fold_key(parts), ctr: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.ctr = self.ctr.wrapping_add(1);
        mix64(self.base.wrapping_add(self.ctr.wrapping_mul(GOLDEN)))
    }

    /// Uniform on (0, 1).
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        u64_to_open_unit(self.next_u64())
    }

    /// Uniform integer in `0..bound` via rejection (no modulo bias).
    #[inline]
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        let bound = bound as u64;
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % bound) as usize;
            }
        }
    }
}

/// Inverse of the standard normal CDF (Wichura's AS241, PPND16 variant).
/// Absolute error below 1e-15 for p in (0, 1).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

#[inline]
fn poly(coef: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coef.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

const A: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];
