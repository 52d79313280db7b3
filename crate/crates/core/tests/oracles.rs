use nlpot::measure::{Cuboid, Grid, Point, RadonMeasure};
use nlpot::{h_l, wolff_field, wolff_point, ReactionParams, WolffParams};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Decimal digits of the fixed-point oracle.
const DIGITS: u32 = 80;

/// `floor(x * 10^DIGITS)` for finite `x >= 0`, exact.
fn to_fixed(x: f64) -> BigInt {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    let scaled = BigInt::from(mant) * BigInt::from(10u32).pow(DIGITS);
    if e >= 0 {
        scaled << e as usize
    } else {
        scaled >> (-e) as usize
    }
}

/// `sum_{j >= l} r^j / j!` in fixed point.
fn h_l_fixed(r: f64, l: u32) -> BigInt {
    let one = BigInt::from(10u32).pow(DIGITS);
    let rf = to_fixed(r);
    let mut term = one.clone();
    let mut sum = BigInt::zero();
    let mut j = 0u32;
    loop {
        if j >= l {
            if term.is_zero() {
                break;
            }
            sum += &term;
        }
        j += 1;
        term = &term * &rf / (&one * BigInt::from(j));
    }
    sum
}

fn rel_error(got: f64, exact: &BigInt) -> f64 {
    if exact.is_zero() {
        return if got == 0.0 { 0.0 } else { f64::INFINITY };
    }
    let diff = (to_fixed(got) - exact).abs();
    // flooring `got` costs one unit in the last fixed digit
    let diff = if diff <= BigInt::one() { BigInt::zero() } else { diff };
    diff.to_f64().unwrap() / exact.to_f64().unwrap()
}

#[test]
fn h_l_matches_the_fixed_point_series() {
    let mut worst: f64 = 0.0;
    for l in 1..=8u32 {
        let params = ReactionParams::new(l).unwrap();
        for i in 0..200 {
            let r = 30.0 * i as f64 / 199.0;
            worst = worst.max(rel_error(h_l(params, r).unwrap(), &h_l_fixed(r, l)));
        }
    }
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn oracle_reproduces_known_values() {
    // H_1(1) = e - 1
    let e_minus_1 = h_l_fixed(1.0, 1).to_f64().unwrap() / 1e80;
    assert!((e_minus_1 - (std::f64::consts::E - 1.0)).abs() < 1e-15);
    assert!(h_l_fixed(0.0, 3).is_zero());
}

fn dirac_origin(n: usize) -> RadonMeasure {
    RadonMeasure::dirac(Point::origin(n), 1.0).unwrap()
}

#[test]
fn planar_dirac_potential_is_logarithmic() {
    let m = dirac_origin(2);
    let t = 1.0;
    let params = WolffParams::new(1.0, 2.0, t);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let r: f64 = rng.gen_range(0.01..0.99);
        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let w = wolff_point(&m, &params, &Point::new([r * a.cos(), r * a.sin()])).unwrap();
        assert!((w - (t / r).ln()).abs() < 1e-6);
    }
    // beyond T the potential vanishes
    assert_eq!(wolff_point(&m, &params, &Point::new([1.5, 0.0])).unwrap(), 0.0);
}

#[test]
fn spatial_dirac_potential_is_newtonian() {
    let m = dirac_origin(3);
    let t = 2.0;
    let params = WolffParams::new(1.0, 2.0, t);
    let g = Grid::uniform(Cuboid::new(Point::new([-1.0, -1.0, -1.0]), Point::new([1.0, 1.0, 1.0])).unwrap(), 16).unwrap();
    let f = wolff_field(&m, &params, &g).unwrap();
    let mut x = [0.0; 3];
    for i in 0..g.node_count() {
        g.node_coords(i, &mut x);
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let v = f.values()[i];
        if r == 0.0 {
            assert_eq!(v, f64::INFINITY);
        } else {
            assert!((v - (1.0 / r - 1.0 / t)).abs() < 1e-5 * (1.0 / r), "{r} {v}");
        }
    }
}
