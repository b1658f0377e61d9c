mod common;

use common::*;
use num::{BigRational, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rwre::direction::{
    determinant, dot, rationalize_direction, vector_product, DirectionInput, RationalVector,
};
use rwre::model::presets::desk_model;
use rwre::{validate_model, LatticePoint};

fn rv(x: &[i64]) -> RationalVector {
    rwre::direction::int_vector(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sign_pattern_is_preserved(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, v) = random_direction_instance(&mut rng);
        let res = rationalize_direction(&a, &DirectionInput::Rational(v.clone())).unwrap();
        prop_assert!(sign_pattern_holds(&a, &v, &res));
    }

    #[test]
    fn validity_survives_scaling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, v) = random_direction_instance(&mut rng);
        let two = BigRational::from_integer(2.into());
        let v2: RationalVector = v.iter().map(|x| x * &two).collect();
        let r1 = rationalize_direction(&a, &DirectionInput::Rational(v.clone())).unwrap();
        let r2 = rationalize_direction(&a, &DirectionInput::Rational(v2.clone())).unwrap();
        prop_assert!(sign_pattern_holds(&a, &v, &r1));
        prop_assert!(sign_pattern_holds(&a, &v2, &r2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn vector_product_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rand::Rng::gen_range(&mut rng, 2..=5usize);
        let h: Vec<RationalVector> = (0..d - 1).map(|_| random_rational_vector(&mut rng, d, 9)).collect();
        let z = vector_product(&h).unwrap();
        for hi in &h {
            prop_assert!(dot(hi, &z).is_zero());
        }
        let x = random_rational_vector(&mut rng, d, 9);
        let mut rows = h.clone();
        rows.push(x.clone());
        prop_assert_eq!(determinant(&rows), dot(&x, &z));
    }
}

#[test]
fn integer_inputs_give_integer_product() {
    let z = vector_product(&[rv(&[1, 2, 3, 4]), rv(&[0, 1, -1, 2]), rv(&[5, 0, 0, 1])]).unwrap();
    assert!(z.iter().all(|c| c.is_integer()));
    assert!(!z.iter().all(|c| c.is_zero()));
}

#[test]
fn real_direction_on_model_support_keeps_verdict() {
    // a real direction close to (1, 0) that sees the same sign pattern on the
    // desk model's support
    let model = desk_model();
    let a: Vec<LatticePoint> = model.support_j().into_iter().collect();
    let input = DirectionInput::Real {
        values: vec![1.0, 0.123456789],
        zeros: vec![],
        precision: 1e-12,
    };
    // (1,-1) has dot 0.877 > 0, so every point is positive
    let res = rationalize_direction(&a, &input).unwrap();
    let u = res.to_lattice_point().unwrap();
    let before = validate_model(&model).unwrap();
    let after = validate_model(&model.with_direction(u).unwrap()).unwrap();
    assert_eq!(before.forbidden_direction_ok, after.forbidden_direction_ok);
    assert_eq!(before.nonnestling_delta.is_some(), after.nonnestling_delta.is_some());
}
