use super::*;

#[test]
fn monolithic_vit_cost_at_published_scale() {
    assert_eq!(vit_cost(2305, 1280), 52_118_816_000);
}

#[test]
fn monolithic_vit_cost_smallest_case() {
    // 12 * 1 * 1 + 1 * 1 = 13.
    assert_eq!(vit_cost(1, 1), 13);
}

#[test]
fn monolithic_vit_cost_matches_toy_ledger_geometry() {
    assert_eq!(vit_cost(5, 8), 4_040);
}

#[test]
fn tiled_vit_cost_at_published_scale() {
    assert_eq!(pheye_vit_cost(257, 1280, 10), 51_373_683_200);
}

#[test]
fn tiled_vit_cost_with_one_sub_image_equals_monolithic() {
    for (n, d) in [(5u64, 8u64), (257, 1280), (17, 16)] {
        assert_eq!(pheye_vit_cost(n, d, 1), vit_cost(n, d));
    }
}

#[test]
fn vision_ratio_is_1_0145_exact() {
    let ratio = efficiency_ratio(
        vit_cost(2305, 1280),
        &Rational::from_int(pheye_vit_cost(257, 1280, 10)),
    )
    .unwrap();
    assert_eq!(ratio.to_decimal_string(4), "1.0145");
    let value = ratio.to_f64();
    assert!((value - 1.0145).abs() < 1e-4, "exact value {value}");
}

#[test]
fn concat_lm_cost_at_published_scale() {
    assert_eq!(llava_lm_cost(65, 2305, 2048), 130_789_416_960);
}

#[test]
fn concat_lm_cost_without_vision_is_plain_decoder_layer() {
    let n_t = 7u64;
    let d = 16u64;
    assert_eq!(
        llava_lm_cost(n_t, 0, d),
        (12 * n_t as u128 * (d as u128).pow(2)) + d as u128 * (n_t as u128).pow(2)
    );
}

#[test]
fn concat_lm_cost_toy_geometry_is_4040() {
    assert_eq!(llava_lm_cost(3, 2, 8), 4_040);
}

#[test]
fn cross_lm_cost_at_published_scale_interval_two() {
    let cost = pheye_lm_cost(65, 2305, 2048, 1280, 2).unwrap();
    assert!(cost.is_integer());
    assert_eq!(cost.numerator(), 10_839_198_720);
}

#[test]
fn cross_lm_cost_at_published_scale_interval_four() {
    let cost = pheye_lm_cost(65, 2305, 2048, 1280, 4).unwrap();
    assert!(cost.is_integer());
    assert_eq!(cost.numerator(), 7_059_704_320);
}

#[test]
fn cross_lm_cost_rejects_zero_interval() {
    assert!(pheye_lm_cost(65, 2305, 2048, 1280, 0).is_err());
}

#[test]
fn lm_efficiency_ratios_match_published_approximations() {
    let baseline = llava_lm_cost(65, 2305, 2048);
    let at_two = efficiency_ratio(baseline, &pheye_lm_cost(65, 2305, 2048, 1280, 2).unwrap())
        .unwrap();
    assert_eq!(at_two.to_decimal_string(2), "12.07");
    let at_four = efficiency_ratio(baseline, &pheye_lm_cost(65, 2305, 2048, 1280, 4).unwrap())
        .unwrap();
    assert_eq!(at_four.to_decimal_string(2), "18.53");
}

#[test]
fn equal_inputs_give_unit_ratio() {
    let ratio = efficiency_ratio(4_040, &Rational::from_int(4_040)).unwrap();
    assert_eq!(ratio.to_decimal_string(2), "1.00");
    assert_eq!(ratio.numerator(), 1);
    assert_eq!(ratio.denominator(), 1);
}

#[test]
fn efficiency_ratio_rejects_zero_method() {
    assert!(efficiency_ratio(10, &Rational::from_int(0)).is_err());
}

#[test]
fn costs_are_strictly_monotonic_in_every_argument() {
    let base = pheye_lm_cost(8, 20, 16, 8, 2).unwrap();
    for (bumped, what) in [
        (pheye_lm_cost(9, 20, 16, 8, 2).unwrap(), "text tokens"),
        (pheye_lm_cost(8, 21, 16, 8, 2).unwrap(), "vision tokens"),
        (pheye_lm_cost(8, 20, 17, 8, 2).unwrap(), "lm width"),
        (pheye_lm_cost(8, 20, 16, 9, 2).unwrap(), "vit width"),
    ] {
        assert_eq!(
            bumped.cmp_exact(&base),
            std::cmp::Ordering::Greater,
            "{what} must increase the cost"
        );
    }
    assert!(vit_cost(6, 8) > vit_cost(5, 8));
    assert!(vit_cost(5, 9) > vit_cost(5, 8));
    assert!(pheye_vit_cost(5, 8, 6) > pheye_vit_cost(5, 8, 5));
    assert!(llava_lm_cost(4, 3, 8) > llava_lm_cost(3, 3, 8));
}

#[test]
fn cross_lm_cost_decreases_in_interval_with_plain_decoder_limit() {
    let plain = vit_cost(8, 16);
    let cross = cross_block_categories(8, 20, 16, 8).paper_total();
    let mut previous = pheye_lm_cost(8, 20, 16, 8, 1).unwrap();
    for interval in 2..40u64 {
        let current = pheye_lm_cost(8, 20, 16, 8, interval).unwrap();
        assert_eq!(
            current.cmp_exact(&previous),
            std::cmp::Ordering::Less,
            "interval {interval} must cost less than {}",
            interval - 1
        );
        // cost(I) - plain == cross / I exactly.
        let excess = Rational::new(cross, interval as u128).unwrap();
        assert_eq!(current, Rational::from_int(plain).plus_exact(&excess));
        previous = current;
    }
}

impl Rational {
    /// Test-only exact addition.
    fn plus_exact(&self, other: &Rational) -> Rational {
        Rational::new(
            self.numerator() * other.denominator() + other.numerator() * self.denominator(),
            self.denominator() * other.denominator(),
        )
        .unwrap()
    }
}

#[test]
fn algebraically_permuted_evaluations_agree() {
    // 12*N*D^2 + D*N^2 computed three structurally different ways.
    for (n, d) in [(5u64, 8u64), (257, 1280), (2305, 1280), (17, 16)] {
        let (n128, d128) = (n as u128, d as u128);
        let forms = [
            12 * n128 * d128 * d128 + d128 * n128 * n128,
            (4 * d128 * d128 + 8 * d128 * d128 + d128 * n128) * n128,
            n128 * d128 * (12 * d128 + n128),
        ];
        assert_eq!(forms[0], vit_cost(n, d));
        assert_eq!(forms[0], forms[1]);
        assert_eq!(forms[1], forms[2]);
    }
}

#[test]
fn decimal_rendering_rounds_half_away_from_zero() {
    assert_eq!(Rational::new(1, 8).unwrap().to_decimal_string(2), "0.13");
    assert_eq!(Rational::new(1, 40).unwrap().to_decimal_string(2), "0.03");
    assert_eq!(Rational::new(5, 1000).unwrap().to_decimal_string(2), "0.01");
    assert_eq!(Rational::new(1, 3).unwrap().to_decimal_string(4), "0.3333");
    assert_eq!(Rational::from_int(12).to_decimal_string(0), "12");
    assert_eq!(Rational::new(10, 4).unwrap().to_fraction_string(), "5/2");
}

#[test]
fn cost_inputs_validation() {
    let good = CostInputs {
        full_res_tokens: 2305,
        tokens_per_sub_image: 257,
        sub_images: 10,
        text_tokens: 65,
        vision_tokens: 2305,
        lm_dim: 2048,
        vit_dim: 1280,
        interval: 2,
    };
    good.validate().unwrap();

    let mut zero = good;
    zero.text_tokens = 0;
    assert!(zero.validate().is_err());

    let mut inconsistent = good;
    inconsistent.tokens_per_sub_image = 250;
    assert!(inconsistent.validate().is_err());

    assert_eq!(CostInputs::derive_tokens_per_sub_image(2305, 10).unwrap(), 257);
    assert!(CostInputs::derive_tokens_per_sub_image(2305, 11).is_err());
}

#[test]
fn cost_report_carries_published_headline_numbers() {
    let inputs = CostInputs {
        full_res_tokens: 2305,
        tokens_per_sub_image: 257,
        sub_images: 10,
        text_tokens: 65,
        vision_tokens: 2305,
        lm_dim: 2048,
        vit_dim: 1280,
        interval: 2,
    };
    let report = cost_report(&inputs).unwrap();
    assert_eq!(report.vit_monolithic, 52_118_816_000);
    assert_eq!(report.vit_tiled, 51_373_683_200);
    assert_eq!(report.lm_concat, 130_789_416_960);
    assert_eq!(report.lm_cross.numerator(), 10_839_198_720);
    assert_eq!(report.vision_ratio.to_decimal_string(4), "1.0145");
    assert_eq!(report.lm_ratio.to_decimal_string(2), "12.07");
    assert_eq!(
        report.vit_monolithic_breakdown.paper_total(),
        report.vit_monolithic
    );
}

#[test]
fn reconcile_rejects_mismatched_run_geometry() {
    let inputs = CostInputs {
        full_res_tokens: 17,
        tokens_per_sub_image: 5,
        sub_images: 5,
        text_tokens: 4,
        vision_tokens: 25,
        lm_dim: 8,
        vit_dim: 8,
        interval: 1,
    };
    let analytic = RunSpec {
        formula: Formula::VitTiled,
        inputs,
        layers: 1,
    };
    let mut run = analytic;
    run.layers = 2;
    let ledger = MulLedger::new();
    assert!(matches!(
        reconcile(&analytic, &run, &ledger, Accounting::Paper),
        Err(Error::Contract(_))
    ));
}

#[test]
fn full_accounting_expects_one_extra_value_product_per_score_product() {
    let inputs = CostInputs {
        full_res_tokens: 17,
        tokens_per_sub_image: 5,
        sub_images: 5,
        text_tokens: 4,
        vision_tokens: 25,
        lm_dim: 8,
        vit_dim: 8,
        interval: 1,
    };
    let spec = RunSpec {
        formula: Formula::VitMonolithic,
        inputs,
        layers: 3,
    };
    let categories = spec.expected_categories().unwrap();
    assert_eq!(
        categories.full_total() - categories.paper_total(),
        3 * 8 * 17 * 17,
        "value product adds exactly D*N^2 per layer"
    );
}
