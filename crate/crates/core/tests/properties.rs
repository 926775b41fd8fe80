use bodyvol_core::alignment::{crop_to_body, resample_rows};
use bodyvol_core::composition::fit_linear;
use bodyvol_core::segmentation::label_components;
use bodyvol_core::volumetry::{RowRuns, Run};
use bodyvol_core::*;
use proptest::prelude::*;

fn image_strategy(max_w: usize, max_h: usize) -> impl Strategy<Value = RasterImage> {
    (1..=max_w, 1..=max_h).prop_flat_map(|(w, h)| {
        prop::collection::vec(
            prop_oneof![Just([0u8, 255, 0]), Just([255u8, 0, 0]), any::<[u8; 3]>(),],
            w * h,
        )
        .prop_map(move |px| RasterImage::new(w, h, px).unwrap())
    })
}

fn mask_strategy(max_w: usize, max_h: usize) -> impl Strategy<Value = BodyMask> {
    (1..=max_w, 1..=max_h).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::bool::weighted(0.55), w * h)
            .prop_map(move |bits| BodyMask::from_bits(w, h, bits).unwrap())
    })
}

fn ellipse_mask(w: usize, h: usize, a: f64, b: f64) -> BodyMask {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    BodyMask::from_fn(w, h, |x, y| {
        let dx = (x as f64 + 0.5 - cx) / a;
        let dy = (y as f64 + 0.5 - cy) / b;
        dx * dx + dy * dy <= 1.0
    })
}

fn components(mask: &BodyMask) -> usize {
    label_components(mask).1.len()
}

fn profiles(back: Vec<Vec<(usize, usize)>>, side: Vec<usize>) -> SliceProfileSet {
    let rows = back.len();
    SliceProfileSet {
        rows,
        back_runs: back
            .into_iter()
            .enumerate()
            .map(|(row, runs)| RowRuns {
                row,
                runs: runs
                    .into_iter()
                    .map(|(start, len)| Run { start, len })
                    .collect(),
            })
            .collect(),
        side_width: side,
        scale: None,
        row_height: 1.0,
        side_multi_run_rows: 0,
    }
}

fn mask_profiles(back: &BodyMask, side_width: usize) -> SliceProfileSet {
    let side = BodyMask::from_fn(side_width.max(1), back.height(), |_, _| side_width > 0);
    extract_profiles(back, &side, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn segmentation_partitions_pixels(img in image_strategy(24, 24)) {
        let params = HueThresholdParams::default();
        let mask = segment_green_screen(&img, &params);
        let background = img.pixels().iter().filter(|p| params.is_background(**p)).count();
        prop_assert_eq!(mask.count() + background, img.width() * img.height());
        for (bit, px) in mask.bits().iter().zip(img.pixels()) {
            prop_assert_eq!(*bit, !params.is_background(*px));
        }
    }

    #[test]
    fn segmentation_commutes_with_row_permutation(
        img in image_strategy(16, 16),
        seed in any::<u64>(),
    ) {
        let h = img.height();
        let mut perm: Vec<usize> = (0..h).collect();
        let mut s = seed;
        for i in (1..h).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<[u8; 3]> = perm.iter().flat_map(|&y| img.row(y).to_vec()).collect();
        let permuted = RasterImage::new(img.width(), h, permuted).unwrap();
        let params = HueThresholdParams::default();
        let a = segment_green_screen(&img, &params);
        let b = segment_green_screen(&permuted, &params);
        for (i, &y) in perm.iter().enumerate() {
            prop_assert_eq!(b.row(i), a.row(y));
        }
    }

    #[test]
    fn clean_mask_is_one_component_and_idempotent(mask in mask_strategy(20, 20)) {
        match clean_mask(&mask) {
            Ok(clean) => {
                prop_assert_eq!(components(&clean), 1);
                prop_assert_eq!(clean_mask(&clean).unwrap(), clean);
            }
            Err(Error::EmptyMask) => prop_assert!(mask.is_empty()),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn asymmetry_is_bounded(mask in mask_strategy(20, 12), axis in -2.0f64..22.0) {
        prop_assume!(!mask.is_empty());
        let s = asymmetry_score(&mask, axis).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn asymmetry_is_mirror_invariant(mask in mask_strategy(21, 12)) {
        prop_assume!(!mask.is_empty());
        let axis = (mask.width() as f64 - 1.0) / 2.0;
        let flipped = mask.flip_horizontal();
        prop_assert_eq!(
            asymmetry_score(&mask, axis).unwrap(),
            asymmetry_score(&flipped, axis).unwrap()
        );
        let own = rect_centroid(&bounding_rect(&mask).unwrap()).0;
        let own_flipped = rect_centroid(&bounding_rect(&flipped).unwrap()).0;
        prop_assert_eq!(
            asymmetry_score(&mask, own).unwrap(),
            asymmetry_score(&flipped, own_flipped).unwrap()
        );
    }

    #[test]
    fn rotation_preserves_area(
        a in 12.0f64..60.0,
        b in 25.0f64..90.0,
        angle in -15.0f64..15.0,
    ) {
        let mask = ellipse_mask(200, 200, a, b);
        prop_assume!(mask.count() >= 1000);
        let rotated = rotate_mask(&mask, angle, (100.0, 100.0));
        let ratio = rotated.count() as f64 / mask.count() as f64;
        prop_assert!((ratio - 1.0).abs() < 0.02, "ratio {ratio}");
    }

    #[test]
    fn symmetric_upright_shape_stays_upright(
        half in 3usize..20,
        neck in 1usize..6,
        top in 3usize..20,
        bottom in 3usize..20,
        odd in any::<bool>(),
    ) {
        // A T-shape symmetric about its centre column, not centrally symmetric.
        let w = 2 * half + usize::from(odd) + 10;
        let c = (w as f64 - 1.0) / 2.0;
        let h = top + bottom + 10;
        let mask = BodyMask::from_fn(w, h, |x, y| {
            let dx = (x as f64 - c).abs();
            (5..5 + top).contains(&y) && dx <= half as f64
                || (5 + top..5 + top + bottom).contains(&y) && dx <= neck as f64
        });
        let r = align_upright(&mask, &RotationSearchParams::default()).unwrap();
        prop_assert_eq!(r.angle, 0.0);
        prop_assert_eq!(r.score, 0.0);
    }

    #[test]
    fn normalize_yields_requested_rows(
        back in mask_strategy(12, 30),
        side in mask_strategy(12, 30),
        rows in 2usize..80,
    ) {
        prop_assume!(!back.is_empty() && !side.is_empty());
        let (b, s) = normalize_views(&back, &side, rows).unwrap();
        prop_assert_eq!(b.height(), rows);
        prop_assert_eq!(s.height(), rows);
    }

    #[test]
    fn volume_is_additive(
        rows in prop::collection::vec(
            (prop::collection::vec((0usize..4, 1usize..12), 0..4), 0usize..40),
            1..30,
        ),
    ) {
        let (back, side): (Vec<_>, Vec<_>) = rows
            .into_iter()
            .map(|(gaps, s)| {
                let mut x = 0;
                let runs = gaps
                    .into_iter()
                    .map(|(gap, len)| {
                        x += gap + 1;
                        let r = (x, len);
                        x += len;
                        r
                    })
                    .collect::<Vec<_>>();
                (runs, s)
            })
            .unzip();
        let v = body_volume(&profiles(back, side)).unwrap();
        prop_assert_eq!(v.total_px3, v.trunk_px3 + v.limbs_px3);
        prop_assert!(v.trunk_px3 >= 0.0 && v.limbs_px3 >= 0.0);
    }

    #[test]
    fn adding_back_pixels_never_shrinks_volume(
        back in mask_strategy(16, 10),
        extra_side in 0usize..8,
        x in 0usize..16,
        y in 0usize..10,
    ) {
        prop_assume!(x < back.width() && y < back.height());
        // Side width at least every back run, as on a real body.
        let side_width = back.width() + extra_side;
        let mut grown = back.clone();
        grown.set(x, y, true);
        let before = body_volume(&mask_profiles(&back, side_width)).unwrap().total_px3;
        let after = body_volume(&mask_profiles(&grown, side_width)).unwrap().total_px3;
        prop_assert!(after >= before, "{before} -> {after}");
    }

    #[test]
    fn slice_formulas_are_symmetric(a in 0.0f64..500.0, b in 0.0f64..500.0) {
        prop_assert_eq!(slice_area(a, b), slice_area(b, a));
        prop_assert_eq!(slice_perimeter(a, b), slice_perimeter(b, a));
    }

    #[test]
    fn circle_perimeter_is_exact(d in 1e-3f64..1e4) {
        let p = slice_perimeter(d, d);
        let exact = std::f64::consts::PI * d;
        prop_assert!((p - exact).abs() / exact < 1e-9);
    }

    #[test]
    fn residuals_are_orthogonal_to_columns(
        data in prop::collection::vec((prop::array::uniform3(-10.0f64..10.0), -50.0f64..50.0), 12..40),
    ) {
        let x: Vec<Vec<f64>> = data.iter().map(|(r, _)| r.to_vec()).collect();
        let y: Vec<f64> = data.iter().map(|(_, t)| *t).collect();
        let Ok((model, report)) = fit_linear(&x, &y) else {
            return Ok(());
        };
        let n = x.len() as f64;
        let resid: Vec<f64> = x.iter().zip(&y).map(|(r, t)| t - predict(&model, r).unwrap()).collect();
        prop_assert!(resid.iter().sum::<f64>().abs() / n < 1e-6);
        for j in 0..3 {
            let dot: f64 = resid.iter().zip(&x).map(|(e, r)| e * r[j]).sum();
            prop_assert!(dot.abs() / n < 1e-6, "column {j}: {dot}");
        }
        let rss: f64 = resid.iter().map(|e| e * e).sum();
        let rmse = (rss / n).sqrt();
        prop_assert!((rmse - report.rmse).abs() <= 1e-9 * report.rmse.max(1e-300));
    }

    #[test]
    fn fit_is_affine_equivariant_in_target(
        data in prop::collection::vec((prop::array::uniform3(-10.0f64..10.0), -50.0f64..50.0), 12..40),
        a in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0],
        b in -100.0f64..100.0,
    ) {
        let x: Vec<Vec<f64>> = data.iter().map(|(r, _)| r.to_vec()).collect();
        let y: Vec<f64> = data.iter().map(|(_, t)| *t).collect();
        let Ok((m1, _)) = fit_linear(&x, &y) else {
            return Ok(());
        };
        let y2: Vec<f64> = y.iter().map(|t| a * t + b).collect();
        let (m2, _) = fit_linear(&x, &y2).unwrap();
        let close = |p: f64, q: f64, scale: f64| (p - q).abs() <= 1e-9 * scale;
        let scale = m1.coefficients.iter().fold(m1.intercept.abs(), |s, c| s.max(c.abs())).max(1.0) * a.abs();
        for (c1, c2) in m1.coefficients.iter().zip(&m2.coefficients) {
            prop_assert!(close(a * c1, *c2, scale), "{} vs {c2}", a * c1);
        }
        prop_assert!(close(a * m1.intercept + b, m2.intercept, scale + b.abs()));
    }
}

#[test]
fn crop_then_resample_keeps_shape() {
    let mask = ellipse_mask(80, 120, 20.0, 50.0);
    let cropped = crop_to_body(&mask).unwrap();
    assert_eq!(cropped.height(), 100);
    assert_eq!(resample_rows(&cropped, 100), cropped);
}
