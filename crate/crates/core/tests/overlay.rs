use afford_core::dataset::{AffordanceKind, AffordanceMap, ImageRgb};
use afford_core::overlay::{visualize_overlay, OverlayError, PEAK_COLOR};
use proptest::prelude::*;

fn image(h: usize, w: usize, seed: u8) -> ImageRgb {
    let px = (0..h * w * 3)
        .map(|i| ((i as u32 * 37 + seed as u32 * 11) % 200) as u8 + 20)
        .collect();
    ImageRgb::new(h, w, px).unwrap()
}

fn map(h: usize, w: usize, values: Vec<f64>) -> AffordanceMap {
    AffordanceMap::from_raw(h, w, values, AffordanceKind::PredictedProbabilities).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_opacity_is_identity(seed in any::<u8>(), vals in proptest::collection::vec(0.0f64..1.0, 256)) {
        let img = image(16, 16, seed);
        let out = visualize_overlay(&img, &map(16, 16, vals), 0.0).unwrap();
        prop_assert_eq!(out, img);
    }

    #[test]
    fn zero_map_is_identity(seed in any::<u8>(), opacity in 0.0f64..=1.0) {
        let img = image(16, 16, seed);
        let out = visualize_overlay(&img, &map(16, 16, vec![0.0; 256]), opacity).unwrap();
        prop_assert_eq!(out, img);
    }

    #[test]
    fn single_hot_pixel_takes_peak_colour(r in 0usize..16, c in 0usize..24, seed in any::<u8>()) {
        let img = image(16, 24, seed);
        let mut vals = vec![0.0; 16 * 24];
        vals[r * 24 + c] = 1.0;
        let out = visualize_overlay(&img, &map(16, 24, vals), 1.0).unwrap();
        prop_assert_eq!(out.dims(), img.dims());
        let mut peaks = 0;
        for rr in 0..16 {
            for cc in 0..24 {
                if out.get(rr, cc) == PEAK_COLOR {
                    peaks += 1;
                    prop_assert_eq!((rr, cc), (r, c));
                } else {
                    prop_assert_eq!(out.get(rr, cc), img.get(rr, cc));
                }
            }
        }
        prop_assert_eq!(peaks, 1);
    }
}

#[test]
fn half_opacity_blend_at_peak() {
    let img = ImageRgb::filled(16, 16, [100, 100, 100]).unwrap();
    let mut vals = vec![0.0; 256];
    vals[5] = 0.3;
    let out = visualize_overlay(&img, &map(16, 16, vals), 0.5).unwrap();
    // Halfway between grey 100 and pure red.
    assert_eq!(out.get(0, 5), [178, 50, 50]);
}

#[test]
fn errors() {
    let img = image(16, 16, 0);
    assert!(matches!(
        visualize_overlay(&img, &map(16, 17, vec![0.0; 272]), 0.5),
        Err(OverlayError::DimensionMismatch { .. })
    ));
    assert_eq!(
        visualize_overlay(&img, &map(16, 16, vec![0.0; 256]), 1.5),
        Err(OverlayError::InvalidOpacity(1.5))
    );
}
