use ocda_core::color::{
    self, histogram_match, mean_histograms, rgb_to_lab, style_descriptor, Channel, LabImage, StyleTriple,
    DESCRIPTOR_BINS, MATCH_LEVELS,
};
use ocda_core::Image;
use proptest::prelude::*;

fn image_strategy(max_side: usize) -> impl Strategy<Value = Image> {
    (2..=max_side, 2..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h * 3).prop_map(move |d| Image::new(w, h, d).unwrap())
    })
}

/// Narrow per-channel ranges make the sets differ in style.
fn styled_image() -> impl Strategy<Value = Image> {
    (0u8..120, 40u8..135, 8usize..16).prop_flat_map(|(lo, span, side)| {
        proptest::collection::vec(0..=span, side * side * 3)
            .prop_map(move |d| Image::new(side, side, d.into_iter().map(|v| lo + v).collect()).unwrap())
    })
}

fn level_step(c: Channel) -> f64 {
    let (lo, hi) = c.range();
    (hi - lo) / MATCH_LEVELS as f64
}

fn max_level_shift(a: &LabImage, b: &LabImage) -> f64 {
    let mut worst: f64 = 0.0;
    for (p, q) in a.pixels().iter().zip(b.pixels()) {
        for c in Channel::ALL {
            worst = worst.max((p[c.index()] - q[c.index()]).abs() / level_step(c));
        }
    }
    worst
}

#[test]
fn mean_histograms_matches_summation() {
    let mut images = Vec::new();
    for s in 0..5u8 {
        let data: Vec<u8> = (0..12 * 9 * 3).map(|i| ((i as u32 * (7 + s as u32 * 13) + s as u32 * 31) % 256) as u8).collect();
        images.push(Image::new(12, 9, data).unwrap());
    }
    let mean = mean_histograms(&images, 32).unwrap();
    for c in Channel::ALL {
        let mut sum = vec![0.0; 32];
        for img in &images {
            let lab = rgb_to_lab(img);
            for p in lab.pixels() {
                sum[c.level(p[c.index()], 32)] += 1.0;
            }
        }
        let expect: Vec<f64> = sum.iter().map(|v| v / 5.0).collect();
        assert_eq!(mean.channel(c).counts(), expect.as_slice(), "{c:?}");
    }
}

#[test]
fn standard_lab_reference_for_gray() {
    // sRGB 119 decodes to 0.184475 linear; Y = that; L = 116 f(Y) - 16.
    let lin = ((119.0f64 / 255.0 + 0.055) / 1.055).powf(2.4);
    let l = 116.0 * lin.cbrt() - 16.0;
    let got = color::srgb_to_lab([119, 119, 119]);
    assert!((got[0] - l).abs() < 0.05, "{got:?} vs {l}");
    assert!(got[1].abs() < 0.05 && got[2].abs() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn histogram_mass_is_conserved(img in image_strategy(24), bins in 2usize..80) {
        let t = StyleTriple::of_image(&img, bins);
        for h in t.channels() {
            prop_assert_eq!(h.counts().iter().sum::<f64>(), img.len() as f64);
        }
    }

    #[test]
    fn descriptor_blocks_sum_to_one(img in image_strategy(24), bins in 2usize..80) {
        let d = style_descriptor(&img, bins);
        prop_assert_eq!(d.len(), 3 * bins);
        for block in d.as_slice().chunks(bins) {
            prop_assert!((block.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(block.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn descriptor_ignores_pixel_order(img in image_strategy(24)) {
        prop_assert_eq!(style_descriptor(&img, DESCRIPTOR_BINS), style_descriptor(&img.flip_horizontal(), DESCRIPTOR_BINS));
    }

    #[test]
    fn lab_channels_stay_in_range(img in image_strategy(16)) {
        let lab = rgb_to_lab(&img);
        prop_assert_eq!(lab.pixels().len(), img.len());
        for p in lab.pixels() {
            for c in Channel::ALL {
                let (lo, hi) = c.range();
                prop_assert!(p[c.index()] >= lo && p[c.index()] <= hi, "{:?} {}", c, p[c.index()]);
            }
        }
    }

    #[test]
    fn matching_twice_changes_at_most_one_level(img in image_strategy(20), donor in image_strategy(20)) {
        let target = StyleTriple::of_image(&donor, MATCH_LEVELS);
        let lab = rgb_to_lab(&img);
        let once = histogram_match(&lab, &target).unwrap();
        let twice = histogram_match(&once, &target).unwrap();
        prop_assert!(max_level_shift(&once, &twice) <= 1.0);
    }

    #[test]
    fn self_match_is_a_fixed_point(img in image_strategy(20)) {
        let lab = rgb_to_lab(&img);
        let out = histogram_match(&lab, &StyleTriple::of_lab(&lab, MATCH_LEVELS)).unwrap();
        prop_assert!(max_level_shift(&lab, &out) <= 1.0);
    }

    #[test]
    fn matching_to_the_mean_style_pulls_a_set_together(set in proptest::collection::vec(styled_image(), 2..6)) {
        let spread = |imgs: &[Image]| {
            let d: Vec<_> = imgs.iter().map(|i| style_descriptor(i, DESCRIPTOR_BINS)).collect();
            let mut worst: f64 = 0.0;
            for i in 0..d.len() {
                for j in i + 1..d.len() {
                    worst = worst.max(d[i].distance(&d[j]));
                }
            }
            worst
        };
        let style = mean_histograms(&set, MATCH_LEVELS).unwrap();
        let matched: Vec<Image> = set
            .iter()
            .map(|i| color::lab_to_rgb(&histogram_match(&rgb_to_lab(i), &style).unwrap()))
            .collect();
        prop_assert!(spread(&matched) <= spread(&set) + 1e-12, "{} > {}", spread(&matched), spread(&set));
    }
}
