use ocda_core::color::{style_descriptor, DESCRIPTOR_BINS};
use ocda_core::metrics::adjusted_rand_index;
use ocda_core::separate::{auto_separate, default_k_range};
use ocda_core::synth::{generate_compound_target, generate_open, generate_source, Profile, SceneSpec};
use ocda_core::Error;
use proptest::prelude::*;

fn small() -> SceneSpec {
    SceneSpec { width: 16, height: 16, ..SceneSpec::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generation_is_a_function_of_the_seed(seed in any::<u64>(), n in 1usize..6) {
        let spec = small();
        prop_assert_eq!(generate_source(&spec, n, seed).unwrap(), generate_source(&spec, n, seed).unwrap());
        prop_assert_eq!(generate_open(&spec, n, seed).unwrap(), generate_open(&spec, n, seed).unwrap());
        let a = generate_compound_target(&spec, 3, n + 3, seed).unwrap();
        prop_assert_eq!(&a, &generate_compound_target(&spec, 3, n + 3, seed).unwrap());
        prop_assert_ne!(a, generate_compound_target(&spec, 3, n + 3, seed ^ 1).unwrap());
    }

    #[test]
    fn subdomains_are_balanced_and_labels_valid(seed in any::<u64>(), k in 2usize..=6, n in 6usize..20) {
        let spec = small();
        let t = generate_compound_target(&spec, k, n, seed).unwrap();
        prop_assert_eq!(t.images.len(), n);
        let mut counts = vec![0; k];
        t.hidden.subdomains.iter().for_each(|&s| counts[s] += 1);
        prop_assert!(counts.iter().all(|&c| c == n / k || c == n / k + 1));
        for (img, label) in t.images.iter().zip(&t.hidden.labels) {
            prop_assert_eq!((img.width(), img.height()), (16, 16));
            prop_assert!(label.validate(5).is_ok());
        }
    }
}

#[test]
fn every_class_appears_often_enough() {
    let spec = SceneSpec::default();
    for seed in [0, 1] {
        let source = generate_source(&spec, 500, seed).unwrap();
        for c in 0..spec.classes as u8 {
            let share = source.iter().filter(|s| s.label.present_classes().contains(&c)).count() as f64 / 500.0;
            assert!(share >= 0.10, "class {c} in {share} of images");
        }
    }
}

#[test]
fn default_profiles_clear_the_margin() {
    let spec = SceneSpec::default();
    let all: Vec<&Profile> = spec.compound.iter().chain(std::iter::once(&spec.open)).collect();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let d = spec.profile_distance(all[i], all[j]);
            assert!(d >= spec.margin, "{} vs {}: {d}", all[i].name, all[j].name);
        }
    }
}

#[test]
fn colliding_profiles_are_rejected() {
    let mut spec = small();
    spec.compound[1] = Profile { name: "copy".into(), ..spec.compound[0].clone() };
    assert!(matches!(generate_compound_target(&spec, 2, 4, 0), Err(Error::BadSpec(_))));
    let mut spec = small();
    spec.open = spec.compound[2].clone();
    assert!(matches!(generate_open(&spec, 4, 0), Err(Error::BadSpec(_))));
}

#[test]
fn bad_requests_are_rejected() {
    let spec = small();
    assert!(generate_source(&spec, 0, 0).is_err());
    assert!(generate_compound_target(&spec, 1, 10, 0).is_err());
    assert!(generate_compound_target(&spec, 7, 10, 0).is_err());
    assert!(generate_compound_target(&spec, 3, 2, 0).is_err());
    assert!(generate_source(&SceneSpec { width: 4, ..small() }, 1, 0).is_err());
}

#[test]
fn single_images_carry_their_labels() {
    let spec = small();
    let s = generate_source(&spec, 1, 8).unwrap();
    assert_eq!(s.len(), 1);
    assert!(s[0].label.validate(5).is_ok());
    let o = generate_open(&spec, 1, 8).unwrap();
    assert_eq!(o.labeled()[0].label, o.hidden_labels[0]);
}

#[test]
fn true_subdomain_count_maximizes_the_silhouette() {
    let spec = SceneSpec::default();
    let mut hits = 0;
    for seed in 0..10 {
        let t = generate_compound_target(&spec, 3, 120, seed).unwrap();
        let descs: Vec<_> = t.images.iter().map(|i| style_descriptor(i, DESCRIPTOR_BINS)).collect();
        let (lo, hi) = default_k_range(descs.len());
        let sep = auto_separate(&descs, lo, hi, seed).unwrap();
        let best_elsewhere = sep.curve.iter().filter(|p| p.k != 3).map(|p| p.score).fold(f64::NEG_INFINITY, f64::max);
        let at_truth = sep.curve.iter().find(|p| p.k == 3).unwrap().score;
        if at_truth > best_elsewhere && adjusted_rand_index(sep.partition.assignment(), &t.hidden.subdomains) >= 0.9 {
            hits += 1;
        }
    }
    assert!(hits >= 9, "{hits}/10 seeds");
}
