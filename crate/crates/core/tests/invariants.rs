use ndarray::Array2;
use proptest::prelude::*;

use scene_latent::analysis::cosine_distance;
use scene_latent::events::{binarize, compute_threshold, EventProbMatrix, N_CLASSES, SEGMENT_SECONDS};
use scene_latent::geogrid::{hex_centroid, hex_index};
use scene_latent::tfidf::{document_frequency, tfidf_vector};

fn matrix(seed: u64, density: f64) -> EventProbMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v = Array2::from_shape_simple_fn((SEGMENT_SECONDS, N_CLASSES), || {
        if rng.random_bool(density) {
            rng.random::<f64>()
        } else {
            0.0
        }
    });
    EventProbMatrix::new(format!("s{seed}"), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a_point_stays_in_the_cell_of_its_centroid(lat in -80.0f64..80.0, lon in -179.0f64..179.0) {
        let edge = 0.0015;
        let cell = hex_index(lat, lon, edge).unwrap();
        let (clat, clon) = hex_centroid(cell, edge);
        prop_assert_eq!(hex_index(clat, clon, edge).unwrap(), cell);
        // Every point lies within one edge length of its cell centre.
        prop_assert!(((lat - clat).powi(2) + (lon - clon).powi(2)).sqrt() <= edge * (1.0 + 1e-9));
    }

    #[test]
    fn binarized_tfidf_vectors_are_unit_or_zero(seeds in prop::collection::vec(0u64..1000, 1..5), density in 0.0f64..0.2) {
        let mats: Vec<_> = seeds.iter().map(|&s| matrix(s, density)).collect();
        let th = compute_threshold(&mats, 99.0).unwrap();
        let bin: Vec<_> = mats.iter().map(|m| binarize(m, th)).collect();
        let stats = document_frequency(&bin).unwrap();
        for b in &bin {
            let v = tfidf_vector(b, &stats);
            prop_assert_eq!(v.weights.len(), N_CLASSES);
            prop_assert!(v.weights.iter().all(|w| *w >= 0.0));
            let norm = v.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            if b.count_active() == 0 {
                prop_assert_eq!(norm, 0.0);
            } else {
                prop_assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_distance_is_bounded_and_symmetric(
        a in prop::collection::vec(-10.0f64..10.0, 8),
        b in prop::collection::vec(-10.0f64..10.0, 8),
    ) {
        prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
        let d = cosine_distance(&a, &b).unwrap();
        prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
        prop_assert!((d - cosine_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-12);
    }
}
