mod common {
    pub mod oracles;
}

use common::oracles;
use delius::metrics::{calinski_harabasz, clustering_accuracy, silhouette};
use ndarray::Array2;
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn instance() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
    (3usize..=50, 1usize..=4, 2usize..=5).prop_flat_map(|(n, d, k)| {
        let k = k.min(n - 1);
        (
            proptest::collection::vec(-10.0f64..10.0, n * d),
            proptest::collection::vec(0..k, n),
        )
            .prop_map(move |(v, l)| (Array2::from_shape_vec((n, d), v).unwrap(), l))
            .prop_filter("two to n-1 clusters", |(x, l)| {
                let mut u = l.clone();
                u.sort_unstable();
                u.dedup();
                u.len() >= 2 && u.len() < x.nrows()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn silhouette_matches_reference((x, l) in instance()) {
        let got = silhouette(x.view(), &l).unwrap();
        let want = oracles::silhouette(x.view(), &l);
        prop_assert!(close(got, want), "{got} vs {want}");
        prop_assert!((-1.0..=1.0).contains(&got));
    }

    #[test]
    fn calinski_harabasz_matches_reference((x, l) in instance()) {
        let got = calinski_harabasz(x.view(), &l).unwrap();
        let want = oracles::calinski_harabasz(x.view(), &l);
        prop_assert!(close(got, want), "{got} vs {want}");
    }

    #[test]
    fn accuracy_matches_reference(
        truth in proptest::collection::vec(0usize..5, 1..40),
        seed in proptest::collection::vec(0usize..5, 40),
    ) {
        let clusters = &seed[..truth.len()];
        let got = clustering_accuracy(&truth, clusters).unwrap();
        prop_assert_eq!(got, oracles::accuracy(&truth, clusters));
    }

    #[test]
    fn accuracy_ignores_label_names(truth in proptest::collection::vec(0usize..4, 1..30), shift in 1usize..100) {
        let renamed: Vec<usize> = truth.iter().map(|&t| (3 - t) * 7 + shift).collect();
        prop_assert_eq!(clustering_accuracy(&truth, &renamed).unwrap(), 1.0);
    }
}

#[test]
fn hand_computed_values() {
    let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 10.0, 11.0]).unwrap();
    let l = [0, 0, 1, 1];
    let s0 = (10.5 - 1.0) / 10.5;
    let s1 = (9.5 - 1.0) / 9.5;
    assert!(close(silhouette(x.view(), &l).unwrap(), (s0 + s1) / 2.0));
    // between 4 * 25 = 100, within 4 * 0.25 = 1
    assert!(close(calinski_harabasz(x.view(), &l).unwrap(), 100.0 * 2.0));
    assert_eq!(
        clustering_accuracy(&[0, 0, 1, 1], &[1, 1, 1, 0]).unwrap(),
        0.75
    );
}

#[test]
fn zero_within_dispersion_is_infinite() {
    let x = Array2::from_shape_vec((4, 2), vec![1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
    assert_eq!(
        calinski_harabasz(x.view(), &[0, 0, 1, 1]).unwrap(),
        f64::INFINITY
    );
    assert_eq!(
        oracles::calinski_harabasz(x.view(), &[0, 0, 1, 1]),
        f64::INFINITY
    );
}
